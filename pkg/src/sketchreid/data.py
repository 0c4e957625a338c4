"""Sketch ingestion and the synthetic contour-identity benchmark generator.

Sketch images are square float64 rasters in [0, 1] with background exactly 0
and strokes bright (the inverse of the usual white-background contour file;
out-of-grid polar samples then coincide with the background).

The synthetic generator stands in for a three-camera wardrobe dataset: each
identity is a closed Fourier contour; low harmonics ("body") are fixed per
identity, mid harmonics ("clothing") change per variant. Cameras A and B
share variant 0, camera C wears variant 1, and every image gets small
rotation/scale/translation jitter plus stroke-intensity noise.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sketchreid.errors import ConfigError, InputError


@dataclass(frozen=True)
class SampleMeta:
    identity: int
    camera: str         # "A", "B" or "C"
    variant: int
    source: str         # file path or generator tag


@dataclass
class Dataset:
    images: list
    metas: list

    def __len__(self):
        return len(self.images)

    def identities(self):
        return sorted({m.identity for m in self.metas})


# -- raster I/O ---------------------------------------------------------------

def write_pgm(path, img):
    """8-bit binary PGM from a [0,1] float raster (deterministic bytes)."""
    arr = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes(order="C"))


def read_pgm(path):
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise InputError(f"{path}: not a binary PGM")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise InputError(f"{path}: unsupported maxval {maxval}")
    raw = np.frombuffer(data[pos:pos + w * h], dtype=np.uint8)
    if raw.size != w * h:
        raise InputError(f"{path}: truncated pixel data")
    return raw.reshape(h, w).astype(np.float64)


def read_gray(path):
    """Grayscale raster in [0,255] from a PGM or PNG file."""
    p = str(path)
    if p.lower().endswith(".pgm"):
        return read_pgm(p)
    from PIL import Image
    with Image.open(p) as im:
        return np.asarray(im.convert("L"), dtype=np.float64)


# -- normalization ------------------------------------------------------------

def bilinear_resize(img, out_side):
    """Align-corners bilinear resize of a 2-D raster to out_side x out_side."""
    h, w = img.shape
    if out_side == 1:
        sy = np.zeros(1)
        sx = np.zeros(1)
    else:
        sy = np.arange(out_side) * (h - 1) / (out_side - 1)
        sx = np.arange(out_side) * (w - 1) / (out_side - 1)
    y0 = np.minimum(np.floor(sy).astype(int), h - 1)
    x0 = np.minimum(np.floor(sx).astype(int), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ty = (sy - y0)[:, None]
    tx = (sx - x0)[None, :]
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x1)]
    c = img[np.ix_(y1, x0)]
    d = img[np.ix_(y1, x1)]
    return (a * (1 - tx) * (1 - ty) + b * tx * (1 - ty)
            + c * (1 - tx) * ty + d * tx * ty)


def load_and_normalize(raw, target_side):
    """Pad to square with 255, invert to [0,1], then resize.

    Inverting before the resize keeps the background exactly 0: bilinear
    interpolation of an exact-zero region is exact zero, while resizing the
    255-valued original first would leave rounding dust behind.
    """
    if raw.size == 0:
        raise InputError("empty raster")
    raw = np.asarray(raw, dtype=np.float64)
    h, w = raw.shape
    if h >= w:
        left = (h - w) // 2
        padded = np.full((h, h), 255.0)
        padded[:, left:left + w] = raw
    else:
        # wide crops: pad rows instead, same fill
        top = (w - h) // 2
        padded = np.full((w, w), 255.0)
        padded[top:top + h, :] = raw
    inverted = (255.0 - padded) / 255.0
    return np.clip(bilinear_resize(inverted, target_side), 0.0, 1.0)


SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_MAG_BOUND = 4.0 * np.sqrt(2.0)


def extract_sketch(raster, threshold=0.2, ramp=0.1):
    """Gradient-magnitude sketch of a gray or RGB raster, values in [0,1]."""
    arr = np.asarray(raster, dtype=np.float64)
    if arr.size == 0:
        raise InputError("empty raster")
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    if arr.max() > 1.0:
        arr = arr / 255.0
    padded = np.pad(arr, 1, mode="edge")
    gx = np.zeros_like(arr)
    gy = np.zeros_like(arr)
    for dy in range(3):
        for dx in range(3):
            gx += SOBEL_X[dy, dx] * padded[dy:dy + arr.shape[0], dx:dx + arr.shape[1]]
            gy += SOBEL_X[dx, dy] * padded[dy:dy + arr.shape[0], dx:dx + arr.shape[1]]
    mag = np.hypot(gx, gy) / SOBEL_MAG_BOUND
    return np.clip((mag - threshold) / ramp, 0.0, 1.0)


# -- synthetic benchmark ------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    n_identities: int = 30
    n_variants: int = 2
    images_per_camera: int = 20
    side: int = 56
    body_harmonics: tuple = (1, 2, 3)
    clothing_harmonics: tuple = (5, 6, 7)
    base_radius: float = 0.52
    body_amp: float = 0.16
    clothing_amp: float = 0.07
    jitter_rotation: float = 0.10
    jitter_scale: float = 0.06
    jitter_translation: float = 0.03
    pixel_noise: float = 0.08
    seed: int = 7

    def __post_init__(self):
        if min(self.n_identities, self.n_variants, self.images_per_camera) < 1:
            raise ConfigError("identity/variant/image counts must be >= 1")
        if set(self.body_harmonics) & set(self.clothing_harmonics):
            raise ConfigError("body and clothing harmonic bands must be disjoint")


CAMERAS = ("A", "B", "C")
# Cameras A and B wear variant 0; camera C wears variant 1 (when available).
CAMERA_VARIANT = {"A": 0, "B": 0, "C": 1}

_CURVE_SAMPLES = 720
_STROKE_RADIUS = 1.3  # pixels; tent falloff gives a 1-2 px anti-aliased stroke


def _contour_points(body, clothing, rotation, scale, translation):
    """Closed contour in normalized coordinates for one rendered image."""
    phi = np.linspace(0.0, 2.0 * np.pi, _CURVE_SAMPLES, endpoint=False)
    rho = np.full(_CURVE_SAMPLES, body["base"])
    for h, amp, phase in body["waves"]:
        rho += amp * np.cos(h * phi + phase)
    for h, amp, phase in clothing["waves"]:
        rho += amp * np.cos(h * phi + phase)
    rho = np.maximum(rho, 0.05) * scale
    x = rho * np.cos(phi + rotation) + translation[0]
    y = rho * np.sin(phi + rotation) + translation[1]
    return x, y


def _rasterize(x, y, side, stroke_gain):
    """Anti-aliased stroke splat of a polyline onto a side x side raster."""
    col = (x + 1.0) / 2.0 * (side - 1)
    row = (1.0 - y) / 2.0 * (side - 1)
    canvas = np.zeros((side, side))
    r0 = np.floor(row).astype(int)
    c0 = np.floor(col).astype(int)
    offs = np.array([-1, 0, 1, 2])
    n = r0.size
    rows = np.broadcast_to(r0[:, None, None] + offs[None, :, None], (n, 4, 4)).reshape(-1)
    cols = np.broadcast_to(c0[:, None, None] + offs[None, None, :], (n, 4, 4)).reshape(-1)
    rr = np.repeat(row, 16)
    cc = np.repeat(col, 16)
    gain = np.repeat(stroke_gain, 16)
    dist = np.hypot(rows - rr, cols - cc)
    vals = np.maximum(0.0, 1.0 - dist / _STROKE_RADIUS) * gain
    keep = (rows >= 0) & (rows < side) & (cols >= 0) & (cols < side) & (vals > 0)
    np.maximum.at(canvas, (rows[keep], cols[keep]), vals[keep])
    return np.clip(canvas, 0.0, 1.0)


def _identity_shape(rng, config):
    waves = [(h, config.body_amp * (0.4 + 0.6 * rng.random()), rng.uniform(0, 2 * np.pi))
             for h in config.body_harmonics]
    return {"base": config.base_radius * (0.85 + 0.3 * rng.random()), "waves": waves}


def _variant_clothing(rng, config):
    waves = [(h, config.clothing_amp * (0.4 + 0.6 * rng.random()), rng.uniform(0, 2 * np.pi))
             for h in config.clothing_harmonics]
    return {"waves": waves}


def synth_generate(config):
    """Deterministic three-camera dataset; same config+seed -> same arrays."""
    master = np.random.default_rng(config.seed)
    id_seeds = master.integers(2 ** 63, size=config.n_identities)
    dataset = Dataset(images=[], metas=[])
    for ident in range(config.n_identities):
        id_rng = np.random.default_rng(id_seeds[ident])
        body = _identity_shape(id_rng, config)
        variants = [_variant_clothing(id_rng, config) for _ in range(config.n_variants)]
        for camera in CAMERAS:
            variant = min(CAMERA_VARIANT[camera], config.n_variants - 1)
            cam_rng = np.random.default_rng(
                np.random.SeedSequence([config.seed, ident, ord(camera)]))
            for img_idx in range(config.images_per_camera):
                rot = cam_rng.uniform(-config.jitter_rotation, config.jitter_rotation)
                scale = 1.0 + cam_rng.uniform(-config.jitter_scale, config.jitter_scale)
                trans = cam_rng.uniform(-config.jitter_translation,
                                        config.jitter_translation, size=2)
                gain = 1.0 - config.pixel_noise * cam_rng.random(_CURVE_SAMPLES)
                x, y = _contour_points(body, variants[variant], rot, scale, trans)
                img = _rasterize(x, y, config.side, gain)
                dataset.images.append(img)
                dataset.metas.append(SampleMeta(
                    identity=ident, camera=camera, variant=variant,
                    source=f"synth/{ident}/{camera}/{img_idx}"))
    return dataset


def dataset_split(identities, train_fraction, seed):
    """Identity-disjoint (train, test) split, deterministic per seed."""
    ids = sorted(identities)
    if len(ids) < 2:
        raise ConfigError("need at least 2 identities to split")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train fraction {train_fraction} outside (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ids))
    n_train = int(round(len(ids) * train_fraction))
    n_train = min(max(n_train, 1), len(ids) - 1)
    train = sorted(ids[i] for i in perm[:n_train])
    test = sorted(ids[i] for i in perm[n_train:])
    return train, test


# -- manifest -----------------------------------------------------------------

def write_dataset(dataset, out_dir):
    """PGM files per camera folder plus manifest.csv; returns manifest path."""
    out = Path(out_dir)
    for cam in CAMERAS:
        (out / cam).mkdir(parents=True, exist_ok=True)
    rows = []
    counters = {}
    for img, meta in zip(dataset.images, dataset.metas):
        n = counters.get((meta.identity, meta.camera), 0)
        counters[(meta.identity, meta.camera)] = n + 1
        rel = f"{meta.camera}/id{meta.identity:04d}_v{meta.variant}_{n:03d}.pgm"
        write_pgm(out / rel, img)
        rows.append((rel, meta.identity, meta.camera, meta.variant))
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["path", "identity", "camera", "variant"])
        writer.writerows(rows)
    return manifest


def read_manifest(manifest_path):
    """Load a dataset back from manifest.csv; images stay in file order."""
    root = Path(manifest_path).parent
    dataset = Dataset(images=[], metas=[])
    try:
        f = open(manifest_path, newline="", encoding="utf-8")
    except OSError as e:
        raise InputError(f"cannot read manifest: {e}") from None
    with f:
        reader = csv.DictReader(f)
        for row in reader:
            img = read_pgm(root / row["path"]) / 255.0
            dataset.images.append(img)
            dataset.metas.append(SampleMeta(
                identity=int(row["identity"]), camera=row["camera"],
                variant=int(row["variant"]), source=row["path"]))
    if not dataset.images:
        raise InputError(f"{manifest_path}: empty manifest")
    return dataset
