"""Versioned binary model container.

Layout: magic "SPTN", u32 version, u32 config length, config JSON (utf-8),
then one block per parameter in declaration order: u16 name length, name,
u8 ndim, u32 dims, float64 little-endian data. A plain-text config echo is
written next to the binary.
"""

import json
import struct

import numpy as np

from sketchreid.errors import CheckpointVersionError
from sketchreid.network import NetworkConfig, build_model

MAGIC = b"SPTN"
VERSION = 1


def _config_to_json(config):
    d = {
        "n_classes": config.n_classes,
        "stream_ranges": [[float(a), float(b)] for a, b in config.stream_ranges],
        "n_stripes": config.n_stripes,
        "stages": list(config.stages),
        "input_side": config.input_side,
        "n_angles": config.n_angles,
        "n_radii": config.n_radii,
        "max_radius": config.max_radius,
        "reduction": config.reduction,
        "with_spt": config.with_spt,
        "with_ase": config.with_ase,
    }
    return json.dumps(d, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _config_from_json(blob):
    d = json.loads(blob.decode("utf-8"))
    return NetworkConfig(
        n_classes=d["n_classes"],
        stream_ranges=tuple((a, b) for a, b in d["stream_ranges"]),
        n_stripes=d["n_stripes"],
        stages=tuple(d["stages"]),
        input_side=d["input_side"],
        n_angles=d["n_angles"],
        n_radii=d["n_radii"],
        max_radius=d["max_radius"],
        reduction=d["reduction"],
        with_spt=d["with_spt"],
        with_ase=d["with_ase"],
    )


def save_model(model, path):
    blob = _config_to_json(model.config)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name, arr in model.named_parameters():
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.astype("<f8", copy=False).tobytes(order="C"))
    with open(str(path) + ".txt", "w", encoding="utf-8") as f:
        f.write(blob.decode("utf-8") + "\n")


def load_model(path):
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointVersionError(f"{path}: not a model checkpoint (bad magic)")
        version = struct.unpack("<I", f.read(4))[0]
        if version != VERSION:
            raise CheckpointVersionError(
                f"{path}: checkpoint version {version}, reader supports {VERSION}")
        blob_len = struct.unpack("<I", f.read(4))[0]
        config = _config_from_json(f.read(blob_len))
        # Build a skeleton with the right structure, then overwrite in order.
        model = build_model(config, seed=0)
        for name, arr in model.named_parameters():
            nlen = struct.unpack("<H", f.read(2))[0]
            fname = f.read(nlen).decode("utf-8")
            if fname != name:
                raise CheckpointVersionError(
                    f"{path}: parameter order mismatch ({fname} != {name})")
            ndim = struct.unpack("<B", f.read(1))[0]
            shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
            if shape != arr.shape:
                raise CheckpointVersionError(
                    f"{path}: shape mismatch for {name}: {shape} != {arr.shape}")
            data = np.frombuffer(f.read(arr.size * 8), dtype="<f8").reshape(shape)
            arr[:] = data
    return model
