"""Single-shot gallery/probe protocol with cosine distances and CMC curves."""

import numpy as np

from sketchreid.errors import ContractViolation, ProtocolError


def cosine_distance(f1, f2):
    """1 - cosine similarity; a zero vector is defined to be at distance 1."""
    if f1.shape != f2.shape:
        raise ContractViolation(f"feature lengths differ: {f1.shape} vs {f2.shape}")
    n1 = np.linalg.norm(f1)
    n2 = np.linalg.norm(f2)
    if n1 == 0.0 or n2 == 0.0:
        return 1.0
    return 1.0 - float(f1 @ f2) / (n1 * n2)


def distance_matrix(probe_feats, gallery_feats):
    p = np.asarray(probe_feats)
    g = np.asarray(gallery_feats)
    pn = np.linalg.norm(p, axis=1)
    gn = np.linalg.norm(g, axis=1)
    sim = p @ g.T
    denom = np.outer(pn, gn)
    out = np.ones_like(sim)
    ok = denom > 0.0
    out[ok] = 1.0 - sim[ok] / denom[ok]
    return out


def canonical_order(metas):
    """Stable sample order (identity, then source path): mandatory before trials."""
    return sorted(range(len(metas)), key=lambda i: (metas[i].identity, metas[i].source))


def cmc_from_distances(dist, probe_ids, gallery_ids):
    """CMC over a probes x gallery distance matrix, stable tie-breaking."""
    n_probes, n_gallery = dist.shape
    curve = np.zeros(n_gallery)
    gallery_ids = np.asarray(gallery_ids)
    for p in range(n_probes):
        order = np.argsort(dist[p], kind="stable")
        hit = np.nonzero(gallery_ids[order] == probe_ids[p])[0]
        if hit.size:
            curve[hit[0]:] += 1.0
    return curve / n_probes


def single_shot_trial(features, metas, gallery_camera, probe_camera, rng):
    """One random gallery image per identity; every probe-camera image probes."""
    order = canonical_order(metas)
    ids = sorted({metas[i].identity for i in order})
    gallery_by_id = {ident: [] for ident in ids}
    probes = []
    for i in order:
        m = metas[i]
        if m.camera == gallery_camera:
            gallery_by_id[m.identity].append(i)
        if m.camera == probe_camera:
            probes.append(i)
    gallery = []
    for ident in ids:
        pool = gallery_by_id[ident]
        if not pool:
            raise ProtocolError(
                f"identity {ident} has no image in gallery camera {gallery_camera}")
        gallery.append(pool[rng.integers(len(pool))])
    dist = distance_matrix([features[i] for i in probes],
                           [features[i] for i in gallery])
    return cmc_from_distances(dist,
                              [metas[i].identity for i in probes],
                              [metas[i].identity for i in gallery])


def repeat_eval(features, metas, gallery_camera, probe_camera, trials=10, seed=0):
    """Mean CMC over repeated random gallery draws; returns (mean, per-trial)."""
    if trials < 1:
        raise ContractViolation("need at least one trial")
    rng = np.random.default_rng(seed)
    curves = [single_shot_trial(features, metas, gallery_camera, probe_camera, rng)
              for _ in range(trials)]
    return np.mean(curves, axis=0), curves


# -- artifact emission --------------------------------------------------------

def write_cmc_csv(path, mean_curve, trial_curves):
    with open(path, "w", encoding="utf-8") as f:
        header = ["rank", "mean"] + [f"trial_{t + 1}" for t in range(len(trial_curves))]
        f.write(",".join(header) + "\n")
        for k in range(len(mean_curve)):
            row = [str(k + 1), repr(float(mean_curve[k]))]
            row += [repr(float(c[k])) for c in trial_curves]
            f.write(",".join(row) + "\n")


def write_rank1(path, results):
    """results: {protocol_name: rank1 float}."""
    with open(path, "w", encoding="utf-8") as f:
        for name in sorted(results):
            f.write(f"{name} rank-1 {results[name]:.4f}\n")


def write_cmc_svg(path, curves):
    """Minimal deterministic SVG line plot; curves: {label: mean curve}."""
    width, height, margin = 480, 320, 40
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    for axis_frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = height - margin - axis_frac * (height - 2 * margin)
        parts.append(f'<line x1="{margin}" y1="{y:.1f}" x2="{width - margin}" '
                     f'y2="{y:.1f}" stroke="#dddddd"/>')
        parts.append(f'<text x="4" y="{y + 4:.1f}" font-size="10">{axis_frac:.2f}</text>')
    for idx, (label, curve) in enumerate(sorted(curves.items())):
        n = len(curve)
        pts = []
        for k, v in enumerate(curve):
            x = margin + (k / max(n - 1, 1)) * (width - 2 * margin)
            y = height - margin - v * (height - 2 * margin)
            pts.append(f"{x:.1f},{y:.1f}")
        color = colors[idx % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{color}" points="{" ".join(pts)}"/>')
        parts.append(f'<text x="{margin}" y="{14 + 12 * idx}" font-size="11" '
                     f'fill="{color}">{label}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")
