"""Dense-strand interpolation and OBJ export (visualization only).

Dense roots are rejection-sampled proportional to the density raster;
each dense strand blends the root-relative point arrays of its three
nearest guides (inverse-distance weights) and is re-rooted at the sampled
position.
"""

from __future__ import annotations

import io

import numpy as np

from strandlang.guides import GuideSet
from strandlang.hair import DENSITY_RESOLUTION, DensityMap, Strand, UVCoord
from strandlang.ioutil import atomic_write_text

N_BLEND = 3


def interpolate_dense(
    guide_set: GuideSet,
    density: DensityMap,
    n_dense: int,
    seed: int = 0,
) -> list:
    """Blend guides into ``n_dense`` strands with density-matched roots."""
    if not guide_set.guides:
        raise ValueError("empty guide set")
    if density.values.max() <= 0:
        raise ValueError("all-zero density")
    rng = np.random.default_rng(seed)
    res = DENSITY_RESOLUTION
    scalp = guide_set.scalp
    guide_roots = np.stack([g.points[0] for g in guide_set.guides], axis=0)
    rel = np.stack([g.points - g.points[0] for g in guide_set.guides], axis=0)

    out = []
    while len(out) < n_dense:
        batch = rng.random((max(256, n_dense), 2))
        accept = rng.random(batch.shape[0])
        cols = np.minimum((batch[:, 0] * res).astype(int), res - 1)
        rows = np.minimum((batch[:, 1] * res).astype(int), res - 1)
        keep = accept < density.values[rows, cols]
        for uv in batch[keep]:
            root = scalp.uv_to_point(uv)
            d = np.linalg.norm(guide_roots - root, axis=1)
            near = np.argsort(d, kind="stable")[:N_BLEND]
            w = 1.0 / (d[near] + 1e-9)
            w /= w.sum()
            points = root + np.einsum("k,kld->ld", w, rel[near])
            out.append(Strand(points=points, root_uv=UVCoord(*uv)))
            if len(out) == n_dense:
                break
    return out


def format_obj(strands) -> str:
    """OBJ text with one ``l`` polyline per strand (1-based indices)."""
    if not strands:
        raise ValueError("nothing to export")
    buf = io.StringIO()
    offset = 1
    for s in strands:
        for p in s.points:
            buf.write(f"v {p[0]:.6f} {p[1]:.6f} {p[2]:.6f}\n")
        idx = " ".join(str(offset + i) for i in range(len(s.points)))
        buf.write(f"l {idx}\n")
        offset += len(s.points)
    return buf.getvalue()


def export_obj(strands, path) -> None:
    atomic_write_text(path, format_obj(strands))


def read_obj_polylines(path) -> list:
    """Parse the ``v``/``l`` records back into point arrays (for checks)."""
    verts = []
    lines = []
    with open(path) as fh:
        for raw in fh:
            parts = raw.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "l":
                lines.append([int(i) - 1 for i in parts[1:]])
    verts = np.asarray(verts, dtype=np.float64)
    return [verts[idx] for idx in lines]
