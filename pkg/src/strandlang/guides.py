"""Frequency-aware strand clustering and guide-strand extraction.

Strands are clustered on truncated DCT descriptors of their root-centered
geometry; each non-empty cluster contributes the member strand nearest its
centroid as the guide. The guide set also carries the full-resolution root
density map and per-guide member pools used as training-time augmentation.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from strandlang.hair import (
    DENSITY_RESOLUTION,
    DensityMap,
    Hairstyle,
    RegionPartition,
    ScalpManifold,
    Strand,
    assign_regions,
    rasterize_density,
    read_hair,
    write_hair,
)
from strandlang.ioutil import atomic_write_bytes, atomic_write_text
from strandlang.spectral import dct_forward


@dataclass
class GuideConfig:
    k_feat: int = 8
    n_guide: int = 512
    seed: int = 0


@dataclass
class Clustering:
    """Lloyd's algorithm output with the per-iteration inertia trace."""

    assignments: np.ndarray  # (N,) int
    centroids: np.ndarray    # (k, D)
    inertia: float
    inertia_history: list = field(default_factory=list)

    def cluster_members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == cluster_id)


@dataclass
class GuideSet:
    """Representative strands plus the scalp-level context they came from."""

    guides: list                 # list[Strand]
    regions: np.ndarray          # (G,) region id per guide
    density: DensityMap
    cluster_pools: list          # list[np.ndarray] of source strand indices
    scalp: ScalpManifold
    source_strands: list | None = None  # kept in memory only, not persisted

    def __post_init__(self):
        self.regions = np.asarray(self.regions, dtype=np.int64)
        if len(self.guides) != self.regions.shape[0] or len(self.guides) != len(
            self.cluster_pools
        ):
            raise ValueError("guides, regions and cluster_pools must align")


def strand_descriptor(strand: Strand, k_feat: int = 8) -> np.ndarray:
    """Truncated DCT of the root-centered strand; shape (k_feat, 3).

    Subtracting the root removes global translation before the transform.
    """
    if not 1 <= k_feat <= len(strand):
        raise ValueError(f"k_feat must be in [1, {len(strand)}]")
    centered = strand.points - strand.points[0]
    return dct_forward(centered)[:k_feat]


def descriptor_matrix(strands, k_feat: int = 8) -> np.ndarray:
    """Flattened descriptors for a strand list, shape (N, k_feat*3)."""
    return np.stack(
        [strand_descriptor(s, k_feat).ravel() for s in strands], axis=0
    )


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

def _sq_dist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    # (N, k) squared Euclidean distances, clipped against tiny negatives.
    d = (
        np.einsum("nd,nd->n", X, X)[:, None]
        - 2.0 * (X @ C.T)
        + np.einsum("kd,kd->k", C, C)[None, :]
    )
    return np.maximum(d, 0.0)


def kmeans_pp_init(X: np.ndarray, k: int, rng) -> np.ndarray:
    """k-means++ seeding: D^2-weighted draws after a uniform first pick."""
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]), dtype=np.float64)
    centroids[0] = X[rng.integers(n)]
    best = _sq_dist(X, centroids[:1]).ravel()
    for i in range(1, k):
        total = best.sum()
        if total <= 0:
            centroids[i] = X[rng.integers(n)]
            continue
        r = rng.random() * total
        idx = int(np.searchsorted(np.cumsum(best), r))
        idx = min(idx, n - 1)
        centroids[i] = X[idx]
        best = np.minimum(best, _sq_dist(X, centroids[i : i + 1]).ravel())
    return centroids


def kmeans(
    descriptors: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 200,
    rel_tol: float = 1e-7,
) -> Clustering:
    """Lloyd's algorithm with k-means++ seeding, deterministic per seed.

    Stops when the relative inertia improvement drops below ``rel_tol`` or
    after ``max_iter`` iterations. Empty clusters are reseeded to the point
    farthest from their current (stale) centroid, which cannot increase
    inertia. Inertia is asserted monotone non-increasing every iteration.
    Clusters still empty at convergence (duplicate inputs) are dropped, so
    the centroid count never exceeds the number of distinct descriptors.
    """
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("descriptors must be a non-empty (N, D) array")
    if k < 1:
        raise ValueError("k must be >= 1")
    n = X.shape[0]
    k = min(k, n)
    rng = np.random.default_rng(seed)
    centroids = kmeans_pp_init(X, k, rng)

    history = []
    assignments = None
    taken = set()
    for _ in range(max_iter):
        d = _sq_dist(X, centroids)
        assignments = np.argmin(d, axis=1)
        inertia = float(d[np.arange(n), assignments].sum())
        if history:
            assert inertia <= history[-1] * (1.0 + 1e-12) + 1e-12, (
                "Lloyd inertia increased"
            )
        converged = bool(history) and (
            history[-1] - inertia <= rel_tol * max(history[-1], 1e-300)
        )
        history.append(inertia)
        if converged:
            break
        counts = np.bincount(assignments, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assignments, X)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        empties = np.flatnonzero(~nonempty)
        if empties.size:
            taken.clear()
            for cid in empties:
                far = np.linalg.norm(X - centroids[cid], axis=1)
                order = np.argsort(-far, kind="stable")
                pick = next(int(i) for i in order if int(i) not in taken)
                taken.add(pick)
                centroids[cid] = X[pick]
    counts = np.bincount(assignments, minlength=k)
    keep = np.flatnonzero(counts > 0)
    remap = np.full(k, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    return Clustering(
        assignments=remap[assignments],
        centroids=centroids[keep],
        inertia=history[-1],
        inertia_history=history,
    )


# ---------------------------------------------------------------------------
# guide extraction and cluster sampling
# ---------------------------------------------------------------------------

def extract_guides(
    hairstyle: Hairstyle,
    config: GuideConfig | None = None,
    partition: RegionPartition | None = None,
) -> GuideSet:
    """Cluster a hairstyle and pick one representative strand per cluster.

    The guide is the member with minimum descriptor distance to its
    centroid (never the abstract centroid itself), the density map comes
    from all raw roots, and each guide is labeled with its root's region.
    """
    config = config or GuideConfig()
    partition = partition or RegionPartition.default()
    X = descriptor_matrix(hairstyle.strands, config.k_feat)
    clustering = kmeans(X, config.n_guide, seed=config.seed)

    guide_indices = []
    pools = []
    k = clustering.centroids.shape[0]
    for cid in range(k):
        members = clustering.cluster_members(cid)
        if members.size == 0:
            continue
        dists = np.linalg.norm(X[members] - clustering.centroids[cid], axis=1)
        guide_indices.append(int(members[np.argmin(dists)]))
        pools.append(members)

    guides = [hairstyle.strands[i] for i in guide_indices]
    roots = np.array([g.root_uv for g in guides], dtype=np.float64)
    regions = assign_regions(roots, partition) if guides else np.empty(0, np.int64)
    density = rasterize_density(hairstyle.roots_uv())
    return GuideSet(
        guides=guides,
        regions=regions,
        density=density,
        cluster_pools=pools,
        scalp=hairstyle.scalp,
        source_strands=hairstyle.strands,
    )


def sample_cluster_strands(
    guide_set: GuideSet, n_per_cluster: int = 10, seed: int = 0
) -> list:
    """Sample training representatives from every cluster pool.

    Uniform without replacement per pool; pools smaller than the request
    fall back to sampling with replacement. Deterministic per seed.
    """
    if guide_set.source_strands is None:
        raise ValueError("guide set was loaded without its source strands")
    if not guide_set.cluster_pools or any(
        len(p) == 0 for p in guide_set.cluster_pools
    ):
        raise ValueError("guide set has empty cluster pools")
    rng = np.random.default_rng(seed)
    out = []
    for pool in guide_set.cluster_pools:
        pool = np.asarray(pool)
        replace = pool.size < n_per_cluster
        picks = rng.choice(pool, size=n_per_cluster, replace=replace)
        out.extend(guide_set.source_strands[int(i)] for i in picks)
    return out


# ---------------------------------------------------------------------------
# persistence: guides.hair + density raster + text manifest
# ---------------------------------------------------------------------------

def save_guide_set(directory, guide_set: GuideSet) -> None:
    """Write guides.hair, density.f32 (row-major f32 LE) and manifest.txt."""
    os.makedirs(directory, exist_ok=True)
    write_hair(
        os.path.join(directory, "guides.hair"),
        Hairstyle(strands=guide_set.guides, scalp=guide_set.scalp),
    )
    raster = guide_set.density.values.astype("<f4")
    atomic_write_bytes(os.path.join(directory, "density.f32"), raster.tobytes("C"))
    lines = ["# guide_index region_id cluster_size"]
    for i, (rid, pool) in enumerate(zip(guide_set.regions, guide_set.cluster_pools)):
        lines.append(f"{i} {int(rid)} {len(pool)}")
    atomic_write_text(os.path.join(directory, "manifest.txt"), "\n".join(lines) + "\n")


def load_guide_set(directory) -> GuideSet:
    style = read_hair(os.path.join(directory, "guides.hair"))
    raw = np.fromfile(os.path.join(directory, "density.f32"), dtype="<f4")
    res = DENSITY_RESOLUTION
    if raw.size != res * res:
        raise ValueError("density raster has wrong size")
    density = DensityMap(values=raw.reshape(res, res).astype(np.float64))
    regions = []
    pool_sizes = []
    with open(os.path.join(directory, "manifest.txt")) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            _, rid, size = line.split()
            regions.append(int(rid))
            pool_sizes.append(int(size))
    if len(regions) != len(style.strands):
        raise ValueError("manifest does not match guides.hair")
    # Pools cannot be reconstructed from disk; store the guide itself.
    pools = [np.array([i]) for i in range(len(style.strands))]
    return GuideSet(
        guides=style.strands,
        regions=np.array(regions, dtype=np.int64),
        density=density,
        cluster_pools=pools,
        scalp=style.scalp,
        source_strands=None,
    )
