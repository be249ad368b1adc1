"""Procedural synthetic hairstyles with known ground truth.

Three analytic families cover the low/high-frequency split the rest of the
pipeline cares about: Straight (pure droop, band-limited), Wavy (sinusoidal
lateral offset) and Curly (helix around the backbone). Generation is a pure
function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from strandlang.hair import (
    Hairstyle,
    RegionPartition,
    ScalpManifold,
    Strand,
    UVCoord,
    assign_region,
    resample_polyline,
)

FAMILIES = ("straight", "wavy", "curly")

#: Dense sample count before resampling down to L points.
GROW_STEPS = 256


@dataclass
class StyleFamily:
    """Parameters for one synthetic hairstyle family.

    droop bends the growth direction from the surface normal toward the
    downward axis; wave_amplitude/wave_frequency drive the sinusoidal
    family; curl_radius/curl_frequency drive the helix family. The
    region_density profile multiplies root acceptance per region id.
    """

    family: str = "straight"
    strand_count: int = 512
    length_range: tuple = (0.12, 0.25)
    droop: float = 0.6
    wave_amplitude: float = 0.012
    wave_frequency: float = 3.0
    curl_radius: float = 0.008
    curl_frequency: float = 6.0
    region_density: np.ndarray = field(default_factory=lambda: np.ones(8))
    root_patch: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.strand_count < 1:
            raise ValueError("strand_count must be >= 1")
        self.region_density = np.asarray(self.region_density, dtype=np.float64)
        if self.region_density.shape != (8,) or np.any(self.region_density < 0):
            raise ValueError("region_density must be 8 non-negative multipliers")
        if not self.region_density.max() > 0:
            raise ValueError("region_density must not be all zero")
        if self.root_patch is not None:
            u0, v0, u1, v1 = (float(c) for c in self.root_patch)
            if not (0.0 <= u0 < u1 <= 1.0 and 0.0 <= v0 < v1 <= 1.0):
                raise ValueError("root_patch must be a UV rectangle inside [0,1]^2")
            self.root_patch = (u0, v0, u1, v1)


def _sample_roots(spec: StyleFamily, partition: RegionPartition, rng) -> np.ndarray:
    """Rejection-sample root UVs with per-region acceptance weights.

    A ``root_patch`` confines roots to one UV rectangle (wisp generation);
    region weights still apply inside it.
    """
    weights = spec.region_density / spec.region_density.max()
    if spec.root_patch is not None:
        u0, v0, u1, v1 = spec.root_patch
    else:
        u0, v0, u1, v1 = 0.0, 0.0, 1.0, 1.0
    roots = np.empty((spec.strand_count, 2), dtype=np.float64)
    filled = 0
    while filled < spec.strand_count:
        batch = rng.random((max(64, spec.strand_count), 2))
        batch[:, 0] = u0 + batch[:, 0] * (u1 - u0)
        batch[:, 1] = v0 + batch[:, 1] * (v1 - v0)
        accept = rng.random(batch.shape[0])
        for uv, a in zip(batch, accept):
            if a < weights[assign_region(uv, partition)]:
                roots[filled] = uv
                filled += 1
                if filled == spec.strand_count:
                    break
    return roots


def _lateral_frame(normal: np.ndarray, scalp: ScalpManifold) -> tuple:
    e1 = np.cross(normal, scalp.up_axis)
    if np.linalg.norm(e1) < 1e-6:
        e1 = np.cross(normal, scalp.front_axis)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(normal, e1)


def _grow_strand(spec: StyleFamily, uv, scalp: ScalpManifold, length: float, L: int) -> Strand:
    root = scalp.uv_to_point(uv)
    normal = scalp.surface_normal(root)
    down = -scalp.up_axis
    t = np.linspace(0.0, 1.0, GROW_STEPS)

    # Backbone: integrate a direction that blends surface-normal into
    # straight-down as droop accumulates along the strand.
    w = np.minimum(1.0, spec.droop * t)[:, None]
    dirs = (1.0 - w) * normal + w * down
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    step = length / (GROW_STEPS - 1)
    base = np.empty((GROW_STEPS, 3))
    base[0] = root
    base[1:] = root + np.cumsum(dirs[:-1] * step, axis=0)

    e1, e2 = _lateral_frame(normal, scalp)
    if spec.family == "wavy":
        phase = 2.0 * np.pi * spec.wave_frequency * t
        base += spec.wave_amplitude * np.sin(phase)[:, None] * e1
    elif spec.family == "curly":
        phase = 2.0 * np.pi * spec.curl_frequency * t
        base += spec.curl_radius * (
            (np.cos(phase) - 1.0)[:, None] * e1 + np.sin(phase)[:, None] * e2
        )
    # Texture consumes length: rescale about the root so the total arc
    # length equals the sampled length, as for real hair of fixed length.
    arc = np.linalg.norm(np.diff(base, axis=0), axis=1).sum()
    base = root + (base - root) * (length / arc)
    return Strand(points=resample_polyline(base, L), root_uv=UVCoord(*uv))


def generate_hairstyle(
    spec: StyleFamily,
    scalp: ScalpManifold | None = None,
    partition: RegionPartition | None = None,
    L: int = 64,
) -> Hairstyle:
    """Generate a deterministic synthetic hairstyle for a family spec."""
    scalp = scalp if scalp is not None else ScalpManifold()
    partition = partition if partition is not None else RegionPartition.default()
    rng = np.random.default_rng(spec.seed)
    roots = _sample_roots(spec, partition, rng)
    lo, hi = spec.length_range
    lengths = rng.uniform(lo, hi, size=spec.strand_count)
    strands = [
        _grow_strand(spec, roots[i], scalp, float(lengths[i]), L)
        for i in range(spec.strand_count)
    ]
    return Hairstyle(strands=strands, scalp=scalp)
