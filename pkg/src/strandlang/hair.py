"""Core geometric types: strands, scalp parameterization, regions, density.

A hairstyle is a list of fixed-length strands rooted on a spherical scalp
cap. The scalp carries an azimuth/polar UV chart; region labels and the
density raster both live in that chart. Everything here is a pure function
of its inputs and safe to share across threads.

The ``.hair`` binary format (little-endian throughout)::

    magic    b"HAIR"
    version  u32 (currently 1)
    count    u32   number of strands
    L        u32   points per strand
    scalp    center 3*f32, radius f32, up_axis 3*f32, front_axis 3*f32
    strands  count * (root_uv 2*f32, points L*3*f32)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from strandlang.ioutil import Reader, atomic_write_bytes, pack_f32, pack_u32

HAIR_MAGIC = b"HAIR"
HAIR_VERSION = 1

#: Grid resolution of the density raster and the UV token grid.
DENSITY_RESOLUTION = 256

#: Region names in their canonical order; the index is the region id and
#: also the emission order of the sequence serializer.
REGION_NAMES = (
    "Front",
    "Top",
    "Crown",
    "Nape",
    "LeftSide",
    "RightSide",
    "LeftTemple",
    "RightTemple",
)
N_REGIONS = len(REGION_NAMES)

_BELOW_ONE = float(np.nextafter(1.0, 0.0))


class UVCoord(NamedTuple):
    """Point on the scalp chart; both components live in [0, 1)."""

    u: float
    v: float


@dataclass
class Strand:
    """Fixed-length ordered 3D polyline with a scalp-UV root.

    ``points`` is an (L, 3) float array in meters; ``root_uv`` is the
    chart position of ``points[0]``.
    """

    points: np.ndarray
    root_uv: UVCoord = UVCoord(0.0, 0.0)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("strand points must have shape (L, 3)")
        if self.points.shape[0] < 4:
            raise ValueError("strand must have at least 4 points")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("strand contains non-finite coordinates")
        self.root_uv = UVCoord(float(self.root_uv[0]), float(self.root_uv[1]))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def root(self) -> np.ndarray:
        return self.points[0]

    def arc_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


@dataclass
class ScalpManifold:
    """Upper hemisphere of a sphere with an azimuth/polar UV chart.

    ``u`` is azimuth/(2*pi) measured from ``front_axis`` around ``up_axis``
    (right-handed); ``v`` is polar/(pi/2) from ``up_axis``, so v=0 is the
    pole and v->1 approaches the equator.
    """

    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 0.09
    up_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    front_axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.up_axis = np.asarray(self.up_axis, dtype=np.float64).reshape(3)
        self.front_axis = np.asarray(self.front_axis, dtype=np.float64).reshape(3)
        if not self.radius > 0:
            raise ValueError("scalp radius must be positive")
        for name, ax in (("up_axis", self.up_axis), ("front_axis", self.front_axis)):
            if abs(np.linalg.norm(ax) - 1.0) > 1e-6:
                raise ValueError(f"{name} must be unit length")
        if abs(np.dot(self.up_axis, self.front_axis)) > 1e-6:
            raise ValueError("scalp axes must be orthogonal")

    @property
    def side_axis(self) -> np.ndarray:
        return np.cross(self.up_axis, self.front_axis)

    def uv_to_point(self, uv) -> np.ndarray:
        """Closed-form inverse of :func:`project_root_to_uv`."""
        u, v = float(uv[0]), float(uv[1])
        azimuth = 2.0 * math.pi * u
        polar = 0.5 * math.pi * v
        radial = math.sin(polar) * (
            math.cos(azimuth) * self.front_axis + math.sin(azimuth) * self.side_axis
        ) + math.cos(polar) * self.up_axis
        return self.center + self.radius * radial

    def surface_normal(self, point) -> np.ndarray:
        d = np.asarray(point, dtype=np.float64) - self.center
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise ValueError("point coincides with scalp center")
        return d / n


@dataclass
class RegionPartition:
    """Eight half-open UV rectangles tiling [0,1)^2, one per region.

    ``rects[i]`` is (u0, v0, u1, v1) for region id ``i`` in
    :data:`REGION_NAMES` order. Boundary points belong to the rectangle
    whose lower/left edge contains them.
    """

    rects: tuple

    def __post_init__(self):
        rects = tuple(tuple(float(c) for c in r) for r in self.rects)
        if len(rects) != N_REGIONS:
            raise ValueError(f"partition needs exactly {N_REGIONS} rectangles")
        area = 0.0
        for u0, v0, u1, v1 in rects:
            if not (0.0 <= u0 < u1 <= 1.0 and 0.0 <= v0 < v1 <= 1.0):
                raise ValueError(f"bad rectangle {(u0, v0, u1, v1)}")
            area += (u1 - u0) * (v1 - v0)
        if abs(area - 1.0) > 1e-9:
            raise ValueError("rectangles do not cover the unit square")
        for i in range(N_REGIONS):
            for j in range(i + 1, N_REGIONS):
                a, b = rects[i], rects[j]
                if a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]:
                    raise ValueError(
                        f"rectangles {REGION_NAMES[i]} and {REGION_NAMES[j]} overlap"
                    )
        self.rects = rects

    @classmethod
    def default(cls) -> "RegionPartition":
        """Default tiling (documented in the config format).

        The low-v band splits into Front (u half containing the front
        direction) and Nape; the high-v band splits into Top and Crown;
        the middle band splits into temples (front-facing quarters) and
        sides (back-facing quarters), left before right.
        """
        return cls(
            rects=(
                (0.00, 0.00, 0.50, 0.25),  # Front
                (0.00, 0.75, 0.50, 1.00),  # Top
                (0.50, 0.75, 1.00, 1.00),  # Crown
                (0.50, 0.00, 1.00, 0.25),  # Nape
                (0.25, 0.25, 0.50, 0.75),  # LeftSide
                (0.50, 0.25, 0.75, 0.75),  # RightSide
                (0.00, 0.25, 0.25, 0.75),  # LeftTemple
                (0.75, 0.25, 1.00, 0.75),  # RightTemple
            )
        )


@dataclass
class DensityMap:
    """Non-negative scalp raster; rasterized maps are max-normalized to 1."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (DENSITY_RESOLUTION, DENSITY_RESOLUTION):
            raise ValueError(
                f"density map must be {DENSITY_RESOLUTION}x{DENSITY_RESOLUTION}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("density map contains non-finite values")
        if self.values.min() < 0.0 or self.values.max() > 1.0 + 1e-12:
            raise ValueError("density values must lie in [0, 1]")

    @property
    def resolution(self) -> tuple:
        return self.values.shape


@dataclass
class Hairstyle:
    """A non-empty strand collection sharing one scalp."""

    strands: list
    scalp: ScalpManifold

    def __post_init__(self):
        if not self.strands:
            raise ValueError("empty hairstyle")

    def __len__(self) -> int:
        return len(self.strands)

    def roots_uv(self) -> np.ndarray:
        return np.array([s.root_uv for s in self.strands], dtype=np.float64)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def resample_polyline(raw_points, count: int) -> np.ndarray:
    """Resample a polyline to ``count`` points at uniform arc-length spacing.

    Endpoints are preserved exactly. Raises on degenerate input (total
    length below 1e-9).
    """
    pts = np.asarray(raw_points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
        raise ValueError("raw polyline must have shape (n>=2, 3)")
    if count < 2:
        raise ValueError("count must be at least 2")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total < 1e-9:
        raise ValueError("zero-length strand")
    targets = np.linspace(0.0, total, count)
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    denom = np.where(seg[idx] > 0, seg[idx], 1.0)
    frac = (targets - cum[idx]) / denom
    out = pts[idx] + frac[:, None] * (pts[idx + 1] - pts[idx])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return out


def resample_strand(raw_points, count: int, root_uv=UVCoord(0.0, 0.0)) -> Strand:
    """Resample an arbitrary polyline into a fixed-length :class:`Strand`."""
    return Strand(points=resample_polyline(raw_points, count), root_uv=root_uv)


def project_root_to_uv(root, scalp: ScalpManifold) -> UVCoord:
    """Project one 3D root position onto the scalp UV chart.

    u is azimuth/(2*pi) from the front axis around the up axis; v is
    polar/(pi/2) from the up axis. Both are clamped into [0, 1). At the
    pole (azimuth undefined) u is 0 by convention.
    """
    uv = project_roots_to_uv(np.asarray(root, dtype=np.float64)[None, :], scalp)
    return UVCoord(float(uv[0, 0]), float(uv[0, 1]))


def project_roots_to_uv(roots, scalp: ScalpManifold) -> np.ndarray:
    """Vectorized projection of (N, 3) roots to (N, 2) UV coordinates."""
    roots = np.asarray(roots, dtype=np.float64)
    d = roots - scalp.center
    dist = np.linalg.norm(d, axis=1)
    if np.any(dist < 1e-9):
        raise ValueError("degenerate projection")
    dn = d / dist[:, None]
    cos_polar = np.clip(dn @ scalp.up_axis, -1.0, 1.0)
    polar = np.arccos(cos_polar)
    x = dn @ scalp.front_axis
    y = dn @ scalp.side_axis
    azimuth = np.arctan2(y, x)
    u = (azimuth / (2.0 * math.pi)) % 1.0
    u[np.hypot(x, y) < 1e-12] = 0.0  # pole tie-break
    v = polar / (0.5 * math.pi)
    uv = np.stack([u, v], axis=1)
    return np.clip(uv, 0.0, _BELOW_ONE)


def assign_region(uv, partition: RegionPartition) -> int:
    """Region id of a UV point under the half-open rectangle convention."""
    u, v = float(uv[0]), float(uv[1])
    for rid, (u0, v0, u1, v1) in enumerate(partition.rects):
        if u0 <= u < u1 and v0 <= v < v1:
            return rid
    # The rectangles tile [0,1)^2, so only inputs outside the chart land here.
    raise ValueError(f"uv {(u, v)} outside the unit square")


def assign_regions(uvs, partition: RegionPartition) -> np.ndarray:
    """Vectorized :func:`assign_region` over an (N, 2) array."""
    uvs = np.asarray(uvs, dtype=np.float64)
    out = np.full(uvs.shape[0], -1, dtype=np.int64)
    for rid, (u0, v0, u1, v1) in enumerate(partition.rects):
        inside = (
            (uvs[:, 0] >= u0)
            & (uvs[:, 0] < u1)
            & (uvs[:, 1] >= v0)
            & (uvs[:, 1] < v1)
        )
        out[inside & (out == -1)] = rid
    if np.any(out == -1):
        raise ValueError("uv outside the unit square")
    return out


def rasterize_density(roots_uv, resolution: int = DENSITY_RESOLUTION) -> DensityMap:
    """Bilinear-splat unit mass per root, then normalize the peak to 1.

    Cell centers sit at ((i + 0.5)/res, (j + 0.5)/res); a root exactly on
    a cell center deposits its whole mass into that cell. Bilinear (rather
    than nearest) splatting keeps the 256->32 patch pipeline alias-free.
    """
    roots = np.asarray(roots_uv, dtype=np.float64)
    if roots.size == 0:
        raise ValueError("empty hairstyle")
    if roots.ndim != 2 or roots.shape[1] != 2:
        raise ValueError("roots must have shape (N, 2)")
    res = int(resolution)
    grid = np.zeros((res, res), dtype=np.float64)
    # grid indexing is [v_row, u_col]
    x = roots[:, 0] * res - 0.5
    y = roots[:, 1] * res - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            cols = np.clip(x0 + dx, 0, res - 1)
            rows = np.clip(y0 + dy, 0, res - 1)
            np.add.at(grid, (rows, cols), wx * wy)
    peak = grid.max()
    if peak <= 0:
        raise ValueError("empty hairstyle")
    return DensityMap(values=grid / peak)


# ---------------------------------------------------------------------------
# .hair binary format
# ---------------------------------------------------------------------------

def hair_to_bytes(hairstyle: Hairstyle) -> bytes:
    lengths = {len(s) for s in hairstyle.strands}
    if len(lengths) != 1:
        raise ValueError("all strands must share one length")
    L = lengths.pop()
    scalp = hairstyle.scalp
    parts = [
        HAIR_MAGIC,
        pack_u32(HAIR_VERSION, len(hairstyle.strands), L),
        pack_f32(scalp.center),
        pack_f32([scalp.radius]),
        pack_f32(scalp.up_axis),
        pack_f32(scalp.front_axis),
    ]
    for s in hairstyle.strands:
        parts.append(pack_f32([s.root_uv.u, s.root_uv.v]))
        parts.append(pack_f32(s.points))
    return b"".join(parts)


def write_hair(path, hairstyle: Hairstyle) -> None:
    atomic_write_bytes(path, hair_to_bytes(hairstyle))


def read_hair(path) -> Hairstyle:
    with open(path, "rb") as fh:
        rd = Reader(fh.read(), name=str(path))
    rd.magic(HAIR_MAGIC)
    version = rd.u32()
    if version != HAIR_VERSION:
        raise ValueError(f"{path}: unsupported .hair version {version}")
    count = rd.u32()
    L = rd.u32()
    center = np.array(rd.f32(3))
    radius = rd.f32()
    up = np.array(rd.f32(3))
    front = np.array(rd.f32(3))
    scalp = ScalpManifold(center=center, radius=radius, up_axis=up, front_axis=front)
    strands = []
    for _ in range(count):
        root_uv = rd.f32(2)
        pts = np.array(rd.f32(3 * L)).reshape(L, 3)
        strands.append(Strand(points=pts, root_uv=UVCoord(*root_uv)))
    rd.done()
    return Hairstyle(strands=strands, scalp=scalp)


# ---------------------------------------------------------------------------
# plain-text config (key = value)
# ---------------------------------------------------------------------------

def format_config(L: int, radius: float, partition: RegionPartition) -> str:
    """Render the pipeline geometry config in the key = value format.

    Region rectangles are ``region.<Name> = u0, v0, u1, v1`` with half-open
    membership on the upper edges.
    """
    lines = [
        "# strandlang geometry config",
        f"L = {L}",
        f"radius = {radius}",
    ]
    for name, rect in zip(REGION_NAMES, partition.rects):
        lines.append(f"region.{name} = " + ", ".join(f"{c}" for c in rect))
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> dict:
    """Parse the key = value config format; '#' starts a comment line."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def config_to_geometry(cfg: dict) -> tuple:
    """Extract (L, radius, RegionPartition) from a parsed config dict."""
    L = int(cfg.get("L", 64))
    radius = float(cfg.get("radius", 0.09))
    rects = []
    for name in REGION_NAMES:
        key = f"region.{name}"
        if key in cfg:
            rects.append(tuple(float(c) for c in cfg[key].split(",")))
    if rects and len(rects) != N_REGIONS:
        raise ValueError("config must define all eight regions or none")
    partition = RegionPartition(rects=tuple(rects)) if rects else RegionPartition.default()
    return L, radius, partition
