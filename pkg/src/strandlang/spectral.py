"""Spectral-spatial strand decomposition.

A strand splits into a low-frequency coarse backbone (truncated DCT of its
segment directions, re-integrated from the root) and a dimensionless style
residual expressed in a parallel-transported local frame and normalized by
a local scale factor. The pair reconstructs the strand exactly because the
frames and scales are recomputed deterministically from the backbone alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

from strandlang.hair import Strand, UVCoord

#: Tangents closer than this angle (radians) count as parallel when the
#: initial frame normal is chosen.
PARALLEL_ANGLE = 1e-3

#: Floor for local scale factors; keeps residuals finite on degenerate
#: backbone segments.
SCALE_FLOOR = 1e-9


@dataclass
class CoarseBackbone:
    """Low-frequency strand curve; ``points[0]`` is the source root."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("backbone points must have shape (L, 3)")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def source_root(self) -> np.ndarray:
        return self.points[0]

    def arc_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.points, axis=0), axis=1).sum())


@dataclass
class FrameSequence:
    """Per-point orthonormal frames (tangent/normal/binormal columns) and scales."""

    frames: np.ndarray  # (L, 3, 3)
    scales: np.ndarray  # (L,)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.scales = np.asarray(self.scales, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (3, 3):
            raise ValueError("frames must have shape (L, 3, 3)")
        if self.scales.shape != (self.frames.shape[0],):
            raise ValueError("scales must have shape (L,)")
        if np.any(self.scales <= 0):
            raise ValueError("scale factors must be positive")


@dataclass
class StyleResidual:
    """Frame-local, scale-normalized deviations; residuals[0] is pinned to 0."""

    residuals: np.ndarray  # (L, 3)

    def __post_init__(self):
        self.residuals = np.asarray(self.residuals, dtype=np.float64)
        if self.residuals.ndim != 2 or self.residuals.shape[1] != 3:
            raise ValueError("residuals must have shape (L, 3)")
        if not np.all(np.isfinite(self.residuals)):
            raise ValueError("residuals contain non-finite values")

    def __len__(self) -> int:
        return self.residuals.shape[0]


# ---------------------------------------------------------------------------
# DCT
# ---------------------------------------------------------------------------

def dct_forward(signal) -> np.ndarray:
    """Orthonormal DCT-II along axis 0 (per coordinate axis for (N, 3))."""
    x = np.asarray(signal, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty signal")
    return scipy.fft.dct(x, type=2, axis=0, norm="ortho")


def dct_inverse(coefficients) -> np.ndarray:
    """Inverse of :func:`dct_forward` (orthonormal DCT-III along axis 0)."""
    c = np.asarray(coefficients, dtype=np.float64)
    if c.size == 0:
        raise ValueError("empty signal")
    return scipy.fft.idct(c, type=2, axis=0, norm="ortho")


def lowpass(coefficients, keep: int) -> np.ndarray:
    """Zero all coefficient rows at index >= keep (length preserved)."""
    out = np.array(coefficients, dtype=np.float64, copy=True)
    out[keep:] = 0.0
    return out


# ---------------------------------------------------------------------------
# backbone and frames
# ---------------------------------------------------------------------------

def extract_coarse_backbone(strand: Strand, k_geo: int) -> CoarseBackbone:
    """Low-pass the segment directions and re-integrate from the root.

    Keeps the first ``k_geo`` DCT coefficients of the direction sequence
    v_j = p_{j+1} - p_j; the backbone is p0 plus the cumulative sum of the
    filtered directions.
    """
    pts = strand.points
    L = pts.shape[0]
    if not 1 <= k_geo <= L - 1:
        raise ValueError(f"k_geo must be in [1, {L - 1}], got {k_geo}")
    directions = np.diff(pts, axis=0)
    filtered = dct_inverse(lowpass(dct_forward(directions), k_geo))
    out = np.empty_like(pts)
    out[0] = pts[0]
    out[1:] = pts[0] + np.cumsum(filtered, axis=0)
    return CoarseBackbone(points=out)


def _rotate_about(v: np.ndarray, axis: np.ndarray, cos_a: float, sin_a: float) -> np.ndarray:
    # Rodrigues with precomputed sin/cos; axis must be unit length.
    return (
        v * cos_a
        + np.cross(axis, v) * sin_a
        + axis * np.dot(axis, v) * (1.0 - cos_a)
    )


def _initial_normal(t0: np.ndarray, t1: np.ndarray) -> np.ndarray:
    """Curvature-based initial normal with a fixed-axis fallback.

    Uses the component of the second tangent orthogonal to the first; when
    the first two tangents are parallel within PARALLEL_ANGLE the world
    x-axis (then y-axis) is projected instead.
    """
    perp = t1 - np.dot(t1, t0) * t0
    norm = np.linalg.norm(perp)
    # |t0 x t1| = sin(angle); the perpendicular component has that norm.
    if norm > np.sin(PARALLEL_ANGLE):
        return perp / norm
    for axis in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])):
        cand = axis - np.dot(axis, t0) * t0
        n = np.linalg.norm(cand)
        if n > 1e-6:
            return cand / n
    raise RuntimeError("unreachable: tangent parallel to both fallback axes")


def segment_tangents(points: np.ndarray) -> np.ndarray:
    """Unit tangent per segment; degenerate segments inherit a neighbor's.

    Leading degenerate segments take the first valid tangent; all segments
    degenerate is an error.
    """
    seg = np.diff(points, axis=0)
    lens = np.linalg.norm(seg, axis=1)
    valid = lens > 1e-9
    if not np.any(valid):
        raise ValueError("degenerate backbone")
    tangents = np.zeros_like(seg)
    tangents[valid] = seg[valid] / lens[valid, None]
    first_valid = int(np.argmax(valid))
    current = tangents[first_valid]
    for j in range(seg.shape[0]):
        if valid[j]:
            current = tangents[j]
        else:
            tangents[j] = current
    return tangents


def compute_frames(backbone: CoarseBackbone) -> FrameSequence:
    """Parallel-transport frames and local scale factors along a backbone.

    Frame columns are (tangent, normal, binormal). The frame at point j
    rides segment j; the last point inherits the final segment's frame.
    Scales are the mean adjacent segment length (one-sided at endpoints),
    floored at SCALE_FLOOR.
    """
    pts = backbone.points
    L = pts.shape[0]
    if L < 3:
        raise ValueError("backbone needs at least 3 points")
    tangents = segment_tangents(pts)
    n_seg = tangents.shape[0]

    n0 = _initial_normal(tangents[0], tangents[1])
    # The transport recurrence is sequential and tiny; scalar arithmetic
    # beats per-step numpy calls by an order of magnitude here.
    t_list = tangents.tolist()
    nx, ny, nz = float(n0[0]), float(n0[1]), float(n0[2])
    normals = np.empty((n_seg, 3), dtype=np.float64)
    normals[0] = (nx, ny, nz)
    px, py, pz = t_list[0]
    for j in range(1, n_seg):
        cx, cy, cz = t_list[j]
        ax = py * cz - pz * cy
        ay = pz * cx - px * cz
        az = px * cy - py * cx
        sin_a = (ax * ax + ay * ay + az * az) ** 0.5
        if sin_a > 1e-12:
            # Rodrigues rotation of the normal about the unit axis.
            cos_a = px * cx + py * cy + pz * cz
            ax /= sin_a
            ay /= sin_a
            az /= sin_a
            dot_an = ax * nx + ay * ny + az * nz
            k = dot_an * (1.0 - cos_a)
            rx = nx * cos_a + (ay * nz - az * ny) * sin_a + ax * k
            ry = ny * cos_a + (az * nx - ax * nz) * sin_a + ay * k
            rz = nz * cos_a + (ax * ny - ay * nx) * sin_a + az * k
            nx, ny, nz = rx, ry, rz
        # Antiparallel tangents (sin ~ 0, cos < 0) keep the normal fixed:
        # the half-turn about the normal itself is the minimal choice.
        # Re-orthogonalize against drift so F^T F stays at identity.
        d = nx * cx + ny * cy + nz * cz
        nx -= d * cx
        ny -= d * cy
        nz -= d * cz
        inv = 1.0 / (nx * nx + ny * ny + nz * nz) ** 0.5
        nx *= inv
        ny *= inv
        nz *= inv
        normals[j] = (nx, ny, nz)
        px, py, pz = cx, cy, cz

    frames = np.empty((L, 3, 3), dtype=np.float64)
    frames[:n_seg, :, 0] = tangents
    frames[:n_seg, :, 1] = normals
    frames[:n_seg, :, 2] = np.cross(tangents, normals)
    frames[L - 1] = frames[L - 2]

    lens = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    scales = np.empty(L, dtype=np.float64)
    scales[0] = lens[0]
    scales[-1] = lens[-1]
    scales[1:-1] = 0.5 * (lens[:-1] + lens[1:])
    return FrameSequence(frames=frames, scales=np.maximum(scales, SCALE_FLOOR))


# ---------------------------------------------------------------------------
# bijective decompose / recompose
# ---------------------------------------------------------------------------

def decompose(strand: Strand, k_geo: int) -> tuple:
    """Split a strand into (CoarseBackbone, StyleResidual).

    r_j = F_j^T (p_j - phat_j) / sigma_j with frames and scales derived
    from the backbone; the root residual is exactly zero.
    """
    backbone = extract_coarse_backbone(strand, k_geo)
    frame_seq = compute_frames(backbone)
    deviation = strand.points - backbone.points
    # F^T d for every point: einsum over the frame columns.
    residuals = np.einsum("jik,ji->jk", frame_seq.frames, deviation)
    residuals /= frame_seq.scales[:, None]
    residuals[0] = 0.0
    return backbone, StyleResidual(residuals=residuals)


def recompose(
    backbone: CoarseBackbone,
    residual: StyleResidual,
    root_uv: UVCoord = UVCoord(0.0, 0.0),
) -> Strand:
    """Exact inverse of :func:`decompose` given the matching backbone."""
    if len(backbone) != len(residual):
        raise ValueError("backbone and residual lengths differ")
    frame_seq = compute_frames(backbone)
    offsets = np.einsum("jik,jk->ji", frame_seq.frames, residual.residuals)
    points = backbone.points + frame_seq.scales[:, None] * offsets
    return Strand(points=points, root_uv=root_uv)
