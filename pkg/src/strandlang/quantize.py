"""Discrete tokenizers: UV grid, 4-head product quantization, density patches.

Strand components map to 32-dim spectral features (4 heads x 8 dims). Each
head is quantized against its own codebook of unit-norm entries by cosine
similarity, so one strand costs exactly 4 coarse + 4 style tokens. Density
maps are cut into 32x32 non-overlapping 8x8 patches and quantized against a
single Euclidean codebook, giving 1024 density tokens per hairstyle.

Codebook file format "HPQ1" (little-endian)::

    magic b"HPQ1", heads u32, K u32, dim u32,
    mean 32*f32, std 32*f32,
    tables heads*K*dim f32 row-major

Density codebook format "HDQ1": magic, K u32, dim u32 (64), table f32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from strandlang.guides import kmeans, kmeans_pp_init
from strandlang.hair import DENSITY_RESOLUTION, DensityMap, UVCoord
from strandlang.ioutil import Reader, atomic_write_bytes, pack_f32, pack_u32
from strandlang.spectral import CoarseBackbone, StyleResidual, dct_forward, dct_inverse

UV_GRID = 256
ANCHOR_GRID = 32
PATCH = 8
N_DENSITY_TOKENS = ANCHOR_GRID * ANCHOR_GRID  # 1024

N_HEADS = 4
HEAD_DIM = 8
FEATURE_DIM = N_HEADS * HEAD_DIM  # 32
#: Coefficient rows packed into a feature; 11 rows * 3 axes = 33 values,
#: truncated to FEATURE_DIM after flattening.
PACK_ROWS = 11

#: Decoded sub-vectors are unit codebook rows scaled back to the expected
#: sub-vector norm of standardized features.
_DECODE_SCALE = float(np.sqrt(HEAD_DIM))

PQ_MAGIC = b"HPQ1"
DQ_MAGIC = b"HDQ1"


@dataclass
class Codebook:
    """4-head product-quantization tables with the feature normalization.

    ``heads`` is (4, K, 8) with unit-norm rows; ``mean``/``std`` are the
    per-dimension affine statistics applied to raw features before
    quantization. The std absorbs a per-head factor chosen during training
    so standardized sub-vectors average norm sqrt(8), which makes the
    fixed decode scale unbiased.
    """

    heads: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.heads = np.asarray(self.heads, dtype=np.float64)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.heads.ndim != 3 or self.heads.shape[0] != N_HEADS or self.heads.shape[2] != HEAD_DIM:
            raise ValueError("heads must have shape (4, K, 8)")
        if self.k < 1:
            raise ValueError("codebooks need at least 1 entry")
        if self.mean.shape != (FEATURE_DIM,) or self.std.shape != (FEATURE_DIM,):
            raise ValueError("normalization stats must have 32 dims")
        norms = np.linalg.norm(self.heads, axis=2)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("codebook rows must be unit-norm")

    @property
    def k(self) -> int:
        return self.heads.shape[1]

    def normalize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean


@dataclass
class DensityCodebook:
    """Single Euclidean codebook over flattened 8x8 density patches."""

    codes: np.ndarray  # (K, 64)

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.float64)
        if self.codes.ndim != 2 or self.codes.shape[1] != PATCH * PATCH:
            raise ValueError("density codes must have shape (K, 64)")
        if self.codes.shape[0] < 2:
            raise ValueError("density codebook needs at least 2 entries")
        if not np.all(np.isfinite(self.codes)):
            raise ValueError("density codes must be finite")

    @property
    def k(self) -> int:
        return self.codes.shape[0]


# ---------------------------------------------------------------------------
# UV grid and density anchor
# ---------------------------------------------------------------------------

def quantize_uv(uv) -> tuple:
    """Map chart coordinates onto the 256x256 token grid."""
    u_tok = min(int(np.floor(float(uv[0]) * UV_GRID)), UV_GRID - 1)
    v_tok = min(int(np.floor(float(uv[1]) * UV_GRID)), UV_GRID - 1)
    return max(u_tok, 0), max(v_tok, 0)


def dequantize_uv(u_tok: int, v_tok: int) -> UVCoord:
    """Cell center of a UV token pair; quantize(dequantize(t)) == t."""
    if not (0 <= u_tok < UV_GRID and 0 <= v_tok < UV_GRID):
        raise ValueError("uv token out of range")
    return UVCoord((u_tok + 0.5) / UV_GRID, (v_tok + 0.5) / UV_GRID)


def density_anchor(uv) -> int:
    """Row-major index of the 32x32 density cell containing a UV point."""
    u_cell = min(int(np.floor(float(uv[0]) * ANCHOR_GRID)), ANCHOR_GRID - 1)
    v_cell = min(int(np.floor(float(uv[1]) * ANCHOR_GRID)), ANCHOR_GRID - 1)
    return max(v_cell, 0) * ANCHOR_GRID + max(u_cell, 0)


# ---------------------------------------------------------------------------
# strand features
# ---------------------------------------------------------------------------

def strand_to_feature(component) -> np.ndarray:
    """Raw 32-dim spectral feature of a strand component.

    Coarse backbones contribute the DCT of their segment directions, style
    residuals the DCT of the residual vectors. The first PACK_ROWS
    coefficient rows (DC included) are flattened row-major and truncated
    to 32 values; short signals pad with zero rows. Normalization is the
    codebook's job so the packing stays stateless.
    """
    if isinstance(component, CoarseBackbone):
        signal = np.diff(component.points, axis=0)
    elif isinstance(component, StyleResidual):
        signal = component.residuals
    else:
        raise TypeError("component must be CoarseBackbone or StyleResidual")
    coeffs = dct_forward(signal)
    rows = np.zeros((PACK_ROWS, 3), dtype=np.float64)
    take = min(PACK_ROWS, coeffs.shape[0])
    rows[:take] = coeffs[:take]
    return rows.ravel()[:FEATURE_DIM]


def _feature_to_rows(feature: np.ndarray) -> np.ndarray:
    padded = np.zeros(PACK_ROWS * 3, dtype=np.float64)
    padded[:FEATURE_DIM] = feature  # the truncated 33rd value stays zero
    return padded.reshape(PACK_ROWS, 3)


def feature_to_component(feature: np.ndarray, kind: str, length: int, root=None):
    """Invert the feature packing back to a component of ``length`` points."""
    rows = _feature_to_rows(np.asarray(feature, dtype=np.float64))
    n = length - 1 if kind == "coarse" else length
    coeffs = np.zeros((n, 3), dtype=np.float64)
    take = min(PACK_ROWS, n)
    coeffs[:take] = rows[:take]
    signal = dct_inverse(coeffs)
    if kind == "coarse":
        if root is None:
            raise ValueError("coarse decoding requires the root position")
        points = np.empty((length, 3), dtype=np.float64)
        points[0] = np.asarray(root, dtype=np.float64)
        points[1:] = points[0] + np.cumsum(signal, axis=0)
        return CoarseBackbone(points=points)
    if kind == "style":
        signal[0] = 0.0  # the root residual is pinned by construction
        return StyleResidual(residuals=signal)
    raise ValueError(f"unknown component kind {kind!r}")


# ---------------------------------------------------------------------------
# product-quantization training
# ---------------------------------------------------------------------------

@dataclass
class PQTrainConfig:
    ema_decay: float = 0.99
    iterations: int = 50
    seed: int = 0
    dead_after: int = 5


def _unit_rows(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    out = np.zeros_like(X)
    ok = norms > 1e-12
    out[ok] = X[ok] / norms[ok, None]
    return out


def train_pq_codebook(
    features: np.ndarray, k: int, config: PQTrainConfig | None = None
) -> Codebook:
    """Train 4 independent sub-codebooks on standardized unit sub-vectors.

    Per head: k-means++ init, then Lloyd iterations where assignment is by
    max cosine similarity and the centroid update is an EMA of the assigned
    means followed by re-normalization. Entries unused for ``dead_after``
    consecutive iterations are reseeded to random training sub-vectors.
    """
    config = config or PQTrainConfig()
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or F.shape[1] != FEATURE_DIM:
        raise ValueError("features must have shape (N, 32)")
    if F.shape[0] < 2:
        raise ValueError("need at least 2 features to train")
    if k < 1:
        raise ValueError("k must be >= 1")

    mean = F.mean(axis=0)
    std = np.maximum(F.std(axis=0), 1e-8)
    z = (F - mean) / std
    # Fold a per-head scale into std so standardized sub-vectors average
    # norm sqrt(HEAD_DIM); the decode scale is then unbiased.
    for h in range(N_HEADS):
        sl = slice(h * HEAD_DIM, (h + 1) * HEAD_DIM)
        mean_norm = np.linalg.norm(z[:, sl], axis=1).mean()
        std[sl] *= max(mean_norm / _DECODE_SCALE, 1e-8)
    z = (F - mean) / std

    rng = np.random.default_rng(config.seed)
    heads = np.empty((N_HEADS, k, HEAD_DIM), dtype=np.float64)
    n = F.shape[0]
    for h in range(N_HEADS):
        U = _unit_rows(z[:, h * HEAD_DIM : (h + 1) * HEAD_DIM])
        C = _unit_rows(kmeans_pp_init(U, k, rng))
        # k-means++ can pick a zero row when inputs are degenerate.
        for i in range(k):
            if np.linalg.norm(C[i]) < 0.5:
                C[i] = _random_unit(rng)
        ema = C.copy()
        dead = np.zeros(k, dtype=np.int64)
        for _ in range(config.iterations):
            assign = np.argmax(U @ C.T, axis=1)
            counts = np.bincount(assign, minlength=k)
            sums = np.zeros_like(C)
            np.add.at(sums, assign, U)
            used = counts > 0
            means = np.zeros_like(C)
            means[used] = sums[used] / counts[used, None]
            ema[used] = config.ema_decay * ema[used] + (1.0 - config.ema_decay) * means[used]
            dead[used] = 0
            dead[~used] += 1
            for cid in np.flatnonzero(dead >= config.dead_after):
                ema[cid] = U[rng.integers(n)]
                if np.linalg.norm(ema[cid]) < 1e-12:
                    ema[cid] = _random_unit(rng)
                dead[cid] = 0
            C = _unit_rows(ema)
            for i in range(k):
                if np.linalg.norm(C[i]) < 0.5:
                    C[i] = _random_unit(rng)
        heads[h] = C
    return Codebook(heads=heads, mean=mean, std=std)


def _random_unit(rng) -> np.ndarray:
    while True:
        v = rng.standard_normal(HEAD_DIM)
        n = np.linalg.norm(v)
        if n > 1e-6:
            return v / n


# ---------------------------------------------------------------------------
# strand encode / decode
# ---------------------------------------------------------------------------

def encode_feature(feature: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Nearest code per head by cosine similarity; ties take the lowest id."""
    z = codebook.normalize(np.asarray(feature, dtype=np.float64))
    tokens = np.empty(N_HEADS, dtype=np.int64)
    for h in range(N_HEADS):
        sub = z[h * HEAD_DIM : (h + 1) * HEAD_DIM]
        norm = np.linalg.norm(sub)
        q = sub / norm if norm > 1e-12 else sub
        tokens[h] = int(np.argmax(codebook.heads[h] @ q))
    return tokens


def encode_features(features: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Batch version of :func:`encode_feature`, shape (N, 4)."""
    Z = codebook.normalize(np.asarray(features, dtype=np.float64))
    out = np.empty((Z.shape[0], N_HEADS), dtype=np.int64)
    for h in range(N_HEADS):
        out[:, h] = np.argmax(
            _unit_rows(Z[:, h * HEAD_DIM : (h + 1) * HEAD_DIM]) @ codebook.heads[h].T,
            axis=1,
        )
    return out


def encode_strand(component, codebook: Codebook) -> np.ndarray:
    """Four tokens for a coarse backbone or style residual."""
    return encode_feature(strand_to_feature(component), codebook)


def decode_feature(tokens, codebook: Codebook) -> np.ndarray:
    """Raw 32-dim feature for 4 head tokens (affine normalization inverted)."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.shape != (N_HEADS,):
        raise ValueError("expected exactly 4 head tokens")
    if np.any(tokens < 0) or np.any(tokens >= codebook.k):
        raise ValueError("token out of vocabulary range")
    z = np.concatenate(
        [codebook.heads[h, tokens[h]] * _DECODE_SCALE for h in range(N_HEADS)]
    )
    return codebook.denormalize(z)


def decode_strand(tokens, codebook: Codebook, *, kind: str, length: int, root=None):
    """Decode 4 tokens back into a component of ``length`` points.

    ``kind`` selects the inverse packing: "coarse" re-integrates directions
    from ``root``, "style" returns the residual sequence directly.
    """
    return feature_to_component(
        decode_feature(tokens, codebook), kind=kind, length=length, root=root
    )


# ---------------------------------------------------------------------------
# density tokens
# ---------------------------------------------------------------------------

def density_patches(values: np.ndarray) -> np.ndarray:
    """Row-major (1024, 64) view of 8x8 patches of a 256x256 raster."""
    g = ANCHOR_GRID
    return (
        values.reshape(g, PATCH, g, PATCH).transpose(0, 2, 1, 3).reshape(g * g, PATCH * PATCH)
    )


def train_density_codebook(
    maps, k: int = 512, seed: int = 0, max_iter: int = 100
) -> DensityCodebook:
    """Euclidean k-means over all 8x8 patches of the given density maps."""
    patches = np.concatenate([density_patches(m.values) for m in maps], axis=0)
    clustering = kmeans(patches, k, seed=seed, max_iter=max_iter)
    codes = clustering.centroids
    if codes.shape[0] < 2:
        codes = np.concatenate([codes, codes], axis=0)[:2]
    return DensityCodebook(codes=codes)


def encode_density(dmap: DensityMap, codebook: DensityCodebook) -> np.ndarray:
    """1024 patch tokens in row-major scan order."""
    if dmap.values.shape != (DENSITY_RESOLUTION, DENSITY_RESOLUTION):
        raise ValueError("density map must be 256x256")
    patches = density_patches(dmap.values)
    d = (
        np.einsum("nd,nd->n", patches, patches)[:, None]
        - 2.0 * patches @ codebook.codes.T
        + np.einsum("kd,kd->k", codebook.codes, codebook.codes)[None, :]
    )
    return np.argmin(d, axis=1).astype(np.int64)


def decode_density(tokens, codebook: DensityCodebook) -> DensityMap:
    """Reassemble patches from tokens; output clamped into [0, 1]."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.shape != (N_DENSITY_TOKENS,):
        raise ValueError("expected exactly 1024 density tokens")
    if np.any(tokens < 0) or np.any(tokens >= codebook.k):
        raise ValueError("token out of vocabulary range")
    g = ANCHOR_GRID
    patches = codebook.codes[tokens].reshape(g, g, PATCH, PATCH)
    values = patches.transpose(0, 2, 1, 3).reshape(g * PATCH, g * PATCH)
    return DensityMap(values=np.clip(values, 0.0, 1.0))


# ---------------------------------------------------------------------------
# codebook files
# ---------------------------------------------------------------------------

def write_pq_codebook(path, codebook: Codebook) -> None:
    parts = [
        PQ_MAGIC,
        pack_u32(N_HEADS, codebook.k, HEAD_DIM),
        pack_f32(codebook.mean),
        pack_f32(codebook.std),
        pack_f32(codebook.heads),
    ]
    atomic_write_bytes(path, b"".join(parts))


def read_pq_codebook(path) -> Codebook:
    with open(path, "rb") as fh:
        rd = Reader(fh.read(), name=str(path))
    rd.magic(PQ_MAGIC)
    heads, k, dim = rd.u32(), rd.u32(), rd.u32()
    if heads != N_HEADS or dim != HEAD_DIM:
        raise ValueError(f"{path}: unsupported codebook geometry")
    mean = np.array(rd.f32(FEATURE_DIM))
    std = np.array(rd.f32(FEATURE_DIM))
    table = np.array(rd.f32(heads * k * dim)).reshape(heads, k, dim)
    rd.done()
    # f32 round-trip denormalizes the rows slightly; restore unit norm.
    table = table / np.linalg.norm(table, axis=2, keepdims=True)
    return Codebook(heads=table, mean=mean, std=std)


def write_density_codebook(path, codebook: DensityCodebook) -> None:
    parts = [
        DQ_MAGIC,
        pack_u32(codebook.k, PATCH * PATCH),
        pack_f32(codebook.codes),
    ]
    atomic_write_bytes(path, b"".join(parts))


def read_density_codebook(path) -> DensityCodebook:
    with open(path, "rb") as fh:
        rd = Reader(fh.read(), name=str(path))
    rd.magic(DQ_MAGIC)
    k, dim = rd.u32(), rd.u32()
    if dim != PATCH * PATCH:
        raise ValueError(f"{path}: unsupported density patch size")
    codes = np.array(rd.f32(k * dim)).reshape(k, dim)
    rd.done()
    return DensityCodebook(codes=codes)
