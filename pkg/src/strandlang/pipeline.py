"""Glue between the geometric stages and the token model.

Tokenizing a guide set means: quantize each guide root onto the UV grid,
derive its density anchor, decompose the strand and push both components
through the product-quantization codebooks, and encode the density map.
Training items additionally tokenize sampled cluster members so the
trainer can re-draw pool members every step.
"""

from __future__ import annotations

import json

import numpy as np

from strandlang.grammar import StrandTokens
from strandlang.guides import GuideSet
from strandlang.hair import Hairstyle, ScalpManifold, Strand
from strandlang.ioutil import atomic_write_text
from strandlang.model import ConditionSet, TrainItem, pseudo_condition
from strandlang.quantize import (
    Codebook,
    DensityCodebook,
    decode_strand,
    dequantize_uv,
    density_anchor,
    encode_density,
    encode_strand,
    quantize_uv,
)
from strandlang.spectral import decompose, recompose


def tokenize_strand(
    strand: Strand,
    region: int,
    coarse_cb: Codebook,
    style_cb: Codebook,
    k_geo: int,
) -> StrandTokens:
    """Full 10-token encoding of one strand (uv pair, anchor, 4+4 codes)."""
    u, v = quantize_uv(strand.root_uv)
    backbone, residual = decompose(strand, k_geo)
    return StrandTokens(
        region=region,
        u=u,
        v=v,
        anchor=density_anchor(strand.root_uv),
        coarse=encode_strand(backbone, coarse_cb),
        style=encode_strand(residual, style_cb),
    )


def tokenize_guides(
    guide_set: GuideSet,
    coarse_cb: Codebook,
    style_cb: Codebook,
    density_cb: DensityCodebook,
    k_geo: int,
) -> tuple:
    """(strand tokens, density tokens) for a guide set."""
    strands = [
        tokenize_strand(g, int(r), coarse_cb, style_cb, k_geo)
        for g, r in zip(guide_set.guides, guide_set.regions)
    ]
    density = encode_density(guide_set.density, density_cb)
    return strands, density


def detokenize_strand(
    tokens: StrandTokens,
    coarse_cb: Codebook,
    style_cb: Codebook,
    scalp: ScalpManifold,
    length: int,
) -> Strand:
    """Decode a token bundle back into strand geometry."""
    uv = dequantize_uv(tokens.u, tokens.v)
    root = scalp.uv_to_point(uv)
    backbone = decode_strand(
        tokens.coarse, coarse_cb, kind="coarse", length=length, root=root
    )
    residual = decode_strand(tokens.style, style_cb, kind="style", length=length)
    return recompose(backbone, residual, root_uv=uv)


def detokenize_hairstyle(
    strand_tokens,
    coarse_cb: Codebook,
    style_cb: Codebook,
    scalp: ScalpManifold,
    length: int,
) -> Hairstyle:
    strands = [
        detokenize_strand(t, coarse_cb, style_cb, scalp, length)
        for t in strand_tokens
    ]
    return Hairstyle(strands=strands, scalp=scalp)


def build_train_item(
    guide_set: GuideSet,
    coarse_cb: Codebook,
    style_cb: Codebook,
    density_cb: DensityCodebook,
    k_geo: int,
    pool_size: int = 10,
    seed: int = 0,
    style_id: str = "",
    cond_dim: int = 8,
    conds: ConditionSet | None = None,
) -> TrainItem:
    """Tokenize a guide set into a training item with augmentation pools.

    Each guide slot gets up to ``pool_size`` tokenized cluster members
    (sampled without replacement when the pool is large enough); when the
    source strands are unavailable the pools degenerate to the guides
    themselves.
    """
    rng = np.random.default_rng(seed)
    density = encode_density(guide_set.density, density_cb)
    pools = []
    for gi, guide in enumerate(guide_set.guides):
        region = int(guide_set.regions[gi])
        members = [guide]
        if guide_set.source_strands is not None and pool_size > 1:
            pool = np.asarray(guide_set.cluster_pools[gi])
            n = min(pool_size, pool.size)
            picks = rng.choice(pool, size=n, replace=pool.size < n)
            members = [guide_set.source_strands[int(i)] for i in picks]
        pools.append(
            [tokenize_strand(s, region, coarse_cb, style_cb, k_geo) for s in members]
        )
    if conds is None:
        conds = pseudo_condition(style_id or "default", cond_dim)
    return TrainItem(
        density_tokens=density, strand_pools=pools, conds=conds, style_id=style_id
    )


# ---------------------------------------------------------------------------
# tokenized-hairstyle JSON (intermediate artifact of the CLI)
# ---------------------------------------------------------------------------

def save_tokens_json(path, strand_tokens, density_tokens) -> None:
    doc = {
        "density": [int(d) for d in density_tokens],
        "strands": [
            {
                "region": int(t.region),
                "anchor": None if t.anchor is None else int(t.anchor),
                "u": int(t.u),
                "v": int(t.v),
                "coarse": None if t.coarse is None else [int(c) for c in t.coarse],
                "style": None if t.style is None else [int(c) for c in t.style],
            }
            for t in strand_tokens
        ],
    }
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def load_tokens_json(path) -> tuple:
    with open(path) as fh:
        doc = json.load(fh)
    density = np.array(doc["density"], dtype=np.int64)
    strands = [
        StrandTokens(
            region=s["region"],
            u=s["u"],
            v=s["v"],
            anchor=s["anchor"],
            coarse=None if s["coarse"] is None else np.array(s["coarse"], dtype=np.int64),
            style=None if s["style"] is None else np.array(s["style"], dtype=np.int64),
        )
        for s in doc["strands"]
    ]
    return strands, density
