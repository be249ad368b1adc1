"""Discrete tokenizers: UV grid, 4-head product quantization, density VQ.

A strand costs exactly ten discrete tokens: two UV tokens for the root,
four coarse codes and four style codes. The density map costs 1024 patch
tokens. Product quantization assigns each 8-dim head by cosine similarity
against unit-norm codebook entries trained with EMA k-means.
"""

import numpy as np

from strandlang import StyleFamily, generate_hairstyle, decompose
from strandlang.quantize import (
    PQTrainConfig,
    decode_strand,
    density_anchor,
    dequantize_uv,
    encode_density,
    encode_strand,
    quantize_uv,
    strand_to_feature,
    train_density_codebook,
    train_pq_codebook,
)
from strandlang.guides import GuideConfig, extract_guides

style = generate_hairstyle(
    StyleFamily(family="curly", strand_count=1500, seed=3), L=64
)
guides = extract_guides(style, GuideConfig(n_guide=96, seed=0))

# Root tokens: 256x256 grid plus the 32x32 density anchor.
uv = guides.guides[0].root_uv
u_tok, v_tok = quantize_uv(uv)
print(f"root {tuple(round(c, 4) for c in uv)} -> uv tokens ({u_tok}, {v_tok}), "
      f"anchor {density_anchor(uv)}")
print(f"cell center round-trip: {tuple(round(c, 4) for c in dequantize_uv(u_tok, v_tok))}")

# Geometry tokens: train per-component codebooks on the guide set.
backbones, residuals = [], []
for g in guides.guides:
    bb, res = decompose(g, 4)
    backbones.append(bb)
    residuals.append(res)
coarse_cb = train_pq_codebook(
    np.array([strand_to_feature(b) for b in backbones]), k=64,
    config=PQTrainConfig(seed=0),
)
style_cb = train_pq_codebook(
    np.array([strand_to_feature(r) for r in residuals]), k=32,
    config=PQTrainConfig(seed=0),
)

bb = backbones[0]
tokens = encode_strand(bb, coarse_cb)
print(f"coarse tokens: {tokens.tolist()}  (4 heads, K={coarse_cb.k})")
rec = decode_strand(tokens, coarse_cb, kind="coarse", length=len(bb), root=bb.points[0])
err = np.linalg.norm(rec.points - bb.points, axis=1).mean()
print(f"decoded backbone mean point error: {err * 1000:.2f} mm")

# Capacity sweep: more codes, better reconstruction.
feats = np.array([strand_to_feature(b) for b in backbones])
for k in (8, 32, 128):
    book = train_pq_codebook(feats, k=k, config=PQTrainConfig(seed=1))
    errs = []
    for b in backbones:
        t = encode_strand(b, book)
        r = decode_strand(t, book, kind="coarse", length=len(b), root=b.points[0])
        errs.append(np.mean((r.points - b.points) ** 2))
    print(f"K={k:4d}: backbone RMSE {np.sqrt(np.mean(errs)) * 1000:.3f} mm")

# Density tokens: 32x32 patches of the 256x256 raster.
density_cb = train_density_codebook([guides.density], k=16, seed=0)
d_tokens = encode_density(guides.density, density_cb)
print(f"density tokens: {len(d_tokens)} ids over {density_cb.k} codes, "
      f"{len(set(d_tokens.tolist()))} distinct")
