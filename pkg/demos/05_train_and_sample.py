"""Train the desk-scale model on one hairstyle and sample it back.

A deliberately tiny run: a few hundred steps on a single tokenized
hairstyle, then phased inference (density -> layout -> coarse -> style)
with grammar-constrained decoding, and a compositional style redraw that
keeps layout and coarse geometry byte-identical. Takes a couple of
minutes on a laptop CPU.
"""

import numpy as np

from strandlang import StyleFamily, decompose, generate_hairstyle
from strandlang.guides import GuideConfig, extract_guides
from strandlang.model import DecodeConfig, resample_style, sample_phased, train
from strandlang.pipeline import build_train_item, detokenize_hairstyle
from strandlang.profiles import TEST
from strandlang.quantize import PQTrainConfig, strand_to_feature, train_density_codebook, train_pq_codebook
from strandlang.dense import export_obj

style = generate_hairstyle(
    StyleFamily(family="wavy", strand_count=1000, seed=5),
    L=TEST.strand_length,
)
guides = extract_guides(style, GuideConfig(n_guide=24, seed=0))
print(f"{len(style)} strands -> {len(guides.guides)} guides")

components = [decompose(g, TEST.k_geo) for g in guides.guides]
coarse_cb = train_pq_codebook(
    np.array([strand_to_feature(b) for b, _ in components]),
    TEST.k_coarse, PQTrainConfig(seed=0),
)
style_cb = train_pq_codebook(
    np.array([strand_to_feature(r) for _, r in components]),
    TEST.k_style, PQTrainConfig(seed=0),
)
density_cb = train_density_codebook([guides.density], k=TEST.k_density, seed=0)

vocab = TEST.vocabulary()
item = build_train_item(
    guides, coarse_cb, style_cb, density_cb, TEST.k_geo,
    pool_size=4, seed=0, style_id="demo", cond_dim=TEST.cond_dim,
)

model_cfg = TEST.model_config(seed=0)
train_cfg = TEST.train_config(steps=400, seed=0)
train_cfg.log_every = 100
print("training 400 steps (all three modes, condition dropout on)...")
ckpt = train([item], vocab, model_cfg, train_cfg)
print(f"final loss ~ {np.mean(ckpt.loss_history[-25:]):.3f}")

decode = DecodeConfig(temperature=0.8, top_k=8, seed=11,
                      max_strands_per_region=6)
sample = sample_phased(item.conds, ckpt, vocab, decode)
print(f"sampled {len(sample.strands)} strands; sequences: "
      f"layout {len(sample.layout_seq)}, coarse {len(sample.coarse_seq)}, "
      f"style {len(sample.style_seq)} ids")

redraw = resample_style(sample, item.conds, ckpt, vocab,
                        DecodeConfig(temperature=1.2, seed=99,
                                     max_strands_per_region=6))
same = redraw.coarse_seq.ids.tobytes() == sample.coarse_seq.ids.tobytes()
print(f"style redraw keeps coarse sequence byte-identical: {same}")

rebuilt = detokenize_hairstyle(
    sample.strands, coarse_cb, style_cb, guides.scalp, TEST.strand_length
)
export_obj(rebuilt.strands, "sampled_hairstyle.obj")
print(f"wrote sampled_hairstyle.obj ({len(rebuilt)} polylines)")
