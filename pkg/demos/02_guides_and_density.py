"""Condense a dense synthetic hairstyle into guide strands.

Strands cluster on truncated-DCT shape descriptors; each cluster
contributes its member nearest the centroid as the guide. The density map
is rasterized from every raw root and normalized to a peak of one.
"""

import numpy as np

from strandlang import StyleFamily, generate_hairstyle, extract_guides
from strandlang.guides import GuideConfig, sample_cluster_strands
from strandlang.hair import REGION_NAMES

style = generate_hairstyle(
    StyleFamily(family="wavy", strand_count=4000, seed=7), L=64
)
print(f"dense hairstyle: {len(style)} strands of {len(style.strands[0])} points")

guides = extract_guides(style, GuideConfig(k_feat=8, n_guide=128, seed=0))
print(f"guide set: {len(guides.guides)} guides "
      f"(one per non-empty cluster)")

pool_sizes = np.array([len(p) for p in guides.cluster_pools])
print(f"cluster sizes: min {pool_sizes.min()}, median "
      f"{int(np.median(pool_sizes))}, max {pool_sizes.max()}")

counts = np.bincount(guides.regions, minlength=8)
for name, c in zip(REGION_NAMES, counts):
    print(f"  {name:12s} {c:4d} guides")

d = guides.density.values
print(f"density raster: {d.shape}, peak {d.max():.1f}, "
      f"occupied cells {(d > 0).mean() * 100:.1f}%")

# Training-time augmentation draws several members per cluster.
reps = sample_cluster_strands(guides, n_per_cluster=10, seed=1)
print(f"cluster sampling: {len(reps)} training representatives "
      f"({len(guides.guides)} pools x 10)")
