"""The strand language: vocabulary, serializer, validating parser, masks.

Every hairstyle flattens into one id sequence per generation mode. The
parser rejects anything structurally wrong with a specific error code, so
a model constrained to this grammar can never hand invalid sequences to
the geometry decoder.
"""

import numpy as np

from strandlang.grammar import (
    Mode,
    ParseError,
    StrandTokens,
    build_loss_mask,
    build_vocabulary,
    parse,
    serialize,
)

vocab = build_vocabulary(k_coarse=64, k_style=32, k_density=16)
print(f"vocabulary size: {vocab.size}")
for name, offset, size in vocab.manifest():
    print(f"  {name:14s} offset {offset:5d}  size {size}")

rng = np.random.default_rng(0)
strands = [
    StrandTokens(
        region=int(rng.integers(8)),
        u=int(rng.integers(256)),
        v=int(rng.integers(256)),
        anchor=int(rng.integers(1024)),
        coarse=rng.integers(64, size=4),
        style=rng.integers(32, size=4),
    )
    for _ in range(10)
]
density = rng.integers(16, size=1024)

for mode in Mode:
    seq = serialize(strands, density, mode, vocab)
    mask = build_loss_mask(seq, vocab)
    parsed = parse(seq.ids, vocab, expected_mode=mode)
    print(f"{mode.name.lower():6s}: {len(seq)} ids, {parsed.strand_count()} units, "
          f"{mask.n_valid} supervised positions")

# The redundancy mask: re-injected (u, v) anchors are conditioning only.
seq = serialize(strands, density, Mode.COARSE, vocab)
mask = build_loss_mask(seq, vocab)
excluded = (~mask.contributes).sum() - 1 - 10  # minus BOS and 10 cond slots
print(f"coarse mode excludes {excluded} redundant uv positions "
      f"(= 2 x {len(strands)} strands)")

# Grammar violations are rejected with specific codes, never crashes.
mutations = {
    "swapped region markers": None,
    "truncated sequence": None,
}
ids = seq.ids.copy()
from strandlang.grammar import region_start_id

a = int(np.flatnonzero(ids == region_start_id(0))[0])
b = int(np.flatnonzero(ids == region_start_id(1))[0])
ids[a], ids[b] = ids[b], ids[a]
for label, bad in (("swapped region markers", ids),
                   ("truncated sequence", seq.ids[:-4])):
    try:
        parse(bad, vocab)
    except ParseError as err:
        print(f"{label}: rejected with [{err.code.name}] {err}")
