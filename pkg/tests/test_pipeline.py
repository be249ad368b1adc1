import numpy as np
import pytest

from strandlang import pipeline
from strandlang.grammar import Mode, build_vocabulary, parse, serialize
from strandlang.guides import GuideConfig, extract_guides
from strandlang.quantize import PQTrainConfig, strand_to_feature, train_density_codebook, train_pq_codebook
from strandlang.spectral import decompose
from strandlang.synth import StyleFamily, generate_hairstyle


@pytest.fixture(scope="module")
def stack():
    style = generate_hairstyle(
        StyleFamily(family="curly", strand_count=1200, seed=1), L=32
    )
    guides = extract_guides(style, GuideConfig(n_guide=32, seed=0))
    feats_c, feats_s = [], []
    for g in guides.guides:
        bb, res = decompose(g, 4)
        feats_c.append(strand_to_feature(bb))
        feats_s.append(strand_to_feature(res))
    coarse_cb = train_pq_codebook(np.array(feats_c), 16, PQTrainConfig(seed=0))
    style_cb = train_pq_codebook(np.array(feats_s), 8, PQTrainConfig(seed=0))
    density_cb = train_density_codebook([guides.density], k=8, seed=0)
    vocab = build_vocabulary(16, 8, 8)
    return style, guides, coarse_cb, style_cb, density_cb, vocab


class TestTokenizeRoundTrip:
    def test_tokenize_then_serialize_parses(self, stack):
        _, guides, coarse_cb, style_cb, density_cb, vocab = stack
        strands, density = pipeline.tokenize_guides(
            guides, coarse_cb, style_cb, density_cb, k_geo=4
        )
        assert len(strands) == len(guides.guides)
        assert density.shape == (1024,)
        for mode in Mode:
            seq = serialize(strands, density, mode, vocab)
            parsed = parse(seq.ids, vocab, expected_mode=mode)
            assert parsed.strand_count() == len(strands)

    def test_strand_tokens_fields(self, stack):
        _, guides, coarse_cb, style_cb, density_cb, _ = stack
        tok = pipeline.tokenize_strand(
            guides.guides[0], int(guides.regions[0]), coarse_cb, style_cb, 4
        )
        assert 0 <= tok.u < 256 and 0 <= tok.v < 256
        assert 0 <= tok.anchor < 1024
        assert tok.anchor == (tok.v // 8) * 32 + (tok.u // 8)
        assert tok.coarse.shape == (4,)
        assert tok.style.shape == (4,)

    def test_detokenize_produces_valid_hairstyle(self, stack):
        _, guides, coarse_cb, style_cb, density_cb, _ = stack
        strands, _ = pipeline.tokenize_guides(
            guides, coarse_cb, style_cb, density_cb, k_geo=4
        )
        rebuilt = pipeline.detokenize_hairstyle(
            strands, coarse_cb, style_cb, guides.scalp, length=32
        )
        assert len(rebuilt) == len(strands)
        for s in rebuilt.strands:
            assert len(s) == 32
            assert np.all(np.isfinite(s.points))
            # Root decodes to the quantized-uv cell center on the scalp.
            dist = np.linalg.norm(s.points[0] - guides.scalp.center)
            assert abs(dist - guides.scalp.radius) < 1e-9

    def test_reconstruction_tracks_source_scale(self, stack):
        # Decoded guides stay in the neighborhood of the originals: mean
        # point error well under the strand length.
        _, guides, coarse_cb, style_cb, density_cb, _ = stack
        strands, _ = pipeline.tokenize_guides(
            guides, coarse_cb, style_cb, density_cb, k_geo=4
        )
        rebuilt = pipeline.detokenize_hairstyle(
            strands, coarse_cb, style_cb, guides.scalp, length=32
        )
        errs = []
        for src, rec in zip(guides.guides, rebuilt.strands):
            errs.append(
                np.linalg.norm(rec.points - src.points, axis=1).mean()
                / max(src.arc_length(), 1e-9)
            )
        assert float(np.median(errs)) < 0.6

    def test_tokens_json_round_trip(self, stack, tmp_path):
        _, guides, coarse_cb, style_cb, density_cb, _ = stack
        strands, density = pipeline.tokenize_guides(
            guides, coarse_cb, style_cb, density_cb, k_geo=4
        )
        path = tmp_path / "tokens.json"
        pipeline.save_tokens_json(path, strands, density)
        loaded, density2 = pipeline.load_tokens_json(path)
        assert np.array_equal(density, density2)
        for a, b in zip(strands, loaded):
            assert (a.region, a.u, a.v, a.anchor) == (b.region, b.u, b.v, b.anchor)
            assert np.array_equal(a.coarse, b.coarse)
            assert np.array_equal(a.style, b.style)


class TestTrainItem:
    def test_pools_are_tokenized(self, stack):
        _, guides, coarse_cb, style_cb, density_cb, _ = stack
        item = pipeline.build_train_item(
            guides, coarse_cb, style_cb, density_cb, k_geo=4,
            pool_size=5, seed=0, style_id="abc", cond_dim=8,
        )
        assert len(item.strand_pools) == len(guides.guides)
        for pool in item.strand_pools:
            assert 1 <= len(pool) <= 5
            regions = {t.region for t in pool}
            assert len(regions) == 1  # pool members share the guide's region
        assert item.conds.global_img.shape == (8,)
