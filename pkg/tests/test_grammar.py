import numpy as np
import pytest

from strandlang.grammar import (
    BOS,
    COND_ID,
    DEN,
    EOS,
    S1,
    S2,
    S3,
    Category,
    Mode,
    ParseError,
    ParseErrorCode,
    StrandTokens,
    TokenSequence,
    VocabHashMismatch,
    Vocabulary,
    build_loss_mask,
    build_vocabulary,
    parse,
    read_token_file,
    read_token_ids,
    region_end_id,
    region_start_id,
    serialize,
    write_token_file,
)


def vocab_size_oracle(k_coarse, k_style, k_density):
    # Arithmetic oracle: sum of the category sizes in layout order.
    return 22 + 256 + 1024 + 4 * k_coarse + 4 * k_style + k_density


@pytest.fixture(scope="module")
def vocab():
    return build_vocabulary(k_coarse=64, k_style=32, k_density=16)


def random_strands(vocab, rng, n, mode=None):
    out = []
    for _ in range(n):
        u = int(rng.integers(256))
        v = int(rng.integers(256))
        out.append(
            StrandTokens(
                region=int(rng.integers(8)),
                u=u,
                v=v,
                anchor=int(rng.integers(1024)),
                coarse=rng.integers(vocab.k_coarse, size=4),
                style=rng.integers(vocab.k_style, size=4),
            )
        )
    return out


def random_sequence(vocab, rng, mode, n_strands=None):
    n = int(rng.integers(0, 40)) if n_strands is None else n_strands
    strands = random_strands(vocab, rng, n)
    density = rng.integers(vocab.k_density, size=1024)
    return strands, density, serialize(strands, density, mode, vocab)


class TestVocabulary:
    def test_paper_config_size(self):
        v = build_vocabulary(8192, 2048, 512)
        assert v.size == vocab_size_oracle(8192, 2048, 512) == 42774

    def test_test_config_size(self, vocab):
        assert vocab.size == vocab_size_oracle(64, 32, 16) == 1702

    def test_category_layout(self, vocab):
        assert vocab.category(BOS) is Category.SPECIAL
        assert vocab.category(vocab.offset_uv) is Category.UV
        assert vocab.category(vocab.offset_anchor) is Category.ANCHOR
        assert vocab.category(vocab.offset_density) is Category.DENSITY

    def test_heads_have_disjoint_subranges(self, vocab):
        seen = set()
        for h in range(4):
            ids = set(vocab.category_range(Category.COARSE, h))
            assert not ids & seen
            seen |= ids
        assert len(seen) == 4 * vocab.k_coarse
        # Same local index, different heads -> different global ids.
        assert vocab.coarse_id(0, 5) != vocab.coarse_id(1, 5)

    def test_categories_cover_everything_once(self, vocab):
        cats = [vocab.category(t) for t in range(vocab.size)]
        counts = {c: cats.count(c) for c in set(cats)}
        assert counts[Category.SPECIAL] == 22
        assert counts[Category.UV] == 256
        assert counts[Category.ANCHOR] == 1024
        assert counts[Category.COARSE] == 4 * 64
        assert counts[Category.STYLE] == 4 * 32
        assert counts[Category.DENSITY] == 16
        with pytest.raises(ValueError):
            vocab.describe(vocab.size)

    def test_manifest_is_contiguous(self, vocab):
        rows = vocab.manifest()
        pos = 0
        for _, offset, size in rows:
            assert offset == pos
            pos += size
        assert pos == vocab.size

    def test_hash_changes_with_config(self, vocab):
        other = build_vocabulary(64, 32, 32)
        assert vocab.config_hash() != other.config_hash()


class TestSerialize:
    def test_empty_hairstyle_skeleton(self, vocab):
        density = np.zeros(1024, dtype=np.int64)
        seq = serialize([], density, Mode.LAYOUT, vocab)
        ids = seq.ids
        assert ids[0] == BOS
        assert ids[1] == COND_ID and ids[2] == COND_ID
        assert ids[3] == DEN
        assert np.all(ids[4:1028] == vocab.offset_density)
        pos = 1028
        for region in range(8):
            assert ids[pos] == region_start_id(region)
            assert ids[pos + 1] == COND_ID
            assert ids[pos + 2] == region_end_id(region)
            pos += 3
        assert ids[pos] == EOS
        assert pos == len(ids) - 1

    def test_single_front_layout_unit(self, vocab):
        s = StrandTokens(region=0, u=10, v=20, anchor=77)
        density = np.zeros(1024, dtype=np.int64)
        seq = serialize([s], density, Mode.LAYOUT, vocab)
        i = 1028  # first region marker
        unit = seq.ids[i + 2 : i + 6]
        assert unit[0] == S1
        assert unit[1] == vocab.anchor_id(77)
        assert unit[2] == vocab.uv_id(10)
        assert unit[3] == vocab.uv_id(20)

    def test_coarse_token_count_formula(self, vocab):
        # Counting oracle: 1 BOS + 2 global slots + 1 <den> + 1024 density
        # + per region (2 markers + 1 slot) + 7 ids per strand + 1 EOS.
        rng = np.random.default_rng(0)
        strands, density, seq = random_sequence(vocab, rng, Mode.COARSE, n_strands=512)
        expected = 1 + 2 + 1 + 1024 + 8 * (2 + 1) + 512 * 7 + 1
        assert len(seq) == expected

    def test_layout_units_are_4_ids(self, vocab):
        rng = np.random.default_rng(1)
        _, _, seq = random_sequence(vocab, rng, Mode.LAYOUT, n_strands=100)
        assert len(seq) == 1 + 2 + 1 + 1024 + 24 + 100 * 4 + 1

    def test_strands_sorted_within_region(self, vocab):
        strands = [
            StrandTokens(region=2, u=5, v=9, anchor=3),
            StrandTokens(region=2, u=1, v=9, anchor=9),
            StrandTokens(region=2, u=9, v=2, anchor=1),
        ]
        seq = serialize(strands, np.zeros(1024, dtype=int), Mode.LAYOUT, vocab)
        parsed = parse(seq.ids, vocab)
        units = parsed.regions[2]
        assert [(t.v, t.u) for t in units] == [(2, 9), (9, 1), (9, 5)]

    def test_bad_token_names_strand(self, vocab):
        strands = [StrandTokens(region=0, u=10, v=20, anchor=7),
                   StrandTokens(region=0, u=10, v=999, anchor=7)]
        with pytest.raises(ValueError, match="strand 1"):
            serialize(strands, np.zeros(1024, dtype=int), Mode.LAYOUT, vocab)

    def test_missing_mode_payload_rejected(self, vocab):
        strands = [StrandTokens(region=0, u=1, v=2, anchor=None)]
        with pytest.raises(ValueError, match="anchor"):
            serialize(strands, np.zeros(1024, dtype=int), Mode.LAYOUT, vocab)

    def test_deterministic(self, vocab):
        rng = np.random.default_rng(2)
        strands, density, seq1 = random_sequence(vocab, rng, Mode.STYLE, n_strands=33)
        seq2 = serialize(strands, density, Mode.STYLE, vocab)
        assert seq1.ids.tobytes() == seq2.ids.tobytes()


def canonical_units(strands, mode):
    """Expected parse structure: grouped by region, sorted, mode fields only."""
    groups = [[] for _ in range(8)]
    for s in strands:
        groups[s.region].append(s)
    out = []
    for region, group in enumerate(groups):
        group = sorted(group, key=StrandTokens.sort_key)
        units = []
        for s in group:
            if mode is Mode.LAYOUT:
                units.append((s.anchor, s.u, s.v))
            elif mode is Mode.COARSE:
                units.append((s.u, s.v) + tuple(int(c) for c in s.coarse))
            else:
                units.append((s.u, s.v) + tuple(int(c) for c in s.style))
        out.append(units)
    return out


def parsed_units(parsed, mode):
    out = []
    for region_units in parsed.regions:
        units = []
        for t in region_units:
            if mode is Mode.LAYOUT:
                units.append((t.anchor, t.u, t.v))
            elif mode is Mode.COARSE:
                units.append((t.u, t.v) + tuple(int(c) for c in t.coarse))
            else:
                units.append((t.u, t.v) + tuple(int(c) for c in t.style))
        out.append(units)
    return out


class TestParse:
    @pytest.mark.parametrize("mode", list(Mode))
    def test_round_trip_100_random_hairstyles(self, vocab, mode):
        rng = np.random.default_rng(int(mode))
        for _ in range(100):
            strands, density, seq = random_sequence(vocab, rng, mode)
            parsed = parse(seq.ids, vocab)
            if len(strands):
                assert parsed.mode is mode
            assert np.array_equal(parsed.density_tokens, density)
            assert parsed_units(parsed, mode) == canonical_units(strands, mode)

    def test_region_marker_swap_rejected(self, vocab):
        rng = np.random.default_rng(3)
        _, _, seq = random_sequence(vocab, rng, Mode.LAYOUT, n_strands=10)
        ids = seq.ids.copy()
        a = int(np.flatnonzero(ids == region_start_id(1))[0])
        b = int(np.flatnonzero(ids == region_start_id(2))[0])
        ids[a], ids[b] = ids[b], ids[a]
        with pytest.raises(ParseError) as err:
            parse(ids, vocab)
        assert err.value.code is ParseErrorCode.REGION_ORDER
        assert "region order violation" in str(err.value)

    def test_head_order_violation(self, vocab):
        rng = np.random.default_rng(4)
        _, _, seq = random_sequence(vocab, rng, Mode.COARSE, n_strands=5)
        ids = seq.ids.copy()
        # First coarse unit: sep, u, v, c1, c2, c3, c4. Replace the head-2
        # token (index 2, zero-based head 1) with a head-3-range id.
        sep_pos = int(np.flatnonzero(ids == S2)[0])
        ids[sep_pos + 4] = vocab.coarse_id(2, 0)
        with pytest.raises(ParseError) as err:
            parse(ids, vocab)
        assert err.value.code is ParseErrorCode.HEAD_ORDER

    def test_mode_mixing_rejected(self, vocab):
        rng = np.random.default_rng(5)
        _, _, seq = random_sequence(vocab, rng, Mode.COARSE, n_strands=6)
        ids = seq.ids.copy()
        sep_positions = np.flatnonzero(ids == S2)
        ids[sep_positions[2]] = S3
        with pytest.raises(ParseError) as err:
            parse(ids, vocab)
        assert err.value.code is ParseErrorCode.MODE_MIXING

    def test_expected_mode_enforced(self, vocab):
        rng = np.random.default_rng(6)
        _, _, seq = random_sequence(vocab, rng, Mode.STYLE, n_strands=3)
        with pytest.raises(ParseError) as err:
            parse(seq.ids, vocab, expected_mode=Mode.COARSE)
        assert err.value.code is ParseErrorCode.MODE_MIXING

    def test_density_too_short(self, vocab):
        rng = np.random.default_rng(7)
        _, _, seq = random_sequence(vocab, rng, Mode.LAYOUT, n_strands=2)
        ids = np.delete(seq.ids, 10)  # drop one density token
        with pytest.raises(ParseError) as err:
            parse(ids, vocab)
        assert err.value.code is ParseErrorCode.DENSITY_LENGTH

    def test_density_too_long(self, vocab):
        rng = np.random.default_rng(8)
        _, _, seq = random_sequence(vocab, rng, Mode.LAYOUT, n_strands=2)
        ids = np.insert(seq.ids, 10, vocab.offset_density)
        with pytest.raises(ParseError) as err:
            parse(ids, vocab)
        assert err.value.code is ParseErrorCode.DENSITY_LENGTH

    def test_truncation_is_unexpected_end(self, vocab):
        rng = np.random.default_rng(9)
        _, _, seq = random_sequence(vocab, rng, Mode.LAYOUT, n_strands=4)
        with pytest.raises(ParseError) as err:
            parse(seq.ids[:-5], vocab)
        assert err.value.code is ParseErrorCode.UNEXPECTED_END

    def test_trailing_garbage(self, vocab):
        rng = np.random.default_rng(10)
        _, _, seq = random_sequence(vocab, rng, Mode.LAYOUT, n_strands=4)
        ids = np.append(seq.ids, vocab.uv_id(3))
        with pytest.raises(ParseError) as err:
            parse(ids, vocab)
        assert err.value.code is ParseErrorCode.TRAILING_GARBAGE

    def test_missing_bos(self, vocab):
        rng = np.random.default_rng(11)
        _, _, seq = random_sequence(vocab, rng, Mode.LAYOUT, n_strands=1)
        with pytest.raises(ParseError) as err:
            parse(seq.ids[1:], vocab)
        assert err.value.code is ParseErrorCode.FRAMING

    def test_payload_category_violation(self, vocab):
        rng = np.random.default_rng(12)
        _, _, seq = random_sequence(vocab, rng, Mode.LAYOUT, n_strands=5)
        ids = seq.ids.copy()
        sep_pos = int(np.flatnonzero(ids == S1)[0])
        ids[sep_pos + 1] = vocab.uv_id(0)  # uv where anchor expected
        with pytest.raises(ParseError) as err:
            parse(ids, vocab)
        assert err.value.code is ParseErrorCode.CATEGORY

    def test_token_out_of_range(self, vocab):
        rng = np.random.default_rng(13)
        _, _, seq = random_sequence(vocab, rng, Mode.LAYOUT, n_strands=1)
        ids = seq.ids.copy()
        ids[40] = vocab.size + 7
        with pytest.raises(ParseError) as err:
            parse(ids, vocab)
        assert err.value.code is ParseErrorCode.TOKEN_RANGE

    def test_fuzz_mutations_never_crash(self, vocab):
        # Single-token mutations either stay valid (same-category payload
        # swap) or raise a ParseError; nothing else may escape.
        rng = np.random.default_rng(14)
        for mode in Mode:
            _, _, seq = random_sequence(vocab, rng, mode, n_strands=12)
            ids = seq.ids
            for _ in range(3000):
                mutated = ids.copy()
                pos = int(rng.integers(len(ids)))
                mutated[pos] = int(rng.integers(vocab.size))
                try:
                    parse(mutated, vocab)
                except ParseError:
                    pass


class TestLossMask:
    def test_layout_everything_supervised(self, vocab):
        rng = np.random.default_rng(15)
        _, _, seq = random_sequence(vocab, rng, Mode.LAYOUT, n_strands=20)
        mask = build_loss_mask(seq, vocab)
        ids = seq.ids
        excluded = np.flatnonzero(~mask.contributes)
        # Only BOS and the 10 condition slots are excluded.
        assert list(excluded) == [0] + list(np.flatnonzero(ids == COND_ID))
        assert mask.n_valid == len(ids) - 11

    @pytest.mark.parametrize("mode", [Mode.COARSE, Mode.STYLE])
    def test_redundant_uv_excluded(self, vocab, mode):
        rng = np.random.default_rng(16)
        n = 37
        _, _, seq = random_sequence(vocab, rng, mode, n_strands=n)
        mask = build_loss_mask(seq, vocab)
        ids = seq.ids
        non_bos_cond = np.ones(len(ids), dtype=bool)
        non_bos_cond[0] = False
        non_bos_cond[ids == COND_ID] = False
        excluded = np.flatnonzero(non_bos_cond & ~mask.contributes)
        assert len(excluded) == 2 * n
        for pos in excluded:
            assert vocab.category(int(ids[pos])) is Category.UV

    def test_n_valid_equal_across_geometry_modes(self, vocab):
        rng = np.random.default_rng(17)
        strands, density, _ = random_sequence(vocab, rng, Mode.COARSE, n_strands=25)
        seq_c = serialize(strands, density, Mode.COARSE, vocab)
        seq_s = serialize(strands, density, Mode.STYLE, vocab)
        m_c = build_loss_mask(seq_c, vocab)
        m_s = build_loss_mask(seq_s, vocab)
        assert m_c.n_valid == m_s.n_valid

    def test_category_weights_applied(self, vocab):
        rng = np.random.default_rng(18)
        _, _, seq = random_sequence(vocab, rng, Mode.LAYOUT, n_strands=5)
        mask = build_loss_mask(seq, vocab, weights={"density": 0.25, "uv": 2.0})
        ids = seq.ids
        dens = vocab.category_range(Category.DENSITY)
        for pos, t in enumerate(ids):
            if t in dens:
                assert mask.weights[pos] == 0.25

    def test_malformed_sequence_rejected(self, vocab):
        seq = TokenSequence(mode=Mode.LAYOUT, ids=np.array([BOS, EOS]), condition_slots=())
        with pytest.raises(ParseError):
            build_loss_mask(seq, vocab)


class TestTokenFiles:
    def test_round_trip(self, tmp_path, vocab):
        rng = np.random.default_rng(19)
        _, _, seq = random_sequence(vocab, rng, Mode.COARSE, n_strands=9)
        path = tmp_path / "seq.hts"
        write_token_file(path, seq, vocab)
        loaded = read_token_file(path, vocab)
        assert loaded.mode is Mode.COARSE
        assert np.array_equal(loaded.ids, seq.ids)
        assert [s.position for s in loaded.condition_slots] == [
            s.position for s in seq.condition_slots
        ]

    def test_truncated_file(self, tmp_path, vocab):
        rng = np.random.default_rng(20)
        _, _, seq = random_sequence(vocab, rng, Mode.LAYOUT, n_strands=3)
        path = tmp_path / "seq.hts"
        write_token_file(path, seq, vocab)
        data = path.read_bytes()
        path.write_bytes(data[:-6])
        with pytest.raises(ValueError, match="unexpected end of sequence"):
            read_token_ids(path)

    def test_hash_mismatch_refused(self, tmp_path, vocab):
        rng = np.random.default_rng(21)
        _, _, seq = random_sequence(vocab, rng, Mode.LAYOUT, n_strands=3)
        path = tmp_path / "seq.hts"
        write_token_file(path, seq, vocab)
        other = build_vocabulary(64, 32, 32)
        with pytest.raises(VocabHashMismatch):
            read_token_file(path, other)
