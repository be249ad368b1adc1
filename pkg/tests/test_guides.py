import numpy as np
import pytest

from strandlang.guides import (
    GuideConfig,
    descriptor_matrix,
    extract_guides,
    kmeans,
    load_guide_set,
    sample_cluster_strands,
    save_guide_set,
    strand_descriptor,
)
from strandlang.hair import Hairstyle, ScalpManifold, Strand, UVCoord
from strandlang.synth import StyleFamily, generate_hairstyle

from conftest import make_strand


def dct2_matrix(n):
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    mat = np.cos(np.pi * k * (2 * j + 1) / (2 * n))
    mat[0] *= np.sqrt(1.0 / n)
    mat[1:] *= np.sqrt(2.0 / n)
    return mat


@pytest.fixture(scope="module")
def wavy_10k():
    spec = StyleFamily(family="wavy", strand_count=10000, seed=5)
    return generate_hairstyle(spec, L=32)


@pytest.fixture(scope="module")
def wavy_guides(wavy_10k):
    return extract_guides(wavy_10k, GuideConfig(k_feat=8, n_guide=512, seed=1))


class TestDescriptor:
    def test_translation_invariant(self):
        s = make_strand("curly", seed=0)
        shifted = Strand(points=s.points + np.array([1.0, -2.0, 0.5]),
                         root_uv=s.root_uv)
        d1 = strand_descriptor(s, 8)
        d2 = strand_descriptor(shifted, 8)
        assert d1.shape == (8, 3)
        assert np.max(np.abs(d1 - d2)) < 1e-9

    def test_straight_strand_matches_ramp_oracle(self):
        # A straight unit strand is a linear ramp per axis; its DCT is the
        # closed-form ramp transform (matrix oracle).
        L = 64
        t = np.linspace(0.0, 1.0, L)
        pts = np.stack([t, np.zeros_like(t), np.zeros_like(t)], axis=1)
        s = Strand(points=pts + np.array([5.0, 1.0, 2.0]))
        desc = strand_descriptor(s, 8)
        ramp = np.stack([t, np.zeros_like(t), np.zeros_like(t)], axis=1)
        expected = (dct2_matrix(L) @ ramp)[:8]
        assert np.max(np.abs(desc - expected)) < 1e-9
        # Ramp DCT: even coefficients (>= 2) vanish, odd ones decay.
        assert np.max(np.abs(expected[2::2, 0])) < 1e-12
        odd = np.abs(expected[1::2, 0])
        assert np.all(np.diff(odd) < 0)

    def test_default_k_feat_is_8(self):
        s = make_strand("wavy", seed=1)
        assert strand_descriptor(s).shape == (8, 3)


class TestKMeans:
    def test_single_cluster_is_mean(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((40, 6))
        result = kmeans(X, 1, seed=0)
        assert np.max(np.abs(result.centroids[0] - X.mean(axis=0))) < 1e-9

    def test_two_separated_blobs(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((30, 4)) + 50.0
        b = rng.standard_normal((25, 4)) - 50.0
        X = np.vstack([a, b])
        result = kmeans(X, 2, seed=3)
        labels = result.assignments
        assert len(set(labels[:30])) == 1
        assert len(set(labels[30:])) == 1
        assert labels[0] != labels[-1]

    def test_beats_random_assignment_baselines(self):
        # Oracle: 1000 random assignments give a reference inertia
        # distribution; Lloyd must beat all of them.
        rng = np.random.default_rng(2)
        X = rng.standard_normal((50, 8))
        result = kmeans(X, 4, seed=7)
        baselines = []
        for _ in range(1000):
            labels = rng.integers(4, size=50)
            inertia = 0.0
            for c in range(4):
                members = X[labels == c]
                if len(members):
                    inertia += ((members - members.mean(axis=0)) ** 2).sum()
            baselines.append(inertia)
        assert result.inertia <= min(baselines)

    def test_inertia_monotone(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((200, 5))
        result = kmeans(X, 10, seed=1)
        hist = np.array(result.inertia_history)
        assert np.all(np.diff(hist) <= 1e-9)

    def test_seed_determinism_byte_exact(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((120, 7))
        a = kmeans(X, 9, seed=42)
        b = kmeans(X, 9, seed=42)
        assert a.centroids.tobytes() == b.centroids.tobytes()
        assert a.assignments.tobytes() == b.assignments.tobytes()
        assert a.inertia == b.inertia
        c = kmeans(X, 9, seed=43)
        assert c.centroids.tobytes() != a.centroids.tobytes()

    def test_duplicate_points_collapse(self):
        X = np.tile(np.array([[1.0, 2.0, 3.0]]), (20, 1))
        result = kmeans(X, 5, seed=0)
        assert result.centroids.shape[0] == 1
        assert np.all(result.assignments == 0)
        assert result.inertia == 0.0


class TestExtractGuides:
    def test_identical_strands_one_guide(self, scalp):
        s = make_strand("wavy", seed=6, L=32)
        style = Hairstyle(strands=[s] * 512, scalp=scalp)
        gs = extract_guides(style, GuideConfig(n_guide=512, seed=0))
        assert len(gs.guides) == 1
        assert len(gs.cluster_pools[0]) == 512

    def test_singleton_clusters_recover_inputs(self, scalp):
        rng = np.random.default_rng(7)
        strands = []
        for i in range(64):
            base = make_strand("straight", seed=i, L=16)
            offset = 10.0 * rng.standard_normal(3)  # widely separated blobs
            strands.append(Strand(points=base.points + offset, root_uv=base.root_uv))
        style = Hairstyle(strands=strands, scalp=scalp)
        gs = extract_guides(style, GuideConfig(n_guide=64, seed=0))
        assert len(gs.guides) == 64
        originals = {s.points.tobytes() for s in strands}
        assert {g.points.tobytes() for g in gs.guides} == originals

    def test_guides_are_members(self, wavy_10k, wavy_guides):
        sources = {s.points.tobytes() for s in wavy_10k.strands}
        for g in wavy_guides.guides:
            assert g.points.tobytes() in sources

    def test_nearest_member_verification(self, wavy_10k, wavy_guides):
        # Oracle: among 100 random probe strands, none sits closer to a
        # cluster's centroid than that cluster's guide does.
        X = descriptor_matrix(wavy_10k.strands, 8)
        gs = wavy_guides
        result_centroids = []
        rng = np.random.default_rng(11)
        guide_idx = [
            int(pool[np.argmin(np.linalg.norm(X[pool] - X[pool].mean(0), axis=1))])
            for pool in gs.cluster_pools
        ]
        for trial in range(100):
            gi = int(rng.integers(len(gs.guides)))
            pool = set(int(i) for i in gs.cluster_pools[gi])
            centroid = X[list(pool)].mean(axis=0)
            guide_vec = X[guide_idx[gi]]
            probe = int(rng.integers(len(wavy_10k.strands)))
            while probe in pool:
                probe = int(rng.integers(len(wavy_10k.strands)))
            d_guide = np.linalg.norm(guide_vec - centroid)
            d_probe = np.linalg.norm(X[probe] - centroid)
            assert d_guide <= d_probe + 1e-12

    def test_density_and_regions_populated(self, wavy_guides):
        assert wavy_guides.density.values.max() == 1.0
        assert set(np.unique(wavy_guides.regions)).issubset(set(range(8)))
        assert len(np.unique(wavy_guides.regions)) >= 4

    def test_empty_hairstyle_rejected(self, scalp):
        with pytest.raises(ValueError, match="empty"):
            Hairstyle(strands=[], scalp=scalp)


class TestClusterSampling:
    def test_degenerate_pool_repeats(self, scalp):
        s = make_strand("wavy", seed=8, L=16)
        style = Hairstyle(strands=[s], scalp=scalp)
        gs = extract_guides(style, GuideConfig(n_guide=4, seed=0))
        out = sample_cluster_strands(gs, n_per_cluster=10, seed=0)
        assert len(out) == 10
        assert all(o.points.tobytes() == s.points.tobytes() for o in out)

    def test_full_pool_is_permutation(self, scalp):
        strands = [make_strand("wavy", seed=i, L=16) for i in range(12)]
        style = Hairstyle(strands=[s for s in strands], scalp=scalp)
        gs = extract_guides(style, GuideConfig(n_guide=1, seed=0))
        out = sample_cluster_strands(gs, n_per_cluster=12, seed=3)
        assert {o.points.tobytes() for o in out} == {
            s.points.tobytes() for s in strands
        }

    def test_paper_scale_sample_count(self, wavy_guides):
        assert len(wavy_guides.guides) == 512
        out = sample_cluster_strands(wavy_guides, n_per_cluster=10, seed=1)
        assert len(out) == 5120

    def test_deterministic_per_seed(self, wavy_guides):
        a = sample_cluster_strands(wavy_guides, 10, seed=2)
        b = sample_cluster_strands(wavy_guides, 10, seed=2)
        assert all(
            x.points.tobytes() == y.points.tobytes() for x, y in zip(a, b)
        )


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path, wavy_guides):
        directory = tmp_path / "guides"
        save_guide_set(directory, wavy_guides)
        loaded = load_guide_set(directory)
        assert len(loaded.guides) == len(wavy_guides.guides)
        assert np.array_equal(loaded.regions, wavy_guides.regions)
        assert np.max(np.abs(loaded.density.values - wavy_guides.density.values)) < 1e-6
        assert loaded.scalp.radius == pytest.approx(wavy_guides.scalp.radius)
        assert loaded.source_strands is None
        with pytest.raises(ValueError, match="source strands"):
            sample_cluster_strands(loaded, 5, seed=0)
