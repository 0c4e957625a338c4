import numpy as np
import pytest

from sketchreid.data import SampleMeta
from sketchreid.errors import ContractViolation, ProtocolError
from sketchreid.evaluation import (cmc_from_distances, cosine_distance,
                                   distance_matrix, repeat_eval,
                                   single_shot_trial, write_cmc_csv)


def meta(ident, cam, idx=0):
    return SampleMeta(identity=ident, camera=cam, variant=0,
                      source=f"{cam}/{ident}/{idx}")


class TestCosineDistance:
    def test_identical(self):
        f = np.array([1.0, 2.0, 3.0])
        assert cosine_distance(f, f) == 0.0

    def test_orthogonal(self):
        assert cosine_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0

    def test_opposite(self):
        assert cosine_distance(np.array([1.0, 0.0]), np.array([-1.0, 0.0])) == 2.0

    def test_zero_vector_is_distance_one(self):
        assert cosine_distance(np.zeros(3), np.array([1.0, 0.0, 0.0])) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ContractViolation):
            cosine_distance(np.zeros(3), np.zeros(4))

    def test_matrix_matches_pairwise(self):
        rng = np.random.default_rng(0)
        probes = rng.standard_normal((4, 6))
        gallery = rng.standard_normal((3, 6))
        mat = distance_matrix(probes, gallery)
        for i in range(4):
            for j in range(3):
                assert abs(mat[i, j] - cosine_distance(probes[i], gallery[j])) < 1e-12


class TestCmcFromDistances:
    def test_perfect_nearest(self):
        dist = np.array([[0.1, 0.5], [0.5, 0.1]])
        curve = cmc_from_distances(dist, [0, 1], [0, 1])
        assert np.array_equal(curve, [1.0, 1.0])

    def test_correct_strictly_farthest(self):
        dist = np.array([[0.9, 0.1], [0.1, 0.9]])
        curve = cmc_from_distances(dist, [0, 1], [0, 1])
        assert np.array_equal(curve, [0.0, 1.0])

    def test_hand_three_by_three(self):
        dist = np.array([[0.1, 0.2, 0.3],
                         [0.2, 0.1, 0.3],
                         [0.3, 0.2, 0.1]])
        curve = cmc_from_distances(dist, [0, 1, 2], [0, 1, 2])
        assert np.array_equal(curve, [1.0, 1.0, 1.0])

    def test_monotone_on_random_matrices(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            n_p, n_g = rng.integers(2, 8), rng.integers(2, 8)
            dist = rng.random((n_p, n_g))
            gal_ids = rng.integers(0, n_g, size=n_g)
            probe_ids = gal_ids[rng.integers(0, n_g, size=n_p)]
            curve = cmc_from_distances(dist, probe_ids, gal_ids)
            assert np.all(np.diff(curve) >= -1e-15)

    def test_final_entry_one_when_identity_present(self):
        rng = np.random.default_rng(2)
        dist = rng.random((5, 4))
        curve = cmc_from_distances(dist, [0, 1, 2, 3, 0], [0, 1, 2, 3])
        assert curve[-1] == 1.0


def toy_features_metas():
    """3 identities x cameras A and B, features equal per identity."""
    feats, metas = [], []
    base = np.eye(3)
    for ident in range(3):
        for cam in ("A", "B"):
            feats.append(base[ident] + 0.01 * ident)
            metas.append(meta(ident, cam))
    return feats, metas


class TestSingleShot:
    def test_perfect_separation(self):
        feats, metas = toy_features_metas()
        rng = np.random.default_rng(0)
        curve = single_shot_trial(feats, metas, "A", "B", rng)
        assert curve[0] == 1.0

    def test_missing_gallery_identity(self):
        feats, metas = toy_features_metas()
        metas = [m for m in metas if not (m.identity == 1 and m.camera == "A")]
        feats = feats[:2] + feats[3:]
        with pytest.raises(ProtocolError, match="identity 1"):
            single_shot_trial(feats, metas, "A", "B", np.random.default_rng(0))

    def test_scale_invariance_bit_exact(self):
        feats, metas = toy_features_metas()
        rng1 = np.random.default_rng(3)
        rng2 = np.random.default_rng(3)
        c1 = single_shot_trial(feats, metas, "A", "B", rng1)
        c2 = single_shot_trial([f * 17.5 for f in feats], metas, "A", "B", rng2)
        assert np.array_equal(c1, c2)


class TestRepeatEval:
    def test_single_trial_equals_trial(self):
        feats, metas = toy_features_metas()
        mean, curves = repeat_eval(feats, metas, "A", "B", trials=1, seed=5)
        assert np.array_equal(mean, curves[0])

    def test_singleton_gallery_all_trials_identical(self):
        feats, metas = toy_features_metas()
        mean, curves = repeat_eval(feats, metas, "A", "B", trials=4, seed=6)
        for c in curves:
            assert np.array_equal(c, curves[0])
        assert np.array_equal(mean, curves[0])

    def test_hand_average(self):
        c1 = np.array([0.0, 1.0])
        c2 = np.array([1.0, 1.0])
        assert np.array_equal(np.mean([c1, c2], axis=0), [0.5, 1.0])

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(7)
        feats = [rng.standard_normal(4) for _ in range(12)]
        metas = []
        k = 0
        for ident in range(3):
            for cam in ("A", "A", "B", "B"):
                metas.append(SampleMeta(ident, cam, 0, f"{cam}/{ident}/{k}"))
                k += 1
        m1, _ = repeat_eval(feats, metas, "A", "B", trials=5, seed=11)
        m2, _ = repeat_eval(feats, metas, "A", "B", trials=5, seed=11)
        assert np.array_equal(m1, m2)

    def test_zero_trials_rejected(self):
        feats, metas = toy_features_metas()
        with pytest.raises(ContractViolation):
            repeat_eval(feats, metas, "A", "B", trials=0)


def test_tied_distances_stable_under_input_permutation():
    # Duplicate features force ties; the mandatory canonical sort makes the
    # curve independent of the order samples arrive in.
    feats, metas = [], []
    shared = np.array([1.0, 1.0, 0.0])
    for ident in range(3):
        for cam in ("A", "B"):
            feats.append(shared.copy())
            metas.append(meta(ident, cam))
    rng1 = np.random.default_rng(2)
    base = single_shot_trial(feats, metas, "A", "B", rng1)
    order = [4, 2, 0, 5, 3, 1]
    rng2 = np.random.default_rng(2)
    permuted = single_shot_trial([feats[i] for i in order],
                                 [metas[i] for i in order], "A", "B", rng2)
    assert np.array_equal(base, permuted)


def test_cmc_csv_layout(tmp_path):
    mean = np.array([0.5, 1.0])
    trials = [np.array([0.0, 1.0]), np.array([1.0, 1.0])]
    p = tmp_path / "cmc.csv"
    write_cmc_csv(p, mean, trials)
    lines = p.read_text().strip().split("\n")
    assert lines[0] == "rank,mean,trial_1,trial_2"
    assert lines[1].startswith("1,0.5,")
    assert len(lines) == 3
