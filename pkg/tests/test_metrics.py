import numpy as np
import pytest

from difftween.generate import FrameSequence
from difftween.metrics import (
    FeatureSet,
    RandomProjectionExtractor,
    evaluation_report,
    fid,
    fid_from_moments,
    format_report_text,
    gaussian_moments,
    ppl,
    sample_output_frames,
    sqrt_trace_term,
)


def random_psd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T + 0.1 * np.eye(d)


def eig_trace_oracle(cov_a, cov_b):
    """Independent evaluation: eigenvalues of the (non-symmetric) product."""
    w = np.linalg.eigvals(cov_a @ cov_b)
    return 2.0 * np.sum(np.sqrt(np.clip(np.real(w), 0.0, None)))


class TestMoments:
    def test_identical_vectors_zero_cov(self):
        v = np.array([1.0, -2.0, 3.0])
        mu, cov = gaussian_moments(FeatureSet(np.stack([v, v])))
        np.testing.assert_array_equal(mu, v)
        assert not np.any(cov)

    def test_two_point_formula(self):
        mu, cov = gaussian_moments(FeatureSet(np.array([[0.0, 0.0], [2.0, 0.0]])))
        np.testing.assert_array_equal(mu, [1.0, 0.0])
        np.testing.assert_array_equal(cov, [[2.0, 0.0], [0.0, 0.0]])

    def test_monte_carlo_known_gaussian(self):
        n, d = 10_000, 3
        rng = np.random.default_rng(0)
        true_mu = np.array([1.0, -1.0, 0.5])
        true_std = np.array([0.5, 2.0, 1.0])
        samples = true_mu + true_std * rng.standard_normal((n, d))
        mu, cov = gaussian_moments(FeatureSet(samples))
        assert np.all(np.abs(mu - true_mu) < 3 * true_std / np.sqrt(n))
        for i in range(d):
            se = true_std[i] ** 2 * np.sqrt(2.0 / (n - 1))
            assert abs(cov[i, i] - true_std[i] ** 2) < 3 * se

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            gaussian_moments(FeatureSet(np.ones((1, 4))))


class TestFid:
    def test_self_distance_zero(self):
        rng = np.random.default_rng(1)
        f = FeatureSet(rng.standard_normal((50, 6)))
        assert abs(fid(f, f)) < 1e-6

    def test_equal_covariance_closed_form(self):
        mu = np.array([1.0, 2.0, -3.0, 0.5])
        eye = np.eye(4)
        got = fid_from_moments(np.zeros(4), eye, mu, eye)
        assert abs(got - mu @ mu) < 1e-6

    def test_trace_term_matches_eig_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            cov_a, cov_b = random_psd(rng, 5), random_psd(rng, 5)
            assert abs(sqrt_trace_term(cov_a, cov_b) - eig_trace_oracle(cov_a, cov_b)) < 1e-6

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        a = FeatureSet(rng.standard_normal((40, 5)))
        b = FeatureSet(1.0 + 0.5 * rng.standard_normal((30, 5)))
        assert abs(fid(a, b) - fid(b, a)) < 1e-6

    def test_rotation_invariance(self):
        rng = np.random.default_rng(4)
        q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        a = rng.standard_normal((60, 5))
        b = 0.7 + 1.3 * rng.standard_normal((45, 5))
        plain = fid(FeatureSet(a), FeatureSet(b))
        rotated = fid(FeatureSet(a @ q), FeatureSet(b @ q))
        assert abs(plain - rotated) < 1e-5

    def test_error_cases(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError):
            fid(FeatureSet(rng.standard_normal((5, 3))), FeatureSet(rng.standard_normal((5, 4))))
        with pytest.raises(ValueError):
            FeatureSet(np.array([[np.inf, 0.0]]))


class TestPpl:
    def test_constant_sequence(self):
        assert ppl(FeatureSet(np.ones((5, 3)))) == 0.0

    def test_hand_arithmetic(self):
        assert ppl(FeatureSet(np.array([[0.0], [3.0], [7.0]]))) == 7.0

    def test_seventeen_unit_steps(self):
        frames = np.zeros((17, 4))
        frames[:, 0] = np.arange(17)
        assert ppl(FeatureSet(frames)) == 16.0

    def test_isometry_invariance(self):
        rng = np.random.default_rng(6)
        seq = rng.standard_normal((9, 5))
        q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        shift = rng.standard_normal(5)
        assert abs(ppl(FeatureSet(seq)) - ppl(FeatureSet(seq @ q + shift))) < 1e-9

    def test_concatenation_additive(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((6, 4))
        b = rng.standard_normal((5, 4))
        b[0] = a[-1]  # shared frame
        whole = np.concatenate([a, b[1:]])
        assert abs(ppl(FeatureSet(whole)) - (ppl(FeatureSet(a)) + ppl(FeatureSet(b)))) < 1e-9

    def test_triangle_inequality(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            seq = rng.standard_normal((rng.integers(2, 12), 6))
            assert ppl(FeatureSet(seq)) >= np.linalg.norm(seq[-1] - seq[0]) - 1e-12

    def test_too_short(self):
        with pytest.raises(ValueError):
            ppl(FeatureSet(np.ones((1, 3))))


def dummy_sequence(num_frames, seed=0):
    rng = np.random.default_rng(seed)
    frames = [rng.random((4, 4, 3)) for _ in range(num_frames + 1)]
    return FrameSequence(scheme="ours", num_frames=num_frames, frames=frames, latents=[])


class TestSampling:
    def test_two_frames_per_sequence(self):
        seqs = [dummy_sequence(16, seed=i) for i in range(26)]
        rng = np.random.default_rng(9)
        assert len(sample_output_frames(seqs, rng)) == 52

    def test_sequence_too_short(self):
        with pytest.raises(ValueError):
            sample_output_frames([dummy_sequence(2)], np.random.default_rng(0))

    def test_deterministic_under_seed(self):
        seqs = [dummy_sequence(8, seed=i) for i in range(3)]
        a = sample_output_frames(seqs, np.random.default_rng(11))
        b = sample_output_frames(seqs, np.random.default_rng(11))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_without_replacement(self):
        seqs = [dummy_sequence(3, seed=5)]
        for seed in range(20):
            picks = sample_output_frames(seqs, np.random.default_rng(seed))
            assert not np.array_equal(picks[0], picks[1])


class TestReport:
    def test_shape_and_finiteness(self):
        per_scheme = {
            "ours": [dummy_sequence(8, seed=i) for i in range(4)],
            "interpolate_only": [dummy_sequence(8, seed=10 + i) for i in range(4)],
        }
        report = evaluation_report(per_scheme, RandomProjectionExtractor(dim=6, seed=0))
        assert [r["scheme"] for r in report["rows"]] == ["ours", "interpolate_only"]
        for row in report["rows"]:
            assert np.isfinite(row["fid"]) and np.isfinite(row["ppl_mean"]) and np.isfinite(row["ppl_std"])
            assert row["num_sequences"] == 4
            assert row["num_input_images"] == 8
            assert row["num_output_images"] == 8
        text = format_report_text(report)
        assert "Interpolation Scheme" in text and "ours" in text

    def test_identical_distributions_fid_near_zero(self):
        seqs = [dummy_sequence(8, seed=i) for i in range(6)]
        ex = RandomProjectionExtractor(dim=4, seed=1)
        frames = [f for s in seqs for f in s.frames]
        feats = ex.extract(frames)
        assert abs(fid(feats, feats)) < 1e-6
