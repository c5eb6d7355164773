import numpy as np
import pytest
from scipy import stats

from momcs.generator import forward, random_generator
from momcs.sensing import (
    CorruptionSpec,
    Gaussian,
    NoiseSpec,
    StudentT,
    apply_paper_corruption,
    load_problem,
    parse_ensemble,
    sample_measurement_matrix,
    save_problem,
    split_validation,
    synthesize,
)
from momcs.theory_lab import estimate_moment_ratio


@pytest.fixture(scope="module")
def net():
    return random_generator([5, 20, 50], seed=0)


@pytest.fixture(scope="module")
def z_star():
    return np.random.default_rng(0).standard_normal(5)


class TestMeasurementMatrix:
    def test_gaussian_variance(self):
        A = sample_measurement_matrix(2000, 50, Gaussian(), seed=1)
        assert 0.93 <= A.var() <= 1.07

    def test_student_t_variance_and_kurtosis(self):
        A = sample_measurement_matrix(2000, 50, StudentT(4), seed=1)
        assert 0.9 <= A.var() <= 1.1
        assert stats.kurtosis(A.ravel(), fisher=False) > 3

    def test_deterministic(self):
        a = sample_measurement_matrix(30, 7, StudentT(4), seed=9)
        b = sample_measurement_matrix(30, 7, StudentT(4), seed=9)
        assert a.tobytes() == b.tobytes()

    def test_dof_must_exceed_two(self):
        with pytest.raises(ValueError):
            StudentT(2)
        with pytest.raises(ValueError):
            StudentT(1.5)

    def test_student_t_matches_reference_distribution(self):
        # unit-variance rescaling of t(5): compare with scipy's t CDF
        x = sample_measurement_matrix(20000, 1, StudentT(5), seed=3).ravel()
        scale = np.sqrt(3 / 5)
        assert stats.kstest(x, stats.t(df=5, scale=scale).cdf).pvalue > 1e-3

    def test_parse_ensemble(self):
        assert parse_ensemble("gaussian") == Gaussian()
        assert parse_ensemble("student_t(4)") == StudentT(4)
        assert parse_ensemble("t3") == StudentT(3)
        assert parse_ensemble(StudentT(4).tag()) == StudentT(4)
        with pytest.raises(ValueError):
            parse_ensemble("cauchy")


class TestSynthesize:
    def test_clean_residual_has_std_sigma(self, net, z_star):
        p = synthesize(net, z_star, 5000, Gaussian(), NoiseSpec(Gaussian(), 0.5), seed=2)
        assert p.corrupted_rows.size == 0
        resid = p.y - p.A @ forward(net, z_star)
        assert abs(resid.var() / 0.25 - 1) < 0.1

    def test_clean_rows_heavy_tailed_noise(self, net, z_star):
        p = synthesize(net, z_star, 20000, StudentT(4), NoiseSpec(StudentT(3), 1.0), epsilon=0.02, seed=2)
        clean = np.setdiff1d(np.arange(p.m), p.corrupted_rows)
        resid = p.y[clean] - p.A[clean] @ p.x_star
        # t(3) has no fourth moment, so the sample variance converges slowly
        assert abs(resid.var() - 1) < 0.25
        assert abs(np.median(np.abs(resid)) / np.sqrt(1 / 3) - stats.t(3).ppf(0.75)) < 0.05

    def test_noiseless_identity(self, net, z_star):
        p = synthesize(net, z_star, 300, Gaussian(), NoiseSpec(Gaussian(), 0.0), seed=4)
        np.testing.assert_array_equal(p.y, p.A @ forward(net, z_star))

    def test_exact_corruption_count(self, net, z_star):
        p = synthesize(net, z_star, 1000, StudentT(4), NoiseSpec(StudentT(3), 1.0), epsilon=0.02, seed=5)
        assert p.corrupted_rows.size == 20
        assert np.unique(p.corrupted_rows).size == 20

    def test_corruption_count_floors(self, net, z_star):
        p = synthesize(net, z_star, 99, Gaussian(), epsilon=0.05, seed=5)
        assert p.corrupted_rows.size == 4

    def test_corrupted_rows_follow_rule(self, net, z_star):
        p = synthesize(net, z_star, 500, Gaussian(), NoiseSpec(Gaussian(), 0.1), epsilon=0.04, seed=6)
        assert np.all(p.y[p.corrupted_rows] == -1)
        assert set(np.unique(p.A[p.corrupted_rows])) <= {-1.0, 1.0}

    def test_uncorrupted_rows_unchanged_by_epsilon(self, net, z_star):
        clean = synthesize(net, z_star, 400, Gaussian(), NoiseSpec(Gaussian(), 0.1), epsilon=0.0, seed=8)
        dirty = synthesize(net, z_star, 400, Gaussian(), NoiseSpec(Gaussian(), 0.1), epsilon=0.05, seed=8)
        keep = np.setdiff1d(np.arange(400), dirty.corrupted_rows)
        np.testing.assert_array_equal(clean.A[keep], dirty.A[keep])
        np.testing.assert_array_equal(clean.y[keep], dirty.y[keep])

    def test_y_only_and_A_only(self, net, z_star):
        base = synthesize(net, z_star, 200, Gaussian(), epsilon=0.0, seed=1)
        y_only = synthesize(net, z_star, 200, Gaussian(), epsilon=0.1, corruption=CorruptionSpec("y"), seed=1)
        rows = y_only.corrupted_rows
        np.testing.assert_array_equal(y_only.A, base.A)
        assert np.all(y_only.y[rows] == -1)
        a_only = synthesize(net, z_star, 200, Gaussian(), epsilon=0.1, corruption=CorruptionSpec("A"), seed=1)
        np.testing.assert_array_equal(a_only.y, base.y)
        assert set(np.unique(a_only.A[a_only.corrupted_rows])) <= {-1.0, 1.0}

    def test_callback(self, net, z_star):
        def huge(A, y, rows, rng):
            y[rows] = 1e6

        p = synthesize(net, z_star, 100, Gaussian(), epsilon=0.1, corruption=CorruptionSpec(callback=huge), seed=0)
        assert np.all(p.y[p.corrupted_rows] == 1e6)

    def test_deterministic(self, net, z_star):
        a = synthesize(net, z_star, 300, StudentT(4), NoiseSpec(StudentT(3), 1.0), epsilon=0.02, seed=11)
        b = synthesize(net, z_star, 300, StudentT(4), NoiseSpec(StudentT(3), 1.0), epsilon=0.02, seed=11)
        assert a.A.tobytes() == b.A.tobytes()
        assert a.y.tobytes() == b.y.tobytes()
        np.testing.assert_array_equal(a.corrupted_rows, b.corrupted_rows)

    def test_epsilon_must_be_below_one(self, net, z_star):
        with pytest.raises(ValueError):
            synthesize(net, z_star, 10, epsilon=1.0)
        with pytest.raises(ValueError):
            synthesize(net, z_star, 10, epsilon=-0.1)

    def test_latent_dimension_checked(self, net):
        with pytest.raises(ValueError):
            synthesize(net, np.zeros(4), 10)


class TestApplyCorruption:
    def test_empty_rows_leave_problem_unchanged(self):
        A = np.arange(12.0).reshape(4, 3)
        y = np.arange(4.0)
        A0, y0 = A.copy(), y.copy()
        apply_paper_corruption(A, y, [], np.random.default_rng(0))
        np.testing.assert_array_equal(A, A0)
        np.testing.assert_array_equal(y, y0)

    def test_rows_overwritten(self):
        A = np.zeros((6, 40))
        y = np.ones(6)
        apply_paper_corruption(A, y, [1, 4], np.random.default_rng(0))
        assert np.all(y[[1, 4]] == -1)
        assert np.all(np.abs(A[[1, 4]]) == 1)
        assert np.all(A[[0, 2, 3, 5]] == 0)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            apply_paper_corruption(np.zeros((3, 2)), np.zeros(3), [3], np.random.default_rng(0))


class TestMoments:
    def test_fourth_moment_ratio_bounded_for_student_t(self):
        rows = sample_measurement_matrix(50000, 20, StudentT(4), seed=0)
        assert estimate_moment_ratio(rows, directions=200, seed=1) <= 4


class TestSerialization:
    def test_round_trip(self, tmp_path, net, z_star):
        p = synthesize(net, z_star, 100, StudentT(4), NoiseSpec(StudentT(3), 0.3), epsilon=0.05, seed=3)
        save_problem(p, tmp_path / "prob")
        q = load_problem(tmp_path / "prob")
        np.testing.assert_array_equal(p.A, q.A)
        np.testing.assert_array_equal(p.y, q.y)
        np.testing.assert_array_equal(p.z_star, q.z_star)
        np.testing.assert_array_equal(p.corrupted_rows, q.corrupted_rows)
        assert q.ensemble == StudentT(4) and q.noise == p.noise
        assert (q.sigma, q.epsilon, q.seed) == (0.3, 0.05, 3)

    def test_metadata_keys(self, tmp_path, net, z_star):
        import json

        save_problem(synthesize(net, z_star, 20, seed=1), tmp_path / "p")
        meta = json.loads((tmp_path / "p" / "meta.json").read_text())
        assert {"m", "n", "sigma", "epsilon", "ensemble", "seed", "corrupted_rows"} <= set(meta)


class TestSplit:
    def test_validation_split_keeps_bookkeeping(self, net, z_star):
        p = synthesize(net, z_star, 1000, Gaussian(), epsilon=0.02, seed=3)
        train, val = split_validation(p, 200, seed=0)
        assert train.m == 800 and val.m == 200
        assert train.corrupted_rows.size + val.corrupted_rows.size == 20
        assert np.all(val.y[val.corrupted_rows] == -1)
        assert np.all(train.y[train.corrupted_rows] == -1)
