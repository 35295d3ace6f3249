"""Tests for matrix constructions and the truncation pipeline."""

import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from covspectrum.ensemble import (
    DataMatrix,
    MatrixShape,
    SeedSpec,
    gaussian,
    rademacher,
    sample_matrix,
    student_t,
    two_point,
    uniform_symmetric,
)
from covspectrum.errors import DegenerateInputError, ValidationError
from covspectrum.normalize import (
    CovarianceSpec,
    NormalizationParams,
    build_A,
    build_A1,
    build_B,
    build_S1,
    build_S2,
    covariance_from_json,
    default_delta,
    diagonal_cov,
    explicit_cov,
    identity_cov,
    recenter_rescale,
    sqrt_psd,
    toeplitz_cov,
    truncate,
    truncated_population_moments,
    truncation_pipeline,
)


def _as_matrix(rows):
    entries = np.array(rows, dtype=float)
    entries.setflags(write=False)
    return DataMatrix(shape=MatrixShape(*entries.shape), entries=entries)


def _brute_force_A(x):
    """Entrywise double-sum oracle for the normalized Gram matrix."""
    p, n = x.shape
    A = np.empty((p, p))
    for i in range(p):
        for j in range(p):
            acc = math.fsum(x[i, k] * x[j, k] for k in range(n))
            if i == j:
                acc -= n
            A[i, j] = acc / (2.0 * math.sqrt(n * p))
    return A


class TestBuildA:
    def test_single_zero_entry(self):
        A = build_A(_as_matrix([[0.0]]))
        assert A.shape == (1, 1)
        assert A[0, 0] == -0.5

    def test_row_of_ones_cancels_exactly(self):
        A = build_A(_as_matrix([[1.0, 1.0, 1.0, 1.0]]))
        assert A[0, 0] == 0.0

    def test_matches_brute_force_oracle(self):
        x = np.array([[1.0, -1.0, 1.0], [1.0, 1.0, -1.0]])
        np.testing.assert_allclose(build_A(x), _brute_force_A(x), atol=1e-14)
        rng = np.random.default_rng(42)
        for _ in range(10):
            x = rng.standard_normal((3, 7))
            np.testing.assert_allclose(build_A(x), _brute_force_A(x), atol=1e-12)

    def test_all_zero_matrix_scaling(self):
        p, n = 3, 12
        A = build_A(_as_matrix(np.zeros((p, n))))
        np.testing.assert_allclose(A, -0.5 * math.sqrt(n / p) * np.eye(p), atol=0)

    def test_exactly_symmetric(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((20, 100))
        A = build_A(x)
        assert np.array_equal(A, A.T)


class TestBuildB:
    def test_zero_diagonal(self):
        rng = np.random.default_rng(2)
        B = build_B(rng.standard_normal((6, 30)))
        assert np.all(np.diag(B) == 0.0)

    def test_p_equal_one_is_zero(self):
        B = build_B(_as_matrix([[1.0, 2.0, 3.0]]))
        assert np.array_equal(B, np.zeros((1, 1)))

    def test_difference_is_diagonal_of_row_sums(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((3, 5))
        D = build_A(x) - build_B(x)
        expect = np.diag((np.sum(x * x, axis=1) - 5) / (2.0 * math.sqrt(15)))
        np.testing.assert_allclose(D, expect, atol=1e-14)


class TestBuildS1:
    def test_identical_columns_vanish(self):
        col = np.array([1.0, -2.0, 0.5])
        x = np.tile(col[:, None], (1, 6))
        np.testing.assert_allclose(build_S1(x), np.zeros((3, 3)), atol=0)

    def test_two_point_row(self):
        S1 = build_S1(_as_matrix([[1.0, -1.0]]))
        assert S1[0, 0] == 1.0

    def test_matches_definitional_sum(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((3, 6))
        sbar = x.mean(axis=1)
        direct = sum(np.outer(x[:, j] - sbar, x[:, j] - sbar) for j in range(6)) / 6
        np.testing.assert_allclose(build_S1(x), direct, atol=1e-12)

    def test_psd_up_to_tolerance(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            S1 = build_S1(rng.standard_normal((8, 20)))
            assert np.linalg.eigvalsh(S1).min() >= -1e-12


class TestBuildA1:
    def test_identical_columns(self):
        A1 = build_A1(_as_matrix([[2.0, 2.0, 2.0, 2.0]]))
        assert A1[0, 0] == pytest.approx(-1.0, abs=1e-15)

    def test_rank_one_identity(self):
        # A - A1 = (1/2) sqrt(n/p) sbar sbar', a PSD rank-<=1 matrix
        rng = np.random.default_rng(6)
        for _ in range(10):
            x = rng.standard_normal((5, 40))
            p, n = x.shape
            sbar = x.mean(axis=1)
            gap = build_A(x) - build_A1(x)
            expect = 0.5 * math.sqrt(n / p) * np.outer(sbar, sbar)
            np.testing.assert_allclose(gap, expect, atol=1e-12)
            eigs = np.linalg.eigvalsh(gap)
            assert eigs.min() >= -1e-12
            assert np.sum(np.abs(eigs) > 1e-10) <= 1

    def test_zero_mean_columns_give_equal_matrices(self):
        # antisymmetric column pairs force sbar = 0 exactly
        rng = np.random.default_rng(7)
        half = rng.standard_normal((4, 9))
        x = np.concatenate([half, -half], axis=1)
        np.testing.assert_allclose(build_A1(x), build_A(x), atol=1e-13)


class TestDefaultDelta:
    def test_exact_power_of_two(self):
        assert default_delta(MatrixShape(2**28, 2**28)) == 2.0**-7

    def test_power_of_ten(self):
        shape = MatrixShape(10**4, 10**4)
        delta = default_delta(shape)
        assert delta == pytest.approx(0.1, rel=1e-14)
        # threshold = delta * (np)^{1/4} = (np)^{1/8} = 10 for np = 10^8
        assert delta * (10**8) ** 0.25 == pytest.approx(10.0, rel=1e-14)

    def test_monotonicity(self):
        d1 = default_delta(MatrixShape(100, 1000))
        d2 = default_delta(MatrixShape(100, 4000))
        assert d2 < d1
        thr1 = d1 * (100 * 1000) ** 0.25
        thr2 = d2 * (100 * 4000) ** 0.25
        assert thr2 > thr1


class TestTruncate:
    def test_no_op_below_threshold(self):
        X = _as_matrix([[0.5, -0.25], [0.1, 0.0]])
        out, report = truncate(X, delta=10.0)
        assert np.array_equal(out.entries, X.entries)
        assert report.fraction_truncated == 0.0

    def test_indicator_truncation_to_zero(self):
        # threshold = delta * (np)^{1/4} = 1 for p=1, n=2, delta = 2^{-1/4}
        X = _as_matrix([[10.0, 0.1]])
        out, report = truncate(X, delta=2.0**-0.25)
        assert report.threshold == pytest.approx(1.0, rel=1e-15)
        np.testing.assert_allclose(out.entries, [[0.0, 0.1]], atol=0)
        assert report.fraction_truncated == 0.5

    def test_gaussian_default_delta_truncates_almost_nothing(self):
        X = sample_matrix(gaussian(), MatrixShape(200, 20000), SeedSpec(123), 0)
        out, report = truncate(X, default_delta(X.shape))
        # threshold ~ 6.69 sd; the expected exceedance count is ~1e-4 entries
        assert report.fraction_truncated <= 1e-6

    def test_idempotent(self):
        X = sample_matrix(student_t(5), MatrixShape(50, 200), SeedSpec(8), 0)
        delta = 0.5
        once, r1 = truncate(X, delta)
        twice, r2 = truncate(once, delta)
        assert np.array_equal(once.entries, twice.entries)
        assert r2.fraction_truncated == 0.0

    def test_delta_validation(self):
        with pytest.raises(ValidationError):
            truncate(_as_matrix([[1.0]]), 0.0)


class TestRecenterRescale:
    def test_fixed_point_when_already_standardized(self):
        X = _as_matrix([[-1.0, 1.0]])
        out = recenter_rescale(X, "empirical")
        assert np.array_equal(out.entries, X.entries)

    def test_two_entry_example(self):
        out = recenter_rescale(_as_matrix([[1.0, 3.0]]), "empirical")
        np.testing.assert_allclose(out.entries, [[-1.0, 1.0]], atol=0)

    def test_empirical_exactness(self):
        X = sample_matrix(uniform_symmetric(), MatrixShape(30, 100), SeedSpec(10), 0)
        out = recenter_rescale(X, "empirical")
        assert abs(float(out.entries.mean())) <= 1e-15
        assert abs(float(out.entries.var() - 1.0)) <= 1e-12

    def test_degenerate_input(self):
        with pytest.raises(DegenerateInputError):
            recenter_rescale(_as_matrix([[2.0, 2.0], [2.0, 2.0]]), "empirical")

    def test_population_mode_needs_spec_and_threshold(self):
        X = _as_matrix([[0.1, -0.2]])
        with pytest.raises(ValidationError):
            recenter_rescale(X, "population")

    def test_population_gaussian_near_identity_at_default_threshold(self):
        thr = (200 * 20000) ** 0.125  # ~6.687
        center, scale = truncated_population_moments(gaussian(), thr)
        # closed-form oracle: E[X 1] = 0 by symmetry,
        # E[X^2 1{|X|<=t}] = erf(t/sqrt(2)) - 2 t phi(t)
        oracle_scale = math.sqrt(
            special.erf(thr / math.sqrt(2)) - 2 * thr * stats.norm.pdf(thr)
        )
        assert abs(center) <= 1e-9
        assert abs(scale - 1.0) <= 1e-9
        assert scale == pytest.approx(oracle_scale, abs=1e-12)


class TestTruncatedPopulationMoments:
    def test_student_t5_against_scipy_oracle(self):
        sd = math.sqrt(5.0 / 3.0)
        thr = 6.687
        m1_oracle, _ = integrate.quad(
            lambda x: x * stats.t.pdf(x * sd, 5) * sd, -thr, thr, limit=400
        )
        m2_oracle, _ = integrate.quad(
            lambda x: x * x * stats.t.pdf(x * sd, 5) * sd, -thr, thr, limit=400
        )
        center, scale = truncated_population_moments(student_t(5), thr)
        assert center == pytest.approx(m1_oracle, abs=1e-10)
        assert scale == pytest.approx(math.sqrt(m2_oracle - m1_oracle**2), abs=1e-10)

    def test_uniform_unaffected_beyond_support(self):
        center, scale = truncated_population_moments(uniform_symmetric(), 2.0)
        assert center == pytest.approx(0.0, abs=1e-12)
        assert scale == pytest.approx(1.0, abs=1e-10)

    def test_exponential_against_scipy_oracle(self):
        from covspectrum.ensemble import centered_exponential

        thr = 3.0
        m1_oracle, _ = integrate.quad(lambda x: x * stats.expon.pdf(x + 1), -1, thr)
        m2_oracle, _ = integrate.quad(lambda x: x * x * stats.expon.pdf(x + 1), -1, thr)
        center, scale = truncated_population_moments(centered_exponential(), thr)
        assert center == pytest.approx(m1_oracle, abs=1e-10)
        assert scale == pytest.approx(math.sqrt(m2_oracle - m1_oracle**2), abs=1e-10)

    def test_discrete_atoms_summed_exactly(self):
        center, scale = truncated_population_moments(rademacher(), 1.5)
        assert (center, scale) == (0.0, 1.0)
        spec = two_point(a=1.0, q=0.2)  # atoms at -0.5 and 2.0
        center, scale = truncated_population_moments(spec, 1.0)
        # only the -0.5 atom survives truncation at 1.0
        assert center == pytest.approx(0.8 * -0.5)
        with pytest.raises(DegenerateInputError):
            truncated_population_moments(spec, 0.4)  # every atom truncated


class TestPipeline:
    def test_empirical_pipeline_machine_precision(self):
        X = sample_matrix(student_t(5), MatrixShape(60, 400), SeedSpec(11), 0)
        out, report = truncation_pipeline(X, NormalizationParams())
        assert abs(report.post_mean) <= 1e-15
        assert abs(report.post_sigma2 - 1.0) <= 1e-12
        assert report.threshold == pytest.approx(default_delta(X.shape) * (60 * 400) ** 0.25)

    def test_population_pipeline(self):
        X = sample_matrix(gaussian(), MatrixShape(50, 500), SeedSpec(12), 0)
        params = NormalizationParams(recenter_mode="population")
        out, report = truncation_pipeline(X, params, spec=gaussian())
        # gaussian at this threshold: scale ~ 1 - 1e-5, so output is near input
        assert abs(report.post_mean) <= 0.05
        assert abs(report.post_sigma2 - 1.0) <= 0.1

    def test_explicit_delta_must_clear_one(self):
        X = sample_matrix(gaussian(), MatrixShape(4, 4), SeedSpec(0), 0)
        params = NormalizationParams(delta_mode="explicit", delta=0.01)
        with pytest.raises(ValidationError):
            truncation_pipeline(X, params)

    def test_params_validation(self):
        with pytest.raises(ValidationError):
            NormalizationParams(delta_mode="explicit")
        with pytest.raises(ValidationError):
            NormalizationParams(recenter_mode="mystery")


class TestSqrtPsd:
    def test_identity(self):
        assert np.array_equal(sqrt_psd(identity_cov(), 4), np.eye(4))

    def test_diagonal(self):
        root = sqrt_psd(diagonal_cov([4.0, 9.0]), 2)
        np.testing.assert_allclose(root, np.diag([2.0, 3.0]), atol=1e-14)

    def test_toeplitz_round_trip(self):
        sigma = toeplitz_cov(0.5).materialize(3)
        root = sqrt_psd(toeplitz_cov(0.5), 3)
        err = np.abs(np.linalg.eigvalsh(root @ root - sigma)).max()
        assert err <= 1e-10 * np.abs(np.linalg.eigvalsh(sigma)).max()

    def test_rejects_non_psd(self):
        with pytest.raises(ValidationError):
            sqrt_psd(np.array([[1.0, 2.0], [2.0, 1.0]]), 2)  # eigenvalue -1

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            sqrt_psd(diagonal_cov([1.0, 2.0]), 3)


class TestBuildS2:
    def test_identity_sigma_reduces_to_S1(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((4, 10))
        np.testing.assert_allclose(build_S2(x, identity_cov()), build_S1(x), atol=1e-15)

    def test_identical_columns_vanish(self):
        x = np.tile(np.array([1.0, 2.0])[:, None], (1, 5))
        np.testing.assert_allclose(build_S2(x, toeplitz_cov(0.5)), np.zeros((2, 2)), atol=1e-15)

    def test_matches_definitional_sum(self):
        rng = np.random.default_rng(14)
        x = rng.standard_normal((3, 8))
        root = sqrt_psd(toeplitz_cov(0.5), 3)
        y = root @ x
        ybar = y.mean(axis=1)
        direct = sum(np.outer(y[:, j] - ybar, y[:, j] - ybar) for j in range(8)) / 8
        np.testing.assert_allclose(build_S2(x, toeplitz_cov(0.5)), direct, atol=1e-12)

    def test_norm_factorization_property(self):
        rng = np.random.default_rng(15)
        sigma_spec = toeplitz_cov(0.6)
        for _ in range(10):
            x = rng.standard_normal((6, 30))
            sigma = sigma_spec.materialize(6)
            err = np.abs(np.linalg.eigvalsh(build_S2(x, sigma_spec) - sigma)).max()
            s1_dev = np.abs(np.linalg.eigvalsh(build_S1(x) - np.eye(6))).max()
            sig_norm = np.abs(np.linalg.eigvalsh(sigma)).max()
            assert err <= s1_dev * sig_norm + 1e-10

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            build_S2(np.zeros((3, 5)), explicit_cov(np.eye(2)))


class TestCovarianceSpecs:
    def test_json_round_trip(self):
        for spec in (identity_cov(), diagonal_cov([1.0, 2.0]), toeplitz_cov(0.5)):
            assert covariance_from_json(spec.to_json()) == spec

    def test_explicit_via_matrix_file(self, tmp_path):
        from covspectrum.ensemble import save_matrix

        X = sample_matrix(gaussian(), MatrixShape(3, 3), SeedSpec(1), 0)
        sigma = X.entries @ X.entries.T + np.eye(3)  # PSD
        entries = (sigma + sigma.T) / 2
        entries.setflags(write=False)
        path = tmp_path / "sigma.bin"
        save_matrix(DataMatrix(shape=MatrixShape(3, 3), entries=entries), path)
        spec = covariance_from_json({"kind": "explicit", "path": str(path)})
        np.testing.assert_allclose(spec.materialize(3), entries, atol=0)

    def test_validation(self):
        with pytest.raises(ValidationError):
            CovarianceSpec("toeplitz", rho=1.0)
        with pytest.raises(ValidationError):
            CovarianceSpec("diagonal", d=(-1.0,))
        with pytest.raises(ValidationError):
            covariance_from_json({"kind": "mystery"})
        with pytest.raises(ValidationError):
            covariance_from_json({"kind": "explicit"})
