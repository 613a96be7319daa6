"""Likelihoods, divergences, intrinsic metrics, Toeplitz covariances, sampling."""

import math

import numpy as np
import pytest

from twostep_bayes import (
    Dataset,
    ExperimentKind,
    ExperimentSpec,
    dataset_from_csv,
    dataset_to_csv,
    intrinsic_metric_sq,
    kl_divergence,
    log_likelihood,
    sample_data,
    toeplitz_cov,
)
from twostep_bayes.errors import LengthMismatch, UnsupportedKind


# ---------------------------------------------------------------------------
# log_likelihood


def test_gaussian_loglik_zero_residuals():
    exp = ExperimentSpec.gaussian(2)
    ds = Dataset(ExperimentKind.GAUSSIAN_REG, 2, np.zeros(2))
    assert log_likelihood(exp, np.zeros(2), ds) == 0.0


def test_poisson_loglik_closed_form():
    # log P(Y=0 | theta=1) = log(e^-1 * 1^0 / 0!) = -1
    exp = ExperimentSpec.poisson(1)
    ds = Dataset(ExperimentKind.POISSON_REG, 1, np.array([0.0]))
    assert log_likelihood(exp, np.array([1.0]), ds) == pytest.approx(-1.0, rel=1e-12)


def test_binary_loglik_closed_form():
    exp = ExperimentSpec.binary(1)
    ds = Dataset(ExperimentKind.BINARY_REG, 1, np.array([1.0]))
    got = log_likelihood(exp, np.array([0.5]), ds)
    assert got == pytest.approx(math.log(0.5), rel=1e-12)


def test_gaussian_loglik_is_negative_half_sse():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(1, 30))
        y = rng.standard_normal(n)
        theta = rng.standard_normal(n)
        exp = ExperimentSpec.gaussian(n)
        ds = Dataset(ExperimentKind.GAUSSIAN_REG, n, y)
        want = -0.5 * float(np.sum((y - theta) ** 2))
        assert log_likelihood(exp, theta, ds) == pytest.approx(want, rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------------------
# kl_divergence


def test_kl_zero_at_equal_parameters():
    exp = ExperimentSpec.gaussian(3)
    theta = np.array([0.1, -0.2, 0.4])
    assert kl_divergence(exp, theta, theta, 3) == 0.0
    expc = ExperimentSpec.covariance(2)
    S = np.array([[1.0, 0.2], [0.2, 1.0]])
    assert kl_divergence(expc, S, S, 5) == pytest.approx(0.0, abs=1e-12)


def test_kl_gaussian_closed_form():
    exp = ExperimentSpec.gaussian(2)
    got = kl_divergence(exp, np.zeros(2), np.ones(2), 2)
    assert got == pytest.approx(1.0, rel=1e-12)


def test_kl_covariance_closed_form():
    # KL(N(0,2) || N(0,1)) = (2 - 1 + log(1/2)) / 2
    exp = ExperimentSpec.covariance(1)
    got = kl_divergence(exp, np.array([[2.0]]), np.array([[1.0]]), 1)
    assert got == pytest.approx(0.5 * (1.0 + math.log(0.5)), rel=1e-12)


def test_kl_poisson_closed_form():
    exp = ExperimentSpec.poisson(1)
    got = kl_divergence(exp, np.array([2.0]), np.array([1.0]), 1)
    assert got == pytest.approx(2 * math.log(2) - 1, rel=1e-12)


def test_kl_autoreg_unsupported():
    exp = ExperimentSpec.autoreg()
    with pytest.raises(UnsupportedKind):
        kl_divergence(exp, lambda x: 0 * x, lambda x: 0 * x + 0.1, 10)


def test_kl_nonnegative_random_pairs():
    rng = np.random.default_rng(1)
    for _ in range(25):
        n = int(rng.integers(1, 12))
        exp = ExperimentSpec.gaussian(n)
        t0, t1 = rng.standard_normal(n), rng.standard_normal(n)
        assert kl_divergence(exp, t0, t1, n) >= 0.0


# ---------------------------------------------------------------------------
# intrinsic_metric_sq


def test_metric_l2_mean_convention():
    exp = ExperimentSpec.gaussian(2)
    got = intrinsic_metric_sq(exp, np.array([1.0, 3.0]), np.array([1.0, 1.0]))
    assert got == pytest.approx(2.0, rel=1e-12)


def test_metric_autoreg_constant_offset():
    # mixture base measure has unit mass, so a constant gap delta gives delta^2
    exp = ExperimentSpec.autoreg()
    delta = 0.37
    f0 = lambda x: np.full_like(np.asarray(x, dtype=float), delta)
    f1 = lambda x: np.zeros_like(np.asarray(x, dtype=float))
    assert intrinsic_metric_sq(exp, f0, f1) == pytest.approx(delta**2, rel=1e-10)


def test_metric_time_series_constant_spectra():
    # constant spectral densities c0, c1: T_n is 2*pi*c*I, D_n^2 = 4 pi^2 (c0-c1)^2
    c0, c1 = 1.4, 0.8
    exp = ExperimentSpec.time_series(6)
    got = intrinsic_metric_sq(exp, math.log(c0), math.log(c1))
    assert got == pytest.approx(4 * math.pi**2 * (c0 - c1) ** 2, rel=1e-9)


def test_metric_covariance_is_squared_frobenius():
    exp = ExperimentSpec.covariance(2)
    S0 = np.array([[1.0, 0.0], [0.0, 1.0]])
    S1 = np.array([[1.5, 0.1], [0.1, 0.9]])
    assert intrinsic_metric_sq(exp, S0, S1) == pytest.approx(
        float(np.sum((S0 - S1) ** 2)), rel=1e-12
    )


def test_metric_symmetric_and_zero_on_diagonal():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(1, 10))
        exp = ExperimentSpec.gaussian(n)
        t0, t1 = rng.standard_normal(n), rng.standard_normal(n)
        d01 = intrinsic_metric_sq(exp, t0, t1)
        d10 = intrinsic_metric_sq(exp, t1, t0)
        assert d01 == pytest.approx(d10, rel=1e-12)
        assert intrinsic_metric_sq(exp, t0, t0) == 0.0


# ---------------------------------------------------------------------------
# toeplitz_cov


def test_toeplitz_flat_log_spectrum_is_scaled_identity():
    T = toeplitz_cov(0.0, 4)
    np.testing.assert_allclose(T, 2 * math.pi * np.eye(4), atol=1e-10)


def test_toeplitz_single_lag_is_spectral_integral():
    g = lambda lam: 0.3 * np.cos(lam)
    lam = np.linspace(-math.pi, math.pi, 20001)
    want = np.trapezoid(np.exp(g(lam)), lam)
    T = toeplitz_cov(g, 1)
    assert T.shape == (1, 1)
    assert T[0, 0] == pytest.approx(want, rel=1e-6)


def test_toeplitz_structure_constant_diagonals():
    g = lambda lam: 0.2 * np.cos(lam) - 0.1 * np.cos(2 * lam)
    T = toeplitz_cov(g, 5)
    for k in range(4):
        for l in range(4):
            assert T[k, l] == pytest.approx(T[k + 1, l + 1], rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(T, T.T, atol=1e-12)


# ---------------------------------------------------------------------------
# sample_data


def test_gaussian_sample_mean_clt_band():
    n = 10**5
    exp = ExperimentSpec.gaussian(n)
    ds = sample_data(exp, np.zeros(n), n, seed=11)
    assert abs(ds.values.mean()) < 4.0 / math.sqrt(n)


def test_poisson_sample_mean_clt_band():
    n = 10**5
    exp = ExperimentSpec.poisson(n)
    ds = sample_data(exp, np.full(n, 3.0), n, seed=12)
    assert abs(ds.values.mean() - 3.0) < 4.0 * math.sqrt(3.0 / n)


def test_same_seed_same_dataset():
    for kind, exp, f0 in [
        ("gauss", ExperimentSpec.gaussian(50), np.linspace(0, 1, 50)),
        ("pois", ExperimentSpec.poisson(50), np.full(50, 2.0)),
        ("bin", ExperimentSpec.binary(50), np.full(50, 0.4)),
    ]:
        a = sample_data(exp, f0, 50, seed=77)
        b = sample_data(exp, f0, 50, seed=77)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.seed == b.seed == 77


def test_different_seeds_differ():
    exp = ExperimentSpec.gaussian(50)
    a = sample_data(exp, np.zeros(50), 50, seed=1)
    b = sample_data(exp, np.zeros(50), 50, seed=2)
    assert not np.array_equal(a.values, b.values)


def test_dataset_length_guard():
    with pytest.raises(LengthMismatch):
        Dataset(ExperimentKind.GAUSSIAN_REG, 3, np.zeros(2))


# ---------------------------------------------------------------------------
# CSV round trip


def test_csv_round_trip(tmp_path):
    n = 40
    exp = ExperimentSpec.gaussian(n)
    ds = sample_data(exp, np.linspace(-1, 1, n), n, seed=5)
    path = tmp_path / "data.csv"
    dataset_to_csv(ds, path)
    back = dataset_from_csv(path)
    assert back.kind == ds.kind
    assert back.n == ds.n
    np.testing.assert_array_equal(back.values, ds.values)


def test_csv_round_trip_matrix_values(tmp_path):
    # covariance observations are vectors per row; shape must survive
    p, n = 3, 20
    exp = ExperimentSpec.covariance(p)
    S = np.eye(p) * 1.5
    ds = sample_data(exp, S, n, seed=9)
    path = tmp_path / "cov.csv"
    dataset_to_csv(ds, path)
    back = dataset_from_csv(path)
    assert back.values.shape == ds.values.shape
    np.testing.assert_array_equal(back.values, ds.values)


def test_csv_malformed_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("y\n1.0\nnope\n")
    (tmp_path / "bad.json").write_text('{"kind": "GaussianReg", "n": 2, "seed": 0}')
    with pytest.raises(Exception, match="line 3"):
        dataset_from_csv(path)
