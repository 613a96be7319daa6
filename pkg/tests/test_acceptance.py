"""Acceptance suite: one test per criterion, at the stated tolerances.

Each test prints a single summary line (visible with pytest -s, stored in the
captured output otherwise).  Budgets are asserted with wall-clock margins on
top of the statistical tolerances.  The adaptation sweep backing criteria 6
and 7 runs once as a shared fixture.
"""

import math
import time
from collections import Counter

import numpy as np
import pytest
from scipy import stats

from twostep_bayes import (
    App,
    AUDIT_TOL,
    ExperimentSpec,
    FactorMatrix,
    GridSpec,
    GSpec,
    RateSpec,
    SamplerConfig,
    StepFunction,
    TwoStepPrior,
    check_P1,
    contraction_sweep,
    default_config,
    delta_sq,
    enumerate_posterior,
    estimate_llr_mgf,
    estimate_P2_mass,
    model_weights,
    posterior_mean,
    reversibility_audit,
    run_rjmcmc,
    sample_data,
    sandwich_constants,
    state_key,
)
from twostep_bayes.theory_checks import test_error_decay as error_decay_report
from twostep_bayes.rng import stream


def _announce(k, label, elapsed, detail):
    print(f"criterion {k:>2} PASS  {label}: {detail}  [{elapsed:.1f}s]")


# ---------------------------------------------------------------------------
# 1. Gaussian MGF exactness


def test_criterion_01_gaussian_bernstein_exactness():
    t0 = time.perf_counter()
    n = 4
    exp = ExperimentSpec.gaussian(n)
    f0 = np.zeros(n)
    f1 = np.full(n, 0.5)  # n * l_n^2 = 1
    grid = [-1.0, -0.5, -0.25, 0.25, 0.5, 1.0]
    rep = estimate_llr_mgf(exp, f0, f1, grid, reps=10**5, seed=101)
    worst = 0.0
    for lam, est, se in zip(rep.lambda_grid, rep.empirical_log_mgf, rep.stderr):
        assert est == pytest.approx(lam**2 / 2, abs=3 * se)
        worst = max(worst, abs(est - lam**2 / 2) / se)
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    _announce(1, "Gaussian log-MGF = lambda^2/2", elapsed, f"worst z = {worst:.2f} (3 allowed)")


# ---------------------------------------------------------------------------
# 2. metric-KL sandwich


def test_criterion_02_metric_kl_sandwich():
    t0 = time.perf_counter()
    kinds = {
        "gaussian": ExperimentSpec.gaussian(16),
        "binary": ExperimentSpec.binary(16),
        "poisson": ExperimentSpec.poisson(16),
        "density": ExperimentSpec.density(),
        "time_series": ExperimentSpec.time_series(12),
        "covariance": ExperimentSpec.covariance(4),
    }
    intervals = {}
    for name, exp in kinds.items():
        n = exp.n if exp.n is not None else 16
        lo, hi = sandwich_constants(exp, n, pairs=100, seed=202)
        assert 0 < lo <= hi < math.inf, name
        intervals[name] = (lo, hi)
    glo, ghi = intervals["gaussian"]
    assert glo == pytest.approx(0.5, abs=1e-12)
    assert ghi == pytest.approx(0.5, abs=1e-12)
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    spread = ", ".join(f"{k}=[{a:.3g},{b:.3g}]" for k, (a, b) in intervals.items())
    _announce(2, "KL/n vs d_n^2 sandwich", elapsed, spread)


# ---------------------------------------------------------------------------
# 3. test-error decay


def test_criterion_03_error_decay():
    t0 = time.perf_counter()
    exp = ExperimentSpec.gaussian(8)
    rep = error_decay_report(exp, 0.0, 0.5, [8, 16, 32, 64], reps=10**4, seed=303)
    t1 = [t for t, b in zip(rep.type1, rep.below_resolution) if not b]
    t2 = [t for t, b in zip(rep.type2, rep.below_resolution) if not b]
    assert all(a > b for a, b in zip(t1, t1[1:])), rep.type1
    assert all(a > b for a, b in zip(t2, t2[1:])), rep.type2
    assert rep.decay_slope <= -0.01
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    _announce(3, "LRT error curves decay", elapsed,
              f"slope = {rep.decay_slope:.4f}, type1 = {rep.type1}")


# ---------------------------------------------------------------------------
# 4. sampler vs exact enumeration


def test_criterion_04_enumeration_equivalence():
    t0 = time.perf_counter()
    n = 4
    exp = ExperimentSpec.gaussian(n)
    f0 = StepFunction((0, 2), (0.0, 1.0))
    data = sample_data(exp, f0, n, seed=21)
    grid = GridSpec(tuple(np.linspace(-1.0, 1.5, 5)))
    prior = TwoStepPrior(RateSpec(App.ISO), 2)
    table = enumerate_posterior(exp, data, grid, prior)
    cfg = default_config(App.ISO, n_iter=210000, burn_in=10000, seed=404, level_grid=grid)
    chain = run_rjmcmc(App.ISO, exp, data, prior, cfg)

    counts = Counter(state_key(pt) for pt in chain.points())
    total = sum(counts.values())
    exact = table.as_dict()
    keys = set(counts) | set(exact)
    tv = 0.5 * sum(abs(counts.get(k, 0) / total - exact.get(k, 0.0)) for k in keys)
    assert tv < 0.05

    gap = float(np.max(np.abs(posterior_mean(chain, exp, data) - table.mean_fit(exp, n))))
    assert gap < 1e-2
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    _announce(4, "RJ-MCMC vs enumeration", elapsed, f"TV = {tv:.4f}, fit gap = {gap:.2e}")


# ---------------------------------------------------------------------------
# 5. prior-sampling correctness


def test_criterion_05_prior_recovery():
    t0 = time.perf_counter()
    n = 12
    exp = ExperimentSpec.gaussian(n)
    data = sample_data(exp, np.zeros(n), n, seed=1)
    prior = TwoStepPrior(RateSpec(App.ISO, K=1e-3), 2)
    weights = model_weights(prior, n)
    expected = np.array([weights[(1,)], weights[(2,)]])

    chi2_total = 0.0
    lows, highs = [], []
    for seed in range(10):
        cfg = SamplerConfig(
            n_iter=215000,
            burn_in=0,
            thin=10,
            seed=seed,
            move_probs={"birth": 0.15, "death": 0.15, "move": 0.1, "refresh": 0.6},
            prior_only=True,
        )
        chain = run_rjmcmc(App.ISO, exp, data, prior, cfg)
        counts = Counter(idx[0] for idx in chain.indices())
        total = counts[1] + counts[2]
        obs = np.array([counts[1], counts[2]], dtype=float)
        chi2_total += float(np.sum((obs - total * expected) ** 2 / (total * expected)))
        for pt in chain.points():
            if pt.m == 2:
                lows.append(pt.levels[0])
                highs.append(pt.levels[1])

    p_value = float(stats.chi2.sf(chi2_total, df=10))
    assert p_value > 0.01

    lows = np.asarray(lows)
    highs = np.asarray(highs)
    assert len(lows) >= 10**5
    ks_lo = stats.ks_1samp(lows, lambda x: 1 - (1 - stats.cauchy.cdf(x)) ** 2)
    ks_hi = stats.ks_1samp(highs, lambda x: stats.cauchy.cdf(x) ** 2)
    assert ks_lo.statistic < 0.02
    assert ks_hi.statistic < 0.02
    elapsed = time.perf_counter() - t0
    _announce(5, "prior-only chain recovery", elapsed,
              f"chi2 p = {p_value:.3f}, KS = ({ks_lo.statistic:.4f}, {ks_hi.statistic:.4f}) "
              f"on {len(lows)} m=2 draws")


# ---------------------------------------------------------------------------
# 6 + 7. adaptation sweeps (shared run)


N_GRID = (100, 200, 400, 800, 1600)
REPLICATIONS = 20


def _iso_cfg(n):
    n_iter = 12000 + 4 * n
    return default_config(App.ISO, n_iter=n_iter, burn_in=n_iter // 3)


@pytest.fixture(scope="module")
def two_piece_report():
    f0_for = lambda n: StepFunction((0, n // 2), (0.0, 2.0))
    return contraction_sweep(
        App.ISO, f0_for, N_GRID, REPLICATIONS,
        rate=RateSpec(App.ISO), m_max=25, seed=606, cfg_for=_iso_cfg,
    )


def test_criterion_06_adaptation_slopes(two_piece_report):
    t0 = time.perf_counter()
    slope2 = two_piece_report.slope
    assert -1.25 <= slope2 <= -0.70, two_piece_report.risks

    ramp_for = lambda n: StepFunction(
        tuple(range(n)), tuple((i + 0.5) / n for i in range(n))
    )
    ramp = contraction_sweep(
        App.ISO, ramp_for, N_GRID, REPLICATIONS,
        rate=RateSpec(App.ISO), m_max=25, seed=607, cfg_for=_iso_cfg,
    )
    assert -0.85 <= ramp.slope <= -0.50, ramp.risks
    elapsed = time.perf_counter() - t0
    assert elapsed < 1800.0
    _announce(6, "adaptation rate slopes", elapsed,
              f"two-piece slope = {slope2:.3f} in [-1.25,-0.70], "
              f"ramp slope = {ramp.slope:.3f} in [-0.85,-0.50]")


def test_criterion_07_model_concentration(two_piece_report):
    t0 = time.perf_counter()
    cap = math.ceil(4 * 2)  # C3 = 4 x true piece count 2
    cells = [c for c in two_piece_report.cells if c.n == 1600]
    assert len(cells) == REPLICATIONS
    masses = []
    for cell in cells:
        total = sum(cell.index_counts.values())
        beyond = sum(v for idx, v in cell.index_counts.items() if idx[0] > cap)
        masses.append(beyond / total)
    mean_mass = float(np.mean(masses))
    assert mean_mass < 0.1
    elapsed = time.perf_counter() - t0
    _announce(7, "posterior mass beyond 4x true index", elapsed,
              f"mean mass(m > {cap}) = {mean_mass:.4f} at n = 1600")


# ---------------------------------------------------------------------------
# 8. trace regression shape


def test_criterion_08_trace_contraction():
    t0 = time.perf_counter()
    m1 = m2 = 8
    truth = FactorMatrix(1.5 * np.eye(2, m1), 1.5 * np.eye(2, m2))

    def design_for(n, rng):
        return rng.standard_normal((n, m1, m2))

    report = contraction_sweep(
        App.TRACE,
        lambda n: truth,
        (256, 512, 1024, 2048),
        REPLICATIONS,
        rate=RateSpec(App.TRACE, m1=m1, m2=m2),
        m_max=6,
        seed=808,
        cfg_for=lambda n: default_config(App.TRACE, n_iter=6000, burn_in=2500),
        design_for=design_for,
    )
    assert -1.3 <= report.slope <= -0.7, report.risks
    top = max(report.histograms[-1].items(), key=lambda kv: kv[1])[0]
    assert top[0] in (2, 3, 4), report.histograms[-1]
    elapsed = time.perf_counter() - t0
    assert elapsed < 1800.0
    _announce(8, "trace-regression contraction", elapsed,
              f"slope = {report.slope:.3f} in [-1.3,-0.7], rank mode = {top[0]} at n = 2048")


# ---------------------------------------------------------------------------
# 9. (P1)/(P2) certification


def test_criterion_09_prior_conditions():
    t0 = time.perf_counter()
    n = 100
    setups = {
        "Iso": (RateSpec(App.ISO), 8),
        "Convex": (RateSpec(App.CONVEX, d=2), 8),
        "Trace": (RateSpec(App.TRACE, m1=6, m2=6), 6),
        "PartialLinear": (RateSpec(App.PARTIAL_LINEAR, p=20), (4, 4)),
    }
    for app, (rate, m_max) in setups.items():
        prior = TwoStepPrior(rate, m_max)
        weights = model_weights(prior, n)
        nds = {idx: n * delta_sq(rate, n, idx) for idx in weights}
        assert check_P1(weights, nds, h_frak=2), app

    prior = TwoStepPrior(RateSpec(App.ISO), 2)
    res = estimate_P2_mass(
        prior, 1, StepFunction((0,), (0.0,)), 0.1, n=10, reps=2 * 10**4, seed=909
    )
    want = 2 * math.atan(math.sqrt(0.1)) / math.pi
    assert res.passed
    assert res.estimate == pytest.approx(want, abs=3 * res.stderr)
    elapsed = time.perf_counter() - t0
    _announce(9, "(P1) all apps + (P2) Cauchy mass", elapsed,
              f"P2 estimate = {res.estimate:.5f} vs closed form {want:.5f} "
              f"(+/- {res.stderr:.5f})")


# ---------------------------------------------------------------------------
# 10. reversibility audit


def test_criterion_10_reversibility_audit():
    t0 = time.perf_counter()
    rng = stream(19, "audit-setup-acc")
    worsts = {}
    for app in (App.ISO, App.CONVEX, App.TRACE, App.PARTIAL_LINEAR):
        if app == App.ISO:
            n = 16
            exp = ExperimentSpec.gaussian(n)
            prior = TwoStepPrior(RateSpec(App.ISO), 4)
            f0 = StepFunction((0,), (0.0,))
        elif app == App.CONVEX:
            n = 16
            exp = ExperimentSpec.gaussian(n, design=rng.standard_normal((n, 2)))
            prior = TwoStepPrior(RateSpec(App.CONVEX, d=2), 3)
            f0 = np.zeros(n)
        elif app == App.TRACE:
            n = 24
            exp = ExperimentSpec.gaussian(n, design=rng.standard_normal((n, 3, 3)))
            prior = TwoStepPrior(RateSpec(App.TRACE, m1=3, m2=3), 2)
            f0 = FactorMatrix(np.full((1, 3), 0.3), np.full((1, 3), 0.3))
        else:
            n = 16
            exp = ExperimentSpec.gaussian(n, design=rng.standard_normal((n, 6)))
            prior = TwoStepPrior(RateSpec(App.PARTIAL_LINEAR, p=6), (3, 4))
            f0 = np.zeros(n)
        data = sample_data(exp, f0, n, seed=20)
        rep = reversibility_audit(app, exp, data, prior, n_states=1000, seed=1010)
        assert rep.passed, app
        assert rep.max_abs_log_error <= AUDIT_TOL, (app, rep.max_abs_log_error)
        worsts[app] = rep.max_abs_log_error
    elapsed = time.perf_counter() - t0
    detail = ", ".join(f"{a}={v:.2e}" for a, v in worsts.items())
    _announce(10, "forward/reverse bookkeeping", elapsed, detail)
