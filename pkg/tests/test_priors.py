"""Rate functions, model weights, within-model priors, best approximations."""

import math
from itertools import combinations

import numpy as np
import pytest
from scipy import stats

from twostep_bayes import (
    App,
    FactorMatrix,
    GSpec,
    RateSpec,
    StepFunction,
    TwoStepPrior,
    best_approx_iso,
    best_approx_rank,
    delta_sq,
    heavy_tail_ok,
    model_weights,
    pava,
    rip_estimate,
    sample_within_model,
    truncation_mass_report,
    within_model_log_density,
)
from twostep_bayes.errors import IndexOutOfRange, KindMismatch
from twostep_bayes.priors import exhaustive_best_iso_error, log_binom
from twostep_bayes.rng import stream


def _rate(app, **kw):
    defaults = {
        App.ISO: {},
        App.CONVEX: {"d": 2},
        App.TRACE: {"m1": 6, "m2": 6},
        App.PARTIAL_LINEAR: {"p": 20},
        App.COV_FACTOR: {"p": 20},
    }[app]
    defaults.update(kw)
    return RateSpec(app, **defaults)


# ---------------------------------------------------------------------------
# delta_sq


def test_delta_sq_iso_closed_form():
    got = delta_sq(RateSpec(App.ISO, K=1.0), 100, 2)
    assert got == pytest.approx(2 * math.log(100 * math.e) / 100, rel=1e-12)
    assert got == pytest.approx(0.11210340371976183, rel=1e-12)


def test_delta_sq_convex_closed_form():
    # d * log(n) * m * log(3m) / n at n = e, d = 2, m = 1
    got = delta_sq(RateSpec(App.CONVEX, K=1.0, d=2), math.e, 1)
    assert got == pytest.approx(2 * math.log(3.0) / math.e, rel=1e-12)


def test_delta_sq_strictly_increasing_in_m():
    for app in (App.ISO, App.CONVEX, App.TRACE):
        rate = _rate(app)
        n = 64
        upper = 6 if app != App.TRACE else min(rate.m1, rate.m2)
        for m in range(1, upper):
            assert delta_sq(rate, n, m) < delta_sq(rate, n, m + 1)
    rate = _rate(App.PARTIAL_LINEAR)
    for s, k in [(1, 1), (2, 3), (5, 2)]:
        assert delta_sq(rate, 64, (s, k)) < delta_sq(rate, 64, (s + 1, k))
        assert delta_sq(rate, 64, (s, k)) < delta_sq(rate, 64, (s, k + 1))


def test_delta_sq_guards():
    with pytest.raises(IndexOutOfRange):
        delta_sq(RateSpec(App.ISO), 10, 0)
    with pytest.raises(IndexOutOfRange):
        delta_sq(RateSpec(App.ISO), 10, 11)  # more pieces than design points
    with pytest.raises(IndexOutOfRange):
        delta_sq(_rate(App.TRACE), 10, 7)  # rank above min(m1, m2)
    with pytest.raises(IndexOutOfRange):
        delta_sq(_rate(App.PARTIAL_LINEAR), 10, 2)  # wrong index arity


# ---------------------------------------------------------------------------
# model weights


def test_model_weights_two_models():
    # K chosen so n delta^2 = (1, 2); temperature 2 gives softmax(-2, -4)
    n = 100
    rate = RateSpec(App.ISO, K=1.0 / math.log(n * math.e))
    prior = TwoStepPrior(rate, 2, temperature=2.0)
    w = model_weights(prior, n)
    assert w[(1,)] == pytest.approx(0.8807970779778823, rel=1e-10)
    assert w[(2,)] == pytest.approx(0.11920292202211756, rel=1e-10)


def test_model_weights_single_model():
    prior = TwoStepPrior(RateSpec(App.ISO), 1)
    w = model_weights(prior, 50)
    assert w == {(1,): pytest.approx(1.0)}


def test_model_weights_normalized_and_monotone():
    prior = TwoStepPrior(RateSpec(App.ISO), 8)
    w = model_weights(prior, 200)
    assert sum(w.values()) == pytest.approx(1.0, rel=1e-12)
    vals = [w[(m,)] for m in range(1, 9)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_model_weights_scale_free_for_single_model():
    # with one model the unnormalized weight changes with K and temperature
    # but the normalized table cannot
    for K, temp in [(0.5, 2.0), (3.0, 1.0), (1.0, 7.0)]:
        prior = TwoStepPrior(RateSpec(App.ISO, K=K), 1, temperature=temp)
        assert model_weights(prior, 33) == {(1,): pytest.approx(1.0)}


def test_truncation_mass_small_when_m_max_large():
    rate = RateSpec(App.ISO)
    small = truncation_mass_report(TwoStepPrior(rate, 12), 100)
    large = truncation_mass_report(TwoStepPrior(rate, 3), 100)
    assert 0 <= small < large < 1
    assert small < 1e-6


# ---------------------------------------------------------------------------
# g families


def test_g_logpdf_matches_scipy():
    x = np.linspace(-5, 5, 41)
    for family, dist in [
        ("cauchy", stats.cauchy(scale=1.7)),
        ("gaussian", stats.norm(scale=1.7)),
        ("laplace", stats.laplace(scale=1.7)),
    ]:
        g = GSpec(family, scale=1.7)
        np.testing.assert_allclose(g.logpdf(x), dist.logpdf(x), atol=1e-12)


def test_heavy_tail_classification():
    assert heavy_tail_ok(GSpec("cauchy"))
    assert not heavy_tail_ok(GSpec("gaussian"))
    assert not heavy_tail_ok(GSpec("laplace"))


def test_g_unknown_family_rejected():
    with pytest.raises(KindMismatch):
        GSpec("uniform")


# ---------------------------------------------------------------------------
# within-model sampling


def test_iso_draw_m_equals_n_uses_every_design_point():
    prior = TwoStepPrior(RateSpec(App.ISO), 6)
    f = sample_within_model(prior, 6, n=6, seed=3)
    assert f.change_indices == tuple(range(6))


def test_iso_draw_levels_sorted():
    prior = TwoStepPrior(RateSpec(App.ISO), 2)
    for seed in range(50):
        f = sample_within_model(prior, 2, n=10, seed=seed)
        assert f.levels[0] <= f.levels[1]
        assert 0 <= f.change_indices[0] < f.change_indices[1] < 10


def test_trace_rank_one_draw_is_outer_product():
    prior = TwoStepPrior(_rate(App.TRACE), 3)
    f = sample_within_model(prior, 1, seed=4)
    assert f.rank == 1
    A = f.matrix()
    # rank-1 structure: A = u v^T exactly
    np.testing.assert_allclose(A, np.outer(f.us[0], f.vs[0]), atol=1e-14)
    assert np.linalg.matrix_rank(A, tol=1e-10) <= 1


def test_partial_linear_draw_structure():
    prior = TwoStepPrior(_rate(App.PARTIAL_LINEAR), (5, 4))
    for seed in range(20):
        f = sample_within_model(prior, (3, 2), n=15, seed=seed)
        assert f.s == 3 and len(f.beta) == 3
        assert all(0 <= j < 20 for j in f.support)
        assert f.support == tuple(sorted(set(f.support)))
        assert f.step.m == 2


def test_same_seed_same_draw():
    prior = TwoStepPrior(RateSpec(App.ISO), 4)
    a = sample_within_model(prior, 3, n=12, seed=9)
    b = sample_within_model(prior, 3, n=12, seed=9)
    assert a == b


# ---------------------------------------------------------------------------
# within-model density


def test_iso_density_m1_closed_form():
    n = 7
    prior = TwoStepPrior(RateSpec(App.ISO), 4)
    f = StepFunction((2,), (0.0,))
    got = within_model_log_density(prior, f, n=n)
    assert got == pytest.approx(math.log(1 / math.pi) - math.log(n), rel=1e-12)


def test_iso_density_rejects_decreasing_levels():
    prior = TwoStepPrior(RateSpec(App.ISO), 4)
    # the StepFunction constructor refuses unsorted levels, so pass raw parts
    assert within_model_log_density(prior, ((0, 3), (1.0, 0.0)), n=8) == -math.inf


def test_iso_density_integrates_to_one():
    # importance sampling against a wider Cauchy proposal with known density;
    # weights are bounded so the estimator is well behaved
    n, m = 10, 2
    prior = TwoStepPrior(RateSpec(App.ISO), m)
    rng = stream(123, "is-check")
    reps = 4 * 10**4
    q = stats.cauchy(scale=2.0)
    idx_sets = list(combinations(range(n), m))
    which = rng.integers(len(idx_sets), size=reps)
    levels = np.sort(q.rvs(size=(reps, m), random_state=rng), axis=1)
    log_q = (
        -math.log(len(idx_sets)) + math.lgamma(m + 1) + q.logpdf(levels).sum(axis=1)
    )
    log_w = np.array(
        [
            within_model_log_density(prior, (idx_sets[which[i]], tuple(levels[i])), n=n)
            for i in range(reps)
        ]
    ) - log_q
    w = np.exp(log_w)
    se = w.std(ddof=1) / math.sqrt(reps)
    assert w.mean() == pytest.approx(1.0, abs=3 * se)
    assert w.std(ddof=1) / w.mean() < 1.0  # bounded-weight sanity
    assert se / w.mean() < 0.05


def test_trace_density_is_sum_of_factor_logpdfs():
    prior = TwoStepPrior(_rate(App.TRACE), 2)
    f = sample_within_model(prior, 2, seed=1)
    g = prior.g
    want = float(np.sum(g.logpdf(f.us)) + np.sum(g.logpdf(f.vs)))
    assert within_model_log_density(prior, f) == pytest.approx(want, rel=1e-12)


# ---------------------------------------------------------------------------
# isotonic best approximation


def test_pava_projects_onto_monotone_cone():
    rng = np.random.default_rng(5)
    for _ in range(30):
        y = rng.standard_normal(int(rng.integers(2, 15)))
        vals, wts, starts = pava(y)
        fit = np.repeat(vals, np.diff(np.append(starts, len(y))))
        assert np.all(np.diff(fit) >= -1e-12)
        # idempotence: projecting the projection changes nothing
        vals2, _, starts2 = pava(fit)
        fit2 = np.repeat(vals2, np.diff(np.append(starts2, len(y))))
        np.testing.assert_allclose(fit2, fit, atol=1e-12)


def test_best_approx_iso_two_blocks():
    f, err = best_approx_iso((1.0, 2.0, 3.0, 4.0), 2)
    assert err == pytest.approx(0.25, rel=1e-12)
    assert f.levels == pytest.approx((1.5, 3.5))


def test_best_approx_iso_edge_cases():
    y = (0.5, 1.0, 2.5)
    f, err = best_approx_iso(y, 3)  # m = n interpolates a monotone target
    assert err == pytest.approx(0.0, abs=1e-15)
    f1, err1 = best_approx_iso(y, 1)
    assert f1.levels == pytest.approx((np.mean(y),))
    assert err1 == pytest.approx(np.var(y), rel=1e-12)


def test_best_approx_iso_matches_exhaustive():
    rng = np.random.default_rng(6)
    for _ in range(40):
        n = int(rng.integers(2, 11))
        m = int(rng.integers(1, min(5, n + 1)))
        y = rng.standard_normal(n)
        _, err = best_approx_iso(y, m)
        want = exhaustive_best_iso_error(y, m)
        assert err == pytest.approx(want, rel=1e-9, abs=1e-12)


def test_best_approx_iso_error_nonincreasing_in_m():
    y = np.random.default_rng(7).standard_normal(12)
    errs = [best_approx_iso(y, m)[1] for m in range(1, 7)]
    assert all(a >= b - 1e-12 for a, b in zip(errs, errs[1:]))


# ---------------------------------------------------------------------------
# low-rank best approximation


def test_best_approx_rank_exact_recovery():
    rng = np.random.default_rng(8)
    A = np.outer(rng.standard_normal(5), rng.standard_normal(4))
    f, err = best_approx_rank(A, 1)
    assert err == pytest.approx(0.0, abs=1e-20)
    np.testing.assert_allclose(f.matrix(), A, atol=1e-12)


def test_best_approx_rank_zero_and_diag():
    A = np.diag([3.0, 1.0])
    _, err0 = best_approx_rank(A, 0)
    assert err0 == pytest.approx(float(np.sum(A**2)), rel=1e-12)
    _, err1 = best_approx_rank(A, 1)
    assert err1 == pytest.approx(1.0, rel=1e-12)


# ---------------------------------------------------------------------------
# restricted isometry probe


def test_rip_full_observation_design():
    m1 = m2 = 3
    design = np.zeros((m1 * m2, m1, m2))
    for i in range(m1 * m2):
        design[i, i // m2, i % m2] = 1.0
    lo, hi = rip_estimate(design, 2, reps=200, seed=0)
    want = 1.0 / math.sqrt(m1 * m2)
    assert lo == pytest.approx(want, rel=1e-12)
    assert hi == pytest.approx(want, rel=1e-12)


def test_rip_scales_linearly_with_design():
    rng = np.random.default_rng(9)
    design = rng.standard_normal((30, 4, 4))
    lo1, hi1 = rip_estimate(design, 1, reps=100, seed=1)
    lo2, hi2 = rip_estimate(2 * design, 1, reps=100, seed=1)
    assert lo2 == pytest.approx(2 * lo1, rel=1e-12)
    assert hi2 == pytest.approx(2 * hi1, rel=1e-12)


def test_rip_gaussian_ensemble_bounded_away_from_zero():
    rng = np.random.default_rng(10)
    design = rng.standard_normal((512, 8, 8))
    lo, hi = rip_estimate(design, 1, reps=300, seed=2)
    assert lo > 0.0
    assert hi > lo


# ---------------------------------------------------------------------------
# small helpers


def test_log_binom_matches_comb():
    for n in range(1, 15):
        for k in range(n + 1):
            assert log_binom(n, k) == pytest.approx(math.log(math.comb(n, k)), rel=1e-12)
