"""Monte Carlo and brute-force checks of the framework's structural conditions.

Covers: the Bernstein MGF envelope for centered log-likelihood ratios, the
metric/KL sandwich, the likelihood-ratio test and its error decay, greedy
covering-number upper bounds, and the two prior-mass conditions (first-step
weight floor/tail, second-step small-ball mass).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy.special import logsumexp

from .errors import (
    DegenerateHypotheses,
    DomainError,
    EmptyCloud,
    InsufficientGrid,
    NonFiniteEstimate,
    UnnormalizedWeights,
    UnsupportedKind,
)
from .experiments import (
    Dataset,
    ExperimentKind,
    ExperimentSpec,
    intrinsic_metric_sq,
    kl_divergence,
    log_likelihood,
    toeplitz_cov,
    _cov_sigma,
    _density_f,
    _signal,
    _ts_g,
)
from .priors import TwoStepPrior, delta_sq, index_lt, sample_within_model
from .rng import stream

__all__ = [
    "psi",
    "BernsteinReport",
    "TestErrorReport",
    "P2MassResult",
    "estimate_llr_mgf",
    "lr_test",
    "lr_test_threshold",
    "default_test_constant",
    "effective_c5",
    "test_error_decay",
    "greedy_covering_upper_bound",
    "check_P1",
    "estimate_P2_mass",
    "sandwich_constants",
    "kind_constants",
    "random_constrained_pair",
    "llr_samples",
]

N_MOM_BLOCKS = 16


def _effective_n(exp: ExperimentSpec) -> int:
    """Sample count for kinds whose spec fixes no n (density, covariance)."""
    return exp.n if exp.n is not None else 64


def psi(v: float, c: float, lam: float) -> float:
    """Bernstein function v*lam^2 / (2*(1 - c*|lam|)); domain |lam| < 1/c."""
    if v < 0 or c < 0:
        raise DomainError("psi needs v >= 0 and c >= 0")
    if c * abs(lam) >= 1:
        raise DomainError(f"psi undefined at c*|lambda| = {c * abs(lam):.4g} >= 1")
    return v * lam * lam / (2.0 * (1.0 - c * abs(lam)))


# ---------------------------------------------------------------------------
# sandwich constants per kind


@dataclass(frozen=True)
class KindConstants:
    """Default (c1, c2, c3) for thresholds; c2/c3 exact only for Gaussian.

    Non-Gaussian entries are conservative analytic bounds used for default
    test thresholds; measured values come from sandwich_constants.
    """

    c1: float
    c2: float
    c3: float


def kind_constants(exp: ExperimentSpec) -> KindConstants:
    k = exp.kind
    if k is ExperimentKind.GAUSSIAN_REG:
        return KindConstants(1.0, 0.5, 0.5)
    if k is ExperimentKind.BINARY_REG:
        return KindConstants(1.0, 2.0, 1.0 / (exp.eta * (1 - exp.eta)))
    if k is ExperimentKind.POISSON_REG:
        M = exp.M
        return KindConstants(1.0, 1.0 / (2 * M**3), M**3 / 2)
    if k is ExperimentKind.DENSITY_EST:
        return KindConstants(1.0, 2.0, 64.0)
    if k in (ExperimentKind.GAUSS_TIME_SERIES, ExperimentKind.COVARIANCE_EST):
        L = exp.L if exp.L is not None else 4.0
        return KindConstants(1.0, 1.0 / (2 * L**6), L**6 / 2)
    raise UnsupportedKind(k.value)


def effective_c5(exp: ExperimentSpec, c5: float = 0.25) -> float:
    """Cap the probe-ball constant at c2/(16 c3); larger radii break the
    type-II guarantee (the worst probe's mean log-ratio crosses the test
    threshold)."""
    kc = kind_constants(exp)
    return min(c5, kc.c2 / (16.0 * kc.c3))


# ---------------------------------------------------------------------------
# vectorized LLR sampling


def llr_samples(exp: ExperimentSpec, f_gen, f0, f1, reps: int, rng) -> np.ndarray:
    """reps draws of log(p_{f0}/p_{f1})(X) with X generated under f_gen."""
    k = exp.kind
    if k is ExperimentKind.GAUSSIAN_REG:
        tg, t0, t1 = _signal(exp, f_gen), _signal(exp, f0), _signal(exp, f1)
        y = tg + rng.standard_normal((reps, exp.n))
        return 0.5 * np.sum((y - t1) ** 2 - (y - t0) ** 2, axis=1)
    if k is ExperimentKind.BINARY_REG:
        tg, t0, t1 = _signal(exp, f_gen), _signal(exp, f0), _signal(exp, f1)
        x = (rng.random((reps, exp.n)) < tg).astype(float)
        a = np.log(t0 / t1)
        b = np.log((1 - t0) / (1 - t1))
        return x @ a + (1 - x) @ b
    if k is ExperimentKind.POISSON_REG:
        tg, t0, t1 = _signal(exp, f_gen), _signal(exp, f0), _signal(exp, f1)
        x = rng.poisson(tg, size=(reps, exp.n)).astype(float)
        return x @ np.log(t0 / t1) + np.sum(t1 - t0)
    if k is ExperimentKind.DENSITY_EST:
        grid = exp.density_grid()
        fg, f0v, f1v = _density_f(exp, f_gen), _density_f(exp, f0), _density_f(exp, f1)
        cdf = np.concatenate([[0.0], np.cumsum((fg[1:] + fg[:-1]) / 2 * np.diff(grid))])
        cdf /= cdf[-1]
        n = _effective_n(exp)
        x = np.interp(rng.random((reps, n)), cdf, grid)
        diff = np.log(f0v) - np.log(f1v)
        return np.sum(np.interp(x, grid, diff), axis=1)
    if k is ExperimentKind.GAUSS_TIME_SERIES:
        n = exp.n
        Tg = toeplitz_cov(_ts_g(exp, f_gen), n, exp.quad_n)
        T0 = toeplitz_cov(_ts_g(exp, f0), n, exp.quad_n)
        T1 = toeplitz_cov(_ts_g(exp, f1), n, exp.quad_n)
        Lg = np.linalg.cholesky(Tg)
        x = Lg @ rng.standard_normal((n, reps))
        c0 = sla.cho_factor(T0, lower=True)
        c1f = sla.cho_factor(T1, lower=True)
        q0 = np.sum(x * sla.cho_solve(c0, x), axis=0)
        q1 = np.sum(x * sla.cho_solve(c1f, x), axis=0)
        ld0 = 2 * np.sum(np.log(np.diag(c0[0])))
        ld1 = 2 * np.sum(np.log(np.diag(c1f[0])))
        return -0.5 * (q0 - q1) - 0.5 * (ld0 - ld1)
    if k is ExperimentKind.COVARIANCE_EST:
        Sg, S0, S1 = _cov_sigma(exp, f_gen), _cov_sigma(exp, f0), _cov_sigma(exp, f1)
        n = _effective_n(exp)
        p = Sg.shape[0]
        cg = np.linalg.cholesky(Sg)
        X = rng.standard_normal((reps, n, p)) @ cg.T
        D = np.linalg.inv(S0) - np.linalg.inv(S1)
        quad = np.einsum("rnp,pq,rnq->r", X, D, X)
        _, ld0 = np.linalg.slogdet(S0)
        _, ld1 = np.linalg.slogdet(S1)
        return -0.5 * quad - 0.5 * n * (ld0 - ld1)
    raise UnsupportedKind(f"no vectorized LLR sampler for {k.value}")


# ---------------------------------------------------------------------------
# Bernstein envelope


@dataclass(frozen=True)
class BernsteinReport:
    kind: str
    lambda_grid: tuple[float, ...]
    empirical_log_mgf: tuple[float, ...]
    stderr: tuple[float, ...]
    plain_log_mgf: tuple[float, ...]
    envelope: tuple[float, ...]
    finite: tuple[bool, ...]
    c1: float
    kappa_g: float
    kappa_gamma: float
    fitted_kappa_g: float
    n_dsq: float
    reps: int
    passed: bool
    margin: float


def _envelope_constants(exp: ExperimentSpec, f0, f1) -> tuple[float, float, float]:
    """(c1, v, c) such that log E exp(lam (LLR - E LLR)) <= log c1 + psi(v, c, lam).

    Taken from the per-kind MGF computations: exact for Gaussian; Hoeffding
    variance proxy for binary; Bennett-style (v, c) for Poisson and density;
    eigenvalue chi-square bounds for time series and covariance.
    """
    k = exp.kind
    if k is ExperimentKind.GAUSSIAN_REG:
        t0, t1 = _signal(exp, f0), _signal(exp, f1)
        return 1.0, float(np.sum((t0 - t1) ** 2)), 0.0
    if k is ExperimentKind.BINARY_REG:
        t0, t1 = _signal(exp, f0), _signal(exp, f1)
        t = np.log(t0 * (1 - t1) / ((1 - t0) * t1))
        return 1.0, float(np.sum(t**2) / 4.0), 0.0
    if k is ExperimentKind.POISSON_REG:
        t0, t1 = _signal(exp, f0), _signal(exp, f1)
        t = np.log(t0 / t1)
        return 1.0, float(np.sum(t0 * t**2)), float(np.max(np.abs(t)) / 3.0)
    if k is ExperimentKind.DENSITY_EST:
        grid = exp.density_grid()
        f0v, f1v = _density_f(exp, f0), _density_f(exp, f1)
        h = np.log(f0v) - np.log(f1v)
        mean = np.trapezoid(f0v * h, grid)
        var = np.trapezoid(f0v * (h - mean) ** 2, grid)
        n = _effective_n(exp)
        return 1.0, float(n * var), float(np.max(np.abs(h - mean)) / 3.0)
    if k in (ExperimentKind.GAUSS_TIME_SERIES, ExperimentKind.COVARIANCE_EST):
        if k is ExperimentKind.GAUSS_TIME_SERIES:
            S0 = toeplitz_cov(_ts_g(exp, f0), exp.n, exp.quad_n)
            S1 = toeplitz_cov(_ts_g(exp, f1), exp.n, exp.quad_n)
            mult = 1
        else:
            S0, S1 = _cov_sigma(exp, f0), _cov_sigma(exp, f1)
            mult = _effective_n(exp)
        # centered LLR = (1/2) sum_i a_i (z_i^2 - 1), a = eig(S0 S1^{-1}) - 1
        a = np.linalg.eigvals(np.linalg.solve(S1, S0)).real - 1.0
        return 1.0, float(mult * 0.5 * np.sum(a**2)), float(np.max(np.abs(a)))
    raise UnsupportedKind(k.value)


def estimate_llr_mgf(
    exp: ExperimentSpec, f0, f1, lambda_grid, reps: int, seed: int
) -> BernsteinReport:
    """Median-of-means estimate of the centered LLR's log-MGF vs its envelope."""
    if reps < N_MOM_BLOCKS:
        raise NonFiniteEstimate(f"reps must be >= {N_MOM_BLOCKS}")
    lam_grid = [float(l) for l in lambda_grid]
    c1, v, c = _envelope_constants(exp, f0, f1)
    for lam in lam_grid:
        if c * abs(lam) >= 1:
            raise DomainError(f"grid point {lam} outside the envelope domain (1/kappa_gamma)")
    n_eff = _effective_n(exp)
    dsq = intrinsic_metric_sq(exp, f0, f1)
    if dsq <= 0:
        raise DegenerateHypotheses("f0 = f1")
    kl = kl_divergence(exp, f0, f1, n_eff)
    rng = stream(seed, "mgf", exp.kind.value)
    centered = llr_samples(exp, f0, f0, f1, reps, rng) - kl

    block = reps // N_MOM_BLOCKS
    trimmed = centered[: block * N_MOM_BLOCKS].reshape(N_MOM_BLOCKS, block)
    est, se, plain, finite = [], [], [], []
    for lam in lam_grid:
        if lam == 0.0:
            est.append(0.0)
            se.append(0.0)
            plain.append(0.0)
            finite.append(True)
            continue
        block_log_means = logsumexp(lam * trimmed, axis=1) - math.log(block)
        e = float(np.median(block_log_means))
        # asymptotic stderr of a median of N_MOM_BLOCKS block log-means
        s = float(1.2533 * np.std(block_log_means, ddof=1) / math.sqrt(N_MOM_BLOCKS))
        est.append(e)
        se.append(s)
        plain.append(float(logsumexp(lam * centered) - math.log(reps)))
        finite.append(bool(np.isfinite(e)))

    env = [psi(v, c, lam) + math.log(c1) for lam in lam_grid]
    kappa_g = v / (n_eff * dsq)
    fitted = 0.0
    for lam, e, ok in zip(lam_grid, est, finite):
        if lam == 0.0 or not ok:
            continue
        need = (e - math.log(c1)) * 2.0 * (1.0 - c * abs(lam)) / (n_eff * dsq * lam * lam)
        fitted = max(fitted, need)
    passed = all(
        ok and e <= ev + 2 * s for e, s, ev, ok in zip(est, se, env, finite)
    )
    margin = min(ev - e for e, ev in zip(est, env)) if est else math.nan
    return BernsteinReport(
        kind=exp.kind.value,
        lambda_grid=tuple(lam_grid),
        empirical_log_mgf=tuple(est),
        stderr=tuple(se),
        plain_log_mgf=tuple(plain),
        envelope=tuple(env),
        finite=tuple(finite),
        c1=c1,
        kappa_g=kappa_g,
        kappa_gamma=c,
        fitted_kappa_g=fitted,
        n_dsq=float(n_eff * dsq),
        reps=reps,
        passed=passed,
        margin=float(margin),
    )


# ---------------------------------------------------------------------------
# likelihood-ratio test and decay


def default_test_constant(exp: ExperimentSpec, c5: float = 0.25) -> float:
    kc = kind_constants(exp)
    return 2.0 * kc.c3 * effective_c5(exp, c5)


def lr_test_threshold(exp: ExperimentSpec, f0, f1, c: float | None = None, n: int | None = None) -> float:
    """The rejection threshold -c n d_n^2(f0, f1); linear in n for fixed f0, f1."""
    dsq = intrinsic_metric_sq(exp, f0, f1)
    if dsq <= 0:
        raise DegenerateHypotheses("threshold needs d_n^2(f0, f1) > 0")
    if c is None:
        c = default_test_constant(exp)
    if c <= 0:
        raise DomainError("test constant c must be positive")
    if n is None:
        n = _effective_n(exp)
    return -c * n * dsq


def lr_test(exp: ExperimentSpec, f0, f1, data: Dataset, c: float | None = None) -> bool:
    """True = reject f0: log(p_{f0}/p_{f1})(data) <= -c n d^2 (boundary rejects)."""
    llr = log_likelihood(exp, f0, data) - log_likelihood(exp, f1, data)
    return bool(llr <= lr_test_threshold(exp, f0, f1, c, n=data.n))


@dataclass(frozen=True)
class TestErrorReport:
    n_grid: tuple[int, ...]
    n_dsq: tuple[float, ...]
    type1: tuple[float, ...]
    type2: tuple[float, ...]
    below_resolution: tuple[bool, ...]
    c: float
    c5: float
    reps: int
    probes: int
    decay_slope: float
    passed: bool


def _resize_signal(f, n: int) -> np.ndarray:
    if np.isscalar(f):
        return np.full(n, float(f))
    arr = np.asarray(f, dtype=float)
    return np.resize(arr, n)


def _spawn_exp(exp: ExperimentSpec, n: int) -> ExperimentSpec:
    k = exp.kind
    if k is ExperimentKind.GAUSSIAN_REG:
        return ExperimentSpec.gaussian(n)
    if k is ExperimentKind.BINARY_REG:
        return ExperimentSpec.binary(n, exp.eta)
    if k is ExperimentKind.POISSON_REG:
        return ExperimentSpec.poisson(n, exp.M)
    raise UnsupportedKind(f"error-decay probes are defined for signal kinds, not {k.value}")


def _probe_points(exp_n, t1, t0, c5_eff, dsq, k_probes, rng):
    """Points in the c5-ball around f1 (intrinsic metric), constraint-respecting.

    Probe 0 sits on the ball boundary in the direction of f0 (the hardest
    alternative for the test); the rest are random directions.  The reported
    type-II rate is the max over the probe set.
    """
    n = exp_n.n
    lo, hi = -math.inf, math.inf
    if exp_n.kind is ExperimentKind.BINARY_REG:
        lo, hi = exp_n.eta, 1 - exp_n.eta
    elif exp_n.kind is ExperimentKind.POISSON_REG:
        lo, hi = 1 / exp_n.M, exp_n.M

    def clip_into_ball(probe):
        probe = np.clip(probe, lo, hi)
        # clipping can push the point outside the ball; shrink toward t1 if so
        for _ in range(40):
            if np.mean((probe - t1) ** 2) <= c5_eff * dsq + 1e-15:
                break
            probe = t1 + 0.9 * (probe - t1)
        return probe

    toward = (t0 - t1) / math.sqrt(np.mean((t0 - t1) ** 2))
    out = [clip_into_ball(t1 + math.sqrt(c5_eff * dsq) * toward)]
    for _ in range(k_probes - 1):
        u = rng.standard_normal(n)
        u /= math.sqrt(np.mean(u**2))
        rho = rng.random() ** (1.0 / n)        # radius factor, denser near the shell
        out.append(clip_into_ball(t1 + rho * math.sqrt(c5_eff * dsq) * u))
    return out


def test_error_decay(
    exp: ExperimentSpec,
    f0,
    f1,
    n_grid,
    reps: int,
    seed: int,
    c5: float = 0.25,
    probes: int = 32,
    c: float | None = None,
) -> TestErrorReport:
    """Type-I/II error curves of lr_test along n_grid and their decay slope."""
    ns = [int(v) for v in n_grid]
    if len(ns) < 3 or any(b <= a for a, b in zip(ns, ns[1:])):
        raise InsufficientGrid("n_grid must be increasing with >= 3 points")
    c5_eff = effective_c5(exp, c5)
    if c is None:
        c = 2.0 * kind_constants(exp).c3 * c5_eff
    t1_list, t2_list, ndsq_list, below = [], [], [], []
    for j, n in enumerate(ns):
        exp_n = _spawn_exp(exp, n)
        t0 = _resize_signal(f0, n)
        t1 = _resize_signal(f1, n)
        dsq = intrinsic_metric_sq(exp_n, t0, t1)
        if dsq <= 0:
            raise DegenerateHypotheses("f0 = f1 after resizing")
        thresh = -c * n * dsq
        rng = stream(seed, "decay", j)
        llr0 = llr_samples(exp_n, t0, t0, t1, reps, rng)
        type1 = float(np.mean(llr0 <= thresh))
        worst = 0.0
        for i, probe in enumerate(_probe_points(exp_n, t1, t0, c5_eff, dsq, probes, rng)):
            llr_f = llr_samples(exp_n, probe, t0, t1, reps, stream(seed, "decay", j, "probe", i))
            worst = max(worst, float(np.mean(llr_f > thresh)))
        t1_list.append(type1)
        t2_list.append(worst)
        ndsq_list.append(n * dsq)
        below.append(type1 == 0.0 and worst == 0.0)
    xs = [x for x, b in zip(ndsq_list, below) if not b]
    ys = [
        math.log(max(a, b, 1.0 / reps))
        for a, b, skip in zip(t1_list, t2_list, below)
        if not skip
    ]
    slope = float(np.polyfit(xs, ys, 1)[0]) if len(xs) >= 2 else math.nan
    passed = bool(np.isfinite(slope) and slope <= -0.01)
    return TestErrorReport(
        n_grid=tuple(ns),
        n_dsq=tuple(float(v) for v in ndsq_list),
        type1=tuple(t1_list),
        type2=tuple(t2_list),
        below_resolution=tuple(below),
        c=float(c),
        c5=float(c5_eff),
        reps=reps,
        probes=probes,
        decay_slope=slope,
        passed=passed,
    )


# ---------------------------------------------------------------------------
# covering numbers


def greedy_covering_upper_bound(point_cloud, eps: float, metric) -> int:
    """Size of a greedy eps-net over the cloud (upper-bounds the covering number)."""
    pts = list(point_cloud)
    if not pts:
        raise EmptyCloud("covering bound needs at least one point")
    if eps <= 0:
        raise DomainError("eps must be positive")
    centers = []
    for p in pts:
        if all(metric(p, q) > eps for q in centers):
            centers.append(p)
    return len(centers)


# ---------------------------------------------------------------------------
# prior-mass conditions


def check_P1(weights: dict, n_delta_sq: dict, h_frak: int = 2) -> bool:
    """First-step condition: weight floor and geometric tail beyond h*m.

    weights maps model index tuples to normalized weights; n_delta_sq maps
    the same indices to n * delta^2_{n,m}.  The tail sum runs over indices
    strictly larger than h_frak * m in every coordinate.
    """
    if h_frak < 1:
        raise DomainError("h_frak must be >= 1")
    idx = {k if isinstance(k, tuple) else (k,): v for k, v in weights.items()}
    nds = {k if isinstance(k, tuple) else (k,): v for k, v in n_delta_sq.items()}
    if set(idx) != set(nds):
        raise UnnormalizedWeights("weights and n_delta_sq must share the same index set")
    total = sum(idx.values())
    if abs(total - 1.0) > 1e-12:
        raise UnnormalizedWeights(f"weights sum to {total!r}, expected 1")
    for m, w in idx.items():
        if w < 0.5 * math.exp(-2.0 * nds[m]):
            return False
        hm = tuple(h_frak * mi for mi in m)
        tail = sum(v for k, v in idx.items() if index_lt(hm, k))
        if tail > 2.0 * math.exp(-nds[m]):
            return False
    return True


@dataclass(frozen=True)
class P2MassResult:
    estimate: float
    stderr: float
    passed: bool
    threshold: float
    note: str = ""


def estimate_P2_mass(
    prior: TwoStepPrior,
    m,
    center,
    radius_sq: float,
    n: int,
    reps: int,
    seed: int,
    dist_sq=None,
    n_delta_sq: float | None = None,
) -> P2MassResult:
    """MC mass of the within-model prior ball {d^2(f, center) <= radius_sq}.

    dist_sq defaults to l_n^2 between fitted values on n design points (step
    functions / sparse-plus-step); pass a callable f -> d^2(f, center) for
    other geometries.  One-sided pass: estimate + 2 stderr >= exp(-2 n delta^2).
    """
    if radius_sq < 0:
        raise DomainError("radius_sq must be >= 0")
    if n_delta_sq is None:
        n_delta_sq = n * delta_sq(prior.rate, n, m)
    if dist_sq is None:
        center_vals = center.values(n)

        def dist_sq(f):
            return float(np.mean((f.values(n) - center_vals) ** 2))

    rng = stream(seed, "p2mass")
    hits = 0
    for _ in range(reps):
        f = sample_within_model(prior, m, n=n, seed=rng)
        if dist_sq(f) <= radius_sq:
            hits += 1
    est = hits / reps
    se = math.sqrt(est * (1 - est) / reps)
    threshold = math.exp(-2.0 * n_delta_sq)
    passed = est + 2 * se >= threshold
    note = ""
    if hits == 0:
        passed = False
        note = "inconclusive at resolution"
    return P2MassResult(float(est), float(se), bool(passed), float(threshold), note)


# ---------------------------------------------------------------------------
# metric/KL sandwich measurement


def random_constrained_pair(exp: ExperimentSpec, rng) -> tuple:
    """A random valid (f0, f1) pair for the experiment kind."""
    k = exp.kind
    if k is ExperimentKind.GAUSSIAN_REG:
        return rng.standard_normal(exp.n), rng.standard_normal(exp.n)
    if k is ExperimentKind.BINARY_REG:
        lo, hi = exp.eta, 1 - exp.eta
        return rng.uniform(lo, hi, exp.n), rng.uniform(lo, hi, exp.n)
    if k is ExperimentKind.POISSON_REG:
        lo, hi = 1 / exp.M, exp.M
        return rng.uniform(lo, hi, exp.n), rng.uniform(lo, hi, exp.n)
    if k is ExperimentKind.DENSITY_EST:
        grid = exp.density_grid()

        def tilt():
            a, b, c = rng.uniform(-1, 1, 3)
            return a * np.cos(np.pi * grid) + b * np.sin(2 * np.pi * grid) + c * grid

        return tilt(), tilt()
    if k is ExperimentKind.GAUSS_AUTOREG:
        M = exp.M

        def draw():
            a = rng.uniform(-M / 2, M / 2)
            b = rng.uniform(-M / 2, M / 2)
            return lambda x, a=a, b=b: a * np.tanh(x) + b

        return draw(), draw()
    if k is ExperimentKind.GAUSS_TIME_SERIES:

        def spec():
            a, b, c = rng.uniform(-0.5, 0.5, 3)
            return lambda lam, a=a, b=b, c=c: a * np.cos(lam) + b * np.cos(2 * lam) + c

        return spec(), spec()
    if k is ExperimentKind.COVARIANCE_EST:

        def cov():
            Q, _ = np.linalg.qr(rng.standard_normal((exp.p, exp.p)))
            ev = rng.uniform(max(1 / exp.L, 0.4), min(exp.L, 2.5), exp.p)
            return Q @ np.diag(ev) @ Q.T

        return cov(), cov()
    raise UnsupportedKind(k.value)


def sandwich_constants(
    exp: ExperimentSpec, n: int, pairs: int, seed: int
) -> tuple[float, float]:
    """Measured (min, max) of (KL/n) / d_n^2 over random constrained pairs."""
    rng = stream(seed, "sandwich", exp.kind.value)
    ratios = []
    for _ in range(pairs):
        f0, f1 = random_constrained_pair(exp, rng)
        dsq = intrinsic_metric_sq(exp, f0, f1)
        if dsq <= 1e-14:
            continue
        ratios.append(kl_divergence(exp, f0, f1, n) / n / dsq)
    if not ratios:
        raise DegenerateHypotheses("all sampled pairs were degenerate")
    return float(min(ratios)), float(max(ratios))
