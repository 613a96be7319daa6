"""Two-step priors: rate functions, model weights, within-model laws.

The first step places weights lam_{n,m} proportional to
exp(-temperature * n * delta^2_{n,m}) over a truncated model lattice; the
second step draws the within-model parameter from products of a symmetric
base density g (standard Cauchy by default).  Rate functions delta^2_{n,m}
carry each application's complexity-over-n shape with all unnamed theory
constants folded into a single multiplier K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import (
    IndexOutOfRange,
    KindMismatch,
    SupportTooLarge,
    TooManyPieces,
)
from .params import FactorMatrix, MaxAffine, SparsePlusStep, StepFunction
from .rng import stream

__all__ = [
    "App",
    "RateSpec",
    "GSpec",
    "TwoStepPrior",
    "delta_sq",
    "model_weights",
    "log_model_weights",
    "sample_within_model",
    "within_model_log_density",
    "best_approx_iso",
    "best_approx_rank",
    "rip_estimate",
    "heavy_tail_ok",
    "log_binom",
    "index_leq",
    "index_lt",
    "pava",
]


class App:
    TRACE = "Trace"
    ISO = "Iso"
    CONVEX = "Convex"
    PARTIAL_LINEAR = "PartialLinear"
    COV_FACTOR = "CovFactor"

    ALL = (TRACE, ISO, CONVEX, PARTIAL_LINEAR, COV_FACTOR)


def log_binom(n: int, k: int) -> float:
    if k < 0 or k > n:
        return -math.inf
    return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def index_leq(a: tuple, b: tuple) -> bool:
    """Componentwise partial order a <= b."""
    return all(x <= y for x, y in zip(a, b, strict=True))


def index_lt(a: tuple, b: tuple) -> bool:
    """Strict partial order: every coordinate strictly smaller."""
    return all(x < y for x, y in zip(a, b, strict=True))


@dataclass(frozen=True)
class RateSpec:
    """delta^2_{n,m} = K * complexity(m) / n for one application."""

    app: str
    K: float = 1.0
    m1: int | None = None      # trace row dimension
    m2: int | None = None      # trace column dimension
    d: int | None = None       # convex input dimension
    p: int | None = None       # partially linear / covariance ambient dimension

    def __post_init__(self):
        if self.app not in App.ALL:
            raise KindMismatch(f"unknown application {self.app!r}")
        if self.K <= 0:
            raise KindMismatch("K must be positive")
        if self.app == App.TRACE:
            if not (self.m1 and self.m2):
                raise KindMismatch("trace rate needs m1, m2")
            if max(self.m1, self.m2) < 2:
                raise KindMismatch("trace rate needs max(m1, m2) >= 2 (log m-bar > 0)")
        if self.app == App.CONVEX and not self.d:
            raise KindMismatch("convex rate needs the input dimension d")
        if self.app in (App.PARTIAL_LINEAR, App.COV_FACTOR) and not self.p:
            raise KindMismatch(f"{self.app} rate needs the ambient dimension p")

    @property
    def q(self) -> int:
        return 2 if self.app in (App.PARTIAL_LINEAR, App.COV_FACTOR) else 1


def _as_index(m) -> tuple[int, ...]:
    if isinstance(m, (int, np.integer)):
        return (int(m),)
    return tuple(int(v) for v in m)


def delta_sq(rate: RateSpec, n, m) -> float:
    """Rate function at sample size n and model index m (int or tuple)."""
    idx = _as_index(m)
    if len(idx) != rate.q:
        raise IndexOutOfRange(f"{rate.app} expects a {rate.q}-coordinate index, got {idx}")
    if any(v < 1 for v in idx):
        raise IndexOutOfRange(f"model index must be >= 1 per coordinate, got {idx}")
    if n < 2:
        raise IndexOutOfRange("rate functions need n >= 2")
    K = rate.K
    if rate.app == App.TRACE:
        (r,) = idx
        if r > min(rate.m1, rate.m2):
            raise IndexOutOfRange(f"rank {r} exceeds min(m1, m2)")
        return K * (rate.m1 + rate.m2) * r * math.log(max(rate.m1, rate.m2)) / n
    if rate.app == App.ISO:
        (k,) = idx
        if k > n:
            raise IndexOutOfRange(f"piece count {k} exceeds n={n}")
        return K * k * math.log(math.e * n) / n
    if rate.app == App.CONVEX:
        (k,) = idx
        return K * rate.d * math.log(n) * k * math.log(3 * k) / n
    if rate.app == App.PARTIAL_LINEAR:
        s, k = idx
        if s > rate.p:
            raise IndexOutOfRange(f"support size {s} exceeds p={rate.p}")
        if k > n:
            raise IndexOutOfRange(f"piece count {k} exceeds n={n}")
        return K * (s * math.log(math.e * rate.p) + k * math.log(math.e * n)) / n
    # CovFactor: index (k, s) = (factors, per-factor sparsity)
    k, s = idx
    if s > rate.p:
        raise IndexOutOfRange(f"sparsity {s} exceeds p={rate.p}")
    return K * k * s * math.log(math.e * rate.p) / n


# ---------------------------------------------------------------------------
# base density g


@dataclass(frozen=True)
class GSpec:
    """Symmetric base density, nonincreasing on (0, inf)."""

    family: str = "cauchy"
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in ("cauchy", "gaussian", "laplace"):
            raise KindMismatch(f"unknown g family {self.family!r}")
        if self.scale <= 0:
            raise KindMismatch("g scale must be positive")

    def logpdf(self, x):
        z = np.asarray(x, dtype=float) / self.scale
        if self.family == "cauchy":
            val = -np.log(np.pi) - np.log1p(z**2)
        elif self.family == "gaussian":
            val = -0.5 * z**2 - 0.5 * math.log(2 * math.pi)
        else:
            val = -np.abs(z) - math.log(2.0)
        return val - math.log(self.scale)

    def sample(self, rng: np.random.Generator, size=None):
        if self.family == "cauchy":
            out = rng.standard_cauchy(size)
        elif self.family == "gaussian":
            out = rng.standard_normal(size)
        else:
            out = rng.laplace(0.0, 1.0, size)
        return out * self.scale


def heavy_tail_ok(g: GSpec, alpha: float = 2.0, probe=(10.0, 1e2, 1e3, 1e4), floor: float = 1e-6) -> bool:
    """Probe-grid check of liminf x^alpha g(x) > 0 (Cauchy passes, Gaussian/Laplace fail)."""
    x = np.asarray(probe, dtype=float)
    vals = x**alpha * np.exp(g.logpdf(x))
    return bool(np.all(vals > floor))


# ---------------------------------------------------------------------------
# two-step prior


@dataclass(frozen=True)
class TwoStepPrior:
    rate: RateSpec
    m_max: tuple[int, ...] | int
    g: GSpec = GSpec()
    temperature: float = 2.0

    def __post_init__(self):
        caps = _as_index(self.m_max)
        if len(caps) != self.rate.q:
            raise IndexOutOfRange(
                f"m_max needs {self.rate.q} coordinates for {self.rate.app}, got {caps}"
            )
        if any(c < 1 for c in caps):
            raise IndexOutOfRange("m_max coordinates must be >= 1")
        object.__setattr__(self, "m_max", caps)
        if self.temperature <= 0:
            raise KindMismatch("temperature must be positive")

    def index_set(self) -> list[tuple[int, ...]]:
        if self.rate.q == 1:
            return [(m,) for m in range(1, self.m_max[0] + 1)]
        a, b = self.m_max
        return [(i, j) for i in range(1, a + 1) for j in range(1, b + 1)]


def log_model_weights(prior: TwoStepPrior, n) -> dict[tuple[int, ...], float]:
    idx = prior.index_set()
    raw = np.array([-prior.temperature * n * delta_sq(prior.rate, n, m) for m in idx])
    logw = raw - logsumexp(raw)
    return dict(zip(idx, logw))


def model_weights(prior: TwoStepPrior, n) -> dict[tuple[int, ...], float]:
    """Normalized first-step weights over the truncated index set."""
    return {m: float(np.exp(lw)) for m, lw in log_model_weights(prior, n).items()}


def truncation_mass_report(prior: TwoStepPrior, n) -> float:
    """Total weight on the top-2 indices of each coordinate (truncation monitor)."""
    w = model_weights(prior, n)
    caps = prior.m_max
    total = 0.0
    for m, v in w.items():
        if any(c - mi < 2 for mi, c in zip(m, caps)):
            total += v
    return total


# ---------------------------------------------------------------------------
# within-model sampling and densities


def sample_within_model(prior: TwoStepPrior, m, n=None, seed=0):
    """One draw from the second-step prior at model index m.

    n is the design size (iso / partially linear); trace and convex read
    their dimensions off the rate spec.  seed may be an integer or a
    Generator.
    """
    idx = _as_index(m)
    rng = seed if isinstance(seed, np.random.Generator) else stream(int(seed), "prior", idx)
    app = prior.rate.app
    g = prior.g
    if app == App.ISO:
        (k,) = idx
        return _sample_step(g, k, n, rng)
    if app == App.CONVEX:
        (k,) = idx
        d = prior.rate.d
        planes = tuple(
            (tuple(g.sample(rng, d)), float(g.sample(rng))) for _ in range(k)
        )
        return MaxAffine(planes)
    if app == App.TRACE:
        (r,) = idx
        us = g.sample(rng, (r, prior.rate.m1))
        vs = g.sample(rng, (r, prior.rate.m2))
        return FactorMatrix(np.atleast_2d(us), np.atleast_2d(vs))
    if app == App.PARTIAL_LINEAR:
        s, k = idx
        p = prior.rate.p
        if s > p:
            raise SupportTooLarge(f"support size {s} exceeds p={p}")
        support = tuple(sorted(rng.choice(p, size=s, replace=False).tolist()))
        beta = tuple(float(v) for v in np.atleast_1d(g.sample(rng, s)))
        step = _sample_step(g, k, n, rng)
        return SparsePlusStep(support, beta, step)
    raise KindMismatch(f"no constructive within-model prior for {app}")


def _sample_step(g: GSpec, k: int, n, rng) -> StepFunction:
    if n is None:
        raise KindMismatch("step-function priors need the design size n")
    if k > n:
        raise TooManyPieces(f"{k} change points on {n} design points")
    pts = tuple(sorted(rng.choice(n, size=k, replace=False).tolist()))
    levels = tuple(sorted(float(v) for v in np.atleast_1d(g.sample(rng, k))))
    return StepFunction(pts, levels)


def _step_log_density(g: GSpec, change_indices, levels, n: int) -> float:
    k = len(levels)
    if len(change_indices) != k:
        return -math.inf
    ci = list(change_indices)
    if any(b <= a for a, b in zip(ci, ci[1:])) or ci[0] < 0 or ci[-1] >= n:
        return -math.inf
    lv = np.asarray(levels, dtype=float)
    if np.any(np.diff(lv) < 0):
        return -math.inf
    return float(gammaln(k + 1) + np.sum(g.logpdf(lv)) - log_binom(n, k))


def within_model_log_density(prior: TwoStepPrior, point, n=None) -> float:
    """Exact log density of a parameter point under its within-model prior.

    Includes the m! ordering factor and -log C(n, m) subset factor for step
    functions and -log C(p, s) for supports; -inf on ordering violations
    (reachable by passing a raw (change_indices, levels) pair, since the
    StepFunction constructor refuses unsorted levels).
    """
    g = prior.g
    app = prior.rate.app
    if app == App.ISO:
        if isinstance(point, StepFunction):
            return _step_log_density(g, point.change_indices, point.levels, n)
        ci, lv = point
        return _step_log_density(g, ci, lv, n)
    if app == App.CONVEX:
        if not isinstance(point, MaxAffine):
            raise KindMismatch("convex prior expects a MaxAffine point")
        total = 0.0
        for a, b in point.planes:
            total += float(np.sum(g.logpdf(np.asarray(a))) + g.logpdf(b))
        return total
    if app == App.TRACE:
        if not isinstance(point, FactorMatrix):
            raise KindMismatch("trace prior expects a FactorMatrix point")
        return float(np.sum(g.logpdf(point.us)) + np.sum(g.logpdf(point.vs)))
    if app == App.PARTIAL_LINEAR:
        if not isinstance(point, SparsePlusStep):
            raise KindMismatch("partially linear prior expects a SparsePlusStep point")
        p = prior.rate.p
        s = point.s
        if s > p or (point.support and point.support[-1] >= p):
            return -math.inf
        lin = -log_binom(p, s) + float(np.sum(g.logpdf(np.asarray(point.beta))))
        return lin + _step_log_density(g, point.step.change_indices, point.step.levels, n)
    raise KindMismatch(f"no within-model density for {app}")


# ---------------------------------------------------------------------------
# best approximations


def pava(y: np.ndarray, w: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weighted isotonic regression (nondecreasing) by pool-adjacent-violators.

    Returns (block_values, block_weights, block_start_indices); the fitted
    vector is block_values repeated along blocks.
    """
    y = np.asarray(y, dtype=float)
    if w is None:
        w = np.ones_like(y)
    vals: list[float] = []
    wts: list[float] = []
    starts: list[int] = []
    for i, (yi, wi) in enumerate(zip(y, w)):
        vals.append(float(yi))
        wts.append(float(wi))
        starts.append(i)
        while len(vals) > 1 and vals[-2] >= vals[-1]:
            v = (vals[-2] * wts[-2] + vals[-1] * wts[-1]) / (wts[-2] + wts[-1])
            wts[-2] += wts[-1]
            vals[-2] = v
            vals.pop()
            wts.pop()
            starts.pop()
    return np.asarray(vals), np.asarray(wts), np.asarray(starts, dtype=int)


def best_approx_iso(f0_values, m: int) -> tuple[StepFunction, float]:
    """Best nondecreasing m-piece approximation under l_n^2.

    Isotonic regression first (its level sets are never split by the optimal
    m-piece monotone fit), then exact weighted segmentation of the collapsed
    block sequence by dynamic programming; ties go to fewer pieces.
    """
    y = np.asarray(f0_values, dtype=float)
    n = y.shape[0]
    if not 1 <= m <= n:
        raise IndexOutOfRange(f"need 1 <= m <= n, got m={m}, n={n}")
    vals, wts, starts = pava(y)
    iso_fit = np.repeat(vals, np.diff(np.append(starts, n)))
    base_sse = float(np.sum((y - iso_fit) ** 2))
    B = len(vals)
    if B <= m:
        step = StepFunction(tuple(int(s) for s in starts), tuple(float(v) for v in vals))
        return step, base_sse / n

    # weighted segmentation of the collapsed sequence
    pw = np.concatenate([[0.0], np.cumsum(wts)])
    pwv = np.concatenate([[0.0], np.cumsum(wts * vals)])
    pwv2 = np.concatenate([[0.0], np.cumsum(wts * vals**2)])

    def seg_cost(i: int, j: int) -> float:
        # blocks i..j-1 merged to their weighted mean
        w = pw[j] - pw[i]
        s = pwv[j] - pwv[i]
        s2 = pwv2[j] - pwv2[i]
        return s2 - s * s / w

    INF = math.inf
    cost = [[INF] * (B + 1) for _ in range(m + 1)]
    back = [[0] * (B + 1) for _ in range(m + 1)]
    cost[0][0] = 0.0
    for k in range(1, m + 1):
        for j in range(k, B + 1):
            best, arg = INF, k - 1
            for i in range(k - 1, j):
                c = cost[k - 1][i] + seg_cost(i, j)
                if c < best - 1e-15:
                    best, arg = c, i
            cost[k][j] = best
            back[k][j] = arg
    errs = [cost[k][B] for k in range(1, m + 1)]
    best_err = min(errs)
    k_use = next(k for k, e in enumerate(errs, start=1) if e <= best_err + 1e-12 * max(1.0, best_err))
    cuts = []
    j = B
    for k in range(k_use, 0, -1):
        i = back[k][j]
        cuts.append(i)
        j = i
    cuts.reverse()                      # starts of each segment, in collapsed coords
    seg_starts = [int(starts[c]) for c in cuts]
    levels = []
    bounds = cuts + [B]
    for i, j in zip(bounds[:-1], bounds[1:]):
        levels.append(float((pwv[j] - pwv[i]) / (pw[j] - pw[i])))
    step = StepFunction(tuple(seg_starts), tuple(levels))
    total = base_sse + cost[k_use][B]
    return step, float(total / n)


def best_approx_rank(A0, r: int) -> tuple[FactorMatrix, float]:
    """Rank-r truncated SVD of A0 and the squared Frobenius error.

    Exact under Frobenius loss; downstream oracle benchmarks use it as a
    surrogate for the design-weighted l_n loss.
    """
    A0 = np.asarray(A0, dtype=float)
    if A0.ndim != 2:
        raise KindMismatch("A0 must be a matrix")
    if not 0 <= r <= min(A0.shape):
        raise IndexOutOfRange(f"need 0 <= r <= min shape, got r={r}")
    try:
        U, s, Vt = np.linalg.svd(A0, full_matrices=False)
    except np.linalg.LinAlgError as e:
        from .errors import SvdFailure

        raise SvdFailure(str(e)) from e
    us = (np.sqrt(s[:r])[:, None] * U[:, :r].T) if r else np.zeros((0, A0.shape[0]))
    vs = (np.sqrt(s[:r])[:, None] * Vt[:r]) if r else np.zeros((0, A0.shape[1]))
    err = float(np.sum(s[r:] ** 2))
    return FactorMatrix(us, vs), err


def rip_estimate(design, r: int, reps: int = 1000, seed: int = 0) -> tuple[float, float]:
    """Empirical min/max of ||X(A)||_2 / (sqrt(n) ||A||_2) over random rank-<=r probes.

    A certificate of violation when the interval escapes a configured
    (nu_lower, nu_upper); never a proof of satisfaction.
    """
    X = np.asarray(design, dtype=float)
    if X.ndim != 3:
        raise KindMismatch("design must be a (n, m1, m2) array")
    n, m1, m2 = X.shape
    rng = seed if isinstance(seed, np.random.Generator) else stream(int(seed), "rip")
    Xmat = X.reshape(n, m1 * m2)
    ratios = np.empty(reps)
    for i in range(reps):
        G1 = rng.standard_normal((m1, r))
        G2 = rng.standard_normal((m2, r))
        A = G1 @ G2.T
        A /= np.linalg.norm(A)
        ratios[i] = np.linalg.norm(Xmat @ A.ravel()) / math.sqrt(n)
    return float(ratios.min()), float(ratios.max())


# ---------------------------------------------------------------------------
# exhaustive reference for tests (tiny n only)


def exhaustive_best_iso_error(y, m: int) -> float:
    """Brute-force best m-piece monotone error; O(2^n), for n <= ~12 only."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    best = math.inf
    for k in range(1, min(m, n) + 1):
        for cuts in combinations(range(1, n), k - 1):
            bounds = (0,) + cuts + (n,)
            means = np.array([y[i:j].mean() for i, j in zip(bounds[:-1], bounds[1:])])
            sizes = np.array([j - i for i, j in zip(bounds[:-1], bounds[1:])], dtype=float)
            within = sum(float(np.sum((y[i:j] - y[i:j].mean()) ** 2)) for i, j in zip(bounds[:-1], bounds[1:]))
            vals, wts, starts = pava(means, sizes)
            fit = np.repeat(vals, np.diff(np.append(starts, k)))
            iso_sse = float(np.sum(sizes * (means - fit) ** 2))
            best = min(best, within + iso_sse)
    return best / n
