"""Posterior computation: exact enumeration for tiny discretized problems and
trans-dimensional Metropolis-Hastings samplers for the four applications.

Every move proposal carries its forward and reverse transition densities in
log domain (selection probability included), and acceptance is computed from
scratch off the joint log posterior.  Birth/death pairs keep independent
bookkeeping for the same densities, so the reversibility audit is a real
cross-check rather than a tautology.

Move sets:
  Iso            birth (uniform unused index + level from the level law),
                 death (uniform index position x uniform level position, with
                 multiplicity-aware densities on grids), move (relocate one
                 change point), refresh (continuous: 50/50 random walk /
                 independence redraw of one level; grid: categorical in-place
                 redraw).  Order violations reject, projection-free.
  Convex         birth/death of a plane at a uniform tuple position, random
                 walk refresh of one plane.
  Trace          birth/death of a factor pair at a uniform position; birth
                 levels come from a 75/25 mixture of the prior g and a guided
                 Gaussian centered on the residual back-projection's top
                 singular pair (density exactly evaluable both directions);
                 random walk refresh of one factor block.
  PartialLinear  a fair coin picks the linear or step coordinate; linear moves
                 are support birth/death/swap and a beta random walk, step
                 moves are the Iso set.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from itertools import combinations, combinations_with_replacement, product
from pathlib import Path

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import (
    ConfigError,
    ConstraintViolation,
    EmptyChain,
    FactorizationFailure,
    KindMismatch,
    LengthMismatch,
    NonFiniteLogPosterior,
    QuadratureFailure,
    StateSpaceTooLarge,
)
from .experiments import Dataset, ExperimentSpec, log_likelihood
from .jsonio import dumps_17g
from .params import FactorMatrix, MaxAffine, SparsePlusStep, StepFunction, fitted_values
from .priors import (
    App,
    GSpec,
    TwoStepPrior,
    best_approx_iso,
    log_binom,
    log_model_weights,
    within_model_log_density,
)
from .rng import stream

__all__ = [
    "GridSpec",
    "SamplerConfig",
    "Chain",
    "PosteriorTable",
    "AuditReport",
    "default_config",
    "run_rjmcmc",
    "posterior_mean",
    "enumerate_posterior",
    "reversibility_audit",
    "state_key",
    "export_chain_csv",
    "export_chain_jsonl",
    "load_chain_jsonl",
]

AUDIT_TOL = 1e-10


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class GridSpec:
    """Finite level set for discretized problems; weighting 'g' puts mass
    proportional to the base density at each grid value, 'uniform' is flat."""

    levels: tuple[float, ...]
    weighting: str = "g"

    def __post_init__(self):
        lv = tuple(float(v) for v in self.levels)
        if len(lv) < 2:
            raise ConfigError("grid needs at least 2 levels")
        if len(set(lv)) != len(lv):
            raise ConfigError("grid levels must be distinct")
        if self.weighting not in ("g", "uniform"):
            raise ConfigError(f"unknown grid weighting {self.weighting!r}")
        object.__setattr__(self, "levels", tuple(sorted(lv)))

    def log_mass(self, g: GSpec) -> np.ndarray:
        x = np.asarray(self.levels)
        raw = g.logpdf(x) if self.weighting == "g" else np.zeros(len(x))
        return raw - logsumexp(raw)


_DEFAULT_SCALES = {"level": 0.5, "plane": 0.3, "factor": 0.3, "beta": 0.3}


@dataclass(frozen=True)
class SamplerConfig:
    n_iter: int = 20000
    burn_in: int = 5000
    thin: int = 1
    chains: int = 1
    seed: int = 0
    move_probs: dict = field(
        default_factory=lambda: {"birth": 0.2, "death": 0.2, "move": 0.2, "refresh": 0.4}
    )
    scales: dict = field(default_factory=lambda: dict(_DEFAULT_SCALES))
    level_grid: GridSpec | None = None
    prior_only: bool = False
    tune: bool = True

    def __post_init__(self):
        if self.n_iter < 1 or not 0 <= self.burn_in < self.n_iter:
            raise ConfigError("need 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if self.chains < 1:
            raise ConfigError("chains must be >= 1")
        mp = dict(self.move_probs)
        if set(mp) != {"birth", "death", "move", "refresh"}:
            raise ConfigError("move_probs needs exactly birth/death/move/refresh")
        if any(v < 0 for v in mp.values()):
            raise ConfigError("move probabilities must be nonnegative")
        if abs(sum(mp.values()) - 1.0) > 1e-12:
            raise ConfigError(f"move probabilities sum to {sum(mp.values())!r}, not 1")
        object.__setattr__(self, "move_probs", mp)
        sc = {**_DEFAULT_SCALES, **dict(self.scales)}
        if any(v <= 0 for v in sc.values()):
            raise ConfigError("proposal scales must be positive")
        object.__setattr__(self, "scales", sc)


def default_config(app: str, **overrides) -> SamplerConfig:
    if app == App.CONVEX:
        overrides.setdefault(
            "move_probs", {"birth": 0.25, "death": 0.25, "move": 0.0, "refresh": 0.5}
        )
    return SamplerConfig(**overrides)


# ---------------------------------------------------------------------------
# level laws (shared by prior density, moves, and the enumeration oracle)


class _ContinuousLevels:
    kind = "continuous"

    def __init__(self, g: GSpec):
        self.g = g

    def sample_one(self, rng) -> float:
        return float(self.g.sample(rng))

    def logpdf_one(self, x: float) -> float:
        return float(self.g.logpdf(x))

    def sorted_logdensity(self, levels) -> float:
        # density of the sorted vector: m! on the ordered cone (ties measure 0)
        m = len(levels)
        return float(gammaln(m + 1) + np.sum(self.g.logpdf(np.asarray(levels))))


class _GridLevels:
    kind = "grid"

    def __init__(self, grid: GridSpec, g: GSpec):
        self.grid = grid
        self.values = np.asarray(grid.levels)
        self.log_w = grid.log_mass(g)

    def sample_one(self, rng) -> float:
        j = rng.choice(len(self.values), p=np.exp(self.log_w))
        return float(self.values[j])

    def logpdf_one(self, x: float) -> float:
        hits = np.nonzero(self.values == x)[0]
        if hits.size != 1:
            return -math.inf
        return float(self.log_w[hits[0]])

    def sorted_logdensity(self, levels) -> float:
        # multiset mass: (m! / prod_v c_v!) * prod w(x_i)
        m = len(levels)
        total = float(gammaln(m + 1))
        i = 0
        lv = list(levels)
        while i < m:
            j = i
            while j < m and lv[j] == lv[i]:
                j += 1
            total -= float(gammaln(j - i + 1))
            w = self.logpdf_one(lv[i])
            if w == -math.inf:
                return -math.inf
            total += (j - i) * w
            i = j
        return total


# ---------------------------------------------------------------------------
# sampling context


def _pl_dims(prior: TwoStepPrior):
    return prior.rate.p


class _Ctx:
    """Immutable problem description plus the mutable tuned proposal scales."""

    def __init__(self, app, exp, data, prior, cfg):
        if app not in App.ALL:
            raise KindMismatch(f"unknown application {app!r}")
        if app == App.COV_FACTOR:
            raise KindMismatch("no transdimensional sampler ships for the covariance sieve")
        if cfg.level_grid is not None and app != App.ISO:
            raise ConfigError("level_grid is only supported for the Iso application")
        self.app = app
        self.exp = exp
        self.data = data
        self.prior = prior
        self.cfg = cfg
        self.n = data.n
        self.design = exp.design
        self.log_lambda = log_model_weights(prior, self.n)
        self.caps = prior.m_max
        # cap seen by the step-function moves (second coordinate for the
        # partially linear app, whose first coordinate is the support size)
        self.step_cap = self.caps[1] if app == App.PARTIAL_LINEAR else self.caps[0]
        g = prior.g
        self.law = (
            _GridLevels(cfg.level_grid, g) if cfg.level_grid is not None else _ContinuousLevels(g)
        )
        self.move_logp = {
            k: (math.log(v) if v > 0 else -math.inf) for k, v in cfg.move_probs.items()
        }
        self.scales = dict(cfg.scales)
        self.prior_only = cfg.prior_only
        if app == App.TRACE:
            if self.design is None or self.design.ndim != 3:
                raise KindMismatch("trace sampling needs a (n, m1, m2) design")
            if self.design.shape[1:] != (prior.rate.m1, prior.rate.m2):
                raise KindMismatch("design dims disagree with the rate spec (m1, m2)")
        if app == App.CONVEX and (self.design is None or self.design.ndim not in (1, 2)):
            raise KindMismatch("convex sampling needs a vector design")
        if app == App.PARTIAL_LINEAR:
            if self.design is None or self.design.ndim != 2:
                raise KindMismatch("partially linear sampling needs a (n, p) design")
            if self.design.shape[1] != prior.rate.p:
                raise KindMismatch("design width disagrees with the rate spec p")

    # -- state structure -----------------------------------------------------

    def model_index(self, point) -> tuple[int, ...]:
        if self.app == App.ISO:
            return (point.m,)
        if self.app == App.CONVEX:
            return (point.m,)
        if self.app == App.TRACE:
            return (point.rank,)
        return (point.s, point.step.m)

    def log_prior_within(self, point) -> float:
        if self.app == App.ISO:
            m = point.m
            return -log_binom(self.n, m) + self.law.sorted_logdensity(point.levels)
        if self.app == App.PARTIAL_LINEAR:
            g = self.prior.g
            p = self.prior.rate.p
            lin = -log_binom(p, point.s) + float(np.sum(g.logpdf(np.asarray(point.beta))))
            m = point.step.m
            return lin - log_binom(self.n, m) + self.law.sorted_logdensity(point.step.levels)
        return within_model_log_density(self.prior, point, self.n)

    def log_lik(self, point) -> float:
        if self.prior_only:
            return 0.0
        try:
            return log_likelihood(self.exp, point, self.data)
        except (ConstraintViolation, FactorizationFailure, QuadratureFailure):
            return -math.inf

    def log_post(self, point) -> float:
        idx = self.model_index(point)
        lw = self.log_lambda.get(idx)
        if lw is None:
            return -math.inf
        pw = self.log_prior_within(point)
        if pw == -math.inf:
            return -math.inf
        return lw + pw + self.log_lik(point)


# ---------------------------------------------------------------------------
# proposals: each returns (point2, log_q_fwd, log_q_rev, label, reverse_choice)
# or None for an immediate (boundary) rejection. log_q_* include the move-type
# selection probability. reverse_choice drives the paired reverse move in the
# audit.


@dataclass(frozen=True)
class _Proposal:
    point: object
    log_q_fwd: float
    log_q_rev: float
    label: str
    reverse_label: str
    reverse_choice: object


def _count_eq(values, x) -> int:
    return sum(1 for v in values if v == x)


# -- iso ---------------------------------------------------------------------


def _iso_bd_sel(ctx: _Ctx, which: str) -> float:
    # continuous runs split birth/death mass 50/50 with split/merge; on a grid
    # the plain pair carries the whole mass
    sel = ctx.move_logp[which]
    if ctx.law.kind == "continuous":
        sel += math.log(0.5)
    return sel


def _iso_birth(point: StepFunction, ctx: _Ctx, rng, forced=None):
    m, n = point.m, ctx.n
    if m >= min(ctx.step_cap, n):
        return None
    unused = [j for j in range(n) if j not in point.change_indices]
    if forced is None:
        j = int(unused[rng.integers(len(unused))])
        x = ctx.law.sample_one(rng)
    else:
        j, x = forced
    ci = tuple(sorted(point.change_indices + (j,)))
    lv = tuple(sorted(point.levels + (x,)))
    new = StepFunction(ci, lv)
    lqf = _iso_bd_sel(ctx, "birth") - math.log(n - m) + ctx.law.logpdf_one(x)
    # reverse: death from m+1 picks the index position (1/(m+1)) and any of the
    # level positions holding value x (count / (m+1))
    lqr = (
        _iso_bd_sel(ctx, "death")
        - math.log(m + 1)
        + math.log(_count_eq(lv, x))
        - math.log(m + 1)
    )
    return _Proposal(new, lqf, lqr, "birth", "death", (j, x))


def _iso_death(point: StepFunction, ctx: _Ctx, rng, forced=None):
    m, n = point.m, ctx.n
    if m <= 1:
        return None
    if forced is None:
        i = int(rng.integers(m))
        k = int(rng.integers(m))
        a, x = point.change_indices[i], point.levels[k]
    else:
        a, x = forced
    ci = tuple(v for v in point.change_indices if v != a)
    lv = list(point.levels)
    lv.remove(x)
    new = StepFunction(ci, tuple(lv))
    lqf = (
        _iso_bd_sel(ctx, "death")
        - math.log(m)
        + math.log(_count_eq(point.levels, x))
        - math.log(m)
    )
    # reverse: birth from m-1 re-inserts index a (1/(n-(m-1))) and value x
    lqr = _iso_bd_sel(ctx, "birth") - math.log(n - (m - 1)) + ctx.law.logpdf_one(x)
    return _Proposal(new, lqf, lqr, "death", "birth", (a, x))


def _block_bounds(point: StepFunction, n: int):
    ci = point.change_indices
    starts = (0,) + ci[1:]
    stops = ci[1:] + (n,)
    return starts, stops


def _iso_split(point: StepFunction, ctx: _Ctx, rng, forced=None):
    """Mean-preserving block split: the chosen block's level splits into a
    weight-balanced pair (unit Jacobian in the (level, gap) parameterization).
    The new change index must land strictly right of the block's own marker so
    the inserted index, not the marker, becomes the sub-block boundary."""
    m, n = point.m, ctx.n
    if ctx.law.kind == "grid" or m >= min(ctx.step_cap, n):
        return None
    starts, stops = _block_bounds(point, n)
    g = ctx.prior.g
    if forced is None:
        b = int(rng.integers(m))
        n_pos = stops[b] - point.change_indices[b] - 1
        if n_pos < 1:
            return None
        t = point.change_indices[b] + 1 + int(rng.integers(n_pos))
        xi = abs(float(g.sample(rng)))
    else:
        b, t, xi = forced
        n_pos = stops[b] - point.change_indices[b] - 1
    width = stops[b] - starts[b]
    w1 = t - starts[b]
    w2 = stops[b] - t
    lo = point.levels[b] - xi * w2 / width
    hi = point.levels[b] + xi * w1 / width
    if b > 0 and lo < point.levels[b - 1]:
        return None
    if b < m - 1 and hi > point.levels[b + 1]:
        return None
    ci = tuple(sorted(point.change_indices + (t,)))
    lv = point.levels[:b] + (lo, hi) + point.levels[b + 1 :]
    new = StepFunction(ci, lv)
    lqf = (
        _iso_bd_sel(ctx, "birth")
        - math.log(m)
        - math.log(n_pos)
        + math.log(2.0)
        + float(g.logpdf(xi))
    )
    # reverse: merge from m+1 picks this adjacent pair among m
    lqr = _iso_bd_sel(ctx, "death") - math.log(m)
    return _Proposal(new, lqf, lqr, "split", "merge", b)


def _iso_merge(point: StepFunction, ctx: _Ctx, rng, forced=None):
    """Reverse of the split: adjacent blocks collapse to their weighted mean."""
    m, n = point.m, ctx.n
    if ctx.law.kind == "grid" or m <= 1:
        return None
    starts, stops = _block_bounds(point, n)
    g = ctx.prior.g
    k = int(rng.integers(m - 1)) if forced is None else forced
    w1 = stops[k] - starts[k]
    w2 = stops[k + 1] - starts[k + 1]
    merged = (w1 * point.levels[k] + w2 * point.levels[k + 1]) / (w1 + w2)
    xi = point.levels[k + 1] - point.levels[k]
    t = point.change_indices[k + 1]
    n_pos = stops[k + 1] - point.change_indices[k] - 1
    ci = point.change_indices[: k + 1] + point.change_indices[k + 2 :]
    lv = point.levels[:k] + (merged,) + point.levels[k + 2 :]
    new = StepFunction(ci, lv)
    lqf = _iso_bd_sel(ctx, "death") - math.log(m - 1)
    lqr = (
        _iso_bd_sel(ctx, "birth")
        - math.log(m - 1)
        - math.log(n_pos)
        + math.log(2.0)
        + float(g.logpdf(xi))
    )
    return _Proposal(new, lqf, lqr, "merge", "split", (k, t, xi))


def _iso_move(point: StepFunction, ctx: _Ctx, rng, forced=None):
    m, n = point.m, ctx.n
    if m >= n:
        return None
    unused = [j for j in range(n) if j not in point.change_indices]
    if forced is None:
        i = int(rng.integers(m))
        a = point.change_indices[i]
        j = int(unused[rng.integers(len(unused))])
    else:
        a, j = forced
    ci = tuple(sorted([v for v in point.change_indices if v != a] + [j]))
    new = StepFunction(ci, point.levels)
    lq = ctx.move_logp["move"] - math.log(2.0) - math.log(m) - math.log(n - m)
    return _Proposal(new, lq, lq, "move", "move", (j, a))


_LOCAL_WINDOW = 4


def _iso_move_local(point: StepFunction, ctx: _Ctx, rng, forced=None):
    """Shift one change point within a symmetric +-W window; collisions with
    used indices and range violations reject, keeping the kernel symmetric."""
    m, n = point.m, ctx.n
    if forced is None:
        i = int(rng.integers(m))
        a = point.change_indices[i]
        off = int(rng.integers(1, _LOCAL_WINDOW + 1)) * (1 if rng.random() < 0.5 else -1)
        j = a + off
    else:
        a, j = forced
    if not 0 <= j < n or j in point.change_indices:
        return None
    ci = tuple(sorted([v for v in point.change_indices if v != a] + [j]))
    new = StepFunction(ci, point.levels)
    lq = ctx.move_logp["move"] - math.log(2.0) - math.log(m) - math.log(2 * _LOCAL_WINDOW)
    return _Proposal(new, lq, lq, "move_local", "move_local", (j, a))


def _iso_refresh_rw(point: StepFunction, ctx: _Ctx, rng, forced=None):
    m = point.m
    if forced is None:
        k = int(rng.integers(m))
        x = point.levels[k] + ctx.scales["level"] * rng.standard_normal()
    else:
        k, x = forced
    lv = list(point.levels)
    old = lv[k]
    lv[k] = x
    if any(b < a for a, b in zip(lv, lv[1:])):
        return None
    new = StepFunction(point.change_indices, tuple(lv))
    lq = ctx.move_logp["refresh"] - math.log(2.0)  # symmetric normal kernel cancels
    return _Proposal(new, lq, lq, "refresh_rw", "refresh_rw", (k, old))


def _iso_refresh_ind(point: StepFunction, ctx: _Ctx, rng, forced=None):
    m = point.m
    if forced is None:
        k = int(rng.integers(m))
        x = ctx.law.sample_one(rng)
    else:
        k, x = forced
    lv = list(point.levels)
    old = lv[k]
    lv[k] = x
    if any(b < a for a, b in zip(lv, lv[1:])):
        return None
    new = StepFunction(point.change_indices, tuple(lv))
    base = ctx.move_logp["refresh"] - (math.log(2.0) if ctx.law.kind == "continuous" else 0.0)
    lqf = base - math.log(m) + ctx.law.logpdf_one(x)
    lqr = base - math.log(m) + ctx.law.logpdf_one(old)
    return _Proposal(new, lqf, lqr, "refresh_ind", "refresh_ind", (k, old))


def _iso_propose(point, ctx, rng, move, forced=None):
    if move == "birth":
        return _iso_birth(point, ctx, rng, forced)
    if move == "death":
        return _iso_death(point, ctx, rng, forced)
    if move == "split":
        return _iso_split(point, ctx, rng, forced)
    if move == "merge":
        return _iso_merge(point, ctx, rng, forced)
    if move == "move":
        return _iso_move(point, ctx, rng, forced)
    if move == "move_local":
        return _iso_move_local(point, ctx, rng, forced)
    if move == "refresh_rw":
        return _iso_refresh_rw(point, ctx, rng, forced)
    return _iso_refresh_ind(point, ctx, rng, forced)


# -- convex -------------------------------------------------------------------


def _plane_logpdf(g: GSpec, plane) -> float:
    a, b = plane
    return float(np.sum(g.logpdf(np.asarray(a))) + g.logpdf(b))


def _cvx_birth(point: MaxAffine, ctx: _Ctx, rng, forced=None):
    m = point.m
    if m >= ctx.caps[0]:
        return None
    g = ctx.prior.g
    d = ctx.prior.rate.d
    if forced is None:
        pos = int(rng.integers(m + 1))
        plane = (tuple(float(v) for v in g.sample(rng, d)), float(g.sample(rng)))
    else:
        pos, plane = forced
    planes = point.planes[:pos] + (plane,) + point.planes[pos:]
    new = MaxAffine(planes)
    lqf = ctx.move_logp["birth"] - math.log(m + 1) + _plane_logpdf(g, plane)
    lqr = ctx.move_logp["death"] - math.log(m + 1)
    return _Proposal(new, lqf, lqr, "birth", "death", pos)


def _cvx_death(point: MaxAffine, ctx: _Ctx, rng, forced=None):
    m = point.m
    if m <= 1:
        return None
    g = ctx.prior.g
    pos = int(rng.integers(m)) if forced is None else forced
    plane = point.planes[pos]
    new = MaxAffine(point.planes[:pos] + point.planes[pos + 1 :])
    lqf = ctx.move_logp["death"] - math.log(m)
    lqr = ctx.move_logp["birth"] - math.log(m) + _plane_logpdf(g, plane)
    return _Proposal(new, lqf, lqr, "death", "birth", (pos, plane))


def _cvx_refresh(point: MaxAffine, ctx: _Ctx, rng, forced=None):
    m = point.m
    if forced is None:
        i = int(rng.integers(m))
        a, b = point.planes[i]
        d = len(a)
        step = ctx.scales["plane"] * rng.standard_normal(d + 1)
        plane = (tuple(np.asarray(a) + step[:d]), float(b + step[d]))
    else:
        i, plane = forced
    old = point.planes[i]
    planes = point.planes[:i] + (plane,) + point.planes[i + 1 :]
    new = MaxAffine(planes)
    lq = ctx.move_logp["refresh"]
    return _Proposal(new, lq, lq, "refresh_rw", "refresh_rw", (i, old))


def _cvx_propose(point, ctx, rng, move, forced=None):
    if move == "birth":
        return _cvx_birth(point, ctx, rng, forced)
    if move == "death":
        return _cvx_death(point, ctx, rng, forced)
    if move == "move":
        return None
    return _cvx_refresh(point, ctx, rng, forced)


# -- trace ---------------------------------------------------------------------


_GUIDE_WEIGHT = 0.25          # mixture weight of the guided component
_GUIDE_TAU_FLOOR = 0.05


def _trace_guide_params(point, ctx):
    """Mean/scale of the guided birth component from the residual back-projection."""
    fit = point.values(ctx.design) if point.rank > 0 else 0.0
    r = ctx.data.values - fit
    R = np.einsum("n,nij->ij", r, ctx.design) / ctx.n
    U, s, Vt = np.linalg.svd(R)
    s0 = float(s[0])
    mu_u = math.sqrt(s0) * U[:, 0]
    mu_v = math.sqrt(s0) * Vt[0]
    tau = max(_GUIDE_TAU_FLOOR, 0.15 * math.sqrt(s0))
    return mu_u, mu_v, tau


def _guide_logpdf(u, v, mu_u, mu_v, tau) -> float:
    dim = u.size + v.size
    norm = -dim * math.log(tau) - 0.5 * dim * math.log(2 * math.pi)
    lp_plus = norm - (np.sum((u - mu_u) ** 2) + np.sum((v - mu_v) ** 2)) / (2 * tau**2)
    lp_minus = norm - (np.sum((u + mu_u) ** 2) + np.sum((v + mu_v) ** 2)) / (2 * tau**2)
    return float(np.logaddexp(lp_plus, lp_minus) - math.log(2.0))


def _pair_prior_logpdf(g: GSpec, u, v) -> float:
    return float(np.sum(g.logpdf(u)) + np.sum(g.logpdf(v)))


def _trace_birth_logq(u, v, parent_point, ctx) -> float:
    """Density of proposing factor pair (u, v) in a birth from parent_point."""
    g = ctx.prior.g
    mu_u, mu_v, tau = _trace_guide_params(parent_point, ctx)
    lp_g = _pair_prior_logpdf(g, u, v)
    lp_guided = _guide_logpdf(u, v, mu_u, mu_v, tau)
    return float(
        np.logaddexp(math.log(1 - _GUIDE_WEIGHT) + lp_g, math.log(_GUIDE_WEIGHT) + lp_guided)
    )


def _trace_pair_draw(parent: FactorMatrix, ctx: _Ctx, rng):
    """One factor pair from the 75/25 prior/guided mixture around parent."""
    g = ctx.prior.g
    m1, m2 = parent.shape
    if rng.random() < _GUIDE_WEIGHT:
        mu_u, mu_v, tau = _trace_guide_params(parent, ctx)
        sgn = 1.0 if rng.random() < 0.5 else -1.0
        u = sgn * mu_u + tau * rng.standard_normal(m1)
        v = sgn * mu_v + tau * rng.standard_normal(m2)
    else:
        u = np.asarray(g.sample(rng, m1), dtype=float)
        v = np.asarray(g.sample(rng, m2), dtype=float)
    return u, v


def _tr_birth(point: FactorMatrix, ctx: _Ctx, rng, forced=None):
    r = point.rank
    r_max = min(ctx.caps[0], min(point.shape))
    if r >= r_max:
        return None
    if forced is None:
        pos = int(rng.integers(r + 1))
        u, v = _trace_pair_draw(point, ctx, rng)
    else:
        pos, u, v = forced
        u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    us = np.insert(point.us, pos, u, axis=0)
    vs = np.insert(point.vs, pos, v, axis=0)
    new = FactorMatrix(us, vs)
    lqf = ctx.move_logp["birth"] - math.log(r + 1) + _trace_birth_logq(u, v, point, ctx)
    lqr = ctx.move_logp["death"] - math.log(r + 1)
    return _Proposal(new, lqf, lqr, "birth", "death", pos)


def _tr_death(point: FactorMatrix, ctx: _Ctx, rng, forced=None):
    r = point.rank
    if r <= 1:
        return None
    pos = int(rng.integers(r)) if forced is None else forced
    u = point.us[pos].copy()
    v = point.vs[pos].copy()
    new = FactorMatrix(np.delete(point.us, pos, axis=0), np.delete(point.vs, pos, axis=0))
    lqf = ctx.move_logp["death"] - math.log(r)
    # reverse birth proposes from the landed (parent) state's residuals
    lqr = ctx.move_logp["birth"] - math.log(r) + _trace_birth_logq(u, v, new, ctx)
    return _Proposal(new, lqf, lqr, "death", "birth", (pos, u, v))


def _tr_replace(point: FactorMatrix, ctx: _Ctx, rng, forced=None):
    """Fixed-rank factor redraw: remove one pair, redraw from the mixture at
    the reduced state.  The reduced parent is the same from both directions,
    so forward and reverse densities share one set of guide parameters."""
    r = point.rank
    if forced is None:
        i = int(rng.integers(r))
    else:
        i, u, v = forced
        u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    reduced = FactorMatrix(np.delete(point.us, i, axis=0), np.delete(point.vs, i, axis=0))
    if forced is None:
        u, v = _trace_pair_draw(reduced, ctx, rng)
    old_u, old_v = point.us[i].copy(), point.vs[i].copy()
    us = point.us.copy()
    vs = point.vs.copy()
    us[i] = u
    vs[i] = v
    new = FactorMatrix(us, vs)
    lqf = ctx.move_logp["move"] - math.log(r) + _trace_birth_logq(u, v, reduced, ctx)
    lqr = ctx.move_logp["move"] - math.log(r) + _trace_birth_logq(old_u, old_v, reduced, ctx)
    return _Proposal(new, lqf, lqr, "replace", "replace", (i, old_u, old_v))


def _tr_refresh(point: FactorMatrix, ctx: _Ctx, rng, forced=None):
    r = point.rank
    if forced is None:
        i = int(rng.integers(r))
        side = "u" if rng.random() < 0.5 else "v"
        dim = point.us.shape[1] if side == "u" else point.vs.shape[1]
        block = (point.us if side == "u" else point.vs)[i] + ctx.scales[
            "factor"
        ] * rng.standard_normal(dim)
    else:
        i, side, block = forced
        block = np.asarray(block, dtype=float)
    if side == "u":
        old = point.us[i].copy()
        us = point.us.copy()
        us[i] = block
        new = FactorMatrix(us, point.vs)
    else:
        old = point.vs[i].copy()
        vs = point.vs.copy()
        vs[i] = block
        new = FactorMatrix(point.us, vs)
    lq = ctx.move_logp["refresh"] - math.log(2.0)
    return _Proposal(new, lq, lq, "refresh_rw", "refresh_rw", (i, side, old))


_GIBBS_RIDGE = 1e-8


def _tr_block_refresh(point: FactorMatrix, ctx: _Ctx, rng, forced=None):
    """Conditional-Gaussian redraw of one factor block.

    With everything else held fixed the Gaussian likelihood is exactly
    quadratic in a single u- or v-block, so the proposal is the conditional
    likelihood normal (ridge-stabilized); MH then corrects for the prior.
    Both directions share the same conditional, so densities mirror exactly.
    """
    r = point.rank
    if forced is None:
        i = int(rng.integers(r))
        side = "u" if rng.random() < 0.5 else "v"
        block = None
    else:
        i, side, block = forced
        block = np.asarray(block, dtype=float)
    X = ctx.design
    if side == "u":
        other = point.vs[i]
        z = np.einsum("nij,j->ni", X, other)
        old = point.us[i].copy()
    else:
        other = point.us[i]
        z = np.einsum("nij,i->nj", X, other)
        old = point.vs[i].copy()
    # residual against the other factors only, so both directions of the move
    # compute bit-identical conditional parameters
    rest = np.einsum(
        "nij,ri,rj->n", X, np.delete(point.us, i, axis=0), np.delete(point.vs, i, axis=0)
    )
    resid = ctx.data.values - rest
    G = z.T @ z + _GIBBS_RIDGE * np.eye(z.shape[1])
    b = z.T @ resid
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        return None
    mean = np.linalg.solve(G, b)
    if block is None:
        xi = rng.standard_normal(z.shape[1])
        block = mean + np.linalg.solve(L.T, xi)

    def logq(w):
        d = L.T @ (w - mean)
        return float(
            -0.5 * d @ d + np.sum(np.log(np.diag(L))) - 0.5 * len(w) * math.log(2 * math.pi)
        )

    if side == "u":
        us = point.us.copy()
        us[i] = block
        new = FactorMatrix(us, point.vs)
    else:
        vs = point.vs.copy()
        vs[i] = block
        new = FactorMatrix(point.us, vs)
    sel = ctx.move_logp["refresh"] - math.log(2.0)
    return _Proposal(new, sel + logq(block), sel + logq(old), "refresh_block", "refresh_block", (i, side, old))


def _tr_propose(point, ctx, rng, move, forced=None):
    if move == "birth":
        return _tr_birth(point, ctx, rng, forced)
    if move == "death":
        return _tr_death(point, ctx, rng, forced)
    if move in ("move", "replace"):
        return _tr_replace(point, ctx, rng, forced)
    if move == "refresh_block":
        return _tr_block_refresh(point, ctx, rng, forced)
    return _tr_refresh(point, ctx, rng, forced)


# -- partially linear ----------------------------------------------------------


def _pl_rebuild(point: SparsePlusStep, support=None, beta=None, step=None):
    return SparsePlusStep(
        point.support if support is None else support,
        point.beta if beta is None else beta,
        point.step if step is None else step,
    )


def _pl_sup_birth(point: SparsePlusStep, ctx: _Ctx, rng, forced=None):
    s, p = point.s, ctx.prior.rate.p
    if s >= min(ctx.caps[0], p):
        return None
    g = ctx.prior.g
    unused = [j for j in range(p) if j not in point.support]
    if forced is None:
        j = int(unused[rng.integers(len(unused))])
        b = float(g.sample(rng))
    else:
        j, b = forced
    pos = sum(1 for v in point.support if v < j)
    support = point.support[:pos] + (j,) + point.support[pos:]
    beta = point.beta[:pos] + (b,) + point.beta[pos:]
    new = _pl_rebuild(point, support=support, beta=beta)
    half = math.log(0.5)
    lqf = ctx.move_logp["birth"] + half - math.log(p - s) + float(g.logpdf(b))
    lqr = ctx.move_logp["death"] + half - math.log(s + 1)
    return _Proposal(new, lqf, lqr, "sup_birth", "sup_death", j)


def _pl_sup_death(point: SparsePlusStep, ctx: _Ctx, rng, forced=None):
    s, p = point.s, ctx.prior.rate.p
    if s <= 1:
        return None
    g = ctx.prior.g
    if forced is None:
        pos = int(rng.integers(s))
    else:
        pos = point.support.index(forced)
    j, b = point.support[pos], point.beta[pos]
    support = point.support[:pos] + point.support[pos + 1 :]
    beta = point.beta[:pos] + point.beta[pos + 1 :]
    new = _pl_rebuild(point, support=support, beta=beta)
    half = math.log(0.5)
    lqf = ctx.move_logp["death"] + half - math.log(s)
    lqr = ctx.move_logp["birth"] + half - math.log(p - (s - 1)) + float(g.logpdf(b))
    return _Proposal(new, lqf, lqr, "sup_death", "sup_birth", (j, b))


def _pl_sup_swap(point: SparsePlusStep, ctx: _Ctx, rng, forced=None):
    s, p = point.s, ctx.prior.rate.p
    if s >= p:
        return None
    unused = [j for j in range(p) if j not in point.support]
    if forced is None:
        i = int(rng.integers(s))
        a = point.support[i]
        j = int(unused[rng.integers(len(unused))])
    else:
        a, j = forced
        i = point.support.index(a)
    b = point.beta[i]
    pairs = sorted(
        [(v, point.beta[k]) for k, v in enumerate(point.support) if v != a] + [(j, b)]
    )
    new = _pl_rebuild(
        point,
        support=tuple(v for v, _ in pairs),
        beta=tuple(bb for _, bb in pairs),
    )
    lq = ctx.move_logp["move"] + math.log(0.5) - math.log(s) - math.log(p - s)
    return _Proposal(new, lq, lq, "sup_swap", "sup_swap", (j, a))


def _pl_beta_rw(point: SparsePlusStep, ctx: _Ctx, rng, forced=None):
    s = point.s
    if forced is None:
        i = int(rng.integers(s))
        b = point.beta[i] + ctx.scales["beta"] * rng.standard_normal()
    else:
        i, b = forced
    old = point.beta[i]
    beta = point.beta[:i] + (float(b),) + point.beta[i + 1 :]
    new = _pl_rebuild(point, beta=beta)
    lq = ctx.move_logp["refresh"] + math.log(0.5)
    return _Proposal(new, lq, lq, "beta_rw", "beta_rw", (i, old))


def _pl_wrap_iso(point: SparsePlusStep, prop: _Proposal | None, extra_logp: float):
    if prop is None:
        return None
    return _Proposal(
        _pl_rebuild(point, step=prop.point),
        prop.log_q_fwd + extra_logp,
        prop.log_q_rev + extra_logp,
        "step_" + prop.label,
        "step_" + prop.reverse_label,
        prop.reverse_choice,
    )


def _pl_propose(point, ctx, rng, move, forced=None):
    """Direct sub-move dispatch by name (the audit's entry point)."""
    half = math.log(0.5)
    if move == "sup_birth":
        return _pl_sup_birth(point, ctx, rng, forced)
    if move == "sup_death":
        return _pl_sup_death(point, ctx, rng, forced)
    if move == "sup_swap":
        return _pl_sup_swap(point, ctx, rng, forced)
    if move == "beta_rw":
        return _pl_beta_rw(point, ctx, rng, forced)
    sub = move[len("step_") :]
    return _pl_wrap_iso(point, _iso_propose(point.step, ctx, rng, sub, forced), half)


def _pl_resolve(point, ctx, rng, move):
    """Map a top-level move to a linear-part or step-part sub-move by a fair
    coin, mirroring the 0.5 selection factor carried in the densities."""
    linear = rng.random() < 0.5
    if move == "birth":
        if linear:
            label = "sup_birth"
        else:
            label = "step_birth" if rng.random() < 0.5 else "step_split"
    elif move == "death":
        if linear:
            label = "sup_death"
        else:
            label = "step_death" if rng.random() < 0.5 else "step_merge"
    elif move == "move":
        if linear:
            label = "sup_swap"
        else:
            label = "step_move" if rng.random() < 0.5 else "step_move_local"
    elif linear:
        label = "beta_rw"
    else:
        label = "step_refresh_rw" if rng.random() < 0.5 else "step_refresh_ind"
    return label, _pl_propose(point, ctx, rng, label)


# ---------------------------------------------------------------------------
# top-level proposal dispatch


def _choose_move(ctx, rng) -> str:
    u = rng.random()
    acc = 0.0
    for name in ("birth", "death", "move", "refresh"):
        acc += ctx.cfg.move_probs[name]
        if u < acc:
            return name
    return "refresh"


def _propose(point, ctx, rng, move):
    """Resolve the top-level move to a concrete sub-move; returns (label, prop)
    where prop is None for boundary or order-violation rejections."""
    app = ctx.app
    if app == App.ISO:
        cont = ctx.law.kind == "continuous"
        if move == "refresh":
            if cont:
                move = "refresh_rw" if rng.random() < 0.5 else "refresh_ind"
            else:
                move = "refresh_ind"
        elif move == "move":
            move = "move" if rng.random() < 0.5 else "move_local"
        elif move == "birth" and cont and rng.random() < 0.5:
            move = "split"
        elif move == "death" and cont and rng.random() < 0.5:
            move = "merge"
        return move, _iso_propose(point, ctx, rng, move)
    if app == App.CONVEX:
        label = "refresh_rw" if move == "refresh" else move
        return label, _cvx_propose(point, ctx, rng, move)
    if app == App.TRACE:
        if move == "refresh":
            move = "refresh_rw" if rng.random() < 0.5 else "refresh_block"
        elif move == "move":
            move = "replace"
        return move, _tr_propose(point, ctx, rng, move)
    return _pl_resolve(point, ctx, rng, move)


def _reverse_propose(prop: _Proposal, ctx, rng):
    """Drive the paired reverse move from prop.point back to the origin."""
    app = ctx.app
    label = prop.reverse_label
    if app == App.ISO:
        return _iso_propose(prop.point, ctx, rng, label, forced=prop.reverse_choice)
    if app == App.CONVEX:
        return _cvx_propose(prop.point, ctx, rng, label, forced=prop.reverse_choice)
    if app == App.TRACE:
        return _tr_propose(prop.point, ctx, rng, label, forced=prop.reverse_choice)
    return _pl_propose(prop.point, ctx, rng, label, forced=prop.reverse_choice)


# ---------------------------------------------------------------------------
# initialization


def _clip_levels(levels, exp: ExperimentSpec):
    from .experiments import ExperimentKind

    if exp.kind is ExperimentKind.BINARY_REG:
        lo, hi = exp.eta * 1.001, (1 - exp.eta) * 0.999
    elif exp.kind is ExperimentKind.POISSON_REG:
        lo, hi = 1.001 / exp.M, 0.999 * exp.M
    else:
        return levels
    return tuple(min(max(v, lo), hi) for v in levels)


def _snap_to_grid(levels, law):
    if law.kind != "grid":
        return levels
    vals = law.values
    return tuple(float(vals[np.argmin(np.abs(vals - v))]) for v in levels)


def _initial_point(ctx: _Ctx):
    app, n = ctx.app, ctx.n
    y = np.asarray(ctx.data.values, dtype=float)
    if app == App.ISO:
        step, _ = best_approx_iso(y, 1)
        levels = _snap_to_grid(_clip_levels(step.levels, ctx.exp), ctx.law)
        return StepFunction(step.change_indices, levels)
    if app == App.CONVEX:
        X = np.asarray(ctx.design, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        Z = np.column_stack([X, np.ones(len(X))])
        coef, *_ = np.linalg.lstsq(Z, y, rcond=None)
        return MaxAffine(((tuple(coef[:-1]), float(coef[-1])),))
    if app == App.TRACE:
        R = np.einsum("n,nij->ij", y, ctx.design) / n
        U, s, Vt = np.linalg.svd(R)
        s0 = math.sqrt(max(s[0], 1e-8))
        return FactorMatrix((s0 * U[:, 0])[None, :], (s0 * Vt[0])[None, :])
    # partially linear: strongest single covariate by correlation, then a
    # constant step on the residual
    X = np.asarray(ctx.design, dtype=float)
    j = int(np.argmax(np.abs(X.T @ y)))
    beta = float(X[:, j] @ y / max(X[:, j] @ X[:, j], 1e-12))
    resid = y - beta * X[:, j]
    step, _ = best_approx_iso(resid, 1)
    levels = _snap_to_grid(_clip_levels(step.levels, ctx.exp), ctx.law)
    return SparsePlusStep((j,), (beta,), StepFunction(step.change_indices, levels))


# ---------------------------------------------------------------------------
# the chain


@dataclass(frozen=True)
class Chain:
    app: str
    draws: tuple
    log_posterior: np.ndarray
    acceptance: dict
    proposed: dict
    tuned_scales: dict
    n_iter: int
    burn_in: int
    thin: int
    seed: int

    def indices(self) -> list[tuple[int, ...]]:
        return [idx for idx, _ in self.draws]

    def points(self) -> list:
        return [pt for _, pt in self.draws]


_TUNE_WINDOW = 50
_TUNE_LO, _TUNE_HI = 0.25, 0.40
_SCALE_FOR_LABEL = {
    "refresh_rw": {"Iso": "level", "Convex": "plane", "Trace": "factor"},
    "step_refresh_rw": {"PartialLinear": "level"},
    "beta_rw": {"PartialLinear": "beta"},
}


def _scale_key(app: str, label: str):
    table = _SCALE_FOR_LABEL.get(label)
    return table.get(app) if table else None


def run_rjmcmc(
    app: str,
    exp: ExperimentSpec,
    data: Dataset,
    prior: TwoStepPrior,
    cfg: SamplerConfig,
    chain_id: int = 0,
) -> Chain:
    """One reversible-jump chain targeting the two-step posterior."""
    ctx = _Ctx(app, exp, data, prior, cfg)
    rng = stream(cfg.seed, "rjmcmc", app, chain_id)
    point = _initial_point(ctx)
    lp = ctx.log_post(point)
    if not math.isfinite(lp):
        raise NonFiniteLogPosterior(f"initial state has log posterior {lp}: {point!r}")

    draws = []
    lp_trace = []
    accepted: dict[str, int] = {}
    proposed: dict[str, int] = {}
    window: dict[str, list[int]] = {}

    for it in range(cfg.n_iter):
        move = _choose_move(ctx, rng)
        label, prop = _propose(point, ctx, rng, move)
        proposed[label] = proposed.get(label, 0) + 1
        ok = False
        if prop is not None:
            lp2 = ctx.log_post(prop.point)
            if lp2 > -math.inf:
                log_alpha = (lp2 - lp) + (prop.log_q_rev - prop.log_q_fwd)
                if log_alpha >= 0 or math.log(rng.random()) < log_alpha:
                    point, lp = prop.point, lp2
                    ok = True
        if ok:
            accepted[label] = accepted.get(label, 0) + 1

        in_burn = it < cfg.burn_in
        if cfg.tune and in_burn and prop is not None:
            key = _scale_key(app, label)
            if key is not None:
                window.setdefault(key, []).append(1 if ok else 0)
                w = window[key]
                if len(w) >= _TUNE_WINDOW:
                    rate = sum(w) / len(w)
                    if rate > _TUNE_HI:
                        ctx.scales[key] *= 1.2
                    elif rate < _TUNE_LO:
                        ctx.scales[key] /= 1.2
                    window[key] = []
        if not in_burn and (it - cfg.burn_in) % cfg.thin == 0:
            draws.append((ctx.model_index(point), point))
            lp_trace.append(lp)

    acc_rate = {k: accepted.get(k, 0) / v for k, v in proposed.items()}
    return Chain(
        app=app,
        draws=tuple(draws),
        log_posterior=np.asarray(lp_trace),
        acceptance=acc_rate,
        proposed=dict(proposed),
        tuned_scales=dict(ctx.scales),
        n_iter=cfg.n_iter,
        burn_in=cfg.burn_in,
        thin=cfg.thin,
        seed=cfg.seed,
    )


def posterior_mean(chain: Chain, exp: ExperimentSpec, data: Dataset | None = None) -> np.ndarray:
    """Pointwise average of fitted values over the recorded draws."""
    if not chain.draws:
        raise EmptyChain("no recorded draws")
    n = data.n if data is not None else exp.n
    if n is None:
        raise KindMismatch("posterior_mean needs the design size n")
    total = np.zeros(n)
    for _, pt in chain.draws:
        total += fitted_values(pt, n, exp.design)
    return total / len(chain.draws)


# ---------------------------------------------------------------------------
# state keys (canonical hashable forms, used by audits and oracle comparisons)


def state_key(point):
    if isinstance(point, StepFunction):
        return ("iso", point.change_indices, point.levels)
    if isinstance(point, MaxAffine):
        return ("cvx", point.planes)
    if isinstance(point, FactorMatrix):
        return (
            "tr",
            tuple(tuple(row) for row in point.us),
            tuple(tuple(row) for row in point.vs),
        )
    if isinstance(point, SparsePlusStep):
        return ("pl", point.support, point.beta, point.step.change_indices, point.step.levels)
    raise KindMismatch(f"no state key for {type(point).__name__}")


# ---------------------------------------------------------------------------
# exact enumeration oracle


@dataclass(frozen=True)
class PosteriorTable:
    entries: tuple          # of (index, point, log_prob, prob)
    log_norm: float

    def prob_of(self, point) -> float:
        key = state_key(point)
        for _, pt, _, pr in self.entries:
            if state_key(pt) == key:
                return pr
        return 0.0

    def as_dict(self) -> dict:
        return {state_key(pt): pr for _, pt, _, pr in self.entries}

    def mean_fit(self, exp: ExperimentSpec, n: int) -> np.ndarray:
        out = np.zeros(n)
        for _, pt, _, pr in self.entries:
            out += pr * fitted_values(pt, n, exp.design)
        return out


_ENUM_GUARD = 10**7


def _iso_states(n, m_max, grid_m):
    for m in range(1, min(m_max, n) + 1):
        for ci in combinations(range(n), m):
            for lv in combinations_with_replacement(grid_m, m):
                yield (m,), StepFunction(ci, lv)


def _count_iso_states(n, m_max, G):
    total = 0
    for m in range(1, min(m_max, n) + 1):
        total += math.comb(n, m) * math.comb(G + m - 1, m)
    return total


def enumerate_posterior(
    exp: ExperimentSpec,
    data: Dataset,
    grid: GridSpec,
    prior: TwoStepPrior,
) -> PosteriorTable:
    """Direct posterior summation over a finite discretized parameter set.

    Applies to Iso (gridded levels), PartialLinear (gridded beta and levels),
    and Trace (gridded factor coordinates).  The discrete within-model law
    matches the grid-restricted sampler exactly.
    """
    if data.n < 1:
        raise LengthMismatch("enumeration needs n >= 1 observations")
    n = data.n
    app = prior.rate.app
    law = _GridLevels(grid, prior.g)
    log_lam = log_model_weights(prior, n)
    G = len(grid.levels)

    states = []
    if app == App.ISO:
        m_max = prior.m_max[0]
        if _count_iso_states(n, m_max, G) > _ENUM_GUARD:
            raise StateSpaceTooLarge("iso enumeration exceeds the state guard")
        gen = _iso_states(n, m_max, grid.levels)
    elif app == App.TRACE:
        r_max = min(prior.m_max[0], prior.rate.m1, prior.rate.m2)
        dim = prior.rate.m1 + prior.rate.m2
        total = sum(G ** (r * dim) for r in range(1, r_max + 1))
        if total > _ENUM_GUARD:
            raise StateSpaceTooLarge("trace enumeration exceeds the state guard")

        def tr_gen():
            m1, m2 = prior.rate.m1, prior.rate.m2
            for r in range(1, r_max + 1):
                for flat in product(grid.levels, repeat=r * (m1 + m2)):
                    arr = np.asarray(flat)
                    us = arr[: r * m1].reshape(r, m1)
                    vs = arr[r * m1 :].reshape(r, m2)
                    yield (r,), FactorMatrix(us, vs)

        gen = tr_gen()
    elif app == App.PARTIAL_LINEAR:
        p = prior.rate.p
        s_max, m_max = prior.m_max
        total = 0
        for s in range(1, min(s_max, p) + 1):
            for m in range(1, min(m_max, n) + 1):
                total += math.comb(p, s) * (G**s) * math.comb(n, m) * math.comb(G + m - 1, m)
        if total > _ENUM_GUARD:
            raise StateSpaceTooLarge("partially linear enumeration exceeds the state guard")

        def pl_gen():
            for s in range(1, min(s_max, p) + 1):
                for sup in combinations(range(p), s):
                    for beta in product(grid.levels, repeat=s):
                        for (m,), step in _iso_states(n, m_max, grid.levels):
                            yield (s, m), SparsePlusStep(sup, beta, step)

        gen = pl_gen()
    else:
        raise KindMismatch(f"no enumeration for application {app!r}")

    log_w = []
    for idx, pt in gen:
        lw = log_lam.get(idx)
        if lw is None:
            continue
        if app == App.ISO:
            lp = -log_binom(n, pt.m) + law.sorted_logdensity(pt.levels)
        elif app == App.TRACE:
            flat = np.concatenate([pt.us.ravel(), pt.vs.ravel()])
            lp = float(sum(law.logpdf_one(float(v)) for v in flat))
        else:
            lp = (
                -log_binom(prior.rate.p, pt.s)
                + sum(law.logpdf_one(float(b)) for b in pt.beta)
                - log_binom(n, pt.step.m)
                + law.sorted_logdensity(pt.step.levels)
            )
        try:
            ll = log_likelihood(exp, pt, data)
        except (ConstraintViolation, FactorizationFailure):
            ll = -math.inf
        states.append((idx, pt))
        log_w.append(lw + lp + ll)

    log_w = np.asarray(log_w)
    z = float(logsumexp(log_w))
    probs = np.exp(log_w - z)
    entries = tuple(
        (idx, pt, float(lw - z), float(pr))
        for (idx, pt), lw, pr in zip(states, log_w, probs)
    )
    return PosteriorTable(entries=entries, log_norm=z)


# ---------------------------------------------------------------------------
# reversibility audit


@dataclass(frozen=True)
class AuditReport:
    app: str
    n_states: int
    max_abs_log_error: float
    move_counts: dict
    passed: bool


def _random_state(ctx: _Ctx, rng):
    from .priors import sample_within_model

    idx_set = ctx.prior.index_set()
    while True:
        idx = idx_set[rng.integers(len(idx_set))]
        if ctx.app == App.ISO and idx[0] > ctx.n:
            continue
        if ctx.app == App.PARTIAL_LINEAR and (idx[0] > ctx.prior.rate.p or idx[1] > ctx.n):
            continue
        if ctx.app == App.TRACE and idx[0] > min(ctx.prior.rate.m1, ctx.prior.rate.m2):
            continue
        pt = sample_within_model(ctx.prior, idx, n=ctx.n, seed=rng)
        if ctx.law.kind == "grid":
            if ctx.app != App.ISO:
                raise ConfigError("grid audits only run on Iso")
            pt = StepFunction(pt.change_indices, tuple(sorted(_snap_to_grid(pt.levels, ctx.law))))
        return pt


_AUDIT_MOVES = {
    App.ISO: (
        "birth",
        "death",
        "split",
        "merge",
        "move",
        "move_local",
        "refresh_rw",
        "refresh_ind",
    ),
    App.CONVEX: ("birth", "death", "refresh_rw"),
    App.TRACE: ("birth", "death", "replace", "refresh_rw", "refresh_block"),
    App.PARTIAL_LINEAR: (
        "sup_birth",
        "sup_death",
        "sup_swap",
        "beta_rw",
        "step_birth",
        "step_death",
        "step_split",
        "step_merge",
        "step_move",
        "step_move_local",
        "step_refresh_rw",
        "step_refresh_ind",
    ),
}


def _keys_close(a, b, rel: float = 1e-9) -> bool:
    """Structural key equality; structure and integers exact, floats to a few
    ulp (split/merge reconstruct levels arithmetically, everything else is
    bitwise)."""
    if type(a) is not type(b):
        return False
    if isinstance(a, tuple):
        return len(a) == len(b) and all(_keys_close(x, y, rel) for x, y in zip(a, b))
    if isinstance(a, float):
        return math.isclose(a, b, rel_tol=rel, abs_tol=1e-300)
    return a == b


def _audit_propose(point, ctx, rng, move):
    if ctx.app == App.ISO:
        if ctx.law.kind == "grid" and move in ("refresh_rw", "split", "merge"):
            move = "refresh_ind"
        return _iso_propose(point, ctx, rng, move)
    if ctx.app == App.CONVEX:
        return _cvx_propose(point, ctx, rng, move)
    if ctx.app == App.TRACE:
        return _tr_propose(point, ctx, rng, move)
    return _pl_propose(point, ctx, rng, move)


def reversibility_audit(
    app: str,
    exp: ExperimentSpec,
    data: Dataset,
    prior: TwoStepPrior,
    cfg: SamplerConfig | None = None,
    n_states: int = 1000,
    seed: int = 0,
) -> AuditReport:
    """Forward/reverse acceptance-ratio consistency on random states.

    For each sampled transition s -> s' the paired reverse move is driven back
    deterministically; the check asserts (log domain, from-scratch posteriors)
    that the product of forward and reverse acceptance ratios is 1 and that
    each side's acceptance ratio equals the posterior ratio once its proposal
    ratio is stripped, to 1e-10.  Death bookkeeping is written independently
    of birth's claimed reverse density, so agreement is informative.
    """
    if cfg is None:
        cfg = default_config(app, seed=seed)
    ctx = _Ctx(app, exp, data, prior, cfg)
    rng = stream(seed, "audit", app)
    moves = _AUDIT_MOVES[app]
    worst = 0.0
    counts: dict[str, int] = {}
    done = 0
    while done < n_states:
        point = _random_state(ctx, rng)
        move = moves[rng.integers(len(moves))]
        prop = _audit_propose(point, ctx, rng, move)
        if prop is None:
            continue
        lp1 = ctx.log_post(point)
        lp2 = ctx.log_post(prop.point)
        if not (math.isfinite(lp1) and math.isfinite(lp2)):
            continue
        back = _reverse_propose(prop, ctx, rng)
        if back is None or not _keys_close(state_key(back.point), state_key(point)):
            worst = math.inf
            counts[prop.label] = counts.get(prop.label, 0) + 1
            done += 1
            continue
        a_fwd = (lp2 - lp1) + (prop.log_q_rev - prop.log_q_fwd)
        a_rev = (lp1 - lp2) + (back.log_q_rev - back.log_q_fwd)
        err = abs(a_fwd + a_rev)
        # bookkeeping mirrors: the reverse move's own forward density must
        # equal the forward move's claimed reverse density, and vice versa
        err = max(err, abs(back.log_q_fwd - prop.log_q_rev))
        err = max(err, abs(back.log_q_rev - prop.log_q_fwd))
        worst = max(worst, err)
        counts[prop.label] = counts.get(prop.label, 0) + 1
        done += 1
    return AuditReport(
        app=app,
        n_states=n_states,
        max_abs_log_error=float(worst),
        move_counts=counts,
        passed=bool(worst <= AUDIT_TOL),
    )


# ---------------------------------------------------------------------------
# chain serialization


def export_chain_csv(chain: Chain, path) -> None:
    path = Path(path)
    q = len(chain.draws[0][0]) if chain.draws else 1
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration"] + [f"m{i + 1}" for i in range(q)] + ["log_posterior"])
        for i, ((idx, _), lp) in enumerate(zip(chain.draws, chain.log_posterior)):
            w.writerow([i] + list(idx) + ["%.17g" % lp])


def _point_payload(point) -> dict:
    if isinstance(point, StepFunction):
        return {
            "type": "step",
            "change_indices": list(point.change_indices),
            "levels": list(point.levels),
        }
    if isinstance(point, MaxAffine):
        return {"type": "max_affine", "planes": [[list(a), b] for a, b in point.planes]}
    if isinstance(point, FactorMatrix):
        return {
            "type": "factor",
            "us": [list(r) for r in point.us],
            "vs": [list(r) for r in point.vs],
        }
    if isinstance(point, SparsePlusStep):
        return {
            "type": "sparse_plus_step",
            "support": list(point.support),
            "beta": list(point.beta),
            "step": _point_payload(point.step),
        }
    raise KindMismatch(f"cannot serialize {type(point).__name__}")


def _point_from_payload(d: dict):
    t = d["type"]
    if t == "step":
        return StepFunction(tuple(d["change_indices"]), tuple(d["levels"]))
    if t == "max_affine":
        return MaxAffine(tuple((tuple(a), b) for a, b in d["planes"]))
    if t == "factor":
        return FactorMatrix(np.asarray(d["us"]), np.asarray(d["vs"]))
    if t == "sparse_plus_step":
        return SparsePlusStep(
            tuple(d["support"]), tuple(d["beta"]), _point_from_payload(d["step"])
        )
    raise KindMismatch(f"unknown point payload type {t!r}")


def export_chain_jsonl(chain: Chain, path) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for i, ((idx, pt), lp) in enumerate(zip(chain.draws, chain.log_posterior)):
            rec = {
                "iteration": i,
                "index": list(idx),
                "log_posterior": float(lp),
                "point": _point_payload(pt),
            }
            fh.write(dumps_17g(rec) + "\n")


def load_chain_jsonl(path) -> list:
    out = []
    with Path(path).open() as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            out.append((tuple(rec["index"]), _point_from_payload(rec["point"])))
    return out
