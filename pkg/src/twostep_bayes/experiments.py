"""Statistical experiments: likelihoods, KL divergences, intrinsic metrics, data.

Seven experiment kinds are supported.  Signal-vector kinds (Gaussian, binary,
Poisson regression) accept raw length-n vectors, scalars, or structured
parameter points (see params.py).  The remaining kinds use their natural
representations:

  DensityEst       g values on the fixed [0,1] grid (density f = e^g / int e^g)
  GaussAutoReg     a callable f with |f| <= M (metric and sampling only; the
                   KL against the stationary law has no closed form)
  GaussTimeSeries  an even callable g on [-pi, pi], spectral density f = e^g
  CovarianceEst    a (p, p) SPD matrix with spectrum in [1/L, L]

Log-likelihoods omit additive terms that do not depend on the parameter;
posterior ratios are unaffected.  The autoregression likelihood conditions on
the initial state X_0 (its stationary density has no closed form), matching
the log-likelihood-ratio used everywhere downstream.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import linalg as sla

from .errors import (
    ConstraintViolation,
    FactorizationFailure,
    InsufficientGrid,
    KindMismatch,
    LengthMismatch,
    QuadratureFailure,
    UnsupportedKind,
)
from .params import fitted_values
from .rng import stream

__all__ = [
    "ExperimentKind",
    "ExperimentSpec",
    "Dataset",
    "log_likelihood",
    "kl_divergence",
    "intrinsic_metric_sq",
    "sample_data",
    "toeplitz_cov",
    "dataset_to_csv",
    "dataset_from_csv",
]


class ExperimentKind(str, Enum):
    GAUSSIAN_REG = "GaussianReg"
    BINARY_REG = "BinaryReg"
    POISSON_REG = "PoissonReg"
    DENSITY_EST = "DensityEst"
    GAUSS_AUTOREG = "GaussAutoReg"
    GAUSS_TIME_SERIES = "GaussTimeSeries"
    COVARIANCE_EST = "CovarianceEst"


_SIGNAL_KINDS = (
    ExperimentKind.GAUSSIAN_REG,
    ExperimentKind.BINARY_REG,
    ExperimentKind.POISSON_REG,
)


@dataclass(frozen=True)
class ExperimentSpec:
    """Immutable experiment description: kind, design, constraint constants."""

    kind: ExperimentKind
    n: int | None = None                   # design size / path length where fixed
    design: np.ndarray | None = field(default=None, repr=False)
    eta: float | None = None               # binary box [eta, 1-eta]
    M: float | None = None                 # Poisson box [1/M, M]; autoreg bound |f| <= M
    L: float | None = None                 # covariance spectrum in [1/L, L]
    p: int | None = None                   # covariance dimension
    grid_n: int = 1024                     # density-estimation quadrature nodes on [0,1]
    quad_n: int = 2048                     # time-series spectral quadrature nodes
    gh_n: int = 64                         # autoregression Gauss-Hermite nodes

    def __post_init__(self):
        if self.design is not None:
            d = np.asarray(self.design, dtype=float).copy()
            d.flags.writeable = False
            object.__setattr__(self, "design", d)
            if self.n is None:
                object.__setattr__(self, "n", d.shape[0])
            elif self.n != d.shape[0]:
                raise LengthMismatch("n disagrees with design length")

    # -- factories ---------------------------------------------------------

    @classmethod
    def gaussian(cls, n: int | None = None, design=None) -> "ExperimentSpec":
        return cls(ExperimentKind.GAUSSIAN_REG, n=n, design=design)

    @classmethod
    def binary(cls, n: int, eta: float = 0.1, design=None) -> "ExperimentSpec":
        if not 0 < eta < 0.5:
            raise ConstraintViolation(f"eta must be in (0, 1/2), got {eta}")
        return cls(ExperimentKind.BINARY_REG, n=n, eta=eta, design=design)

    @classmethod
    def poisson(cls, n: int, M: float = 4.0, design=None) -> "ExperimentSpec":
        if M < 1:
            raise ConstraintViolation(f"M must be >= 1, got {M}")
        return cls(ExperimentKind.POISSON_REG, n=n, M=M, design=design)

    @classmethod
    def density(cls, grid_n: int = 1024) -> "ExperimentSpec":
        if grid_n < 16:
            raise InsufficientGrid(f"density grid needs >= 16 nodes, got {grid_n}")
        return cls(ExperimentKind.DENSITY_EST, grid_n=grid_n)

    @classmethod
    def autoreg(cls, M: float = 2.0, gh_n: int = 64) -> "ExperimentSpec":
        return cls(ExperimentKind.GAUSS_AUTOREG, M=M, gh_n=gh_n)

    @classmethod
    def time_series(cls, n: int, quad_n: int = 2048) -> "ExperimentSpec":
        return cls(ExperimentKind.GAUSS_TIME_SERIES, n=n, quad_n=quad_n)

    @classmethod
    def covariance(cls, p: int, L: float = 4.0) -> "ExperimentSpec":
        if L < 1:
            raise ConstraintViolation(f"L must be >= 1, got {L}")
        return cls(ExperimentKind.COVARIANCE_EST, p=p, L=L)

    # -- grids -------------------------------------------------------------

    def density_grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.grid_n)


@dataclass(frozen=True)
class Dataset:
    """Observations, with the seed that produced them (None for external data)."""

    kind: ExperimentKind
    n: int
    values: np.ndarray = field(repr=False)
    seed: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values)
        expected = self.n + 1 if self.kind is ExperimentKind.GAUSS_AUTOREG else self.n
        if v.shape[0] != expected:
            raise LengthMismatch(
                f"{self.kind.value} dataset needs leading dimension {expected}, got {v.shape[0]}"
            )
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


# ---------------------------------------------------------------------------
# parameter coercion / constraint checks


def _signal(exp: ExperimentSpec, f) -> np.ndarray:
    if exp.n is None:
        raise KindMismatch("experiment has no fixed design size n")
    theta = fitted_values(f, exp.n, exp.design)
    if exp.kind is ExperimentKind.BINARY_REG:
        if np.any(theta < exp.eta) or np.any(theta > 1 - exp.eta):
            raise ConstraintViolation(f"binary signal outside [{exp.eta}, {1 - exp.eta}]")
    elif exp.kind is ExperimentKind.POISSON_REG:
        if np.any(theta < 1 / exp.M) or np.any(theta > exp.M):
            raise ConstraintViolation(f"Poisson signal outside [{1 / exp.M}, {exp.M}]")
    return theta


def _density_g(exp: ExperimentSpec, f) -> np.ndarray:
    grid = exp.density_grid()
    g = f(grid) if callable(f) else np.asarray(f, dtype=float)
    g = np.broadcast_to(np.asarray(g, dtype=float), grid.shape).astype(float)
    if not np.all(np.isfinite(g)):
        raise ConstraintViolation("density log-tilt g must be finite on the grid")
    return g


def _density_f(exp: ExperimentSpec, f) -> np.ndarray:
    g = _density_g(exp, f)
    grid = exp.density_grid()
    w = np.exp(g - g.max())
    z = np.trapezoid(w, grid)
    if not np.isfinite(z) or z <= 0:
        raise QuadratureFailure("density normalizer is not finite and positive")
    return w / z


def _ar_f(exp: ExperimentSpec, f):
    if not callable(f):
        raise KindMismatch("autoregression parameters must be callables")
    return f


def _ts_g(exp: ExperimentSpec, f):
    if callable(f):
        return f
    if np.isscalar(f):
        c = float(f)
        return lambda lam: np.full_like(np.asarray(lam, dtype=float), c)
    raise KindMismatch("time-series parameters must be callables or scalars")


def _cov_sigma(exp: ExperimentSpec, f) -> np.ndarray:
    S = np.asarray(f, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise KindMismatch("covariance parameter must be a square matrix")
    if exp.p is not None and S.shape[0] != exp.p:
        raise KindMismatch(f"covariance must be {exp.p}x{exp.p}")
    if not np.allclose(S, S.T, atol=1e-10):
        raise KindMismatch("covariance must be symmetric")
    ev = np.linalg.eigvalsh(S)
    if exp.L is not None and (ev.min() < 1 / exp.L - 1e-12 or ev.max() > exp.L + 1e-12):
        raise ConstraintViolation(f"spectrum {ev.min():.4g}..{ev.max():.4g} outside [1/L, L]")
    if ev.min() <= 0:
        raise ConstraintViolation("covariance must be positive definite")
    return S


# ---------------------------------------------------------------------------
# log-likelihood


def log_likelihood(exp: ExperimentSpec, f, data: Dataset) -> float:
    """log p_f(data), omitting additive terms that do not depend on f."""
    if data.kind is not exp.kind:
        raise KindMismatch(f"data kind {data.kind.value} != experiment kind {exp.kind.value}")
    k = exp.kind
    if k is ExperimentKind.GAUSSIAN_REG:
        theta = _signal(exp, f)
        y = data.values
        return float(-0.5 * np.sum((y - theta) ** 2))
    if k is ExperimentKind.BINARY_REG:
        theta = _signal(exp, f)
        x = data.values
        return float(np.sum(x * np.log(theta) + (1 - x) * np.log1p(-theta)))
    if k is ExperimentKind.POISSON_REG:
        theta = _signal(exp, f)
        x = data.values
        return float(np.sum(x * np.log(theta) - theta))
    if k is ExperimentKind.DENSITY_EST:
        fv = _density_f(exp, f)
        grid = exp.density_grid()
        logf = np.log(fv)
        return float(np.sum(np.interp(data.values, grid, logf)))
    if k is ExperimentKind.GAUSS_AUTOREG:
        fn = _ar_f(exp, f)
        x = data.values
        pred = np.asarray(fn(x[:-1]), dtype=float)
        if np.any(np.abs(pred) > exp.M + 1e-9):
            raise ConstraintViolation(f"|f| exceeds M={exp.M} on the observed path")
        return float(-0.5 * np.sum((x[1:] - pred) ** 2))
    if k is ExperimentKind.GAUSS_TIME_SERIES:
        T = toeplitz_cov(_ts_g(exp, f), data.n, quad_n=exp.quad_n)
        try:
            c, low = sla.cho_factor(T, lower=True)
        except np.linalg.LinAlgError as e:
            raise FactorizationFailure(str(e)) from e
        alpha = sla.cho_solve((c, low), data.values)
        logdet = 2.0 * np.sum(np.log(np.diag(c)))
        return float(-0.5 * data.values @ alpha - 0.5 * logdet)
    if k is ExperimentKind.COVARIANCE_EST:
        S = _cov_sigma(exp, f)
        X = np.atleast_2d(data.values)
        try:
            c, low = sla.cho_factor(S, lower=True)
        except np.linalg.LinAlgError as e:
            raise FactorizationFailure(str(e)) from e
        sol = sla.cho_solve((c, low), X.T)
        logdet = 2.0 * np.sum(np.log(np.diag(c)))
        return float(-0.5 * np.sum(X.T * sol) - 0.5 * data.n * logdet)
    raise UnsupportedKind(k.value)


# ---------------------------------------------------------------------------
# KL divergence (closed forms; density kind by quadrature)


def _gauss_cov_kl(S0: np.ndarray, S1: np.ndarray) -> float:
    # KL(N(0,S0) || N(0,S1)) = -1/2 tr(I - S0 S1^{-1}) - 1/2 logdet(S0 S1^{-1})
    p = S0.shape[0]
    sol = np.linalg.solve(S1, S0)
    sign, logdet = np.linalg.slogdet(sol)
    if sign <= 0:
        raise FactorizationFailure("S0 S1^{-1} has nonpositive determinant")
    return float(0.5 * (np.trace(sol) - p - logdet))


def kl_divergence(exp: ExperimentSpec, f0, f1, n: int) -> float:
    """P_{f0}^{(n)} log(p_{f0}/p_{f1}); closed form per kind."""
    k = exp.kind
    if k in _SIGNAL_KINDS and exp.n is not None and n != exp.n:
        raise LengthMismatch(f"n={n} disagrees with the fixed design size {exp.n}")
    if k is ExperimentKind.GAUSSIAN_REG:
        t0, t1 = _signal(exp, f0), _signal(exp, f1)
        return float(0.5 * np.sum((t0 - t1) ** 2))
    if k is ExperimentKind.BINARY_REG:
        t0, t1 = _signal(exp, f0), _signal(exp, f1)
        return float(
            np.sum(t0 * np.log(t0 / t1) + (1 - t0) * np.log((1 - t0) / (1 - t1)))
        )
    if k is ExperimentKind.POISSON_REG:
        t0, t1 = _signal(exp, f0), _signal(exp, f1)
        return float(np.sum(t0 * np.log(t0 / t1) + t1 - t0))
    if k is ExperimentKind.DENSITY_EST:
        fv0, fv1 = _density_f(exp, f0), _density_f(exp, f1)
        grid = exp.density_grid()
        val = np.trapezoid(fv0 * (np.log(fv0) - np.log(fv1)), grid)
        if not np.isfinite(val):
            raise QuadratureFailure("KL quadrature produced a non-finite value")
        return float(n * val)
    if k is ExperimentKind.GAUSS_AUTOREG:
        raise UnsupportedKind(
            "autoregression KL against the stationary law has no closed form; "
            "this kind supports metric and sampling checks only"
        )
    if k is ExperimentKind.GAUSS_TIME_SERIES:
        if exp.n is not None and n != exp.n:
            raise LengthMismatch(f"n={n} disagrees with the fixed path length {exp.n}")
        T0 = toeplitz_cov(_ts_g(exp, f0), n, quad_n=exp.quad_n)
        T1 = toeplitz_cov(_ts_g(exp, f1), n, quad_n=exp.quad_n)
        return _gauss_cov_kl(T0, T1)
    if k is ExperimentKind.COVARIANCE_EST:
        S0, S1 = _cov_sigma(exp, f0), _cov_sigma(exp, f1)
        return float(n) * _gauss_cov_kl(S0, S1)
    raise UnsupportedKind(k.value)


# ---------------------------------------------------------------------------
# intrinsic metric (squared)


def _gh_nodes(gh_n: int):
    # probabilists' Hermite: integrates against exp(-x^2/2)/sqrt(2 pi)
    x, w = np.polynomial.hermite_e.hermegauss(gh_n)
    return x, w / np.sqrt(2 * np.pi)


def intrinsic_metric_sq(exp: ExperimentSpec, f0, f1) -> float:
    k = exp.kind
    if k in _SIGNAL_KINDS:
        t0, t1 = _signal(exp, f0), _signal(exp, f1)
        return float(np.mean((t0 - t1) ** 2))
    if k is ExperimentKind.DENSITY_EST:
        fv0, fv1 = _density_f(exp, f0), _density_f(exp, f1)
        grid = exp.density_grid()
        return float(0.5 * np.trapezoid((np.sqrt(fv0) - np.sqrt(fv1)) ** 2, grid))
    if k is ExperimentKind.GAUSS_AUTOREG:
        fn0, fn1 = _ar_f(exp, f0), _ar_f(exp, f1)
        x, w = _gh_nodes(exp.gh_n)
        total = 0.0
        for center in (exp.M, -exp.M):
            d = np.asarray(fn0(x + center), dtype=float) - np.asarray(fn1(x + center), dtype=float)
            total += 0.5 * float(np.sum(w * d**2))
        if not np.isfinite(total):
            raise QuadratureFailure("autoregression metric quadrature diverged")
        return total
    if k is ExperimentKind.GAUSS_TIME_SERIES:
        if exp.n is None:
            raise KindMismatch("time-series experiment needs a fixed path length n")
        T0 = toeplitz_cov(_ts_g(exp, f0), exp.n, quad_n=exp.quad_n)
        T1 = toeplitz_cov(_ts_g(exp, f1), exp.n, quad_n=exp.quad_n)
        return float(np.sum((T0 - T1) ** 2) / exp.n)
    if k is ExperimentKind.COVARIANCE_EST:
        S0, S1 = _cov_sigma(exp, f0), _cov_sigma(exp, f1)
        return float(np.sum((S0 - S1) ** 2))
    raise UnsupportedKind(k.value)


# ---------------------------------------------------------------------------
# Toeplitz spectral covariance


def toeplitz_cov(g, n: int, quad_n: int = 2048) -> np.ndarray:
    """T_n(f) for f = exp(g), entries t_{k-l} = int_{-pi}^{pi} cos(lam j) f(lam) dlam.

    g must be even on [-pi, pi] (real symmetric spectral densities only).
    Quadrature is the periodic rectangle rule on [-pi, pi), which integrates
    trigonometric polynomials of degree < quad_n exactly.
    """
    if quad_n < 4 * max(n, 1):
        raise InsufficientGrid(f"quad_n={quad_n} too coarse for n={n} lags")
    if callable(g):
        gfun = g
    elif np.isscalar(g):
        c = float(g)
        gfun = lambda lam: np.full_like(np.asarray(lam, dtype=float), c)
    else:
        raise KindMismatch("spectral log-density g must be a callable or scalar")
    lam = -np.pi + 2 * np.pi * np.arange(quad_n) / quad_n
    fv = np.exp(np.asarray(gfun(lam), dtype=float))
    if not np.all(np.isfinite(fv)):
        raise QuadratureFailure("spectral density non-finite on the quadrature grid")
    wts = 2 * np.pi / quad_n
    lags = np.arange(n)
    t = wts * (np.cos(np.outer(lags, lam)) @ fv)
    return sla.toeplitz(t)


# ---------------------------------------------------------------------------
# data generation


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return stream(int(seed), "data")


def sample_data(exp: ExperimentSpec, f0, n: int, seed) -> Dataset:
    """Draw one dataset of size n under f0; deterministic given the seed."""
    if n < 1:
        raise LengthMismatch("n must be >= 1")
    rng = _as_rng(seed)
    seed_val = None if isinstance(seed, np.random.Generator) else int(seed)
    k = exp.kind
    if k in _SIGNAL_KINDS:
        if exp.n is not None and n != exp.n:
            raise LengthMismatch(f"n={n} disagrees with the fixed design size {exp.n}")
        theta = _signal(exp, f0)
        if k is ExperimentKind.GAUSSIAN_REG:
            vals = theta + rng.standard_normal(n)
        elif k is ExperimentKind.BINARY_REG:
            vals = (rng.random(n) < theta).astype(float)
        else:
            vals = rng.poisson(theta).astype(float)
        return Dataset(k, n, vals, seed_val)
    if k is ExperimentKind.DENSITY_EST:
        fv = _density_f(exp, f0)
        grid = exp.density_grid()
        cdf = np.concatenate([[0.0], np.cumsum((fv[1:] + fv[:-1]) / 2 * np.diff(grid))])
        cdf /= cdf[-1]
        u = rng.random(n)
        vals = np.interp(u, cdf, grid)
        return Dataset(k, n, vals, seed_val)
    if k is ExperimentKind.GAUSS_AUTOREG:
        fn = _ar_f(exp, f0)
        x = 0.0
        burn = rng.standard_normal(1000)
        for e in burn:
            x = float(fn(np.array([x]))[0]) + e
        path = np.empty(n + 1)
        path[0] = x
        eps = rng.standard_normal(n)
        for i in range(n):
            pred = float(fn(np.array([path[i]]))[0])
            if abs(pred) > exp.M + 1e-9:
                raise ConstraintViolation(f"|f| exceeds M={exp.M} along the sampled path")
            path[i + 1] = pred + eps[i]
        return Dataset(k, n, path, seed_val)
    if k is ExperimentKind.GAUSS_TIME_SERIES:
        T = toeplitz_cov(_ts_g(exp, f0), n, quad_n=exp.quad_n)
        try:
            c = np.linalg.cholesky(T)
        except np.linalg.LinAlgError:
            ev, U = np.linalg.eigh(T)
            if ev.min() <= 0:
                raise FactorizationFailure("T_n(f) is not positive definite")
            c = U * np.sqrt(ev)
        vals = c @ rng.standard_normal(n)
        return Dataset(k, n, vals, seed_val)
    if k is ExperimentKind.COVARIANCE_EST:
        S = _cov_sigma(exp, f0)
        c = np.linalg.cholesky(S)
        vals = rng.standard_normal((n, S.shape[0])) @ c.T
        return Dataset(k, n, vals, seed_val)
    raise UnsupportedKind(k.value)


# ---------------------------------------------------------------------------
# serialization: CSV of observations + JSON sidecar


def dataset_to_csv(ds: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        if ds.kind is ExperimentKind.COVARIANCE_EST:
            p = ds.values.shape[1]
            w.writerow([f"x{j + 1}" for j in range(p)])
            for row in ds.values:
                w.writerow([_fmt(v) for v in row])
        else:
            w.writerow(["x" if ds.kind is not ExperimentKind.GAUSSIAN_REG else "y"])
            for v in np.atleast_1d(ds.values):
                w.writerow([_fmt(v)])
    sidecar = {"kind": ds.kind.value, "n": ds.n, "seed": ds.seed}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def dataset_from_csv(path) -> Dataset:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    kind = ExperimentKind(sidecar["kind"])
    with path.open() as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise LengthMismatch(f"{path}: no data rows (line 1 is the header)")
    body = []
    for i, row in enumerate(rows[1:], start=2):
        try:
            body.append([float(v) for v in row])
        except ValueError as e:
            raise KindMismatch(f"{path}: line {i}: {e}") from e
    vals = np.asarray(body)
    if kind is not ExperimentKind.COVARIANCE_EST:
        vals = vals[:, 0]
    return Dataset(kind, int(sidecar["n"]), vals, sidecar.get("seed"))


def _fmt(x: float) -> str:
    return "%.17g" % float(x)
