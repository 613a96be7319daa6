"""Chain post-processing: intrinsic-metric risks, model-index concentration,
oracle benchmarks, and rate-vs-n contraction sweeps.

Everything here aggregates immutable chains; cells of a sweep are independent
given their derived seeds, so callers may fan them out to worker processes.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DomainError,
    EmptyChain,
    InsufficientGrid,
    KindMismatch,
    LengthMismatch,
    NonPositiveRisk,
)
from .experiments import ExperimentSpec, intrinsic_metric_sq, sample_data
from .params import FactorMatrix, MaxAffine, fitted_values
from .priors import (
    App,
    GSpec,
    RateSpec,
    TwoStepPrior,
    best_approx_iso,
    best_approx_rank,
    delta_sq,
)
from .rng import derive_seed, stream
from .samplers import Chain, SamplerConfig, default_config, posterior_mean, run_rjmcmc

__all__ = [
    "risk",
    "model_concentration",
    "rate_slope",
    "oracle_benchmark",
    "CellResult",
    "ContractionReport",
    "sweep_cell",
    "contraction_sweep",
    "report_to_jsonable",
    "report_csv_rows",
    "plot_rate_curve",
]


# ---------------------------------------------------------------------------
# pointwise quantities


def risk(fitted, f0, exp: ExperimentSpec) -> float:
    """Squared intrinsic distance between a fitted signal and the truth."""
    a = np.asarray(fitted, dtype=float)
    b = np.asarray(f0, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"fitted shape {a.shape} != truth shape {b.shape}")
    return intrinsic_metric_sq(exp, a, b)


def _as_index(m) -> tuple[int, ...]:
    if isinstance(m, (int, np.integer)):
        return (int(m),)
    return tuple(int(v) for v in m)


def model_concentration(chain: Chain, m_star, C3: float = 1.0) -> float:
    """Posterior mass outside the C3-inflated target model.

    Fraction of recorded draws whose index is NOT <= ceil(C3 * m_star)
    componentwise.
    """
    if C3 < 1:
        raise DomainError(f"C3 must be >= 1, got {C3}")
    if not chain.draws:
        raise EmptyChain("no recorded draws")
    target = _as_index(m_star)
    cut = tuple(math.ceil(C3 * t) for t in target)
    bad = 0
    for idx, _ in chain.draws:
        if len(idx) != len(cut):
            raise KindMismatch(f"chain index {idx} incompatible with m_star {target}")
        if any(i > c for i, c in zip(idx, cut)):
            bad += 1
    return bad / len(chain.draws)


def rate_slope(n_grid, risks) -> tuple[float, float]:
    """OLS slope of log(risk) on log(n), with its standard error."""
    n = np.asarray(n_grid, dtype=float)
    r = np.asarray(risks, dtype=float)
    if n.shape != r.shape:
        raise LengthMismatch(f"{n.shape[0]} sizes vs {r.shape[0]} risks")
    if n.shape[0] < 4:
        raise InsufficientGrid(f"slope fit needs >= 4 grid points, got {n.shape[0]}")
    if np.any(r <= 0) or not np.all(np.isfinite(r)):
        raise NonPositiveRisk("risks must be finite and > 0 for a log-log fit")
    x = np.log(n)
    y = np.log(r)
    xc = x - x.mean()
    sxx = float(np.sum(xc**2))
    slope = float(np.sum(xc * y) / sxx)
    resid = y - (y.mean() + slope * xc)
    dof = x.shape[0] - 2
    stderr = float(np.sqrt(np.sum(resid**2) / dof / sxx))
    return slope, stderr


# ---------------------------------------------------------------------------
# oracle benchmark


def _iso_approx_errors(f0, n: int, m_max: int):
    vals = fitted_values(f0, n)
    return [best_approx_iso(vals, m)[1] for m in range(1, m_max + 1)]


def _trace_approx_errors(f0, r_max: int):
    A0 = f0.matrix() if isinstance(f0, FactorMatrix) else np.asarray(f0, dtype=float)
    r_max = min(r_max, min(A0.shape))
    return [best_approx_rank(A0, r)[1] for r in range(1, r_max + 1)]


def _max_affine_fit(X, y, m: int, rng, restarts: int = 6, rounds: int = 25, seeds=()):
    """Alternating partition / least-squares fit; an upper bound on the best
    m-plane approximation error (restarts keep it tight, never exact)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    Z = np.hstack([X, np.ones((n, 1))])
    best = float(np.var(y))  # m=1 fallback: the affine LS below always beats this

    def run(assign):
        nonlocal best
        for _ in range(rounds):
            planes = np.empty((m, d + 1))
            for k in range(m):
                sel = assign == k
                if sel.sum() <= d:
                    planes[k] = 0.0
                    planes[k, -1] = y.min() - 1.0  # starved cell drops out
                    continue
                planes[k], *_ = np.linalg.lstsq(Z[sel], y[sel], rcond=None)
            pred_all = Z @ planes.T
            new = np.argmax(pred_all, axis=1)
            if np.array_equal(new, assign):
                break
            assign = new
        err = float(np.mean((pred_all.max(axis=1) - y) ** 2))
        best = min(best, err)

    for planes0 in seeds:
        run(np.argmax(Z @ np.asarray(planes0, dtype=float).T, axis=1))
    for _ in range(restarts):
        run(rng.integers(m, size=n))
    return best


def _convex_approx_errors(f0, n: int, m_max: int, design, rng):
    if design is None:
        raise KindMismatch("convex oracle benchmark needs the design")
    y = fitted_values(f0, n, design)
    X = np.asarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    errs = []
    for m in range(1, m_max + 1):
        seeds = []
        if isinstance(f0, MaxAffine) and f0.m <= m:
            own = [list(a) + [b] for a, b in f0.planes]
            seeds.append(own + [own[-1]] * (m - f0.m))
        errs.append(_max_affine_fit(X, y, m, rng, seeds=seeds))
    # F_m is nested, so the best upper bound is nonincreasing; enforce it
    for i in range(1, len(errs)):
        errs[i] = min(errs[i], errs[i - 1])
    return errs


def _pl_approx_error(y, X, s: int, m: int):
    n, p = X.shape
    s = min(s, p)
    step = np.zeros(n)
    sup = ()
    beta = np.zeros(0)
    for _ in range(3):
        resid = y - step
        coef, *_ = np.linalg.lstsq(X, resid, rcond=None)
        sup = np.argsort(-np.abs(coef))[:s]
        beta, *_ = np.linalg.lstsq(X[:, sup], resid, rcond=None)
        lin = X[:, sup] @ beta
        fit, _ = best_approx_iso(y - lin, m)
        step = fit.values(n)
    return float(np.mean((y - X[:, sup] @ beta - step) ** 2))


def oracle_benchmark(app: str, f0, n: int, rate: RateSpec, m_max, design=None, seed: int = 0):
    """Minimizer of approx_error(m) + delta^2_{n,m} over the truncated lattice.

    Returns (m_star, oracle_value); ties resolve to the smaller index.  The
    iso solver is exact, trace uses the SVD (Frobenius) surrogate, convex an
    alternating-fit upper bound, partially-linear an alternating heuristic.
    """
    caps = _as_index(m_max)
    if app == App.ISO:
        errs = {(m,): e for m, e in enumerate(_iso_approx_errors(f0, n, caps[0]), 1)}
    elif app == App.TRACE:
        errs = {(r,): e for r, e in enumerate(_trace_approx_errors(f0, caps[0]), 1)}
    elif app == App.CONVEX:
        rng = stream(seed, "oracle", app)
        errs = {
            (m,): e
            for m, e in enumerate(_convex_approx_errors(f0, n, caps[0], design, rng), 1)
        }
    elif app == App.PARTIAL_LINEAR:
        if design is None:
            raise KindMismatch("partially linear oracle benchmark needs the design")
        X = np.asarray(design, dtype=float)
        y = fitted_values(f0, n, X)
        errs = {
            (s, m): _pl_approx_error(y, X, s, m)
            for s in range(1, caps[0] + 1)
            for m in range(1, caps[1] + 1)
        }
    else:
        raise KindMismatch(f"no oracle benchmark for application {app!r}")
    best_idx, best_val = None, math.inf
    for idx in sorted(errs):
        val = errs[idx] + delta_sq(rate, n, idx)
        if val < best_val:
            best_idx, best_val = idx, val
    return best_idx, float(best_val)


# ---------------------------------------------------------------------------
# contraction sweep


@dataclass(frozen=True)
class CellResult:
    """One (n, replication) cell of a sweep."""

    n: int
    replication: int
    risk: float                      # d^2 of the posterior-mean fit
    draw_risk_mean: float            # mean over draws of d^2(draw, truth)
    exceed: float                    # fraction of draws with d^2 > R * oracle
    index_counts: dict = field(compare=False)
    frobenius_sq: float | None = None   # trace only: ||A_hat - A0||_F^2
    spectral_sq: float | None = None    # trace only: ||A_hat - A0||_2^2


@dataclass(frozen=True)
class ContractionReport:
    """Sweep summary: per-n risks, contraction probabilities, histograms."""

    app: str
    n_grid: tuple[int, ...]
    replications: int
    R: float
    risks: tuple[float, ...]              # per-n mean posterior-mean risk
    contraction: tuple[float, ...]        # per-n mean exceed fraction
    oracles: tuple[tuple[tuple[int, ...], float], ...]   # per-n (m*, value)
    histograms: tuple[dict, ...]          # per-n {index: draw count}
    slope: float | None
    stderr: float | None
    cells: tuple[CellResult, ...]

    def __post_init__(self):
        if any(r < 0 for r in self.risks):
            raise NonPositiveRisk("negative mean risk in report")
        if any(not 0 <= p <= 1 for p in self.contraction):
            raise DomainError("contraction probabilities must lie in [0, 1]")


def sweep_cell(
    app: str,
    f0,
    n: int,
    replication: int,
    seed: int,
    rate: RateSpec,
    m_max,
    oracle_value: float,
    R: float = 4.0,
    cfg: SamplerConfig | None = None,
    design=None,
    g: GSpec = GSpec(),
    temperature: float = 2.0,
) -> CellResult:
    """Simulate one dataset, run one chain, and reduce it to cell statistics.

    The cell seed is derive_seed(seed, n, replication), so cells are
    reproducible in isolation and workers never share streams.  Jensen's
    inequality (posterior-mean risk <= mean draw risk) is asserted on every
    cell; a violation means the chain or the metric is broken.
    """
    cs = derive_seed(seed, n, replication)
    if callable(design):
        design = design(n, stream(cs, "design"))
    exp = ExperimentSpec.gaussian(n, design=design)
    data = sample_data(exp, f0, n, seed=cs)
    prior = TwoStepPrior(rate, m_max, g=g, temperature=temperature)
    if cfg is None:
        cfg = default_config(app)
    cfg = replace(cfg, seed=cs)
    chain = run_rjmcmc(app, exp, data, prior, cfg)

    f0v = fitted_values(f0, n, exp.design)
    fit = posterior_mean(chain, exp, data)
    mean_risk = risk(fit, f0v, exp)
    draw_risks = np.array(
        [risk(fitted_values(pt, n, exp.design), f0v, exp) for _, pt in chain.draws]
    )
    if mean_risk > float(draw_risks.mean()) + 1e-9:
        raise ArithmeticError(
            f"Jensen check failed at n={n} rep={replication}: "
            f"{mean_risk} > {float(draw_risks.mean())}"
        )
    counts = Counter(idx for idx, _ in chain.draws)
    fro = spec = None
    if app == App.TRACE:
        A0 = f0.matrix() if isinstance(f0, FactorMatrix) else np.asarray(f0, dtype=float)
        A_hat = np.zeros_like(A0)
        for _, pt in chain.draws:
            A_hat += pt.matrix()
        A_hat /= len(chain.draws)
        delta = A_hat - A0
        fro = float(np.sum(delta**2))
        spec = float(np.linalg.norm(delta, 2) ** 2)
    return CellResult(
        n=n,
        replication=replication,
        risk=float(mean_risk),
        draw_risk_mean=float(draw_risks.mean()),
        exceed=float(np.mean(draw_risks > R * oracle_value)),
        index_counts=dict(counts),
        frobenius_sq=fro,
        spectral_sq=spec,
    )


def contraction_sweep(
    app: str,
    f0_for,
    n_grid,
    replications: int,
    rate: RateSpec,
    m_max,
    seed: int,
    R: float = 4.0,
    cfg_for=None,
    design_for=None,
    g: GSpec = GSpec(),
    temperature: float = 2.0,
    map_fn=None,
    log=None,
) -> ContractionReport:
    """Full (n x replication) sweep reduced to a ContractionReport.

    f0_for(n) builds the truth, cfg_for(n) the sampler configuration, and
    design_for stays callable so each cell can draw its own design from its
    own stream.  map_fn (signature of builtins.map) lets the CLI substitute a
    process pool; cells are pure functions of their arguments.
    """
    n_grid = tuple(int(v) for v in n_grid)
    if replications < 1:
        raise DomainError("need at least one replication")
    oracles = []
    for n in n_grid:
        ref_design = None
        if design_for is not None:
            ref_design = design_for(n, stream(derive_seed(seed, n, 0), "design"))
        oracles.append(
            oracle_benchmark(app, f0_for(n), n, rate, m_max, design=ref_design)
        )
    jobs = [
        (
            app,
            f0_for(n),
            n,
            rep,
            seed,
            rate,
            m_max,
            oracles[i][1],
            R,
            None if cfg_for is None else cfg_for(n),
            design_for,
            g,
            temperature,
        )
        for i, n in enumerate(n_grid)
        for rep in range(replications)
    ]
    runner = map if map_fn is None else map_fn
    cells = []
    for cell in runner(_run_cell, jobs):
        cells.append(cell)
        if log is not None:
            log(
                f"cell n={cell.n} rep={cell.replication} "
                f"risk={cell.risk:.6g} exceed={cell.exceed:.3f}"
            )
    cells.sort(key=lambda c: (c.n, c.replication))
    risks, contraction, hists = [], [], []
    for n in n_grid:
        sub = [c for c in cells if c.n == n]
        risks.append(float(np.mean([c.risk for c in sub])))
        contraction.append(float(np.mean([c.exceed for c in sub])))
        h: Counter = Counter()
        for c in sub:
            h.update(c.index_counts)
        hists.append(dict(h))
    slope = stderr = None
    if len(n_grid) >= 4:
        slope, stderr = rate_slope(n_grid, risks)
    return ContractionReport(
        app=app,
        n_grid=n_grid,
        replications=replications,
        R=R,
        risks=tuple(risks),
        contraction=tuple(contraction),
        oracles=tuple((tuple(m), v) for m, v in oracles),
        histograms=tuple(hists),
        slope=slope,
        stderr=stderr,
        cells=tuple(cells),
    )


def _run_cell(args) -> CellResult:
    return sweep_cell(*args)


# ---------------------------------------------------------------------------
# report serialization


def report_to_jsonable(report: ContractionReport) -> dict:
    """JSON-ready dict; histogram keys become comma-joined index strings."""
    per_n = []
    for i, n in enumerate(report.n_grid):
        m_star, value = report.oracles[i]
        per_n.append(
            {
                "n": n,
                "mean_risk": report.risks[i],
                "contraction_prob": report.contraction[i],
                "oracle_m_star": list(m_star),
                "oracle_value": value,
                "histogram": {
                    ",".join(map(str, k)): v for k, v in sorted(report.histograms[i].items())
                },
            }
        )
    out = {
        "app": report.app,
        "n_grid": list(report.n_grid),
        "replications": report.replications,
        "R": report.R,
        "per_n": per_n,
        "slope": report.slope,
        "slope_stderr": report.stderr,
    }
    if report.app == App.TRACE:
        out["spectral_dominated"] = all(
            c.spectral_sq <= c.frobenius_sq + 1e-12 for c in report.cells
        )
    return out


def report_csv_rows(report: ContractionReport):
    """Long-table rows (n, replication, risk, draw_risk_mean, exceed)."""
    yield ("n", "replication", "risk", "draw_risk_mean", "exceed")
    for c in report.cells:
        yield (c.n, c.replication, repr(c.risk), repr(c.draw_risk_mean), repr(c.exceed))


def plot_rate_curve(report: ContractionReport, path) -> None:
    """Log-log risk curve with the fitted line, written as deterministic SVG."""
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "tsb"
    fig, ax = plt.subplots(figsize=(5, 4))
    n = np.asarray(report.n_grid, dtype=float)
    r = np.asarray(report.risks, dtype=float)
    ax.loglog(n, r, "o", label="mean risk")
    if report.slope is not None:
        x = np.log(n)
        y = np.log(r)
        b = y.mean() - report.slope * x.mean()
        ax.loglog(n, np.exp(b + report.slope * x), "-", label=f"slope {report.slope:.2f}")
    ax.set_xlabel("n")
    ax.set_ylabel("posterior-mean risk")
    ax.legend()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
