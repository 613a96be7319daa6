"""Configuration-driven command line (installed as ``tsb``).

Subcommands bind the library end to end: MGF envelope checks, test-error
decay, prior-condition certification, single fits, oracle comparisons, and
rate sweeps.  Every command is a pure function of (config, input files);
primary outputs are byte-identical across reruns, and wall-clock metadata is
quarantined to a separate metadata.json.

Exit codes: 0 pass, 1 analytic failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import functools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .analysis import (
    contraction_sweep,
    oracle_benchmark,
    plot_rate_curve,
    report_csv_rows,
    report_to_jsonable,
    sweep_cell,
)
from .errors import (
    ConfigError,
    DegenerateHypotheses,
    DomainError,
    InsufficientGrid,
    TsbError,
)
from .experiments import ExperimentSpec, dataset_from_csv, sample_data
from .jsonio import dump_json, to_jsonable
from .params import (
    FactorMatrix,
    MaxAffine,
    SparsePlusStep,
    StepFunction,
    fitted_values,
)
from .priors import (
    App,
    GSpec,
    RateSpec,
    TwoStepPrior,
    delta_sq,
    model_weights,
    truncation_mass_report,
)
from .rng import derive_seed, stream
from .samplers import (
    GridSpec,
    default_config,
    export_chain_csv,
    export_chain_jsonl,
    posterior_mean,
    run_rjmcmc,
)
from .theory_checks import check_P1, estimate_llr_mgf, estimate_P2_mass, test_error_decay

__all__ = ["main"]

_VERSION = "0.1.0"


# ---------------------------------------------------------------------------
# strict config validation (hand-rolled: unknown fields are errors)


def _fail(where: str, msg: str):
    raise ConfigError(f"{where}: {msg}")


def _as_int(v, where):
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(where, f"expected an integer, got {v!r}")
    return v


def _as_num(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(where, f"expected a number, got {v!r}")
    return float(v)


def _as_str(v, where):
    if not isinstance(v, str):
        _fail(where, f"expected a string, got {v!r}")
    return v


def _as_bool(v, where):
    if not isinstance(v, bool):
        _fail(where, f"expected true/false, got {v!r}")
    return v


def _as_list(item):
    def check(v, where):
        if not isinstance(v, list):
            _fail(where, f"expected a list, got {v!r}")
        return [item(x, f"{where}[{i}]") for i, x in enumerate(v)]

    return check


def _as_obj(v, where):
    if not isinstance(v, dict):
        _fail(where, f"expected an object, got {v!r}")
    return v


def _schema(obj, where, fields):
    """fields: name -> (required, checker).  Rejects anything else."""
    obj = _as_obj(obj, where)
    unknown = sorted(set(obj) - set(fields))
    if unknown:
        _fail(where, f"unknown field(s): {', '.join(unknown)}")
    out = {}
    for name, (required, checker) in fields.items():
        if name in obj:
            out[name] = checker(obj[name], f"{where}.{name}")
        elif required:
            _fail(where, f"missing required field {name!r}")
    return out


def _signal_value(v, where):
    """Scalar, vector, or matrix signal (matrices for the covariance kind)."""
    if isinstance(v, bool):
        _fail(where, "expected a number or list")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, list):
        arr = np.asarray(v, dtype=float)
        if arr.ndim not in (1, 2):
            _fail(where, f"expected a 1-d or 2-d array, got ndim={arr.ndim}")
        return arr
    _fail(where, f"expected a number or list, got {v!r}")


# ---------------------------------------------------------------------------
# domain-object builders


_EXP_FIELDS = {
    "gaussian": {"n": (True, _as_int), "design": (False, _signal_value)},
    "binary": {"n": (True, _as_int), "eta": (False, _as_num)},
    "poisson": {"n": (True, _as_int), "M": (False, _as_num)},
    "density": {"grid_n": (False, _as_int)},
    "time_series": {"n": (True, _as_int), "quad_n": (False, _as_int)},
    "covariance": {"p": (True, _as_int), "L": (False, _as_num)},
    "autoreg": {"M": (False, _as_num), "gh_n": (False, _as_int)},
}


def _experiment_from(obj, where) -> ExperimentSpec:
    obj = _as_obj(obj, where)
    kind = _as_str(obj.get("kind", ""), f"{where}.kind")
    if kind not in _EXP_FIELDS:
        _fail(f"{where}.kind", f"unknown experiment kind {kind!r} (one of {sorted(_EXP_FIELDS)})")
    rest = {k: v for k, v in obj.items() if k != "kind"}
    kw = _schema(rest, where, _EXP_FIELDS[kind])
    try:
        return getattr(ExperimentSpec, kind)(**kw)
    except TsbError as e:
        raise ConfigError(f"{where}: {e}") from e


def _step_from(obj, where) -> StepFunction:
    kw = _schema(
        obj,
        where,
        {"change_indices": (True, _as_list(_as_int)), "levels": (True, _as_list(_as_num))},
    )
    return StepFunction(tuple(kw["change_indices"]), tuple(kw["levels"]))


def _truth_builder(obj, where):
    """Returns f0_for(n); fixed objects close over themselves, n-dependent
    forms (step_fractions, ramp) resolve at each grid size."""
    obj = _as_obj(obj, where)
    t = _as_str(obj.get("type", ""), f"{where}.type")
    rest = {k: v for k, v in obj.items() if k != "type"}
    if t == "step":
        f = _step_from(rest, where)
        return lambda n: f
    if t == "step_fractions":
        kw = _schema(
            rest,
            where,
            {"fractions": (True, _as_list(_as_num)), "levels": (True, _as_list(_as_num))},
        )
        fr, lv = kw["fractions"], tuple(kw["levels"])
        if any(not 0 <= x < 1 for x in fr):
            _fail(f"{where}.fractions", "fractions must lie in [0, 1)")

        def build(n):
            idx = tuple(int(round(x * n)) for x in fr)
            if any(b <= a for a, b in zip(idx, idx[1:])) or (idx and idx[-1] >= n):
                raise ConfigError(f"{where}: fractions collide at n={n}")
            return StepFunction(idx, lv)

        return build
    if t == "ramp":
        _schema(rest, where, {})
        return lambda n: StepFunction(
            tuple(range(n)), tuple((i + 0.5) / n for i in range(n))
        )
    if t == "max_affine":
        kw = _schema(rest, where, {"planes": (True, _as_list(_as_obj))})
        planes = []
        for i, pl in enumerate(kw["planes"]):
            p = _schema(
                pl,
                f"{where}.planes[{i}]",
                {"a": (True, _as_list(_as_num)), "b": (True, _as_num)},
            )
            planes.append((tuple(p["a"]), p["b"]))
        f = MaxAffine(tuple(planes))
        return lambda n: f
    if t == "factor":
        kw = _schema(
            rest,
            where,
            {"us": (True, _signal_value), "vs": (True, _signal_value)},
        )
        f = FactorMatrix(np.atleast_2d(kw["us"]), np.atleast_2d(kw["vs"]))
        return lambda n: f
    if t == "sparse_plus_step":
        kw = _schema(
            rest,
            where,
            {
                "support": (True, _as_list(_as_int)),
                "beta": (True, _as_list(_as_num)),
                "step": (True, _as_obj),
            },
        )
        f = SparsePlusStep(
            tuple(kw["support"]), tuple(kw["beta"]), _step_from(kw["step"], f"{where}.step")
        )
        return lambda n: f
    _fail(f"{where}.type", f"unknown truth type {t!r}")


def _gaussian_matrix_design(p, n, rng):
    return rng.normal(size=(n, p))


def _gaussian_ensemble_design(m1, m2, n, rng):
    return rng.normal(size=(n, m1, m2))


def _fixed_design(values, n, rng):
    arr = np.asarray(values, dtype=float)
    if arr.shape[0] != n:
        raise ConfigError(f"fixed design has {arr.shape[0]} rows, experiment wants n={n}")
    return arr


def _design_builder(obj, where):
    obj = _as_obj(obj, where)
    t = _as_str(obj.get("type", ""), f"{where}.type")
    rest = {k: v for k, v in obj.items() if k != "type"}
    if t == "gaussian_matrix":
        kw = _schema(rest, where, {"p": (True, _as_int)})
        return functools.partial(_gaussian_matrix_design, kw["p"])
    if t == "gaussian_ensemble":
        kw = _schema(rest, where, {"m1": (True, _as_int), "m2": (True, _as_int)})
        return functools.partial(_gaussian_ensemble_design, kw["m1"], kw["m2"])
    if t == "fixed":
        kw = _schema(rest, where, {"values": (True, lambda v, w: v)})
        return functools.partial(_fixed_design, kw["values"])
    _fail(f"{where}.type", f"unknown design type {t!r}")


_RATE_FIELDS = {
    App.ISO: {},
    App.CONVEX: {"d": (True, _as_int)},
    App.TRACE: {"m1": (True, _as_int), "m2": (True, _as_int)},
    App.PARTIAL_LINEAR: {"p": (True, _as_int)},
    App.COV_FACTOR: {"p": (True, _as_int)},
}


def _app_from(obj, where) -> str:
    app = _as_str(obj, where)
    if app not in App.ALL:
        _fail(where, f"unknown application {app!r} (one of {sorted(App.ALL)})")
    return app


def _prior_from(app, obj, where) -> TwoStepPrior:
    fields = {
        "rate": (False, _as_obj),
        "m_max": (True, lambda v, w: v),
        "g": (False, _as_obj),
        "temperature": (False, _as_num),
    }
    kw = _schema(obj, where, fields)
    rate_kw = _schema(
        kw.get("rate", {}),
        f"{where}.rate",
        {"K": (False, _as_num), **_RATE_FIELDS[app]},
    )
    m_max = kw["m_max"]
    if isinstance(m_max, list):
        m_max = tuple(_as_int(v, f"{where}.m_max") for v in m_max)
    else:
        m_max = _as_int(m_max, f"{where}.m_max")
    g = GSpec()
    if "g" in kw:
        gkw = _schema(
            kw["g"], f"{where}.g", {"family": (False, _as_str), "scale": (False, _as_num)}
        )
        g = GSpec(**gkw)
    try:
        return TwoStepPrior(
            RateSpec(app, **rate_kw), m_max, g=g, temperature=kw.get("temperature", 2.0)
        )
    except TsbError as e:
        raise ConfigError(f"{where}: {e}") from e


_SAMPLER_FIELDS = {
    "n_iter": (False, _as_int),
    "burn_in": (False, _as_int),
    "thin": (False, _as_int),
    "n_iter_base": (False, _as_int),
    "n_iter_per_n": (False, _as_num),
    "move_probs": (False, _as_obj),
    "scales": (False, _as_obj),
    "level_grid": (False, _as_list(_as_num)),
    "prior_only": (False, _as_bool),
    "tune": (False, _as_bool),
}


def _sampler_builder(app, obj, where):
    """cfg_for(n): fixed n_iter/burn_in, or the scaled n_iter_base + per_n
    form for sweeps (burn-in is then a third of the total)."""
    kw = _schema(obj, where, _SAMPLER_FIELDS)
    scaled = "n_iter_base" in kw or "n_iter_per_n" in kw
    if scaled and "n_iter" in kw:
        _fail(where, "give either n_iter or n_iter_base/n_iter_per_n, not both")
    fixed = {}
    for name in ("thin", "prior_only", "tune"):
        if name in kw:
            fixed[name] = kw[name]
    if "move_probs" in kw:
        fixed["move_probs"] = {
            k: _as_num(v, f"{where}.move_probs.{k}") for k, v in kw["move_probs"].items()
        }
    if "scales" in kw:
        fixed["scales"] = {
            k: _as_num(v, f"{where}.scales.{k}") for k, v in kw["scales"].items()
        }
    if "level_grid" in kw:
        fixed["level_grid"] = GridSpec(tuple(kw["level_grid"]))

    def build(n):
        extra = dict(fixed)
        if scaled:
            n_iter = int(kw.get("n_iter_base", 12000) + kw.get("n_iter_per_n", 4.0) * n)
            extra["n_iter"] = n_iter
            extra["burn_in"] = n_iter // 3
        else:
            if "n_iter" in kw:
                extra["n_iter"] = kw["n_iter"]
            if "burn_in" in kw:
                extra["burn_in"] = kw["burn_in"]
        try:
            return default_config(app, **extra)
        except TsbError as e:
            raise ConfigError(f"{where}: {e}") from e

    return build


# ---------------------------------------------------------------------------
# output plumbing


def _prepare_outdir(cfg, args, where, filenames) -> Path:
    out = args.output_dir or cfg.get("output_dir")
    if not out:
        _fail(where, "no output directory (config output_dir or --output-dir)")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    clashes = [f for f in filenames if (out / f).exists()]
    if clashes and not args.force:
        _fail(where, f"output files exist in {out} ({', '.join(clashes)}); use --force")
    return out


def _write_metadata(out: Path, command: str, seed: int) -> None:
    # wall-clock facts live here and only here, keeping primary outputs stable
    meta = {
        "command": command,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "package_version": _VERSION,
        "seed": seed,
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _svg_plot(path, draw) -> None:
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "tsb"
    fig, ax = plt.subplots(figsize=(5, 4))
    draw(ax)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# commands


_COMMON = {"seed": (True, _as_int), "output_dir": (False, _as_str)}


def cmd_bernstein_check(cfg, args) -> int:
    kw = _schema(
        cfg,
        "config",
        {
            **_COMMON,
            "experiment": (True, _as_obj),
            "pair": (True, _as_obj),
            "lambda_grid": (False, _as_list(_as_num)),
            "reps": (False, _as_int),
        },
    )
    exp = _experiment_from(kw["experiment"], "config.experiment")
    pair = _schema(
        kw["pair"],
        "config.pair",
        {"f0": (True, _signal_value), "f1": (True, _signal_value)},
    )
    grid = kw.get("lambda_grid", [-1.0, -0.5, -0.25, 0.25, 0.5, 1.0])
    out = _prepare_outdir(kw, args, "config", ["bernstein.json", "bernstein.svg"])
    try:
        rep = estimate_llr_mgf(
            exp, pair["f0"], pair["f1"], grid, kw.get("reps", 100_000), kw["seed"]
        )
    except (DomainError, DegenerateHypotheses) as e:
        # a grid outside the envelope domain is a config problem, not a finding
        raise ConfigError(str(e)) from e
    dump_json(out / "bernstein.json", rep)

    def draw(ax):
        lam = np.asarray(rep.lambda_grid)
        ax.plot(lam, rep.empirical_log_mgf, "o", label="empirical log-MGF")
        ax.plot(lam, rep.envelope, "-", label="envelope")
        ax.set_xlabel("lambda")
        ax.set_ylabel("log MGF of centered LLR")
        ax.legend()

    _svg_plot(out / "bernstein.svg", draw)
    _write_metadata(out, "bernstein-check", kw["seed"])
    _log(f"bernstein-check: passed={rep.passed} margin={rep.margin:.4g}")
    return 0 if rep.passed else 1


def cmd_test_decay(cfg, args) -> int:
    kw = _schema(
        cfg,
        "config",
        {
            **_COMMON,
            "experiment": (True, _as_obj),
            "pair": (True, _as_obj),
            "n_grid": (True, _as_list(_as_int)),
            "reps": (False, _as_int),
            "c5": (False, _as_num),
            "probes": (False, _as_int),
        },
    )
    exp = _experiment_from(kw["experiment"], "config.experiment")
    pair = _schema(
        kw["pair"],
        "config.pair",
        {"f0": (True, _signal_value), "f1": (True, _signal_value)},
    )
    out = _prepare_outdir(kw, args, "config", ["decay.json", "decay.svg"])
    try:
        rep = test_error_decay(
            exp,
            pair["f0"],
            pair["f1"],
            kw["n_grid"],
            kw.get("reps", 10_000),
            kw["seed"],
            c5=kw.get("c5", 0.25),
            probes=kw.get("probes", 32),
        )
    except (InsufficientGrid, DegenerateHypotheses, DomainError) as e:
        raise ConfigError(str(e)) from e
    dump_json(out / "decay.json", rep)

    def draw(ax):
        n = np.asarray(rep.n_grid, dtype=float)
        ax.semilogy(n, np.maximum(rep.type1, 1e-12), "o-", label="type I")
        ax.semilogy(n, np.maximum(rep.type2, 1e-12), "s-", label="type II (worst probe)")
        ax.set_xlabel("n")
        ax.set_ylabel("error rate")
        ax.legend()

    _svg_plot(out / "decay.svg", draw)
    _write_metadata(out, "test-decay", kw["seed"])
    _log(f"test-decay: passed={rep.passed} slope={rep.decay_slope:.4g}")
    return 0 if rep.passed else 1


def cmd_prior_check(cfg, args) -> int:
    kw = _schema(
        cfg,
        "config",
        {
            **_COMMON,
            "app": (True, _app_from),
            "prior": (True, _as_obj),
            "n": (True, _as_int),
            "h_frak": (False, _as_int),
            "p2": (False, _as_obj),
        },
    )
    app = kw["app"]
    prior = _prior_from(app, kw["prior"], "config.prior")
    n = kw["n"]
    out = _prepare_outdir(kw, args, "config", ["prior_check.json"])
    weights = model_weights(prior, n)
    ndsq = {m: n * delta_sq(prior.rate, n, m) for m in weights}
    p1 = check_P1(weights, ndsq, h_frak=kw.get("h_frak", 2))
    trunc = truncation_mass_report(prior, n)
    if trunc > 0.01:
        _log(f"warning: truncated model mass {trunc:.4f} exceeds 1%; raise m_max")
    report = {"app": app, "n": n, "P1": p1, "truncation_mass": trunc}
    p2_ok = True
    if "p2" in kw:
        p2kw = _schema(
            kw["p2"],
            "config.p2",
            {
                "m": (
                    True,
                    lambda v, w: tuple(_as_int(x, w) for x in v)
                    if isinstance(v, list)
                    else _as_int(v, w),
                ),
                "radius_sq": (True, _as_num),
                "reps": (False, _as_int),
                "center": (False, _as_obj),
            },
        )
        if "center" in p2kw:
            center = _truth_builder(p2kw["center"], "config.p2.center")(n)
        elif app == App.ISO:
            center = StepFunction((0,), (0.0,))
        else:
            _fail("config.p2", f"a center truth spec is required for {app}")
        res = estimate_P2_mass(
            prior,
            p2kw["m"],
            center,
            p2kw["radius_sq"],
            n,
            p2kw.get("reps", 20_000),
            kw["seed"],
        )
        p2_ok = res.passed
        report["P2"] = to_jsonable(res)
    dump_json(out / "prior_check.json", report)
    _write_metadata(out, "prior-check", kw["seed"])
    _log(f"prior-check: P1={p1} P2={'-' if 'p2' not in kw else p2_ok} trunc={trunc:.3g}")
    return 0 if (p1 and p2_ok) else 1


def _resolve_design(kw, n, seed):
    if "design" not in kw:
        return None
    build = _design_builder(kw["design"], "config.design")
    try:
        return build(n, stream(seed, "design"))
    except TsbError as e:
        raise ConfigError(str(e)) from e


def cmd_fit(cfg, args) -> int:
    kw = _schema(
        cfg,
        "config",
        {
            **_COMMON,
            "app": (True, _app_from),
            "experiment": (True, _as_obj),
            "design": (False, _as_obj),
            "data": (True, _as_obj),
            "prior": (True, _as_obj),
            "sampler": (False, _as_obj),
        },
    )
    app = kw["app"]
    exp = _experiment_from(kw["experiment"], "config.experiment")
    n = exp.n
    if n is None:
        _fail("config.experiment", "fit needs an experiment with a fixed size n")
    design = _resolve_design(kw, n, kw["seed"])
    if design is not None:
        exp = ExperimentSpec.gaussian(n, design=design)
    data_kw = _schema(
        kw["data"],
        "config.data",
        {"csv": (False, _as_str), "truth": (False, _as_obj)},
    )
    if ("csv" in data_kw) == ("truth" in data_kw):
        _fail("config.data", "give exactly one of csv or truth")
    truth = None
    if "csv" in data_kw:
        try:
            data = dataset_from_csv(data_kw["csv"])
        except (TsbError, OSError, json.JSONDecodeError, KeyError) as e:
            raise ConfigError(f"config.data.csv: {e}") from e
    else:
        truth = _truth_builder(data_kw["truth"], "config.data.truth")(n)
        data = sample_data(exp, truth, n, seed=derive_seed(kw["seed"], "data"))
    prior = _prior_from(app, kw["prior"], "config.prior")
    cfg_build = _sampler_builder(app, kw.get("sampler", {}), "config.sampler")
    run_cfg = replace(cfg_build(n), seed=kw["seed"])
    out = _prepare_outdir(
        kw, args, "config", ["chain.csv", "chain.jsonl", "fit.csv", "histogram.json"]
    )

    chain = run_rjmcmc(app, exp, data, prior, run_cfg)
    export_chain_csv(chain, out / "chain.csv")
    export_chain_jsonl(chain, out / "chain.jsonl")
    fit = posterior_mean(chain, exp, data)
    with (out / "fit.csv").open("w") as fh:
        fh.write("index,fit,truth\n" if truth is not None else "index,fit\n")
        tv = fitted_values(truth, n, exp.design) if truth is not None else None
        for i, v in enumerate(fit):
            cells = [str(i), repr(float(v))]
            if tv is not None:
                cells.append(repr(float(tv[i])))
            fh.write(",".join(cells) + "\n")
    total = len(chain.draws)
    hist = {}
    for idx, _ in chain.draws:
        key = ",".join(map(str, idx))
        hist[key] = hist.get(key, 0) + 1
    dump_json(
        out / "histogram.json",
        {
            "draws": total,
            "fractions": {k: v / total for k, v in sorted(hist.items())},
            "acceptance": chain.acceptance,
        },
    )
    _write_metadata(out, "fit", kw["seed"])
    _log(f"fit: {total} draws, modal index "
         f"{max(hist, key=hist.get)} ({max(hist.values()) / total:.2f})")
    return 0


def cmd_oracle_compare(cfg, args) -> int:
    kw = _schema(
        cfg,
        "config",
        {
            **_COMMON,
            "app": (True, _app_from),
            "n": (True, _as_int),
            "truth": (True, _as_obj),
            "design": (False, _as_obj),
            "prior": (True, _as_obj),
            "sampler": (False, _as_obj),
            "replications": (False, _as_int),
            "R": (False, _as_num),
        },
    )
    app = kw["app"]
    n = kw["n"]
    f0_for = _truth_builder(kw["truth"], "config.truth")
    prior = _prior_from(app, kw["prior"], "config.prior")
    cfg_build = _sampler_builder(app, kw.get("sampler", {}), "config.sampler")
    reps = kw.get("replications", 5)
    R = kw.get("R", 4.0)
    out = _prepare_outdir(kw, args, "config", ["oracle_compare.json"])
    design_build = (
        _design_builder(kw["design"], "config.design") if "design" in kw else None
    )
    ref_design = None
    if design_build is not None:
        ref_design = design_build(n, stream(derive_seed(kw["seed"], n, 0), "design"))
    m_star, oracle_value = oracle_benchmark(
        app, f0_for(n), n, prior.rate, prior.m_max, design=ref_design
    )
    cells = [
        sweep_cell(
            app,
            f0_for(n),
            n,
            rep,
            kw["seed"],
            prior.rate,
            prior.m_max,
            oracle_value,
            R=R,
            cfg=cfg_build(n),
            design=design_build,
            g=prior.g,
            temperature=prior.temperature,
        )
        for rep in range(reps)
    ]
    risks = [c.risk for c in cells]
    report = {
        "app": app,
        "n": n,
        "m_star": list(m_star),
        "oracle_value": oracle_value,
        "R": R,
        "replications": reps,
        "risks": risks,
        "mean_risk": float(np.mean(risks)),
        "risk_to_oracle_ratio": float(np.mean(risks) / oracle_value),
        "exceed_fractions": [c.exceed for c in cells],
    }
    dump_json(out / "oracle_compare.json", report)
    _write_metadata(out, "oracle-compare", kw["seed"])
    _log(
        f"oracle-compare: m*={m_star} oracle={oracle_value:.4g} "
        f"mean risk={report['mean_risk']:.4g} (x{report['risk_to_oracle_ratio']:.2f})"
    )
    return 0


def _pool_workers() -> int | None:
    raw = os.environ.get("TSB_WORKERS", "").strip()
    if not raw:
        return None
    try:
        w = int(raw)
    except ValueError as e:
        raise ConfigError(f"TSB_WORKERS must be an integer, got {raw!r}") from e
    if w < 1:
        raise ConfigError(f"TSB_WORKERS must be >= 1, got {w}")
    return w


def cmd_rate_sweep(cfg, args) -> int:
    kw = _schema(
        cfg,
        "config",
        {
            **_COMMON,
            "app": (True, _app_from),
            "truth": (True, _as_obj),
            "design": (False, _as_obj),
            "prior": (True, _as_obj),
            "sampler": (False, _as_obj),
            "n_grid": (True, _as_list(_as_int)),
            "replications": (True, _as_int),
            "R": (False, _as_num),
        },
    )
    if len(kw["n_grid"]) < 4:
        _fail("config.n_grid", f"need >= 4 sizes, got {len(kw['n_grid'])}")
    if kw["replications"] < 20:
        _fail("config.replications", f"need >= 20 replications, got {kw['replications']}")
    app = kw["app"]
    f0_for = _truth_builder(kw["truth"], "config.truth")
    prior = _prior_from(app, kw["prior"], "config.prior")
    cfg_build = _sampler_builder(app, kw.get("sampler", {}), "config.sampler")
    design_build = (
        _design_builder(kw["design"], "config.design") if "design" in kw else None
    )
    workers = _pool_workers()
    out = _prepare_outdir(kw, args, "config", ["report.json", "cells.csv", "rate.svg"])

    with ProcessPoolExecutor(max_workers=workers) as pool:
        report = contraction_sweep(
            app,
            f0_for,
            kw["n_grid"],
            kw["replications"],
            prior.rate,
            prior.m_max,
            kw["seed"],
            R=kw.get("R", 4.0),
            cfg_for=cfg_build,
            design_for=design_build,
            g=prior.g,
            temperature=prior.temperature,
            map_fn=lambda fn, jobs: pool.map(_retrying_cell, jobs, chunksize=1),
            log=_log,
        )
    dump_json(out / "report.json", report_to_jsonable(report))
    with (out / "cells.csv").open("w") as fh:
        for row in report_csv_rows(report):
            fh.write(",".join(map(str, row)) + "\n")
    plot_rate_curve(report, out / "rate.svg")
    _write_metadata(out, "rate-sweep", kw["seed"])
    slope = "none" if report.slope is None else f"{report.slope:.3f}+/-{report.stderr:.3f}"
    _log(f"rate-sweep: slope {slope} over n={list(report.n_grid)}")
    return 0


def _retrying_cell(job):
    """Run one sweep cell, rederiving its stream on failure (2 retries)."""
    app, f0, n, rep, seed, *rest = job
    last = None
    for attempt in range(3):
        s = seed if attempt == 0 else derive_seed(seed, "retry", attempt)
        try:
            return sweep_cell(app, f0, n, rep, s, *rest)
        except Exception as e:
            last = e
    raise RuntimeError(f"cell n={n} rep={rep} failed after 2 retries: {last}") from last


# ---------------------------------------------------------------------------
# entry point


_DISPATCH = {
    "bernstein-check": cmd_bernstein_check,
    "test-decay": cmd_test_decay,
    "prior-check": cmd_prior_check,
    "fit": cmd_fit,
    "oracle-compare": cmd_oracle_compare,
    "rate-sweep": cmd_rate_sweep,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsb",
        description="Model-selection priors, samplers, and theory checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _DISPATCH.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--output-dir", help="overrides the config's output_dir")
        p.add_argument("--seed", type=int, help="overrides the config's seed")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        try:
            raw = json.loads(Path(args.config).read_text())
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}: invalid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{args.config}: top level must be a JSON object")
        if args.seed is not None:
            raw = {**raw, "seed": args.seed}
        return _DISPATCH[args.command](raw, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (TsbError, ArithmeticError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
