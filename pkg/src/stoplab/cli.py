"""Command-line entry point.

Subcommands: constants, solve-continuous, solve-discrete, sweep,
diagnose-uniformity. Every run writes a JSON report whose meta section embeds
the tool version, the full effective configuration (defaults materialized),
the seed, and the wall-clock runtime; re-running with --config pointed at an
emitted report reproduces everything except meta.runtime_seconds
byte-identically. CSV output is written when --csv is given, and --plot
renders figures next to the outputs.

Exit codes: 0 ok, 1 domain error, 2 usage error, 3 numerical failure.
Failures print a machine-readable error object to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .continuous import OdeConfig, generator_residual, solve_gbm_call, solve_general, value_at
from .discrete import GridSpec, solve_discrete, value_at_h
from .errors import BAD_ARGUMENT, StopLabError, ValidationError
from .ladder import (
    ConstantsConfig,
    ConstantsEstimate,
    diagnose_fractional_uniformity,
    estimate_H_M,
    estimate_H_occupation,
    estimate_M_localtime,
    estimate_theta_gamma,
)
from .model import CALL, StoppingProblem, validate_problem
from .rates import SweepSolverConfig, compare_report, fit_rates, run_sweep, theory_coefficients
from .reporting import write_csv, write_json

SUBCOMMANDS = ("constants", "solve-continuous", "solve-discrete", "sweep", "diagnose-uniformity")


def _default_seed() -> int:
    return int(os.environ.get("STOPLAB_SEED", "0"))


def _load_config_file(path: str) -> dict:
    with open(path) as f:
        data = json.load(f)
    if "meta" in data and isinstance(data["meta"], dict) and "config" in data["meta"]:
        return data["meta"]["config"]
    return data


def _effective(defaults: dict, config_file: str | None, ns: argparse.Namespace) -> dict:
    """defaults < config file < explicitly passed flags."""
    cfg = dict(defaults)
    if config_file:
        file_cfg = _load_config_file(config_file)
        for k in cfg:
            if k in file_cfg:
                cfg[k] = file_cfg[k]
    for k in cfg:
        if k == "problem":
            continue  # the flag holds a path, the config slot holds the dict
        v = getattr(ns, k.replace("-", "_"), None)
        if v is not None:
            cfg[k] = v
    if getattr(ns, "problem", None):
        cfg["problem"] = StoppingProblem.load(ns.problem).to_config()
    return cfg


def _problem_from_cfg(cfg: dict) -> StoppingProblem:
    if cfg.get("problem") is None:
        raise ValidationError("a problem config is required (--problem FILE)", BAD_ARGUMENT)
    return StoppingProblem.from_config(cfg["problem"])


def _envelope(command: str, cfg: dict, seed, runtime: float, results: dict) -> dict:
    return {
        "meta": {
            "tool": "stoplab",
            "version": __version__,
            "command": command,
            "config": cfg,
            "seed": seed,
            "runtime_seconds": runtime,
        },
        "results": results,
    }


# --------------------------------------------------------------------------
# constants
# --------------------------------------------------------------------------

def cmd_constants(ns) -> int:
    defaults = {
        "paths": 2_000_000,
        "seed": _default_seed(),
        "u_mode": "randomized",
        "u_grid": 64,
        "n_max": 100_000,
        "fine_steps": None,
        "duality_u": [0.0, 0.25, 0.5],
        "duality_paths": None,
        "workers": 1,
        "problem": None,
    }
    cfg = _effective(defaults, ns.config, ns)
    cfg.pop("problem")
    t0 = time.perf_counter()
    est = estimate_theta_gamma(ConstantsConfig(
        n_paths=int(cfg["paths"]), u_mode=cfg["u_mode"], u_grid=int(cfg["u_grid"]),
        n_max=int(cfg["n_max"]), seed=int(cfg["seed"]), workers=int(cfg["workers"]),
    ))
    results = {
        "theta_hat": est.theta, "theta_se": est.theta_se,
        "gamma_hat": est.gamma, "gamma_se": est.gamma_se,
        "n_paths": est.n_paths, "truncated_fraction": est.truncated_fraction,
        "u_mode": est.u_mode, "n_max": est.n_max, "seed": est.seed,
    }
    if est.curves is not None:
        results["curves"] = {
            "u": est.curves.u, "H_hat": est.curves.h_hat, "H_se": est.curves.h_se,
            "M_hat": est.curves.m_hat, "M_se": est.curves.m_se,
        }
    if cfg["fine_steps"] is not None:
        m = int(cfg["fine_steps"])
        n_dual = int(cfg["duality_paths"] or max(int(cfg["paths"]) // 4, 10_000))
        rows = []
        for u in cfg["duality_u"]:
            mom = estimate_H_M(u, n_dual, seed=int(cfg["seed"]), n_max=int(cfg["n_max"]),
                               workers=int(cfg["workers"]))
            occ = estimate_H_occupation(u, n_dual, fine_steps=m, seed=int(cfg["seed"]),
                                        n_max=int(cfg["n_max"]), workers=int(cfg["workers"]))
            loc = estimate_M_localtime(u, n_dual, fine_steps=m, seed=int(cfg["seed"]),
                                       n_max=int(cfg["n_max"]), workers=int(cfg["workers"]))
            rows.append({
                "u": u, "n_paths": n_dual, "fine_steps": m,
                "H_hat": mom.h_hat, "H_se": mom.h_se,
                "H_occ": occ.value, "H_occ_se": occ.se,
                "M_hat": mom.m_hat, "M_se": mom.m_se,
                "M_loc": loc.value, "M_loc_se": loc.se,
            })
        results["duality"] = rows
    runtime = time.perf_counter() - t0

    report = _envelope("constants", cfg, int(cfg["seed"]), runtime, results)
    write_json(report, ns.out)
    if ns.csv:
        if est.curves is None:
            raise ValidationError(
                "per-u curve CSV needs --u-mode fixed-grid", BAD_ARGUMENT
            )
        write_csv(
            ["u", "H_hat", "H_se", "M_hat", "M_se"],
            zip(est.curves.u, est.curves.h_hat, est.curves.h_se,
                est.curves.m_hat, est.curves.m_se),
            ns.csv,
        )
    if ns.plot:
        from .figures import render_constants

        render_constants(est, _fig_path(ns.out, "constants"))
    return 0


# --------------------------------------------------------------------------
# solve-continuous
# --------------------------------------------------------------------------

def cmd_solve_continuous(ns) -> int:
    defaults = {
        "problem": None, "x_lo": None, "x_hi": None, "steps": 20_000,
        "root_tol": 1e-10, "csv_points": 201, "seed": _default_seed(),
    }
    cfg = _effective(defaults, ns.config, ns)
    problem = _problem_from_cfg(cfg)
    validate_problem(problem)
    t0 = time.perf_counter()
    d = problem.diffusion
    if d.is_gbm and problem.payoff.kind == CALL and cfg["x_lo"] is None and cfg["x_hi"] is None:
        sol = solve_gbm_call(d.b, d.sigma, problem.r, problem.payoff.k)
    else:
        sol = solve_general(problem, OdeConfig(
            x_lo=cfg["x_lo"], x_hi=cfg["x_hi"], n_steps=int(cfg["steps"]),
            root_tol=float(cfg["root_tol"]),
        ))
    residual_points = [0.25 * sol.threshold, 0.5 * sol.threshold, 0.75 * sol.threshold]
    results = {
        "x_star": sol.threshold,
        "A": sol.curvature,
        "degenerate": sol.degenerate,
        "kind": sol.kind,
        "residuals": {
            "value_match": sol.value_match_residual,
            "smooth_fit": sol.smooth_fit_residual,
            "generator": {f"{x:.6g}": generator_residual(sol, x) for x in residual_points},
        },
    }
    if sol.alpha is not None:
        results["alpha"] = sol.alpha
        results["B"] = sol.multiplier
    runtime = time.perf_counter() - t0

    report = _envelope("solve-continuous", cfg, int(cfg["seed"]), runtime, results)
    write_json(report, ns.out)
    if ns.csv:
        lo = sol.grid[0] if sol.grid is not None else sol.threshold / 100.0
        xs = np.linspace(lo, 2.0 * sol.threshold, int(cfg["csv_points"]))
        write_csv(["x", "V"], zip(xs, value_at(sol, xs)), ns.csv)
    if ns.plot:
        from .figures import render_continuous

        render_continuous(sol, _fig_path(ns.out, "value"))
    return 0


# --------------------------------------------------------------------------
# solve-discrete
# --------------------------------------------------------------------------

def cmd_solve_discrete(ns) -> int:
    defaults = {
        "problem": None, "h": 0.01, "grid_min": None, "grid_max": None,
        "grid_n": 4096, "quad_order": 64, "tol": 1e-10, "seed": _default_seed(),
    }
    cfg = _effective(defaults, ns.config, ns)
    problem = _problem_from_cfg(cfg)
    validate_problem(problem)
    t0 = time.perf_counter()
    grid = None
    if cfg["grid_min"] is not None and cfg["grid_max"] is not None:
        grid = GridSpec(float(cfg["grid_min"]), float(cfg["grid_max"]), int(cfg["grid_n"]))
    sol = solve_discrete(
        problem, float(cfg["h"]), grid=grid, quad_order=int(cfg["quad_order"]),
        tol_iter=float(cfg["tol"]),
    )
    runtime = time.perf_counter() - t0
    results = {
        "h": sol.h,
        "x_star_h": sol.threshold,
        "iterations": sol.iterations,
        "residual": sol.final_update,
        "clamped_mass_max": sol.clamped_mass_max,
        "grid": {"x_min": sol.grid.x_min, "x_max": sol.grid.x_max, "n_nodes": sol.grid.n_nodes},
    }
    report = _envelope("solve-discrete", cfg, int(cfg["seed"]), runtime, results)
    write_json(report, ns.out)
    if ns.csv:
        write_csv(["x", "V_h"], zip(sol.nodes, sol.values), ns.csv)
    if ns.plot:
        from .figures import render_discrete

        render_discrete(sol, problem, _fig_path(ns.out, "value_h"))
    return 0


# --------------------------------------------------------------------------
# sweep
# --------------------------------------------------------------------------

def _parse_constants(spec: str) -> ConstantsEstimate:
    """A constants report file, or inline 'theta=0.589,gamma=0.582'."""
    if "=" in spec:
        kv = dict(item.split("=", 1) for item in spec.split(","))
        return ConstantsEstimate(
            theta=float(kv["theta"]), theta_se=float(kv.get("theta_se", 0.0)),
            gamma=float(kv["gamma"]), gamma_se=float(kv.get("gamma_se", 0.0)),
            n_paths=0, truncated_fraction=0.0, u_mode="inline", n_max=0,
            seed=int(kv.get("seed", 0)),
        )
    with open(spec) as f:
        data = json.load(f)
    res = data["results"] if "results" in data else data
    return ConstantsEstimate(
        theta=res["theta_hat"], theta_se=res["theta_se"],
        gamma=res["gamma_hat"], gamma_se=res["gamma_se"],
        n_paths=res.get("n_paths", 0),
        truncated_fraction=res.get("truncated_fraction", 0.0),
        u_mode=res.get("u_mode", "file"), n_max=res.get("n_max", 0),
        seed=res.get("seed", 0),
    )


def cmd_sweep(ns) -> int:
    defaults = {
        "problem": None,
        "h_list": [0.04, 0.02, 0.01, 0.005, 0.0025],
        "x_ref": None,                      # default x*/2, materialized below
        "constants": "theta=0.589,gamma=0.582",
        "grid_n": 4096, "quad_order": 64, "tol": 1e-10,
        "tol_boundary": 0.10, "tol_value": 0.15,
        "workers": 1, "seed": _default_seed(),
    }
    cfg = _effective(defaults, ns.config, ns)
    problem = _problem_from_cfg(cfg)
    validate_problem(problem)
    if isinstance(cfg["h_list"], str):
        cfg["h_list"] = [float(v) for v in cfg["h_list"].split(",")]

    t0 = time.perf_counter()
    d = problem.diffusion
    if d.is_gbm and problem.payoff.kind == CALL:
        cont = solve_gbm_call(d.b, d.sigma, problem.r, problem.payoff.k)
    else:
        cont = solve_general(problem)
    if cfg["x_ref"] is None:
        cfg["x_ref"] = 0.5 * cont.threshold
    consts = _parse_constants(cfg["constants"]) if isinstance(cfg["constants"], str) \
        else ConstantsEstimate(**cfg["constants"])

    theory = theory_coefficients(cont, consts)
    sweep = run_sweep(
        problem, cfg["h_list"], float(cfg["x_ref"]), cont,
        SweepSolverConfig(n_nodes=int(cfg["grid_n"]), quad_order=int(cfg["quad_order"]),
                          tol_iter=float(cfg["tol"])),
        workers=int(cfg["workers"]),
    )
    fit = fit_rates(sweep.rows)
    verdict = compare_report(fit, theory, float(cfg["tol_boundary"]), float(cfg["tol_value"]))
    runtime = time.perf_counter() - t0

    results = {
        "x_star": cont.threshold,
        "A": cont.curvature,
        "x_ref": sweep.x_ref,
        "v_ref": sweep.v_ref,
        "rows": [
            {
                "h": r.h, "x_star_h": r.threshold_h, "boundary_gap": r.boundary_gap,
                "v_h_at_xref": r.v_h_at_ref, "rel_value_gap": r.rel_value_gap,
            }
            for r in sweep.rows
        ],
        "fitted": {
            "c_boundary": fit.c_boundary, "boundary_correction": fit.boundary_correction,
            "boundary_residual": fit.boundary_residual,
            "c_value": fit.c_value, "value_correction": fit.value_correction,
            "value_residual": fit.value_residual,
        },
        "theory": {
            "c_boundary": theory.c_boundary, "c_value": theory.c_value,
            "theta": theory.theta, "theta_se": theory.theta_se,
            "gamma": theory.gamma, "gamma_se": theory.gamma_se,
        },
        "verdict": {
            "rel_err_boundary": verdict.rel_err_boundary,
            "rel_err_value": verdict.rel_err_value,
            "boundary_pass": verdict.boundary_pass,
            "value_pass": verdict.value_pass,
            "tol_boundary": verdict.tol_boundary,
            "tol_value": verdict.tol_value,
        },
        "band_warnings": list(sweep.band_warnings),
    }
    report = _envelope("sweep", cfg, int(cfg["seed"]), runtime, results)
    write_json(report, ns.out)
    if ns.csv:
        write_csv(
            ["h", "x_star_h", "boundary_gap", "boundary_gap_over_sqrt_h",
             "v_h_at_xref", "rel_value_gap", "rel_value_gap_over_h"],
            [
                (r.h, r.threshold_h, r.boundary_gap, r.boundary_gap / np.sqrt(r.h),
                 r.v_h_at_ref, r.rel_value_gap, r.rel_value_gap / r.h)
                for r in sweep.rows
            ],
            ns.csv,
        )
    if ns.plot:
        from .figures import render_sweep

        render_sweep(sweep, fit, theory, _fig_path(ns.out, "rates"))
    return 0


# --------------------------------------------------------------------------
# diagnose-uniformity
# --------------------------------------------------------------------------

def cmd_diagnose_uniformity(ns) -> int:
    defaults = {
        "problem": None, "x0": 1.0, "x_target": 1.9, "h": 0.01,
        "substeps": 32, "paths": 22_000, "horizon": 10.0,
        "min_hits": 100, "seed": _default_seed(),
    }
    cfg = _effective(defaults, ns.config, ns)
    problem = _problem_from_cfg(cfg)
    t0 = time.perf_counter()
    rep = diagnose_fractional_uniformity(
        problem, float(cfg["x0"]), float(cfg["x_target"]), float(cfg["h"]),
        int(cfg["substeps"]), int(cfg["paths"]), seed=int(cfg["seed"]),
        horizon=float(cfg["horizon"]), min_hits=int(cfg["min_hits"]),
    )
    runtime = time.perf_counter() - t0
    results = {
        "ks_distance": rep.ks_distance,
        "n_hits": rep.n_hits,
        "n_paths": rep.n_paths,
        "n_excluded": rep.n_excluded,
        "h": rep.h,
        "substeps": rep.substeps,
        "horizon": rep.horizon,
        "out_of_regime": rep.out_of_regime,
        "cell_counts": rep.cell_counts,
    }
    report = _envelope("diagnose-uniformity", cfg, int(cfg["seed"]), runtime, results)
    write_json(report, ns.out)
    if ns.plot:
        from .figures import render_uniformity

        render_uniformity(rep, _fig_path(ns.out, "uniformity"))
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _fig_path(out: str, tag: str) -> str:
    base = out[:-5] if out.endswith(".json") else out
    return f"{base}_{tag}.png"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="stoplab",
        description="Discrete-vs-continuous optimal stopping laboratory",
    )
    p.add_argument("--version", action="version", version=f"stoplab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, problem=True, workers=False):
        sp.add_argument("--out", required=True, help="JSON report path")
        sp.add_argument("--csv", help="optional CSV output path")
        sp.add_argument("--plot", action="store_true", help="render figures next to --out")
        sp.add_argument("--config", help="JSON config file or previously emitted report")
        sp.add_argument("--seed", type=int, help="RNG seed (env STOPLAB_SEED overrides the default)")
        if problem:
            sp.add_argument("--problem", help="problem config JSON file")
        if workers:
            sp.add_argument("--workers", type=int, help="worker processes (results are worker-count independent)")

    sp = sub.add_parser("constants", help="estimate the two universal walk constants")
    common(sp, problem=False, workers=True)
    sp.add_argument("--paths", type=int)
    sp.add_argument("--u-mode", choices=["randomized", "fixed-grid"], dest="u_mode")
    sp.add_argument("--u-grid", type=int, dest="u_grid")
    sp.add_argument("--n-max", type=int, dest="n_max")
    sp.add_argument("--fine-steps", type=int, dest="fine_steps",
                    help="also run the occupation/local-time cross-estimators at this resolution")
    sp.add_argument("--duality-paths", type=int, dest="duality_paths")
    sp.set_defaults(func=cmd_constants)

    sp = sub.add_parser("solve-continuous", help="closed form or ODE shooting solution")
    common(sp)
    sp.add_argument("--x-lo", type=float, dest="x_lo")
    sp.add_argument("--x-hi", type=float, dest="x_hi")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--root-tol", type=float, dest="root_tol")
    sp.set_defaults(func=cmd_solve_continuous)

    sp = sub.add_parser("solve-discrete", help="value iteration at one monitoring step")
    common(sp)
    sp.add_argument("--h", type=float)
    sp.add_argument("--grid-min", type=float, dest="grid_min")
    sp.add_argument("--grid-max", type=float, dest="grid_max")
    sp.add_argument("--grid-n", type=int, dest="grid_n")
    sp.add_argument("--quad-order", type=int, dest="quad_order")
    sp.add_argument("--tol", type=float)
    sp.set_defaults(func=cmd_solve_discrete)

    sp = sub.add_parser("sweep", help="h-sweep with rate fits and theory comparison")
    common(sp, workers=True)
    sp.add_argument("--h-list", dest="h_list", help="comma-separated, strictly decreasing")
    sp.add_argument("--x-ref", type=float, dest="x_ref")
    sp.add_argument("--constants", help="constants report file or inline theta=...,gamma=...")
    sp.add_argument("--grid-n", type=int, dest="grid_n")
    sp.add_argument("--quad-order", type=int, dest="quad_order")
    sp.add_argument("--tol", type=float)
    sp.add_argument("--tol-boundary", type=float, dest="tol_boundary")
    sp.add_argument("--tol-value", type=float, dest="tol_value")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("diagnose-uniformity", help="fractional-part uniformity of hitting times")
    common(sp)
    sp.add_argument("--x0", type=float)
    sp.add_argument("--x-target", type=float, dest="x_target")
    sp.add_argument("--h", type=float)
    sp.add_argument("--substeps", type=int)
    sp.add_argument("--paths", type=int)
    sp.add_argument("--horizon", type=float)
    sp.add_argument("--min-hits", type=int, dest="min_hits")
    sp.set_defaults(func=cmd_diagnose_uniformity)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return ns.func(ns)
    except StopLabError as e:
        err = {"error": {"code": e.code, "message": str(e)}}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return e.exit_status
    except FileNotFoundError as e:
        err = {"error": {"code": "FILE_NOT_FOUND", "message": str(e)}}
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
