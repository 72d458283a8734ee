"""Command-line front end: estimation on user data, simulation studies, and
power curves. Exit codes: 0 success, 2 data/configuration error, 3 estimation
failure. Outputs carry a config echo that reproduces the run verbatim."""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace

import numpy as np

from .baselines import cgk_estimate, plugin_estimate, xie_estimate
from .data import (PanelDataset, SeedConfig, load_cross_section, load_panel)
from .errors import (DuplicateRow, InvalidFoldCount, MissingCell,
                     NonNumericValue, OrthopanelError, SpecMismatch)
from .estimator import EstConfig, cross_fit_estimate
from .moments import get_model
from .panel import extract_alpha, residual_variance
from .simulate import (DgpConfig, _full_sample_first_stage, canonical_methods,
                       power_csv_text, power_curve, run_replications,
                       summary_csv_text)

_DATA_ERRORS = (MissingCell, DuplicateRow, NonNumericValue, SpecMismatch,
                InvalidFoldCount, FileNotFoundError, IsADirectoryError,
                PermissionError, ValueError, KeyError)

_ORTH_NAMES = {"none": "orth-mean", "eb": "orth-eb", "sure": "orth-sure"}
_ORTH_TOKENS = {"orth-mean": "none", "orth-eb": "eb", "orth-sure": "sure"}
_BASELINE_TOKENS = ("naive", "xie-eb", "xie-sure", "cgk")

_ESTIMATE_DEFAULTS = {
    "panel": None, "cross": None, "model": "linear", "method": "orth",
    "folds": 5, "splits": 20, "shrinkage": "none", "seed": 0,
    "first_stage": "within", "dynamic": False, "min_t": None, "threads": 1,
    "out": None, "print_out": False,
}
_SIMULATE_DEFAULTS = {
    "N": 100, "T": 12, "beta0": 0.0, "c": 0.0, "reps": None,
    "methods": "naive,orth-mean", "seed": 0, "splits": None, "folds": 5,
    "shrinkage": "none", "first_stage": "blundell-bond", "min_t": None,
    "threads": 1, "profile": "desk", "out": None, "print_out": False,
    "null_grid": "0.4:1.6:0.1",
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="orthopanel",
        description="Debiased moment estimation with latent panel effects")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate on user-supplied data")
    est.add_argument("--panel")
    est.add_argument("--cross")
    est.add_argument("--model", choices=["linear", "logit"])
    est.add_argument("--method",
                     help="comma list: orth|orth-mean|orth-eb|orth-sure|"
                          "naive|xie-eb|xie-sure|cgk")
    est.add_argument("--dynamic", action="store_const", const=True,
                     help="mark column 1 of x as the lagged outcome")
    _common_flags(est)

    sim = sub.add_parser("simulate", help="run the simulation study")
    _sim_flags(sim)

    pow_ = sub.add_parser("power", help="rejection rates over a null grid")
    _sim_flags(pow_)
    pow_.add_argument("--null-grid", dest="null_grid",
                      help="start:stop:step, inclusive (e.g. 0.4:1.6:0.1)")
    return parser


def _common_flags(p):
    p.add_argument("--folds", type=int)
    p.add_argument("--splits", type=int)
    p.add_argument("--shrinkage", choices=["none", "eb", "sure"])
    p.add_argument("--first-stage", dest="first_stage",
                   choices=["within", "blundell-bond"])
    p.add_argument("--min-t", dest="min_t", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--config", help="JSON config file; explicit flags win")
    p.add_argument("--out")
    p.add_argument("--print", dest="print_out", action="store_const",
                   const=True, help="also write the result to stdout")


def _sim_flags(p):
    p.add_argument("--N", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--beta0", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--reps", type=int)
    p.add_argument("--methods", help="comma list of method tokens")
    p.add_argument("--profile", choices=["desk", "paper"],
                   help="desk: reps=200, splits=5; paper: reps=1000, splits=20")
    _common_flags(p)


def _merge(args, defaults):
    file_cfg = {}
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        if not isinstance(file_cfg, dict):
            raise ValueError("config file must hold a JSON object")
    merged = {}
    for key, dflt in defaults.items():
        val = getattr(args, key, None)
        if val is None:
            val = file_cfg.get(key, dflt)
        merged[key] = val
    return merged


def _check_ids(panel, cross):
    if panel.n != cross.n:
        raise SpecMismatch(f"id mismatch: panel has {panel.n} individuals, "
                           f"cross-section has {cross.n}")
    pa, ca = panel.ids, cross.ids
    if pa.dtype != ca.dtype:
        pa, ca = pa.astype(str), ca.astype(str)
    diff = pa != ca
    if diff.any():
        k = int(np.argmax(diff))
        raise SpecMismatch(f"id mismatch at row {k + 1}: panel id "
                           f"{panel.ids[k]!r} vs cross-section id {cross.ids[k]!r}")


def _require_out(cfg):
    if cfg["out"] is None and not cfg["print_out"]:
        raise ValueError("provide --out FILE and/or --print")


def _write_result(cfg, text):
    if cfg["out"] is not None:
        with open(cfg["out"], "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    if cfg["print_out"]:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


# threads stays out of the echo: results are worker-count invariant, so two
# runs differing only in --threads must emit identical bytes
def _echo(command, cfg, skip=("print_out", "out", "config", "threads")):
    echo = {"command": command}
    echo.update({k: v for k, v in cfg.items() if k not in skip})
    return echo


def _cmd_estimate(args):
    cfg = _merge(args, _ESTIMATE_DEFAULTS)
    _require_out(cfg)
    if not cfg["panel"] or not cfg["cross"]:
        raise ValueError("estimate needs --panel and --cross files")
    panel = load_panel(cfg["panel"])
    if cfg["dynamic"]:
        panel = PanelDataset(panel.y, panel.x, panel.ids, lag_structure=True)
    cross = load_cross_section(cfg["cross"])
    _check_ids(panel, cross)
    model = get_model(cfg["model"], q=cross.q)

    tokens = [t.strip() for t in str(cfg["method"]).split(",") if t.strip()]
    if not tokens:
        raise ValueError("empty --method list")
    est = EstConfig(folds=cfg["folds"], splits=cfg["splits"],
                    shrinkage=cfg["shrinkage"], first_stage=cfg["first_stage"],
                    min_t=cfg["min_t"], seed=cfg["seed"])

    results = {}
    baseline_cache = None
    for tok in tokens:
        if tok == "orth" or tok in _ORTH_TOKENS:
            shr = est.shrinkage if tok == "orth" else _ORTH_TOKENS[tok]
            res = cross_fit_estimate(panel, cross, model,
                                     replace(est, shrinkage=shr))
            results[_ORTH_NAMES[shr]] = res.to_payload()
        elif tok in _BASELINE_TOKENS:
            if model.name != "linear":
                raise SpecMismatch("baseline methods require the linear model")
            if baseline_cache is None:
                fs = _full_sample_first_stage(panel, est)
                alphas = extract_alpha(panel, fs.beta,
                                       horizon=panel.t_len).alpha
                u2 = residual_variance(fs.residuals, horizon=panel.t_len)
                baseline_cache = (alphas, u2)
            alphas, u2 = baseline_cache
            if tok == "naive":
                res = plugin_estimate(alphas, cross.w, "naive")
            elif tok in ("xie-eb", "xie-sure"):
                res = xie_estimate(alphas, cross.w, u2, tok)
            else:
                res = cgk_estimate(alphas, cross.w, u2, 500,
                                   SeedConfig(int(cfg["seed"])).child_seed("cgk"))
            results[tok] = res.to_payload()
        else:
            raise ValueError(f"unknown method token {tok!r}")

    payload = {"config": _echo("estimate", cfg), "results": results}
    _write_result(cfg, json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _resolve_sim(args):
    cfg = _merge(args, _SIMULATE_DEFAULTS)
    _require_out(cfg)
    paper = cfg["profile"] == "paper"
    if cfg["reps"] is None:
        cfg["reps"] = 1000 if paper else 200
    if cfg["splits"] is None:
        cfg["splits"] = 20 if paper else 5
    dgp = DgpConfig(N=cfg["N"], T=cfg["T"], beta0=cfg["beta0"], c=cfg["c"],
                    seed=cfg["seed"])
    est = EstConfig(folds=cfg["folds"], splits=cfg["splits"],
                    shrinkage=cfg["shrinkage"], first_stage=cfg["first_stage"],
                    min_t=cfg["min_t"], seed=cfg["seed"])
    methods = [t.strip() for t in str(cfg["methods"]).split(",") if t.strip()]
    methods = canonical_methods(methods, est)
    return cfg, dgp, est, methods


def _cmd_simulate(args):
    cfg, dgp, est, methods = _resolve_sim(args)
    summaries = run_replications(dgp, methods, est, cfg["reps"],
                                 threads=cfg["threads"], progress=True)
    echo = _echo("simulate", cfg, skip=("print_out", "out", "config",
                                        "threads", "null_grid"))
    _write_result(cfg, summary_csv_text(summaries, config_echo=echo))
    return 0


def _parse_grid(text):
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ValueError("null grid must be start:stop:step")
    start, stop, step = (float(p) for p in parts)
    if step <= 0 or stop < start:
        raise ValueError("null grid needs step > 0 and stop >= start")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 10) for i in range(count)]


def _cmd_power(args):
    cfg, dgp, est, methods = _resolve_sim(args)
    grid = _parse_grid(cfg["null_grid"])
    rows = power_curve(dgp, methods, est, cfg["reps"], grid,
                       threads=cfg["threads"], progress=True)
    echo = _echo("power", cfg, skip=("print_out", "out", "config", "threads"))
    _write_result(cfg, power_csv_text(rows, config_echo=echo))
    return 0


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "estimate":
            return _cmd_estimate(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        return _cmd_power(args)
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OrthopanelError, np.linalg.LinAlgError) as exc:
        print(f"estimation failed: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
