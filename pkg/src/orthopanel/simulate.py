"""Simulation study harness: data-generating process, seeded replication
runner, and summary/power tables.

The panel is an AR(1) with an individual intercept; the cross-sectional
outcome loads on that intercept with unit slope and can be contaminated with
early-period panel noise (scale c) to make the plug-in estimator's bias bite.
Every replication derives its own seeds from the master seed, so results are
identical for any worker count and aggregation is an ordered reduction.
"""

from __future__ import annotations

import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .baselines import cgk_estimate, plugin_estimate, xie_estimate
from .data import CrossSection, PanelDataset, SeedConfig, _fmt
from .errors import OrthopanelError, TooManyFailures
from .estimator import cross_fit_estimate
from .moments import LinearModel
from .panel import blundell_bond, extract_alpha, residual_variance, within_fe_ols

Z_CRIT = 1.959964

_BASELINES = ("naive", "xie-eb", "xie-sure", "cgk")
_ORTH = {"orth-mean": "none", "orth-eb": "eb", "orth-sure": "sure"}
ALL_METHODS = _BASELINES + tuple(_ORTH)


@dataclass(frozen=True)
class DgpConfig:
    """Simulation design: panel size, AR coefficient, contamination scale."""

    N: int
    T: int
    beta0: float = 0.0
    c: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if self.T < 4:
            raise ValueError("T must be >= 4")
        if not abs(self.beta0) < 1:
            raise ValueError("|beta0| < 1 required for stationary start")


class LatentTruth:
    """Oracle-only view of the simulated latents.

    Attribute reads are counted so tests can assert the estimation path never
    touches the truth; estimators only ever see the (panel, cross) pair.
    """

    __slots__ = ("_data", "reads")

    def __init__(self, **arrays):
        self._data = arrays
        self.reads = 0

    def __getattr__(self, name):
        data = object.__getattribute__(self, "_data")
        if name in data:
            self.reads += 1
            return data[name]
        raise AttributeError(name)

    def keys(self):
        return tuple(object.__getattribute__(self, "_data"))


def simulate_dgp(cfg):
    """One draw of the design; returns (PanelDataset, CrossSection).

    Draw order is fixed (effects, early noise, late noise, start-up shock,
    outcome noise) so a given seed always yields the same data. The true
    latents ride along on the panel as the auditable ``_latent_truth``.
    """
    rng = np.random.default_rng(int(cfg.seed))
    N, T, b0, c = cfg.N, cfg.T, cfg.beta0, cfg.c
    alpha = rng.normal(0.0, math.sqrt(0.5), N)
    u1 = rng.normal(0.0, 0.5, (N, T))
    u2 = rng.normal(0.0, 0.5, (N, T))
    z0 = rng.normal(0.0, 1.0, N)
    v = rng.normal(0.0, 1.0, N)

    u = u1 + u2
    y0 = alpha / (1.0 - b0) + math.sqrt(1.0 / (2.0 * (1.0 - b0 ** 2))) * z0
    y = np.empty((N, T))
    lag = np.empty((N, T))
    prev = y0
    for t in range(T):
        lag[:, t] = prev
        prev = b0 * prev + alpha + u[:, t]
        y[:, t] = prev

    k = T // 2 - 1
    w = alpha + v - (c / k) * u1[:, :k].sum(axis=1)

    ids = np.arange(1, N + 1)
    panel = PanelDataset(y, lag[:, :, None], ids, lag_structure=True)
    cross = CrossSection(w[:, None], ids)
    truth = LatentTruth(alpha=alpha, u1=u1, u2=u2, v=v, y0=y0)
    object.__setattr__(panel, "_latent_truth", truth)
    return panel, cross


def canonical_methods(methods, est):
    """Validate/expand method tokens; bare "orth" picks up est.shrinkage."""
    est_variant = {"none": "orth-mean", "eb": "orth-eb",
                   "sure": "orth-sure"}[est.shrinkage]
    out = []
    for m in methods:
        name = est_variant if m == "orth" else m
        if name not in ALL_METHODS:
            raise ValueError(f"unknown method {m!r}; choose from "
                             f"{('orth',) + ALL_METHODS}")
        if name not in out:
            out.append(name)
    if not out:
        raise ValueError("no methods requested")
    return out


def _failed_entry(exc):
    return {"mu2": math.nan, "se2": None, "ci2": None, "failed": True,
            "error": f"{type(exc).__name__}: {exc}"}


def _ok_entry(mu2, se2=None, ci2=None):
    return {"mu2": float(mu2), "se2": None if se2 is None else float(se2),
            "ci2": ci2, "failed": False, "error": ""}


def _full_sample_first_stage(panel, est):
    if est.first_stage == "blundell-bond":
        return blundell_bond(panel, min_t=est.resolve_min_t(panel.t_len),
                             horizon=panel.t_len)
    return within_fe_ols(panel, horizon=panel.t_len)


def _replicate(payload):
    """One replication: simulate, run every requested method, report mu2
    with its inference object. Module-level so worker processes can pickle it."""
    r, dgp, methods, est, master_seed, n_boot = payload
    seeds = SeedConfig(int(master_seed))
    panel, cross = simulate_dgp(replace(dgp, seed=seeds.child_seed("rep", r)))
    out = {}

    baseline_requested = [m for m in methods if m in _BASELINES]
    if baseline_requested:
        try:
            fs = _full_sample_first_stage(panel, est)
            alpha_full = extract_alpha(panel, fs.beta,
                                       horizon=panel.t_len).alpha
            u2_full = residual_variance(fs.residuals, horizon=panel.t_len)
        except (OrthopanelError, np.linalg.LinAlgError) as exc:
            for m in baseline_requested:
                out[m] = _failed_entry(exc)
            baseline_requested = []
        for m in baseline_requested:
            try:
                if m == "naive":
                    res = plugin_estimate(alpha_full, cross.w, "naive")
                elif m in ("xie-eb", "xie-sure"):
                    res = xie_estimate(alpha_full, cross.w, u2_full, m)
                else:
                    res = cgk_estimate(alpha_full, cross.w, u2_full, n_boot,
                                       seeds.child_seed("cgk", r))
                ci2 = None if res.ci is None else [res.ci[1][0], res.ci[1][1]]
                se2 = None if res.se is None else res.se[1]
                out[m] = _ok_entry(res.mu_hat[1], se2, ci2)
            except (OrthopanelError, np.linalg.LinAlgError) as exc:
                out[m] = _failed_entry(exc)

    model = LinearModel()
    for m in methods:
        if m not in _ORTH:
            continue
        cfg = replace(est, shrinkage=_ORTH[m], seed=seeds.child_seed("est", r))
        try:
            res = cross_fit_estimate(panel, cross, model, cfg)
            out[m] = _ok_entry(res.mu_hat[1], res.se[1])
        except (OrthopanelError, np.linalg.LinAlgError) as exc:
            out[m] = _failed_entry(exc)
    return out


def collect_replications(dgp, methods, est, R, threads=1, n_boot=500,
                         progress=False):
    """Per-replication raw results in replication order (deterministic for
    any thread count; seeds are pure functions of the master seed and r)."""
    methods = canonical_methods(methods, est)
    payloads = [(r, dgp, methods, est, dgp.seed, n_boot) for r in range(int(R))]
    results = []
    threads = 1 if threads is None else int(threads)
    if threads <= 1:
        iterator = map(_replicate, payloads)
    else:
        pool = ProcessPoolExecutor(max_workers=threads)
        iterator = pool.map(_replicate, payloads, chunksize=1)
    try:
        for i, out in enumerate(iterator):
            results.append(out)
            if progress and ((i + 1) % 10 == 0 or i + 1 == len(payloads)):
                print(f"[simulate] {i + 1}/{len(payloads)} replications done",
                      file=sys.stderr, flush=True)
    finally:
        if threads > 1:
            pool.shutdown()
    return results


def _rejects(entry, null):
    if entry["ci2"] is not None:
        lo, hi = entry["ci2"]
        return not (lo <= null <= hi)
    return abs((entry["mu2"] - null) / entry["se2"]) > Z_CRIT


@dataclass(frozen=True)
class SimSummary:
    """Per-method summary over replications (truth: slope = 1)."""

    method: str
    bias: float
    std: float
    rmse: float
    rej_prob: float
    n_reps: int
    n_fail: int
    c: float
    N: int
    T: int


def _summarize(method, entries, dgp, R, null_value):
    ok = [e for e in entries if not e["failed"]]
    n_fail = R - len(ok)
    if n_fail > 0.1 * R:
        first = next(e["error"] for e in entries if e["failed"])
        raise TooManyFailures(
            f"{method}: {n_fail}/{R} replications failed; first: {first}")
    vals = np.array([e["mu2"] for e in ok])
    bias = float(vals.mean() - null_value)
    std = float(vals.std(ddof=0))
    rej = float(np.mean([_rejects(e, null_value) for e in ok]))
    return SimSummary(method=method, bias=bias, std=std,
                      rmse=math.sqrt(bias ** 2 + std ** 2), rej_prob=rej,
                      n_reps=len(ok), n_fail=n_fail, c=float(dgp.c),
                      N=dgp.N, T=dgp.T)


def run_replications(dgp, methods, est, R, threads=1, n_boot=500,
                     progress=False, null_value=1.0):
    """Bias/std/rmse/rejection per method over R seeded replications."""
    methods = canonical_methods(methods, est)
    entries = collect_replications(dgp, methods, est, R, threads=threads,
                                   n_boot=n_boot, progress=progress)
    return {m: _summarize(m, [e[m] for e in entries], dgp, int(R), null_value)
            for m in methods}


def power_curve(dgp, methods, est, R, null_grid, threads=1, n_boot=500,
                progress=False):
    """Rejection frequency of slope = g for each grid value g, per method.

    The DGP stays at truth (slope 1); each replication's estimate and
    inference object are reused across the whole grid.
    """
    methods = canonical_methods(methods, est)
    entries = collect_replications(dgp, methods, est, R, threads=threads,
                                   n_boot=n_boot, progress=progress)
    rows = []
    for m in methods:
        per = [e[m] for e in entries]
        ok = [e for e in per if not e["failed"]]
        n_fail = len(per) - len(ok)
        if n_fail > 0.1 * int(R):
            first = next(e["error"] for e in per if e["failed"])
            raise TooManyFailures(
                f"{m}: {n_fail}/{R} replications failed; first: {first}")
        for g in null_grid:
            rej = float(np.mean([_rejects(e, float(g)) for e in ok]))
            rows.append({"method": m, "null_value": float(g),
                         "rejection": rej})
    return rows


def summary_csv_text(summaries, config_echo=None):
    """Summary table; floats via repr so identical runs give identical bytes."""
    import json

    lines = []
    if config_echo is not None:
        lines.append("# config: " + json.dumps(config_echo, sort_keys=True))
    lines.append("method,c,N,T,bias,std,rmse,rej_prob,n_fail")
    items = summaries.values() if isinstance(summaries, dict) else summaries
    for s in items:
        lines.append(",".join([
            s.method, _fmt(s.c), str(s.N), str(s.T), _fmt(s.bias),
            _fmt(s.std), _fmt(s.rmse), _fmt(s.rej_prob), str(s.n_fail)]))
    return "\n".join(lines) + "\n"


def power_csv_text(rows, config_echo=None):
    import json

    lines = []
    if config_echo is not None:
        lines.append("# config: " + json.dumps(config_echo, sort_keys=True))
    lines.append("method,null_value,rejection")
    for row in rows:
        lines.append(",".join([row["method"], _fmt(row["null_value"]),
                               _fmt(row["rejection"])]))
    return "\n".join(lines) + "\n"


def write_summary_csv(path, summaries, config_echo=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(summary_csv_text(summaries, config_echo))


def write_power_csv(path, rows, config_echo=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(power_csv_text(rows, config_echo))
