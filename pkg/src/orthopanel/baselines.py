"""Comparison estimators: plug-in OLS (optionally on shrunk effects) and the
error-in-variables slope correction with percentile-bootstrap inference."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import _as_generator
from .errors import DegenerateRegressor
from .panel import ResidualVariances
from .shrinkage import eb_shrink, sure_shrink

Z_CRIT = 1.959964  # two-sided 5% normal critical value


@dataclass
class BaselineResult:
    """Estimate plus either robust SEs (plug-in) or bootstrap CIs (EIV)."""

    mu_hat: np.ndarray
    method: str
    se: np.ndarray | None = None
    ci: tuple | None = None
    n_boot: int | None = None
    flags: tuple = ()
    boot_draws: np.ndarray | None = None

    def ci_at(self, coord, level=0.95):
        """Percentile interval at any level from the stored bootstrap draws."""
        if self.boot_draws is None:
            raise ValueError(f"{self.method} carries no bootstrap draws")
        tail = 100.0 * (1.0 - level) / 2.0
        lo, hi = np.percentile(self.boot_draws[:, coord], [tail, 100.0 - tail])
        return float(lo), float(hi)

    def to_payload(self):
        out = {"method": self.method,
               "mu_hat": [float(v) for v in self.mu_hat],
               "flags": list(self.flags)}
        if self.se is not None:
            out["se"] = [float(v) for v in self.se]
        if self.ci is not None:
            out["ci"] = [[float(a), float(b)] for a, b in self.ci]
            out["n_boot"] = self.n_boot
        return out


def _as_u2_array(u2):
    if isinstance(u2, ResidualVariances):
        return np.asarray(u2.u2, dtype=float)
    return np.asarray(u2, dtype=float)


def plugin_estimate(alphas, w, method="naive"):
    """OLS of w on (intercept, effect estimate) with HC0 robust SEs."""
    a = np.asarray(alphas, dtype=float)
    wv = np.asarray(w, dtype=float).reshape(a.size)
    if a.size < 3:
        raise DegenerateRegressor("need at least 3 observations")
    design = np.column_stack([np.ones(a.size), a])
    gram = design.T @ design
    if not np.isfinite(gram).all() or np.linalg.cond(gram) > 1e14:
        raise DegenerateRegressor("effect estimates have (near-)zero variance")
    mu = np.linalg.solve(gram, design.T @ wv)
    resid = wv - design @ mu
    bread = np.linalg.inv(gram)
    meat = design.T @ (design * resid[:, None] ** 2)
    vcov = bread @ meat @ bread
    se = np.sqrt(np.diag(vcov))
    return BaselineResult(mu_hat=mu, method=method, se=se)


def xie_estimate(alphas, w, u2, variant="xie-eb"):
    """Plug-in OLS on shrunk effects (full-horizon residual variances)."""
    u2 = _as_u2_array(u2)
    if variant == "xie-eb":
        shrunk = eb_shrink(alphas, u2).shrunk
    elif variant == "xie-sure":
        shrunk = sure_shrink(alphas, u2).shrunk
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return plugin_estimate(shrunk, w, method=variant)


def _eiv_mu(a, wv, u2, floor_frac=0.1):
    """Slope = Cov(a,w) / (Var(a) - mean u2), denominator floored at
    floor_frac * Var(a); returns (mu vector, floored?)."""
    cov_mat = np.cov(a, wv)
    var_a = cov_mat[0, 0]
    if var_a <= 0:
        # degenerate (re)sample: no effect signal, report a flat fit rather
        # than letting a zero floor turn the slope into NaN
        return np.array([wv.mean(), 0.0]), True
    denom = var_a - float(np.mean(u2))
    floor = floor_frac * var_a
    floored = bool(denom < floor)
    slope = cov_mat[0, 1] / (floor if floored else denom)
    return np.array([wv.mean() - slope * a.mean(), slope]), floored


def cgk_estimate(alphas, w, u2, n_boot=500, seed=0):
    """Error-in-variables corrected slope with percentile bootstrap CIs.

    Resamples individuals (effect, outcome, residual variance jointly); the
    denominator floor applies inside every resample as well.
    """
    a = np.asarray(alphas, dtype=float)
    wv = np.asarray(w, dtype=float).reshape(a.size)
    u2 = _as_u2_array(u2)
    if u2.size != a.size:
        raise ValueError("one residual variance per individual required")
    if a.size < 3:
        raise DegenerateRegressor("need at least 3 observations")
    if a.var(ddof=1) <= 0:
        raise DegenerateRegressor("effect estimates have zero variance")

    mu, floored = _eiv_mu(a, wv, u2)
    flags = ("negative_signal_variance",) if floored else ()

    rng = _as_generator(seed, "cgk")
    n = a.size
    draws = np.empty((int(n_boot), 2))
    for b in range(int(n_boot)):
        idx = rng.integers(0, n, n)
        draws[b], _ = _eiv_mu(a[idx], wv[idx], u2[idx])
    tail = 2.5
    lo = np.percentile(draws, tail, axis=0)
    hi = np.percentile(draws, 100.0 - tail, axis=0)
    ci = tuple((float(lo[j]), float(hi[j])) for j in range(2))
    return BaselineResult(mu_hat=mu, method="cgk", ci=ci, n_boot=int(n_boot),
                          flags=flags, boot_draws=draws)
