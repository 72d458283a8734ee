"""First-stage panel estimation.

Slope coefficients come from either the within (fixed-effects OLS) estimator or
a two-step GMM for the dynamic AR(1) panel; per-individual effects are averages
of y - x'beta over a stated window, and residual variances estimate the noise
in those averages. The debiasing pipeline reserves the final period for its
adjustment term, so it runs every statistic here with horizon t_len - 1; the
plug-in baselines use the full horizon.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import HorizonTooLarge, RankDeficientDesign

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class FirstStageFit:
    """Slope estimate plus per-individual intercepts and full residual matrix.

    ``intercepts`` and ``residuals`` cover ALL individuals (computed from the
    subset-estimated beta and each individual's own mean over periods
    1..horizon); rows outside the estimation subset are still meaningful
    because the intercept is individual-specific.
    """

    beta: np.ndarray
    method: str
    horizon: int
    intercepts: np.ndarray
    residuals: np.ndarray
    cond: float | None = None
    info: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AlphaEstimates:
    """Per-individual effect estimates for one fold."""

    alpha: np.ndarray
    horizon: int
    shrinkage: str = "none"
    indices: np.ndarray | None = None


@dataclass(frozen=True)
class ResidualVariances:
    """Estimated variance of each individual's time-averaged residual."""

    u2: np.ndarray
    method: str = "iid"
    lag: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "u2", np.asarray(self.u2, dtype=float))


def _subset_indices(panel, subset):
    if subset is None:
        return np.arange(panel.n)
    idx = np.asarray(subset)
    if idx.dtype == bool:
        return np.flatnonzero(idx)
    return idx


def _intercepts_and_residuals(panel, beta, horizon):
    fitted = panel.x @ beta if beta.size else np.zeros_like(panel.y)
    net = panel.y - fitted
    intercepts = net[:, :horizon].mean(axis=1)
    residuals = net - intercepts[:, None]
    return intercepts, residuals


def within_fe_ols(panel, subset=None, horizon=None):
    """Fixed-effects OLS on individual-demeaned data over the subset.

    ``horizon`` is the fitting window (periods 1..horizon); it defaults to the
    full panel. Residuals for all individuals use the subset beta and each
    individual's own window mean, so per-individual residual means over the
    window are exactly zero.
    """
    idx = _subset_indices(panel, subset)
    if idx.size == 0:
        raise ValueError("subset is empty")
    horizon = panel.t_len if horizon is None else int(horizon)
    if not 2 <= horizon <= panel.t_len:
        raise HorizonTooLarge(f"horizon must be in [2, {panel.t_len}], got {horizon}")

    p = panel.p
    if p == 0:
        beta = np.empty(0)
        cond = None
    else:
        yw = panel.y[idx, :horizon]
        xw = panel.x[idx, :horizon, :]
        yt = (yw - yw.mean(axis=1, keepdims=True)).ravel()
        xt = (xw - xw.mean(axis=1, keepdims=True)).reshape(-1, p)
        sv = np.linalg.svd(xt, compute_uv=False)
        if sv.size == 0 or sv[-1] <= sv[0] * 1e-10 or xt.shape[0] < p:
            cond = float("inf") if (sv.size == 0 or sv[-1] == 0) else float(sv[0] / sv[-1])
            raise RankDeficientDesign(
                f"within-transformed design is rank deficient (cond={cond:.3g})", cond)
        cond = float(sv[0] / sv[-1])
        beta = np.linalg.lstsq(xt, yt, rcond=None)[0]

    intercepts, residuals = _intercepts_and_residuals(panel, beta, horizon)
    return FirstStageFit(beta, "within-ols", horizon, intercepts, residuals, cond)


def _bb_moment_arrays(panel, idx, min_t):
    """Stacked per-individual moment pieces: g_i(beta) = a_i - beta * b_i."""
    T = panel.t_len
    lev = np.empty((idx.size, T + 1))
    lev[:, 0] = panel.x[idx, 0, 0]
    lev[:, 1:] = panel.y[idx]
    a_cols, b_cols = [], []
    for t in range(min_t, T + 1):
        dy = lev[:, t] - lev[:, t - 1]
        dy_lag = lev[:, t - 1] - lev[:, t - 2]
        a_cols += [dy, lev[:, t - 2] * dy, lev[:, t - 3] * dy, dy_lag * lev[:, t]]
        b_cols += [dy_lag, lev[:, t - 2] * dy_lag, lev[:, t - 3] * dy_lag,
                   dy_lag * lev[:, t - 1]]
    return np.column_stack(a_cols), np.column_stack(b_cols)


def blundell_bond(panel, subset=None, min_t=4, horizon=None):
    """Two-step GMM for the dynamic panel AR(1) slope.

    Moment rows per period t = min_t..T: the differenced equation, the same
    equation instrumented by the t-2 and t-3 levels, and the level equation
    instrumented by the lagged difference. Moments are linear in the scalar
    slope, so each step solves in closed form. Step 1 uses identity weighting;
    step 2 inverts the centered empirical covariance of the stacked moments,
    with a diagonal ridge fallback (1e-8 * trace/dim) when near-singular.
    """
    if not panel.lag_structure or panel.p != 1:
        raise ValueError("blundell_bond needs a dynamic panel (x column 0 = lagged y)")
    T = panel.t_len
    min_t = int(min_t)
    if not 4 <= min_t <= T:
        raise ValueError(f"min_t must be in [4, {T}], got {min_t}")
    idx = _subset_indices(panel, subset)
    if idx.size < 2:
        raise ValueError("need at least 2 individuals")
    horizon = T if horizon is None else int(horizon)
    if not 2 <= horizon <= T:
        raise HorizonTooLarge(f"horizon must be in [2, {T}], got {horizon}")

    A, B = _bb_moment_arrays(panel, idx, min_t)
    abar = A.mean(axis=0)
    bbar = B.mean(axis=0)
    beta1 = float(bbar @ abar / (bbar @ bbar))

    g1 = A - beta1 * B
    gc = g1 - g1.mean(axis=0)
    S = gc.T @ gc / idx.size
    S = (S + S.T) / 2.0
    dim = S.shape[0]
    cond = float(np.linalg.cond(S))
    ridged = False
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        tr = float(np.trace(S))
        bump = 1e-8 * (tr / dim if tr > 0 else 1.0)
        S = S + bump * np.eye(dim)
        ridged = True
    W = np.linalg.inv(S)
    W = (W + W.T) / 2.0
    wa = W @ abar
    wb = W @ bbar
    beta2 = float(bbar @ wa / (bbar @ wb))

    def q2(b):
        g = abar - b * bbar
        return float(g @ W @ g)

    beta = np.array([beta2])
    intercepts, residuals = _intercepts_and_residuals(panel, beta, horizon)
    info = {
        "beta_step1": beta1,
        "objective_step2_at_step1": q2(beta1),
        "objective_step2": q2(beta2),
        "weighting_ridged": ridged,
        "weighting_cond": cond,
        "n_moments": dim,
        "min_t": min_t,
    }
    return FirstStageFit(beta, "blundell-bond", horizon, intercepts, residuals,
                         cond=None, info=info)


def extract_alpha(panel, beta, fold=None, horizon=None):
    """Per-individual effects: mean over t=1..horizon of (y_it - x_it'beta).

    Defaults to horizon = t_len - 1 (the final period is reserved for the
    adjustment term); horizon = t_len is allowed for the plug-in baselines.
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    horizon = panel.t_len - 1 if horizon is None else int(horizon)
    if horizon > panel.t_len:
        raise HorizonTooLarge(f"horizon {horizon} exceeds t_len {panel.t_len}")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    idx = _subset_indices(panel, fold)
    yw = panel.y[idx, :horizon]
    if beta.size:
        xw = panel.x[idx, :horizon, :]
        alpha = (yw - xw @ beta).mean(axis=1)
    else:
        alpha = yw.mean(axis=1)
    return AlphaEstimates(alpha, horizon, "none", idx)


def residual_variance(residuals, horizon, method="iid", lag=None):
    """Variance of each individual's time-averaged residual over the window.

    iid: u2_i = sum_t r_it^2 / horizon^2. Newey-West adds Bartlett-weighted
    autocovariance terms (w_j = 1 - j/(lag+1)) and floors negatives at 0;
    the default lag is floor(4 (horizon/100)^(2/9)).
    """
    r = np.asarray(residuals, dtype=float)
    if r.ndim == 1:
        r = r[None, :]
    horizon = int(horizon)
    if horizon < 2:
        raise ValueError("horizon must be >= 2")
    if r.shape[1] < horizon:
        raise HorizonTooLarge(f"residual matrix has {r.shape[1]} periods < horizon {horizon}")
    r = r[:, :horizon]
    h2 = float(horizon) ** 2

    if method == "iid":
        u2 = (r ** 2).sum(axis=1) / h2
        return ResidualVariances(u2, "iid")
    if method != "newey-west":
        raise ValueError(f"unknown method {method!r}")

    if lag is None:
        lag = int(np.floor(4.0 * (horizon / 100.0) ** (2.0 / 9.0)))
    lag = max(0, min(int(lag), horizon - 1))
    acc = (r ** 2).sum(axis=1)
    for j in range(1, lag + 1):
        w = 1.0 - j / (lag + 1.0)
        acc = acc + 2.0 * w * (r[:, :-j] * r[:, j:]).sum(axis=1)
    u2 = np.maximum(acc, 0.0) / h2
    return ResidualVariances(u2, "newey-west", lag)
