"""Elastic net and adaptive elastic net by cyclic coordinate descent.

The penalized objective is, for coefficient vector pi on centered data,

    ||y - X pi||^2 + lam2 ||pi||_2^2 + lam1 * sum_j w_j |pi_j|

(raw sums of squares, no 1/n factors), and the returned estimator is
(1 + lam2/n) times the argmin. The intercept is unpenalized and handled by
centering, so the reported KKT certificate is exact for the problem on the
centered design. Coordinate updates run on the Gram matrix (each update is
O(k)), with warm starts along descending lam1 paths for cross-validation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import make_folds, _as_generator

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a hard dep, but stay importable
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


@njit(cache=True)
def _cd_solve(G, c, yty, lam1w, lam2, pi, max_sweeps, tol, kkt_tol, obj_path):
    """Cyclic coordinate descent on the Gram system. Mutates pi in place.

    Returns (sweeps_used, kkt_violation, converged). obj_path[s] holds the
    objective after sweep s (used by the monotonicity certificate).
    """
    k = G.shape[0]
    q = G @ pi  # q_j = (G pi)_j, refreshed exactly every sweep
    sweeps = 0
    kkt = np.inf
    converged = False
    while sweeps < max_sweeps:
        delta_max = 0.0
        for j in range(k):
            gjj = G[j, j]
            zj = c[j] - q[j] + gjj * pi[j]
            denom = gjj + lam2
            thr = 0.5 * lam1w[j]
            if denom <= 0.0:
                new = 0.0
            elif zj > thr:
                new = (zj - thr) / denom
            elif zj < -thr:
                new = (zj + thr) / denom
            else:
                new = 0.0
            d = new - pi[j]
            if d != 0.0:
                pi[j] = new
                for m in range(k):
                    q[m] += G[m, j] * d
                if abs(d) > delta_max:
                    delta_max = abs(d)
        q = G @ pi
        obj = yty + lam2 * (pi @ pi) - 2.0 * (c @ pi) + pi @ q
        for j in range(k):
            obj += lam1w[j] * abs(pi[j])
        obj_path[sweeps] = obj
        sweeps += 1
        if delta_max <= tol:
            kkt = 0.0
            for j in range(k):
                grad = -2.0 * (c[j] - q[j]) + 2.0 * lam2 * pi[j]
                if pi[j] > 0.0:
                    v = abs(grad + lam1w[j])
                elif pi[j] < 0.0:
                    v = abs(grad - lam1w[j])
                else:
                    v = abs(2.0 * (c[j] - q[j])) - lam1w[j]
                    if v < 0.0:
                        v = 0.0
                if v > kkt:
                    kkt = v
            if kkt <= kkt_tol:
                converged = True
                break
    return sweeps, kkt, converged


@njit(cache=True)
def _cd_path(G, c, yty, lam1_grid, w, lam2, max_sweeps, tol, kkt_tol, out):
    """Warm-started solves along a descending lam1 grid; out is (n_lam1, k)."""
    k = G.shape[0]
    pi = np.zeros(k)
    obj_path = np.empty(max_sweeps)
    lam1w = np.empty(k)
    for a in range(lam1_grid.shape[0]):
        for j in range(k):
            lam1w[j] = lam1_grid[a] * w[j]
        _cd_solve(G, c, yty, lam1w, lam2, pi, max_sweeps, tol, kkt_tol, obj_path)
        for j in range(k):
            out[a, j] = pi[j]


@dataclass
class EnetFit:
    """Solver output: rescaled coefficients plus the raw argmin and certificates."""

    coef: np.ndarray
    intercept: float
    coef_raw: np.ndarray
    lam1: float
    lam2: float
    weights: np.ndarray | None
    kkt_violation: float
    kkt_scale: float
    n_sweeps: int
    converged: bool
    objective_path: np.ndarray

    def predict(self, features):
        return np.asarray(features, dtype=float) @ self.coef + self.intercept


def _centered_gram(features, target):
    X = np.asarray(features, dtype=float)
    y = np.asarray(target, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.size:
        raise ValueError("features must be (n, k) aligned with target (n,)")
    if X.shape[0] < 2:
        raise ValueError("need n >= 2")
    xm = X.mean(axis=0)
    ym = float(y.mean())
    Xc = X - xm
    yc = y - ym
    G = Xc.T @ Xc
    c = Xc.T @ yc
    yty = float(yc @ yc)
    return G, c, yty, xm, ym


def kkt_scale(features, target):
    """Gradient scale at the zero vector: 2 * max_j |X_j'(y - ybar)| on centered X."""
    _, c, _, _, _ = _centered_gram(features, target)
    return 2.0 * float(np.abs(c).max()) if c.size else 0.0


def elastic_net(features, target, lam1, lam2, *, weights=None, tol=1e-7,
                max_sweeps=5000, warm_start=None):
    """Solve the (optionally weighted) elastic net; see the module docstring.

    The coefficients are returned on the input feature scale, rescaled by
    (1 + lam2/n); ``coef_raw`` is the un-rescaled argmin. ``kkt_violation`` is
    the max subgradient residual of coef_raw on the centered problem. When the
    sweep budget runs out the best iterate is returned with converged=False.
    """
    G, c, yty, xm, ym = _centered_gram(features, target)
    n, k = np.asarray(features).shape
    if weights is None:
        lam1w_vec = np.full(k, float(lam1))
        wvec = None
    else:
        wvec = np.asarray(weights, dtype=float)
        if wvec.shape != (k,):
            raise ValueError("weights must have one entry per feature")
        lam1w_vec = float(lam1) * wvec

    scale = 2.0 * float(np.abs(c).max()) if k else 0.0
    kkt_tol = 1e-7 * max(scale, 1e-300)
    pi = np.zeros(k) if warm_start is None else np.array(warm_start, dtype=float)
    obj_path = np.empty(int(max_sweeps))
    sweeps, kkt, converged = _cd_solve(
        G, c, yty, lam1w_vec, float(lam2), pi, int(max_sweeps), float(tol),
        kkt_tol, obj_path)

    factor = 1.0 + float(lam2) / n
    coef = factor * pi
    intercept = ym - float(xm @ coef)
    return EnetFit(
        coef=coef, intercept=intercept, coef_raw=pi.copy(), lam1=float(lam1),
        lam2=float(lam2), weights=wvec, kkt_violation=float(kkt),
        kkt_scale=scale, n_sweeps=int(sweeps), converged=bool(converged),
        objective_path=obj_path[:sweeps].copy())


def default_lam1_grid(features, target, weights=None, n_points=50, min_ratio=1e-4):
    """Log grid from the all-zero threshold 2*max_j |X_j'y|/w_j down by min_ratio."""
    _, c, _, _, _ = _centered_gram(features, target)
    r = np.abs(c)
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        r = np.divide(r, w, out=np.zeros_like(r), where=w > 0)
    lam_max = 2.0 * float(r.max()) if r.size else 0.0
    if lam_max <= 0.0:
        return np.array([0.0])
    return np.geomspace(lam_max, lam_max * min_ratio, int(n_points))


def default_lam2_grid(n):
    return float(n) * np.array([0.0, 0.1, 1.0, 10.0])


def cv_select(features, target, lam1_grid, lam2_grid, K=5, seed=0, *,
              weights=None, tol=1e-7, max_sweeps=5000):
    """K-fold CV over the penalty grid; returns the best (lam1, lam2).

    Prediction error is measured for the estimator as defined (rescaled
    coefficients plus centering intercept). Ties break toward larger lam1,
    then larger lam2.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(target, dtype=float)
    n, k = X.shape
    K = int(K)
    if K < 2:
        raise ValueError("K must be >= 2")
    K = min(K, n)
    lam1s = np.sort(np.asarray(lam1_grid, dtype=float))[::-1].copy()
    lam2s = np.asarray(lam2_grid, dtype=float)
    w = np.ones(k) if weights is None else np.asarray(weights, dtype=float)

    rng = _as_generator(seed, "cv")
    folds = make_folds(n, K, rng)
    sse = np.zeros((lam1s.size, lam2s.size))
    for fold in range(K):
        val = folds.indices(fold)
        train = folds.complement(fold)
        Xt, yt = X[train], y[train]
        xm = Xt.mean(axis=0)
        ym = float(yt.mean())
        Xc = Xt - xm
        yc = yt - ym
        G = Xc.T @ Xc
        c = Xc.T @ yc
        yty = float(yc @ yc)
        scale = 2.0 * float(np.abs(c).max()) if k else 0.0
        kkt_tol = 1e-7 * max(scale, 1e-300)
        factor_n = train.size
        Xv = X[val]
        yv = y[val]
        for b, lam2 in enumerate(lam2s):
            out = np.empty((lam1s.size, k))
            _cd_path(G, c, yty, lam1s, w, float(lam2), int(max_sweeps),
                     float(tol), kkt_tol, out)
            factor = 1.0 + float(lam2) / factor_n
            coefs = factor * out
            preds = Xv @ coefs.T + (ym - coefs @ xm)
            sse[:, b] += ((preds - yv[:, None]) ** 2).sum(axis=0)

    best = None
    for a in range(lam1s.size):
        for b in range(lam2s.size):
            cand = (sse[a, b], lam1s[a], lam2s[b])
            if best is None or cand[0] < best[0]:
                best = cand
            elif cand[0] == best[0] and (cand[1], cand[2]) > (best[1], best[2]):
                best = cand
    return float(best[1]), float(best[2])


def adaptive_elastic_net(features, target, lam1_star, lam2, gamma, *,
                         stage1_fit=None, epsilon=None, seed=0, cv_folds=5,
                         lam1_grid=None, lam2_grid=None, tol=1e-7,
                         max_sweeps=5000):
    """Two-stage adaptive elastic net.

    Stage 1 is a plain elastic net (penalties CV-selected unless a fitted
    stage1_fit is supplied); its coefficients set the adaptive weights
    w_j = (|coef_j| + epsilon)^(-gamma) with epsilon defaulting to 1/n.
    Stage 2 re-solves with the weighted l1 penalty lam1_star and the same
    rescale. Returns (stage2_fit, stage1_fit).
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(target, dtype=float)
    n = y.size
    if stage1_fit is None:
        l1g = default_lam1_grid(X, y) if lam1_grid is None else lam1_grid
        l2g = default_lam2_grid(n) if lam2_grid is None else lam2_grid
        l1, l2 = cv_select(X, y, l1g, l2g, K=cv_folds, seed=seed, tol=tol,
                           max_sweeps=max_sweeps)
        stage1_fit = elastic_net(X, y, l1, l2, tol=tol, max_sweeps=max_sweeps)
    eps = (1.0 / n) if epsilon is None else float(epsilon)
    w = (np.abs(stage1_fit.coef) + eps) ** (-float(gamma))
    fit = elastic_net(X, y, lam1_star, lam2, weights=w, tol=tol,
                      max_sweeps=max_sweeps)
    return fit, stage1_fit
