"""Independent numerical oracles shared by the unit and acceptance suites.

Everything here is deliberately written against the public contracts only:
central finite differences for analytic derivatives, and a from-scratch
subgradient check for penalized least-squares fits.
"""

import numpy as np


def fd_step(value):
    return 1e-6 * max(1.0, abs(float(value)))


def rel_err(analytic, numeric):
    a = np.asarray(analytic, dtype=float)
    f = np.asarray(numeric, dtype=float)
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(f)))
    return float(np.max(np.abs(a - f) / scale))


def fd_dm_dalpha(model, w, d, alpha, mu):
    h = fd_step(alpha)
    return (np.asarray(model.m(w, d, alpha + h, mu))
            - np.asarray(model.m(w, d, alpha - h, mu))) / (2 * h)


def fd_dm_dmu(model, w, d, alpha, mu):
    mu = np.asarray(mu, dtype=float)
    cols = []
    for j in range(mu.size):
        h = fd_step(mu[j])
        up, dn = mu.copy(), mu.copy()
        up[j] += h
        dn[j] -= h
        cols.append((np.asarray(model.m(w, d, alpha, up))
                     - np.asarray(model.m(w, d, alpha, dn))) / (2 * h))
    return np.column_stack(cols)


def random_linear_inputs(rng):
    return (float(rng.uniform(-3, 3)), None, float(rng.uniform(-2, 2)),
            rng.uniform(-2, 2, size=2))


def random_logit_inputs(rng, q):
    return (rng.uniform(-2, 2, size=q), float(rng.integers(0, 2)),
            float(rng.uniform(-2, 2)), rng.uniform(-1.5, 1.5, size=1 + q))


def max_derivative_fd_error(model, input_maker, n_inputs, seed=0):
    """Worst relative error of both analytic derivatives over random inputs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_inputs):
        w, d, alpha, mu = input_maker(rng)
        worst = max(worst,
                    rel_err(model.dm_dalpha(w, d, alpha, mu),
                            fd_dm_dalpha(model, w, d, alpha, mu)),
                    rel_err(model.dm_dmu(w, d, alpha, mu),
                            fd_dm_dmu(model, w, d, alpha, mu)))
    return worst


def kkt_violation(features, target, coef_raw, lam1, lam2, weights=None):
    """Max stationarity violation of the penalized least-squares objective.

    The solver profiles the intercept out by centering, so its argmin solves
    ||y_c - X_c pi||^2 + lam2 ||pi||^2 + lam1 sum_j w_j |pi_j| on the
    centered data. For active coordinates the exact gradient must vanish;
    for zero coordinates the score must stay inside the l1 threshold.
    Returns (violation, scale) with scale = 2 max_j |X_j'(y - ybar)|.
    """
    X = np.asarray(features, dtype=float)
    X = X - X.mean(axis=0)
    y = np.asarray(target, dtype=float)
    y = y - y.mean()
    pi = np.asarray(coef_raw, dtype=float)
    w = np.ones(pi.size) if weights is None else np.asarray(weights, float)
    score = 2.0 * X.T @ (y - X @ pi)
    grad_pen = 2.0 * lam2 * pi
    viol = 0.0
    for j in range(pi.size):
        if pi[j] != 0.0:
            stat = score[j] - grad_pen[j] - lam1 * w[j] * np.sign(pi[j])
            viol = max(viol, abs(stat))
        else:
            viol = max(viol, max(0.0, abs(score[j]) - lam1 * w[j]))
    scale = 2.0 * float(np.max(np.abs(X.T @ y))) if pi.size else 1.0
    return viol, max(scale, 1e-12)
