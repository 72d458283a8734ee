"""Moment systems m(w_i, d_i, alpha_i, mu) with analytic derivatives.

A model exposes per-observation evaluation plus vectorized *_batch variants
(the batch forms are what the estimation pipeline calls in its hot path).
``known_a_coords`` lets a model declare moment coordinates whose
derivative-projection is a closed-form constant, so the nuisance stage can
skip the regression for them.
"""

from __future__ import annotations

import numpy as np


def logistic(x):
    """Overflow-safe logistic function.

    Branches on sign: x >= 0 uses 1/(1+exp(-x)), x < 0 uses exp(x)/(1+exp(x)),
    so the exponent is never positive.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


class MomentModel:
    """Behavioral contract for a moment system.

    Concrete models define dim_m >= dim_mu, the scalar-observation methods
    m / dm_dalpha / dm_dmu, and may override the batch methods with vectorized
    versions. ``w`` is the observation's covariate vector (length q), ``d`` the
    optional binary outcome (None when the model ignores it).
    """

    dim_m: int
    dim_mu: int
    name: str

    def m(self, w, d, alpha, mu):
        raise NotImplementedError

    def dm_dalpha(self, w, d, alpha, mu):
        raise NotImplementedError

    def dm_dmu(self, w, d, alpha, mu):
        raise NotImplementedError

    def known_a_coords(self, mu):
        """Map coordinate index -> constant a-value; empty when none are known."""
        return {}

    # -- batch fallbacks -----------------------------------------------------

    def m_batch(self, w, d, alpha, mu):
        n = len(alpha)
        out = np.empty((n, self.dim_m))
        for i in range(n):
            out[i] = self.m(w[i], None if d is None else d[i], alpha[i], mu)
        return out

    def dm_dalpha_batch(self, w, d, alpha, mu):
        n = len(alpha)
        out = np.empty((n, self.dim_m))
        for i in range(n):
            out[i] = self.dm_dalpha(w[i], None if d is None else d[i], alpha[i], mu)
        return out

    def dm_dmu_batch(self, w, d, alpha, mu):
        n = len(alpha)
        out = np.empty((n, self.dim_m, self.dim_mu))
        for i in range(n):
            out[i] = self.dm_dmu(w[i], None if d is None else d[i], alpha[i], mu)
        return out


class LinearModel(MomentModel):
    """Linear cross-sectional regression on the latent effect.

    mu = (mu1, mu2); residual r = w - mu1 - mu2*alpha; moments (r, alpha*r).
    Coordinate 0's derivative-projection is the constant -mu2.
    """

    dim_m = 2
    dim_mu = 2
    name = "linear"

    @staticmethod
    def _scalar_w(w):
        w = np.asarray(w, dtype=float)
        if w.ndim == 0:
            return float(w)
        if w.size != 1:
            raise ValueError("LinearModel expects a single w column")
        return float(w.ravel()[0])

    def m(self, w, d, alpha, mu):
        w = self._scalar_w(w)
        r = w - mu[0] - mu[1] * alpha
        return np.array([r, alpha * r])

    def dm_dalpha(self, w, d, alpha, mu):
        w = self._scalar_w(w)
        return np.array([-mu[1], w - mu[0] - 2.0 * mu[1] * alpha])

    def dm_dmu(self, w, d, alpha, mu):
        return np.array([[-1.0, -alpha], [-alpha, -alpha ** 2]])

    def known_a_coords(self, mu):
        return {0: -float(mu[1])}

    def m_batch(self, w, d, alpha, mu):
        wv = np.asarray(w, dtype=float).reshape(len(alpha))
        r = wv - mu[0] - mu[1] * alpha
        return np.column_stack([r, alpha * r])

    def dm_dalpha_batch(self, w, d, alpha, mu):
        wv = np.asarray(w, dtype=float).reshape(len(alpha))
        c2 = wv - mu[0] - 2.0 * mu[1] * alpha
        return np.column_stack([np.full(len(alpha), -mu[1]), c2])

    def dm_dmu_batch(self, w, d, alpha, mu):
        n = len(alpha)
        out = np.empty((n, 2, 2))
        out[:, 0, 0] = -1.0
        out[:, 0, 1] = -alpha
        out[:, 1, 0] = -alpha
        out[:, 1, 1] = -(alpha ** 2)
        return out


class LogitModel(MomentModel):
    """Logit score moments with the latent effect as a regressor.

    mu ordering: (mu1 on alpha, then mu_- on the q columns of w). With
    r = d - logistic(w'mu_- + alpha*mu1), the moments are (r*alpha, r*w).
    """

    name = "logit"

    def __init__(self, q):
        self.q = int(q)
        if self.q < 1:
            raise ValueError("q must be >= 1")
        self.dim_m = 1 + self.q
        self.dim_mu = 1 + self.q

    def _index(self, w, alpha, mu):
        return float(np.dot(w, mu[1:]) + alpha * mu[0])

    def m(self, w, d, alpha, mu):
        w = np.asarray(w, dtype=float)
        lam = logistic(self._index(w, alpha, mu))
        r = d - lam
        return np.concatenate([[r * alpha], r * w])

    def dm_dalpha(self, w, d, alpha, mu):
        w = np.asarray(w, dtype=float)
        lam = logistic(self._index(w, alpha, mu))
        slope = mu[0] * lam * (1.0 - lam)
        first = -slope * alpha + d - lam
        return np.concatenate([[first], -slope * w])

    def dm_dmu(self, w, d, alpha, mu):
        w = np.asarray(w, dtype=float)
        lam = logistic(self._index(w, alpha, mu))
        z = np.concatenate([[alpha], w])
        return -lam * (1.0 - lam) * np.outer(z, z)

    def m_batch(self, w, d, alpha, mu):
        w = np.asarray(w, dtype=float)
        lam = logistic(w @ mu[1:] + alpha * mu[0])
        r = d - lam
        return np.column_stack([r * alpha, r[:, None] * w])

    def dm_dalpha_batch(self, w, d, alpha, mu):
        w = np.asarray(w, dtype=float)
        lam = logistic(w @ mu[1:] + alpha * mu[0])
        slope = mu[0] * lam * (1.0 - lam)
        first = -slope * alpha + d - lam
        return np.column_stack([first, -slope[:, None] * w])

    def dm_dmu_batch(self, w, d, alpha, mu):
        w = np.asarray(w, dtype=float)
        lam = logistic(w @ mu[1:] + alpha * mu[0])
        z = np.column_stack([alpha, w])
        scale = -(lam * (1.0 - lam))
        return scale[:, None, None] * (z[:, :, None] * z[:, None, :])


def get_model(name, q=None):
    """Model factory used by the CLI: name in {"linear", "logit"}."""
    if name == "linear":
        return LinearModel()
    if name == "logit":
        if q is None:
            raise ValueError("logit model needs q (number of w columns)")
        return LogitModel(q)
    raise ValueError(f"unknown model {name!r}")
