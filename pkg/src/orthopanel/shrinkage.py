"""Empirical-Bayes and SURE shrinkage of per-individual effect estimates.

Within a fold, each raw estimate alpha_i carries noise of (estimated) variance
u2_i. Shrinkage pulls it toward the fold mean with weight
s_i = u2_i / (u2_i + sigma2): noisier estimates shrink harder. The prior
variance sigma2 is either the moment estimate (EB) or the minimizer of an
unbiased risk estimate (SURE).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FoldTooSmall
from .panel import ResidualVariances

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ShrinkageFit:
    shrunk: np.ndarray
    sigma_alpha2: float
    center: float
    weights: np.ndarray
    method: str


def _as_u2(u2):
    if isinstance(u2, ResidualVariances):
        return u2.u2
    return np.asarray(u2, dtype=float)


def _combine(alphas, u2, sigma2, center, method):
    denom = u2 + sigma2
    weights = np.divide(u2, denom, out=np.zeros_like(u2), where=denom > 0)
    shrunk = weights * center + (1.0 - weights) * alphas
    return ShrinkageFit(shrunk, float(sigma2), float(center), weights, method)


def eb_shrink(alphas, u2):
    """Moment-based empirical Bayes shrinkage toward the fold mean.

    sigma2 = max(0, sample variance of alphas (ddof=1) - mean of u2_i);
    s_i = u2_i / (u2_i + sigma2), with s_i = 0 when both terms vanish.
    """
    alphas = np.asarray(alphas, dtype=float)
    u2 = _as_u2(u2)
    if alphas.size < 2:
        raise FoldTooSmall("eb_shrink needs a fold of size >= 2")
    center = float(alphas.mean())
    sigma2 = max(0.0, float(alphas.var(ddof=1)) - float(u2.mean()))
    return _combine(alphas, u2, sigma2, center, "eb")


def ure_objective(sigma2, alphas, u2, center):
    """Mean unbiased risk estimate of the shrinkage rule at prior variance sigma2.

    Per-individual term: u2 + u2^2 (alpha - center)^2 / (sigma2 + u2)^2
    - 2 u2^2 / (sigma2 + u2); individuals with u2 = 0 contribute 0.
    """
    alphas = np.asarray(alphas, dtype=float)
    u2 = _as_u2(u2)
    dev2 = (alphas - center) ** 2
    denom = sigma2 + u2
    pos = u2 > 0
    terms = np.zeros_like(u2)
    terms[pos] = (u2[pos]
                  + u2[pos] ** 2 * dev2[pos] / denom[pos] ** 2
                  - 2.0 * u2[pos] ** 2 / denom[pos])
    return float(terms.mean())


def _golden_section(f, a, b, reltol):
    fa, fb = f(a), f(b)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > reltol * max(1.0, abs(b)):
        if fc <= fd:
            b, fb = d, fd
            d, fd = c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, fa = c, fc
            c, fc = d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    pts = [(fa, a), (fc, c), (fd, d), (fb, b)]
    return min(pts)[::-1]


def sure_shrink(alphas, u2):
    """Shrinkage with the prior variance minimizing the unbiased risk estimate.

    The search covers sigma2 in [0, 100 * var(alphas)]: a 200-point log grid
    locates the basin and golden-section search refines it to relative
    tolerance 1e-6. The returned sigma2 never scores worse than any grid point.
    """
    alphas = np.asarray(alphas, dtype=float)
    u2 = _as_u2(u2)
    if alphas.size < 2:
        raise FoldTooSmall("sure_shrink needs a fold of size >= 2")
    center = float(alphas.mean())
    var_a = float(alphas.var(ddof=1))
    upper = 100.0 * var_a

    if not (u2 > 0).any():
        # degenerate URE: flat in sigma2; report the upper bound, no shrinkage
        return _combine(alphas, u2, upper, center, "sure")

    def f(s2):
        return ure_objective(s2, alphas, u2, center)

    if upper <= 0.0:
        return _combine(alphas, u2, 0.0, center, "sure")

    lo = min(1e-8, upper * 1e-12)
    grid = np.concatenate([[0.0], np.geomspace(lo, upper, 199)])
    vals = np.array([f(s2) for s2 in grid])
    k = int(np.argmin(vals))
    a = grid[k - 1] if k > 0 else grid[0]
    b = grid[k + 1] if k + 1 < grid.size else grid[-1]
    s2_best, v_best = grid[k], vals[k]
    if b > a:
        s2_ref, v_ref = _golden_section(f, a, b, 1e-6)
        if v_ref < v_best:
            s2_best, v_best = s2_ref, v_ref
    return _combine(alphas, u2, s2_best, center, "sure")
