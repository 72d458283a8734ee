"""Dictionary construction and per-coordinate nuisance regressions.

The projection of each moment-derivative coordinate onto observables is
learned by adaptive elastic net over a dictionary built from the panel history
(periods 1..T-1 only; the final period stays reserved) plus the estimated
effect, optionally with effect-by-history interactions. Standardization
parameters are frozen on the training fold and reused verbatim at prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .enet import (adaptive_elastic_net, cv_select, default_lam1_grid,
                   default_lam2_grid, elastic_net)
from .errors import SpecMismatch


@dataclass
class DictionarySpec:
    """What goes into the feature vector, plus frozen standardization.

    level_columns selects regressor columns included per period ("all", None,
    or a tuple of column indices); include_y adds the outcome history
    y_1..y_{T-1}; interaction_order=2 appends alpha times each level feature.
    """

    include_alpha: bool = True
    level_columns: object = "all"
    include_y: bool = False
    interaction_order: int = 1
    means_: np.ndarray | None = None
    scales_: np.ndarray | None = None

    def fresh(self):
        """Copy with standardization cleared (one fit per training fold)."""
        return replace(self, means_=None, scales_=None)

    def _columns(self, p):
        if self.level_columns == "all":
            return list(range(p))
        if self.level_columns is None:
            return []
        return list(self.level_columns)

    def featurize(self, x_rows, alpha, y_rows=None):
        """Raw (unstandardized) feature matrix for a batch of individuals.

        x_rows: (n, T, p) regressor history; alpha: (n,) effect estimates;
        y_rows: (n, T) outcome history, needed only when include_y.
        """
        x_rows = np.asarray(x_rows, dtype=float)
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        n, T, p = x_rows.shape
        cols = self._columns(p)
        blocks = []
        if cols:
            blocks.append(x_rows[:, :T - 1, cols].reshape(n, -1))
        if self.include_y:
            if y_rows is None:
                raise ValueError("include_y requires the outcome history")
            blocks.append(np.asarray(y_rows, dtype=float)[:, :T - 1])
        base = np.hstack(blocks) if blocks else np.empty((n, 0))
        parts = [base]
        if self.include_alpha:
            parts.append(alpha[:, None])
        if self.interaction_order == 2:
            parts.append(alpha[:, None] * base)
        elif self.interaction_order != 1:
            raise ValueError("interaction_order must be 1 or 2")
        return np.hstack(parts)

    def fit_standardization(self, raw):
        """Record per-feature mean/scale from the training fold (zero-variance
        features get scale 1 so they map to exact zeros)."""
        raw = np.asarray(raw, dtype=float)
        means = raw.mean(axis=0)
        scales = raw.std(axis=0)
        scales = np.where(scales > 0, scales, 1.0)
        self.means_ = means
        self.scales_ = scales
        return self.apply(raw)

    def apply(self, raw):
        if self.means_ is None:
            raise SpecMismatch("standardization has not been fit")
        raw = np.asarray(raw, dtype=float)
        if raw.shape[1] != self.means_.size:
            raise SpecMismatch(
                f"feature count {raw.shape[1]} differs from fit-time {self.means_.size}")
        return (raw - self.means_) / self.scales_

    @property
    def n_features(self):
        return None if self.means_ is None else self.means_.size


def build_dictionary(x_rows, alpha_i, spec, y_rows=None):
    """Feature vector for one individual (standardized when spec is fitted)."""
    x_rows = np.asarray(x_rows, dtype=float)
    if x_rows.ndim != 3:
        x_rows = x_rows[None]
    raw = spec.featurize(x_rows, np.atleast_1d(alpha_i),
                         None if y_rows is None else np.atleast_2d(y_rows))
    if spec.means_ is not None:
        if raw.shape[1] != spec.means_.size:
            raise SpecMismatch(
                f"feature count {raw.shape[1]} differs from fit-time {spec.means_.size}")
        raw = spec.apply(raw)
    return raw[0]


@dataclass
class AenConfig:
    """Penalty grids, CV, and the adaptive exponent rule.

    gamma defaults to ceil(2g/(1-g)) + 1 with g = ln(T)/ln(N) clipped to
    (0.5, 0.99), and is itself clipped to [1, 6]. The adaptive-weight floor
    epsilon defaults to 1/n_train at fit time.
    """

    n_lambda1: int = 50
    lambda1_min_ratio: float = 1e-4
    lambda2_factors: tuple = (0.0, 0.1, 1.0, 10.0)
    cv_folds: int = 5
    gamma: float | None = None
    g: float | None = None
    max_sweeps: int = 5000
    tol: float = 1e-7
    epsilon: float | None = None

    def __post_init__(self):
        if self.n_lambda1 < 1 or not self.lambda2_factors:
            raise ValueError("penalty grids must be nonempty")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be positive")

    def resolve_gamma(self, n, t_len):
        if self.gamma is not None:
            return float(min(max(self.gamma, 1.0), 6.0))
        g = self.g if self.g is not None else math.log(t_len) / math.log(n)
        g = min(max(g, 0.5001), 0.99)
        gamma = math.ceil(2.0 * g / (1.0 - g)) + 1.0
        return float(min(max(gamma, 1.0), 6.0))


@dataclass
class CoordFit:
    """One moment coordinate: a known constant or a fitted linear predictor."""

    kind: str                      # "const" | "enet"
    value: float = 0.0
    coef: np.ndarray | None = None
    intercept: float = 0.0
    lam1: float = 0.0
    lam2: float = 0.0
    lam1_star: float = 0.0
    gamma: float = 0.0
    kkt_violation: float = 0.0
    kkt_scale: float = 0.0
    converged: bool = True
    n_selected: int = 0


@dataclass
class NuisanceFit:
    """Per-coordinate predictors of the moment-derivative projection."""

    spec: DictionarySpec
    coords: list
    fold: int = -1

    def predict_from_features(self, features):
        n = features.shape[0]
        out = np.empty((n, len(self.coords)))
        for j, cf in enumerate(self.coords):
            if cf.kind == "const":
                out[:, j] = cf.value
            else:
                out[:, j] = features @ cf.coef + cf.intercept
        return out

    def predict(self, x_rows, alphas, y_rows=None):
        raw = self.spec.featurize(np.asarray(x_rows, dtype=float),
                                  np.asarray(alphas, dtype=float), y_rows)
        feats = self.spec.apply(raw)
        return self.predict_from_features(feats)


def fit_nuisance(x_rows, w, d, alphas, model, mu_tilde, spec, config,
                 seed=0, y_rows=None, fold=-1, t_len=None, n_total=None):
    """Fit the per-coordinate projections on one training fold.

    Targets are the coordinates of dm_dalpha evaluated at (w_i, d_i,
    alpha_ill', mu_tilde_l). Coordinates declared by the model as known
    constants are stored directly; the rest get a CV-tuned adaptive elastic
    net on the (standardized) dictionary. gamma's rate rule uses the full
    panel dimensions (t_len, n_total), defaulting to the training shapes.
    """
    x_rows = np.asarray(x_rows, dtype=float)
    alphas = np.asarray(alphas, dtype=float)
    mu_tilde = np.asarray(mu_tilde, dtype=float)
    if not np.isfinite(mu_tilde).all():
        raise ValueError("preliminary mu must be finite")
    n_train = alphas.size
    t_len = x_rows.shape[1] if t_len is None else int(t_len)
    n_total = n_train if n_total is None else int(n_total)

    spec = spec.fresh()
    raw = spec.featurize(x_rows, alphas, y_rows)
    feats = spec.fit_standardization(raw)
    targets = model.dm_dalpha_batch(w, d, alphas, mu_tilde)
    known = model.known_a_coords(mu_tilde)
    gamma = config.resolve_gamma(n_total, t_len)
    eps = config.epsilon if config.epsilon is not None else 1.0 / n_train
    lam2_grid = default_lam2_grid(n_train)

    coords = []
    for j in range(model.dim_m):
        if j in known:
            coords.append(CoordFit(kind="const", value=float(known[j])))
            continue
        y_j = targets[:, j]
        lam1_grid = default_lam1_grid(feats, y_j, n_points=config.n_lambda1,
                                      min_ratio=config.lambda1_min_ratio)
        l1, l2 = cv_select(feats, y_j, lam1_grid, lam2_grid, K=config.cv_folds,
                           seed=_coord_seed(seed, j, 1), tol=config.tol,
                           max_sweeps=config.max_sweeps)
        stage1 = elastic_net(feats, y_j, l1, l2, tol=config.tol,
                             max_sweeps=config.max_sweeps)
        weights = (np.abs(stage1.coef) + eps) ** (-gamma)
        lam1s_grid = default_lam1_grid(feats, y_j, weights=weights,
                                       n_points=config.n_lambda1,
                                       min_ratio=config.lambda1_min_ratio)
        l1s, _ = cv_select(feats, y_j, lam1s_grid, np.array([l2]),
                           K=config.cv_folds, seed=_coord_seed(seed, j, 2),
                           weights=weights, tol=config.tol,
                           max_sweeps=config.max_sweeps)
        stage2, _ = adaptive_elastic_net(feats, y_j, l1s, l2, gamma,
                                         stage1_fit=stage1, epsilon=eps,
                                         tol=config.tol,
                                         max_sweeps=config.max_sweeps)
        coords.append(CoordFit(
            kind="enet", coef=stage2.coef, intercept=stage2.intercept,
            lam1=l1, lam2=l2, lam1_star=l1s, gamma=gamma,
            kkt_violation=max(stage1.kkt_violation, stage2.kkt_violation),
            kkt_scale=max(stage1.kkt_scale, stage2.kkt_scale),
            converged=stage1.converged and stage2.converged,
            n_selected=int(np.count_nonzero(stage2.coef))))
    return NuisanceFit(spec=spec, coords=coords, fold=fold)


def _coord_seed(seed, coord, stage):
    return (int(seed) * 1000003 + coord * 101 + stage) % (2 ** 63)
