"""Debiased GMM for cross-sectional moments that contain a latent panel effect.

Pipeline per sample split: partition individuals into folds; for every fold
pair fit the panel slope on the individuals outside both folds and extract
held-out effect estimates; use those to get a preliminary target estimate and
to train the derivative-projection regressions; then assemble the debiased
sample moments (plug-in moment plus an adjustment term built from the reserved
final period), solve the two-step GMM, and form the sandwich variance. Results
are averaged across independent sample-split realizations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import CrossSection, PanelDataset, SeedConfig, make_folds
from .errors import (EstimationFailure, OrthopanelError, RankDeficientJacobian,
                     SingularJacobian, SingularNestedFit, SpecMismatch)
from .nuisance import AenConfig, DictionarySpec, NuisanceFit, fit_nuisance
from .panel import (blundell_bond, extract_alpha, residual_variance,
                    within_fe_ols)
from .shrinkage import eb_shrink, sure_shrink

_SHRINKAGE_METHODS = ("none", "eb", "sure")
_FIRST_STAGES = ("within", "blundell-bond")


@dataclass
class EstConfig:
    """Estimator knobs: fold count, split realizations, shrinkage, solver."""

    folds: int = 5
    splits: int = 20
    shrinkage: str = "none"
    first_stage: str = "within"
    min_t: int | None = None
    dictionary: DictionarySpec = field(default_factory=DictionarySpec)
    aen: AenConfig = field(default_factory=AenConfig)
    gmm_tol: float = 1e-10
    gmm_max_iter: int = 200
    seed: int = 0

    def __post_init__(self):
        self.shrinkage = str(self.shrinkage).lower()
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        if self.splits < 1:
            raise ValueError("need at least 1 split realization")
        if self.shrinkage not in _SHRINKAGE_METHODS:
            raise ValueError(f"shrinkage must be one of {_SHRINKAGE_METHODS}")
        if self.first_stage not in _FIRST_STAGES:
            raise ValueError(f"first_stage must be one of {_FIRST_STAGES}")
        if self.gmm_tol <= 0 or self.gmm_max_iter < 1:
            raise ValueError("solver tolerance/iteration budget invalid")

    def resolve_min_t(self, t_len):
        """First usable period for the dynamic-panel moment stack."""
        if self.min_t is not None:
            return int(self.min_t)
        return 4 if t_len <= 16 else 6


@dataclass
class FoldArtifacts:
    """Everything produced for one fold of one split realization."""

    fold: int
    indices: np.ndarray
    beta_fit: object
    alpha_raw: np.ndarray
    alpha: np.ndarray
    alpha_nested: np.ndarray     # full length; NaN on this fold's rows
    mu_tilde: np.ndarray
    nuisance: NuisanceFit
    a_hat: np.ndarray
    psi: np.ndarray


@dataclass
class SplitResult:
    """One sample-split realization of the full estimator."""

    mu: np.ndarray
    mu_step1: np.ndarray
    vcov: np.ndarray
    G_hat: np.ndarray
    Upsilon_hat: np.ndarray
    Omega_hat: np.ndarray
    objective: float
    objective_step1: float
    iterations: int
    converged: bool
    flags: tuple
    kkt_rel: float
    sigma_alpha2: tuple | None
    alpha_used: np.ndarray
    psi: np.ndarray
    fold_artifacts: list


@dataclass
class EstimateResult:
    """Split-averaged estimate with sandwich inference.

    vcov is the per-observation asymptotic variance (average across splits);
    standard errors are sqrt(diag(vcov)/n_obs). G_hat is the mean moment
    Jacobian in the target parameter, Upsilon_hat the second-step weighting
    matrix, Omega_hat the outer-product moment covariance, all averaged over
    the surviving split realizations.
    """

    mu_hat: np.ndarray
    se: np.ndarray
    vcov: np.ndarray
    G_hat: np.ndarray
    Upsilon_hat: np.ndarray
    Omega_hat: np.ndarray
    per_split_mu: list
    diagnostics: dict
    n_obs: int

    def tstat(self, coord, null=0.0):
        return (self.mu_hat[coord] - null) / self.se[coord]

    def pvalue(self, coord, null=0.0):
        return math.erfc(abs(self.tstat(coord, null)) / math.sqrt(2.0))

    def confint(self, coord, level=0.95):
        z = _normal_quantile(0.5 + level / 2.0)
        return (self.mu_hat[coord] - z * self.se[coord],
                self.mu_hat[coord] + z * self.se[coord])

    def to_payload(self):
        return {
            "mu_hat": [float(v) for v in self.mu_hat],
            "se": [float(v) for v in self.se],
            "vcov": [[float(v) for v in row] for row in self.vcov],
            "n_obs": int(self.n_obs),
            "per_split_mu": [None if m is None else [float(v) for v in m]
                             for m in self.per_split_mu],
            "diagnostics": self.diagnostics,
        }


def _normal_quantile(p):
    # bisection on the erf-based CDF; plenty for CI construction
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(-mid / math.sqrt(2.0)) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class DebiasedSystem:
    """Sample moment function mu -> mean m(W_i, alpha_i, mu) + psi_bar.

    The adjustment mean psi_bar is a constant of the system: it never moves
    with mu. jacobian() is the mean of dm_dmu at the fixed effect estimates.
    """

    def __init__(self, w, d, alphas, model, psi_bar=None):
        self.w = np.asarray(w, dtype=float)
        self.d = None if d is None else np.asarray(d, dtype=float)
        self.alphas = np.asarray(alphas, dtype=float)
        self.model = model
        self.psi_bar = (np.zeros(model.dim_m) if psi_bar is None
                        else np.asarray(psi_bar, dtype=float))

    def moments(self, mu):
        return (self.model.m_batch(self.w, self.d, self.alphas, mu).mean(axis=0)
                + self.psi_bar)

    def jacobian(self, mu):
        return self.model.dm_dmu_batch(self.w, self.d, self.alphas, mu).mean(axis=0)


def preliminary_mu(w, d, alphas, model, tol=1e-10, max_iter=200):
    """Plain plug-in GMM (identity weighting) at the given effect estimates.

    Linear model: exact closed form (regress w on a constant and the effect).
    Otherwise Gauss-Newton on the unadjusted sample moments from zero.
    """
    alphas = np.asarray(alphas, dtype=float)
    if model.name == "linear":
        wv = np.asarray(w, dtype=float).reshape(alphas.size)
        design = np.column_stack([np.ones(alphas.size), alphas])
        gram = design.T @ design
        if not np.isfinite(gram).all() or np.linalg.cond(gram) > 1e14:
            raise SingularNestedFit(
                "effect estimates give a singular preliminary system")
        return np.linalg.solve(gram, design.T @ wv)
    system = DebiasedSystem(w, d, alphas, model)
    try:
        mu, _ = gmm_minimize(system, np.eye(model.dim_m),
                             np.zeros(model.dim_mu), tol=tol,
                             max_iter=max_iter)
    except SingularJacobian as exc:
        raise SingularNestedFit(str(exc)) from exc
    return mu


def adjustment_terms(a_hat, y_final, x_final, beta, alphas):
    """Rowwise adjustment: a_hat_i times the reserved-period residual."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    resid = (np.asarray(y_final, dtype=float)
             - np.asarray(x_final, dtype=float) @ beta
             - np.asarray(alphas, dtype=float))
    return np.asarray(a_hat, dtype=float) * resid[:, None]


def debiased_moments(mu, w, d, alphas, psi, model):
    """Debiased sample moment vector at mu; psi may be rows or a mean."""
    psi = np.asarray(psi, dtype=float)
    psi_bar = psi.mean(axis=0) if psi.ndim == 2 else psi
    return model.m_batch(w, d, np.asarray(alphas, dtype=float), mu).mean(axis=0) + psi_bar


def gmm_minimize(system, weighting, mu_start, tol=1e-10, max_iter=200):
    """Gauss-Newton on the weighted moment quadratic with step halving.

    Convergence is a step norm below tol. A stalled line search falls back to
    steepest descent once per iteration; if that stalls too, the best iterate
    is returned with a no_convergence flag rather than raising.
    """
    weighting = np.asarray(weighting, dtype=float)
    mu = np.asarray(mu_start, dtype=float).copy()
    m = system.moments(mu)
    obj = float(m @ weighting @ m)
    info = {"objective_start": obj, "iterations": 0, "converged": False,
            "flags": []}
    best_mu, best_obj = mu.copy(), obj
    for it in range(max_iter):
        jac = system.jacobian(mu)
        grad = jac.T @ weighting @ m
        normal = jac.T @ weighting @ jac
        try:
            step = -np.linalg.solve(normal, grad)
        except np.linalg.LinAlgError:
            if float(np.linalg.norm(grad)) <= tol * max(1.0, obj):
                info["converged"] = True
                break
            raise SingularJacobian(
                "normal equations singular away from a stationary point")
        cand, cand_m, cand_obj, accepted = _halving_search(
            system, weighting, mu, step, obj)
        if not accepted:
            sd = -grad
            nrm = float(np.linalg.norm(sd))
            if nrm > 0:
                cand, cand_m, cand_obj, accepted = _halving_search(
                    system, weighting, mu, sd / max(nrm, 1.0), obj,
                    strict=True)
            if accepted:
                info["flags"].append("steepest_descent")
            else:
                break
        step_norm = float(np.linalg.norm(cand - mu))
        mu, m, obj = cand, cand_m, cand_obj
        info["iterations"] = it + 1
        if obj < best_obj:
            best_mu, best_obj = mu.copy(), obj
        if step_norm < tol:
            info["converged"] = True
            break
    if not info["converged"]:
        info["flags"].append("no_convergence")
    info["objective"] = best_obj
    return best_mu, info


def _halving_search(system, weighting, mu, direction, obj, strict=False,
                    max_halvings=30):
    eta = 1.0
    for _ in range(max_halvings + 1):
        cand = mu + eta * direction
        m = system.moments(cand)
        val = float(m @ weighting @ m)
        if (val < obj) or (not strict and val <= obj):
            return cand, m, val, True
        eta *= 0.5
    return mu, None, obj, False


def weighting_matrix(moment_rows):
    """Inverse of the mean outer product of the (adjusted) moment rows.

    Returns (matrix, ridged): an ill-conditioned or non-finite-cond inner
    matrix gets a 1e-10 * trace/dim ridge before inversion, with the flag set.
    """
    rows = np.asarray(moment_rows, dtype=float)
    inner = rows.T @ rows / rows.shape[0]
    inner = 0.5 * (inner + inner.T)
    cond = np.linalg.cond(inner)
    ridged = bool(not np.isfinite(cond) or cond > 1e12)
    if ridged:
        tr = float(np.trace(inner))
        bump = 1e-10 * (tr / inner.shape[0] if tr > 0 else 1.0)
        inner = inner + bump * np.eye(inner.shape[0])
    return np.linalg.inv(inner), ridged


def jacobian(w, d, alphas, mu, model):
    """Mean derivative of the moments in the target parameter."""
    return model.dm_dmu_batch(w, d, np.asarray(alphas, dtype=float), mu).mean(axis=0)


def moment_covariance(w, d, alphas, mu, psi, model):
    """Mean outer product of m(W_i, alpha_i, mu) + psi_i (symmetrized)."""
    rows = model.m_batch(w, d, np.asarray(alphas, dtype=float), mu) + psi
    inner = rows.T @ rows / rows.shape[0]
    return 0.5 * (inner + inner.T)


def sandwich_variance(G, Upsilon, Omega):
    """(G'UG)^{-1} G'U Omega U G (G'UG)^{-1}, symmetrized."""
    G = np.asarray(G, dtype=float)
    sv = np.linalg.svd(G, compute_uv=False)
    if sv.size == 0 or sv[0] == 0 or sv[-1] <= sv[0] * 1e-12:
        raise RankDeficientJacobian(
            "moment Jacobian is (numerically) rank deficient")
    crossprod = G.T @ Upsilon @ G
    try:
        bread = np.linalg.inv(crossprod)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientJacobian(
            "weighted Jacobian cross-product not invertible") from exc
    meat = G.T @ Upsilon @ Omega @ Upsilon @ G
    v = bread @ meat @ bread
    return 0.5 * (v + v.T)


def _take(d, idx):
    return None if d is None else d[idx]


def _first_stage(panel, subset, config, horizon):
    if config.first_stage == "within":
        return within_fe_ols(panel, subset=subset, horizon=horizon)
    return blundell_bond(panel, subset=subset,
                         min_t=config.resolve_min_t(panel.t_len),
                         horizon=horizon)


def _shrunk_alphas(alpha_est, first_stage_fit, method):
    """Apply the configured shrinkage within one fold; u2 comes from the
    fold's own residuals at the same beta/intercepts (raw effects)."""
    if method == "none":
        return alpha_est.alpha, None
    res = first_stage_fit.residuals[alpha_est.indices]
    u2 = residual_variance(res, alpha_est.horizon)
    fit = eb_shrink(alpha_est.alpha, u2) if method == "eb" else \
        sure_shrink(alpha_est.alpha, u2)
    return fit.shrunk, float(fit.sigma_alpha2)


def _validate_pairing(panel, cross, model):
    if panel.n != cross.n:
        raise SpecMismatch(
            f"panel has {panel.n} individuals but cross-section has {cross.n}")
    if panel.ids.dtype == cross.ids.dtype and not np.array_equal(panel.ids, cross.ids):
        raise SpecMismatch("panel and cross-section ids disagree")
    if model.name == "linear" and cross.q != 1:
        raise SpecMismatch("linear model expects exactly one w column")
    if model.name == "logit" and cross.outcome is None:
        raise SpecMismatch("logit model needs the binary outcome column")


def single_split_estimate(panel, cross, model, config, folds, seed_cfg=None,
                          split_index=0):
    """Run the full estimator on one explicit fold partition."""
    if seed_cfg is None:
        seed_cfg = SeedConfig(int(config.seed))
    n, T = panel.n, panel.t_len
    h = T - 1
    L = folds.L
    w, d = cross.w, cross.outcome
    flags = set()

    beta_fits = [_first_stage(panel, folds.complement(l), config, h)
                 for l in range(L)]

    alpha_used = np.empty(n)
    psi = np.empty((n, model.dim_m))
    m_rows_pre = np.empty((n, model.dim_m))
    mu_tildes = np.empty((L, model.dim_mu))
    kkt_rel = 0.0
    sigma2_vals = []
    artifacts = []

    for l in range(L):
        idx_l = folds.indices(l)
        comp_l = folds.complement(l)

        # held-out effect estimates for everyone outside fold l, each produced
        # by a slope fit that excludes both their own fold and fold l
        alpha_nested = np.full(n, np.nan)
        for lp in range(L):
            if lp == l:
                continue
            idx_lp = folds.indices(lp)
            if L >= 3:
                fit_llp = _first_stage(panel, folds.complement(l, lp),
                                       config, h)
            else:
                # two folds leave nothing outside both; reuse the fold-l fit
                fit_llp = beta_fits[l]
                flags.add("nested_fallback_two_folds")
            nest_est = extract_alpha(panel, fit_llp.beta, fold=idx_lp,
                                     horizon=h)
            nest_vals, s2 = _shrunk_alphas(nest_est, fit_llp, config.shrinkage)
            if s2 is not None:
                sigma2_vals.append(s2)
            alpha_nested[idx_lp] = nest_vals

        mu_l = preliminary_mu(w[comp_l], _take(d, comp_l),
                              alpha_nested[comp_l], model,
                              tol=config.gmm_tol,
                              max_iter=config.gmm_max_iter)
        mu_tildes[l] = mu_l

        fit_l = beta_fits[l]
        est_l = extract_alpha(panel, fit_l.beta, fold=idx_l, horizon=h)
        a_l, s2 = _shrunk_alphas(est_l, fit_l, config.shrinkage)
        if s2 is not None:
            sigma2_vals.append(s2)
        alpha_used[idx_l] = a_l

        nf = fit_nuisance(panel.x[comp_l], w[comp_l], _take(d, comp_l),
                          alpha_nested[comp_l], model, mu_l,
                          config.dictionary, config.aen,
                          seed=seed_cfg.child_seed("aen", split_index * 1009 + l),
                          y_rows=panel.y[comp_l], fold=l, t_len=T, n_total=n)
        for cf in nf.coords:
            if cf.kind == "enet" and cf.kkt_scale > 0:
                kkt_rel = max(kkt_rel, cf.kkt_violation / cf.kkt_scale)
            if cf.kind == "enet" and not cf.converged:
                flags.add("nuisance_not_converged")

        a_hat = nf.predict(panel.x[idx_l], a_l, panel.y[idx_l])
        psi[idx_l] = adjustment_terms(a_hat, panel.y[idx_l, T - 1],
                                      panel.x[idx_l, T - 1, :], fit_l.beta,
                                      a_l)
        m_rows_pre[idx_l] = model.m_batch(w[idx_l], _take(d, idx_l), a_l, mu_l)
        artifacts.append(FoldArtifacts(
            fold=l, indices=idx_l, beta_fit=fit_l, alpha_raw=est_l.alpha,
            alpha=a_l, alpha_nested=alpha_nested, mu_tilde=mu_l, nuisance=nf,
            a_hat=a_hat, psi=psi[idx_l].copy()))

    Upsilon, ridged = weighting_matrix(m_rows_pre + psi)
    if ridged:
        flags.add("weighting_ridged")

    system = DebiasedSystem(w, d, alpha_used, model, psi_bar=psi.mean(axis=0))
    mu_start = mu_tildes.mean(axis=0)
    mu1, info1 = gmm_minimize(system, np.eye(model.dim_m), mu_start,
                              tol=config.gmm_tol,
                              max_iter=config.gmm_max_iter)
    mu_hat, info2 = gmm_minimize(system, Upsilon, mu1, tol=config.gmm_tol,
                                 max_iter=config.gmm_max_iter)
    flags.update(info1["flags"])
    flags.update(info2["flags"])

    G = jacobian(w, d, alpha_used, mu_hat, model)
    Omega = moment_covariance(w, d, alpha_used, mu_hat, psi, model)
    vcov = sandwich_variance(G, Upsilon, Omega)

    return SplitResult(
        mu=mu_hat, mu_step1=mu1, vcov=vcov, G_hat=G, Upsilon_hat=Upsilon,
        Omega_hat=Omega, objective=float(info2["objective"]),
        objective_step1=float(info2["objective_start"]),
        iterations=int(info1["iterations"] + info2["iterations"]),
        converged=bool(info1["converged"] and info2["converged"]),
        flags=tuple(sorted(flags)), kkt_rel=float(kkt_rel),
        sigma_alpha2=((min(sigma2_vals), max(sigma2_vals))
                      if sigma2_vals else None),
        alpha_used=alpha_used, psi=psi, fold_artifacts=artifacts)


def cross_fit_estimate(panel, cross, model, config):
    """Full estimator: average the single-split results over config.splits
    independent fold partitions; tolerate failures in at most half of them."""
    _validate_pairing(panel, cross, model)
    seed_cfg = (config.seed if isinstance(config.seed, SeedConfig)
                else SeedConfig(int(config.seed)))
    splits, per_split_mu, errors = [], [], []
    for s in range(config.splits):
        folds = make_folds(panel.n, config.folds, seed_cfg.child("split", s))
        try:
            out = single_split_estimate(panel, cross, model, config, folds,
                                        seed_cfg=seed_cfg, split_index=s)
        except (OrthopanelError, np.linalg.LinAlgError) as exc:
            errors.append(f"split {s}: {type(exc).__name__}: {exc}")
            per_split_mu.append(None)
            continue
        splits.append(out)
        per_split_mu.append(out.mu)

    n_failed = config.splits - len(splits)
    if n_failed > config.splits / 2:
        raise EstimationFailure(
            f"{n_failed} of {config.splits} split realizations failed: "
            + " | ".join(errors))

    mu_hat = np.mean([s.mu for s in splits], axis=0)
    vcov = np.mean([s.vcov for s in splits], axis=0)
    se = np.sqrt(np.diag(vcov) / panel.n)
    flags = sorted(set().union(*(s.flags for s in splits)))
    diagnostics = {
        "objective": [s.objective for s in splits],
        "iterations": [s.iterations for s in splits],
        "converged": all(s.converged for s in splits),
        "flags": flags,
        "kkt_rel_max": max(s.kkt_rel for s in splits),
        "n_failed": n_failed,
        "split_errors": errors,
        "shrinkage": config.shrinkage,
        "first_stage": config.first_stage,
        "folds": config.folds,
        "splits": config.splits,
    }
    sig = [s.sigma_alpha2 for s in splits if s.sigma_alpha2 is not None]
    if sig:
        diagnostics["sigma_alpha2_range"] = [min(v[0] for v in sig),
                                             max(v[1] for v in sig)]
    return EstimateResult(
        mu_hat=mu_hat, se=se, vcov=vcov,
        G_hat=np.mean([s.G_hat for s in splits], axis=0),
        Upsilon_hat=np.mean([s.Upsilon_hat for s in splits], axis=0),
        Omega_hat=np.mean([s.Omega_hat for s in splits], axis=0),
        per_split_mu=per_split_mu, diagnostics=diagnostics, n_obs=panel.n)
