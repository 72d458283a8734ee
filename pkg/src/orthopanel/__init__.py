"""Debiased moment estimation for cross-sectional models whose moments
contain latent panel fixed effects.

Core entry points: :func:`cross_fit_estimate` (the orthogonalized estimator),
the plug-in/EIV baselines, and the simulation harness in :mod:`.simulate`.
"""

from .baselines import (BaselineResult, cgk_estimate, plugin_estimate,
                        xie_estimate)
from .data import (CrossSection, FoldPartition, PanelDataset, SeedConfig,
                   demean_by_group, load_cross_section, load_panel,
                   make_folds, write_cross_section, write_panel)
from .enet import (EnetFit, adaptive_elastic_net, cv_select,
                   default_lam1_grid, default_lam2_grid, elastic_net)
from .errors import *  # noqa: F401,F403 -- the error taxonomy is the API
from .estimator import (DebiasedSystem, EstConfig, EstimateResult,
                        adjustment_terms, cross_fit_estimate,
                        debiased_moments, gmm_minimize, jacobian,
                        moment_covariance, preliminary_mu, sandwich_variance,
                        single_split_estimate, weighting_matrix)
from .moments import LinearModel, LogitModel, MomentModel, get_model, logistic
from .nuisance import (AenConfig, DictionarySpec, NuisanceFit,
                       build_dictionary, fit_nuisance)
from .panel import (AlphaEstimates, FirstStageFit, ResidualVariances,
                    blundell_bond, extract_alpha, residual_variance,
                    within_fe_ols)
from .shrinkage import ShrinkageFit, eb_shrink, sure_shrink, ure_objective
from .simulate import (DgpConfig, SimSummary, power_curve, run_replications,
                       simulate_dgp, write_power_csv, write_summary_csv)

__version__ = "0.1.0"
