"""Functional difference-in-differences with cross-fitted doubly robust scores."""
from fdid._backend import BACKEND
from fdid.core import (Dataset, FunctionalSample, Grid, build_grid, grid_from_points, l2_norm,
                       sup_norm)
from fdid.estimators import (EstimateResult, NuisanceFit, aipw_contribution, cf_dr_estimate,
                             ipw_estimate, naive_did, or_estimate, oracle_estimate,
                             score_contribution)
from fdid.exceptions import (CrossfitError, DgpFailure, FdidError, IngestionError,
                             InvalidArgument, InvalidDataset, ModelFailure,
                             ReconstructionError, ScenarioFailure, SeparationError)
from fdid.inference import (Band, BootstrapConfig, band_covers, cluster_multiplier_bootstrap,
                            multiplier_bootstrap, pointwise_ci, scb)
from fdid.learners import (CrossfitConfig, FoldAssignment, ForestParams, crossfit_nuisances,
                           fit_forest_classifier, fit_forest_regressor, fit_logistic,
                           fit_outcome_regression, make_folds, predict_propensity)
from fdid.reconstruct import (FpcaModel, SplineBasis, build_spline_basis, fit_fpca,
                              fit_penalized_spline, gcv_select, pace_scores, reconstruct_deltas)

__version__ = "0.1.0"
