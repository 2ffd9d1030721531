"""Nuisance learners and K-fold cross-fitting.

Propensity models are ridge-logistic (IRLS) or random-forest classifiers;
outcome regressions predict basis coefficients of the change curves with
per-coefficient linear models or a multi-output random forest.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from fdid import _backend
from fdid.core import Dataset, Grid
from fdid.estimators import NuisanceFit
from fdid.exceptions import CrossfitError, InvalidArgument, ModelFailure, SeparationError
from fdid.reconstruct import SplineBasis, build_spline_basis

REGIMES = ("parametric", "misspecified", "flexible")


# ----------------------------------------------------------------- folds

@dataclass(frozen=True, eq=False)
class FoldAssignment:
    fold_of: np.ndarray
    K: int
    seed: int

    def test(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == k)

    def train(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.K)


def make_folds(n: int, K: int, seed: int, clusters=None) -> FoldAssignment:
    """Balanced random partition of ``n`` units into ``K`` folds.

    With ``clusters`` the partition is over distinct cluster labels (in
    order of first appearance) and each unit inherits its cluster's fold, so
    fold sizes are balanced in clusters rather than units.
    """
    if int(K) != K or K < 2:
        raise InvalidArgument(f"need an integer K >= 2, got {K}")
    rng = np.random.default_rng(seed)
    if clusters is None:
        if K > n:
            raise InvalidArgument(f"K={K} folds exceed n={n} units")
        fold_of = np.empty(n, dtype=np.int64)
        fold_of[rng.permutation(n)] = np.arange(n) % K
    else:
        clusters = np.asarray(clusters)
        if clusters.shape[0] != n:
            raise InvalidArgument("cluster labels must have length n")
        labels, first, codes = np.unique(clusters, return_index=True, return_inverse=True)
        G = labels.size
        if K > G:
            raise InvalidArgument(f"K={K} folds exceed {G} clusters")
        rank = np.empty(G, dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(G)
        cluster_fold = np.empty(G, dtype=np.int64)
        cluster_fold[rng.permutation(G)] = np.arange(G) % K
        # clusters are ranked by first appearance, so fold labels ignore label spelling
        fold_of = cluster_fold[rank[codes.ravel()]]
    return FoldAssignment(fold_of, int(K), int(seed))


# ------------------------------------------------------------- propensity

@dataclass(frozen=True, eq=False)
class PropensityModel:
    kind: str  # "logistic" | "forest"
    params: object  # coefficient vector (intercept first) or Forest
    clip: float = 0.01

    def predict_raw(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "logistic":
            return _expit(self.params[0] + X @ self.params[1:])
        return self.params.predict(X)[:, 0]

    def predict(self, X) -> np.ndarray:
        return clip_propensity(self.predict_raw(X), self.clip)


def clip_propensity(p, clip: float):
    if not 0 < clip < 0.5:
        raise InvalidArgument(f"clip must lie in (0, 0.5), got {clip}")
    return np.clip(p, clip, 1.0 - clip)


def predict_propensity(model: PropensityModel, X) -> np.ndarray:
    """Clipped propensity predictions in ``[clip, 1 - clip]``."""
    return model.predict(X)


def _expit(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


def _check_binary(D):
    D = np.asarray(D).astype(float).ravel()
    if not np.isin(D, (0.0, 1.0)).all():
        raise InvalidArgument("labels must be 0/1")
    if D.min() == D.max():
        raise ModelFailure("only one class present")
    return D


def fit_logistic(X, D, ridge: float = 1e-6, clip: float = 0.01,
                 max_iter: int = 100, tol: float = 1e-8) -> PropensityModel:
    """Ridge-penalized logistic regression by Newton/IRLS steps.

    The intercept is not penalized. Iteration stops when the largest entry of
    the penalized score ``Z'(D - p) - ridge * beta`` is at most ``tol``.
    Steps are halved while the penalized log-likelihood fails to increase.

    Raises
    ------
    SeparationError
        If ``ridge == 0`` and the coefficients diverge (norm above 1e3, or a
        fit that classifies every unit correctly).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    D = _check_binary(D)
    if ridge < 0:
        raise InvalidArgument("ridge must be nonnegative")
    n, p = X.shape
    Z = np.column_stack([np.ones(n), X])
    pen = np.full(p + 1, float(ridge))
    pen[0] = 0.0
    beta = np.zeros(p + 1)
    beta[0] = math.log(D.mean() / (1 - D.mean()))

    def objective(b):
        eta = Z @ b
        return np.sum(D * eta - np.logaddexp(0.0, eta)) - 0.5 * np.sum(pen * b * b)

    obj = objective(beta)
    for _ in range(max_iter):
        prob = _expit(Z @ beta)
        score = Z.T @ (D - prob) - pen * beta
        if np.max(np.abs(score)) <= tol:
            break
        W = prob * (1 - prob)
        H = (Z * W[:, None]).T @ Z + np.diag(pen)
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H + 1e-10 * np.eye(p + 1), score, rcond=None)[0]
        t = 1.0
        while t > 1e-10:
            cand = beta + t * step
            new = objective(cand)
            if new >= obj - 1e-12 * abs(obj):
                break
            t *= 0.5
        beta, obj = cand, new
        if ridge == 0 and np.linalg.norm(beta) > 1e3:
            raise SeparationError("logistic coefficients diverge: the classes are separable; "
                                  "refit with ridge > 0")
    if ridge == 0:
        # a fit that classifies every unit correctly means the classes are
        # linearly separable (no finite MLE), even if Newton stalled early
        separated = np.array_equal(Z @ beta > 0, D == 1) and np.all(Z @ beta != 0)
        if separated or np.linalg.norm(beta) > 1e3:
            raise SeparationError("logistic coefficients diverge: the classes are separable; "
                                  "refit with ridge > 0")
    return PropensityModel("logistic", beta, clip)


# ----------------------------------------------------------------- forests

@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 200
    max_depth: Optional[int] = None
    min_leaf: int = 5
    mtry: Optional[int] = None
    seed: int = 0
    bootstrap: bool = True


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple
    n_outputs: int

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        out = np.zeros((X.shape[0], self.n_outputs))
        for tree in self.trees:
            out += _backend.predict_tree(X, *tree)
        return out / len(self.trees)


def fit_forest(X, Y, params: ForestParams, default_mtry: int) -> Forest:
    """Bagged variance-reduction trees on (possibly multi-output) targets.

    Rows are put in a canonical order first, so the fitted forest does not
    depend on the order in which training rows are supplied.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, p = X.shape
    if params.n_trees < 1:
        raise InvalidArgument("n_trees must be at least 1")
    if n < 2 * params.min_leaf:
        raise ModelFailure(f"{n} rows cannot support min_leaf={params.min_leaf}")
    order = np.lexsort(np.column_stack([X, Y]).T[::-1])
    X = np.ascontiguousarray(X[order])
    Y = np.ascontiguousarray(Y[order])
    mtry = params.mtry or default_mtry
    depth = -1 if params.max_depth is None else int(params.max_depth)
    rng = np.random.default_rng(params.seed)
    trees = []
    for _ in range(params.n_trees):
        if params.bootstrap:
            sample = rng.integers(0, n, n)
        else:
            sample = np.arange(n)
        tree_seed = int(rng.integers(0, 2 ** 63))
        trees.append(_backend.build_tree(X, Y, sample.astype(np.int64), depth,
                                         int(params.min_leaf), int(mtry), tree_seed))
    return Forest(tuple(trees), Y.shape[1])


def fit_forest_classifier(X, D, params: ForestParams = ForestParams(),
                          clip: float = 0.01) -> PropensityModel:
    """Random-forest propensity model; leaves hold treated-class frequencies.

    Variance reduction on 0/1 labels is the Gini criterion.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    D = _check_binary(D)
    forest = fit_forest(X, D, params, math.ceil(math.sqrt(X.shape[1])))
    return PropensityModel("forest", forest, clip)


def fit_forest_regressor(X, Y, params: ForestParams = ForestParams()) -> Forest:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return fit_forest(X, Y, params, max(1, math.ceil(X.shape[1] / 3)))


# ------------------------------------------------------- outcome regression

@dataclass(frozen=True, eq=False)
class OutcomeModel:
    kind: str  # "linear" | "forest"
    basis: Optional[SplineBasis]  # None means identity on the grid
    params: object  # (p+1, L) coefficient matrix or Forest

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "linear":
            theta = self.params[0] + X @ self.params[1:]
        else:
            theta = self.params.predict(X)
        if self.basis is None:
            return theta
        return theta @ self.basis.basis_matrix.T


def fit_outcome_regression(X, delta, basis: Optional[SplineBasis] = None,
                           kind: str = "linear",
                           hyper: ForestParams = ForestParams()) -> OutcomeModel:
    """Regress change curves on covariates through basis coefficients.

    Each curve is projected on ``basis`` (least squares); one linear model
    per coefficient, or a single multi-output forest, maps ``X`` to the
    coefficients. Without a basis the grid values are the targets.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    delta = np.atleast_2d(np.asarray(delta, dtype=float))
    n, p = X.shape
    if delta.shape[0] != n:
        raise InvalidArgument("X and delta disagree on the number of rows")
    theta = delta if basis is None else basis.project(delta)
    if kind == "linear":
        if n < max(10, p + 2):
            raise ModelFailure(f"linear outcome model needs at least {max(10, p + 2)} rows, got {n}")
        Z = np.column_stack([np.ones(n), X])
        G = Z.T @ Z
        rhs = Z.T @ theta
        try:
            coef = np.linalg.solve(G, rhs)
            if not np.all(np.isfinite(coef)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            jitter = 1e-8 * max(np.trace(G) / G.shape[0], 1.0)
            try:
                coef = np.linalg.solve(G + jitter * np.eye(p + 1), rhs)
            except np.linalg.LinAlgError as exc:
                raise ModelFailure("outcome design singular after ridge jitter") from exc
        return OutcomeModel("linear", basis, coef)
    if kind == "forest":
        return OutcomeModel("forest", basis, fit_forest_regressor(X, theta, hyper))
    raise InvalidArgument(f"unknown outcome model kind {kind!r}")


def outcome_basis(grid: Grid, n_basis: int = 15, identity_max_m: int = 30) -> Optional[SplineBasis]:
    """Coefficient basis for outcome models: identity on small grids."""
    if grid.M <= identity_max_m:
        return None
    return build_spline_basis(grid, n_basis - 4)


# ------------------------------------------------------------ cross-fitting

@dataclass
class CrossfitConfig:
    clip: float = 0.01
    ridge: float = 1e-6
    forest: ForestParams = field(default_factory=ForestParams)
    need_mu1: bool = False
    n_basis: int = 15
    # covariate map for the parametric propensity (e.g. adds the
    # interaction/sine features of a known design); None uses raw X
    propensity_features: Optional[Callable] = None


def _fold_seed(seed: int, k: int, role: int) -> int:
    return int(np.random.SeedSequence([seed, k, role]).generate_state(1, np.uint64)[0] >> 1)


def crossfit_nuisances(data: Dataset, folds: FoldAssignment, regime: str,
                       cfg: Optional[CrossfitConfig] = None) -> NuisanceFit:
    """Out-of-fold propensity and outcome-regression predictions.

    For every fold ``k`` the models are fitted on the units outside ``k`` and
    evaluated on the units inside it.
    """
    cfg = cfg or CrossfitConfig()
    if regime not in REGIMES:
        raise InvalidArgument(f"unknown nuisance regime {regime!r}")
    if folds.fold_of.shape[0] != data.n:
        raise InvalidArgument("fold assignment does not match the dataset")
    n, M = data.n, data.grid.M
    basis = outcome_basis(data.grid, cfg.n_basis)
    X_prop = data.X
    if regime == "parametric" and cfg.propensity_features is not None:
        X_prop = cfg.propensity_features(data.X)

    pi_hat = np.full(n, np.nan)
    mu0_hat = np.full((n, M), np.nan)
    mu1_hat = np.full((n, M), np.nan) if cfg.need_mu1 else None
    for k in range(folds.K):
        test, train = folds.test(k), folds.train(k)
        if test.size == 0:
            continue
        D_tr = data.D[train]
        if D_tr.min() == D_tr.max():
            raise CrossfitError(f"fold {k}: training complement has a single treatment class")
        if np.sum(D_tr == 0) < 2:
            raise CrossfitError(f"fold {k}: training complement has fewer than 2 control units")
        ctrl, trt = train[D_tr == 0], train[D_tr == 1]
        try:
            if regime == "flexible":
                fp = cfg.forest
                prop = fit_forest_classifier(
                    data.X[train], D_tr, _reseed(fp, _fold_seed(fp.seed, k, 0)), cfg.clip)
                out0 = fit_outcome_regression(data.X[ctrl], data.delta[ctrl], basis, "forest",
                                              _reseed(fp, _fold_seed(fp.seed, k, 1)))
                out1 = None
                if cfg.need_mu1:
                    out1 = fit_outcome_regression(data.X[trt], data.delta[trt], basis, "forest",
                                                  _reseed(fp, _fold_seed(fp.seed, k, 2)))
            else:
                prop = fit_logistic(X_prop[train], D_tr, cfg.ridge, cfg.clip)
                out0 = fit_outcome_regression(data.X[ctrl], data.delta[ctrl], basis, "linear")
                out1 = None
                if cfg.need_mu1:
                    out1 = fit_outcome_regression(data.X[trt], data.delta[trt], basis, "linear")
        except ModelFailure as exc:
            raise CrossfitError(f"fold {k}: {exc}") from exc
        pi_hat[test] = prop.predict(X_prop[test])
        mu0_hat[test] = out0.predict(data.X[test])
        if out1 is not None:
            mu1_hat[test] = out1.predict(data.X[test])
    return NuisanceFit(pi_hat=pi_hat, mu0_hat=mu0_hat, mu1_hat=mu1_hat, folds=folds,
                       p_hat=data.p_hat, clip=cfg.clip, regime=regime)


def _reseed(params: ForestParams, seed: int) -> ForestParams:
    return ForestParams(params.n_trees, params.max_depth, params.min_leaf, params.mtry,
                        seed, params.bootstrap)
