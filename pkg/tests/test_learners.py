import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdid.core import Dataset, build_grid
from fdid.exceptions import CrossfitError, InvalidArgument, ModelFailure, SeparationError
from fdid.learners import (CrossfitConfig, ForestParams, PropensityModel, _fold_seed,
                           _reseed, clip_propensity, crossfit_nuisances, fit_forest_classifier,
                           fit_forest_regressor, fit_logistic, fit_outcome_regression,
                           make_folds, outcome_basis, predict_propensity)
from fdid.reconstruct import build_spline_basis
from fdid.sim import GAMMA, beta_delta, dgp_features, gen_covariates, gen_treatment


def auc(score, label):
    """Mann-Whitney AUC."""
    pos, neg = score[label == 1], score[label == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (pos.size * neg.size)


class TestFolds:
    def test_balanced(self):
        f = make_folds(10, 5, seed=3)
        assert sorted(f.sizes()) == [2] * 5

    def test_uneven(self):
        assert sorted(make_folds(7, 3, seed=0).sizes()) == [2, 2, 3]

    def test_deterministic(self):
        a, b = make_folds(50, 5, 11), make_folds(50, 5, 11)
        np.testing.assert_array_equal(a.fold_of, b.fold_of)
        assert not np.array_equal(a.fold_of, make_folds(50, 5, 12).fold_of)

    def test_errors(self):
        with pytest.raises(InvalidArgument):
            make_folds(3, 5, 0)
        with pytest.raises(InvalidArgument):
            make_folds(10, 1, 0)

    def test_cluster_folds_keep_clusters_together(self):
        clusters = np.repeat(np.array(["s3", "s1", "s2", "s0", "s4", "s5"]), 4)
        f = make_folds(24, 3, 0, clusters=clusters)
        for c in np.unique(clusters):
            assert np.unique(f.fold_of[clusters == c]).size == 1
        assert sorted(np.bincount(f.fold_of)) == [8, 8, 8]

    def test_cluster_folds_ignore_label_spelling(self):
        a = np.repeat(["a", "b", "c", "d"], 2)
        b = np.repeat(["z", "y", "x", "w"], 2)
        np.testing.assert_array_equal(make_folds(8, 2, 5, a).fold_of,
                                      make_folds(8, 2, 5, b).fold_of)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 200), st.integers(2, 10), st.integers(0, 2 ** 32 - 1))
    def test_partition_property(self, n, K, seed):
        K = min(K, n)
        f = make_folds(n, K, seed)
        sizes = f.sizes()
        assert sizes.min() >= 1 and sizes.max() - sizes.min() <= 1
        assert sizes.sum() == n


class TestLogistic:
    def test_null_model(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            X = rng.standard_normal((500, 5))
            D = rng.permutation(np.r_[np.ones(200), np.zeros(300)])
            beta = fit_logistic(X, D, ridge=1e-4).params
            assert np.all(np.abs(beta[1:]) <= 0.3)
            assert beta[0] == pytest.approx(math.log(0.4 / 0.6), abs=0.2)

    def test_recovers_design_coefficients(self):
        X = gen_covariates(5000, 20, 0.3, seed=4)
        D, _, g0 = gen_treatment(X, GAMMA, 1.0, seed=5)
        beta = fit_logistic(dgp_features(X), D, ridge=1e-6).params
        np.testing.assert_allclose(beta[1:], GAMMA, atol=0.15)
        assert beta[0] == pytest.approx(g0, abs=0.15)

    def test_one_class(self):
        with pytest.raises(ModelFailure):
            fit_logistic(np.zeros((10, 2)), np.ones(10))

    def test_separation_reported(self):
        x = np.linspace(-1, 1, 40)[:, None]
        with pytest.raises(SeparationError):
            fit_logistic(x, (x[:, 0] > 0).astype(int), ridge=0.0)
        # a small ridge keeps the fit finite
        model = fit_logistic(x, (x[:, 0] > 0).astype(int), ridge=1e-2)
        assert np.all(np.isfinite(model.params))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.integers(20, 300), st.integers(1, 6),
           st.floats(1e-6, 1.0))
    def test_score_equations(self, seed, n, p, ridge):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((n, p))
        D = (rng.uniform(size=n) < 1 / (1 + np.exp(-X[:, 0]))).astype(int)
        if D.min() == D.max():
            D[0] = 1 - D[0]
        beta = fit_logistic(X, D, ridge=ridge).params
        Z = np.column_stack([np.ones(n), X])
        prob = 1 / (1 + np.exp(-(Z @ beta)))
        pen = np.r_[0.0, np.full(p, ridge)]
        assert np.max(np.abs(Z.T @ (D - prob) - pen * beta)) <= 1e-6


class TestPropensityClipping:
    def model(self, raw):
        return PropensityModel("logistic", np.array([math.log(raw / (1 - raw)), 0.0]), 0.01)

    def test_examples(self):
        assert predict_propensity(self.model(0.999), [[0.0]])[0] == pytest.approx(0.99)
        assert predict_propensity(self.model(0.5), [[0.0]])[0] == pytest.approx(0.5)
        assert predict_propensity(self.model(0.004), [[0.0]])[0] == pytest.approx(0.01)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.floats(0.001, 0.49))
    def test_idempotent(self, p, c):
        once = clip_propensity(np.asarray(p), c)
        np.testing.assert_array_equal(clip_propensity(once, c), once)
        assert once.min() >= c and once.max() <= 1 - c

    def test_bad_clip(self):
        with pytest.raises(InvalidArgument):
            clip_propensity(np.array([0.5]), 0.5)


class TestForest:
    def test_memorizes(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((60, 4))
        D = (rng.uniform(size=60) < 0.5).astype(int)
        m = fit_forest_classifier(X, D, ForestParams(n_trees=1, min_leaf=1, mtry=4,
                                                     bootstrap=False), clip=1e-9)
        np.testing.assert_array_equal(np.round(m.predict_raw(X)), D)

    def test_held_out_auc(self):
        # the true propensity itself only reaches AUC ~0.76 here, so judge the
        # forest on the mean over independent draws
        scores = []
        for s in range(5):
            X = gen_covariates(1600, 20, 0.3, seed=10 * s + 1)
            D, _, _ = gen_treatment(X, GAMMA, 1.0, seed=10 * s + 2)
            m = fit_forest_classifier(X[:800], D[:800], ForestParams(seed=s))
            scores.append(auc(m.predict(X[800:]), D[800:]))
        assert np.mean(scores) > 0.70

    def test_seed_determinism(self):
        rng = np.random.default_rng(5)
        X, y = rng.standard_normal((100, 3)), rng.standard_normal((100, 2))
        a = fit_forest_regressor(X, y, ForestParams(n_trees=10, seed=9)).predict(X)
        b = fit_forest_regressor(X, y, ForestParams(n_trees=10, seed=9)).predict(X)
        np.testing.assert_array_equal(a, b)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_row_order_invariance(self, seed):
        rng = np.random.default_rng(seed)
        X, y = rng.standard_normal((40, 3)), rng.standard_normal(40)
        perm = rng.permutation(40)
        params = ForestParams(n_trees=5, min_leaf=2, seed=1)
        a = fit_forest_regressor(X, y, params).predict(X)
        b = fit_forest_regressor(X[perm], y[perm], params).predict(X)
        np.testing.assert_array_equal(a, b)

    def test_too_few_rows(self):
        with pytest.raises(ModelFailure):
            fit_forest_regressor(np.zeros((5, 2)), np.zeros(5), ForestParams(min_leaf=5))


class TestOutcomeRegression:
    grid = build_grid(101)

    @pytest.mark.parametrize("kind", ["linear", "forest"])
    def test_constant_target(self, kind):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((50, 3))
        c = np.cos(3 * self.grid.points)
        basis = outcome_basis(self.grid)
        m = fit_outcome_regression(X, np.tile(c, (50, 1)), basis, kind,
                                   ForestParams(n_trees=10))
        # the constant curve itself is reproduced up to its projection on the basis
        target = basis.basis_matrix @ basis.project(c)[0]
        np.testing.assert_allclose(m.predict(rng.standard_normal((7, 3))), np.tile(target, (7, 1)),
                                   atol=1e-6)
        assert np.abs(target - c).max() < 1e-4

    def test_linear_recovers_mean_surface(self):
        p, n = 20, 800
        X = gen_covariates(n, p, 0.3, seed=6)
        beta = beta_delta(self.grid.points, p)
        rng = np.random.default_rng(7)
        delta = X @ beta + 0.5 * rng.standard_normal((n, self.grid.M))
        m = fit_outcome_regression(X, delta, outcome_basis(self.grid), "linear")
        X_new = gen_covariates(2000, p, 0.3, seed=8)
        truth, pred = X_new @ beta, m.predict(X_new)
        r2 = 1 - ((pred - truth) ** 2).sum(0) / ((truth - truth.mean(0)) ** 2).sum(0)
        assert r2.min() >= 0.8

    def test_predictions_in_basis_span(self):
        basis = build_spline_basis(self.grid, 11)
        assert basis.L == 15
        rng = np.random.default_rng(9)
        X = rng.standard_normal((40, 2))
        m = fit_outcome_regression(X, rng.standard_normal((40, 101)), basis, "linear")
        pred = m.predict(X)
        resid = pred - basis.project(pred) @ basis.basis_matrix.T
        assert np.abs(resid).max() <= 1e-10

    def test_identity_basis_on_small_grid(self):
        assert outcome_basis(build_grid(24, 0, 23)) is None
        assert outcome_basis(self.grid).L == 15

    def test_linear_needs_rows(self):
        with pytest.raises(ModelFailure):
            fit_outcome_regression(np.zeros((5, 2)), np.zeros((5, 101)), None, "linear")

    def test_unknown_kind(self):
        with pytest.raises(InvalidArgument):
            fit_outcome_regression(np.zeros((20, 2)), np.zeros((20, 4)), None, "boost")


def small_dataset(n=60, M=8, seed=0, p=3):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    D = (rng.uniform(size=n) < 1 / (1 + np.exp(-X[:, 0]))).astype(int)
    D[:2] = [0, 1]
    delta = X[:, :1] * np.linspace(0, 1, M) + 0.1 * rng.standard_normal((n, M))
    return Dataset(build_grid(M), delta, D, X)


class TestCrossfit:
    def test_clipping_and_alignment(self):
        data = small_dataset()
        nuis = crossfit_nuisances(data, make_folds(data.n, 5, 1), "parametric",
                                  CrossfitConfig(need_mu1=True))
        assert nuis.pi_hat.min() >= 0.01 and nuis.pi_hat.max() <= 0.99
        assert nuis.mu0_hat.shape == data.delta.shape == nuis.mu1_hat.shape
        assert nuis.p_hat == data.p_hat

    def test_exclusivity(self):
        # editing unit i never changes the predictions of units in its own fold
        data = small_dataset(seed=2)
        folds = make_folds(data.n, 4, 3)
        base = crossfit_nuisances(data, folds, "parametric")
        i = 5
        delta, X = data.delta.copy(), data.X.copy()
        delta[i] += 10.0
        X[i] += 3.0
        edited = crossfit_nuisances(Dataset(data.grid, delta, data.D, X), folds, "parametric")
        same = folds.fold_of == folds.fold_of[i]
        same[i] = False
        np.testing.assert_array_equal(base.pi_hat[same], edited.pi_hat[same])
        np.testing.assert_array_equal(base.mu0_hat[same], edited.mu0_hat[same])
        assert not np.array_equal(base.mu0_hat[~same], edited.mu0_hat[~same])

    def test_leave_one_out_matches_brute_force(self):
        data = small_dataset(n=12, M=6, seed=4)
        folds = make_folds(12, 12, 0)
        fp = ForestParams(n_trees=4, min_leaf=1, seed=21)
        cfg = CrossfitConfig(forest=fp)
        nuis = crossfit_nuisances(data, folds, "flexible", cfg)
        for i in range(12):
            k = folds.fold_of[i]
            keep = np.arange(12) != i
            ctrl = keep & (data.D == 0)
            prop = fit_forest_classifier(data.X[keep], data.D[keep],
                                         _reseed(fp, _fold_seed(fp.seed, k, 0)))
            out0 = fit_outcome_regression(data.X[ctrl], data.delta[ctrl], None, "forest",
                                          _reseed(fp, _fold_seed(fp.seed, k, 1)))
            assert nuis.pi_hat[i] == prop.predict(data.X[i:i + 1])[0]
            np.testing.assert_array_equal(nuis.mu0_hat[i], out0.predict(data.X[i:i + 1])[0])

    def test_single_class_complement(self):
        data = small_dataset(n=20, seed=5)
        D = np.zeros(20, dtype=int)
        D[:3] = 1
        data = Dataset(data.grid, data.delta, D, data.X)
        fold_of = np.zeros(20, dtype=int)
        fold_of[:3] = 1
        from fdid.learners import FoldAssignment
        with pytest.raises(CrossfitError, match="fold 0"):
            crossfit_nuisances(data, FoldAssignment(fold_of, 2, 0), "parametric")

    def test_misspecified_ignores_feature_map(self):
        data = small_dataset(seed=6)
        folds = make_folds(data.n, 3, 0)
        cfg = CrossfitConfig(propensity_features=lambda X: X[:, :1])
        a = crossfit_nuisances(data, folds, "misspecified", cfg)
        b = crossfit_nuisances(data, folds, "misspecified")
        np.testing.assert_array_equal(a.pi_hat, b.pi_hat)
        c = crossfit_nuisances(data, folds, "parametric", cfg)
        assert not np.array_equal(a.pi_hat, c.pi_hat)

    def test_unknown_regime(self):
        data = small_dataset()
        with pytest.raises(InvalidArgument):
            crossfit_nuisances(data, make_folds(data.n, 2, 0), "magic")
