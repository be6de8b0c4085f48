import warnings

import numpy as np
import pytest

from conftest import central_difference, rel_err
from ppikit.datasets import LabeledDataset, make_folds
from ppikit.labelers import (
    DegenerateFitWarning,
    LabelerSpec,
    bootstrap_models,
    fit,
    train_fold_models,
)
from ppikit.labelers.forest import ForestRegressor
from ppikit.labelers.mlp import MlpArch, train_mlp


@pytest.fixture
def regression(rng):
    X = rng.normal(size=(80, 3))
    y = X @ np.array([1.0, -2.0, 0.5]) + 0.1 * rng.normal(size=80)
    return LabeledDataset(X, y)


class TestSpec:
    def test_defaults_filled(self):
        spec = LabelerSpec("ForestLite", {"n_trees": 3})
        assert spec.params["max_depth"] == 8
        assert spec.params["n_trees"] == 3

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            LabelerSpec("Boosted")

    @pytest.mark.parametrize("params", [{"k": 0}, {"alpha": -1.0}])
    def test_invalid_hyperparameters(self, params):
        kind = "Knn" if "k" in params else "Ridge"
        with pytest.raises(ValueError):
            LabelerSpec(kind, params)

    def test_mlp_lr_positive(self):
        with pytest.raises(ValueError):
            LabelerSpec("Mlp", {"lr": 0.0})


class TestSimpleLabelers:
    def test_constant_mean(self, regression):
        f = fit(LabelerSpec("ConstantMean"), regression)
        np.testing.assert_allclose(f.predict(regression.inputs[:4]), regression.labels.mean())

    def test_ridge_closed_form(self, regression):
        alpha = 2.0
        f = fit(LabelerSpec("Ridge", {"alpha": alpha}), regression)
        # unpenalized intercept via centering
        Xc = regression.inputs - regression.inputs.mean(0)
        yc = regression.labels - regression.labels.mean()
        coef = np.linalg.solve(Xc.T @ Xc + alpha * np.eye(3), Xc.T @ yc)
        pred = (regression.inputs - regression.inputs.mean(0)) @ coef + regression.labels.mean()
        np.testing.assert_allclose(f.predict(regression.inputs), pred, rtol=1e-10)

    def test_knn_one_memorizes(self, regression):
        f = fit(LabelerSpec("Knn", {"k": 1}), regression)
        np.testing.assert_allclose(f.predict(regression.inputs), regression.labels)

    def test_knn_classification_vote(self):
        data = LabeledDataset(np.array([[0.0], [0.1], [0.2], [5.0]]), np.array([1, 1, 0, 2]),
                              n_classes=3)
        f = fit(LabelerSpec("Knn", {"k": 3}), data)
        assert f.predict(np.array([[0.05]]))[0] == 1

    def test_degenerate_inputs_fall_back(self):
        data = LabeledDataset(np.ones((5, 2)), np.arange(5.0))
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            f = fit(LabelerSpec("ForestLite"), data)
        assert f.fallback
        assert any(issubclass(x.category, DegenerateFitWarning) for x in w)
        np.testing.assert_allclose(f.predict(np.zeros((2, 2))), 2.0)

    def test_fixed(self):
        data = LabeledDataset(np.zeros((2, 1)), np.zeros(2))
        f = fit(LabelerSpec("Fixed", {"function": lambda X: X[:, 0] * 3}), data)
        np.testing.assert_allclose(f.predict(np.array([[1.0], [2.0]])), [3.0, 6.0])


class TestForest:
    def test_full_tree_interpolates(self, rng):
        X = rng.normal(size=(50, 2))
        y = rng.normal(size=50)
        forest = ForestRegressor(1, 30, 1, "all", bootstrap=False, seed=0).fit(X, y)
        np.testing.assert_allclose(forest.predict(X), y)

    def test_depth_zero_is_mean(self, rng):
        X, y = rng.normal(size=(30, 2)), rng.normal(size=30)
        forest = ForestRegressor(3, 0, 1, "all", bootstrap=False).fit(X, y)
        np.testing.assert_allclose(forest.predict(X[:3]), y.mean())

    def test_step_function(self):
        X = np.linspace(0, 1, 40)[:, None]
        y = (X[:, 0] > 0.5).astype(float)
        forest = ForestRegressor(5, 2, 1, "all", bootstrap=False).fit(X, y)
        np.testing.assert_allclose(forest.predict(np.array([[0.1], [0.9]])), [0.0, 1.0])

    def test_min_leaf_respected(self, rng):
        X, y = rng.normal(size=(20, 1)), rng.normal(size=20)
        forest = ForestRegressor(1, 10, 10, "all", bootstrap=False).fit(X, y)
        assert np.unique(forest.predict(X)).size <= 2

    def test_seeded(self, regression):
        spec = LabelerSpec("ForestLite", {"n_trees": 5}, seed=3)
        a = fit(spec, regression).predict(regression.inputs)
        b = fit(spec, regression).predict(regression.inputs)
        np.testing.assert_array_equal(a, b)

    def test_classification_probabilities(self, rng):
        X = rng.normal(size=(60, 2))
        y = (X[:, 0] > 0).astype(int)
        f = fit(LabelerSpec("ForestLite", {"n_trees": 10, "min_leaf": 1}),
                LabeledDataset(X, y, n_classes=2))
        assert (f.predict(X) == y).mean() > 0.9


class TestMlp:
    @pytest.mark.parametrize("activation", ["relu", "leaky_relu", "tanh", "sigmoid"])
    def test_backprop_matches_fd(self, rng, activation):
        arch = MlpArch((3, 5, 4, 3), activation)
        theta = arch.init(0) + 0.01 * rng.normal(size=arch.n_params)
        X = rng.normal(size=(6, 3))
        y = rng.integers(0, 3, 6)
        _, g = arch.ce_loss(theta, X, y)
        fd = central_difference(lambda t: arch.ce_loss(t, X, y)[0], theta)
        assert rel_err(g, fd) < 1e-5
        Y = rng.normal(size=(6, 3))
        _, g = arch.mse_loss(theta, X, Y)
        fd = central_difference(lambda t: arch.mse_loss(t, X, Y)[0], theta)
        assert rel_err(g, fd) < 1e-5

    def test_weighted_soft_targets(self, rng):
        arch = MlpArch((2, 4, 3), "tanh")
        theta = arch.init(1)
        X = rng.normal(size=(5, 2))
        T = rng.dirichlet(np.ones(3), 5)
        w = rng.uniform(0, 1, 5)
        _, g = arch.ce_loss(theta, X, T, w)
        fd = central_difference(lambda t: arch.ce_loss(t, X, T, w)[0], theta)
        assert rel_err(g, fd) < 1e-5

    def test_named_params_round_trip(self):
        arch = MlpArch((2, 3, 2))
        theta = arch.init(5)
        named = arch.named_params(theta)
        assert set(named) == {"layer0.weight", "layer0.bias", "layer1.weight", "layer1.bias"}
        np.testing.assert_array_equal(arch.from_named(named), theta)

    def test_training_reduces_loss(self, rng):
        arch = MlpArch((2, 16, 2), "leaky_relu")
        X = rng.normal(size=(100, 2))
        y = (X[:, 0] * X[:, 1] > 0).astype(int)
        theta0 = arch.init(0)
        theta = train_mlp(arch, X, y, "classification", epochs=100, lr=1e-2, seed=0,
                          theta0=theta0)
        assert arch.ce_loss(theta, X, y)[0] < arch.ce_loss(theta0, X, y)[0]


class TestProtocols:
    def test_fold_models_never_see_their_fold(self, regression):
        folds = make_folds(len(regression), 4, 0)
        models = train_fold_models(regression, folds, LabelerSpec("Knn", {"k": 1}))
        for k, m in enumerate(models):
            assert np.intersect1d(m.train_indices, folds.members[k]).size == 0
            assert m.train_indices.size == len(regression) - folds.members[k].size

    def test_bootstrap_sizes(self, regression):
        runs = bootstrap_models(regression, 5, 4, LabelerSpec("ConstantMean"), seed=0)
        assert len(runs) == 4
        for r in runs:
            assert r.in_bag.size == 80 - 16
            assert np.unique(r.in_bag).size == r.in_bag.size
            assert r.held_out(80).size == 16

    def test_bootstrap_needs_two_runs(self, regression):
        with pytest.raises(ValueError):
            bootstrap_models(regression, 5, 1, LabelerSpec("ConstantMean"))
