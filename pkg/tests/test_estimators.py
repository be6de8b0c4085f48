import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import central_difference, rel_err
from ppikit.datasets import LabeledDataset, UnlabeledDataset, make_folds
from ppikit.estimators import (
    SingularSystemWarning,
    cppi_objective,
    cross_fit_predictions,
    erm_objective,
    ppi_objective,
    solve,
    split_for_ppi,
    ss_objective,
    tuned_cppi_objective,
    tuned_ppi_objective,
)
from ppikit.labelers import LabelerSpec, fit, train_fold_models
from ppikit.losses import LinearRegression, MeanEstimation, RidgeSoftmax, fit_rbf_nystrom


@pytest.fixture
def linear_data(rng):
    X = rng.normal(size=(40, 2))
    y = X @ np.array([1.0, -1.0]) + rng.normal(size=40)
    Xu = rng.normal(size=(300, 2))
    return LabeledDataset(X, y), UnlabeledDataset(Xu)


@pytest.fixture
def cross_fit(synth_small):
    lab, unl = synth_small
    folds = make_folds(len(lab), 3, 0)
    models = train_fold_models(lab, folds, LabelerSpec("Ridge"))
    return lab, unl, folds, models


class TestMeanClosedForms:
    def test_erm_is_sample_mean(self, synth_small):
        lab, _ = synth_small
        theta = solve(erm_objective(MeanEstimation(), lab))
        assert theta[0] == pytest.approx(lab.labels.mean(), rel=1e-12)

    def test_ss(self, synth_small):
        lab, unl = synth_small
        f = fit(LabelerSpec("Ridge"), lab)
        theta = solve(ss_objective(MeanEstimation(), lab, unl, f, gamma=0.5))
        fu = f.predict(unl.inputs)
        expect = (lab.labels.sum() + 0.5 * fu.sum()) / (len(lab) + 0.5 * len(unl))
        # stationarity of (sum (y-t)^2 + g sum (f-t)^2) / (n + N)
        assert theta[0] == pytest.approx(expect, rel=1e-12)

    def test_ppi(self, synth_small):
        lab, unl = synth_small
        train, rect = split_for_ppi(len(lab), 0.5, 1)
        f = fit(LabelerSpec("Ridge"), lab.subset(train))
        r = lab.subset(rect)
        theta = solve(ppi_objective(MeanEstimation(), r, unl, f))
        expect = f.predict(unl.inputs).mean() - f.predict(r.inputs).mean() + r.labels.mean()
        assert theta[0] == pytest.approx(expect, rel=1e-12)

    @pytest.mark.parametrize("lam", [0.0, 0.3, 1.0])
    def test_tuned_cppi(self, cross_fit, lam):
        lab, unl, folds, models = cross_fit
        theta = solve(tuned_cppi_objective(MeanEstimation(), lab, folds, models, unl, lam))
        unl_mean = np.mean([m.predict(unl.inputs).mean() for m in models])
        held = np.concatenate([models[k].predict(lab.inputs[folds.members[k]])
                               for k in range(folds.K)]).mean()
        assert theta[0] == pytest.approx(lab.labels.mean() + lam * (unl_mean - held), rel=1e-12)


class TestEndpoints:
    def test_tuned_cppi_zero_is_erm(self, cross_fit):
        lab, unl, folds, models = cross_fit
        model = LinearRegression(2)
        a = solve(tuned_cppi_objective(model, lab, folds, models, unl, 0.0))
        b = solve(erm_objective(model, lab))
        np.testing.assert_array_equal(a, b)

    def test_tuned_cppi_one_is_cppi(self, cross_fit):
        lab, unl, folds, models = cross_fit
        model = LinearRegression(2)
        a = solve(tuned_cppi_objective(model, lab, folds, models, unl, 1.0))
        b = solve(cppi_objective(model, lab, folds, models, unl))
        np.testing.assert_array_equal(a, b)

    def test_tuned_ppi_endpoints(self, synth_small):
        lab, unl = synth_small
        f = fit(LabelerSpec("Ridge"), lab)
        model = LinearRegression(2)
        np.testing.assert_array_equal(solve(tuned_ppi_objective(model, lab, unl, f, 0.0)),
                                      solve(erm_objective(model, lab)))
        np.testing.assert_array_equal(solve(tuned_ppi_objective(model, lab, unl, f, 1.0)),
                                      solve(ppi_objective(model, lab, unl, f)))

    @pytest.mark.parametrize("lam", [-0.1, 1.5])
    def test_lambda_range(self, cross_fit, lam):
        lab, unl, folds, models = cross_fit
        with pytest.raises(ValueError):
            tuned_cppi_objective(MeanEstimation(), lab, folds, models, unl, lam)


class TestObjectiveDerivatives:
    def test_linear_gradient_and_hessian(self, cross_fit, rng):
        lab, unl, folds, models = cross_fit
        obj = tuned_cppi_objective(LinearRegression(2), lab, folds, models, unl, 0.7)
        theta = rng.normal(size=2)
        assert rel_err(obj.gradient(theta), central_difference(obj.value, theta)) < 1e-6
        H = np.array([central_difference(lambda t: obj.gradient(t)[j], theta) for j in range(2)])
        assert rel_err(obj.hessian(theta), H) < 1e-6

    def test_softmax_objective(self, rng):
        X = rng.normal(size=(30, 2))
        y = (X[:, 0] > 0).astype(int) + (X[:, 1] > 0).astype(int)
        lab = LabeledDataset(X, y, n_classes=3)
        unl = UnlabeledDataset(rng.normal(size=(50, 2)))
        fmap = fit_rbf_nystrom(np.vstack([X, unl.inputs]), 6, seed=0)
        model = RidgeSoftmax(3, 6, gamma=1e-2, feature_map=fmap)
        folds = make_folds(30, 3, 0)
        models = train_fold_models(lab, folds, LabelerSpec("Knn", {"k": 3}))
        obj = tuned_cppi_objective(model, lab, folds, models, unl, 0.4)
        theta = 0.3 * rng.normal(size=model.dim_theta)
        assert rel_err(obj.gradient(theta), central_difference(obj.value, theta)) < 1e-6
        # merging rows per feature block must not change the value
        preds = cross_fit_predictions(lab, folds, models, unl)
        Zl, Zu = model.transform(X), model.transform(unl.inputs)
        direct = model.values(theta, Zl, model.targets(y)).mean()
        for p in preds.unlabeled:
            direct += 0.4 / (3 * 50) * model.data_values(theta, Zu, model.targets(p)).sum()
        direct -= 0.4 / 30 * model.data_values(theta, Zl, model.targets(preds.held_out)).sum()
        assert obj.value(theta) == pytest.approx(direct, rel=1e-10)


class TestSolvers:
    def test_gd_matches_direct(self, linear_data):
        lab, _ = linear_data
        obj = erm_objective(LinearRegression(2), lab)
        a = solve(obj, "direct")
        b = solve(obj, "gd", tol=1e-10)
        np.testing.assert_allclose(a, b, atol=1e-8)

    def test_softmax_gd_stationary(self, rng):
        X = rng.normal(size=(40, 3))
        lab = LabeledDataset(X, (X[:, 0] > 0).astype(int), n_classes=2)
        model = RidgeSoftmax(2, 3, gamma=0.1)
        obj = erm_objective(model, lab)
        theta, info = solve(obj, return_info=True)
        assert info.converged and np.abs(obj.gradient(theta)).max() <= 1e-8

    def test_singular_system_warns(self):
        lab = LabeledDataset(np.ones((5, 2)), np.arange(5.0))
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            theta, info = solve(erm_objective(LinearRegression(2), lab), return_info=True)
        assert info.ridge_fallback
        assert any(issubclass(x.category, SingularSystemWarning) for x in w)
        assert np.isfinite(theta).all()

    @given(st.integers(4, 50), st.floats(0.1, 0.9), st.integers(0, 1000))
    def test_split_partitions(self, n, frac, seed):
        try:
            a, b = split_for_ppi(n, frac, seed)
        except ValueError:
            return
        np.testing.assert_array_equal(np.sort(np.concatenate([a, b])), np.arange(n))
        assert a.size == int(np.floor(frac * n))
