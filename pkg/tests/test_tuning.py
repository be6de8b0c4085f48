import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ppikit.datasets import LabeledDataset, SynthParams, gen_synthetic, make_folds
from ppikit.labelers import LabelerSpec, bootstrap_models
from ppikit.losses import LinearRegression, MeanEstimation
from ppikit.tuning import (
    estimate_crosscov,
    lambda_hat,
    lambda_hat_mean,
    tuned_cppi_fit,
    tuned_ppi_fit,
)


def _spd(rng, d):
    A = rng.normal(size=(d, d))
    return A @ A.T + 0.1 * np.eye(d)


class TestLambdaHat:
    def test_scalar_formula(self):
        # mean estimation: H = 2, V = 4 var(f), C = 4 cov(y, f)
        lam = lambda_hat([[2.0]], [[4.0]], [[2.0]], 10, 100)
        assert lam.value == pytest.approx(0.5 / 1.1)
        assert not lam.clipped and not lam.degenerate

    def test_identity_hessian_is_trace_ratio(self, rng):
        V, C = _spd(rng, 3), 0.1 * rng.normal(size=(3, 3))
        lam = lambda_hat(np.eye(3), V, C, 5, 50)
        assert lam.raw == pytest.approx(np.trace(C + C.T) / (2 * 1.1 * np.trace(V)))

    def test_against_explicit_inverse(self, rng):
        H, V = _spd(rng, 4), _spd(rng, 4)
        C = 0.3 * V + 0.05 * rng.normal(size=(4, 4))
        Hi = np.linalg.inv(H)
        expect = np.trace(Hi @ (C + C.T) @ Hi) / (2 * (1 + 20 / 80) * np.trace(Hi @ V @ Hi))
        assert lambda_hat(H, V, C, 20, 80).raw == pytest.approx(expect, rel=1e-9)

    def test_degenerate_variance(self):
        lam = lambda_hat(np.eye(2), np.zeros((2, 2)), np.eye(2), 5, 10)
        assert lam == (0.0, False, True, 0.0)

    def test_clipping(self):
        assert lambda_hat([[1.0]], [[1.0]], [[-1.0]], 1, 10).value == 0.0
        hi = lambda_hat([[1.0]], [[1.0]], [[5.0]], 1, 10)
        assert hi.value == 1.0 and hi.clipped

    def test_singular_hessian_floored(self):
        H = np.diag([1.0, 0.0])
        lam = lambda_hat(H, np.eye(2), 0.5 * np.eye(2), 1, 1e9)
        assert np.isfinite(lam.raw)

    @given(st.integers(0, 10_000), st.floats(0.01, 100.0))
    def test_hessian_scale_invariant(self, seed, scale):
        rng = np.random.default_rng(seed)
        H, V = _spd(rng, 3), _spd(rng, 3)
        C = rng.normal(size=(3, 3))
        a = lambda_hat(H, V, C, 10, 100)
        b = lambda_hat(scale * H, V, C, 10, 100)
        assert a.raw == pytest.approx(b.raw, rel=1e-7, abs=1e-10)
        assert 0.0 <= a.value <= 1.0

    def test_mean_shortcut_agrees(self, rng):
        y = rng.normal(size=50)
        f = 0.7 * y + 0.3 * rng.normal(size=50)
        fc = f - f.mean()
        V = np.array([[4 * fc @ fc / 50]])
        C = np.array([[4 * (y - y.mean()) @ fc / 50]])
        assert lambda_hat_mean(y, f, 0.2) == pytest.approx(
            lambda_hat([[2.0]], V, C, 10, 50).value)


class TestCovariances:
    def test_crosscov_mean_estimation(self, synth_small):
        lab, _ = synth_small
        boot = bootstrap_models(lab, 5, 4, LabelerSpec("Ridge"), seed=0)
        theta = np.array([lab.labels.mean()])
        C = estimate_crosscov(boot, theta, lab, MeanEstimation())
        ys, fs = [], []
        for run in boot:
            idx = run.held_out(len(lab))
            ys.append(lab.labels[idx])
            fs.append(run.labeler.predict(lab.inputs[idx]))
        y, f = np.concatenate(ys), np.concatenate(fs)
        expect = 4 * np.mean((y - y.mean()) * (f - f.mean()))
        assert C[0, 0] == pytest.approx(expect, rel=1e-12)


class TestTunedFits:
    def test_constant_labeler_gives_zero(self, synth_small):
        lab, unl = synth_small
        theta, est = tuned_cppi_fit(MeanEstimation(), lab, unl, 3, LabelerSpec("ConstantMean"),
                                    B=5, seed=0)
        assert est.lambda_hat == 0.0 and est.degenerate
        assert theta[0] == pytest.approx(lab.labels.mean(), rel=1e-12)

    def test_perfect_labeler_near_one(self):
        # labels are an exact linear function of the inputs; the remaining
        # gap is the sampling error of var(Y) on the labeled rows
        lab, unl = gen_synthetic(SynthParams(R=1.0, seed=2), 2000, 100_000)
        _, est = tuned_cppi_fit(MeanEstimation(), lab, unl, 5, LabelerSpec("Ridge", {"alpha": 0}),
                                B=4, seed=0)
        assert est.lambda_hat == pytest.approx(1 / 1.02, abs=0.1)

    def test_deterministic(self, synth_small):
        lab, unl = synth_small
        spec = LabelerSpec("Knn", {"k": 5})
        a = tuned_cppi_fit(LinearRegression(2), lab, unl, 3, spec, B=4, seed=9)
        b = tuned_cppi_fit(LinearRegression(2), lab, unl, 3, spec, B=4, seed=9)
        np.testing.assert_array_equal(a[0], b[0])
        assert a[1].lambda_hat == b[1].lambda_hat

    def test_shared_folds(self, synth_small):
        lab, unl = synth_small
        folds = make_folds(len(lab), 3, 0)
        _, est = tuned_cppi_fit(MeanEstimation(), lab, unl, 3, LabelerSpec("Ridge"), B=4,
                                folds=folds)
        assert est.r == pytest.approx(len(lab) / len(unl))

    def test_argument_checks(self, synth_small):
        lab, unl = synth_small
        with pytest.raises(ValueError):
            tuned_cppi_fit(MeanEstimation(), lab, unl, 1, LabelerSpec("Ridge"))
        with pytest.raises(ValueError):
            tuned_cppi_fit(MeanEstimation(), lab, unl, 3, LabelerSpec("Ridge"), B=1)

    def test_tuned_ppi_in_range(self, synth_small):
        lab, unl = synth_small
        theta, est = tuned_ppi_fit(LinearRegression(2), lab, unl, LabelerSpec("Ridge"), seed=1)
        assert 0.0 <= est.lambda_hat <= 1.0
        assert theta.shape == (2,)
