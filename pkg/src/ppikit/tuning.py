"""Plug-in estimation of the tuning parameter lambda.

The variance-optimal weight on the prediction-powered correction is

    lambda* = tr(H^-1 (C + C') H^-1) / (2 (1 + n/N) tr(H^-1 V H^-1))

with ``H`` the Hessian of the population loss, ``V`` the covariance of the
loss gradient under the (averaged) predicted label on unlabeled inputs, and
``C`` the cross-covariance between gradients under true and predicted
labels. For cross-fitted labelers, ``V`` and ``C`` are estimated by
re-running the training protocol ``B`` times on random subsets of size
``n - floor(n/K)``; each run's held-out rows supply independent
(true, predicted) gradient pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._seeding import derive_seed
from .datasets import LabeledDataset, UnlabeledDataset, make_folds
from .estimators import (
    CrossFitPredictions,
    PpiPredictions,
    cross_fit_predictions,
    erm_objective,
    ppi_predictions,
    solve,
    split_for_ppi,
    tuned_cppi_objective,
    tuned_ppi_objective,
)
from .labelers import LabelerSpec, bootstrap_models, fit, train_fold_models
from .losses import LossModel

DEGENERATE_TRACE = 1e-12
EIGEN_FLOOR = 1e-8


class InvalidStateError(RuntimeError):
    pass


class LambdaHat(NamedTuple):
    value: float
    clipped: bool
    degenerate: bool
    raw: float


@dataclass
class TuningEstimate:
    lambda_hat: float
    hessian_hat: np.ndarray
    var_fbar_hat: np.ndarray
    crosscov_hat: np.ndarray
    r: float
    clipped: bool
    degenerate: bool = False
    raw: float = float("nan")
    theta_init: np.ndarray | None = None
    lambda_init: float | None = None
    extra: dict = field(default_factory=dict)


def _cov(A, B=None) -> np.ndarray:
    """Empirical (cross-)covariance with 1/count normalisation."""
    Ac = A - A.mean(axis=0)
    if B is None:
        C = Ac.T @ Ac / A.shape[0]
        return 0.5 * (C + C.T)
    Bc = B - B.mean(axis=0)
    return Ac.T @ Bc / A.shape[0]


def estimate_hessian(model: LossModel, theta_hat, labeled: LabeledDataset) -> np.ndarray:
    """``(1/n) sum_i Hess l_theta(X_i, Y_i)`` at ``theta_hat``."""
    Z = model.transform(labeled.inputs)
    T = model.targets(labeled.labels)
    H = model.hessian_sum(theta_hat, Z, T) / len(labeled)
    return 0.5 * (H + H.T)


def average_targets(model: LossModel, predictions) -> np.ndarray:
    """Average of several labelers' outputs in target space.

    Class predictions become one-hot rows first, so the average of
    classifiers is a distribution over classes.
    """
    return np.mean([model.targets(p) for p in predictions], axis=0)


def estimate_var_fbar(boot, theta_hat, unlabeled: UnlabeledDataset, model: LossModel,
                      predictions=None) -> np.ndarray:
    """Covariance over unlabeled inputs of ``grad l_theta(X~, fbar(X~))``,
    ``fbar`` being the average of the bootstrap models."""
    if predictions is None:
        predictions = [run.labeler.predict(unlabeled.inputs) for run in boot]
    fbar = average_targets(model, predictions)
    G = model.grads(theta_hat, model.transform(unlabeled.inputs), fbar)
    return _cov(G)


def crosscov_pairs(boot, theta_hat, labeled: LabeledDataset, model: LossModel):
    """Pooled gradient pairs ``(grad l(X_i, Y_i), grad l(X_i, f^b(X_i)))`` for
    every run ``b`` and every index outside its in-bag set."""
    n = len(labeled)
    Z = model.transform(labeled.inputs)
    T = model.targets(labeled.labels)
    true_g, pred_g, used = [], [], []
    for run in boot:
        idx = run.held_out(n)
        if idx.size == 0:
            continue
        true_g.append(model.grads(theta_hat, Z[idx], T[idx]))
        pred_g.append(model.grads(theta_hat, Z[idx],
                                  model.targets(run.labeler.predict(labeled.inputs[idx]))))
        used.append(idx)
    if not used:
        raise InvalidStateError("no held-out points in any bootstrap run")
    return np.concatenate(true_g), np.concatenate(pred_g), used


def estimate_crosscov(boot, theta_hat, labeled: LabeledDataset, model: LossModel) -> np.ndarray:
    A, B, _ = crosscov_pairs(boot, theta_hat, labeled, model)
    return _cov(A, B)


def _inverse_square(Q, evals) -> np.ndarray:
    """``H^-2`` given ``H = Q diag(evals) Q'``."""
    return (Q / evals ** 2) @ Q.T


def lambda_hat(H, V, C, n: int, N: int) -> LambdaHat:
    """Plug-in optimal lambda, clipped to [0, 1].

    ``H`` is inverted through a symmetric eigendecomposition whose
    eigenvalues are floored at ``1e-8`` times the largest. If
    ``tr(H^-1 V H^-1) <= 1e-12`` the predictions carry no variance and the
    result is ``lambda = 0`` with ``degenerate=True``.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    evals, Q = np.linalg.eigh(0.5 * (H + H.T))
    top = evals[-1]
    if not top > 0:
        raise ValueError("Hessian estimate has no positive eigenvalue")
    evals = np.maximum(evals, EIGEN_FLOOR * top)
    # tr(H^-1 M H^-1) = tr(M H^-2) = sum(M * H^-2) for symmetric H^-2
    H2 = _inverse_square(Q, evals)
    den = float(np.sum(V * H2))
    if den <= DEGENERATE_TRACE:
        return LambdaHat(0.0, False, True, 0.0)
    num = float(np.sum((C + C.T) * H2))
    raw = num / (2.0 * (1.0 + n / N) * den)
    value = min(max(raw, 0.0), 1.0)
    return LambdaHat(value, value != raw, False, raw)


def lambda_hat_mean(labels, fbar_on_labeled, r: float) -> float:
    """Mean-estimation shortcut ``cov(Y, fbar) / ((1 + r) var(fbar))``, clipped."""
    y = np.asarray(labels, dtype=float).reshape(-1)
    f = np.asarray(fbar_on_labeled, dtype=float).reshape(-1)
    fc = f - f.mean()
    var = float(fc @ fc) / f.size
    if var <= DEGENERATE_TRACE:
        return 0.0
    cov = float((y - y.mean()) @ fc) / f.size
    return min(max(cov / ((1.0 + r) * var), 0.0), 1.0)


def tuned_cppi_fit(model: LossModel, labeled: LabeledDataset, unlabeled: UnlabeledDataset,
                   K: int = 5, spec: LabelerSpec | None = None, B: int = 30,
                   lambda_init: float = 0.5, seed=0, folds=None, fold_models=None,
                   predictions: CrossFitPredictions | None = None, boot=None):
    """Tuned cross-fitted estimator with a plug-in lambda.

    1. train ``K`` fold models; 2. solve at ``lambda_init``;
    3. Hessian at that solution; 4. ``B`` bootstrap runs give ``V`` and
    ``C``; 5. plug-in lambda; 6. re-solve at the estimated lambda.

    Precomputed ``folds``/``fold_models``/``predictions``/``boot`` are used
    as given, which lets callers share them with other schemes.

    Returns
    -------
    theta_hat : ndarray
    estimate : TuningEstimate
    """
    if K < 2:
        raise ValueError("need K >= 2")
    if B < 2:
        raise ValueError("need B >= 2")
    if not 0.0 <= lambda_init <= 1.0:
        raise ValueError("lambda_init must lie in [0, 1]")
    n, N = len(labeled), len(unlabeled)
    if predictions is None:
        if fold_models is None:
            if spec is None:
                raise ValueError("need a labeler spec or fold models")
            if folds is None:
                folds = make_folds(n, K, derive_seed(seed, "folds"))
            fold_models = train_fold_models(labeled, folds,
                                            spec.with_seed(derive_seed(seed, spec.seed, "fold")))
        predictions = cross_fit_predictions(labeled, folds, fold_models, unlabeled)
    theta_init = solve(tuned_cppi_objective(model, labeled, folds, None, unlabeled, lambda_init,
                                            predictions))
    H = estimate_hessian(model, theta_init, labeled)
    if boot is None:
        if spec is None:
            raise ValueError("need a labeler spec for the bootstrap runs")
        boot = bootstrap_models(labeled, K, B, spec.with_seed(derive_seed(seed, spec.seed, "boot")),
                                seed=derive_seed(seed, "bootstrap"))
    V = estimate_var_fbar(boot, theta_init, unlabeled, model)
    C = estimate_crosscov(boot, theta_init, labeled, model)
    lam = lambda_hat(H, V, C, n, N)
    theta_hat = solve(tuned_cppi_objective(model, labeled, folds, None, unlabeled, lam.value,
                                           predictions))
    est = TuningEstimate(lam.value, H, V, C, n / N, lam.clipped, lam.degenerate, lam.raw,
                         theta_init, lambda_init)
    return theta_hat, est


def tuned_ppi_fit(model: LossModel, labeled: LabeledDataset, unlabeled: UnlabeledDataset,
                  spec: LabelerSpec | None = None, split_fraction: float = 0.5,
                  lambda_init: float = 0.5, seed=0, split=None, f=None,
                  predictions: PpiPredictions | None = None):
    """Tuned single-split estimator with a plug-in lambda.

    ``f`` is trained on one side of the split, so it is independent of the
    rectifier rows; ``V`` and ``C`` are then plain empirical covariances
    over unlabeled and rectifier rows, with no bootstrap needed.
    """
    if split is None:
        split = split_for_ppi(len(labeled), split_fraction, derive_seed(seed, "ppi-split"))
    train_idx, rect_idx = split
    rect = labeled.subset(rect_idx)
    if predictions is None:
        if f is None:
            f = fit(spec.with_seed(derive_seed(seed, spec.seed, "ppi")), labeled.subset(train_idx))
        predictions = ppi_predictions(f, rect, unlabeled)
    theta_init = solve(tuned_ppi_objective(model, rect, unlabeled, None, lambda_init, predictions))
    H = estimate_hessian(model, theta_init, rect)
    Zu = model.transform(unlabeled.inputs)
    V = _cov(model.grads(theta_init, Zu, model.targets(predictions.unlabeled)))
    Zr = model.transform(rect.inputs)
    C = _cov(model.grads(theta_init, Zr, model.targets(rect.labels)),
             model.grads(theta_init, Zr, model.targets(predictions.rectifier)))
    lam = lambda_hat(H, V, C, len(rect), len(unlabeled))
    theta_hat = solve(tuned_ppi_objective(model, rect, unlabeled, None, lam.value, predictions))
    est = TuningEstimate(lam.value, H, V, C, len(rect) / len(unlabeled), lam.clipped,
                         lam.degenerate, lam.raw, theta_init, lambda_init)
    return theta_hat, est


def erm_fit(model: LossModel, labeled: LabeledDataset) -> np.ndarray:
    return solve(erm_objective(model, labeled))
