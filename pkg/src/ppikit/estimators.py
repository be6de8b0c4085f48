"""Empirical objectives (ERM, SS, PPI, tuned PPI, CPPI, tuned CPPI) and solvers.

An :class:`Objective` is a weighted sum of per-sample losses,
``sum_t w_t sum_{i in t} l_theta(Z_i, T_i)``, where each term ``t`` pairs
a block of features with a block of (true or predicted) targets. Every
scheme is just a different list of terms:

* ERM: labeled rows with their labels, weight ``1/n``.
* SS: ERM rows with weight ``1/(n+N)`` plus pseudo-labeled unlabeled rows
  with weight ``gamma/(n+N)``.
* tuned PPI: ERM over the rectifier rows, plus ``lambda/N`` on
  pseudo-labeled unlabeled rows, minus ``lambda/n`` on pseudo-labeled
  rectifier rows. PPI is ``lambda = 1``.
* tuned CPPI: ERM over all labeled rows, plus ``lambda/(K N)`` on the
  unlabeled rows pseudo-labeled by each fold model, minus ``lambda/n`` on
  every labeled row pseudo-labeled by the model that did not see it.
  CPPI is ``lambda = 1``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .datasets import FoldAssignment, LabeledDataset, UnlabeledDataset, check_compatible
from .losses import LossModel

SCHEMES = ("ERM", "SS", "PPI", "TunedPPI", "CPPI", "TunedCPPI")


class SingularSystemWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Scheme:
    """Estimator choice and its constants.

    ``lam`` is a number in [0, 1] or ``"auto"`` (estimate it); it only
    applies to the tuned kinds. ``split_fraction`` is the share of labeled
    points used to train the PPI labeler.
    """

    kind: str
    gamma: float = 1.0
    lam: float | str = "auto"
    split_fraction: float = 0.5

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise ValueError(f"unknown scheme {self.kind!r}; expected one of {SCHEMES}")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie in (0, 1)")
        if self.lam != "auto":
            _check_lambda(self.lam)

    @property
    def name(self) -> str:
        return self.kind


def _check_lambda(lam) -> float:
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return lam


@dataclass
class Term:
    """``weight * sum_i l(Z[group][rows_i], targets_i)``."""

    weight: float
    group: str
    targets: np.ndarray
    rows: np.ndarray | None = None


class Objective:
    """Weighted sum of per-sample losses with value, gradient and Hessian.

    Terms over the same feature block are merged for losses that are linear
    in their target (the softmax cross-entropy), which keeps evaluation cost
    independent of the number of fold models.
    """

    def __init__(self, model: LossModel, features: dict, terms: list, scheme: str = "",
                 lam: float | None = None):
        self.model = model
        self.features = features
        self.scheme = scheme
        self.lam = lam
        terms = [t for t in terms if t.weight != 0.0]
        self.ridge_weight = float(sum(
            t.weight * (len(t.rows) if t.rows is not None else features[t.group].shape[0])
            for t in terms))
        self.terms = terms
        self._blocks = self._merge(terms) if not model.quadratic else [
            (t.weight, features[t.group] if t.rows is None else features[t.group][t.rows],
             t.targets) for t in terms]

    def _merge(self, terms):
        merged: dict = {}
        for t in terms:
            Zg = self.features[t.group]
            if t.group not in merged:
                merged[t.group] = np.zeros((Zg.shape[0],) + t.targets.shape[1:])
            if t.rows is None:
                merged[t.group] += t.weight * t.targets
            else:
                np.add.at(merged[t.group], t.rows, t.weight * t.targets)
        return [(1.0, self.features[g], T) for g, T in merged.items()]

    @property
    def dim(self) -> int:
        return self.model.dim_theta

    def value(self, theta) -> float:
        theta = self.model.check_theta(theta)
        v = 0.0
        for w, Z, T in self._blocks:
            v += w * float(np.sum(self.model.data_values(theta, Z, T)))
        return v + self.model.gamma * self.ridge_weight * float(theta @ theta)

    def gradient(self, theta) -> np.ndarray:
        theta = self.model.check_theta(theta)
        g = np.zeros(self.dim)
        for w, Z, T in self._blocks:
            g += self.model.data_grad_sum(theta, Z, T, w)
        return g + 2.0 * self.model.gamma * self.ridge_weight * theta

    def hessian(self, theta) -> np.ndarray:
        theta = self.model.check_theta(theta)
        H = np.zeros((self.dim, self.dim))
        for w, Z, T in self._blocks:
            H += self.model.data_hessian_sum(theta, Z, T, w)
        return H + 2.0 * self.model.gamma * self.ridge_weight * np.eye(self.dim)

    def normal_equations(self):
        """``(A, b)`` such that the objective is ``theta' A theta - 2 b' theta + const``."""
        if not self.model.quadratic:
            raise TypeError(f"{self.model.kind} objectives are not quadratic")
        A = np.zeros((self.dim, self.dim))
        b = np.zeros(self.dim)
        for w, Z, T in self._blocks:
            Ai, bi = self.model.normal_equations(Z, T, w)
            A += Ai
            b += bi
        if self.model.gamma:
            A += self.model.gamma * self.ridge_weight * np.eye(self.dim)
        return A, b


# ---------------------------------------------------------------------------
# objective builders
# ---------------------------------------------------------------------------


def _features(model, labeled=None, unlabeled=None, **extra):
    out = {}
    if labeled is not None:
        out["labeled"] = model.transform(labeled.inputs)
    if unlabeled is not None:
        out["unlabeled"] = model.transform(unlabeled.inputs)
    out.update(extra)
    return out


def erm_objective(model: LossModel, labeled: LabeledDataset) -> Objective:
    n = len(labeled)
    if n == 0:
        raise ValueError("ERM needs at least one labeled point")
    feats = _features(model, labeled)
    return Objective(model, feats, [Term(1.0 / n, "labeled", model.targets(labeled.labels))],
                     "ERM")


def ss_objective(model: LossModel, labeled: LabeledDataset, unlabeled: UnlabeledDataset, f,
                 gamma: float = 1.0, predictions=None) -> Objective:
    """Pooled pseudo-labeling objective ``(sum_lab l + gamma sum_unl l(f)) / (n + N)``."""
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    check_compatible(labeled, unlabeled)
    n, N = len(labeled), len(unlabeled)
    pred = f.predict(unlabeled.inputs) if predictions is None else predictions
    feats = _features(model, labeled, unlabeled)
    terms = [Term(1.0 / (n + N), "labeled", model.targets(labeled.labels)),
             Term(gamma / (n + N), "unlabeled", model.targets(pred))]
    return Objective(model, feats, terms, "SS")


class PpiPredictions(NamedTuple):
    unlabeled: np.ndarray
    rectifier: np.ndarray


def ppi_predictions(f, rectifier: LabeledDataset, unlabeled: UnlabeledDataset) -> PpiPredictions:
    return PpiPredictions(f.predict(unlabeled.inputs), f.predict(rectifier.inputs))


def tuned_ppi_objective(model: LossModel, rectifier: LabeledDataset, unlabeled: UnlabeledDataset,
                        f, lam: float, predictions: PpiPredictions | None = None,
                        _scheme: str = "TunedPPI") -> Objective:
    """``L_ERM + lam * [mean_unl l(f) - mean_rect l(f)]`` over the rectifier set."""
    lam = _check_lambda(lam)
    check_compatible(rectifier, unlabeled)
    n, N = len(rectifier), len(unlabeled)
    if predictions is None:
        predictions = ppi_predictions(f, rectifier, unlabeled)
    feats = _features(model, rectifier, unlabeled)
    terms = [Term(1.0 / n, "labeled", model.targets(rectifier.labels))]
    if lam != 0.0:
        terms += [Term(lam / N, "unlabeled", model.targets(predictions.unlabeled)),
                  Term(-lam / n, "labeled", model.targets(predictions.rectifier))]
    return Objective(model, feats, terms, _scheme, lam)


def ppi_objective(model: LossModel, rectifier: LabeledDataset, unlabeled: UnlabeledDataset, f,
                  predictions: PpiPredictions | None = None) -> Objective:
    """``mean_unl l(f) - [mean_rect l(f) - L_ERM]``."""
    return tuned_ppi_objective(model, rectifier, unlabeled, f, 1.0, predictions, "PPI")


class CrossFitPredictions(NamedTuple):
    """Fold-model outputs: ``unlabeled[k] = f^(k)(X~)`` and
    ``held_out[i] = f^(k(i))(X_i)`` (each labeled row scored by the model
    that never saw it)."""

    unlabeled: list
    held_out: np.ndarray


def cross_fit_predictions(labeled: LabeledDataset, folds: FoldAssignment, fold_models,
                          unlabeled: UnlabeledDataset) -> CrossFitPredictions:
    if len(fold_models) != folds.K:
        raise ValueError(f"expected {folds.K} fold models, got {len(fold_models)}")
    if folds.n != len(labeled):
        raise ValueError("fold assignment does not match the labeled set")
    unl = [np.asarray(m.predict(unlabeled.inputs)) for m in fold_models]
    held = None
    for k, m in enumerate(fold_models):
        idx = folds.members[k]
        if idx.size == 0:
            continue
        p = np.asarray(m.predict(labeled.inputs[idx]))
        if held is None:
            held = np.zeros((len(labeled),) + p.shape[1:], dtype=p.dtype)
        held[idx] = p
    return CrossFitPredictions(unl, held)


def tuned_cppi_objective(model: LossModel, labeled: LabeledDataset, folds: FoldAssignment,
                         fold_models, unlabeled: UnlabeledDataset, lam: float,
                         predictions: CrossFitPredictions | None = None,
                         _scheme: str = "TunedCPPI") -> Objective:
    """``L_ERM + lam * [(1/KN) sum_k sum_i l(X~_i, f^k) - (1/n) sum_k sum_{D^k} l(X, f^k)]``."""
    lam = _check_lambda(lam)
    check_compatible(labeled, unlabeled)
    n, N = len(labeled), len(unlabeled)
    if predictions is None:
        predictions = cross_fit_predictions(labeled, folds, fold_models, unlabeled)
    K = len(predictions.unlabeled)
    feats = _features(model, labeled, unlabeled)
    terms = [Term(1.0 / n, "labeled", model.targets(labeled.labels))]
    if lam != 0.0:
        for pk in predictions.unlabeled:
            terms.append(Term(lam / (K * N), "unlabeled", model.targets(pk)))
        terms.append(Term(-lam / n, "labeled", model.targets(predictions.held_out)))
    return Objective(model, feats, terms, _scheme, lam)


def cppi_objective(model: LossModel, labeled: LabeledDataset, folds: FoldAssignment,
                   fold_models, unlabeled: UnlabeledDataset,
                   predictions: CrossFitPredictions | None = None) -> Objective:
    return tuned_cppi_objective(model, labeled, folds, fold_models, unlabeled, 1.0, predictions,
                                "CPPI")


def split_for_ppi(n: int, split_fraction: float, seed=None):
    """Random split of ``range(n)`` into (labeler-training, rectifier) index sets."""
    if not 0.0 < split_fraction < 1.0:
        raise ValueError("split_fraction must lie in (0, 1)")
    n_train = int(np.floor(split_fraction * n))
    if n_train < 1 or n_train >= n:
        raise ValueError(f"split_fraction={split_fraction} leaves an empty side for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------


@dataclass
class SolveInfo:
    method: str
    iterations: int = 0
    grad_norm: float = 0.0
    converged: bool = True
    ridge_fallback: bool = False
    extra: dict = field(default_factory=dict)


def _solve_linear(A, b):
    A = 0.5 * (A + A.T)
    evals = np.linalg.eigvalsh(A)
    top = max(abs(evals[-1]), abs(evals[0]))
    if top == 0.0 or evals[0] <= 1e-12 * top:
        warnings.warn("singular stationarity system; adding 1e-8 I", SingularSystemWarning,
                      stacklevel=3)
        return np.linalg.solve(A + 1e-8 * np.eye(A.shape[0]), b), True
    return np.linalg.solve(A, b), False


def gradient_descent(obj: Objective, theta0=None, tol: float = 1e-8, max_iters: int = 10_000):
    """Full-batch gradient descent with a Barzilai-Borwein trial step and
    Armijo backtracking."""
    theta = np.zeros(obj.dim) if theta0 is None else np.array(theta0, dtype=float)
    f = obj.value(theta)
    g = obj.gradient(theta)
    step = 1.0 / max(1.0, float(np.abs(g).max()))
    it = 0
    while it < max_iters and np.abs(g).max() > tol:
        it += 1
        gg = float(g @ g)
        while True:
            cand = theta - step * g
            fc = obj.value(cand)
            if fc <= f - 1e-4 * step * gg or step < 1e-20:
                break
            step *= 0.5
        if step < 1e-20:
            break
        gc = obj.gradient(cand)
        s, y = cand - theta, gc - g
        sy = float(s @ y)
        theta, f, g = cand, fc, gc
        step = float(s @ s) / sy if sy > 0 else step * 2.0
    gnorm = float(np.abs(g).max())
    return theta, SolveInfo("gd", it, gnorm, gnorm <= tol)


def solve(obj: Objective, method: str = "auto", tol: float = 1e-8, max_iters: int = 10_000,
          theta0=None, return_info: bool = False):
    """Minimise an objective.

    Quadratic losses are solved exactly from their stationarity system
    (``method="direct"``; a ``1e-8 I`` ridge is added with a warning if the
    system is singular). RidgeSoftmax uses gradient descent. ``method="gd"``
    forces the iterative solver for any loss.
    """
    if method == "auto":
        method = "direct" if obj.model.quadratic else "gd"
    if method == "direct":
        A, b = obj.normal_equations()
        theta, flagged = _solve_linear(A, b)
        info = SolveInfo("direct", 0, float(np.abs(obj.gradient(theta)).max()), True, flagged)
    elif method == "gd":
        theta, info = gradient_descent(obj, theta0, tol, max_iters)
    else:
        raise ValueError(f"unknown method {method!r}")
    return (theta, info) if return_info else theta
