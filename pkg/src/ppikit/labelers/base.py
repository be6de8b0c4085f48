"""Labeler specifications, fitted labelers and the fold/bootstrap protocols."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .._seeding import derive_seed
from ..datasets import FoldAssignment, LabeledDataset
from .forest import ForestRegressor
from .mlp import MlpArch, train_mlp

KINDS = ("ConstantMean", "Ridge", "Knn", "ForestLite", "Mlp", "Fixed", "Ckm")

DEFAULTS = {
    "ConstantMean": {},
    "Ridge": {"alpha": 1.0},
    "Knn": {"k": 5},
    "ForestLite": {"n_trees": 50, "max_depth": 8, "min_leaf": 5, "max_features": "sqrt",
                   "bootstrap": True},
    "Mlp": {"hidden": (64, 64), "activation": "leaky_relu", "epochs": 200, "lr": 1e-3,
            "batch_size": 32, "weight_decay": 0.0},
    "Fixed": {"function": None},
    "Ckm": {},
}

# lower bounds (inclusive) for numeric hyperparameters; lr must be strictly positive
_MINIMUM = {"alpha": 0.0, "k": 1, "n_trees": 1, "max_depth": 0, "min_leaf": 1, "epochs": 0,
            "batch_size": 1}


class DegenerateFitWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LabelerSpec:
    """Which predictor to train and with what hyperparameters.

    Unspecified hyperparameters take the per-kind defaults in ``DEFAULTS``.
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int | None = 0

    def __post_init__(self):
        if self.kind not in KINDS and self.kind not in _REGISTRY:
            raise ValueError(f"unknown labeler kind {self.kind!r}")
        merged = dict(DEFAULTS.get(self.kind, {}))
        merged.update(self.params)
        for key, lo in _MINIMUM.items():
            if key in merged and merged[key] < lo:
                raise ValueError(f"hyperparameter {key}={merged[key]!r} must be >= {lo}")
        if "lr" in merged and not merged["lr"] > 0:
            raise ValueError("learning rate must be positive")
        if self.kind == "Mlp" and any(int(h) < 1 for h in merged["hidden"]):
            raise ValueError("hidden layer sizes must be positive")
        object.__setattr__(self, "params", merged)

    def with_seed(self, seed) -> "LabelerSpec":
        return LabelerSpec(self.kind, dict(self.params), seed)


class Labeler:
    """A fitted predictor ``f``.

    ``task`` is ``"regression"`` (scalar or vector outputs) or
    ``"classification"`` (class indices). ``fallback`` is set when fitting
    fell back to a constant predictor because the inputs were degenerate.
    ``train_indices`` records which rows of the parent dataset were used,
    when the labeler was produced by a fold or bootstrap protocol.
    """

    task = "regression"
    n_classes: int | None = None
    fallback = False
    train_indices: np.ndarray | None = None

    def predict(self, X) -> np.ndarray:
        raise NotImplementedError

    def predict_one(self, x):
        return self.predict(np.atleast_2d(x))[0]

    def __call__(self, X):
        return self.predict(X)


class ConstantLabeler(Labeler):
    def __init__(self, value, task="regression", n_classes=None, fallback=False):
        self.value = np.asarray(value)
        self.task = task
        self.n_classes = n_classes
        self.fallback = fallback

    def predict(self, X):
        n = np.atleast_2d(X).shape[0]
        return np.broadcast_to(self.value, (n,) + self.value.shape).copy()


def _constant_fit(data: LabeledDataset, fallback=False) -> ConstantLabeler:
    if data.n_classes is not None:
        counts = np.bincount(data.labels, minlength=data.n_classes)
        return ConstantLabeler(np.int64(np.argmax(counts)), "classification", data.n_classes,
                               fallback)
    return ConstantLabeler(np.asarray(data.labels, dtype=float).mean(axis=0), fallback=fallback)


class RidgeLabeler(Labeler):
    def __init__(self, coef, intercept):
        self.coef = coef
        self.intercept = intercept

    def predict(self, X):
        return np.atleast_2d(np.asarray(X, dtype=float)) @ self.coef + self.intercept


def _ridge_fit(data: LabeledDataset, alpha: float) -> RidgeLabeler:
    if data.n_classes is not None:
        raise ValueError("Ridge labeler supports regression targets only")
    X = data.inputs
    Y = np.asarray(data.labels, dtype=float)
    xm = X.mean(axis=0)
    ym = Y.mean(axis=0)
    Xc = X - xm
    if alpha == 0:
        coef = np.linalg.lstsq(Xc, Y - ym, rcond=None)[0]
    else:
        coef = np.linalg.solve(Xc.T @ Xc + alpha * np.eye(X.shape[1]), Xc.T @ (Y - ym))
    return RidgeLabeler(coef, ym - xm @ coef)


class KnnLabeler(Labeler):
    def __init__(self, X, labels, k, n_classes=None):
        self.X = X
        self.labels = labels
        self.k = min(k, X.shape[0])
        self.n_classes = n_classes
        self.task = "classification" if n_classes is not None else "regression"

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = []
        for start in range(0, X.shape[0], 2048):
            B = X[start:start + 2048]
            d2 = (np.sum(B ** 2, 1)[:, None] + np.sum(self.X ** 2, 1)[None, :]
                  - 2.0 * B @ self.X.T)
            # stable sort: equal distances keep the lower training index first
            nn = np.argsort(d2, axis=1, kind="stable")[:, :self.k]
            if self.n_classes is None:
                out.append(np.asarray(self.labels, dtype=float)[nn].mean(axis=1))
            else:
                votes = np.zeros((B.shape[0], self.n_classes))
                np.add.at(votes, (np.arange(B.shape[0])[:, None], self.labels[nn]), 1.0)
                out.append(np.argmax(votes, axis=1))
        return np.concatenate(out, axis=0)


class ForestLabeler(Labeler):
    def __init__(self, forest: ForestRegressor, n_classes=None):
        self.forest = forest
        self.n_classes = n_classes
        self.task = "classification" if n_classes is not None else "regression"

    def predict(self, X):
        out = self.forest.predict(X)
        return np.argmax(out, axis=1) if self.n_classes is not None else out


class MlpLabeler(Labeler):
    """Dense network with standardised inputs (and outputs for regression)."""

    def __init__(self, arch, theta, x_mean, x_std, y_mean=None, y_std=None, n_classes=None,
                 out_shape=()):
        self.arch, self.theta = arch, theta
        self.x_mean, self.x_std = x_mean, x_std
        self.y_mean, self.y_std = y_mean, y_std
        self.n_classes = n_classes
        self.out_shape = out_shape
        self.task = "classification" if n_classes is not None else "regression"

    def _scaled(self, X):
        return (np.atleast_2d(np.asarray(X, dtype=float)) - self.x_mean) / self.x_std

    def predict_proba(self, X):
        return self.arch.predict_proba(self.theta, self._scaled(X))

    def predict(self, X):
        out = self.arch.forward(self.theta, self._scaled(X))
        if self.n_classes is not None:
            return np.argmax(out, axis=1)
        out = out * self.y_std + self.y_mean
        return out.reshape((out.shape[0],) + self.out_shape)


def _safe_std(a):
    s = a.std(axis=0)
    return np.where(s > 0, s, 1.0)


def _mlp_fit(data: LabeledDataset, p: dict, seed) -> MlpLabeler:
    X = data.inputs
    xm, xs = X.mean(axis=0), _safe_std(X)
    Xs = (X - xm) / xs
    hidden = tuple(int(h) for h in p["hidden"])
    kw = dict(epochs=int(p["epochs"]), lr=float(p["lr"]), batch_size=int(p["batch_size"]),
              weight_decay=float(p["weight_decay"]), seed=seed)
    if data.n_classes is not None:
        arch = MlpArch((X.shape[1],) + hidden + (data.n_classes,), p["activation"])
        theta = train_mlp(arch, Xs, data.labels, "classification", **kw)
        return MlpLabeler(arch, theta, xm, xs, n_classes=data.n_classes)
    Y = np.asarray(data.labels, dtype=float)
    out_shape = Y.shape[1:]
    Y2 = Y.reshape(Y.shape[0], -1)
    ym, ys = Y2.mean(axis=0), _safe_std(Y2)
    arch = MlpArch((X.shape[1],) + hidden + (Y2.shape[1],), p["activation"])
    theta = train_mlp(arch, Xs, (Y2 - ym) / ys, "regression", **kw)
    return MlpLabeler(arch, theta, xm, xs, ym, ys, out_shape=out_shape)


class FixedLabeler(Labeler):
    """Wraps a known function ``X -> labels`` (no training)."""

    def __init__(self, function: Callable, n_classes=None):
        if function is None:
            raise ValueError("Fixed labeler needs a 'function' parameter")
        self.function = function
        self.n_classes = n_classes
        self.task = "classification" if n_classes is not None else "regression"

    def predict(self, X):
        return np.asarray(self.function(np.atleast_2d(np.asarray(X, dtype=float))))


def _inputs_degenerate(X) -> bool:
    return X.shape[0] < 2 or bool(np.all(X == X[0]))


_REGISTRY: dict = {}


def register_labeler(kind: str, fit_fn: Callable) -> None:
    """Register ``fit_fn(spec, data) -> Labeler`` for an extra labeler kind."""
    _REGISTRY[kind] = fit_fn


def fit(spec: LabelerSpec, data: LabeledDataset) -> Labeler:
    """Train the labeler described by ``spec`` on ``data``."""
    if len(data) == 0:
        raise ValueError("cannot fit a labeler on an empty dataset")
    p = spec.params
    seed = derive_seed(spec.seed, "labeler-fit")
    kind = spec.kind
    if kind == "ConstantMean":
        return _constant_fit(data)
    if kind == "Ridge":
        return _ridge_fit(data, float(p["alpha"]))
    if kind in ("Knn", "ForestLite") and _inputs_degenerate(data.inputs):
        warnings.warn(f"{kind}: all inputs identical; using a constant predictor",
                      DegenerateFitWarning, stacklevel=2)
        return _constant_fit(data, fallback=True)
    if kind == "Knn":
        return KnnLabeler(data.inputs, data.labels, int(p["k"]), data.n_classes)
    if kind == "ForestLite":
        if data.n_classes is not None:
            T = np.zeros((len(data), data.n_classes))
            T[np.arange(len(data)), data.labels] = 1.0
        else:
            T = np.asarray(data.labels, dtype=float)
        forest = ForestRegressor(p["n_trees"], p["max_depth"], p["min_leaf"],
                                 p["max_features"], p["bootstrap"], seed).fit(data.inputs, T)
        return ForestLabeler(forest, data.n_classes)
    if kind == "Mlp":
        return _mlp_fit(data, p, seed)
    if kind == "Fixed":
        return FixedLabeler(p["function"], data.n_classes)
    if kind == "Ckm" and kind not in _REGISTRY:
        from ..wireless import ckm  # noqa: F401  (registers the kind)
    if kind in _REGISTRY:
        return _REGISTRY[kind](spec, data)
    raise ValueError(f"unknown labeler kind {kind!r}")


def predict(labeler: Labeler, x):
    """Pseudo-label for one input vector, or labels for a batch of rows."""
    x = np.asarray(x, dtype=float)
    return labeler.predict_one(x) if x.ndim == 1 else labeler.predict(x)


def train_fold_models(data: LabeledDataset, folds: FoldAssignment, spec: LabelerSpec) -> list:
    """Model ``k`` is trained on every labeled point outside fold ``k``."""
    if folds.K < 2:
        raise ValueError("need K >= 2")
    if folds.n != len(data):
        raise ValueError("fold assignment does not match the dataset size")
    models = []
    for k in range(folds.K):
        idx = folds.complement(k)
        model = fit(spec.with_seed(derive_seed(spec.seed, "fold", k)), data.subset(idx))
        model.train_indices = idx
        models.append(model)
    return models


class BootstrapRun(NamedTuple):
    labeler: Labeler
    in_bag: np.ndarray

    def held_out(self, n: int) -> np.ndarray:
        mask = np.ones(n, dtype=bool)
        mask[self.in_bag] = False
        return np.flatnonzero(mask)


def bootstrap_models(data: LabeledDataset, K: int, B: int, spec: LabelerSpec, seed=None) -> list:
    """Simulate ``B`` cross-fitting runs.

    Each run trains on ``n - floor(n / K)`` indices drawn without
    replacement (its in-bag set ``I_b``); the remaining indices are the
    run's held-out points.
    """
    if B < 2:
        raise ValueError("need B >= 2 bootstrap runs")
    n = len(data)
    if K < 2 or K > n:
        raise ValueError(f"need 2 <= K <= n, got K={K}, n={n}")
    size = n - n // K
    rng = np.random.default_rng(derive_seed(seed, "bootstrap-rows"))
    runs = []
    for b in range(B):
        in_bag = np.sort(rng.choice(n, size=size, replace=False))
        model = fit(spec.with_seed(derive_seed(spec.seed, seed, "boot", b)), data.subset(in_bag))
        model.train_indices = in_bag
        runs.append(BootstrapRun(model, in_bag))
    return runs
