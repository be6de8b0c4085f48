"""Convex per-sample loss families and the feature maps they use.

Every loss works on *features*: raw inputs are passed through
:meth:`LossModel.transform` once, and the vectorised ``data_*`` methods
then evaluate the data-fit part of the loss for many samples at once. The
ridge term ``gamma * ||theta||^2`` that RidgeSoftmax and ElmRidge carry per
sample is kept separate so that weighted sums of losses can count it once
per unit of total weight.
"""

from __future__ import annotations

import numpy as np

# ---------------------------------------------------------------------------
# feature maps
# ---------------------------------------------------------------------------


class FeatureMap:
    """Base class for fixed input transformations ``x -> psi(x)``."""

    kind = "Identity"

    def transform(self, X) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=float))

    def output_dim(self, input_dim: int) -> int:
        return input_dim


class IdentityMap(FeatureMap):
    pass


class ColumnMap(FeatureMap):
    """Selects a subset of input coordinates."""

    kind = "Columns"

    def __init__(self, columns):
        self.columns = tuple(int(c) for c in columns)

    def transform(self, X) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=float))[:, list(self.columns)]

    def output_dim(self, input_dim: int) -> int:
        return len(self.columns)


class RbfNystromMap(FeatureMap):
    """Nyström features ``psi(x) = K_mm^{-1/2} k_m(x)`` for the Gaussian kernel."""

    kind = "RbfNystrom"

    def __init__(self, landmarks, bandwidth: float, whitening):
        self.landmarks = np.array(landmarks, dtype=float)
        self.bandwidth = float(bandwidth)
        self.whitening = np.array(whitening, dtype=float)
        for a in (self.landmarks, self.whitening):
            a.flags.writeable = False

    def kernel(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        sq = (np.sum(X ** 2, axis=1)[:, None] + np.sum(self.landmarks ** 2, axis=1)[None, :]
              - 2.0 * X @ self.landmarks.T)
        np.maximum(sq, 0.0, out=sq)
        return np.exp(-sq / (2.0 * self.bandwidth ** 2))

    def transform(self, X) -> np.ndarray:
        return self.kernel(X) @ self.whitening.T

    def output_dim(self, input_dim: int) -> int:
        return self.landmarks.shape[0]


class ElmHiddenMap(FeatureMap):
    """Frozen random hidden layer ``h(x) = sigmoid(W x + b)``."""

    kind = "ElmHidden"

    def __init__(self, W, b):
        self.W = np.array(W, dtype=float)
        self.b = np.array(b, dtype=float)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError("W must be (p, d) and b must be (p,)")
        self.W.flags.writeable = False
        self.b.flags.writeable = False

    @property
    def p(self) -> int:
        return self.W.shape[0]

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return _sigmoid(X @ self.W.T + self.b)

    def output_dim(self, input_dim: int) -> int:
        return self.p


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def make_elm_map(input_dim: int, p: int, seed=None) -> ElmHiddenMap:
    """Random ELM hidden layer: ``W ~ N(0, 1)``, ``b ~ U(-1, 1)``."""
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((p, input_dim))
    b = rng.uniform(-1.0, 1.0, p)
    return ElmHiddenMap(W, b)


def elm_features(x, fmap: ElmHiddenMap) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != fmap.W.shape[1]:
            raise ValueError(f"expected {fmap.W.shape[1]} inputs, got {x.shape[0]}")
        return fmap.transform(x[None, :])[0]
    return fmap.transform(x)


def median_pairwise_distance(points, max_points: int = 2000) -> float:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] > max_points:
        # evenly strided subsample keeps the heuristic deterministic
        P = P[np.linspace(0, P.shape[0] - 1, max_points).astype(int)]
    sq = np.sum(P ** 2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * P @ P.T
    iu = np.triu_indices(P.shape[0], k=1)
    d = np.sqrt(np.maximum(d2[iu], 0.0))
    med = float(np.median(d)) if d.size else 0.0
    return med if med > 0 else 1.0


def fit_rbf_nystrom(points, m: int, bandwidth: float | None = None, jitter: float = 1e-8,
                    seed=None) -> RbfNystromMap:
    """Fit a Nyström feature map with ``m`` landmarks drawn without replacement.

    Parameters
    ----------
    points : array of shape (n, d)
    m : int
        Number of landmarks, at most ``n``.
    bandwidth : float, optional
        Gaussian kernel width; defaults to the median pairwise distance.
    jitter : float
        Added to the diagonal of the landmark kernel matrix before taking
        its inverse square root.

    Raises
    ------
    numpy.linalg.LinAlgError
        If the landmark kernel matrix is numerically singular and no jitter
        is used.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if not 1 <= m <= P.shape[0]:
        raise ValueError(f"need 1 <= m <= {P.shape[0]}, got {m}")
    if jitter < 0:
        raise ValueError("jitter must be nonnegative")
    rng = np.random.default_rng(seed)
    landmarks = P[np.sort(rng.choice(P.shape[0], size=m, replace=False))]
    if bandwidth is None:
        bandwidth = median_pairwise_distance(P)
    tmp = RbfNystromMap(landmarks, bandwidth, np.eye(m))
    Kmm = tmp.kernel(landmarks)
    Kmm = 0.5 * (Kmm + Kmm.T) + jitter * np.eye(m)
    evals, evecs = np.linalg.eigh(Kmm)
    if jitter == 0.0:
        if evals[0] <= 1e-12 * max(evals[-1], 1.0):
            raise np.linalg.LinAlgError("landmark kernel matrix is singular; use jitter > 0")
    else:
        evals = np.maximum(evals, jitter)
    whitening = (evecs / np.sqrt(evals)) @ evecs.T
    return RbfNystromMap(landmarks, bandwidth, whitening)


# ---------------------------------------------------------------------------
# loss models
# ---------------------------------------------------------------------------


class LossModel:
    """A convex loss ``l_theta(x, y)`` with analytic gradient and Hessian.

    Subclasses implement the vectorised data-fit methods on features ``Z``
    and targets ``T`` (as produced by :meth:`transform` and
    :meth:`targets`). ``gamma`` is the per-sample ridge weight.
    """

    kind = "Abstract"
    gamma = 0.0
    quadratic = True

    @property
    def dim_theta(self) -> int:
        raise NotImplementedError

    def transform(self, X) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=float))

    def targets(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float)

    # vectorised, data part only -------------------------------------------------

    def data_values(self, theta, Z, T) -> np.ndarray:
        """Per-sample data-fit loss, shape (n,)."""
        raise NotImplementedError

    def data_grads(self, theta, Z, T) -> np.ndarray:
        """Per-sample gradients of the data-fit loss, shape (n, D)."""
        raise NotImplementedError

    def data_grad_sum(self, theta, Z, T, w=1.0) -> np.ndarray:
        return w * self.data_grads(theta, Z, T).sum(axis=0)

    def data_hessian_sum(self, theta, Z, T, w=1.0) -> np.ndarray:
        """Weighted sum of per-sample data Hessians, shape (D, D)."""
        raise NotImplementedError

    def normal_equations(self, Z, T, w=1.0):
        """For quadratic losses, ``(A, b)`` with ``w * sum l = theta' A theta - 2 b' theta + c``."""
        raise NotImplementedError

    # per-sample including ridge --------------------------------------------------

    def ridge_value(self, theta) -> float:
        return self.gamma * float(theta @ theta)

    def values(self, theta, Z, T) -> np.ndarray:
        theta = self.check_theta(theta)
        return self.data_values(theta, Z, T) + self.ridge_value(theta)

    def grads(self, theta, Z, T) -> np.ndarray:
        theta = self.check_theta(theta)
        return self.data_grads(theta, Z, T) + 2.0 * self.gamma * theta[None, :]

    def hessian_sum(self, theta, Z, T, w=1.0) -> np.ndarray:
        theta = self.check_theta(theta)
        n = Z.shape[0]
        H = self.data_hessian_sum(theta, Z, T, w)
        if self.gamma:
            H = H + 2.0 * self.gamma * w * n * np.eye(self.dim_theta)
        return H

    def check_theta(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if theta.shape != (self.dim_theta,):
            raise ValueError(f"theta must have {self.dim_theta} entries, got shape {theta.shape}")
        return theta

    # single-sample public API ------------------------------------------------------

    def _single(self, x, y):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        Z = self.transform(x[None, :])
        T = self.targets(np.asarray([y]) if np.ndim(y) == 0 else np.asarray(y)[None, ...])
        return Z, T

    def loss_value(self, theta, x, y) -> float:
        Z, T = self._single(x, y)
        return float(self.values(theta, Z, T)[0])

    def loss_grad(self, theta, x, y) -> np.ndarray:
        Z, T = self._single(x, y)
        return self.grads(theta, Z, T)[0]

    def loss_hessian(self, theta, x, y) -> np.ndarray:
        Z, T = self._single(x, y)
        return self.hessian_sum(theta, Z, T)


class MeanEstimation(LossModel):
    """``l_theta(y) = (y - theta)^2``; inputs are ignored."""

    kind = "MeanEstimation"

    @property
    def dim_theta(self) -> int:
        return 1

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        n = X.shape[0] if X.ndim >= 1 else 1
        return np.zeros((n, 0))

    def targets(self, y) -> np.ndarray:
        return np.asarray(y, dtype=float).reshape(-1)

    def data_values(self, theta, Z, T):
        return (T - theta[0]) ** 2

    def data_grads(self, theta, Z, T):
        return (-2.0 * (T - theta[0]))[:, None]

    def data_hessian_sum(self, theta, Z, T, w=1.0):
        return np.array([[2.0 * w * T.shape[0]]])

    def normal_equations(self, Z, T, w=1.0):
        return np.array([[w * T.shape[0]]]), np.array([w * T.sum()])


class LinearRegression(LossModel):
    """``l_theta(x, y) = (y - x_S' theta)^2`` over the selected columns ``S``."""

    kind = "LinearRegression"

    def __init__(self, d: int, columns=None):
        self.columns = tuple(range(d)) if columns is None else tuple(int(c) for c in columns)
        if len(self.columns) != d:
            raise ValueError("columns must list exactly d input coordinates")
        self.d = d

    @property
    def dim_theta(self) -> int:
        return self.d

    def transform(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if max(self.columns) >= X.shape[1]:
            raise ValueError(f"inputs have {X.shape[1]} columns, need column {max(self.columns)}")
        return X[:, list(self.columns)]

    def targets(self, y):
        return np.asarray(y, dtype=float).reshape(-1)

    def data_values(self, theta, Z, T):
        return (T - Z @ theta) ** 2

    def data_grads(self, theta, Z, T):
        return -2.0 * (T - Z @ theta)[:, None] * Z

    def data_hessian_sum(self, theta, Z, T, w=1.0):
        return 2.0 * w * (Z.T @ Z)

    def normal_equations(self, Z, T, w=1.0):
        return w * (Z.T @ Z), w * (Z.T @ T)


class ElmRidge(LossModel):
    """``sum_j (y[j] - h(x)' theta_j)^2 + gamma ||theta||^2`` on ELM features."""

    kind = "ElmRidge"

    def __init__(self, feature_map: ElmHiddenMap, gamma: float = 1e-3, n_outputs: int = 2):
        if gamma < 0:
            raise ValueError("gamma must be nonnegative")
        self.feature_map = feature_map
        self.gamma = float(gamma)
        self.n_outputs = int(n_outputs)

    @property
    def p(self) -> int:
        return self.feature_map.p

    @property
    def dim_theta(self) -> int:
        return self.n_outputs * self.p

    def transform(self, X):
        return self.feature_map.transform(X)

    def targets(self, y):
        T = np.asarray(y, dtype=float)
        if T.ndim == 1:
            T = T.reshape(-1, self.n_outputs)
        if T.shape[1] != self.n_outputs:
            raise ValueError(f"targets must have {self.n_outputs} columns")
        return T

    def _theta_mat(self, theta):
        return theta.reshape(self.n_outputs, self.p)

    def predict(self, theta, X) -> np.ndarray:
        return self.transform(X) @ self._theta_mat(np.asarray(theta, dtype=float)).T

    def data_values(self, theta, Z, T):
        R = T - Z @ self._theta_mat(theta).T
        return np.sum(R ** 2, axis=1)

    def data_grads(self, theta, Z, T):
        R = T - Z @ self._theta_mat(theta).T
        return (-2.0 * R[:, :, None] * Z[:, None, :]).reshape(Z.shape[0], -1)

    def data_grad_sum(self, theta, Z, T, w=1.0):
        R = T - Z @ self._theta_mat(theta).T
        return (-2.0 * w * (R.T @ Z)).reshape(-1)

    def data_hessian_sum(self, theta, Z, T, w=1.0):
        return 2.0 * w * np.kron(np.eye(self.n_outputs), Z.T @ Z)

    def normal_equations(self, Z, T, w=1.0):
        A = w * np.kron(np.eye(self.n_outputs), Z.T @ Z)
        b = w * (Z.T @ T).T.reshape(-1)
        return A, b


def log_softmax(A) -> np.ndarray:
    A = A - A.max(axis=1, keepdims=True)
    return A - np.log(np.exp(A).sum(axis=1, keepdims=True))


def softmax(A) -> np.ndarray:
    A = A - A.max(axis=1, keepdims=True)
    E = np.exp(A)
    return E / E.sum(axis=1, keepdims=True)


class RidgeSoftmax(LossModel):
    """Cross-entropy of ``softmax(theta_j' psi(x))`` plus ``gamma ||theta||^2``.

    ``theta`` is the row-major flattening of a ``(J, m)`` matrix whose rows
    are the per-class weights. Targets may be class indices or rows of
    nonnegative weights over classes (soft labels); the cross-entropy is
    linear in the target, and a target row with total mass ``s`` contributes
    ``s * logsumexp(a) - t' a``.
    """

    kind = "RidgeSoftmax"
    quadratic = False

    def __init__(self, n_classes: int, feature_dim: int, gamma: float = 1e-3,
                 feature_map: FeatureMap | None = None):
        if gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if n_classes < 2:
            raise ValueError("need at least 2 classes")
        self.J = int(n_classes)
        self.m = int(feature_dim)
        self.gamma = float(gamma)
        self.feature_map = feature_map if feature_map is not None else IdentityMap()

    @property
    def dim_theta(self) -> int:
        return self.J * self.m

    def transform(self, X):
        Z = self.feature_map.transform(X)
        if Z.shape[1] != self.m:
            raise ValueError(f"features have dimension {Z.shape[1]}, expected {self.m}")
        return Z

    def targets(self, y):
        y = np.asarray(y)
        if y.ndim == 1:
            if not np.issubdtype(y.dtype, np.integer):
                if not np.all(np.mod(y, 1) == 0):
                    raise ValueError("class labels must be integers")
                y = y.astype(np.int64)
            if y.size and (y.min() < 0 or y.max() >= self.J):
                raise ValueError(f"class labels must lie in [0, {self.J})")
            T = np.zeros((y.shape[0], self.J))
            T[np.arange(y.shape[0]), y] = 1.0
            return T
        T = np.asarray(y, dtype=float)
        if T.ndim != 2 or T.shape[1] != self.J:
            raise ValueError(f"soft targets must have shape (n, {self.J})")
        return T

    def scores(self, theta, Z) -> np.ndarray:
        return Z @ theta.reshape(self.J, self.m).T

    def probabilities(self, theta, X) -> np.ndarray:
        return softmax(self.scores(np.asarray(theta, dtype=float), self.transform(X)))

    def predict(self, theta, X) -> np.ndarray:
        return np.argmax(self.scores(np.asarray(theta, dtype=float), self.transform(X)), axis=1)

    def data_values(self, theta, Z, T):
        A = self.scores(theta, Z)
        amax = A.max(axis=1, keepdims=True)
        lse = amax[:, 0] + np.log(np.exp(A - amax).sum(axis=1))
        return T.sum(axis=1) * lse - np.sum(T * A, axis=1)

    def _residual(self, theta, Z, T):
        P = softmax(self.scores(theta, Z))
        return T.sum(axis=1, keepdims=True) * P - T, P

    def data_grads(self, theta, Z, T):
        R, _ = self._residual(theta, Z, T)
        return (R[:, :, None] * Z[:, None, :]).reshape(Z.shape[0], -1)

    def data_grad_sum(self, theta, Z, T, w=1.0):
        R, _ = self._residual(theta, Z, T)
        return (w * (R.T @ Z)).reshape(-1)

    def data_hessian_sum(self, theta, Z, T, w=1.0):
        P = softmax(self.scores(theta, Z))
        s = w * T.sum(axis=1)
        J, m = self.J, self.m
        H = np.zeros((J * m, J * m))
        # diag(p) (x) psi psi' blocks
        for j in range(J):
            H[j * m:(j + 1) * m, j * m:(j + 1) * m] = (Z * (s * P[:, j])[:, None]).T @ Z
        # minus sum_i s_i (p_i (x) psi_i)(p_i (x) psi_i)'
        U = (P[:, :, None] * Z[:, None, :]).reshape(Z.shape[0], -1)
        H -= (U * s[:, None]).T @ U
        return 0.5 * (H + H.T)


def loss_value(model: LossModel, theta, x, y) -> float:
    return model.loss_value(theta, x, y)


def loss_grad(model: LossModel, theta, x, y) -> np.ndarray:
    return model.loss_grad(theta, x, y)


def loss_hessian(model: LossModel, theta, x, y) -> np.ndarray:
    return model.loss_hessian(theta, x, y)
