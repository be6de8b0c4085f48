"""Dense feed-forward networks with hand-written backpropagation.

Parameters live in one flat vector so that gradients can be dotted,
finite-differenced and stepped without bookkeeping. :class:`MlpArch`
describes the architecture and evaluates losses for a given parameter
vector; :class:`Adam` is a small optimizer used by the labeler trainer.
"""

from __future__ import annotations

import numpy as np

from ..losses import log_softmax, softmax

PROB_FLOOR = 1e-12


def _act(name, a):
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "leaky_relu":
        return np.where(a > 0, a, 0.01 * a)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-np.clip(a, -500, 500)))
    if name == "tanh":
        return np.tanh(a)
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name, a, h):
    if name == "relu":
        return (a > 0).astype(float)
    if name == "leaky_relu":
        return np.where(a > 0, 1.0, 0.01)
    if name == "sigmoid":
        return h * (1.0 - h)
    if name == "tanh":
        return 1.0 - h ** 2
    raise ValueError(f"unknown activation {name!r}")


class MlpArch:
    """Architecture ``sizes = (d_in, h_1, ..., d_out)`` with a shared activation.

    The output layer is linear; cross-entropy losses apply a softmax to it.
    """

    def __init__(self, sizes, activation: str = "leaky_relu"):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError("need at least input and output sizes, all positive")
        _act(activation, np.zeros(1))
        self.activation = activation
        self._slices = []
        offset = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            w = slice(offset, offset + a * b)
            offset += a * b
            bias = slice(offset, offset + b)
            offset += b
            self._slices.append((w, bias, (b, a)))
        self.n_params = offset

    def init(self, seed=None) -> np.ndarray:
        """He-style initialisation; biases start at zero."""
        rng = np.random.default_rng(seed)
        theta = np.zeros(self.n_params)
        for (w, _, shape) in self._slices:
            theta[w] = rng.standard_normal(shape[0] * shape[1]) * np.sqrt(2.0 / shape[1])
        return theta

    def layers(self, theta):
        for (w, b, shape) in self._slices:
            yield theta[w].reshape(shape), theta[b]

    def named_params(self, theta) -> dict:
        out = {}
        for i, (W, b) in enumerate(self.layers(theta)):
            out[f"layer{i}.weight"] = W
            out[f"layer{i}.bias"] = b
        return out

    def from_named(self, named: dict) -> np.ndarray:
        theta = np.zeros(self.n_params)
        for i, (w, b, shape) in enumerate(self._slices):
            theta[w] = np.asarray(named[f"layer{i}.weight"], dtype=float).reshape(-1)
            theta[b] = np.asarray(named[f"layer{i}.bias"], dtype=float).reshape(-1)
        return theta

    def forward(self, theta, X, keep: bool = False):
        H = np.atleast_2d(np.asarray(X, dtype=float))
        cache = [(None, H)]
        layers = list(self.layers(theta))
        for i, (W, b) in enumerate(layers):
            A = H @ W.T + b
            H = A if i == len(layers) - 1 else _act(self.activation, A)
            if keep:
                cache.append((A, H))
        return (H, cache) if keep else H

    def backward(self, theta, cache, dOut) -> np.ndarray:
        """Gradient of ``sum(dOut * output)`` with respect to ``theta``."""
        grad = np.zeros(self.n_params)
        layers = list(self.layers(theta))
        delta = dOut
        for i in range(len(layers) - 1, -1, -1):
            W, _ = layers[i]
            H_prev = cache[i][1]
            w, b, shape = self._slices[i]
            grad[w] = (delta.T @ H_prev).reshape(-1)
            grad[b] = delta.sum(axis=0)
            if i > 0:
                A_prev, Hp = cache[i]
                delta = (delta @ W) * _act_grad(self.activation, A_prev, Hp)
        return grad

    # losses ---------------------------------------------------------------------

    def predict_proba(self, theta, X) -> np.ndarray:
        return softmax(self.forward(theta, X))

    def ce_loss(self, theta, X, targets, weights=None):
        """Mean cross-entropy against class indices or soft target rows.

        Returns ``(value, gradient)``. With ``weights`` the per-sample
        losses are combined as ``sum_i w_i CE_i`` instead of the mean.
        """
        logits, cache = self.forward(theta, X, keep=True)
        n, J = logits.shape
        T = _as_targets(targets, n, J)
        w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
        logp = np.maximum(log_softmax(logits), np.log(PROB_FLOOR))
        value = float(-np.sum(w * np.sum(T * logp, axis=1)))
        P = softmax(logits)
        dOut = w[:, None] * (T.sum(axis=1, keepdims=True) * P - T)
        return value, self.backward(theta, cache, dOut)

    def mse_loss(self, theta, X, Y, weights=None):
        """Mean over samples of the summed squared error across outputs."""
        out, cache = self.forward(theta, X, keep=True)
        Y = np.asarray(Y, dtype=float).reshape(out.shape)
        n = out.shape[0]
        w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
        R = out - Y
        value = float(np.sum(w * np.sum(R ** 2, axis=1)))
        return value, self.backward(theta, cache, 2.0 * w[:, None] * R)


def _as_targets(targets, n, J) -> np.ndarray:
    t = np.asarray(targets)
    if t.ndim == 1:
        T = np.zeros((n, J))
        T[np.arange(n), t.astype(np.int64)] = 1.0
        return T
    return np.asarray(t, dtype=float)


class Adam:
    def __init__(self, n_params: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, theta, grad) -> np.ndarray:
        if self.weight_decay:
            grad = grad + self.weight_decay * theta
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train_mlp(arch: MlpArch, X, targets, task: str, epochs: int = 200, lr: float = 1e-3,
              batch_size: int = 32, weight_decay: float = 0.0, seed=None, theta0=None):
    """Minibatch Adam on mean-squared error (``task='regression'``) or cross-entropy."""
    rng = np.random.default_rng(seed)
    theta = arch.init(rng.integers(2 ** 63)) if theta0 is None else np.array(theta0, dtype=float)
    opt = Adam(arch.n_params, lr=lr, weight_decay=weight_decay)
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    bs = min(batch_size, n)
    loss_fn = arch.mse_loss if task == "regression" else arch.ce_loss
    targets = np.asarray(targets)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            _, g = loss_fn(theta, X[idx], targets[idx])
            theta = opt.step(theta, g)
    return theta
