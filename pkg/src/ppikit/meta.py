"""Prediction-powered training of neural classifiers with SGD.

* Batch losses that phase the rectifier in with a ramp ``kappa_t``.
* Meta pseudo-labeling (one teacher, one student).
* Meta-CPPI: ``K`` cross-fitted teachers whose update includes the
  one-step meta-gradient of the student's labeled loss.

All losses are cross-entropies of a student :class:`MlpArch` against hard
labels or probability rows. Teacher feedback uses the score-function
identity ``grad_phi E_{y~p_phi}[g(y)] = -E[g(y) grad_phi CE(p_phi, y)]``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._seeding import derive_seed
from .datasets import FoldAssignment, LabeledDataset, UnlabeledDataset
from .labelers.mlp import MlpArch

KAPPA_KINDS = ("linear", "quadratic")


def kappa(t, T, kind: str = "linear") -> float:
    """Ramp ``t/T`` (linear) or ``(t/T)^2`` (quadratic), clamped to [0, 1]."""
    if T < 1:
        raise ValueError("T must be at least 1")
    u = min(max(float(t) / float(T), 0.0), 1.0)
    kind = kind.lower()
    if kind == "linear":
        return u
    if kind == "quadratic":
        return u * u
    raise ValueError(f"unknown kappa kind {kind!r}")


def sample_labels(probs, rng) -> np.ndarray:
    """One categorical draw per row of ``probs``."""
    probs = np.asarray(probs, dtype=float)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])[:, None] * cdf[:, -1:]
    return np.minimum((cdf <= u).sum(axis=1), probs.shape[1] - 1)


def _targets_of(f, X):
    """Targets from a labeler-like callable or a precomputed array."""
    return f(X) if callable(f) else f


# ---------------------------------------------------------------------------
# batch losses
# ---------------------------------------------------------------------------


def ppi_batch_loss(arch: MlpArch, theta, labeled_batch, unlabeled_batch, f, kappa_t: float,
                   f_labeled=None):
    """``E_u[CE(S(X~), f(X~))] - kappa_t E_l[CE(S(X), f(X)) - CE(S(X), Y)]``.

    ``f`` is a callable returning labels (or probability rows) or, with
    ``f_labeled``, the precomputed targets for the unlabeled batch.

    Returns
    -------
    value : float
    grad : ndarray
    """
    X, Y = labeled_batch
    Xu = unlabeled_batch
    tu = _targets_of(f, Xu)
    tl = _targets_of(f, X) if f_labeled is None else f_labeled
    v_u, g_u = arch.ce_loss(theta, Xu, tu)
    value, grad = v_u, g_u
    if kappa_t != 0.0:
        v_f, g_f = arch.ce_loss(theta, X, tl)
        v_y, g_y = arch.ce_loss(theta, X, Y)
        value = value - kappa_t * (v_f - v_y)
        grad = grad - kappa_t * (g_f - g_y)
    return value, grad


def tuned_cppi_batch_loss(arch: MlpArch, theta, lam: float, kappa_t: float, unlabeled_batch,
                          fold_batches, fold_targets):
    """``lam sum_k E_u[CE(S(X~), f^k(X~))] - kappa_t sum_k E_{D^k}[lam CE(S(X), f^k(X)) - CE(S(X), Y)]``.

    Parameters
    ----------
    fold_batches : list of (X_k, Y_k)
        One labeled minibatch from each fold.
    fold_targets : list of (targets_on_unlabeled, targets_on_fold_batch)
        Teacher ``k`` outputs (class indices or probability rows).
    """
    if len(fold_batches) != len(fold_targets):
        raise ValueError("need one target pair per fold batch")
    value = 0.0
    grad = np.zeros(arch.n_params)
    for (Xk, Yk), (tu, tl) in zip(fold_batches, fold_targets):
        if lam != 0.0:
            v, g = arch.ce_loss(theta, unlabeled_batch, tu)
            value += lam * v
            grad += lam * g
            if kappa_t != 0.0 and len(Xk):
                v, g = arch.ce_loss(theta, Xk, tl)
                value -= kappa_t * lam * v
                grad -= kappa_t * lam * g
        if kappa_t != 0.0 and len(Xk):
            v, g = arch.ce_loss(theta, Xk, Yk)
            value += kappa_t * v
            grad += kappa_t * g
    return value, grad


# ---------------------------------------------------------------------------
# state and configuration
# ---------------------------------------------------------------------------


@dataclass
class MetaConfig:
    """Training configuration shared by MPL, MCPPI and the tuned-CPPI batch baseline.

    ``lam="auto"`` re-estimates lambda every ``lambda_every`` steps from the
    out-of-fold teacher probabilities. ``meta=False`` freezes the teachers
    after pre-training, which gives plain tuned-CPPI minibatch training.
    """

    T: int = 600
    kappa_kind: str = "linear"
    lam: float | str = "auto"
    batch_labeled: int = 32
    batch_unlabeled: int = 256
    eta_S: float = 0.05
    eta_T: float = 0.05
    hidden: tuple = (32,)
    activation: str = "relu"
    teacher_epochs: int = 100
    teacher_lr: float = 0.05
    teacher_batch: int = 32
    lambda_every: int = 50
    meta: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.T < 0:
            raise ValueError("T must be nonnegative")
        if self.eta_S <= 0 or self.eta_T <= 0 or self.teacher_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.kappa_kind.lower() not in KAPPA_KINDS:
            raise ValueError(f"kappa_kind must be one of {KAPPA_KINDS}")
        if self.lam != "auto" and not 0.0 <= float(self.lam) <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.batch_labeled < 1 or self.batch_unlabeled < 1 or self.lambda_every < 1:
            raise ValueError("batch sizes and lambda_every must be positive")


@dataclass
class StudentTeacherState:
    student: MlpArch
    theta: np.ndarray
    teacher: MlpArch
    phis: list
    t: int = 0
    folds: FoldAssignment | None = None
    history: list = field(default_factory=list)

    def copy(self) -> "StudentTeacherState":
        return replace(self, theta=self.theta.copy(), phis=[p.copy() for p in self.phis],
                       history=list(self.history))


# ---------------------------------------------------------------------------
# meta pseudo-labeling
# ---------------------------------------------------------------------------


@dataclass
class MplDiagnostics:
    pseudo_labels: np.ndarray
    g_u: np.ndarray
    g_l: np.ndarray
    feedback: float
    theta_prime: np.ndarray


def mpl_step(state: StudentTeacherState, labeled_batch, unlabeled_batch, config: MetaConfig,
             rng, return_diagnostics: bool = False):
    """One MPL iteration: sample pseudo-labels, step the student, then step the
    teacher on its supervised loss plus the student's feedback."""
    X, Y = labeled_batch
    Xu = unlabeled_batch
    phi = state.phis[0]
    probs = state.teacher.predict_proba(phi, Xu)
    y_u = sample_labels(probs, rng)
    _, g_u = state.student.ce_loss(state.theta, Xu, y_u)
    theta_new = state.theta - config.eta_S * g_u
    _, g_l = state.student.ce_loss(theta_new, X, Y)
    h = float(g_l @ g_u)
    _, sup = state.teacher.ce_loss(phi, X, Y)
    _, score = state.teacher.ce_loss(phi, Xu, y_u)
    phi_new = phi - config.eta_T * (sup + config.eta_S * h * score)
    new = replace(state, theta=theta_new, phis=[phi_new] + state.phis[1:], t=state.t + 1)
    if return_diagnostics:
        return new, MplDiagnostics(y_u, g_u, g_l, h, theta_new)
    return new


# ---------------------------------------------------------------------------
# meta-CPPI
# ---------------------------------------------------------------------------


@dataclass
class McppiBatches:
    """One iteration's data: unlabeled batch, per-fold labeled batches, and
    the teachers' sampled labels on each."""

    unlabeled: np.ndarray
    fold_batches: list
    y_u: list
    y_l: list

    @property
    def labeled(self):
        X = np.concatenate([b[0] for b in self.fold_batches])
        Y = np.concatenate([b[1] for b in self.fold_batches])
        return X, Y

    def supervised_for(self, k: int):
        """Labeled rows teacher ``k`` may train on (every fold except its own)."""
        parts = [b for j, b in enumerate(self.fold_batches) if j != k]
        return (np.concatenate([b[0] for b in parts]), np.concatenate([b[1] for b in parts]))


def sample_teacher_labels(state: StudentTeacherState, unlabeled, fold_batches, rng):
    y_u, y_l = [], []
    for k, phi in enumerate(state.phis):
        y_u.append(sample_labels(state.teacher.predict_proba(phi, unlabeled), rng))
        Xk = fold_batches[k][0]
        y_l.append(sample_labels(state.teacher.predict_proba(phi, Xk), rng) if len(Xk)
                   else np.zeros(0, dtype=np.int64))
    return McppiBatches(unlabeled, fold_batches, y_u, y_l)


def mcppi_student_step(state: StudentTeacherState, batches: McppiBatches, lam: float,
                       kappa_t: float, eta_S: float):
    """Student update ``theta - eta_S grad L`` on the tuned-CPPI batch loss
    with the teachers' sampled labels; returns ``(theta_new, value)``."""
    value, grad = tuned_cppi_batch_loss(state.student, state.theta, lam, kappa_t,
                                        batches.unlabeled, batches.fold_batches,
                                        list(zip(batches.y_u, batches.y_l)))
    return state.theta - eta_S * grad, value


def mcppi_teacher_grad(state: StudentTeacherState, k: int, batches: McppiBatches,
                       theta_prime, lam: float, eta_S: float, kappa_t: float = 1.0,
                       include_supervised: bool = True):
    """Gradient for teacher ``k``.

    ``lam eta_S (g_l' g_u) grad CE(f^k(X~), y_u) - kappa_t lam eta_S (g_l' g_lk) grad CE(f^k(X_k), y_lk)``
    plus the teacher's supervised cross-entropy gradient on the folds it
    trains on. ``g_l`` is the labeled-batch gradient at the post-step
    student ``theta_prime``; ``g_u`` and ``g_lk`` are taken at the pre-step
    student ``state.theta``. With ``kappa_t = 1`` the second term is the
    plain held-out correction.
    """
    phi = state.phis[k]
    grad = np.zeros(state.teacher.n_params)
    if include_supervised:
        Xs, Ys = batches.supervised_for(k)
        if len(Xs):
            grad += state.teacher.ce_loss(phi, Xs, Ys)[1]
    if lam == 0.0:
        return grad
    X, Y = batches.labeled
    _, g_l = state.student.ce_loss(theta_prime, X, Y)
    _, g_u = state.student.ce_loss(state.theta, batches.unlabeled, batches.y_u[k])
    _, score_u = state.teacher.ce_loss(phi, batches.unlabeled, batches.y_u[k])
    grad += lam * eta_S * float(g_l @ g_u) * score_u
    Xk = batches.fold_batches[k][0]
    if kappa_t != 0.0 and len(Xk):
        _, g_lk = state.student.ce_loss(state.theta, Xk, batches.y_l[k])
        _, score_l = state.teacher.ce_loss(phi, Xk, batches.y_l[k])
        grad -= kappa_t * lam * eta_S * float(g_l @ g_lk) * score_l
    return grad


def lambda_one_hot(labels, probs, r: float) -> float:
    """Mean-estimation plug-in on one-hot labels against predicted class probabilities.

    ``sum_j cov(1{Y=j}, p_j) / ((1 + r) sum_j var(p_j))``, clipped to [0, 1];
    0 when the predictions do not vary.
    """
    P = np.asarray(probs, dtype=float)
    n, J = P.shape
    Yh = np.zeros((n, J))
    Yh[np.arange(n), np.asarray(labels, dtype=np.int64)] = 1.0
    Pc = P - P.mean(axis=0)
    var = float(np.sum(Pc ** 2)) / n
    if var <= 1e-12:
        return 0.0
    cov = float(np.sum((Yh - Yh.mean(axis=0)) * Pc)) / n
    return min(max(cov / ((1.0 + r) * var), 0.0), 1.0)


def lambda_from_teachers(state: StudentTeacherState, labeled: LabeledDataset, r: float) -> float:
    """:func:`lambda_one_hot` with each labeled row scored by the teacher that
    did not train on its fold."""
    P = np.zeros((len(labeled), state.teacher.sizes[-1]))
    for k, phi in enumerate(state.phis):
        idx = state.folds.members[k]
        if idx.size:
            P[idx] = state.teacher.predict_proba(phi, labeled.inputs[idx])
    return lambda_one_hot(labeled.labels, P, r)


def batch_train(labeled: LabeledDataset, unlabeled: UnlabeledDataset, folds: FoldAssignment,
                unlabeled_targets, held_out_targets, lam: float, config: MetaConfig):
    """SGD on :func:`tuned_cppi_batch_loss` with fixed (pre-computed) labeler outputs.

    ``unlabeled_targets[k]`` holds labeler ``k``'s output on every unlabeled
    row and ``held_out_targets[i]`` the output on labeled row ``i`` of the
    labeler that did not see it. A single fold gives the PPI batch loss and
    ``lam = 0`` plain supervised training (the ramp is then skipped, since
    there is no pseudo-label term to phase in).

    Returns
    -------
    arch : MlpArch
    theta : ndarray
    """
    if labeled.n_classes is None:
        raise ValueError("batch training needs class labels")
    sizes = (labeled.dim,) + tuple(config.hidden) + (labeled.n_classes,)
    arch = MlpArch(sizes, config.activation)
    theta = arch.init(derive_seed(config.seed, "student-init"))
    rng = np.random.default_rng(derive_seed(config.seed, "batch-train"))
    per_fold = max(1, config.batch_labeled // folds.K)
    held = np.asarray(held_out_targets)
    for step in range(config.T):
        kt = kappa(step + 1, config.T, config.kappa_kind) if lam != 0.0 else 1.0
        ui = rng.choice(len(unlabeled), size=min(config.batch_unlabeled, len(unlabeled)),
                        replace=False)
        fb, ft = [], []
        for k in range(folds.K):
            members = folds.members[k]
            idx = rng.choice(members, size=min(per_fold, members.size), replace=False)
            fb.append((labeled.inputs[idx], labeled.labels[idx]))
            ft.append((np.asarray(unlabeled_targets[k])[ui], held[idx]))
        _, grad = tuned_cppi_batch_loss(arch, theta, lam, kt, unlabeled.inputs[ui], fb, ft)
        theta = theta - config.eta_S * grad
    return arch, theta


def _pretrain_teacher(arch: MlpArch, X, Y, config: MetaConfig, seed):
    rng = np.random.default_rng(seed)
    phi = arch.init(rng.integers(2 ** 63))
    n = X.shape[0]
    bs = min(config.teacher_batch, n)
    for _ in range(config.teacher_epochs):
        perm = rng.permutation(n)
        for s in range(0, n, bs):
            idx = perm[s:s + bs]
            phi = phi - config.teacher_lr * arch.ce_loss(phi, X[idx], Y[idx])[1]
    return phi


def init_state(labeled: LabeledDataset, folds: FoldAssignment, config: MetaConfig,
               n_teachers: int | None = None) -> StudentTeacherState:
    """Student at random init; teacher ``k`` pre-trained by SGD on the folds
    other than ``k`` (or on all labeled data when there is a single teacher)."""
    if labeled.n_classes is None:
        raise ValueError("meta training needs class labels")
    J = labeled.n_classes
    sizes = (labeled.dim,) + tuple(config.hidden) + (J,)
    student = MlpArch(sizes, config.activation)
    teacher = MlpArch(sizes, config.activation)
    theta = student.init(derive_seed(config.seed, "student-init"))
    K = folds.K if n_teachers is None else n_teachers
    phis = []
    for k in range(K):
        idx = folds.complement(k) if K > 1 else np.arange(len(labeled))
        phis.append(_pretrain_teacher(teacher, labeled.inputs[idx], labeled.labels[idx], config,
                                      derive_seed(config.seed, "teacher", k)))
    return StudentTeacherState(student, theta, teacher, phis, 0, folds)


def _fold_batches(labeled, folds, per_fold, rng):
    out = []
    for k in range(folds.K):
        members = folds.members[k]
        idx = rng.choice(members, size=min(per_fold, members.size), replace=False)
        out.append((labeled.inputs[idx], labeled.labels[idx]))
    return out


def mcppi_train(labeled: LabeledDataset, unlabeled: UnlabeledDataset, folds: FoldAssignment,
                config: MetaConfig, state: StudentTeacherState | None = None,
                checkpoint_path=None, curve_path=None) -> StudentTeacherState:
    """Joint student/teacher training for ``config.T`` steps.

    Each step draws an unlabeled batch and one labeled batch per fold,
    samples every teacher's labels, takes the student step, and then (if
    ``config.meta``) one step per teacher. Returns the final state; the
    trained student is ``state.theta``.
    """
    if state is None:
        state = init_state(labeled, folds, config)
    rng = np.random.default_rng(derive_seed(config.seed, "mcppi-batches"))
    r = len(labeled) / len(unlabeled)
    per_fold = max(1, config.batch_labeled // folds.K)
    lam = None if config.lam == "auto" else float(config.lam)
    curve = []
    for step in range(config.T):
        if config.lam == "auto" and step % config.lambda_every == 0:
            lam = lambda_from_teachers(state, labeled, r)
        kt = kappa(step + 1, config.T, config.kappa_kind)
        ub = unlabeled.inputs[rng.choice(len(unlabeled), size=min(config.batch_unlabeled,
                                                                  len(unlabeled)),
                                         replace=False)]
        batches = sample_teacher_labels(state, ub, _fold_batches(labeled, folds, per_fold, rng),
                                        rng)
        theta_new, s_loss = mcppi_student_step(state, batches, lam, kt, config.eta_S)
        t_losses = []
        new_phis = list(state.phis)
        if config.meta:
            for k in range(len(state.phis)):
                g = mcppi_teacher_grad(state, k, batches, theta_new, lam, config.eta_S, kt)
                new_phis[k] = state.phis[k] - config.eta_T * g
        for k, phi in enumerate(new_phis):
            Xs, Ys = batches.supervised_for(k)
            t_losses.append(state.teacher.ce_loss(phi, Xs, Ys)[0] if len(Xs) else float("nan"))
        state = replace(state, theta=theta_new, phis=new_phis, t=state.t + 1)
        curve.append((step + 1, s_loss, *t_losses, lam))
    state.history = state.history + curve
    if checkpoint_path is not None:
        save_checkpoint(state, checkpoint_path)
    if curve_path is not None:
        write_loss_curve(curve, len(state.phis), curve_path)
    return state


def mpl_train(labeled: LabeledDataset, unlabeled: UnlabeledDataset, config: MetaConfig):
    """MPL baseline: one teacher pre-trained on all labeled data."""
    folds = FoldAssignment(1, np.zeros(len(labeled), dtype=np.int64),
                           (np.arange(len(labeled)),))
    state = init_state(labeled, folds, config, n_teachers=1)
    rng = np.random.default_rng(derive_seed(config.seed, "mpl-batches"))
    for _ in range(config.T):
        li = rng.choice(len(labeled), size=min(config.batch_labeled, len(labeled)), replace=False)
        ui = rng.choice(len(unlabeled), size=min(config.batch_unlabeled, len(unlabeled)),
                        replace=False)
        state = mpl_step(state, (labeled.inputs[li], labeled.labels[li]), unlabeled.inputs[ui],
                         config, rng)
    return state


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def save_checkpoint(state: StudentTeacherState, path) -> None:
    """JSON object ``{name: {"shape": [...], "data": [...]}}`` of all parameters."""
    tensors = {}
    for name, arr in state.student.named_params(state.theta).items():
        tensors[f"student.{name}"] = arr
    for k, phi in enumerate(state.phis):
        for name, arr in state.teacher.named_params(phi).items():
            tensors[f"teacher{k}.{name}"] = arr
    payload = {
        "format": "ppikit-checkpoint-v1",
        "step": state.t,
        "student_sizes": list(state.student.sizes),
        "teacher_sizes": list(state.teacher.sizes),
        "activation": state.student.activation,
        "tensors": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                    for k, v in tensors.items()},
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path):
    """Return ``(student_arch, theta, teacher_arch, phis, step)``."""
    payload = json.loads(Path(path).read_text())
    tensors = {k: np.array(v["data"], dtype=float).reshape(v["shape"])
               for k, v in payload["tensors"].items()}
    student = MlpArch(payload["student_sizes"], payload["activation"])
    teacher = MlpArch(payload["teacher_sizes"], payload["activation"])
    theta = student.from_named({k[len("student."):]: v for k, v in tensors.items()
                                if k.startswith("student.")})
    phis = []
    k = 0
    while f"teacher{k}.layer0.weight" in tensors:
        prefix = f"teacher{k}."
        phis.append(teacher.from_named({n[len(prefix):]: v for n, v in tensors.items()
                                        if n.startswith(prefix)}))
        k += 1
    return student, theta, teacher, phis, payload["step"]


def write_loss_curve(curve, n_teachers: int, path) -> None:
    header = ["step", "student_loss"] + [f"teacher_{k + 1}_loss" for k in range(n_teachers)] \
        + ["lambda"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in curve:
            w.writerow([row[0]] + ["%.12g" % v for v in row[1:]])
