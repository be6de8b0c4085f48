"""Built-in invariant checks (``ppikit validate``) and lambda diagnostics."""

from __future__ import annotations

import numpy as np

from .._seeding import derive_seed
from ..datasets import LabeledDataset, SynthParams, UnlabeledDataset, gen_synthetic, make_folds
from ..labelers import LabelerSpec
from ..labelers.mlp import MlpArch
from ..losses import LinearRegression, MeanEstimation, RidgeSoftmax, ElmRidge, make_elm_map
from ..meta import (
    McppiBatches,
    StudentTeacherState,
    kappa,
    mcppi_student_step,
    mcppi_teacher_grad,
    ppi_batch_loss,
    tuned_cppi_batch_loss,
)
from ..tuning import lambda_hat
from ..wireless import (
    ArrayGeometry,
    PathSet,
    channel_from_paths,
    make_upa_codebook,
    optimal_beam,
    trivial_codebook,
    ula_response,
    upa_steering,
)
from .config import ExperimentConfig
from .results import ResultRow


def central_difference(f, x, h=1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def _check_folds():
    for n, K in ((4, 2), (5, 2), (37, 5), (300, 5)):
        f = make_folds(n, K, n)
        allidx = np.sort(np.concatenate(f.members))
        sizes = [m.size for m in f.members]
        if not (np.array_equal(allidx, np.arange(n)) and max(sizes) - min(sizes) <= 1):
            return False
    return True


def _check_loss_gradients():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((20, 3))
    y = rng.standard_normal(20)
    cases = [(MeanEstimation(), y), (LinearRegression(3), y),
             (RidgeSoftmax(3, 3, 0.1), rng.integers(0, 3, 20)),
             (ElmRidge(make_elm_map(3, 5, 0), 0.1, 2), rng.standard_normal((20, 2)))]
    for model, labels in cases:
        Z, T = model.transform(X), model.targets(labels)
        theta = rng.standard_normal(model.dim_theta) * 0.3
        g = model.grads(theta, Z, T).sum(axis=0)
        fd = central_difference(lambda t: model.values(t, Z, T).sum(), theta)
        if rel_err(g, fd) > 1e-5:
            return False
        H = model.hessian_sum(theta, Z, T)
        fdH = np.array([central_difference(lambda t: model.grads(t, Z, T).sum(axis=0)[i], theta)
                        for i in range(theta.size)])
        if rel_err(H, fdH) > 1e-4:
            return False
    return True


def _check_mlp_backprop():
    rng = np.random.default_rng(1)
    arch = MlpArch((2, 3, 2), "tanh")
    theta = arch.init(0)
    X = rng.standard_normal((5, 2))
    y = rng.integers(0, 2, 5)
    _, g = arch.ce_loss(theta, X, y)
    return rel_err(g, central_difference(lambda t: arch.ce_loss(t, X, y)[0], theta)) < 1e-5


def _check_batch_losses():
    rng = np.random.default_rng(4)
    arch = MlpArch((2, 4, 3), "tanh")
    theta = arch.init(0)
    X, Y = rng.standard_normal((5, 2)), rng.integers(0, 3, 5)
    Xu = rng.standard_normal((6, 2))
    tu, tl = rng.dirichlet(np.ones(3), 6), rng.integers(0, 3, 5)
    g = ppi_batch_loss(arch, theta, (X, Y), Xu, tu, 0.6, tl)[1]
    fd = central_difference(lambda t: ppi_batch_loss(arch, t, (X, Y), Xu, tu, 0.6, tl)[0], theta)
    if rel_err(g, fd) > 1e-6:
        return False
    fb = [(rng.standard_normal((3, 2)), rng.integers(0, 3, 3)) for _ in range(2)]
    ft = [(rng.integers(0, 3, 6), rng.dirichlet(np.ones(3), 3)) for _ in range(2)]
    g = tuned_cppi_batch_loss(arch, theta, 0.7, 0.4, Xu, fb, ft)[1]
    fd = central_difference(lambda t: tuned_cppi_batch_loss(arch, t, 0.7, 0.4, Xu, fb, ft)[0],
                            theta)
    return rel_err(g, fd) <= 1e-6


def _expected_meta(state, k, fold_batches, Xu, y_u, y_l, lam, kt, eta):
    """Exact expectation over teacher ``k``'s single-row sampled labels of the
    post-step labeled loss and of the teacher-gradient estimator."""
    J = state.teacher.sizes[-1]
    pu = state.teacher.predict_proba(state.phis[k], Xu)[0]
    pl = state.teacher.predict_proba(state.phis[k], fold_batches[k][0])[0]
    X = np.concatenate([b[0] for b in fold_batches])
    Y = np.concatenate([b[1] for b in fold_batches])
    meta, est = 0.0, 0.0
    for a in range(J):
        for b in range(J):
            yu, yl = list(y_u), list(y_l)
            yu[k], yl[k] = np.array([a]), np.array([b])
            batches = McppiBatches(Xu, fold_batches, yu, yl)
            theta_new, _ = mcppi_student_step(state, batches, lam, kt, eta)
            w = pu[a] * pl[b]
            meta += w * state.student.ce_loss(theta_new, X, Y)[0]
            est = est + w * mcppi_teacher_grad(state, k, batches, theta_new, lam, eta, kt,
                                               include_supervised=False)
    return meta, est


def _check_meta_gradient():
    rng = np.random.default_rng(5)
    student, teacher = MlpArch((2, 4, 3), "tanh"), MlpArch((2, 3, 3), "tanh")
    phis = [teacher.init(10 + k) + 0.3 * rng.standard_normal(teacher.n_params) for k in range(2)]
    state = StudentTeacherState(student, student.init(0), teacher, phis)
    fold_batches = [(rng.standard_normal((1, 2)), rng.integers(0, 3, 1)) for _ in range(2)]
    Xu = rng.standard_normal((1, 2))
    y_u = [rng.integers(0, 3, 1) for _ in range(2)]
    y_l = [rng.integers(0, 3, 1) for _ in range(2)]
    eta, lam, kt = 1e-3, 0.8, 0.6
    for k in range(2):
        def meta(phi):
            s = state.copy()
            s.phis[k] = phi
            return _expected_meta(s, k, fold_batches, Xu, y_u, y_l, lam, kt, eta)[0]

        est = _expected_meta(state, k, fold_batches, Xu, y_u, y_l, lam, kt, eta)[1]
        # the one-step estimator is exact to first order in eta_S
        if rel_err(est, central_difference(meta, state.phis[k], h=1e-5)) > 2e-2:
            return False
    return True


def _check_arrays():
    grid = np.linspace(0, np.pi, 7)
    for th in grid:
        for ph in np.linspace(-np.pi, np.pi, 7):
            a = upa_steering(4, 2, th, ph)
            if abs(np.linalg.norm(a) - 1) > 1e-12:
                return False
            k = np.kron(ula_response(4, np.sin(th) * np.sin(ph)), ula_response(2, np.cos(th)))
            if np.abs(a - k).max() > 1e-12:
                return False
    cb = make_upa_codebook(4, 2)
    return len(cb) == 32 and np.allclose(np.linalg.norm(cb.beams, axis=1), 1.0, atol=1e-10)


def _check_argmax_scale():
    rng = np.random.default_rng(2)
    geom = ArrayGeometry(4, 4)
    tx, rx = make_upa_codebook(4, 4), trivial_codebook(1)
    for _ in range(20):
        z = PathSet(rng.standard_normal(3) + 1j * rng.standard_normal(3),
                    np.column_stack([rng.uniform(0, np.pi, 3), rng.uniform(-np.pi, np.pi, 3)]),
                    np.column_stack([rng.uniform(0, np.pi, 3), rng.uniform(-np.pi, np.pi, 3)]))
        H = channel_from_paths(z, geom)
        if optimal_beam(H, tx, rx) != optimal_beam(7.3 * H, tx, rx):
            return False
    return True


def _check_endpoints():
    from .experiments import synth_trial

    base = ExperimentConfig.build("synth-mean", {"trials": 1, "N": 500, "n": 30,
                                                 "labeler.n_trees": 5})
    t0 = synth_trial(base.with_values({"lambda": 0.0}), 1)
    t1 = synth_trial(base.with_values({"lambda": 1.0}), 1)
    return (t0["TunedCPPI"]["mse"] == t0["ERM"]["mse"]
            and t1["TunedCPPI"]["mse"] == t1["CPPI"]["mse"]
            and t1["TunedPPI"]["mse"] == t1["PPI"]["mse"])


def _check_kappa():
    v = [kappa(t, 10, k) for k in ("linear", "quadratic") for t in range(11)]
    return kappa(0, 10) == 0 and kappa(10, 10, "quadratic") == 1 and \
        all(a <= b for a, b in zip(v[:11], v[1:11])) and all(a <= b for a, b in zip(v[11:], v[12:]))


def _check_stderr():
    vals = np.random.default_rng(3).standard_normal(17)
    row = ResultRow.from_values("x", "s", 1, "m", vals)
    return abs(row.stderr - vals.std(ddof=1) / np.sqrt(17)) <= 1e-12


def _check_lambda_degenerate():
    return lambda_hat(np.eye(2), np.zeros((2, 2)), np.zeros((2, 2)), 10, 100).value == 0.0


CHECKS = {
    "fold partition": _check_folds,
    "loss gradients and Hessians": _check_loss_gradients,
    "mlp backprop": _check_mlp_backprop,
    "batch loss gradients": _check_batch_losses,
    "meta-gradient": _check_meta_gradient,
    "steering norm and Kronecker structure": _check_arrays,
    "optimal beam scale invariance": _check_argmax_scale,
    "lambda endpoint identities": _check_endpoints,
    "kappa schedule": _check_kappa,
    "standard error": _check_stderr,
    "degenerate lambda": _check_lambda_degenerate,
}


def run_checks(verbose: bool = True) -> bool:
    ok = True
    for name, check in CHECKS.items():
        try:
            passed = bool(check())
        except Exception as exc:  # noqa: BLE001
            passed = False
            name = f"{name} ({exc!r})"
        ok &= passed
        if verbose:
            print(f"{'PASS' if passed else 'FAIL'} {name}")
    return ok


def lambda_probe(cfg: ExperimentConfig) -> str:
    """Lambda diagnostics of the TunedCPPI fit in trial 0 at the first sweep value."""
    from .experiments import (SchemeFitter, _labeler_spec, localize_problem, sweep_config,
                              synth_problem, trial_seed)

    value = cfg["sweep.values"][0]
    sub = sweep_config(cfg, value)
    seed = trial_seed(cfg, value, 0)
    if cfg.experiment.startswith("synth"):
        model, lab, unl, _ = synth_problem(sub, seed)
    elif cfg.experiment == "localize":
        model, lab, unl, _ = localize_problem(sub, seed)
    else:
        raise ValueError("lambda-probe supports the synthetic and localization experiments")
    fitter = SchemeFitter(model, lab, unl, _labeler_spec(sub, seed), sub.with_values(
        {"lambda": None}), seed)
    fitter.fit("TunedCPPI")
    est = fitter.estimate
    Hinv = np.linalg.pinv(est.hessian_hat)
    lines = [
        f"experiment       {cfg.experiment}",
        f"sweep            {cfg['sweep.name']}={value}",
        f"n/N              {est.r:.6g}",
        f"lambda_hat       {est.lambda_hat:.6g}",
        f"lambda_raw       {est.raw:.6g}",
        f"clipped          {est.clipped}",
        f"degenerate       {est.degenerate}",
        f"tr(H^-1 V H^-1)  {np.trace(Hinv @ est.var_fbar_hat @ Hinv):.6g}",
        f"tr(H^-1 C H^-1)  {np.trace(Hinv @ est.crosscov_hat @ Hinv):.6g}",
    ]
    return "\n".join(lines)
