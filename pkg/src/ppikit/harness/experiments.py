"""Trial runners for every experiment kind and the sweep/trial orchestrator.

A trial is a pure function of ``(config, seed)`` returning
``{scheme: {metric: value}}``. The orchestrator derives one seed per
(master seed, experiment, sweep value, trial index), so adding trials never
changes earlier ones, and aggregates per-trial values into a
:class:`ResultsTable`.
"""

from __future__ import annotations

import math
import traceback
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .._seeding import derive_seed
from ..datasets import (
    FoldAssignment,
    LabeledDataset,
    SynthParams,
    UnlabeledDataset,
    gen_synthetic,
    gen_synthetic_rssi,
    make_folds,
    rssi_features,
)
from ..estimators import (
    cppi_objective,
    cross_fit_predictions,
    erm_objective,
    ppi_objective,
    ppi_predictions,
    solve,
    split_for_ppi,
    ss_objective,
    tuned_cppi_objective,
    tuned_ppi_objective,
)
from ..labelers import LabelerSpec, fit, train_fold_models
from ..losses import ElmHiddenMap, ElmRidge, LinearRegression, MeanEstimation, RidgeSoftmax
from ..losses import fit_rbf_nystrom, make_elm_map, median_pairwise_distance
from ..meta import MetaConfig, batch_train, lambda_one_hot, mcppi_train, mpl_train
from ..tuning import tuned_cppi_fit, tuned_ppi_fit
from ..wireless import ArrayGeometry, beam_dataset, capacities, default_codebooks, gen_environment
from .config import ExperimentConfig, _coerce, defaults_for
from .results import ResultRow, ResultsTable, fmt


def trial_seed(cfg: ExperimentConfig, sweep_value, t: int) -> int:
    return derive_seed(cfg["seed"], cfg.experiment, fmt(float(sweep_value)), t)


# ---------------------------------------------------------------------------
# convex schemes shared by the synthetic, beam and localization experiments
# ---------------------------------------------------------------------------


class SchemeFitter:
    """Fits the ERM / SS / PPI / CPPI family on one dataset, sharing trained
    labelers between schemes (CPPI and TunedCPPI use the same fold models,
    PPI and TunedPPI the same split)."""

    def __init__(self, model, labeled: LabeledDataset, unlabeled: UnlabeledDataset,
                 spec: LabelerSpec, cfg: ExperimentConfig, seed):
        self.model, self.labeled, self.unlabeled = model, labeled, unlabeled
        self.spec, self.cfg, self.seed = spec, cfg, seed
        self._cache = {}
        self.lambdas = {}

    def _once(self, key, make):
        if key not in self._cache:
            self._cache[key] = make()
        return self._cache[key]

    def full_labeler(self):
        return self._once("full", lambda: fit(self.spec.with_seed(derive_seed(self.seed, "full")),
                                              self.labeled))

    def _cross_fit(self):
        def make():
            folds = make_folds(len(self.labeled), self.cfg["K"], derive_seed(self.seed, "folds"))
            models = train_fold_models(self.labeled, folds,
                                       self.spec.with_seed(derive_seed(self.seed, "fold-models")))
            return folds, models, cross_fit_predictions(self.labeled, folds, models,
                                                        self.unlabeled)
        return self._once("cross", make)

    def _split(self):
        def make():
            split = split_for_ppi(len(self.labeled), self.cfg["split_fraction"],
                                  derive_seed(self.seed, "ppi-split"))
            f = fit(self.spec.with_seed(derive_seed(self.seed, "ppi")),
                    self.labeled.subset(split[0]))
            rect = self.labeled.subset(split[1])
            return split, f, rect, ppi_predictions(f, rect, self.unlabeled)
        return self._once("split", make)

    def fit(self, scheme: str) -> np.ndarray:
        m, lab, unl, cfg = self.model, self.labeled, self.unlabeled, self.cfg
        override = cfg["lambda"]
        if scheme == "ERM":
            return solve(erm_objective(m, lab))
        if scheme == "SS":
            f = self.full_labeler()
            return solve(ss_objective(m, lab, unl, f, cfg["gamma"]))
        if scheme == "PPI":
            _, f, rect, pred = self._split()
            return solve(ppi_objective(m, rect, unl, f, pred))
        if scheme == "TunedPPI":
            split, f, rect, pred = self._split()
            if override is not None:
                self.lambdas[scheme] = float(override)
                return solve(tuned_ppi_objective(m, rect, unl, f, float(override), pred))
            theta, est = tuned_ppi_fit(m, lab, unl, split=split, f=f, predictions=pred,
                                       lambda_init=cfg["lambda_init"])
            self.lambdas[scheme] = est.lambda_hat
            return theta
        if scheme == "CPPI":
            folds, models, pred = self._cross_fit()
            return solve(cppi_objective(m, lab, folds, models, unl, pred))
        if scheme == "TunedCPPI":
            folds, models, pred = self._cross_fit()
            if override is not None:
                self.lambdas[scheme] = float(override)
                return solve(tuned_cppi_objective(m, lab, folds, models, unl, float(override),
                                                  pred))
            theta, est = tuned_cppi_fit(m, lab, unl, cfg["K"], self.spec, cfg["B"],
                                        cfg["lambda_init"], derive_seed(self.seed, "tuning"),
                                        folds=folds, fold_models=models, predictions=pred)
            self.lambdas[scheme] = est.lambda_hat
            self.estimate = est
            return theta
        raise ValueError(f"unknown scheme {scheme!r}")


def _labeler_spec(cfg: ExperimentConfig, seed, extra=None) -> LabelerSpec:
    kind, params = cfg.labeler_params()
    params.update(extra or {})
    return LabelerSpec(kind, params, derive_seed(seed, "labeler"))


def _record(out, fitter, scheme, metrics):
    out[scheme] = dict(metrics)
    if scheme in fitter.lambdas:
        out[scheme]["lambda"] = fitter.lambdas[scheme]


# ---------------------------------------------------------------------------
# synthetic mean estimation / linear regression
# ---------------------------------------------------------------------------


def synth_problem(cfg: ExperimentConfig, seed):
    """Data, loss model and true parameter for one synthetic trial."""
    R2 = float(cfg["R2"])
    if not 0.0 <= R2 <= 1.0:
        raise ValueError("R2 must lie in [0, 1]")
    p = SynthParams(cfg["synth.d"], cfg["synth.mu"], cfg["synth.sigma"], math.sqrt(R2),
                    derive_seed(seed, "data"))
    labeled, unlabeled = gen_synthetic(p, cfg["n"], cfg["N"])
    if cfg.experiment == "synth-mean":
        return MeanEstimation(), labeled, unlabeled, np.array([p.mu])
    return LinearRegression(2, (0, 1)), labeled, unlabeled, p.beta[:2]


def synth_trial(cfg: ExperimentConfig, seed) -> dict:
    model, labeled, unlabeled, theta_star = synth_problem(cfg, seed)
    fitter = SchemeFitter(model, labeled, unlabeled, _labeler_spec(cfg, seed), cfg, seed)
    out = {}
    for scheme in cfg["schemes"]:
        theta = fitter.fit(scheme)
        _record(out, fitter, scheme, {"mse": float(np.sum((theta - theta_star) ** 2))})
    return out


# ---------------------------------------------------------------------------
# beam alignment
# ---------------------------------------------------------------------------


class BeamProblem:
    """Environment, labeled/unlabeled/test positions and true channels."""

    def __init__(self, cfg: ExperimentConfig, seed):
        self.geom = ArrayGeometry(cfg["beam.n_y"], cfg["beam.n_z"], cfg["beam.spacing"])
        self.tx, self.rx = default_codebooks(self.geom)
        self.env = gen_environment(None, cfg["beam.scatterers"], cfg["beam.L_max"],
                                   derive_seed(seed, "environment"))
        count = cfg["beam.positions"]
        pos = self.env.sample_positions(count, derive_seed(seed, "positions"))
        data, H = beam_dataset(self.env, self.geom, self.tx, self.rx, pos)
        rng = np.random.default_rng(derive_seed(seed, "split"))
        perm = rng.permutation(count)
        n_test = int(round(cfg["beam.test_fraction"] * count))
        test, train = perm[:n_test], perm[n_test:]
        n = cfg["n"]
        if not 1 <= n < train.size:
            raise ValueError(f"need 1 <= n < {train.size} labeled positions, got {n}")
        self.labeled = data.subset(np.sort(train[:n]))
        self.unlabeled = UnlabeledDataset(data.inputs[np.sort(train[n:])])
        self.test = data.subset(np.sort(test))
        self.H_test = H[np.sort(test)]
        self.snr = cfg["beam.snr"]
        self.J = len(self.tx) * len(self.rx)

    def capacity(self, labels) -> float:
        return float(capacities(self.H_test, labels, self.tx, self.rx, self.snr).mean())

    def metrics(self, labels) -> dict:
        labels = np.asarray(labels)
        return {"capacity": self.capacity(labels),
                "accuracy": float(np.mean(labels == self.test.labels))}

    def ckm_spec(self, cfg, seed) -> LabelerSpec:
        return _labeler_spec(cfg, seed, {"geometry": self.geom, "tx": self.tx, "rx": self.rx})

    def standardizer(self):
        X = np.vstack([self.labeled.inputs, self.unlabeled.inputs])
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        return lambda A: (np.asarray(A, dtype=float) - mu) / sd


def beam_trial(cfg: ExperimentConfig, seed) -> dict:
    prob = BeamProblem(cfg, seed)
    pool = np.vstack([prob.labeled.inputs, prob.unlabeled.inputs])
    m = min(cfg["beam.landmarks"], pool.shape[0])
    # kernel width as a multiple of the median pairwise distance
    width = cfg["beam.bandwidth_scale"] * median_pairwise_distance(pool)
    fmap = fit_rbf_nystrom(pool, m, width, seed=derive_seed(seed, "landmarks"))
    model = RidgeSoftmax(prob.J, m, cfg["beam.ridge"], fmap)
    fitter = SchemeFitter(model, prob.labeled, prob.unlabeled, prob.ckm_spec(cfg, seed), cfg,
                          seed)
    Z_test = model.transform(prob.test.inputs)
    out = {}
    for scheme in cfg["schemes"]:
        if scheme == "PerfectCSI":
            out[scheme] = prob.metrics(prob.test.labels)
        elif scheme == "CKM":
            out[scheme] = prob.metrics(fitter.full_labeler().predict(prob.test.inputs))
        else:
            theta = fitter.fit(scheme)
            _record(out, fitter, scheme, prob.metrics(np.argmax(model.scores(theta, Z_test),
                                                                axis=1)))
    return out


def meta_config(cfg: ExperimentConfig, seed, **kw) -> MetaConfig:
    lam = cfg["meta.lambda"]
    return MetaConfig(T=cfg["meta.T"], kappa_kind=cfg["meta.kappa"],
                      lam=lam if lam == "auto" else float(lam),
                      batch_labeled=cfg["meta.batch_labeled"],
                      batch_unlabeled=cfg["meta.batch_unlabeled"], eta_S=cfg["meta.eta_S"],
                      eta_T=cfg["meta.eta_T"], hidden=tuple(cfg["meta.hidden"]),
                      teacher_epochs=cfg["meta.teacher_epochs"],
                      lambda_every=cfg["meta.lambda_every"], seed=seed, **kw)


def _scaled(prob: BeamProblem):
    scale = prob.standardizer()
    lab = LabeledDataset(scale(prob.labeled.inputs), prob.labeled.labels, prob.J)
    unl = UnlabeledDataset(scale(prob.unlabeled.inputs))
    return scale, lab, unl


def beam_nn_trial(cfg: ExperimentConfig, seed) -> dict:
    """Neural student trained by SGD on the minibatch losses with CKM labelers."""
    prob = BeamProblem(cfg, seed)
    scale, lab, unl = _scaled(prob)
    mcfg = meta_config(cfg, derive_seed(seed, "student"))
    spec = prob.ckm_spec(cfg, seed)
    X_test = scale(prob.test.inputs)
    r = len(lab) / len(unl)
    out = {}
    for scheme in cfg["schemes"]:
        if scheme == "ERM":
            folds = make_folds(len(lab), 2, derive_seed(seed, "folds"))
            zeros = [np.zeros(len(unl), dtype=np.int64)] * folds.K
            arch, theta = batch_train(lab, unl, folds, zeros, np.zeros(len(lab), dtype=np.int64),
                                      0.0, mcfg)
            lam = None
        elif scheme == "PPI":
            split = split_for_ppi(len(lab), cfg["split_fraction"],
                                  derive_seed(seed, "ppi-split"))
            f = fit(spec.with_seed(derive_seed(seed, "ppi")), prob.labeled.subset(split[0]))
            rect = lab.subset(split[1])
            one = FoldAssignment(1, np.zeros(len(rect), dtype=np.int64), (np.arange(len(rect)),))
            arch, theta = batch_train(rect, unl, one, [f.predict(prob.unlabeled.inputs)],
                                      f.predict(prob.labeled.inputs[split[1]]), 1.0, mcfg)
            lam = None
        elif scheme == "TunedCPPI":
            folds = make_folds(len(lab), cfg["K"], derive_seed(seed, "folds"))
            models = train_fold_models(prob.labeled, folds,
                                       spec.with_seed(derive_seed(seed, "fold-models")))
            pred = cross_fit_predictions(prob.labeled, folds, models, prob.unlabeled)
            if cfg["lambda"] is not None:
                lam = float(cfg["lambda"])
            else:
                P = np.zeros((len(lab), prob.J))
                P[np.arange(len(lab)), pred.held_out] = 1.0
                lam = lambda_one_hot(lab.labels, P, r)
            arch, theta = batch_train(lab, unl, folds, pred.unlabeled, pred.held_out, lam, mcfg)
        else:
            raise ValueError(f"unknown scheme {scheme!r} for beam-align-nn")
        labels = np.argmax(arch.forward(theta, X_test), axis=1)
        out[scheme] = prob.metrics(labels)
        if lam is not None:
            out[scheme]["lambda"] = lam
    return out


def mcppi_trial(cfg: ExperimentConfig, seed) -> dict:
    prob = BeamProblem(cfg, seed)
    scale, lab, unl = _scaled(prob)
    X_test = scale(prob.test.inputs)
    folds = make_folds(len(lab), cfg["K"], derive_seed(seed, "folds"))
    out = {}
    for scheme in cfg["schemes"]:
        mseed = derive_seed(seed, "meta")
        if scheme == "MPL":
            state = mpl_train(lab, unl, meta_config(cfg, mseed))
        elif scheme == "TunedCPPI-batch":
            state = mcppi_train(lab, unl, folds, meta_config(cfg, mseed, meta=False))
        elif scheme == "MCPPI":
            state = mcppi_train(lab, unl, folds, meta_config(cfg, mseed, meta=True))
        else:
            raise ValueError(f"unknown scheme {scheme!r} for mcppi-beam")
        labels = np.argmax(state.student.forward(state.theta, X_test), axis=1)
        out[scheme] = prob.metrics(labels)
        if state.history:
            out[scheme]["lambda"] = float(state.history[-1][-1])
    return out


# ---------------------------------------------------------------------------
# localization
# ---------------------------------------------------------------------------


def standardized_elm_map(X, p: int, seed) -> ElmHiddenMap:
    """ELM hidden layer applied to inputs standardized by the moments of ``X``.

    The standardization is folded into the random weights, so the result is
    an ordinary :class:`ElmHiddenMap` on raw inputs.
    """
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    base = make_elm_map(X.shape[1], p, seed)
    W = base.W / sd[None, :]
    return ElmHiddenMap(W, base.b - W @ mu)


def localize_problem(cfg: ExperimentConfig, seed):
    area = tuple(float(v) for v in cfg["loc.area"])
    pathloss = (cfg["loc.pl0"], cfg["loc.alpha"], cfg["loc.shadow"])
    n, n_test = cfg["n"], cfg["loc.test"]
    lab_all, unl = gen_synthetic_rssi(cfg["loc.m"], area, pathloss, n + n_test, cfg["N"],
                                      derive_seed(seed, "rssi"))
    X = rssi_features(lab_all.inputs)
    labeled = LabeledDataset(X[:n], lab_all.labels[:n])
    test = LabeledDataset(X[n:], lab_all.labels[n:])
    unlabeled = UnlabeledDataset(rssi_features(unl.inputs))
    pool = np.vstack([labeled.inputs, unlabeled.inputs])
    fmap = standardized_elm_map(pool, cfg["elm.p"], derive_seed(seed, "elm"))
    return ElmRidge(fmap, cfg["elm.ridge"], 2), labeled, unlabeled, test


def localize_trial(cfg: ExperimentConfig, seed) -> dict:
    model, labeled, unlabeled, test = localize_problem(cfg, seed)
    fitter = SchemeFitter(model, labeled, unlabeled, _labeler_spec(cfg, seed), cfg, seed)
    out = {}
    for scheme in cfg["schemes"]:
        theta = fitter.fit(scheme)
        err = np.abs(model.predict(theta, test.inputs) - test.labels).mean(axis=0)
        _record(out, fitter, scheme, {"mae_lon": float(err[0]), "mae_lat": float(err[1])})
    return out


TRIALS = {
    "synth-mean": synth_trial,
    "synth-linreg": synth_trial,
    "beam-align": beam_trial,
    "beam-align-nn": beam_nn_trial,
    "mcppi-beam": mcppi_trial,
    "localize": localize_trial,
}


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


def sweep_config(cfg: ExperimentConfig, value) -> ExperimentConfig:
    key = cfg["sweep.name"]
    default = defaults_for(cfg.experiment)[key]
    return cfg.with_values({key: _coerce(key, value, default)})


def run_trial(cfg: ExperimentConfig, sweep_value, t: int):
    """Run trial ``t`` at one sweep value; returns ``(results, error)``."""
    sub = sweep_config(cfg, sweep_value)
    try:
        return TRIALS[cfg.experiment](sub, trial_seed(cfg, sweep_value, t)), None
    except Exception:  # recorded per row, never dropped
        return None, traceback.format_exc()


def run_experiment(cfg: ExperimentConfig, progress=None) -> ResultsTable:
    """All sweep values x trials, aggregated to mean and standard error.

    Failed trials are counted in a ``failures`` row for every scheme at that
    sweep value.
    """
    table = ResultsTable()
    jobs = [(v, t) for v in cfg["sweep.values"] for t in range(cfg["trials"])]
    if cfg["workers"] > 1:
        with ThreadPoolExecutor(cfg["workers"]) as pool:
            results = list(pool.map(lambda j: run_trial(cfg, *j), jobs))
    else:
        results = []
        for j in jobs:
            results.append(run_trial(cfg, *j))
            if progress is not None:
                progress(j, results[-1])
    table.errors = [(j, err) for j, (_, err) in zip(jobs, results) if err is not None]
    for v in cfg["sweep.values"]:
        per = [res for (vv, _), (res, err) in zip(jobs, results) if vv == v and err is None]
        failures = sum(1 for (vv, _), (_, err) in zip(jobs, results) if vv == v and err)
        for scheme in cfg["schemes"]:
            metrics = {}
            for res in per:
                for name, value in res.get(scheme, {}).items():
                    metrics.setdefault(name, []).append(value)
            for name, values in metrics.items():
                table.rows.append(ResultRow.from_values(cfg.experiment, scheme, v, name, values))
            if failures:
                table.rows.append(ResultRow(cfg.experiment, scheme, float(v), "failures",
                                            float(failures), 0.0, cfg["trials"]))
    return table
