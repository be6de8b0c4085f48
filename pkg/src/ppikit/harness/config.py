"""Experiment configuration as a flat mapping of dotted keys.

Every experiment kind has a table of defaults; a JSON file and ``--set``
overrides may only touch keys that exist in that table, and values are
coerced to the type of the default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

EXPERIMENTS = ("synth-mean", "synth-linreg", "beam-align", "beam-align-nn", "mcppi-beam",
               "localize")

LINEAR_SCHEMES = ("ERM", "SS", "PPI", "TunedPPI", "CPPI", "TunedCPPI")


class ConfigError(ValueError):
    pass


_COMMON = {
    "experiment": "synth-mean",
    "schemes": list(LINEAR_SCHEMES),
    "sweep.name": "n",
    "sweep.values": None,
    "trials": 300,
    "seed": 0,
    "workers": 1,
    "K": 5,
    "B": 30,
    "gamma": 1.0,
    "lambda": None,
    "lambda_init": 0.5,
    "split_fraction": 0.5,
    "out": "results",
}

_SYNTH = {
    "n": 100,
    "N": 10000,
    "R2": 0.25,
    "synth.d": 2,
    "synth.mu": 4.0,
    "synth.sigma": 2.0,
    "labeler.kind": "ForestLite",
    "labeler.n_trees": 25,
    "labeler.max_depth": 10,
    "labeler.min_leaf": 1,
    "labeler.max_features": "all",
    "labeler.bootstrap": True,
}

_BEAM = {
    "trials": 20,
    "n": 50,
    "beam.n_y": 4,
    "beam.n_z": 4,
    "beam.spacing": 0.5,
    "beam.positions": 1000,
    "beam.test_fraction": 0.2,
    "beam.scatterers": 8,
    "beam.L_max": 4,
    "beam.snr": 1.0,
    "beam.landmarks": 64,
    "beam.ridge": 1e-3,
    "beam.bandwidth_scale": 1.0,
    "labeler.kind": "Ckm",
    "labeler.hidden": [64, 64],
    "labeler.activation": "leaky_relu",
    "labeler.epochs": 200,
    "labeler.lr": 1e-3,
    "labeler.batch_size": 32,
}

_META = {
    "meta.T": 600,
    "meta.kappa": "linear",
    "meta.eta_S": 0.05,
    "meta.eta_T": 0.05,
    "meta.batch_labeled": 32,
    "meta.batch_unlabeled": 256,
    "meta.hidden": [32],
    "meta.teacher_epochs": 100,
    "meta.lambda_every": 50,
    "meta.lambda": "auto",
}

_LOCALIZE = {
    "trials": 20,
    "n": 40,
    "N": 2000,
    "loc.m": 8,
    "loc.area": [0.0, 50.0, 0.0, 50.0],
    "loc.pl0": 40.0,
    "loc.alpha": 2.5,
    "loc.shadow": 4.0,
    "loc.test": 500,
    "elm.p": 50,
    "elm.ridge": 1e-3,
    "labeler.kind": "Mlp",
    "labeler.hidden": [64, 64],
    "labeler.activation": "leaky_relu",
    "labeler.epochs": 200,
    "labeler.lr": 1e-3,
    "labeler.batch_size": 32,
}

EXPERIMENT_DEFAULTS = {
    "synth-mean": {**_SYNTH},
    "synth-linreg": {**_SYNTH, "synth.d": 3, "synth.mu": 0.0, "R2": 0.75},
    "beam-align": {**_BEAM, "schemes": ["PerfectCSI", "CKM"] + list(LINEAR_SCHEMES),
                   "B": 10},
    "beam-align-nn": {**_BEAM, **_META, "n": 200, "schemes": ["ERM", "PPI", "TunedCPPI"],
                      "B": 10},
    "mcppi-beam": {**_BEAM, **_META, "n": 200,
                   "schemes": ["MPL", "TunedCPPI-batch", "MCPPI"]},
    "localize": {**_LOCALIZE, "schemes": ["ERM", "PPI", "TunedPPI", "CPPI", "TunedCPPI"]},
}

SWEEPABLE = {
    "synth-mean": ("n", "N", "R2"),
    "synth-linreg": ("n", "N", "R2"),
    "beam-align": ("n", "beam.n_y", "beam.n_z"),
    "beam-align-nn": ("n", "beam.n_y", "beam.n_z"),
    "mcppi-beam": ("n", "beam.n_y", "beam.n_z"),
    "localize": ("n", "N", "loc.shadow"),
}


def defaults_for(experiment: str) -> dict:
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    return {**_COMMON, **EXPERIMENT_DEFAULTS[experiment], "experiment": experiment}


def _coerce(key, value, default):
    """Coerce ``value`` (possibly a string from the command line) to the default's type."""
    if isinstance(value, str) and not isinstance(default, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            if default is not None:
                raise ConfigError(f"cannot parse {key}={value!r}") from None
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not float(value).is_integer():
            raise ConfigError(f"{key} must be an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            value = [value]
        return list(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            if key == "meta.lambda" and isinstance(value, (int, float)):
                return float(value)
            raise ConfigError(f"{key} must be a string")
        return value
    return value


@dataclass
class ExperimentConfig:
    """Validated flat configuration; read values with ``cfg[key]``."""

    values: dict = field(default_factory=lambda: ExperimentConfig.build("synth-mean").values)

    @classmethod
    def build(cls, experiment: str, overrides: dict | None = None) -> "ExperimentConfig":
        base = defaults_for(experiment)
        for key, value in (overrides or {}).items():
            if key == "experiment":
                if value != experiment:
                    raise ConfigError(f"config is for {value!r}, not {experiment!r}")
                continue
            if key not in base:
                raise ConfigError(f"unknown key {key!r} for experiment {experiment!r}")
            base[key] = _coerce(key, value, base[key])
        if base["sweep.values"] is None:
            # no explicit grid: a single point at the configured value of the swept key
            base["sweep.values"] = [base.get(base["sweep.name"])]
        elif not isinstance(base["sweep.values"], list):
            base["sweep.values"] = [base["sweep.values"]]
        cfg = cls(base)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, experiment: str | None = None,
                  overrides: dict | None = None) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        experiment = experiment or data.get("experiment")
        if experiment is None:
            raise ConfigError("config names no experiment")
        merged = {**data, **(overrides or {})}
        merged.pop("experiment", None)
        return cls.build(experiment, merged)

    def __getitem__(self, key):
        return self.values[key]

    def replace(self, **kw) -> "ExperimentConfig":
        """Copy with dotted keys given as ``key__sub=value`` or via a dict."""
        new = dict(self.values)
        for k, v in kw.items():
            new[k.replace("__", ".")] = v
        cfg = ExperimentConfig(new)
        cfg.validate()
        return cfg

    def with_values(self, updates: dict) -> "ExperimentConfig":
        cfg = ExperimentConfig({**self.values, **updates})
        cfg.validate()
        return cfg

    @property
    def experiment(self) -> str:
        return self.values["experiment"]

    def validate(self) -> None:
        v = self.values
        if v["trials"] < 1:
            raise ConfigError("trials must be at least 1")
        if v["workers"] < 1:
            raise ConfigError("workers must be at least 1")
        if not v["schemes"]:
            raise ConfigError("scheme list must be non-empty")
        if v["sweep.name"] not in SWEEPABLE[self.experiment]:
            raise ConfigError(f"cannot sweep {v['sweep.name']!r} for {self.experiment}; "
                              f"choose from {SWEEPABLE[self.experiment]}")
        if not v["sweep.values"]:
            raise ConfigError("sweep grid must be non-empty")
        if v["lambda"] is not None:
            if isinstance(v["lambda"], bool) or not isinstance(v["lambda"], (int, float)):
                raise ConfigError("lambda override must be a number or null")
            if not 0.0 <= float(v["lambda"]) <= 1.0:
                raise ConfigError("lambda override must lie in [0, 1]")
        if v["K"] < 2:
            raise ConfigError("K must be at least 2")
        if v["B"] < 2:
            raise ConfigError("B must be at least 2")
        if v["gamma"] < 0:
            raise ConfigError("gamma must be nonnegative")

    def labeler_params(self) -> dict:
        kind = self.values["labeler.kind"]
        params = {k[len("labeler."):]: v for k, v in self.values.items()
                  if k.startswith("labeler.") and k != "labeler.kind"}
        if "hidden" in params:
            params["hidden"] = tuple(params["hidden"])
        return kind, params

    def to_json(self) -> str:
        return json.dumps(self.values, indent=2, sort_keys=True)


def parse_set(items) -> dict:
    """``["a.b=1", "c=x"]`` -> ``{"a.b": "1", "c": "x"}``."""
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out
