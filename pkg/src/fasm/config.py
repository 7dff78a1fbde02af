"""Pipeline configuration: a YAML (or JSON) document validated up front."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import yaml

from .cohort import SplitSpec
from .coxfit import TIES, FitConfig
from .errors import ConfigError
from .rankmetrics import TimeGrid
from .rashomon import RashomonConfig, get_measure

DEFAULTS = {
    "seed": 0,
    "data": {"path": None, "time": "time", "event": "event", "group": "group",
             "covariates": None, "categorical": []},
    "sensitive": ["group"],
    "split": {"fractions": [0.7, 0.1, 0.2], "seed": None},
    "fit": {"ties": "efron", "max_iterations": 50, "tolerance": 1e-9,
            "step_halving_max": 10, "divergence_bound": 20.0},
    "rashomon": {"epsilon": 0.05, "epsilon0": 0.02, "u1": 0.1, "u2": 2.0,
                 "n_target": 500, "max_draws": None, "seed": None,
                 "measure": "lr_pseudo_r2", "gate": "epsilon"},
    "evaluation": {"t_start": 0.0, "t_end": 120.0, "step": 1.0, "ipcw_floor": 0.05,
                   "per_group_censoring": False,
                   "risk_times": [12, 24, 36, 48, 60, 72, 84, 96, 108, 120]},
    "selection": {"normalize": False},
    "bootstrap": {"n_boot": 200, "seed": None, "stratified": False},
    "output": {"dir": "fasm_out"},
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and value is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path + key!r} must be a mapping")
            out[key] = _merge(base[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path

    @classmethod
    def load(cls, path, overrides=None):
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        return cls.from_dict(doc, path.parent, overrides)

    @classmethod
    def from_dict(cls, doc, base_dir=".", overrides=None):
        if not isinstance(doc, dict):
            raise ConfigError("config must be a mapping")
        raw = _merge(DEFAULTS, doc)
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            section, _, name = key.rpartition(".")
            target = raw[section] if section else raw
            target[name] = value
        cfg = cls(raw, Path(base_dir))
        cfg.validate()
        return cfg

    # -- typed views -------------------------------------------------------

    def _seed(self, section):
        s = self.raw[section].get("seed")
        return int(self.raw["seed"] if s is None else s)

    @property
    def data_path(self):
        p = self.raw["data"]["path"]
        if p is None:
            raise ConfigError("data.path is required")
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def schema(self):
        d = self.raw["data"]
        return {"time": d["time"], "event": d["event"], "group": d["group"],
                "covariates": d["covariates"], "categorical": d["categorical"]}

    @property
    def split(self):
        return SplitSpec(tuple(self.raw["split"]["fractions"]), self._seed("split"))

    @property
    def fit_config(self):
        f = self.raw["fit"]
        return FitConfig(int(f["max_iterations"]), float(f["tolerance"]),
                         int(f["step_halving_max"]), float(f["divergence_bound"]))

    @property
    def ties(self):
        return self.raw["fit"]["ties"]

    @property
    def rashomon(self):
        r = self.raw["rashomon"]
        return RashomonConfig(float(r["epsilon"]), float(r["epsilon0"]), float(r["u1"]),
                              float(r["u2"]), int(r["n_target"]),
                              None if r["max_draws"] is None else int(r["max_draws"]),
                              self._seed("rashomon"), r["gate"])

    @property
    def measure(self):
        return get_measure(self.raw["rashomon"]["measure"])

    @property
    def grid(self):
        e = self.raw["evaluation"]
        return TimeGrid.regular(float(e["t_start"]) + float(e["step"]),
                                float(e["t_end"]), float(e["step"]))

    @property
    def evaluation(self):
        return self.raw["evaluation"]

    @property
    def bootstrap(self):
        b = self.raw["bootstrap"]
        return {"n_boot": int(b["n_boot"]), "seed": self._seed("bootstrap"),
                "stratified": bool(b["stratified"])}

    @property
    def output_dir(self):
        p = Path(self.raw["output"]["dir"])
        return p if p.is_absolute() else self.base_dir / p

    def validate(self):
        try:
            seed = int(self.raw["seed"])
        except (TypeError, ValueError):
            raise ConfigError("seed must be an integer") from None
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.ties not in TIES:
            raise ConfigError(f"fit.ties must be one of {TIES}")
        if not self.raw["sensitive"] and self.raw["sensitive"] != []:
            raise ConfigError("sensitive must be a list")
        self.split, self.fit_config, self.rashomon, self.measure, self.grid  # noqa: B018
        e = self.evaluation
        if not 0 < float(e["ipcw_floor"]) <= 1:
            raise ConfigError("evaluation.ipcw_floor must lie in (0, 1]")
        if any(float(t) <= 0 for t in e["risk_times"]):
            raise ConfigError("evaluation.risk_times must be positive")
        b = self.bootstrap
        if b["n_boot"] != 0 and b["n_boot"] < 100:
            raise ConfigError("bootstrap.n_boot must be 0 (off) or at least 100")

    def echo(self):
        out = copy.deepcopy(self.raw)
        out["data"]["path"] = str(self.raw["data"]["path"])
        return out
