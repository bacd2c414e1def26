"""Run configuration: a JSON file whose entries command-line flags may override."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .estimators import SensitivitySpec
from .inference import ReplicatePlan

DEFAULT_CONFIG = {
    "seed": 20240101,
    "schema": {"covariates": ["x"], "s": "s", "a": "a", "y": "y"},
    "models": {
        "p": {"type": "logistic"},
        "e": {"type": "known", "value": 0.5},
        "g": {"type": "logistic"},
    },
    "sensitivity": {
        "eta_min": 0.0,
        "eta_max": 1.0,
        "n_points": 21,
        "linkage": "linked",
        "estimators": ["om", "aug"],
    },
    "selection": {"m_terms": None, "b_terms": None},
    "inference": {"ci": "jackknife", "boot_reps": 1000, "level": 0.95, "stratify": False},
    "plot": True,
    "dgp": {
        "support": [[0.0], [1.0]],
        "f_x": [0.5, 0.5],
        "p": 0.5,
        "e1": 0.5,
        "g1": 0.5,
        "g0": 0.25,
        "eta_star": [math.log(2.0), -math.log(2.0)],
        "n": 20000,
        "seed": 20240101,
        "covariate_names": ["x"],
    },
}

CI_CHOICES = ("none", "jackknife", "bootstrap", "both")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("models",):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        with open(path) as fh:
            user = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    return _merge(DEFAULT_CONFIG, user)


def sensitivity_spec(cfg: dict) -> SensitivitySpec:
    s = cfg.get("sensitivity", {})
    estimators = tuple(s.get("estimators", ("om", "aug")))
    linkage = s.get("linkage", "linked")
    if linkage == "independent":
        return SensitivitySpec(linkage=linkage, pairs=tuple(map(tuple, s.get("pairs", ()))), estimators=estimators)
    if "eta_grid" in s:
        return SensitivitySpec(tuple(s["eta_grid"]), linkage, estimators=estimators)
    return SensitivitySpec.default_grid(
        float(s.get("eta_min", 0.0)),
        float(s.get("eta_max", 1.0)),
        int(s.get("n_points", 21)),
        linkage=linkage,
        estimators=estimators,
    )


def replicate_plans(cfg: dict) -> tuple:
    inf = cfg.get("inference", {})
    ci = inf.get("ci", "jackknife")
    if ci not in CI_CHOICES:
        raise ConfigError(f"ci must be one of {', '.join(CI_CHOICES)}")
    methods = {"none": (), "jackknife": ("jackknife",), "bootstrap": ("bootstrap",),
               "both": ("jackknife", "bootstrap")}[ci]
    return tuple(
        ReplicatePlan(
            method=m,
            n_boot=int(inf.get("boot_reps", 1000)),
            seed=int(cfg.get("seed", 0)),
            level=float(inf.get("level", 0.95)),
            stratify=bool(inf.get("stratify", False)),
        )
        for m in methods
    )


@dataclass
class RunConfig:
    command: str
    raw: dict
    data: Optional[Path] = None
    out: Optional[Path] = None
    extra: dict = field(default_factory=dict)
