"""Exponential-tilt sensitivity estimators for binary outcomes.

Under the tilt model the outcome probability among non-randomized
individuals with covariates ``x`` is the trial probability ``g`` reweighted
by ``exp(eta * y)`` and renormalized, which for binary ``Y`` is
:func:`tilted_prob`. ``eta = 0`` is the no-violation base case.

``psi`` targets the whole cohort population, ``phi`` the non-randomized
subset. ``om`` estimators plug fitted outcome probabilities into the
identifying formula; ``aug`` estimators add the weighted residual
correction built from the participation and treatment models.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import ObservedDataset
from .errors import ConfigError, EstimandUndefinedError, TiltwiseWarning
from .models import NuisanceBundle

WEIGHT_WARN_THRESHOLD = 50.0
RR_FLOOR = 1e-12

ESTIMANDS = ("psi1", "psi0", "phi1", "phi0", "rd_all", "rr_all", "rd_s0", "rr_s0")


def tilted_prob(g, eta):
    """``exp(eta) g / (exp(eta) g + 1 - g)``, vectorized.

    Each sign of ``eta`` uses a form built only from operations monotone in
    ``eta``, clamped to the correct side of ``g``, so the result is exactly
    ``g`` at ``eta = 0`` and nondecreasing in ``eta`` even after rounding.
    ``g`` of exactly 0 or 1 is returned unchanged.
    """
    g = np.asarray(g, dtype=float)
    eta = np.asarray(eta, dtype=float)
    q = 1.0 - g
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        neg = np.minimum(g / (g + q * np.exp(-eta)), g)
        pos = np.maximum(1.0 - q / (q + g * np.exp(eta)), g)
    out = np.where(eta < 0.0, neg, np.where(eta > 0.0, pos, g))
    out = np.where(g <= 0.0, 0.0, np.where(g >= 1.0, 1.0, out))
    return out if out.ndim else float(out)


def tilt_denominator(g, eta):
    """Normalizing constant ``E[exp(eta Y) | X, S=1, A=a] = exp(eta) g + 1 - g``."""
    return np.exp(eta) * np.asarray(g, dtype=float) + 1.0 - np.asarray(g, dtype=float)


def _n_s0(d: ObservedDataset) -> int:
    n0 = int(np.sum(d.s == 0))
    if n0 == 0:
        raise EstimandUndefinedError("no rows with s=0; phi is undefined")
    return n0


def psi_om(d: ObservedDataset, nb: NuisanceBundle, a: int, eta: float) -> float:
    g = nb.g(a, d.x)
    s = d.s
    return float(np.mean(s * g + (1 - s) * tilted_prob(g, eta)))


def phi_om(d: ObservedDataset, nb: NuisanceBundle, a: int, eta: float) -> float:
    n0 = _n_s0(d)
    g = nb.g(a, d.x)
    return float(np.sum((1 - d.s) * tilted_prob(g, eta)) / n0)


@dataclass
class AugTerms:
    """Per-row pieces of the augmented estimators (all length ``n``)."""

    trial: np.ndarray  # S{g + I(A=a)/e (Y - g)}
    tilted: np.ndarray  # (1-S) c(g, eta)
    residual: np.ndarray  # weight * (Y - c(g, eta)), zero off-arm
    weight: np.ndarray  # composite residual weight, zero off-arm


def aug_terms(d: ObservedDataset, nb: NuisanceBundle, a: int, eta: float) -> AugTerms:
    x = d.x
    g = nb.g(a, x)
    p = nb.p(x)
    e = nb.e(a, x)
    c = tilted_prob(g, eta)
    arm = d.arm_mask(a)
    y = np.where(arm, d.y, 0.0)
    s = d.s.astype(float)

    trial = s * g + np.where(arm, (y - g) / e, 0.0)
    tilted = (1.0 - s) * c
    weight = np.where(
        arm, (1.0 - p) * np.exp(eta * y) / (p * e * tilt_denominator(g, eta)), 0.0
    )
    residual = weight * (y - c)
    big = weight.max(initial=0.0)
    if big > WEIGHT_WARN_THRESHOLD:
        warnings.warn(
            f"augmented weight {big:.3g} exceeds {WEIGHT_WARN_THRESHOLD:g} "
            f"(arm {a}, eta {eta:g})",
            TiltwiseWarning,
            stacklevel=3,
        )
    return AugTerms(trial, tilted, residual, weight)


def psi_aug(d: ObservedDataset, nb: NuisanceBundle, a: int, eta: float) -> float:
    t = aug_terms(d, nb, a, eta)
    return float(np.mean(t.trial + t.tilted + t.residual))


def phi_aug(d: ObservedDataset, nb: NuisanceBundle, a: int, eta: float) -> float:
    n0 = _n_s0(d)
    t = aug_terms(d, nb, a, eta)
    return float(np.sum(t.tilted + t.residual) / n0)


def effect_measures(v1: float, v0: float) -> dict:
    """Risk difference and relative risk; ``rr`` is NaN when ``v0 < RR_FLOOR``."""
    rr = v1 / v0 if v0 >= RR_FLOOR else float("nan")
    return {"rd": v1 - v0, "rr": rr}


@dataclass(frozen=True)
class SensitivitySpec:
    """Grid of sensitivity parameters and the estimators to run.

    In ``linked`` mode each grid value ``eta`` gives ``(eta1, eta0) =
    (eta, -eta)``. In ``independent`` mode ``pairs`` lists ``(eta1, eta0)``
    explicitly.
    """

    eta_grid: tuple = ()
    linkage: str = "linked"
    pairs: tuple = ()
    estimators: tuple = ("om", "aug")

    def __post_init__(self):
        object.__setattr__(self, "eta_grid", tuple(float(v) for v in self.eta_grid))
        object.__setattr__(self, "pairs", tuple((float(a), float(b)) for a, b in self.pairs))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.linkage not in ("linked", "independent"):
            raise ConfigError(f"unknown linkage {self.linkage!r}")
        bad = set(self.estimators) - {"om", "aug", "dr"}
        if bad or not self.estimators:
            raise ConfigError(f"estimators must be drawn from om, aug, dr; got {self.estimators}")
        if self.linkage == "linked":
            grid = self.eta_grid
            if not grid:
                raise ConfigError("eta_grid must be non-empty")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ConfigError("eta_grid must be strictly increasing")
        elif not self.pairs:
            raise ConfigError("independent linkage needs a non-empty list of (eta1, eta0) pairs")

    @classmethod
    def default_grid(cls, lo: float = 0.0, hi: float = 1.0, n_points: int = 21, **kw):
        return cls(tuple(np.linspace(lo, hi, n_points).tolist()), **kw)

    def eta_pairs(self) -> list:
        if self.linkage == "linked":
            return [(eta, -eta) for eta in self.eta_grid]
        return list(self.pairs)


@dataclass
class EstimateRow:
    eta1: float
    eta0: float
    estimand: str
    estimator: str
    value: float
    se: float = float("nan")
    ci_low: float = float("nan")
    ci_high: float = float("nan")
    n_failed_replicates: int = 0
    interval: str = "none"

    @property
    def key(self) -> tuple:
        return (self.eta1, self.eta0, self.estimand, self.estimator)


@dataclass
class SensitivityCurve:
    rows: list
    metadata: dict = field(default_factory=dict)

    def values(self) -> dict:
        return {r.key: r.value for r in self.rows}

    def get(self, estimand: str, estimator: str, eta1: float, eta0: Optional[float] = None):
        for r in self.rows:
            if (
                r.estimand == estimand
                and r.estimator == estimator
                and r.eta1 == eta1
                and (eta0 is None or r.eta0 == eta0)
            ):
                return r
        raise KeyError((estimand, estimator, eta1, eta0))


_ARM_FUNCS = {
    ("psi", "om"): psi_om,
    ("phi", "om"): phi_om,
    ("psi", "aug"): psi_aug,
    ("phi", "aug"): phi_aug,
}


def _cell_rows(eta1, eta0, estimator, vals: dict) -> list:
    rows = [EstimateRow(eta1, eta0, k, estimator, v) for k, v in vals.items()]
    if "psi1" in vals and "psi0" in vals:
        em = effect_measures(vals["psi1"], vals["psi0"])
        rows.append(EstimateRow(eta1, eta0, "rd_all", estimator, em["rd"]))
        rows.append(EstimateRow(eta1, eta0, "rr_all", estimator, em["rr"]))
    if "phi1" in vals and "phi0" in vals:
        em = effect_measures(vals["phi1"], vals["phi0"])
        rows.append(EstimateRow(eta1, eta0, "rd_s0", estimator, em["rd"]))
        rows.append(EstimateRow(eta1, eta0, "rr_s0", estimator, em["rr"]))
    order = {k: i for i, k in enumerate(ESTIMANDS)}
    rows.sort(key=lambda r: order[r.estimand])
    return rows


def sweep(
    d: ObservedDataset,
    nb: NuisanceBundle,
    spec: SensitivitySpec,
    dr_fn=None,
) -> SensitivityCurve:
    """Point estimates for every grid point, estimator and estimand.

    ``dr_fn(arm, eta) -> float`` supplies selection-model estimates when
    ``"dr"`` is among the requested estimators; it only covers ``psi`` and
    the derived whole-population contrasts.
    """
    has_s0 = bool(np.any(d.s == 0))
    if not has_s0:
        warnings.warn("no rows with s=0; phi estimands skipped", TiltwiseWarning, stacklevel=2)
    rows = []
    for eta1, eta0 in spec.eta_pairs():
        etas = {1: eta1, 0: eta0}
        for est in spec.estimators:
            vals = {}
            if est == "dr":
                if dr_fn is None:
                    raise ConfigError("dr estimator requested without a selection-model pipeline")
                for arm in (1, 0):
                    vals[f"psi{arm}"] = dr_fn(arm, etas[arm])
            else:
                for arm in (1, 0):
                    vals[f"psi{arm}"] = _ARM_FUNCS["psi", est](d, nb, arm, etas[arm])
                if has_s0:
                    for arm in (1, 0):
                        vals[f"phi{arm}"] = _ARM_FUNCS["phi", est](d, nb, arm, etas[arm])
            rows.extend(_cell_rows(eta1, eta0, est, vals))
    return SensitivityCurve(rows)
