"""Synthetic nested-trial cohorts with a known tilt, plus exact oracle values.

Covariates live on a finite support so every estimand is a finite sum.
Random draws come from numpy's PCG64 generator; rows are generated in
fixed-size blocks, and block ``k`` uses its own stream seeded by
``SeedSequence([seed, k])``. Output is therefore identical no matter how
blocks are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .dataset import ObservedDataset
from .errors import ConfigError, EstimandUndefinedError, ValidationError
from .estimators import effect_measures, tilted_prob

BLOCK_SIZE = 4096


def _vec(value, k: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(k, float(arr))
    if arr.shape != (k,):
        raise ConfigError(f"{name} must be a scalar or have one entry per support point ({k})")
    return arr


@dataclass
class DgpSpec:
    """Discrete-support data-generating process.

    ``g1``/``g0`` are trial outcome probabilities per support point; among
    non-randomized individuals the potential outcome probability is
    ``tilted_prob(g_a(x), eta_star[a])``. ``eta_star`` is ``(eta1, eta0)``.
    """

    support: np.ndarray
    f_x: np.ndarray
    p: np.ndarray
    e1: np.ndarray
    g1: np.ndarray
    g0: np.ndarray
    eta_star: tuple = (0.0, 0.0)
    n: int = 1000
    seed: int = 0
    covariate_names: tuple = ()

    def __post_init__(self):
        support = np.asarray(self.support, dtype=float)
        if support.ndim == 1:
            support = support.reshape(-1, 1)
        k = support.shape[0]
        if k == 0:
            raise ConfigError("support must contain at least one point")
        self.support = support
        self.f_x = _vec(self.f_x, k, "f_x")
        self.p = _vec(self.p, k, "p")
        self.e1 = _vec(self.e1, k, "e1")
        self.g1 = _vec(self.g1, k, "g1")
        self.g0 = _vec(self.g0, k, "g0")
        self.eta_star = tuple(float(v) for v in self.eta_star)
        if len(self.eta_star) != 2:
            raise ConfigError("eta_star must be (eta1, eta0)")
        self.n = int(self.n)
        self.seed = int(self.seed)
        if not self.covariate_names:
            self.covariate_names = tuple(f"x{j + 1}" for j in range(support.shape[1]))
        self.covariate_names = tuple(self.covariate_names)
        if len(self.covariate_names) != support.shape[1]:
            raise ConfigError("covariate_names length must match the support dimension")
        self.validate()

    def validate(self):
        if self.n < 0:
            raise ConfigError("n must be non-negative")
        if np.any(self.f_x < 0) or abs(self.f_x.sum() - 1.0) > 1e-12:
            raise ConfigError("f_x must be non-negative and sum to 1")
        for name in ("p", "e1", "g1", "g0"):
            v = getattr(self, name)
            if np.any((v < 0) | (v > 1)):
                raise ConfigError(f"{name} must lie in [0, 1]")
        mass = self.f_x > 0
        if np.any(self.p[mass] <= 0):
            raise ConfigError("positivity: p(x) must be > 0 wherever f_x(x) > 0")
        if np.any((self.e1[mass] <= 0) | (self.e1[mass] >= 1)):
            raise ConfigError("positivity: 0 < e1(x) < 1 required wherever f_x(x) > 0")

    def g(self, arm: int) -> np.ndarray:
        return self.g1 if arm == 1 else self.g0

    def eta(self, arm: int) -> float:
        return self.eta_star[0] if arm == 1 else self.eta_star[1]

    def replace(self, **kw) -> "DgpSpec":
        fields = dict(
            support=self.support,
            f_x=self.f_x,
            p=self.p,
            e1=self.e1,
            g1=self.g1,
            g0=self.g0,
            eta_star=self.eta_star,
            n=self.n,
            seed=self.seed,
            covariate_names=self.covariate_names,
        )
        fields.update(kw)
        return DgpSpec(**fields)

    @classmethod
    def from_mapping(cls, m: Mapping) -> "DgpSpec":
        try:
            return cls(
                support=m["support"],
                f_x=m["f_x"],
                p=m["p"],
                e1=m["e1"],
                g1=m["g1"],
                g0=m["g0"],
                eta_star=tuple(m.get("eta_star", (0.0, 0.0))),
                n=m.get("n", 1000),
                seed=m.get("seed", 0),
                covariate_names=tuple(m.get("covariate_names", ())),
            )
        except KeyError as exc:
            raise ConfigError(f"dgp is missing key {exc}") from None

    def to_dict(self) -> dict:
        return {
            "support": self.support.tolist(),
            "f_x": self.f_x.tolist(),
            "p": self.p.tolist(),
            "e1": self.e1.tolist(),
            "g1": self.g1.tolist(),
            "g0": self.g0.tolist(),
            "eta_star": list(self.eta_star),
            "n": self.n,
            "seed": self.seed,
            "covariate_names": list(self.covariate_names),
        }


def dgp_a(n: int = 20000, seed: int = 20240101, g1=0.5, g0=0.25) -> DgpSpec:
    """Binary ``X ~ Bernoulli(0.5)``, ``p = e1 = 0.5``, tilt ``(ln 2, -ln 2)``."""
    return DgpSpec(
        support=[[0.0], [1.0]],
        f_x=[0.5, 0.5],
        p=0.5,
        e1=0.5,
        g1=g1,
        g0=g0,
        eta_star=(math.log(2.0), -math.log(2.0)),
        n=n,
        seed=seed,
        covariate_names=("x",),
    )


def _uniforms(seed: int, n: int, width: int) -> np.ndarray:
    out = np.empty((n, width))
    for k, start in enumerate(range(0, n, BLOCK_SIZE)):
        stop = min(start + BLOCK_SIZE, n)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, k])))
        out[start:stop] = rng.random((stop - start, width))
    return out


def _draw(spec: DgpSpec, n: int, seed: int, latent: bool):
    u = _uniforms(seed, n, 6 if latent else 4)
    cdf = np.cumsum(spec.f_x)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, u[:, 0], side="right")
    idx = np.minimum(idx, len(cdf) - 1)
    s = (u[:, 1] < spec.p[idx]).astype(np.int8)
    a = (u[:, 2] < spec.e1[idx]).astype(float)
    g_obs = np.where(a == 1, spec.g1[idx], spec.g0[idx])
    y = (u[:, 3] < g_obs).astype(float)
    a = np.where(s == 1, a, np.nan)
    y = np.where(s == 1, y, np.nan)
    if not latent:
        return idx, s, a, y
    # latent potential outcomes for every row, trial law for s=1, tilted law for s=0
    ya = {}
    for arm, col in ((1, 4), (0, 5)):
        g = spec.g(arm)[idx]
        prob = np.where(s == 1, g, tilted_prob(g, spec.eta(arm)))
        ya[arm] = (u[:, col] < prob).astype(np.int8)
    return idx, s, a, y, ya


def generate(spec: DgpSpec) -> ObservedDataset:
    """Draw ``spec.n`` rows; outcomes and treatments exist only for ``s = 1``."""
    if spec.n == 0:
        raise ValidationError("empty dataset")
    idx, s, a, y = _draw(spec, spec.n, spec.seed, latent=False)
    return ObservedDataset(spec.support[idx], s, a, y, spec.covariate_names)


@dataclass(frozen=True)
class OracleTruth:
    psi: dict
    phi: dict
    rd_all: float
    rr_all: float
    rd_s0: float
    rr_s0: float

    def to_dict(self) -> dict:
        return {
            "psi1_true": self.psi[1],
            "psi0_true": self.psi[0],
            "phi1_true": self.phi[1],
            "phi0_true": self.phi[0],
            "rd_all_true": self.rd_all,
            "rr_all_true": self.rr_all,
            "rd_s0_true": self.rd_s0,
            "rr_s0_true": self.rr_s0,
        }


def oracle(spec: DgpSpec) -> OracleTruth:
    """Exact ``E[Y^a]`` and ``E[Y^a | S=0]`` under the DGP's true tilt."""
    mass0 = float(np.sum(spec.f_x * (1.0 - spec.p)))
    if mass0 <= 0.0:
        raise EstimandUndefinedError("Pr[S=0] = 0 under this DGP; phi is undefined")
    psi, phi = {}, {}
    for arm in (1, 0):
        g = spec.g(arm)
        c = tilted_prob(g, spec.eta(arm))
        psi[arm] = float(np.sum(spec.f_x * (spec.p * g + (1.0 - spec.p) * c)))
        phi[arm] = float(np.sum(spec.f_x * (1.0 - spec.p) * c) / mass0)
    em_all = effect_measures(psi[1], psi[0])
    em_s0 = effect_measures(phi[1], phi[0])
    return OracleTruth(psi, phi, em_all["rd"], em_all["rr"], em_s0["rd"], em_s0["rr"])


@dataclass
class StratumCheck:
    arm: int
    support_index: int
    x: tuple
    log_odds_diff: float
    se: float
    target: float
    passed: bool
    counts: dict = field(default_factory=dict)


@dataclass
class EquivalenceReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def check_selection_equivalence(
    spec: DgpSpec, n_probe: int = 200000, seed: Optional[int] = None, n_se: float = 4.0
) -> EquivalenceReport:
    """Empirical check that the tilt is an odds-of-selection model.

    Draws ``n_probe`` rows with latent potential outcomes for everyone and,
    per arm and support point, compares
    ``logit Pr[S=0|x, Y^a=1] - logit Pr[S=0|x, Y^a=0]`` with ``eta_star[a]``
    using the log-odds-ratio standard error of the 2x2 table. Latent
    outcomes never leave this function.
    """
    seed = spec.seed if seed is None else seed
    idx, s, _, _, ya = _draw(spec, n_probe, seed, latent=True)
    checks = []
    for arm in (1, 0):
        for j in range(len(spec.f_x)):
            if spec.f_x[j] == 0:
                continue
            here = idx == j
            cells = {}
            for yv in (0, 1):
                for sv in (0, 1):
                    cells[(sv, yv)] = int(np.sum(here & (ya[arm] == yv) & (s == sv)))
            if min(cells.values()) == 0:
                diff, se, ok = float("nan"), float("inf"), False
            else:
                diff = math.log(cells[0, 1] / cells[1, 1]) - math.log(cells[0, 0] / cells[1, 0])
                se = math.sqrt(sum(1.0 / v for v in cells.values()))
                ok = abs(diff - spec.eta(arm)) <= n_se * se
            checks.append(
                StratumCheck(
                    arm,
                    j,
                    tuple(spec.support[j].tolist()),
                    diff,
                    se,
                    spec.eta(arm),
                    ok,
                    {f"s{k[0]}_y{k[1]}": v for k, v in cells.items()},
                )
            )
    return EquivalenceReport(checks)
