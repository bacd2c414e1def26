"""Built-in oracle and invariant checks behind ``tiltwise validate``."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import estimators as est
from .analysis import Pipeline
from .estimators import SensitivitySpec
from .fixtures import SATURATED_EXACT, fixture_12
from .inference import bootstrap, jackknife
from .models import fit_nuisances
from .selection import fit_tilted_mean, psi_dr, selection_moments, solve_selection
from .simulate import DgpSpec, check_selection_equivalence, dgp_a, generate, oracle

LN2 = math.log(2.0)


@dataclass
class Check:
    name: str
    passed: bool
    discrepancy: float
    tolerance: float
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status}  {self.name:<28} discrepancy={self.discrepancy:.3e} "
            f"tolerance={self.tolerance:.1e} ({self.seconds:.1f}s)"
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "discrepancy": self.discrepancy,
            "tolerance": self.tolerance,
            "seconds": self.seconds,
            "detail": self.detail,
        }


def three_point_dgp(n=3000, seed=7, eta=(0.4, -0.3)) -> DgpSpec:
    """Discrete covariate with three levels; no probability is extreme."""
    return DgpSpec(
        support=[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        f_x=[0.3, 0.45, 0.25],
        p=[0.35, 0.5, 0.65],
        e1=[0.5, 0.5, 0.5],
        g1=[0.3, 0.55, 0.7],
        g0=[0.2, 0.4, 0.35],
        eta_star=eta,
        n=n,
        seed=seed,
        covariate_names=("x1", "x2"),
    )


def standard_aipw(d, nb, arm):
    """Textbook augmented estimators of E[Y^a] and E[Y^a|S=0] with no tilt."""
    g = nb.g(arm, d.x)
    p = nb.p(d.x)
    e = nb.e(arm, d.x)
    ind = d.arm_mask(arm)
    y = np.nan_to_num(d.y)
    w = np.where(ind, 1.0 / (p * e), 0.0)
    psi = np.mean(g + w * (y - g))
    n0 = np.sum(d.s == 0)
    phi = np.sum((d.s == 0) * g + w * (1 - p) * (y - g)) / n0
    return psi, phi


def check_tilt_monotone(rng_seed=11, pairs=1000):
    rng = np.random.default_rng(rng_seed)
    g = rng.uniform(0.001, 0.999, pairs)
    e1 = rng.uniform(-5, 5, pairs)
    e2 = e1 + rng.uniform(1e-3, 5, pairs)
    c1 = est.tilted_prob(g, e1)
    c2 = est.tilted_prob(g, e2)
    margin = float(np.min(c2 - c1))
    ident = float(np.max(np.abs(est.tilted_prob(g, 0.0) - g)))
    return Check("tilt_monotone", margin > 0 and ident == 0.0, ident, 0.0, {"min_increase": margin})


def check_base_collapse():
    d = generate(three_point_dgp())
    nb = fit_nuisances(d, {"p": "logistic", "e": "logistic", "g": "logistic"})
    worst = 0.0
    for arm in (1, 0):
        gform = float(np.sum(nb.g(arm, d.x)) / d.n)
        s0mean = float(np.mean(nb.g(arm, d.x)[d.s == 0]))
        psi_std, phi_std = standard_aipw(d, nb, arm)
        worst = max(
            worst,
            abs(est.psi_om(d, nb, arm, 0.0) - gform),
            abs(est.phi_om(d, nb, arm, 0.0) - s0mean),
            abs(est.psi_aug(d, nb, arm, 0.0) - psi_std),
            abs(est.phi_aug(d, nb, arm, 0.0) - phi_std),
        )
    return Check("base_case_collapse", worst <= 1e-10, worst, 1e-10)


def check_fixture():
    d = fixture_12()
    nb = fit_nuisances(d, SATURATED_EXACT)
    got = {
        "psi_om(1,0)": (est.psi_om(d, nb, 1, 0.0), 0.75),
        "psi_om(1,ln2)": (est.psi_om(d, nb, 1, LN2), (2 + 4 + 4 / 3 + 2) / 12),
        "phi_om(1,0)": (est.phi_om(d, nb, 1, 0.0), 0.75),
        "phi_om(1,ln2)": (est.phi_om(d, nb, 1, LN2), 5 / 6),
    }
    worst = max(abs(v - t) for v, t in got.values())
    return Check("fixture_exactness", worst <= 1e-9, worst, 1e-9, {k: v for k, (v, _) in got.items()})


def check_saturated_equivalence():
    d = generate(three_point_dgp(n=4000, seed=3))
    nb = fit_nuisances(d, {"p": "stratified", "e": "stratified", "g": "stratified"})
    worst = 0.0
    for eta in np.linspace(-2, 2, 9):
        for arm in (1, 0):
            worst = max(
                worst,
                abs(est.psi_om(d, nb, arm, eta) - est.psi_aug(d, nb, arm, eta)),
                abs(est.phi_om(d, nb, arm, eta) - est.phi_aug(d, nb, arm, eta)),
            )
    return Check("saturated_om_equals_aug", worst <= 1e-10, worst, 1e-10)


def check_moment_residuals():
    d = generate(three_point_dgp(n=5000, seed=5))
    nb = fit_nuisances(d, {"e": 0.5})
    worst = 0.0
    for arm in (1, 0):
        for eta in (-1.0, 0.0, 0.5, 1.0):
            sm = solve_selection(d, nb.e_models[arm], arm, eta)
            worst = max(worst, float(np.max(np.abs(selection_moments(d, nb.e_models[arm], sm)))))
    return Check("moment_residuals", worst <= 1e-9, worst, 1e-9)


class _OffsetFromParticipation:
    """``m(x) = log((1 - p(x)) / p(x))``: the selection offset implied by ``p`` at ``eta = 0``."""

    def __init__(self, p_model):
        self.p_model = p_model

    def m(self, x):
        p = self.p_model.predict(x)
        return np.log1p(-p) - np.log(p)


def check_dr_collapse():
    d = generate(three_point_dgp(n=3000, seed=9))
    nb = fit_nuisances(d, {"p": "stratified", "e": 0.5, "g": "stratified"})
    worst = 0.0
    for arm in (1, 0):
        dr = psi_dr(d, nb.e_models[arm], _OffsetFromParticipation(nb.p_model), nb.g_models[arm],
                    nb.g_models[arm], arm, 0.0)
        worst = max(worst, abs(dr - est.psi_aug(d, nb, arm, 0.0)))
    return Check("dr_eta0_collapse", worst <= 1e-10, worst, 1e-10)


def check_equivalence(n_probe):
    rep = check_selection_equivalence(dgp_a(), n_probe=n_probe)
    zs = [abs(c.log_odds_diff - c.target) / c.se for c in rep.checks]
    return Check("selection_equivalence", rep.passed, max(zs), 4.0,
                 {"n_probe": n_probe, "strata": len(rep.checks)})


def check_oracle_consistency():
    spec = dgp_a(n=20000)
    d = generate(spec)
    truth = oracle(spec)
    grid = SensitivitySpec((LN2,), estimators=("om", "aug", "dr"))
    pipe = Pipeline(grid, {"p": {"type": "logistic"}, "e": {"type": "known", "value": 0.5},
                           "g": {"type": "logistic"}})
    jk = jackknife(pipe, d)
    targets = {"psi1": truth.psi[1], "psi0": truth.psi[0], "phi1": truth.phi[1], "phi0": truth.phi[0]}
    worst = 0.0
    ok = True
    detail = {}
    for key, row in jk.items():
        estimand = key[2]
        if estimand not in targets:
            continue
        err = abs(row.point - targets[estimand])
        tol = max(0.01, 3 * row.se)
        ok &= err <= tol
        worst = max(worst, err / tol)
        detail[f"{estimand}/{key[3]}"] = {"estimate": row.point, "se": row.se, "error": err}
    return Check("oracle_consistency", ok, worst, 1.0, detail)


def dr_bias(spec, m_terms, b_terms, eta):
    d = generate(spec)
    nb = fit_nuisances(d, {"p": "logistic", "e": {"type": "known", "value": float(spec.e1[0])},
                           "g": "logistic"})
    e = nb.e_models[1]
    sm = solve_selection(d, e, 1, eta, terms=m_terms)
    b = fit_tilted_mean(d, 1, eta, terms=b_terms)
    return psi_dr(d, e, sm, nb.g_models[1], b, 1, eta) - oracle(spec).psi[1]


def heterogeneous_participation_dgp(n=50000, seed=20240101) -> DgpSpec:
    """Heterogeneous outcome and participation; used for the power check."""
    return dgp_a(n=n, seed=seed, g1=[0.3, 0.7]).replace(p=[0.2, 0.8])


def check_double_robustness():
    spec = dgp_a(n=50000, g1=[0.3, 0.7])
    eta = spec.eta(1)
    case1 = dr_bias(spec, (), None, eta)
    case2 = dr_bias(spec, None, (), eta)
    power_spec = heterogeneous_participation_dgp()
    both = dr_bias(power_spec, (), (), eta)
    ok = abs(case1) < 0.01 and abs(case2) < 0.01 and abs(both) > 0.02
    return Check(
        "double_robustness",
        ok,
        max(abs(case1), abs(case2)),
        0.01,
        {"case1_bias": case1, "case2_bias": case2, "both_misspecified_bias": both},
    )


def check_bootstrap_determinism():
    d = generate(dgp_a(n=400, seed=4))
    pipe = Pipeline(SensitivitySpec((0.0, LN2), estimators=("om",)),
                    {"p": "logistic", "e": 0.5, "g": "logistic"})
    r1 = bootstrap(pipe, d, n_boot=50, seed=3)
    r2 = bootstrap(pipe, d, n_boot=50, seed=3)
    diff = max(
        max(abs(r1[k].ci_low - r2[k].ci_low), abs(r1[k].ci_high - r2[k].ci_high))
        for k in r1
        if np.isfinite(r1[k].ci_low)
    )
    return Check("bootstrap_determinism", diff == 0.0, diff, 0.0)


QUICK = [
    check_tilt_monotone,
    check_base_collapse,
    check_fixture,
    check_saturated_equivalence,
    check_moment_residuals,
    check_dr_collapse,
    lambda: check_equivalence(50000),
    check_bootstrap_determinism,
]
FULL_EXTRA = [
    check_oracle_consistency,
    check_double_robustness,
]


def run_checks(quick: bool = False) -> list:
    checks = list(QUICK)
    if not quick:
        checks[6] = lambda: check_equivalence(200000)
        checks += FULL_EXTRA
    results = []
    for fn in checks:
        t0 = time.perf_counter()
        try:
            res = fn()
        except Exception as exc:  # a crashing check is a failing check
            name = getattr(fn, "__name__", "check").removeprefix("check_")
            res = Check(name, False, float("nan"), float("nan"), {"error": repr(exc)})
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return results
