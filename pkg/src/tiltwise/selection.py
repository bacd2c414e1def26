"""Odds-of-selection parameterization and the doubly robust estimator.

For a single arm ``a`` the tilt model can be written as

    logit Pr[S=0 | X, Y^a=y] = m_a(X) + eta * y,

with ``m_a(X; gamma)`` linear in ``(1, X)``. ``gamma`` solves the sample
estimating equations

    (1/n) sum_i z_i {1 - I(S_i=1, A_i=a) (1 + exp(z_i.gamma + eta Y_i)) / e_a(X_i)} = 0,

where ``1 / (1 - expit(u)) = 1 + exp(u)``. The one-step estimator
:func:`psi_dr` is consistent when either ``m_a`` or the tilted mean
``b(X)`` is correctly specified. Each arm is handled on its own; nothing
enforces coherence between the two arms' selection models.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dataset import ObservedDataset
from .errors import SolverError
from .models import EPS_CLIP, ProbabilityModel, fit_model

TOL_EE = 1e-9
MAX_ITER = 200
MAX_HALVINGS = 30


def design(x: np.ndarray, terms: Optional[Sequence[int]] = None) -> np.ndarray:
    """``(1, X[:, terms])``; ``terms=None`` keeps every covariate, ``()`` gives intercept only."""
    x = np.asarray(x, dtype=float)
    cols = x if terms is None else x[:, list(terms)]
    return np.column_stack([np.ones(x.shape[0]), cols])


@dataclass
class SelectionModel:
    gamma: np.ndarray
    arm: int
    eta: float
    terms: Optional[tuple]
    solve_report: dict = field(default_factory=dict)

    def m(self, x) -> np.ndarray:
        """Fitted ``m_a(x)`` on the log-odds scale."""
        return design(np.atleast_2d(x), self.terms) @ self.gamma


def _moments(gamma, z, ind, inv_e, scale):
    # scale = exp(eta Y) / e on arm rows, 0 elsewhere
    lin = z @ gamma
    inner = 1.0 - inv_e - scale * np.exp(lin)
    return z.T @ inner / len(inner)


def _jacobian(gamma, z, scale):
    w = scale * np.exp(z @ gamma)
    return -(z * w[:, None]).T @ z / z.shape[0]


def solve_selection(
    d: ObservedDataset,
    e_a: ProbabilityModel,
    arm: int,
    eta: float,
    terms: Optional[Sequence[int]] = None,
    tol_ee: float = TOL_EE,
    max_iter: int = MAX_ITER,
) -> SelectionModel:
    """Solve the selection-model estimating equations by damped Newton.

    Starts from the log-odds of the marginal ``s=0`` share for the
    intercept and zero elsewhere; each step is halved (up to 30 times)
    until the max-norm of the moment vector decreases.
    """
    ind = d.arm_mask(arm)
    if not ind.any():
        raise SolverError(f"no trial rows in arm {arm}")
    e = e_a.predict(d.x)
    y = np.where(ind, d.y, 0.0)
    inv_e = np.where(ind, 1.0 / e, 0.0)
    scale = inv_e * np.exp(eta * y)
    z = design(d.x, terms)

    gamma = np.zeros(z.shape[1])
    share0 = np.clip(np.mean(d.s == 0), EPS_CLIP, 1 - EPS_CLIP)
    gamma[0] = np.log(share0 / (1 - share0))

    u = _moments(gamma, z, ind, inv_e, scale)
    res = np.max(np.abs(u))
    it = 0
    while res > tol_ee and it < max_iter:
        it += 1
        jac = _jacobian(gamma, z, scale)
        if not np.all(np.isfinite(jac)) or np.linalg.cond(jac) > 1e14:
            raise SolverError(
                "singular Jacobian in selection-model equations; try fewer covariates"
            )
        step = np.linalg.solve(jac, -u)
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = gamma + t * step
            cu = _moments(cand, z, ind, inv_e, scale)
            cres = np.max(np.abs(cu))
            if np.isfinite(cres) and cres < res:
                break
            t *= 0.5
        else:
            raise SolverError(
                f"line search failed after {MAX_HALVINGS} halvings (residual {res:.3g})"
            )
        gamma, u, res = cand, cu, cres
    if res <= tol_ee:
        # quadratic convergence: one more step usually lands at rounding level
        try:
            cand = gamma + np.linalg.solve(_jacobian(gamma, z, scale), -u)
            cu = _moments(cand, z, ind, inv_e, scale)
            if np.max(np.abs(cu)) < res:
                gamma, u, res = cand, cu, np.max(np.abs(cu))
        except np.linalg.LinAlgError:
            pass
    if res > tol_ee:
        raise SolverError(
            f"selection model did not converge in {max_iter} iterations (residual {res:.3g})"
        )
    report = {"iterations": it, "residual_norm": float(res), "converged": True}
    return SelectionModel(gamma, arm, float(eta), None if terms is None else tuple(terms), report)


def selection_moments(d: ObservedDataset, e_a: ProbabilityModel, sm: SelectionModel) -> np.ndarray:
    """Mean estimating-function vector at ``sm.gamma`` (zero at an exact solution)."""
    ind = d.arm_mask(sm.arm)
    e = e_a.predict(d.x)
    y = np.where(ind, d.y, 0.0)
    inv_e = np.where(ind, 1.0 / e, 0.0)
    return _moments(sm.gamma, design(d.x, sm.terms), ind, inv_e, inv_e * np.exp(sm.eta * y))


def selection_jacobian(d, e_a, arm, eta, gamma, terms=None) -> np.ndarray:
    ind = d.arm_mask(arm)
    e = e_a.predict(d.x)
    y = np.where(ind, d.y, 0.0)
    scale = np.where(ind, np.exp(eta * y) / e, 0.0)
    return _jacobian(np.asarray(gamma, dtype=float), design(d.x, terms), scale)


def selection_moments_at(d, e_a, arm, eta, gamma, terms=None) -> np.ndarray:
    sm = SelectionModel(np.asarray(gamma, dtype=float), arm, eta, terms)
    return selection_moments(d, e_a, sm)


@dataclass
class TiltedMeanModel(ProbabilityModel):
    """Weighted logistic regression estimate of the tilted mean ``b(X)``."""

    fit: ProbabilityModel
    arm: int
    eta: float
    terms: Optional[tuple] = None
    kind = "tilted_mean"

    @property
    def clip(self):
        return self.fit.clip

    @property
    def coefficients(self):
        return getattr(self.fit, "coefficients", None)

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cols = x if self.terms is None else x[:, list(self.terms)]
        return self.fit.predict(cols)


def fit_tilted_mean(
    d: ObservedDataset,
    arm: int,
    eta: float,
    terms: Optional[Sequence[int]] = None,
    model: Optional[dict] = None,
) -> TiltedMeanModel:
    """Regress ``Y`` on ``X`` over arm rows with weights ``exp(eta * Y)``.

    For binary ``Y`` a saturated fit reproduces ``tilted_prob`` of each
    stratum's outcome rate. ``model`` is a logistic config entry (ridge,
    auto_ridge, clip, ...).
    """
    mask = d.arm_mask(arm)
    y = d.y[mask]
    x = d.x[mask]
    cols = x if terms is None else x[:, list(terms)]
    spec = {"type": "logistic"}
    spec.update(model or {})
    fit = fit_model(spec, cols, y, weights=np.exp(eta * y), label=f"tilted mean b{arm}")
    return TiltedMeanModel(fit, arm, float(eta), None if terms is None else tuple(terms))


def dr_terms(d, e_a, sm, g, b, arm, eta):
    """Per-row trial, tilted-mean and residual pieces of :func:`psi_dr`."""
    x = d.x
    e = e_a.predict(x)
    gx = g.predict(x)
    bx = b.predict(x)
    ind = d.arm_mask(arm)
    y = np.where(ind, d.y, 0.0)
    s = d.s.astype(float)
    trial = s * gx + np.where(ind, (y - gx) / e, 0.0)
    tilted = (1.0 - s) * bx
    residual = np.where(ind, np.exp(sm.m(x) + eta * y) / e * (y - bx), 0.0)
    return trial, tilted, residual


def psi_dr(
    d: ObservedDataset,
    e_a: ProbabilityModel,
    sm: SelectionModel,
    g: ProbabilityModel,
    b: ProbabilityModel,
    arm: int,
    eta: float,
) -> float:
    """Doubly robust one-step estimate of ``E[Y^arm]`` under tilt ``eta``."""
    trial, tilted, residual = dr_terms(d, e_a, sm, g, b, arm, eta)
    return float(np.mean(trial + tilted + residual))
