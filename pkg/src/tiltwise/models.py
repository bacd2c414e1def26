"""Nuisance probability models.

Three probability functions feed the estimators: participation
``p(X) = Pr[S=1|X]``, treatment ``e_a(X) = Pr[A=a|X,S=1]`` and the
arm-specific outcome probability ``g_a(X) = Pr[Y=1|X,S=1,A=a]``. Each is
represented by a :class:`ProbabilityModel` whose predictions are clipped
away from 0 and 1.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy.optimize import linprog
from scipy.special import expit
from sklearn.tree import DecisionTreeClassifier

from .dataset import ObservedDataset
from .errors import (
    ConfigError,
    ConvergenceError,
    DimensionError,
    FitError,
    SeparationError,
    TiltwiseWarning,
    ValidationError,
)

EPS_CLIP = 1e-6
TOL_GRAD = 1e-8
MAX_ITER = 100
RIDGE_RETRY = 1e-6
# Linear predictors beyond this trigger the separation LP check.
_EXTREME_LINPRED = 15.0


def _as_matrix(x, n_features=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1) if n_features is not None and x.size == n_features else x.reshape(-1, 1)
    return x


class ProbabilityModel:
    """Base class: ``predict`` returns clipped probabilities for rows of ``x``."""

    kind = "abstract"
    n_features: Optional[int] = None
    clip: float = EPS_CLIP

    def _raw(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, x) -> np.ndarray:
        x = _as_matrix(x, self.n_features)
        if self.n_features is not None and x.shape[1] != self.n_features:
            raise DimensionError(
                f"model trained on {self.n_features} features, got {x.shape[1]}"
            )
        return np.clip(self._raw(x), self.clip, 1.0 - self.clip)

    def complement(self) -> "ProbabilityModel":
        return ComplementModel(self)


def predict_prob(m: ProbabilityModel, x) -> float:
    """Probability for a single covariate vector."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return float(m.predict(x)[0])


@dataclass
class LogisticFit(ProbabilityModel):
    coefficients: np.ndarray  # intercept first
    converged: bool
    iterations: int
    final_gradient_norm: float
    ridge_used: float = 0.0
    clip: float = EPS_CLIP
    kind = "logistic"

    @property
    def n_features(self):
        return len(self.coefficients) - 1

    def linear_predictor(self, x) -> np.ndarray:
        x = _as_matrix(x, self.n_features)
        return self.coefficients[0] + x @ self.coefficients[1:]

    def _raw(self, x):
        return expit(self.linear_predictor(x))


@dataclass
class KnownConstant(ProbabilityModel):
    value: float
    clip: float = EPS_CLIP
    kind = "known_constant"

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ConfigError(f"known probability must lie in [0, 1], got {self.value}")

    def _raw(self, x):
        return np.full(x.shape[0], self.value)


@dataclass
class ComplementModel(ProbabilityModel):
    base: ProbabilityModel
    kind = "complement"

    @property
    def n_features(self):
        return self.base.n_features

    @property
    def clip(self):
        return self.base.clip

    def _raw(self, x):
        return 1.0 - self.base._raw(x)


@dataclass
class StratumFit(ProbabilityModel):
    """Empirical outcome proportion within each distinct covariate vector.

    This is the nonparametric (saturated) model for discrete covariates.
    Predicting at a covariate vector never seen in training is an error.
    """

    table: dict
    n_features: int
    clip: float = EPS_CLIP
    kind = "stratified"

    def _raw(self, x):
        out = np.empty(x.shape[0])
        for i, row in enumerate(x):
            key = tuple(row.tolist())
            if key not in self.table:
                raise DimensionError(f"covariate pattern {key} absent from training data")
            out[i] = self.table[key]
        return out


def fit_stratified(features, labels, weights=None, clip: float = EPS_CLIP) -> StratumFit:
    x = _as_matrix(features)
    y = np.asarray(labels, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if len(y) == 0:
        raise FitError("cannot fit on zero rows")
    keys, inverse = np.unique(x, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    num = np.bincount(inverse, weights=w * y, minlength=len(keys))
    den = np.bincount(inverse, weights=w, minlength=len(keys))
    table = {tuple(k.tolist()): float(nu / de) for k, nu, de in zip(keys, num, den)}
    return StratumFit(table, x.shape[1], clip)


def _separable(xd: np.ndarray, y: np.ndarray) -> bool:
    """LP test for complete or quasi-complete separation.

    Looks for a direction ``b`` with ``(2y-1) * x.b >= 0`` for every row and
    a strictly positive total; such a direction exists exactly when the
    maximum likelihood estimate is infinite.
    """
    sign = 2.0 * y - 1.0
    z = xd * sign[:, None]
    res = linprog(
        -z.sum(axis=0),
        A_ub=-z,
        b_ub=np.zeros(len(y)),
        bounds=[(-1.0, 1.0)] * xd.shape[1],
        method="highs",
    )
    return bool(res.status == 0 and -res.fun > 1e-7)


def fit_logistic(
    features,
    labels,
    weights=None,
    tol_grad: float = TOL_GRAD,
    max_iter: int = MAX_ITER,
    ridge: float = 0.0,
    best_effort: bool = False,
    clip: float = EPS_CLIP,
) -> LogisticFit:
    """Ridge-penalized logistic regression by damped Newton (IRLS).

    Maximizes ``sum w_i * loglik_i - ridge/2 * ||beta||^2`` with the
    intercept prepended to ``features``. The penalty covers the intercept.

    Raises
    ------
    SeparationError
        ``ridge == 0`` and the labels are constant or (quasi-)separated.
    ConvergenceError
        ``max_iter`` reached without ``best_effort``.
    """
    x = _as_matrix(features)
    y = np.asarray(labels, dtype=float)
    if x.shape[0] == 0:
        raise FitError("cannot fit on zero rows")
    if x.shape[0] != len(y):
        raise DimensionError("features and labels differ in length")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    xd = np.column_stack([np.ones(len(y)), x])
    k = xd.shape[1]

    if ridge == 0.0 and (np.all(y == y[0])):
        raise SeparationError(
            "all labels are identical; refit with ridge > 0 or a different model"
        )

    def objective(beta):
        eta = xd @ beta
        ll = np.sum(w * (y * eta - np.logaddexp(0.0, eta)))
        return ll - 0.5 * ridge * beta @ beta

    beta = np.zeros(k)
    ybar = np.sum(w * y) / np.sum(w)
    if 0.0 < ybar < 1.0:
        beta[0] = np.log(ybar / (1.0 - ybar))
    obj = objective(beta)
    converged = False
    grad_norm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(xd @ beta)
        grad = xd.T @ (w * (y - p)) - ridge * beta
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= tol_grad:
            converged = True
            it -= 1
            break
        hess = (xd * (w * p * (1.0 - p))[:, None]).T @ xd + ridge * np.eye(k)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            if ridge == 0.0 and _separable(xd, y):
                raise SeparationError("labels are separated by the covariates; use ridge > 0")
            raise FitError("singular Hessian; covariates may be collinear")
        t = 1.0
        for _ in range(30):
            cand = beta + t * step
            cobj = objective(cand)
            if cobj >= obj - 1e-12 * abs(obj):
                break
            t *= 0.5
        beta, obj = cand, cobj

    if ridge == 0.0 and (not converged or np.max(np.abs(xd @ beta)) > _EXTREME_LINPRED):
        if _separable(xd, y):
            raise SeparationError("labels are separated by the covariates; use ridge > 0")
    if not converged and not best_effort:
        raise ConvergenceError(
            f"logistic fit did not converge in {max_iter} iterations "
            f"(gradient norm {grad_norm:.3g})"
        )
    return LogisticFit(beta, converged, it, grad_norm, ridge, clip)


@dataclass
class Tree:
    """One fitted tree of a forest, restricted to a feature subset."""

    features: np.ndarray
    model: DecisionTreeClassifier
    in_bag: np.ndarray

    def leaf_proportions(self, x: np.ndarray) -> np.ndarray:
        proba = self.model.predict_proba(x[:, self.features])
        classes = list(self.model.classes_)
        if 1.0 in classes:
            return proba[:, classes.index(1.0)]
        return np.zeros(x.shape[0])

    @property
    def splits(self):
        """(feature index, threshold) for every internal node."""
        t = self.model.tree_
        internal = t.children_left >= 0
        return list(zip(self.features[t.feature[internal]].tolist(), t.threshold[internal].tolist()))


@dataclass
class ForestFit(ProbabilityModel):
    n_trees: int
    mtry: int
    trees: list
    seed: int
    n_features: int
    min_node: int = 1
    clip: float = EPS_CLIP
    kind = "random_forest"

    def _raw(self, x):
        total = np.zeros(x.shape[0])
        for t in self.trees:
            total += t.leaf_proportions(x)
        return total / len(self.trees)

    def oob_error(self, features, labels) -> float:
        """Out-of-bag misclassification rate at threshold 0.5."""
        x = _as_matrix(features)
        y = np.asarray(labels, dtype=float)
        total = np.zeros(len(y))
        count = np.zeros(len(y))
        for t in self.trees:
            oob = ~t.in_bag
            if oob.any():
                total[oob] += t.leaf_proportions(x[oob])
                count[oob] += 1
        seen = count > 0
        pred = (total[seen] / count[seen]) > 0.5
        return float(np.mean(pred != (y[seen] == 1)))


def tree_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, index])


def fit_forest(
    features,
    labels,
    n_trees: int = 2000,
    mtry: int = 4,
    min_node: int = 1,
    seed: int = 0,
    clip: float = EPS_CLIP,
) -> ForestFit:
    """Classification forest with a random feature subset per tree.

    Each tree draws a bootstrap resample of the rows and ``mtry`` features
    from its own stream seeded by ``(seed, tree index)``, then grows a Gini
    tree to purity or ``min_node`` rows per leaf. Predictions average the
    per-tree leaf class-1 proportions.
    """
    x = _as_matrix(features)
    y = np.asarray(labels, dtype=float)
    n, p = x.shape
    if n < 2:
        raise FitError("forest needs at least 2 rows")
    if mtry > p:
        raise ConfigError(f"mtry={mtry} exceeds the {p} available features")
    if mtry < 1 or n_trees < 1:
        raise ConfigError("mtry and n_trees must be positive")
    trees = []
    for i in range(n_trees):
        rng = np.random.default_rng(tree_seed(seed, i))
        rows = rng.integers(0, n, size=n)
        feats = np.sort(rng.choice(p, size=mtry, replace=False))
        in_bag = np.zeros(n, dtype=bool)
        in_bag[rows] = True
        dt = DecisionTreeClassifier(
            criterion="gini",
            min_samples_leaf=min_node,
            max_features=None,
            random_state=int(rng.integers(0, 2**31 - 1)),
        )
        dt.fit(x[rows][:, feats], y[rows])
        trees.append(Tree(feats, dt, in_bag))
    return ForestFit(n_trees, mtry, trees, seed, p, min_node, clip)


@dataclass
class NuisanceBundle:
    p_model: ProbabilityModel
    e_models: dict
    g_models: dict
    notes: list = field(default_factory=list)

    def p(self, x) -> np.ndarray:
        return self.p_model.predict(x)

    def e(self, arm: int, x) -> np.ndarray:
        return self.e_models[arm].predict(x)

    def g(self, arm: int, x) -> np.ndarray:
        return self.g_models[arm].predict(x)


DEFAULT_MODEL_CONFIG = {
    "p": {"type": "logistic"},
    "e": {"type": "logistic"},
    "g": {"type": "logistic"},
}


def fit_model(spec: Mapping, features, labels, weights=None, label: str = "model"):
    """Fit one probability model from a config entry such as ``{"type": "logistic"}``.

    Logistic entries accept ``ridge``, ``auto_ridge`` (default true: retry at
    ridge 1e-6 after a separation error, with a warning), ``tol_grad``,
    ``max_iter``, ``best_effort``, ``clip``. Forest entries accept
    ``n_trees``, ``mtry``, ``min_node``, ``seed``, ``clip``. ``stratified``
    fits empirical proportions per distinct covariate vector.
    """
    kind = spec.get("type", "logistic")
    clip = float(spec.get("clip", EPS_CLIP))
    if kind == "logistic":
        ridge = float(spec.get("ridge", 0.0))
        opts = dict(
            tol_grad=float(spec.get("tol_grad", TOL_GRAD)),
            max_iter=int(spec.get("max_iter", MAX_ITER)),
            best_effort=bool(spec.get("best_effort", False)),
            clip=clip,
        )
        try:
            return fit_logistic(features, labels, weights, ridge=ridge, **opts)
        except SeparationError as exc:
            if ridge > 0.0 or not spec.get("auto_ridge", True):
                raise SeparationError(f"{label}: {exc}") from None
            warnings.warn(
                f"{label}: {exc}; refitting with ridge={RIDGE_RETRY:g}",
                TiltwiseWarning,
                stacklevel=2,
            )
            return fit_logistic(features, labels, weights, ridge=RIDGE_RETRY, **opts)
    if kind in ("forest", "random_forest"):
        if weights is not None:
            raise ConfigError(f"{label}: forest models do not accept row weights")
        x = _as_matrix(features)
        return fit_forest(
            x,
            labels,
            n_trees=int(spec.get("n_trees", 2000)),
            mtry=int(spec.get("mtry", min(4, x.shape[1]))),
            min_node=int(spec.get("min_node", 1)),
            seed=int(spec.get("seed", 0)),
            clip=clip,
        )
    if kind == "stratified":
        return fit_stratified(features, labels, weights, clip=clip)
    if kind in ("known", "known_constant"):
        if "value" not in spec:
            raise ConfigError(f"{label}: known model needs a 'value'")
        return KnownConstant(float(spec["value"]), clip)
    raise ConfigError(f"{label}: unknown model type {kind!r}")


def _entry(config: Mapping, key: str) -> dict:
    entry = config.get(key, DEFAULT_MODEL_CONFIG[key])
    if isinstance(entry, (int, float)):
        return {"type": "known", "value": float(entry)}
    if isinstance(entry, str):
        return {"type": entry}
    return dict(entry)


def fit_nuisances(d: ObservedDataset, config: Optional[Mapping] = None) -> NuisanceBundle:
    """Fit ``p`` on all rows, ``e_1`` on trial rows and ``g_a`` on each arm.

    ``e_0`` is always ``1 - e_1``. A ``known`` treatment entry with value
    ``v`` means ``e_1 = v``; nothing is fit.
    """
    config = DEFAULT_MODEL_CONFIG if config is None else config
    trial = d.s == 1
    for arm in (0, 1):
        if not np.any(d.arm_mask(arm)):
            raise FitError(f"arm {arm} has no trial rows")

    p_model = fit_model(_entry(config, "p"), d.x, d.s.astype(float), label="participation model p")

    e_spec = _entry(config, "e")
    if e_spec.get("type") in ("known", "known_constant"):
        e1 = fit_model(e_spec, None, None, label="treatment model e")
    else:
        e1 = fit_model(e_spec, d.x[trial], d.a[trial], label="treatment model e")
    e_models = {1: e1, 0: e1.complement()}

    g_models = {}
    g_spec = _entry(config, "g")
    for arm in (0, 1):
        mask = d.arm_mask(arm)
        spec = dict(g_spec)
        spec.update(config.get(f"g{arm}", {}) if isinstance(config.get(f"g{arm}"), Mapping) else {})
        g_models[arm] = fit_model(spec, d.x[mask], d.y[mask], label=f"outcome model g{arm}")
    return NuisanceBundle(p_model, e_models, g_models)


def with_clip(m: ProbabilityModel, clip: float) -> ProbabilityModel:
    out = copy.copy(m)
    out.clip = clip
    return out
