"""End-to-end estimation pipeline used by the CLI and by resampling."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

from .dataset import ObservedDataset
from .estimators import SensitivityCurve, SensitivitySpec, sweep
from .inference import ReplicatePlan, run_plan
from .models import DEFAULT_MODEL_CONFIG, fit_nuisances
from .selection import fit_tilted_mean, psi_dr, solve_selection


@dataclass
class Pipeline:
    """Fit every nuisance model on ``d`` and evaluate the whole sweep.

    ``selection`` configures the ``dr`` estimator: ``m_terms`` and
    ``b_terms`` pick covariate columns for the selection model and the
    tilted-mean regression (``None`` = all), ``b_model`` is a logistic
    config entry for the tilted-mean fit.
    """

    spec: SensitivitySpec
    models: Mapping = field(default_factory=lambda: dict(DEFAULT_MODEL_CONFIG))
    selection: Mapping = field(default_factory=dict)

    def __call__(self, d: ObservedDataset) -> SensitivityCurve:
        nb = fit_nuisances(d, self.models)
        dr_fn = None
        if "dr" in self.spec.estimators:
            m_terms = self.selection.get("m_terms")
            b_terms = self.selection.get("b_terms")
            b_model = self.selection.get("b_model")

            def dr_fn(arm, eta):
                e_a = nb.e_models[arm]
                sm = solve_selection(d, e_a, arm, eta, terms=m_terms)
                b = fit_tilted_mean(d, arm, eta, terms=b_terms, model=b_model)
                return psi_dr(d, e_a, sm, nb.g_models[arm], b, arm, eta)

        return sweep(d, nb, self.spec, dr_fn=dr_fn)

    @property
    def order_invariant(self) -> bool:
        """True when no forest is involved, so tied rows give identical replicates."""
        kinds = [v.get("type") if isinstance(v, Mapping) else v for v in self.models.values()]
        return not any(k in ("forest", "random_forest") for k in kinds)


def analyze(
    d: ObservedDataset,
    pipeline: Pipeline,
    plans: tuple = (),
    threads: Optional[int] = None,
) -> SensitivityCurve:
    """Point estimates plus one interval row per requested resampling plan."""
    curve = pipeline(d)
    if not plans:
        return curve
    point = curve.values()
    rows = []
    for plan in plans:
        kw = {"threads": threads}
        if plan.method == "jackknife":
            kw["collapse_ties"] = pipeline.order_invariant
        intervals = run_plan(pipeline, d, plan, point=point, **kw)
        for r in curve.rows:
            iv = intervals[r.key]
            rows.append(
                type(r)(
                    r.eta1,
                    r.eta0,
                    r.estimand,
                    r.estimator,
                    r.value,
                    iv.se,
                    iv.ci_low,
                    iv.ci_high,
                    iv.n_failed_replicates,
                    plan.method,
                )
            )
    return SensitivityCurve(rows, dict(curve.metadata))
