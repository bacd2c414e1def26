"""Global sensitivity analysis for extending trial results to a target population."""

__version__ = "0.1.0"

from .dataset import CohortSummary, ObservedDataset, ObservedRow, Schema, load_dataset, summarize
from .estimators import (
    SensitivityCurve,
    SensitivitySpec,
    effect_measures,
    phi_aug,
    phi_om,
    psi_aug,
    psi_om,
    sweep,
    tilted_prob,
)
from .inference import bootstrap, jackknife, wald_interval
from .models import NuisanceBundle, fit_forest, fit_logistic, fit_nuisances, predict_prob
from .selection import fit_tilted_mean, psi_dr, solve_selection
from .simulate import DgpSpec, check_selection_equivalence, dgp_a, generate, oracle
