"""Small hand-checkable datasets used by the validation suite and tests."""

import numpy as np

from .dataset import ObservedDataset

# (x, s, a, y); a/y None for s=0.
# Arm 1 outcome rate: 0.5 at x=0, 1.0 at x=1. Arm 0: 0.0 at x=0, 0.5 at x=1.
FIXTURE_12 = [
    ((0.0,), 1, 1, 0),
    ((0.0,), 1, 1, 1),
    ((0.0,), 1, 0, 0),
    ((0.0,), 1, 0, 0),
    ((0.0,), 0, None, None),
    ((0.0,), 0, None, None),
    ((1.0,), 1, 1, 1),
    ((1.0,), 1, 1, 1),
    ((1.0,), 1, 0, 0),
    ((1.0,), 1, 0, 1),
    ((1.0,), 0, None, None),
    ((1.0,), 0, None, None),
]

# Empirical-cell models without clipping reproduce the hand values exactly.
SATURATED_EXACT = {
    "p": {"type": "stratified", "clip": 0.0},
    "e": {"type": "known", "value": 0.5, "clip": 0.0},
    "g": {"type": "stratified", "clip": 0.0},
}


def fixture_12() -> ObservedDataset:
    return ObservedDataset.from_rows(FIXTURE_12, ("x",))


def fixture_12_csv() -> str:
    lines = ["x,s,a,y"]
    for (x,), s, a, y in FIXTURE_12:
        lines.append(f"{x},{s},{'' if a is None else a},{'' if y is None else y}")
    return "\n".join(lines) + "\n"


def onehot_support(levels: int) -> np.ndarray:
    """Support points for a categorical covariate with ``levels`` levels, one-hot minus the first."""
    return np.vstack([np.zeros(levels - 1), np.eye(levels - 1)])
