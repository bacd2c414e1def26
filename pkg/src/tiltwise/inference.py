"""Jackknife and bootstrap inference around a full estimation pipeline.

A *pipeline* maps an :class:`ObservedDataset` to point estimates: a float,
a mapping from cell keys to floats, or a :class:`SensitivityCurve`. Every
replicate reruns the whole pipeline, nuisance fits included.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtri

from .dataset import ObservedDataset
from .errors import ConfigError, InferenceError, TiltwiseError, TiltwiseWarning
from .estimators import SensitivityCurve

Z95 = 1.959964
MAX_FAIL_FRACTION = 0.05


@dataclass(frozen=True)
class ReplicatePlan:
    method: str = "jackknife"
    n_boot: int = 1000
    seed: int = 0
    level: float = 0.95
    stratify: bool = False
    refit: bool = True

    def __post_init__(self):
        if self.method not in ("jackknife", "bootstrap"):
            raise ConfigError(f"unknown resampling method {self.method!r}")
        if self.method == "bootstrap" and self.n_boot < 2:
            raise ConfigError("n_boot must be at least 2")
        if not 0.0 < self.level < 1.0:
            raise ConfigError("level must lie in (0, 1)")


@dataclass
class IntervalRow:
    key: object
    point: float
    se: float
    ci_low: float
    ci_high: float
    n_failed_replicates: int
    method: str

    @property
    def estimand(self):
        return self.key[2] if isinstance(self.key, tuple) and len(self.key) == 4 else None

    @property
    def estimator(self):
        return self.key[3] if isinstance(self.key, tuple) and len(self.key) == 4 else None

    @property
    def eta1(self):
        return self.key[0] if isinstance(self.key, tuple) and len(self.key) == 4 else None

    @property
    def eta0(self):
        return self.key[1] if isinstance(self.key, tuple) and len(self.key) == 4 else None


def z_quantile(level: float) -> float:
    if level == 0.95:
        return Z95
    return float(ndtri(0.5 + level / 2.0))


def wald_interval(point: float, se: float, level: float = 0.95) -> tuple:
    if se < 0:
        raise ValueError("se must be non-negative")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    half = z_quantile(level) * se
    return point - half, point + half


def _values(result) -> dict:
    if isinstance(result, SensitivityCurve):
        return result.values()
    if isinstance(result, dict):
        return {k: float(v) for k, v in result.items()}
    return {"value": float(result)}


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("TILTWISE_THREADS", "1")))
    except ValueError:
        return 1


def _run_all(fn: Callable, jobs: list, threads: Optional[int]) -> list:
    threads = default_threads() if threads is None else max(1, threads)

    def safe(job):
        try:
            return fn(job)
        except TiltwiseError as exc:
            return exc

    # per-replicate warnings would drown the run log; failures are counted instead
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TiltwiseWarning)
        if threads == 1:
            return [safe(j) for j in jobs]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(safe, jobs))


def _check_failures(n_failed: int, total: int, method: str):
    if n_failed > MAX_FAIL_FRACTION * total:
        raise InferenceError(
            f"{n_failed} of {total} {method} replicates failed "
            f"(more than {MAX_FAIL_FRACTION:.0%})"
        )
    if n_failed:
        warnings.warn(
            f"{n_failed} of {total} {method} replicates failed; "
            "intervals use the successful replicates only",
            TiltwiseWarning,
            stacklevel=3,
        )


def _tie_groups(d: ObservedDataset):
    sig = np.column_stack(
        [d.x, d.s, np.nan_to_num(d.a, nan=-1.0), np.nan_to_num(d.y, nan=-1.0)]
    )
    _, first, counts = np.unique(sig, axis=0, return_index=True, return_counts=True)
    order = np.argsort(first)
    return first[order], counts[order]


def jackknife(
    pipeline: Callable,
    d: ObservedDataset,
    level: float = 0.95,
    point: Optional[dict] = None,
    collapse_ties: bool = True,
    threads: Optional[int] = None,
) -> dict:
    """Leave-one-out standard errors and Wald intervals for every cell.

    ``se = sqrt((n-1)/n * sum_i (theta_(i) - theta_bar)^2)`` over the
    successful replicates. With ``collapse_ties`` the pipeline runs once
    per distinct row and the result is counted once per copy, which is
    exact whenever the pipeline ignores row order (true for logistic and
    stratified fits, not for forests).
    """
    point = _values(pipeline(d)) if point is None else point
    n = d.n
    if collapse_ties:
        reps, counts = _tie_groups(d)
    else:
        reps, counts = np.arange(n), np.ones(n, dtype=int)

    results = _run_all(lambda i: _values(pipeline(d.drop(int(i)))), list(reps), threads)
    failed = sum(int(c) for r, c in zip(results, counts) if isinstance(r, Exception))
    _check_failures(failed, n, "jackknife")

    out = {}
    for key, pt in point.items():
        vals, wts = [], []
        for r, c in zip(results, counts):
            if isinstance(r, Exception):
                continue
            v = r.get(key, float("nan"))
            if np.isfinite(v):
                vals.append(v)
                wts.append(c)
        vals = np.asarray(vals)
        wts = np.asarray(wts, dtype=float)
        m = wts.sum()
        cell_failed = int(n - m)
        if m < 2:
            se = float("nan")
        else:
            # centered on the first replicate so a constant statistic gives exactly 0
            dev = vals - vals[0]
            dev = dev - np.sum(wts * dev) / m
            se = float(np.sqrt((m - 1) / m * np.sum(wts * dev**2)))
        lo, hi = (
            wald_interval(pt, se, level) if np.isfinite(se) and np.isfinite(pt) else (np.nan, np.nan)
        )
        out[key] = IntervalRow(key, pt, se, lo, hi, cell_failed, "jackknife")
    return out


def bootstrap_indices(n: int, seed: int, b: int, strata: Optional[np.ndarray] = None) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, b]))
    if strata is None:
        return rng.integers(0, n, size=n)
    parts = []
    for lvl in np.unique(strata):
        members = np.flatnonzero(strata == lvl)
        parts.append(members[rng.integers(0, len(members), size=len(members))])
    return np.sort(np.concatenate(parts))


def percentile_interval(values, level: float = 0.95) -> tuple:
    """Empirical percentile interval, linear interpolation between order statistics."""
    tail = (1.0 - level) / 2.0
    lo, hi = np.percentile(np.asarray(values, dtype=float), [100 * tail, 100 * (1 - tail)])
    return float(lo), float(hi)


def bootstrap(
    pipeline: Callable,
    d: ObservedDataset,
    n_boot: int = 1000,
    seed: int = 0,
    level: float = 0.95,
    point: Optional[dict] = None,
    stratify: bool = False,
    threads: Optional[int] = None,
) -> dict:
    """Nonparametric bootstrap percentile intervals for every cell.

    Replicate ``b`` resamples rows with the stream ``SeedSequence([seed, b])``
    so results do not depend on scheduling. ``stratify=True`` resamples
    within ``S`` groups, which changes the inferential target.
    """
    if n_boot < 2:
        raise ConfigError("n_boot must be at least 2")
    if stratify:
        warnings.warn(
            "bootstrap stratified by S changes the inferential target (fixed trial size)",
            TiltwiseWarning,
            stacklevel=2,
        )
    point = _values(pipeline(d)) if point is None else point
    strata = d.s if stratify else None
    results = _run_all(
        lambda b: _values(pipeline(d.take(bootstrap_indices(d.n, seed, b, strata)))),
        list(range(n_boot)),
        threads,
    )
    failed = sum(isinstance(r, Exception) for r in results)
    _check_failures(failed, n_boot, "bootstrap")

    out = {}
    for key, pt in point.items():
        vals = [r.get(key, np.nan) for r in results if not isinstance(r, Exception)]
        vals = np.asarray([v for v in vals if np.isfinite(v)])
        if len(vals) < 2:
            lo = hi = float("nan")
        else:
            lo, hi = percentile_interval(vals, level)
        out[key] = IntervalRow(key, pt, float("nan"), lo, hi, n_boot - len(vals), "bootstrap")
    return out


def run_plan(pipeline: Callable, d: ObservedDataset, plan: ReplicatePlan, **kw) -> dict:
    if plan.method == "jackknife":
        return jackknife(pipeline, d, level=plan.level, **kw)
    kw.pop("collapse_ties", None)
    return bootstrap(
        pipeline, d, n_boot=plan.n_boot, seed=plan.seed, level=plan.level, stratify=plan.stratify, **kw
    )
