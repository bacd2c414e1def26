import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tiltwise.errors import (
    ConfigError,
    ConvergenceError,
    DimensionError,
    FitError,
    SeparationError,
    TiltwiseWarning,
)
from tiltwise.fixtures import fixture_12
from tiltwise.models import (
    EPS_CLIP,
    KnownConstant,
    fit_forest,
    fit_logistic,
    fit_model,
    fit_nuisances,
    fit_stratified,
    predict_prob,
    tree_seed,
)


def _loglik(b0, b1, x, y):
    eta = b0 + b1 * x
    return np.sum(y * eta - np.logaddexp(0.0, eta))


def test_intercept_only_is_logit_of_mean():
    y = np.array([1, 0, 0, 0] * 5, dtype=float)
    fit = fit_logistic(np.zeros((20, 0)), y)
    assert fit.coefficients[0] == pytest.approx(math.log(0.25 / 0.75), abs=1e-6)
    assert fit.converged


def test_symmetric_design_zero_intercept():
    x = np.array([-2.0, -1.0, 1.0, 2.0])
    y = np.array([0.0, 1.0, 0.0, 1.0])
    fit = fit_logistic(x, y)
    assert abs(fit.coefficients[0]) < 1e-8


def test_logistic_matches_grid_search():
    rng = np.random.default_rng(1)
    x = rng.normal(size=200)
    y = (rng.uniform(size=200) < 1 / (1 + np.exp(-(0.3 + 0.8 * x)))).astype(float)
    fit = fit_logistic(x, y)
    # brute force: coarse grid, then refine around the best cell
    b0s, b1s = np.linspace(-2, 2, 401), np.linspace(-2, 2, 401)
    best = max(((a, b) for a in b0s[::10] for b in b1s[::10]), key=lambda ab: _loglik(*ab, x, y))
    fine0 = np.linspace(best[0] - 0.1, best[0] + 0.1, 201)
    fine1 = np.linspace(best[1] - 0.1, best[1] + 0.1, 201)
    grid = np.array([[_loglik(a, b, x, y) for b in fine1] for a in fine0])
    i, j = np.unravel_index(np.argmax(grid), grid.shape)
    assert fit.coefficients[0] == pytest.approx(fine0[i], abs=1e-3)
    assert fit.coefficients[1] == pytest.approx(fine1[j], abs=1e-3)
    assert fit.final_gradient_norm <= 1e-8


def test_prediction_example():
    fit = fit_logistic(np.zeros((4, 0)), np.array([1.0, 1.0, 1.0, 0.0]))
    assert predict_prob(fit, np.zeros(0)) == pytest.approx(0.75, abs=1e-9)


def test_weighted_equals_replicated():
    x = np.array([0.0, 0.0, 1.0, 1.0, 2.0])
    y = np.array([0.0, 1.0, 0.0, 1.0, 1.0])
    w = np.array([1.0, 2.0, 3.0, 1.0, 2.0])
    rep = np.repeat(np.arange(5), w.astype(int))
    a = fit_logistic(x, y, weights=w)
    b = fit_logistic(x[rep], y[rep])
    np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-8)


def test_identical_labels_raise():
    with pytest.raises(SeparationError):
        fit_logistic(np.arange(5.0), np.ones(5))


def test_separation_detected_and_ridge_rescues():
    x = np.array([0.0, 0.0, 1.0, 1.0])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    with pytest.raises(SeparationError):
        fit_logistic(x, y)
    fit = fit_logistic(x, y, ridge=1.0)
    assert fit.ridge_used == 1.0
    p = fit.predict(np.array([[0.0], [1.0]]))
    assert p[0] < 0.5 < p[1]


def test_quasi_separation_detected():
    x = np.array([0.0, 0.0, 1.0, 1.0, 1.0])
    y = np.array([0.0, 0.0, 0.0, 1.0, 1.0])
    with pytest.raises(SeparationError):
        fit_logistic(x, y)


def test_pure_strata_auto_ridge_stays_close():
    x = np.array([0.0, 0.0, 1.0, 1.0])
    y = np.array([0.0, 1.0, 1.0, 1.0])
    with pytest.warns(TiltwiseWarning, match="ridge"):
        fit = fit_model({"type": "logistic"}, x, y)
    p = fit.predict(np.array([[0.0], [1.0]]))
    assert p[0] == pytest.approx(0.5, abs=0.01)
    assert p[1] > 0.99


def test_max_iter_behavior():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(100, 2))
    y = (rng.uniform(size=100) < 0.4).astype(float)
    with pytest.raises(ConvergenceError):
        fit_logistic(x, y, max_iter=1)
    fit = fit_logistic(x, y, max_iter=1, best_effort=True)
    assert not fit.converged and fit.iterations == 1


def test_clipping():
    fit = fit_logistic(np.array([0.0, 0.0, 1.0, 1.0]), np.array([0.0, 1.0, 0.0, 1.0]))
    big = fit.predict(np.array([[1e6]]))
    assert 0 < big[0] <= 1
    m = KnownConstant(1.0)
    assert m.predict(np.zeros((3, 1)))[0] == 1 - EPS_CLIP
    assert KnownConstant(0.0).predict(np.zeros((1, 1)))[0] == EPS_CLIP


def test_dimension_mismatch():
    fit = fit_logistic(np.random.default_rng(0).normal(size=(20, 2)), np.array([0.0, 1.0] * 10))
    with pytest.raises(DimensionError):
        fit.predict(np.zeros((3, 3)))


def test_stratified_is_cell_proportion():
    x = np.array([0, 0, 0, 1, 1], dtype=float)
    y = np.array([1, 0, 0, 1, 1], dtype=float)
    m = fit_stratified(x, y, clip=0.0)
    np.testing.assert_allclose(m.predict(np.array([[0.0], [1.0]])), [1 / 3, 1.0])
    with pytest.raises(DimensionError):
        m.predict(np.array([[2.0]]))


def test_fit_nuisances_fixture():
    nb = fit_nuisances(fixture_12(), {"p": "stratified", "e": 0.5, "g": "stratified"})
    x = np.array([[0.0], [1.0]])
    np.testing.assert_allclose(nb.p(x), [2 / 3, 2 / 3])
    np.testing.assert_allclose(nb.e(1, x), [0.5, 0.5])
    np.testing.assert_allclose(nb.g(1, x), [0.5, 1 - EPS_CLIP])
    np.testing.assert_allclose(nb.g(0, x), [EPS_CLIP, 0.5])


def test_e0_is_complement():
    nb = fit_nuisances(fixture_12(), {"p": "logistic", "e": "logistic", "g": "stratified"})
    x = np.array([[0.0], [1.0]])
    np.testing.assert_allclose(nb.e(0, x), 1 - nb.e(1, x))


def test_fit_model_config_errors():
    with pytest.raises(ConfigError):
        fit_model({"type": "svm"}, np.zeros((3, 1)), np.array([0.0, 1.0, 0.0]))
    with pytest.raises(ConfigError):
        fit_model({"type": "known"}, None, None)
    with pytest.raises(FitError):
        fit_logistic(np.zeros((0, 1)), np.zeros(0))


# forest

def _xor_data(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(n, 2))
    y = ((x[:, 0] > 0.5) ^ (x[:, 1] > 0.5)).astype(float)
    return x, y


def test_forest_mtry_too_large():
    with pytest.raises(ConfigError):
        fit_forest(np.zeros((10, 3)), np.arange(10) % 2, mtry=5)


def test_forest_deterministic_under_seed():
    x, y = _xor_data(100, 3)
    a = fit_forest(x, y, n_trees=20, mtry=2, seed=9)
    b = fit_forest(x, y, n_trees=20, mtry=2, seed=9)
    grid = np.random.default_rng(0).uniform(size=(50, 2))
    assert a.predict(grid).tobytes() == b.predict(grid).tobytes()
    c = fit_forest(x, y, n_trees=20, mtry=2, seed=10)
    assert not np.array_equal(a.predict(grid), c.predict(grid))


def test_single_tree_trace():
    # distinct covariate values except one duplicated pattern with mixed labels
    x = np.array([[0.0], [1.0], [2.0], [3.0], [4.0], [4.0]])
    y = np.array([0.0, 1.0, 1.0, 0.0, 1.0, 0.0])
    forest = fit_forest(x, y, n_trees=1, mtry=1, seed=5, clip=0.0)
    rng = np.random.default_rng(tree_seed(5, 0))
    rows = rng.integers(0, 6, size=6)
    counts = np.bincount(rows, minlength=6)
    np.testing.assert_array_equal(forest.trees[0].in_bag, counts > 0)
    pred = forest.predict(x)
    for i in range(4):
        if counts[i]:
            assert pred[i] == y[i]
    dup = counts[4] + counts[5]
    if dup:
        assert pred[4] == pytest.approx(counts[4] / dup)


def test_forest_oob_error_small():
    x, y = _xor_data(500, 4)
    forest = fit_forest(x, y, n_trees=100, mtry=2, seed=1)
    assert forest.oob_error(x, y) < 0.10


def test_forest_predictions_in_range():
    x, y = _xor_data(60, 5)
    forest = fit_forest(x, y, n_trees=10, mtry=1, seed=2)
    p = forest.predict(np.random.default_rng(1).uniform(-1, 2, size=(40, 2)))
    assert np.all((p >= EPS_CLIP) & (p <= 1 - EPS_CLIP))


def test_forest_rejects_weights():
    with pytest.raises(ConfigError):
        fit_model({"type": "forest"}, np.zeros((4, 1)), np.array([0.0, 1, 0, 1]), weights=np.ones(4))


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(8, 60),
    seed=st.integers(0, 10_000),
    beta=st.tuples(st.floats(-2, 2), st.floats(-2, 2)),
)
def test_logistic_score_zero_or_separated(n, seed, beta):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-(beta[0] + beta[1] * x)))).astype(float)
    try:
        fit = fit_logistic(x, y)
    except SeparationError:
        return
    p = 1 / (1 + np.exp(-fit.linear_predictor(x)))
    score = np.array([np.sum(y - p), np.sum(x * (y - p))])
    assert np.max(np.abs(score)) < 1e-6
    pr = fit.predict(x)
    assert np.all((pr >= EPS_CLIP) & (pr <= 1 - EPS_CLIP))


def _fixture_arm1():
    d = fixture_12()
    m = d.arm_mask(1)
    return d.x[m], d.y[m]


def test_fixture_pure_stratum_ridge_predictions():
    x, y = _fixture_arm1()
    with pytest.raises(SeparationError):
        fit_model({"type": "logistic", "auto_ridge": False}, x, y)
    with pytest.warns(TiltwiseWarning):
        fit = fit_model({"type": "logistic"}, x, y)
    p = fit.predict(np.array([[0.0], [1.0]]))
    assert p[0] == pytest.approx(0.5, abs=0.01)
    assert p[1] == pytest.approx(1 - EPS_CLIP, abs=0.01)


def _tree_oracle(xb, yb, at):
    # a purity-grown tree on one binary feature: split on x only when both values appear
    same = xb == at
    return float(np.mean(yb[same])) if same.any() else float(np.mean(yb))


def test_fixture_forest_matches_bootstrap_expectation():
    x, y = _fixture_arm1()
    draws = np.array(np.meshgrid(*[np.arange(4)] * 4)).reshape(4, -1).T
    for at in (0.0, 1.0):
        per_draw = np.array([_tree_oracle(x[r, 0], y[r], at) for r in draws])
        expected, sd = per_draw.mean(), per_draw.std()
        forest = fit_forest(x, y, n_trees=2000, mtry=1, seed=3)
        got = forest.predict(np.array([[at]]))[0]
        assert abs(got - min(expected, 1 - EPS_CLIP)) <= 4 * sd / math.sqrt(2000) + 1e-12


def test_forest_oob_one_feature_rule():
    rng = np.random.default_rng(6)
    x = rng.uniform(size=(500, 3))
    y = (x[:, 1] > 0.4).astype(float)
    forest = fit_forest(x, y, n_trees=200, mtry=2, seed=0)
    assert forest.oob_error(x, y) < 0.10


@pytest.mark.parametrize("ridge", [0.0, 0.5, 3.0])
def test_penalized_score_at_convergence(ridge):
    rng = np.random.default_rng(12)
    x = rng.normal(size=(150, 3))
    y = (rng.uniform(size=150) < 0.35).astype(float)
    fit = fit_logistic(x, y, ridge=ridge)
    xd = np.column_stack([np.ones(150), x])
    p = 1 / (1 + np.exp(-(xd @ fit.coefficients)))
    assert np.linalg.norm(xd.T @ (y - p) - ridge * fit.coefficients) <= 1e-8
