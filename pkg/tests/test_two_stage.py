import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparcs.errors import (
    DimensionMismatch,
    InvalidParams,
    SingularRestrictedCovariance,
    SupportMismatch,
)
from sparcs.linalg import DataMatrix
from sparcs.screening import Method
from sparcs.simgen import (
    CovarianceSpec,
    make_rng,
    sample_gaussian,
)
from sparcs.two_stage import (
    TwoStageModel,
    allocate_budget,
    fit,
    ols_fit,
    predict,
    predict_stream,
    rmse,
)


# -- budget rule ------------------------------------------------------------------

def test_budget_example():
    plan = allocate_budget(20000, 1000, 100, 100, 1.0)
    assert 900 * math.log(100) + 1e4 == pytest.approx(14144.7, abs=0.1)
    assert plan.feasible
    assert plan.n_alloc == 5
    assert plan.cost <= 20000


def test_budget_zero_is_infeasible():
    plan = allocate_budget(0, 1000, 100, 100, 1.0)
    assert not plan.feasible and plan.n_alloc == 0


def test_budget_floor_applies():
    assert allocate_budget(1e9, 50, 5, 2, 1.0).n_alloc == 2  # capped at t
    assert allocate_budget(1e9, 50, 5, 10, 0.1).n_alloc == 3


@pytest.mark.parametrize("args", [
    (100, 10, 10, 5, 1.0), (100, 10, 0, 5, 1.0), (100, 10, 2, 0, 1.0),
    (100, 10, 2, 5, 0.0), (-1, 10, 2, 5, 1.0), (100, 10.0, 2, 5, 1.0)])
def test_budget_invalid(args):
    with pytest.raises(InvalidParams):
        allocate_budget(*args)


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1e6), st.integers(2, 3000), st.integers(1, 5000), st.floats(0.05, math.e))
def test_budget_invariants(mu, p, t, c):
    k = max(1, p // 10)
    plan = allocate_budget(mu, p, k, t, c)
    if plan.feasible:
        assert plan.n_alloc * p + (t - plan.n_alloc) * k <= mu
        assert 0 <= plan.n_alloc <= t
    else:
        assert plan.n_alloc == 0
    more = allocate_budget(mu * 1.5 + 1, p, k, t, c)
    assert more.n_alloc >= plan.n_alloc
    if k + 1 < p:
        assert not (allocate_budget(mu, p, k + 1, t, c).feasible and not plan.feasible)


# -- fit and predict ------------------------------------------------------------------

def test_noiseless_single_variable():
    x = np.random.default_rng(0).standard_normal((30, 5))
    y = 2.0 * x[:, 0]
    m = fit(x[:10], y[:10], x[10:], y[10:], "PCS_H", 1)
    assert m.support.indices == (0,)
    assert m.coefficients[0] == pytest.approx(2.0, abs=1e-6)
    assert m.intercept == pytest.approx(0.0, abs=1e-6)
    assert predict(m, [3.0]) == pytest.approx(6.0, abs=1e-6)


def test_l_equal_t_is_singular():
    x = np.random.default_rng(1).standard_normal((8, 20))
    y = x[:, 0] + x[:, 1]
    with pytest.raises(SingularRestrictedCovariance):
        fit(x[:5], y[:5], x[5:], y[5:], "SIS", 8)


def test_ridge_flag_regularizes():
    x = np.random.default_rng(2).standard_normal((6, 4))
    x[:, 3] = x[:, 2]
    y = x[:, 0]
    with pytest.raises(SingularRestrictedCovariance):
        ols_fit(x, y)
    coef, _, cond = ols_fit(x, y, ridge=True)
    assert np.all(np.isfinite(coef)) and cond < 1e12


def test_support_mismatch():
    x = np.random.default_rng(3).standard_normal((20, 10))
    y = x[:, 0]
    with pytest.raises(SupportMismatch):
        fit(x[:8], y[:8], x[8:, :4], y[8:], "SIS", 2)
    s1 = DataMatrix(x[:8], tuple(f"v{i}" for i in range(10)), y[:8])
    s2 = DataMatrix(x[8:, 5:], tuple(f"v{i}" for i in range(5, 10)), y[8:])
    with pytest.raises(SupportMismatch):
        fit(s1, None, s2, None, "SIS", 1)


def test_stage2_matched_by_column_id():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((40, 12))
    y = 3.0 * x[:, 7] - x[:, 2]
    ids = tuple(f"c{i}" for i in range(12))
    s1 = DataMatrix(x[:15], ids, y[:15])
    perm = [7, 0, 2, 5]
    s2 = DataMatrix(x[15:, perm], tuple(ids[i] for i in perm), y[15:])
    m = fit(s1, None, s2, None, "PCS", 2)
    assert set(m.column_ids) == {"c7", "c2"}
    direct = fit(x[:15], y[:15], x[15:], y[15:], "PCS", 2)
    assert np.allclose(m.coefficients, direct.coefficients, atol=1e-10)


def test_in_sample_matches_dense_ols_and_residual_mean_zero():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((60, 30))
    y = x[:, :4] @ [1.0, -2.0, 0.5, 1.5] + 0.3 * rng.standard_normal(60)
    m = fit(x[:20], y[:20], x[20:], y[20:], "PCS_H", 6)
    xs = x[:, list(m.support.indices)]
    design = np.column_stack([np.ones(60), xs])
    beta = np.linalg.lstsq(design, y, rcond=None)[0]
    assert np.allclose(predict(m, xs), design @ beta, atol=1e-8)
    assert abs(np.mean(y - predict(m, xs))) <= 1e-8
    assert len(m.coefficients) == len(m.support)


def test_full_support_reproduces_ols():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((50, 5))
    y = x @ [1.0, 2.0, 3.0, -1.0, 0.5] + rng.standard_normal(50)
    m = fit(x, y, None, None, "SIS", 5)
    order = list(m.support.indices)
    beta = np.linalg.lstsq(np.column_stack([np.ones(50), x[:, order]]), y, rcond=None)[0]
    assert np.allclose(m.coefficients, beta[1:], atol=1e-8)
    assert m.intercept == pytest.approx(beta[0], abs=1e-8)


def test_t_equal_n_is_single_stage():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((25, 40))
    y = x[:, 3] - x[:, 9] + 0.1 * rng.standard_normal(25)
    m = fit(x, y, None, None, "PCS", 3)
    coef, icpt, _ = ols_fit(x[:, list(m.support.indices)], y)
    assert np.allclose(m.coefficients, coef) and m.intercept == icpt
    assert m.t_total == m.n_stage1 == 25


def test_no_reuse_fits_stage2_rows_only():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((50, 20))
    y = x[:, 1] + 0.2 * rng.standard_normal(50)
    m = fit(x[:10], y[:10], x[10:], y[10:], "PCS", 2, reuse_stage1=False)
    coef, _, _ = ols_fit(x[10:, list(m.support.indices)], y[10:])
    assert np.allclose(m.coefficients, coef)
    assert m.diagnostics["fit_samples"] == 40


def test_block_sparse_support_recovery_rate():
    t, k, p, noise = 200, 10, 500, 0.05
    n = math.ceil(25 * math.log(t))
    spec = CovarianceSpec.default(p)
    omega = spec.matrix()
    # equal magnitudes on a spread-out support maximize the population gap
    support = np.arange(k) * 48 + 20
    a = np.zeros(p)
    a[support] = 1.0
    corr = omega @ a / math.sqrt(a @ omega @ a + noise)
    inactive = np.setdiff1d(np.arange(p), support)
    gap = float(np.min(np.abs(corr[support])) - np.max(np.abs(corr[inactive])))
    hits = 0
    for trial in range(200):
        rng = make_rng([11, trial])
        x = sample_gaussian(spec, t, rng).values
        y = x @ a + math.sqrt(noise) * rng.standard_normal(t)
        m = fit(x[:n], y[:n], x[n:], y[n:], "PCS_H", k)
        hits += m.support.as_set() == set(support.tolist())
    assert gap >= 0.3 and hits >= 180, f"population gap {gap:.4f}, exact recoveries {hits}/200"


def test_predict_contract():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((20, 6))
    m = fit(x, x[:, 0] + 1.0, None, None, "SIS", 2)
    zero = TwoStageModel(m.support, np.zeros(2), 4.5, 20, 20, Method.SIS)
    assert predict(zero, [1.0, -3.0]) == 4.5
    assert list(predict_stream(zero, [[0, 0], [1, 1]])) == [4.5, 4.5]
    with pytest.raises(DimensionMismatch):
        predict(m, [1.0, 2.0, 3.0])


def test_model_json_round_trip():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((30, 8))
    m = fit(x, x[:, 2] - x[:, 5], None, None, "PCS_B", 2)
    back = TwoStageModel.from_json(m.to_json())
    assert back.support == m.support
    assert np.array_equal(back.coefficients, m.coefficients)
    assert back.intercept == m.intercept and back.method is Method.PCS_B


# -- rmse ------------------------------------------------------------------------------

def test_rmse_examples():
    assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rmse([0.0, 0.0], [1.0, 1.0]) == 1.0
    rng = np.random.default_rng(11)
    a, b = rng.standard_normal(101), rng.standard_normal(101)
    assert rmse(a, b) == pytest.approx(math.sqrt(sum((a - b) ** 2) / 101), abs=1e-12)
    with pytest.raises(DimensionMismatch):
        rmse([1.0], [1.0, 2.0])
    with pytest.raises(DimensionMismatch):
        rmse([], [])
