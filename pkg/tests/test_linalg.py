import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sparcs.errors import (
    DimensionMismatch,
    SingularGram,
    TooFewSamples,
    ZeroVarianceColumn,
    ZeroVarianceResponse,
)
from sparcs.linalg import (
    DataMatrix,
    compute_moments,
    compute_uscores,
    cross_correlation,
    gram,
    gram_inverse,
    min_norm_ols,
    read_csv,
    response_uscores,
    write_csv,
)
from sparcs.simgen import orthogonal_uscore_design


def pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    return float(a @ b / np.sqrt((a @ a) * (b @ b)))


def centered_moments(x, y):
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    yc = y - y.mean()
    return xc.T @ xc / (n - 1), xc.T @ yc / (n - 1)


# -- U-scores ---------------------------------------------------------------

def test_identical_columns_have_unit_inner_product():
    x = np.random.default_rng(0).standard_normal(8)
    u = compute_uscores(np.column_stack([x, x])).scores
    assert np.allclose(u[:, 0], u[:, 1], atol=1e-12)
    assert u[:, 0] @ u[:, 1] == pytest.approx(1.0, abs=1e-12)


def test_negated_column_has_inner_product_minus_one():
    x = np.random.default_rng(1).standard_normal(8)
    u = compute_uscores(np.column_stack([x, -x])).scores
    assert u[:, 0] @ u[:, 1] == pytest.approx(-1.0, abs=1e-12)


def test_uscore_gram_matches_pearson_n6():
    x = np.random.default_rng(2).standard_normal((6, 5))
    u = compute_uscores(x)
    assert u.scores.shape == (5, 5)
    assert u.source_n == 6
    for i in range(5):
        assert np.linalg.norm(u.scores[:, i]) == pytest.approx(1.0, abs=1e-10)
        for j in range(5):
            assert u.scores[:, i] @ u.scores[:, j] == pytest.approx(pearson(x[:, i], x[:, j]), abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (7, 4), elements=st.floats(-1e3, 1e3, allow_nan=False)),
       st.floats(0.01, 100.0), st.floats(-50.0, 50.0))
def test_uscores_affine_invariance(x, scale, shift):
    x = x + np.arange(7)[:, None] * np.array([1.0, -2.0, 0.5, 3.0])  # keep variances positive
    u = compute_uscores(x).scores
    y = x.copy()
    y[:, 2] = scale * y[:, 2] + shift
    v = compute_uscores(y).scores
    assert np.allclose(u, v, atol=1e-10)
    z = x.copy()
    z[:, 1] = -z[:, 1]
    w = compute_uscores(z).scores
    assert np.allclose(w[:, 1], -u[:, 1], atol=1e-10)


def test_zero_variance_column_reports_index():
    x = np.random.default_rng(3).standard_normal((6, 4))
    x[:, 2] = 1.5
    with pytest.raises(ZeroVarianceColumn) as ei:
        compute_uscores(x)
    assert ei.value.index == 2


def test_too_few_samples():
    with pytest.raises(TooFewSamples):
        compute_uscores(np.random.default_rng(0).standard_normal((2, 3)))


# -- cross-correlation --------------------------------------------------------

def test_cross_correlation_with_own_column():
    x = np.random.default_rng(4).standard_normal((9, 6))
    ux = compute_uscores(x)
    r = cross_correlation(ux, response_uscores(x[:, 3]))
    assert r[3] == pytest.approx(1.0, abs=1e-12)
    assert np.all(np.abs(r) <= 1.0)


def test_cross_correlation_orthogonal_response_is_zero():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((10, 3))
    # null space of [1, x] gives a centered response orthogonal to every column
    y = np.linalg.svd(np.column_stack([np.ones(10), x]).T)[2][4]
    r = cross_correlation(compute_uscores(x), response_uscores(y))
    assert np.allclose(r, 0.0, atol=1e-12)


def test_cross_correlation_matches_pearson_random():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((30, 40))
    y = rng.standard_normal(30)
    r = cross_correlation(compute_uscores(x), response_uscores(y))
    want = [pearson(x[:, i], y) for i in range(40)]
    assert np.allclose(r, want, atol=1e-8)


def test_cross_correlation_dimension_mismatch():
    rng = np.random.default_rng(7)
    with pytest.raises(DimensionMismatch):
        cross_correlation(compute_uscores(rng.standard_normal((8, 3))),
                          response_uscores(rng.standard_normal(9)))


def test_constant_response_rejected():
    with pytest.raises(ZeroVarianceResponse):
        response_uscores(np.full(6, 2.0))


# -- Gram inverse -------------------------------------------------------------

def test_gram_inverse_orthogonal_design():
    x = orthogonal_uscore_design(11, 40, seed=3)
    ux = compute_uscores(x)
    assert np.allclose(gram_inverse(ux), (10 / 40) * np.eye(10), atol=1e-12)


def test_gram_inverse_rank_deficient():
    x = np.random.default_rng(8).standard_normal((10, 8))  # p = n - 2
    with pytest.raises(SingularGram):
        gram_inverse(compute_uscores(x))


def test_gram_inverse_matches_svd_oracle():
    x = np.random.default_rng(9).standard_normal((10, 50))
    ux = compute_uscores(x)
    g = gram(ux)
    uu, s, vt = np.linalg.svd(g)
    oracle = (vt.T / s) @ uu.T
    gi = gram_inverse(ux)
    assert np.allclose(gi, oracle, atol=1e-8)
    assert np.allclose(gi @ g, np.eye(9), atol=1e-8)


# -- moments and min-norm OLS ---------------------------------------------------

def test_moments_use_unbiased_convention():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((12, 4))
    y = rng.standard_normal(12)
    m = compute_moments(x, y)
    assert np.allclose(m.column_sds, x.std(axis=0, ddof=1))
    assert m.sy == pytest.approx(y.var(ddof=1))
    assert np.allclose(m.sxy, centered_moments(x, y)[1])


def test_min_norm_ols_univariate():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((9, 1))
    y = rng.standard_normal(9)
    sx, sxy = centered_moments(x, y)
    assert min_norm_ols(x, y)[0] == pytest.approx(sxy[0] / sx[0, 0], rel=1e-12)


def test_min_norm_ols_noiseless_recovery():
    x = np.random.default_rng(12).standard_normal((20, 5))
    b = min_norm_ols(x, 2.0 * x[:, 0])
    assert np.allclose(b, [2, 0, 0, 0, 0], atol=1e-8)


def test_min_norm_ols_matches_pinv_oracle():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((10, 100))
    y = rng.standard_normal(10)
    sx, sxy = centered_moments(x, y)
    oracle = np.linalg.pinv(sx) @ sxy
    b = min_norm_ols(x, y)
    assert np.linalg.norm(b - oracle) <= 1e-8 * np.linalg.norm(oracle)
    # row space of the centered data and projected normal equations
    xc = x - x.mean(axis=0)
    proj = xc.T @ np.linalg.pinv(xc.T)
    assert np.allclose(proj @ b, b, atol=1e-10)
    assert np.linalg.norm(sx @ b - sxy) <= 1e-8 * np.linalg.norm(sxy)


def test_min_norm_ols_errors():
    rng = np.random.default_rng(14)
    x = rng.standard_normal((6, 4))
    with pytest.raises(ZeroVarianceResponse):
        min_norm_ols(x, np.ones(6))
    x[:, 1] = 0.0
    with pytest.raises(ZeroVarianceColumn):
        min_norm_ols(x, rng.standard_normal(6))


# -- CSV ----------------------------------------------------------------------

def test_csv_round_trip_with_named_response(tmp_path):
    rng = np.random.default_rng(15)
    vals = rng.standard_normal((5, 3))
    path = tmp_path / "d.csv"
    write_csv(path, vals, ["a", "y", "b"])
    d = read_csv(path, "y")
    assert isinstance(d, DataMatrix)
    assert d.column_ids == ("a", "b")
    assert np.array_equal(d.values, vals[:, [0, 2]])
    assert np.array_equal(d.response, vals[:, 1])
    by_index = read_csv(path, 1)
    assert np.array_equal(by_index.response, vals[:, 1])
