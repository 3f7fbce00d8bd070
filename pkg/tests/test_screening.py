import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparcs.errors import InvalidL, SingularGram
from sparcs.linalg import compute_moments, compute_uscores, min_norm_ols, response_uscores
from sparcs.phase import rho_for_xi
from sparcs.screening import (
    Method,
    ScreeningScores,
    SupportSet,
    ols_from_h,
    pcs_h_parts,
    pcs_scores,
    score_data,
    screen,
    select_by_threshold,
    select_top_l,
    sis_scores,
    tilde_uscores,
)
from sparcs.simgen import make_rng, orthogonal_uscore_design


def scores(values, method=Method.SIS):
    return ScreeningScores(np.asarray(values, dtype=float), method)


# -- SIS ------------------------------------------------------------------------

def test_sis_copy_and_negated_copy_score_one():
    x = np.random.default_rng(0).standard_normal((12, 10))
    ux = compute_uscores(x)
    for y in (x[:, 7], -x[:, 7]):
        s = sis_scores(ux, response_uscores(y)).scores
        assert s[7] == pytest.approx(1.0, abs=1e-12)
        assert int(np.argmax(s)) == 7


def test_sis_ranks_strong_active_variable_first():
    hits = 0
    for trial in range(1000):
        rng = make_rng([99, trial])
        x = rng.standard_normal((50, 100))
        j = int(rng.integers(100))
        y = 5.0 * x[:, j] + np.sqrt(0.05) * rng.standard_normal(50)
        s = sis_scores(compute_uscores(x), response_uscores(y)).scores
        hits += int(np.argmax(s)) == j
    assert hits >= 990


# -- PCS --------------------------------------------------------------------------

def test_pcs_h_equals_sis_on_orthogonal_design():
    x = orthogonal_uscore_design(21, 60, seed=4)
    y = np.random.default_rng(1).standard_normal(21)
    ux, uy = compute_uscores(x), response_uscores(y)
    h = pcs_scores(ux, uy, "H").scores
    r = sis_scores(ux, uy).scores
    assert np.allclose(h, r, atol=1e-8)


def test_tilde_columns_unit_norm_and_scores_bounded():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((15, 80))
    ux = compute_uscores(x)
    t = tilde_uscores(ux).scores
    assert np.allclose(np.linalg.norm(t, axis=0), 1.0, atol=1e-8)
    h = pcs_scores(ux, response_uscores(rng.standard_normal(15)), "H").scores
    assert np.all((h >= 0) & (h <= 1))


def test_pcs_response_equal_to_variable_on_orthogonal_design():
    x = orthogonal_uscore_design(11, 30, seed=5)
    s = pcs_scores(compute_uscores(x), response_uscores(x[:, 7]), "H").scores
    assert int(np.argmax(s)) == 7


def test_pcs_b_is_exact_min_norm_ols():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((10, 100)) * rng.uniform(0.5, 3.0, 100)
    y = rng.standard_normal(10)
    got = pcs_scores(compute_uscores(x), response_uscores(y), "B", compute_moments(x, y))
    assert np.allclose(got.signed, min_norm_ols(x, y), rtol=1e-8, atol=1e-12)


def test_h_to_b_factor_exact_for_standardized_data():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((12, 60))
    x = (x - x.mean(axis=0)) / x.std(axis=0, ddof=1)
    y = rng.standard_normal(12)
    ux, uy = compute_uscores(x), response_uscores(y)
    m = compute_moments(x, y)
    h, dtilde = pcs_h_parts(ux, uy)
    assert np.allclose(ols_from_h(h, dtilde, m), min_norm_ols(x, y), rtol=1e-8, atol=1e-12)


def test_pcs_b_ordering_matches_pcs_h_standardized_orthogonal():
    x = orthogonal_uscore_design(11, 50, seed=6)
    x = x / x.std(axis=0, ddof=1)
    y = np.random.default_rng(5).standard_normal(11)
    ux, uy = compute_uscores(x), response_uscores(y)
    h = pcs_scores(ux, uy, "H")
    b = pcs_scores(ux, uy, "B", compute_moments(x, y))
    assert select_top_l(h, 50).indices == select_top_l(b, 50).indices


def test_pcs_singular_gram():
    # 12 columns but only 5 distinct ones: rank-deficient 9 x 9 Gram matrix
    base = np.random.default_rng(6).standard_normal((10, 5))
    x = base[:, [0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 0, 1]]
    with pytest.raises(SingularGram):
        pcs_scores(compute_uscores(x), response_uscores(np.arange(10.0)), "H")


def test_pcs_with_fewer_variables_than_samples_is_ols():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((40, 6)) * rng.uniform(0.5, 2.0, 6)
    y = x @ [1.0, 0.0, -2.0, 0.5, 0.0, 0.0] + 0.1 * rng.standard_normal(40)
    ux, uy = compute_uscores(x), response_uscores(y)
    b = pcs_scores(ux, uy, "B", compute_moments(x, y)).signed
    assert np.allclose(b, min_norm_ols(x, y), rtol=1e-8)
    h, dtilde = pcs_h_parts(ux, uy)
    assert np.all(np.abs(h) <= 1)
    # H and B agree up to positive per-variable factors
    assert np.all(np.sign(h) == np.sign(b))


# -- selection -------------------------------------------------------------------

def test_top_l_examples():
    assert select_top_l(scores([0.9, 0.1, 0.5]), 2).indices == (0, 2)
    assert select_top_l(scores([0.3, 0.3, 0.3, 0.3]), 2).indices == (0, 1)
    full = select_top_l(scores([0.2, 0.7, 0.5]), 3)
    assert full.indices == (1, 2, 0)
    assert full.rho == (0.7, 0.5, 0.2)


@pytest.mark.parametrize("l", [0, 4, 1.5, True])
def test_top_l_invalid(l):
    with pytest.raises(InvalidL):
        select_top_l(scores([0.1, 0.2, 0.3]), l)


def test_threshold_examples():
    s = scores([0.2, 0.9, 0.4, 0.6])
    assert select_by_threshold(s, 1.0).indices == ()
    assert set(select_by_threshold(s, 0.0).indices) == {0, 1, 2, 3}
    sel = select_by_threshold(s, 0.4)
    assert sel.indices == (1, 3)
    assert sel.threshold_used == 0.4


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0, 1), st.floats(0, 1))
def test_threshold_monotone_and_consistent_with_top_l(vals, r1, r2):
    s = scores(vals)
    lo, hi = min(r1, r2), max(r1, r2)
    a, b = select_by_threshold(s, lo), select_by_threshold(s, hi)
    assert b.as_set() <= a.as_set()
    if len(b) and not np.any(np.asarray(vals) == hi):
        assert select_top_l(s, len(b)).as_set() == b.as_set()


def test_threshold_count_matches_poisson_mean_under_null():
    p, n, trials = 2000, 6, 2000
    rho = rho_for_xi(p, n, 1.0)
    counts = []
    for t in range(trials):
        rng = make_rng([7, t])
        s = sis_scores(compute_uscores(rng.standard_normal((n, p))),
                       response_uscores(rng.standard_normal(n)))
        counts.append(len(select_by_threshold(s, rho)))
    c = np.asarray(counts, dtype=float)
    se = c.std(ddof=1) / np.sqrt(trials)
    assert abs(c.mean() - 1.0) <= 3 * se


def test_scale_invariance_of_rankings():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((15, 60))
    y = x[:, :3].sum(axis=1) + rng.standard_normal(15)
    scaled = x * rng.uniform(0.1, 10.0, 60)
    for method in ("SIS", "PCS_H"):
        assert screen(x, y, method, l=10).indices == screen(scaled, y, method, l=10).indices


def test_support_json_round_trip():
    x = np.random.default_rng(9).standard_normal((12, 30))
    sup = screen(x, x[:, 4] + x[:, 9], "pcs", l=5)
    back = SupportSet.from_json(sup.to_json([f"v{i}" for i in range(30)]))
    assert back == sup
    assert Method.parse("pcs") is Method.PCS_H
    doc = sup.to_dict()
    assert set(doc) == {"method", "threshold", "entries"}
    assert set(doc["entries"][0]) == {"index", "score"}


def test_score_data_dispatch():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((10, 40))
    y = rng.standard_normal(10)
    assert score_data(x, y, "SIS").method is Method.SIS
    assert score_data(x, y, "PCS_B").method is Method.PCS_B
