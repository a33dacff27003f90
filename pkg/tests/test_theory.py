import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crowdbudget import FixedP, SpammerHammer, ValidationError
from crowdbudget.theory import (
    TheoryParams,
    adaptive_counterexample_bound,
    de_moments,
    de_monte_carlo,
    k0_m0,
    local_tree_bound,
    lower_bounds,
    majority_upper_bound,
    sigma_inf_sq,
    sigma_k_sq,
    sigma_tilde_k_sq,
    sufficient_budget,
    theorem1_bound,
    theory_report,
)


def P(l, r, q, mu=None, m=None):
    return TheoryParams(l, r, q, q if mu is None else mu, m)


# independent term-by-term evaluation used as the oracle for the closed forms
def _sigma_k_sq_oracle(l, r, q, mu, k):
    lh, rh = l - 1, r - 1
    total = 2 * q / (mu * mu * (q * q * lh * rh) ** (k - 1))
    for a in range(k - 1):
        total += (3 + 1 / (q * rh)) / (q * q * lh * rh) ** a
    return total


def test_sigma_k_reference_value():
    assert sigma_k_sq(P(5, 5, 0.3), 2) == pytest.approx(8.462962962962964, rel=1e-12)
    assert sigma_k_sq(P(5, 5, 0.3), 2) == pytest.approx(_sigma_k_sq_oracle(5, 5, 0.3, 0.3, 2), rel=1e-12)


@given(st.integers(2, 40), st.integers(2, 40), st.floats(0.05, 1), st.integers(1, 12))
def test_sigma_k_matches_oracle(l, r, q, k):
    p = P(l, r, q)
    if p.growth == 1:
        return
    assert sigma_k_sq(p, k) == pytest.approx(_sigma_k_sq_oracle(l, r, q, q, k), rel=1e-9)


def test_sigma_k_first_round():
    assert sigma_k_sq(P(5, 5, 0.3, 0.2), 1) == pytest.approx(2 * 0.3 / 0.04)


def test_sigma_k_converges_geometrically():
    p = P(30, 30, 0.3)
    lim = sigma_inf_sq(p)
    gaps = np.array([abs(sigma_k_sq(p, k) - lim) for k in range(1, 51)])
    assert np.all(np.diff([sigma_k_sq(p, k) for k in range(1, 51)]) <= 0)
    # beyond a few rounds the gap is lost in rounding
    ratios = gaps[1:5] / gaps[:4]
    assert np.allclose(ratios, 1 / p.growth, rtol=1e-6)
    assert gaps[-1] < 1e-12


def test_sigma_k_rejects_transition_point():
    with pytest.raises(ValidationError):
        sigma_k_sq(P(3, 3, 0.5), 2)  # q^2 lhat rhat = 1


def test_sigma_inf_reference_and_limits():
    assert sigma_inf_sq(P(30, 30, 0.3)) == pytest.approx(3.1566474762351056, rel=1e-12)
    assert round(sigma_inf_sq(P(30, 30, 0.3)), 3) == 3.157
    assert sigma_inf_sq(P(10 ** 6, 10 ** 6, 1.0)) == pytest.approx(3.0, abs=1e-5)
    with pytest.raises(ValidationError):
        sigma_inf_sq(P(3, 3, 0.3))


def test_sigma_tilde_first_round_and_growth():
    p = P(5, 5, 0.3)
    assert sigma_tilde_k_sq(p, 1) == pytest.approx(2 * 4)
    assert sigma_tilde_k_sq(p, 3) > sigma_tilde_k_sq(p, 2) > sigma_tilde_k_sq(p, 1)


def test_theorem1_reference():
    b = theorem1_bound(P(5, 5, 0.3, m=1000), 2)
    assert b.de_term == pytest.approx(math.exp(-5 * 0.3 / (2 * 8.462962962962964)), rel=1e-12)
    assert round(b.de_term, 3) == 0.915
    assert b.tree_term == pytest.approx(19.2)
    assert b.vacuous and b.hypotheses_hold


def test_theorem1_tree_term_limits():
    assert theorem1_bound(P(6, 6, 0.5, m=500), 1).tree_term == pytest.approx(3 * 36 / 500)
    big = theorem1_bound(P(6, 6, 0.5, m=10 ** 15), 3)
    assert big.total == pytest.approx(big.de_term, rel=1e-6)


def test_de_term_decreasing_in_l():
    terms = [theorem1_bound(P(l, 10, 0.3, m=1000), 3).de_term for l in range(5, 40)]
    assert np.all(np.diff(terms) < 0)


def test_k0_m0_reference():
    k0, m0 = k0_m0(P(30, 30, 0.3))
    assert k0 == 2
    raw = 1 + math.log(0.3 / 0.09) / math.log(0.09 * 29 * 29)
    assert raw == pytest.approx(1.278, abs=1e-3)
    assert m0 == pytest.approx(3 * 900 * math.exp(9 / (4 * sigma_inf_sq(P(30, 30, 0.3)))) * 841 ** 2, rel=1e-12)
    assert 3.8e9 < m0 < 4.0e9
    assert k0_m0(P(30, 30, 0.25, 0.5))[0] == 1
    with pytest.raises(ValidationError):
        k0_m0(P(3, 3, 0.3))


def test_sufficient_budget():
    b = sufficient_budget(0.3, 0.05, 30)
    assert b.large_r_applies and b.queries == 394
    assert sufficient_budget(0.3, 0.5, 30).large_r == pytest.approx(32 / 0.3 * math.log(4))
    small = sufficient_budget(0.3, 0.05, 2)
    assert not small.large_r_applies and small.any_r > small.large_r
    with pytest.raises(ValidationError):
        sufficient_budget(0.3, 0.6, 30)
    qs = np.linspace(0.05, 1, 30)
    assert np.all(np.diff([sufficient_budget(q, 0.05, 100).large_r for q in qs]) < 0)


def test_lower_bounds():
    lb = lower_bounds(0.3, 10, 0.05)
    assert lb["oracle_nonadaptive"].value == pytest.approx(0.5 * math.exp(-3.9))
    assert round(lb["oracle_nonadaptive"].value, 4) == 0.0101
    assert lb["necessary_budget_nonadaptive"].value == pytest.approx(math.log(10) / 0.6)
    assert round(lb["necessary_budget_nonadaptive"].value, 2) == 3.84
    assert lb["adaptive_minimax"].value == pytest.approx(0.5 * math.exp(-0.3 * 10 / 0.27))
    assert "constant" in lb["majority"].note
    assert not lower_bounds(0.7, 10)["oracle_nonadaptive"].valid
    assert all(b.value == 0.5 for b in lower_bounds(0.3, 0).values())
    vals = [lower_bounds(0.3, l)["oracle_nonadaptive"].value for l in range(1, 30)]
    assert np.all(np.diff(vals) < 0)


def test_majority_upper_bound():
    assert majority_upper_bound(0.3, 15) == pytest.approx(math.exp(-15 * 0.09 / 4))
    assert round(majority_upper_bound(0.3, 15), 3) == 0.714
    assert majority_upper_bound(0.0, 50) == 1.0
    assert majority_upper_bound(1.0, 16) == pytest.approx(math.exp(-4))


def test_adaptive_bound_reference():
    b = adaptive_counterexample_bound(400, 6, 0.5)
    assert 400 * 36 * 2 ** -20 == pytest.approx(0.01373, abs=1e-5)
    assert b == pytest.approx(400 * 36 * 2 ** -20 + math.exp(-20 / 3))
    assert round(b, 4) == 0.0150
    with pytest.raises(ValidationError):
        adaptive_counterexample_bound(400, 4, 0.5)


def test_local_tree_bound():
    assert local_tree_bound(5, 5, 1000, 1) == pytest.approx(0.075)
    assert local_tree_bound(5, 5, 1000, 2) == pytest.approx(19.2)


# ---------------------------------------------------------------- density evolution


def test_de_first_round():
    d = de_moments(P(5, 5, 0.3), 1)
    assert d.mean == pytest.approx(1.2)
    # E[y0^2] = 2 for N(1, 1) starts, so v1 = lhat (2 - mu^2)
    assert d.var == pytest.approx(4 * (2 - 0.09))
    # a start with second moment 4 reproduces lhat (4 - mu^2)
    assert de_moments(P(5, 5, 0.3), 1, init_var=3.0).var == pytest.approx(15.64)


def test_de_closed_form():
    p = P(5, 7, 0.4)
    lh, rh, q, mu = 4, 6, 0.4, 0.4
    a, b, c = lh * rh, mu ** 2 * lh ** 3 * rh * (1 - q) * (1 + rh * q), (lh * rh * q) ** 2
    v1 = de_moments(p, 1).var
    for k in range(2, 8):
        closed = v1 * a ** (k - 1) + b * c ** (k - 2) * sum((a / c) ** s for s in range(k - 1))
        assert de_moments(p, k).var == pytest.approx(closed, rel=1e-10)


def test_de_perfect_crowd_ratio_decreasing():
    ratios = [de_moments(P(4, 4, 1.0, 1.0), k).chebyshev for k in range(1, 10)]
    assert np.all(np.diff(ratios) < 0)


def test_de_trichotomy():
    ks = range(1, 40)
    above = [de_moments(P(5, 5, 0.5), k).chebyshev for k in ks]
    below = [de_moments(P(3, 3, 0.3), k).chebyshev for k in ks]
    at = [de_moments(P(3, 3, 0.5), k).chebyshev for k in ks]
    assert abs(above[-1] - above[-2]) < 1e-12 * above[-1] + 1e-15
    g = P(3, 3, 0.3).growth
    assert below[-1] / below[-2] == pytest.approx(1 / g, rel=1e-3)
    steps = np.diff(at)
    assert steps[-1] == pytest.approx(steps[-2], rel=1e-6) and steps[-1] > 0


def test_de_rejects_single_query():
    with pytest.raises(ValidationError):
        de_moments(P(1, 5, 0.3), 2)


def test_de_monte_carlo_gaussian_sum():
    s = de_monte_carlo(6, 4, FixedP(1.0), 1, samples=10 ** 5, rng=1)
    assert abs(s.mean - 6) <= 4 * s.se_mean
    assert abs(s.var - 6) <= 4 * s.se_var


@pytest.mark.parametrize("model", [SpammerHammer(0.3), FixedP(0.8)], ids=["sh", "fixed"])
@pytest.mark.parametrize("l,r,k", [(3, 5, 2), (5, 3, 3), (5, 5, 2)])
def test_de_monte_carlo_matches_recursion(model, l, r, k):
    d = de_moments(TheoryParams.from_model(l, r, model), k)
    s = de_monte_carlo(l, r, model, k, samples=10 ** 5, rng=l * 100 + r * 10 + k)
    assert abs(s.mean - d.decision_mean) <= 4 * s.se_mean
    assert abs(s.var - d.decision_var) <= 4 * s.se_var


def test_de_monte_carlo_guards():
    with pytest.raises(ValidationError):
        de_monte_carlo(30, 30, SpammerHammer(0.3), 4, samples=1000)
    with pytest.raises(ValidationError):
        de_monte_carlo(3, 3, SpammerHammer(0.3), 1, samples=10)


def test_de_monte_carlo_reproducible():
    a = de_monte_carlo(3, 3, SpammerHammer(0.3), 2, samples=2000, rng=5, keep_values=True)
    b = de_monte_carlo(3, 3, SpammerHammer(0.3), 2, samples=2000, rng=5, keep_values=True)
    assert np.array_equal(a.values, b.values)


def test_report_fields():
    rep = theory_report(P(30, 30, 0.3, m=1000), eps=0.05)
    rows = {k: (v, f) for k, v, f in rep.rows()}
    assert rows["sigma_inf_sq"][0] == pytest.approx(3.1566, abs=1e-4)
    assert rows["k0"][0] == 2
    assert rows["m0"][1] == "beyond desk scale"
    assert rows["theorem1_bound"][1] == "vacuous"
    assert rows["lower_majority"][1] == "constant unspecified"
    assert "sigma_inf_sq" in rep.format()
    below = theory_report(P(3, 3, 0.3))
    assert below.sigma_inf_sq is None and below.k0 is None and below.phase_margin < 0
