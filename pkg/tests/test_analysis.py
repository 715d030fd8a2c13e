import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from swcp.analysis import (
    Classifier,
    Estimate,
    bisect_critical,
    chain_coefficients,
    chain_F,
    chain_F_limit,
    chain_kernel,
    chain_theta2,
    comb_brw_critical,
    estimate_growth_rate,
    estimate_record,
    estimate_return_probability,
    estimate_survival_probability,
    km_walk_transitions,
    lambda2_brw_lower_bound,
    level_matrix_eigenvalue,
    limiting_quadratic_root,
    simulate_chain_F,
    simulate_chain_green,
    strong_survival_boundary,
    wilson_interval,
)
from swcp.dynamics import GraphSpec
from swcp.errors import BracketError, DomainError, InvalidParameter
from swcp.topology import ModelParams

BIG = GraphSpec("big")

# ------------------------------------------------------------ closed forms


def test_comb_critical_examples():
    assert comb_brw_critical(1.0) == pytest.approx(math.sqrt(5) - 1, abs=1e-12)
    assert comb_brw_critical(4.0) == pytest.approx(10 / (4 + math.sqrt(20)), abs=1e-12)
    assert abs(comb_brw_critical(1e6) - 1) < 1e-5
    for r in (0.01, 0.5, 3.0, 100.0):
        assert comb_brw_critical(r) > 1
    with pytest.raises(InvalidParameter):
        comb_brw_critical(0.0)


@pytest.mark.parametrize("r", [0.5, 1, 2, 4, 10])
def test_two_routes_to_comb_critical(r):
    root = limiting_quadratic_root(r)
    assert root**2 / (1 + r) ** 2 + r * root / (1 + r) - 1 == pytest.approx(0, abs=1e-13)
    assert abs(root - comb_brw_critical(r)) < 1e-12


def test_comb_critical_solves_limit_F_equal_one():
    for r in (0.5, 1.0, 2.0):
        lam = comb_brw_critical(r)
        assert chain_F_limit(lam, 1 / (1 + r)) == pytest.approx(1.0, abs=1e-12)


def test_eigenvalue_examples():
    assert level_matrix_eigenvalue(0.7, 0.0) == 0.7
    assert level_matrix_eigenvalue(0.9, 0.4) == pytest.approx((0.9 + math.sqrt(1.45)) / 2)
    assert level_matrix_eigenvalue(0.9, 0.4) > 1
    with pytest.raises(InvalidParameter):
        level_matrix_eigenvalue(-0.1, 0.2)


def test_eigenvalue_is_largest_matrix_eigenvalue():
    for a, b in [(0.3, 0.2), (1.2, 0.9), (0.0, 0.5)]:
        top = max(np.linalg.eigvalsh(np.array([[a, b], [b, 0.0]])))
        assert level_matrix_eigenvalue(a, b) == pytest.approx(top, abs=1e-12)


def test_eigenvalue_boundary_on_grid():
    rng = np.random.default_rng(0)
    pairs = np.column_stack([rng.uniform(0, 2, 10**4), rng.uniform(0, 1, 10**4)])
    for a, b in pairs:
        if abs(a + b * b - 1) > 1e-9:
            assert (level_matrix_eigenvalue(a, b) > 1) == (a + b * b > 1)


def test_strong_survival_boundary_lies_on_curve():
    for r in (0.5, 2.0, 9.0):
        lam = strong_survival_boundary(r)
        beta = lam / (1 + r)
        assert r * beta + beta**2 == pytest.approx(1.0, abs=1e-12)
    # r = 2: the boundary sits well above the weak-survival line alpha + beta = 1
    assert strong_survival_boundary(2.0) == pytest.approx(3 * (math.sqrt(2) - 1), abs=1e-12)


# ------------------------------------------------------------ chain


def test_kernel_examples():
    u, M = 0.3, 5
    assert chain_kernel(0, u, M) == [(0, 0.7), (1, 0.3)]
    assert chain_kernel(1, u, M) == pytest.approx([(0, u), (1, (1 - u) / M), (2, (1 - u) * (1 - 1 / M))])
    row = dict(chain_kernel(4, u, M))
    assert row[5] == u and row[3] == pytest.approx((1 - u) / M)


def test_kernel_rows_sum_to_one():
    for u in (0.05, 0.3, 0.5, 0.9):
        for M in (2, 3, 27, 10**6):
            for j in range(101):
                assert sum(p for _, p in chain_kernel(j, u, M)) == pytest.approx(1.0, abs=1e-14)


def test_coefficient_examples():
    a, b, c = chain_coefficients(1.0, 0.5, 4)
    assert c == pytest.approx(0.0625)
    a6, _, c6 = chain_coefficients(1.3, 0.4, 10**9)
    assert c6 < 1e-9 and a6 == pytest.approx(1.3**2 * 0.4 * 0.6, rel=1e-8)




@pytest.mark.parametrize("lam,r,M", [(1.05, 2.0, 27), (0.9, 1.0, 4), (1.1, 4.0, 100)])
def test_theta2_is_root_and_recurrence_holds(lam, r, M):
    u = 1 / (1 + r)
    a, b, c = chain_coefficients(lam, u, M)
    th = chain_theta2(lam, u, M)
    assert abs(a * th * th - b * th + c) <= 1e-12 * max(abs(b * th), c)
    th1 = (b + math.sqrt(b * b - 4 * a * c)) / (2 * a)
    assert 0 <= th <= th1
    for n in range(1, 21):
        lhs = a * th ** (n + 1) - b * th**n + c * th ** (n - 1)
        assert abs(lhs) < 1e-10 * th ** (n - 1)


def test_theta2_vanishes_for_large_M():
    assert chain_theta2(1.1, 1 / 3, 10**6) < 1e-5


def test_h_satisfies_harmonic_equations():
    # build h on even states as theta2^k, odd states from the odd-row equation, then check all rows
    lam, u, M = 1.05, 1 / 3, 27
    ca = chain_F(lam, u, M)
    h = {}
    for k in range(0, 12):
        h[2 * k] = ca.theta2**k
    for k in range(0, 11):
        j = 2 * k + 1
        # h(j) = lam [u h(j-1) + (1-u)/M h(j) + (1-u)(1-1/M) h(j+1)]
        h[j] = lam * (u * h[j - 1] + (1 - u) * (1 - 1 / M) * h[j + 1]) / (1 - lam * (1 - u) / M)
    assert h[1] == pytest.approx(ca.h1, rel=1e-12)
    for j in range(2, 20, 2):
        rhs = lam * sum(p * h[y] for y, p in chain_kernel(j, u, M))
        assert h[j] == pytest.approx(rhs, rel=1e-9, abs=1e-14)
    assert ca.F == pytest.approx(lam * sum(p * (1.0 if y == 0 else h[y]) for y, p in chain_kernel(0, u, M)))


def test_F_limits():
    assert chain_F_limit(1.2, 0.5) == pytest.approx(0.96)
    assert chain_F_limit(1.25, 0.5) == pytest.approx(1.015625)
    assert chain_F(1.2, 0.5, 10**9).F == pytest.approx(0.96, abs=1e-6)
    assert chain_F(1e-6, 0.5, 10).F < 1e-5


def test_F_green_identity_and_monotone():
    for u, M in [(0.5, 10), (1 / 3, 27), (0.2, 1000)]:
        prev = 0.0
        for lam in np.linspace(0.01, 1.0, 60):
            ca = chain_F(lam, u, M)
            assert ca.F >= prev - 1e-15
            prev = ca.F
            if ca.F < 1:
                assert ca.G == pytest.approx(1 / (1 - ca.F)) and ca.G >= 1
                assert ca.G - 1 == pytest.approx(ca.F * ca.G)


def test_complex_regime_raises():
    with pytest.raises(DomainError):
        chain_F(3.0, 0.5, 10)


@given(st.floats(0.05, 20.0), st.integers(2, 10**5))
def test_chain_analysis_invariants(r, M):
    u = 1 / (1 + r)
    lam = 0.5 * lambda2_brw_lower_bound(r, M, tol=1e-6)
    ca = chain_F(lam, u, M)
    assert ca.a > 0 and ca.c > 0
    assert 0 <= ca.theta2 <= ca.theta1
    assert 0 <= ca.F < 1 and ca.G >= 1


def test_chain_F_matches_monte_carlo():
    lam, r, M = 1.05, 2.0, 27
    est, se, _ = simulate_chain_F(lam, r, M, 10**5, 200, seed=1)
    exact = chain_F(lam, 1 / (1 + r), M).F
    assert abs(est - exact) < 3 * se


def test_renewal_identity():
    lam, r, M = 0.95, 2.0, 27
    G = chain_F(lam, 1 / (1 + r), M).G
    errs = []
    for K in (5, 20, 120):
        est, se = simulate_chain_green(lam, r, M, 40000, K, seed=2)
        errs.append(abs(est - G))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 3 * se + 1e-3


def test_walk_on_KM_projects_to_kernel():
    r, M = 2.0, 5
    u = 1 / (1 + r)
    counts = km_walk_transitions(r, M, n_walks=400, steps=100, seed=3)
    checked = 0
    for j, row in counts.items():
        tot = sum(row.values())
        if tot < 200:
            continue
        expected = dict(chain_kernel(j, u, M))
        assert set(row) <= set(expected)
        for k, p in expected.items():
            phat = row.get(k, 0) / tot
            assert abs(phat - p) <= 3 * math.sqrt(p * (1 - p) / tot) + 1e-12
        checked += 1
    assert checked >= 4


def test_lambda2_examples():
    assert abs(lambda2_brw_lower_bound(1.0, 10**6) - (math.sqrt(5) - 1)) < 1e-3
    for r in (1.5, 2.0, 4.0):
        for M in (100, 1000, 10**5):
            assert lambda2_brw_lower_bound(r, M) > 1
    vals = [lambda2_brw_lower_bound(1.0, M) for M in (10**4, 10**5, 10**6)]
    assert abs(vals[0] - vals[1]) > abs(vals[1] - vals[2])


def test_lambda2_supremum_is_sharp():
    lb = lambda2_brw_lower_bound(2.0, 1000, detail=True)
    u = 1 / 3
    assert chain_F(lb.value, u, 1000).F < 1
    with pytest.raises(DomainError):
        chain_F(lb.value + 1e-8, u, 1000)
    assert lb.active in ("radius", "F=1")


# ------------------------------------------------------------ estimators


def test_wilson_and_estimate_invariants():
    for k, n in [(0, 10), (3, 10), (10, 10), (500, 4000)]:
        e = Estimate.from_counts(k, n, 0, 1)
        assert e.ci_low <= e.value <= e.ci_high
    lo, hi = wilson_interval(0, 100)
    assert lo == 0 and hi < 0.04


def test_survival_trivial_cases():
    zero = ModelParams(0.0, 0.0, m=1, strict=False)
    full = ModelParams(3.0, 1.0, m=1, strict=False)
    assert estimate_survival_probability(BIG, zero, 20, 50, 1).value == 0.0
    assert estimate_survival_probability(BIG, full, 20, 50, 1, survive_cap=1000).value == 1.0


def test_survival_for_large_m():
    p = ModelParams(0.9, 0.45, m=5)
    e = estimate_survival_probability(BIG, p, 100, 1000, 4, survive_cap=1000)
    assert e.ci_low > 0.05


def test_return_trivial_cases():
    sure_self = ModelParams(3.0, 0.5, m=1, strict=False)
    assert estimate_return_probability(BIG, sure_self, 20, 4, 30, 1).value == 1.0
    assert estimate_return_probability(BIG, ModelParams(0.0, 0.0, strict=False), 20, 4, 30, 1).value == 0.0
    with pytest.raises(InvalidParameter):
        estimate_return_probability(BIG, sure_self, 20, 40, 30, 1)


def test_return_probability_contrast():
    # just below alpha + beta^2 = 1 the origin is revisited far less often than well above it
    weak = estimate_return_probability(BIG, ModelParams(0.9, 0.3, m=5), 200, 40, 400, 5, trunc_cap=500)
    strong = estimate_return_probability(BIG, ModelParams(1.3, 0.5, m=5), 200, 40, 400, 5, trunc_cap=500)
    assert weak.ci_high < strong.ci_low
    assert strong.ci_low > 0.1
    assert weak.value < 0.1


def test_estimate_record_schema():
    p = ModelParams(0.9, 0.3, m=2)
    e = estimate_survival_probability(BIG, p, 10, 20, 7)
    rec = estimate_record("estimate_survival_probability", e, p, 10)
    assert set(rec) == {"operation", "params", "horizon", "replicates", "censored", "value", "stderr", "ci", "seed"}
    assert set(rec["params"]) == {"alpha", "beta", "gamma", "m", "d"}
    json.dumps(rec)


def test_degenerate_bracket():
    with pytest.raises(BracketError):
        bisect_critical(BIG, 2.0, Classifier("survival"), (1.0, 1.0), 50, 100, 1)


def test_bracket_must_straddle():
    with pytest.raises(BracketError) as info:
        bisect_critical(BIG, 2.0, Classifier("survival", survive_cap=500), (0.3, 0.5), 50, 200, 1)
    assert "trace" in info.value.diagnostics


def test_small_bisection_trace(tmp_path):
    res = bisect_critical(BIG, 2.0, Classifier("survival", survive_cap=500), (0.8, 1.6), 100, 400, 3, m=5, tol=0.1)
    assert res.lam_low < res.lam_high and res.lam_high - res.lam_low <= 0.1 or not res.resolved
    # the estimate is monotone in lambda along the trace up to CI overlap
    rows = sorted(res.trace, key=lambda t: t.lam)
    for a, b in zip(rows, rows[1:]):
        assert a.ci_low <= b.ci_high
    path = tmp_path / "trace.csv"
    res.write_trace_csv(path)
    head = next(csv.reader(open(path)))
    assert head == ["iteration", "lambda", "estimate", "ci_low", "ci_high", "decision"]


# ------------------------------------------------------------ growth rate


def test_growth_rate_brw_matches_log_lambda():
    p = ModelParams.from_lambda(1.2, 2.0, m=2)
    g = estimate_growth_rate(p, 1, 10, 40000, 6, mode="brw", n_boot=200)
    assert abs(g.c2_hat - math.log(1.2)) < 3 * g.slope_stderr


def test_growth_rate_signs():
    low = estimate_growth_rate(ModelParams.from_lambda(0.5, 2.0, m=1), 1, 8, 20000, 7, n_boot=200)
    assert low.c2_hat < 0 and abs(low.z) > 3
    high = estimate_growth_rate(ModelParams.from_lambda(2.0, 2.0, m=3), 2, 10, 2000, 7, n_boot=200)
    assert high.c2_hat > 0 and high.z > 3


def test_growth_rate_dead_regime():
    g = estimate_growth_rate(ModelParams(0.0, 0.0, strict=False), 1, 4, 20, 1, n_boot=20)
    assert g.c2_hat == -math.inf


def test_comb_brw_bisection_recovers_closed_form():
    clf = Classifier("return", trunc_cap=500, mode="brw")
    res = bisect_critical(GraphSpec("comb"), 1.0, clf, (1.0, 1.5), 300, 4000, 5, tol=0.02, strict=False)
    assert res.resolved
    target = math.sqrt(5) - 1
    assert abs(res.lam_low - target) < 0.05 and abs(res.lam_high - target) < 0.05
