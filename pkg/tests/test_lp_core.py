import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from pmsched.lp_core import (INFEASIBLE, OPTIMAL, UNBOUNDED, LpProblem, LpSolver, farkas_margin, ray_signs_ok,
                             solve_lp)


def scipy_solve(c, rows, lo, hi):
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    n = len(c)
    for coeffs, rel, rhs in rows:
        a = np.zeros(n)
        for j, v in coeffs.items():
            a[j] = v
        if rel == "<=":
            A_ub.append(a), b_ub.append(rhs)
        elif rel == ">=":
            A_ub.append(-a), b_ub.append(-rhs)
        else:
            A_eq.append(a), b_eq.append(rhs)
    res = linprog(c, A_ub=np.array(A_ub) if A_ub else None, b_ub=b_ub or None,
                  A_eq=np.array(A_eq) if A_eq else None, b_eq=b_eq or None,
                  bounds=list(zip(lo, [None if not np.isfinite(h) else h for h in hi])), method="highs")
    return res


def random_lp(rng, n, m):
    c = rng.uniform(-1.0, 2.0, n)
    lo = np.zeros(n)
    hi = np.where(rng.random(n) < 0.5, rng.uniform(1.0, 4.0, n), np.inf)
    rows = []
    for _ in range(m):
        idx = rng.choice(n, size=min(n, 3), replace=False)
        coeffs = {int(j): float(rng.uniform(-1.0, 2.0)) for j in idx}
        rel = ["<=", ">=", "="][int(rng.integers(0, 3))]
        rows.append((coeffs, rel, float(rng.uniform(0.0, 3.0))))
    return c, rows, lo, hi


def check_against_scipy(sol, ref, rows, lo, hi):
    if ref.status == 2:
        assert sol.status == INFEASIBLE
        assert ray_signs_ok(rows, sol.farkas_ray)
        assert farkas_margin(rows, lo, hi, sol.farkas_ray) > 0
    elif ref.status == 3:
        assert sol.status == UNBOUNDED
    else:
        assert sol.status == OPTIMAL
        assert sol.objective == pytest.approx(ref.fun, abs=1e-6, rel=1e-6)


def test_small_lp_duals():
    # min -x - y s.t. x + 2y <= 4, 3x + y <= 6
    p = LpProblem(np.array([-1.0, -1.0]), [({0: 1.0, 1: 2.0}, "<=", 4.0), ({0: 3.0, 1: 1.0}, "<=", 6.0)],
                  np.zeros(2), np.full(2, np.inf))
    sol = solve_lp(p)
    assert sol.status == OPTIMAL
    assert sol.primal == pytest.approx([1.6, 1.2])
    assert sol.objective == pytest.approx(-2.8)
    assert sol.duals == pytest.approx([-0.4, -0.2])


def test_infeasible_lp_has_farkas_ray():
    rows = [({0: 1.0, 1: 1.0}, ">=", 5.0), ({0: 1.0}, "<=", 1.0), ({1: 1.0}, "<=", 1.0)]
    lo, hi = np.zeros(2), np.full(2, np.inf)
    sol = solve_lp(LpProblem(np.zeros(2), rows, lo, hi))
    assert sol.status == INFEASIBLE
    assert ray_signs_ok(rows, sol.farkas_ray)
    assert farkas_margin(rows, lo, hi, sol.farkas_ray) > 0


def test_unbounded_lp():
    sol = solve_lp(LpProblem(np.array([-1.0]), [({0: 1.0}, ">=", 1.0)], np.zeros(1), np.full(1, np.inf)))
    assert sol.status == UNBOUNDED


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 7), st.integers(1, 6))
def test_random_lps_match_highs(seed, n, m):
    rng = np.random.default_rng(seed)
    c, rows, lo, hi = random_lp(rng, n, m)
    sol = solve_lp(LpProblem(c, rows, lo, hi))
    check_against_scipy(sol, scipy_solve(c, rows, lo, hi), rows, lo, hi)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_warm_started_modifications_match_highs(seed):
    rng = np.random.default_rng(seed)
    c, rows, lo, hi = random_lp(rng, 5, 4)
    lp = LpSolver(LpProblem(c, rows, lo, hi))
    lp.solve()
    c, lo, hi, rows = list(c), list(lo), list(hi), list(rows)
    for step in range(6):
        kind = step % 3
        if kind == 0:
            coeffs = {i: float(rng.uniform(-1, 2)) for i in range(len(rows)) if rng.random() < 0.6}
            cost = float(rng.uniform(-1, 2))
            j = lp.add_column(cost, 0.0, 3.0, coeffs)
            c.append(cost), lo.append(0.0), hi.append(3.0)
            rows = [({**co, j: coeffs[i]} if i in coeffs else co, rel, b) for i, (co, rel, b) in enumerate(rows)]
        elif kind == 1:
            idx = rng.choice(len(c), size=2, replace=False)
            row = ({int(j): float(rng.uniform(-1, 2)) for j in idx}, "<=", float(rng.uniform(0.5, 3)))
            lp.add_row(*row)
            rows.append(row)
        else:
            j = int(rng.integers(0, len(c)))
            hi[j] = float(rng.uniform(0.5, 2.0))
            lp.set_bounds(j, lo[j], hi[j])
        sol = lp.solve()
        check_against_scipy(sol, scipy_solve(np.array(c), rows, np.array(lo), np.array(hi)), rows,
                            np.array(lo), np.array(hi))


def test_row_deactivation_and_removal():
    rows = [({0: 1.0, 1: 1.0}, ">=", 2.0), ({0: 1.0}, "<=", 0.5), ({1: 1.0}, "<=", 0.5)]
    lp = LpSolver(LpProblem(np.array([1.0, 1.0]), rows, np.zeros(2), np.full(2, np.inf)))
    assert lp.solve().status == INFEASIBLE
    lp.set_row_active(1, False)
    sol = lp.solve()
    assert sol.status == OPTIMAL and sol.objective == pytest.approx(2.0)
    lp.set_row_active(1, True)
    mapping = lp.remove_rows([2])
    assert mapping == {0: 0, 1: 1}
    sol = lp.solve()
    assert sol.status == OPTIMAL and sol.primal == pytest.approx([0.5, 1.5])


def test_rhs_and_objective_updates():
    lp = LpSolver(LpProblem(np.array([1.0, 2.0]), [({0: 1.0, 1: 1.0}, ">=", 1.0)], np.zeros(2),
                            np.full(2, np.inf)))
    assert lp.solve().objective == pytest.approx(1.0)
    lp.set_rhs(0, 3.0)
    assert lp.solve().objective == pytest.approx(3.0)
    lp.set_objective(np.array([5.0, 2.0]))
    assert lp.solve().objective == pytest.approx(6.0)
