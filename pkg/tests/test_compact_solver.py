import numpy as np
import pytest

from pmsched.compact_solver import build_compact, solve_compact
from pmsched.instgen import GenConfig, generate, make_jit_counterexample, tiny_config
from pmsched.minlp_kernel import MinlpLimits
from pmsched.model import validate_schedule

from oracles import oracle_optimum


@pytest.mark.parametrize("seed", [5, 11, 17, 29, 35, 41, 6, 13])
def test_matches_enumeration_oracle(seed):
    inst = generate(tiny_config(seed))
    status, cost = oracle_optimum(inst)
    rep = solve_compact(inst)
    assert rep.status == status
    if status == "optimal":
        assert rep.primal_bound == pytest.approx(cost, abs=1e-6)
        assert validate_schedule(inst, rep.schedule) == []
        assert rep.gap == 0.0


def test_jit_counterexample_optimum():
    inst = make_jit_counterexample()
    rep = solve_compact(inst)
    ca, cb = (c.cost for c in inst.groups[0].components)
    assert rep.status == "optimal"
    # one window per component: each window covers D + 1 = 2 periods
    assert rep.primal_bound == pytest.approx(2 * (ca + cb))
    assert validate_schedule(inst, rep.schedule) == []


def test_zero_demand_costs_nothing():
    inst = generate(GenConfig(3, periods=3, layout=(2,), components=(1, 2), rho=0.3))
    inst = type(inst)(inst.periods, inst.groups, (0.0,) * inst.periods)
    rep = solve_compact(inst)
    assert rep.status == "optimal" and rep.primal_bound == 0.0


def test_model_size_against_formulas():
    inst = generate(GenConfig(2, periods=5, layout=(2, 1), components=(1, 3), implication_prob=0.5))
    model = build_compact(inst)
    size = model.size()
    assert size["variables"] == size["formula_variables"]
    # one nonlinear degradation and one limit row per component and period
    K = sum(inst.groups[z].n_components for z in inst.machine_groups())
    assert size["nonlinear_rows"] == 2 * K * inst.periods
    assert "row0:" in model.listing()


def test_time_limit_reports_limit_with_valid_bounds():
    inst = generate(GenConfig(1, periods=6, layout=(8,), components=(1, 1), rho=0.2, wear_scale=6.0,
                              idle_scale=6.0))
    rep = solve_compact(inst, MinlpLimits(time=1.0))
    assert rep.status in ("limit", "optimal", "infeasible")
    if rep.status == "limit":
        assert rep.dual_bound <= rep.primal_bound
