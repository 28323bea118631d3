import dataclasses

import numpy as np
import pytest

from pmsched.compact_solver import solve_compact
from pmsched.instgen import (KINDS, GenConfig, generate, jit_maintenance_heuristic, maintenance_action_cost,
                             make_jit_counterexample, sample_raw_function, tiny_config)
from pmsched.model import Instance, MachineGroupSpec, check_func_shape, dump_json, instance_to_dict, validate_schedule

from fixtures import flat_component


def actions(x: np.ndarray) -> int:
    """Number of maintenance windows, counted as 0 -> 1 switches."""
    padded = np.concatenate([np.zeros((x.shape[0], 1), dtype=int), x], axis=1)
    return int((np.diff(padded, axis=1) == 1).sum())


def test_same_seed_same_bytes():
    cfg = GenConfig(7, periods=10, layout="two-groups-10", complexity="high")
    assert dump_json(instance_to_dict(generate(cfg))) == dump_json(instance_to_dict(generate(cfg)))
    other = dataclasses.replace(cfg, seed=8)
    assert dump_json(instance_to_dict(generate(other))) != dump_json(instance_to_dict(generate(cfg)))


def test_layouts_and_periods():
    inst = generate(GenConfig(1, periods=20, layout="two-groups-10"))
    assert inst.periods == 20 and [g.multiplicity for g in inst.groups] == [10, 10]
    inst = generate(GenConfig(1, layout="one-group-20"))
    assert [g.multiplicity for g in inst.groups] == [20]


def test_invalid_configs():
    for cfg in (GenConfig(rho=0.0), GenConfig(rho=1.3), GenConfig(complexity="mid"), GenConfig(layout=(0,)),
                GenConfig(layout="three-groups")):
        with pytest.raises(ValueError):
            generate(cfg)


@pytest.mark.parametrize("complexity, sizes, lo, hi", [("low", {1, 2, 3}, 0.07, 0.13),
                                                      ("high", set(range(3, 8)), 0.12, 0.18)])
def test_component_counts_and_implication_rate(complexity, sizes, lo, hi):
    inst = generate(GenConfig(11, periods=2, layout=(1,) * 1000, complexity=complexity))
    counts = [g.n_components for g in inst.groups]
    assert set(counts) <= sizes
    pairs = sum(k * (k - 1) for k in counts)
    implied = sum(len(g.implications) for g in inst.groups)
    assert lo <= implied / pairs <= hi


def test_raw_draw_distribution():
    rng = np.random.default_rng(2024)
    draws = [sample_raw_function(rng) for _ in range(10_000)]
    for kind in KINDS:
        share = sum(d.kind == kind for d in draws) / len(draws)
        assert abs(share - 1 / 3) <= 0.02
    coeffs = np.concatenate([d.coeffs for d in draws])
    assert coeffs.min() >= 0.0 and coeffs.max() <= 3.0
    assert abs(coeffs.mean() - 1.5) <= 0.05


def test_generated_instances_pass_shape_checks():
    for seed in range(10):
        inst = generate(GenConfig(seed, periods=4, layout=(1, 1), complexity="high"))
        for grp in inst.groups:
            for k, c in enumerate(grp.components):
                assert check_func_shape(c.f, grp.f_box(k)) == []
                assert check_func_shape(c.g, grp.g_box(k), tol=1e-9) == []
                assert 1 <= c.cost <= 10 and c.cost == int(c.cost)
                assert c.duration in (1, 2)
                assert 5 <= c.max_production <= 20 and 5 <= c.max_condition <= 15


def test_demand_rule():
    cfg = GenConfig(3, periods=10, layout=(2, 3), rho=0.5)
    inst = generate(cfg)
    cap = sum(g.multiplicity * g.q_min for g in inst.groups)
    d = np.array(inst.demand)
    assert (d >= 0.6 * 0.5 * cap - 1e-9).all() and (d <= 0.5 * cap + 1e-9).all()


@pytest.mark.parametrize("seed", range(6))
def test_overload_is_infeasible(seed):
    inst = generate(dataclasses.replace(tiny_config(seed), rho=1.2))
    assert solve_compact(inst).status == "infeasible"


def test_jit_counterexample_actions():
    inst = make_jit_counterexample()
    comp_a, comp_b = inst.groups[0].components
    assert (1, 0) in inst.groups[0].implications  # B implies A
    heur = jit_maintenance_heuristic(inst)
    exact = solve_compact(inst)
    assert validate_schedule(inst, heur) == [] and validate_schedule(inst, exact.schedule) == []
    xh, xe = heur.machines[0].x, exact.schedule.machines[0].x
    assert actions(xh) == 3 and actions(xe) == 2
    assert heur.cost(inst) == pytest.approx(2 * maintenance_action_cost(comp_a) + maintenance_action_cost(comp_b))
    assert exact.primal_bound == pytest.approx(maintenance_action_cost(comp_a) + maintenance_action_cost(comp_b))


def test_jit_without_degradation_never_maintains():
    inst = Instance(4, (MachineGroupSpec((flat_component(), flat_component(cost=2.0)), (), 2),), (1.0,) * 4)
    sched = jit_maintenance_heuristic(inst)
    assert sched is not None and all(not m.x.any() for m in sched.machines)
    assert validate_schedule(inst, sched) == []


@pytest.mark.parametrize("seed", [0, 5, 8, 11, 14, 17, 20, 29, 35, 38, 41])
def test_jit_never_beats_the_optimum(seed):
    inst = generate(tiny_config(seed))
    heur = jit_maintenance_heuristic(inst)
    exact = solve_compact(inst)
    if heur is not None and exact.status == "optimal":
        assert validate_schedule(inst, heur) == []
        assert heur.cost(inst) >= exact.primal_bound - 1e-6
