import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmsched.instgen import GenConfig, generate, make_jit_counterexample, tiny_config
from pmsched.lp_core import INFEASIBLE, OPTIMAL
from pmsched.master import (BranchingDecision, ColumnError, MasterState, column_violations, expand_to_schedule,
                            idle_column, make_column, rmp_gap, solve_integer_rmp, solve_rmp)
from pmsched.model import Instance, MachineGroupSpec, trim_production, validate_schedule

from fixtures import split_pair_state, flat_component


@pytest.mark.parametrize("primal, dual, gap", [(5.0, 5.0, 0.0), (10.0, 5.0, 0.5), (0.5, 0.0, 0.5)])
def test_rmp_gap_examples(primal, dual, gap):
    assert rmp_gap(primal, dual) == pytest.approx(gap)


def test_rmp_gap_without_incumbent_is_infinite():
    assert rmp_gap(math.inf, 3.0) == math.inf


def single_machine(T=2, demand=(1.0, 1.0), mult=1):
    return Instance(T, (MachineGroupSpec((flat_component(cost=3.0, Q=2.0),), (), mult),), demand)


def test_idle_column_and_dedup():
    inst = single_machine()
    st = MasterState(inst)
    idle = idle_column(inst, 0)
    assert idle.cost == 0.0
    i = st.add_column(idle)
    assert st.add_column(idle_column(inst, 0)) == i
    assert len(st.columns) == 1


def test_invalid_column_rejected_with_diagnostic():
    inst = single_machine()
    st = MasterState(inst)
    col = make_column(inst, 0, np.zeros((1, 2)), [1.0, 5.0])
    assert column_violations(inst, col)
    with pytest.raises(ColumnError):
        st.add_column(col)
    assert st.columns == []


def test_forced_single_column():
    inst = single_machine()
    st = MasterState(inst)
    st.add_column(make_column(inst, 0, np.zeros((1, 2)), [1.0, 1.0]))
    sol = solve_rmp(st)
    assert sol.status == OPTIMAL
    assert sol.lam == pytest.approx([1.0])
    assert sol.objective == pytest.approx(0.0)


def test_empty_pool_gives_farkas_duals():
    inst = make_jit_counterexample()
    st = MasterState(inst)
    sol = solve_rmp(st)
    assert sol.status == INFEASIBLE
    assert sol.duals.farkas
    assert (sol.duals.pi >= -1e-9).all() and sol.duals.pi.max() > 0


def test_split_pair_fractional_optimum():
    inst, st, _ = split_pair_state()
    sol = solve_rmp(st)
    assert sol.status == OPTIMAL
    assert sol.lam == pytest.approx([0.5, 0.5])
    assert sol.objective == pytest.approx(0.0)


def test_branching_membership_follows_new_columns():
    inst = single_machine(T=3, demand=(0.0, 0.0, 0.0), mult=2)
    st = MasterState(inst)
    st.add_column(idle_column(inst, 0))
    b = st.add_branching(BranchingDecision(0, (), ((0, 0),), "down", 0.0))
    assert st.branch_rows[b].members == set()
    x = np.array([[1, 1, 0]])
    cid = st.add_column(make_column(inst, 0, x, np.zeros(3)))
    assert st.branch_rows[b].members == {cid}
    assert st.memberships_from_scratch() == [br.members for br in st.branch_rows]


def random_pool_state(seed, n_cols):
    inst = generate(GenConfig(seed, periods=4, layout=(2,), components=(1, 2), rho=0.3, idle_scale=6.0))
    grp = inst.groups[0]
    K, T = grp.n_components, inst.periods
    rng = np.random.default_rng(seed)
    st = MasterState(inst)
    cols = []
    for _ in range(n_cols):
        start = int(rng.integers(0, 2))
        x = np.zeros((K, T), dtype=int)
        if rng.random() < 0.6:
            x[:, start:start + 1 + max(c.duration for c in grp.components)] = 1
        y = rng.uniform(0, 1, T) * np.minimum(inst.demand, grp.q_min)
        y = trim_production(grp, x, y)
        cols.append(make_column(inst, 0, x, y))
    return inst, st, cols, rng


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 500), st.integers(1, 8))
def test_membership_coherence_and_dual_signs(seed, n_cols):
    inst, state, cols, rng = random_pool_state(seed, n_cols)
    K, T = inst.groups[0].n_components, inst.periods
    active = []
    for i, col in enumerate(cols):
        if column_violations(inst, col):
            continue
        state.add_column(col)
        if rng.random() < 0.4:
            k, t = int(rng.integers(0, K)), int(rng.integers(0, T))
            le, ge = (((k, t),), ()) if rng.random() < 0.5 else ((), ((k, t),))
            side = "down" if rng.random() < 0.5 else "up"
            active.append(state.add_branching(BranchingDecision(0, le, ge, side, float(rng.integers(0, 3)))))
            state.set_active_branching(active[-2:])
        assert state.memberships_from_scratch() == [br.members for br in state.branch_rows]
        sol = solve_rmp(state)
        if sol.status == OPTIMAL:
            assert (sol.duals.pi >= -1e-9).all()
            if 0 not in state.equality_groups:
                assert (sol.duals.theta <= 1e-9).all()


def test_rmp_objective_nonincreasing_as_columns_arrive():
    inst, state, cols, _ = random_pool_state(7, 12)
    last = math.inf
    for col in cols:
        if column_violations(inst, col):
            continue
        state.add_column(col)
        sol = solve_rmp(state)
        if sol.status == OPTIMAL:
            assert sol.objective <= last + 1e-9
            last = sol.objective


def test_integer_rmp_returns_integral_cover():
    inst = single_machine(demand=(1.0, 1.0), mult=2)
    st = MasterState(inst)
    st.add_column(make_column(inst, 0, np.zeros((1, 2)), [1.0, 1.0]))
    st.add_column(make_column(inst, 0, np.zeros((1, 2)), [1.0, 0.0]))
    res = solve_integer_rmp(st)
    assert res is not None and res.objective == 0.0
    counts = [(c, int(v)) for c, v in zip(st.columns, res.lam) if v > 0]
    sched = expand_to_schedule(st, counts)
    assert len(sched.machines) == 2
    assert validate_schedule(inst, sched) == []


def test_integer_rmp_none_when_only_fractional_covers():
    inst, st, _ = split_pair_state()
    assert solve_integer_rmp(st, time_limit=1.0) is None


def test_integer_rmp_respects_cutoff():
    inst = single_machine(demand=(0.0, 0.0))
    st = MasterState(inst)
    st.add_column(idle_column(inst, 0))
    assert solve_integer_rmp(st, objective_cutoff=0.0) is None
    assert solve_integer_rmp(st, objective_cutoff=1.0).objective == 0.0


@pytest.mark.parametrize("seed", [3, 8, 21])
def test_aggregated_and_disaggregated_rmp_agree(seed):
    agg, _, cols, _ = random_pool_state(seed, 10)
    grp = agg.groups[0]
    single = MachineGroupSpec(grp.components, grp.implications, 1)
    dis = Instance(agg.periods, (single, single), agg.demand)
    values = []
    for inst in (agg, dis):
        st = MasterState(inst)
        for z in range(len(inst.groups)):
            for col in cols + [idle_column(agg, 0)]:
                col = make_column(inst, z, col.x, col.y)
                if not column_violations(inst, col):
                    st.add_column(col)
        sol = solve_rmp(st)
        values.append(sol.objective if sol.status == OPTIMAL else math.inf)
    assert values[0] == pytest.approx(values[1], abs=1e-7)
