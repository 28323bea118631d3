"""Pricing problems, reduced costs and the dual bounds derived from them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .compact_solver import MachineBlock, add_machine_block
from .master import BranchingDecision, Column, DualBundle, make_column
from .minlp_kernel import STATUS_INFEASIBLE, STATUS_OPTIMAL, ConvexMinlp, MinlpBuilder, MinlpLimits, solve_minlp
from .model import Instance, eval_func, trim_production

ACCEPT_RC = -1e-6
LIMITED = MinlpLimits(gap=0.2, solutions=3, nodes=500)


class PricingError(ValueError):
    pass


@dataclass
class PricingProblem:
    instance: Instance
    group: int
    minlp: ConvexMinlp
    block: MachineBlock
    duals: DualBundle
    decisions: Dict[int, BranchingDecision]
    delta: Dict[int, int] = field(default_factory=dict)  # branch row index -> delta variable
    cut_rhs: Optional[float] = None


@dataclass
class PricedColumn:
    """Best column of a pricing run (None if nothing improving) and a bound on the minimum."""

    column: Optional[Column]
    reduced_cost: float
    bound: float
    status: str


def build_pricing(instance: Instance, z: int, duals: DualBundle,
                  decisions: Mapping[int, BranchingDecision] = (),
                  cut_rhs: Optional[float] = None) -> PricingProblem:
    """min C.x - pi.y - theta_z - sum gamma_b delta_b over single-machine schedules of group z.

    In Farkas mode the maintenance costs are dropped. ``cut_rhs`` adds the early-stop row
    objective <= cut_rhs.
    """
    decisions = dict(decisions)
    group = instance.groups[z]
    K, T = group.n_components, instance.periods
    for b, dec in decisions.items():
        if dec.group != z:
            raise PricingError(f"decision {b} belongs to group {dec.group}, not {z}")
        for k, t in dec.le + dec.ge:
            if not (0 <= k < K and 0 <= t < T):
                raise PricingError(f"decision {b} references x[{k},{t}] outside K={K}, T={T}")
    bld = MinlpBuilder()
    blk = add_machine_block(bld, group, T, z, y_cap=list(instance.demand), with_costs=not duals.farkas)
    for t in range(T):
        bld.obj[blk.y[t]] = -float(duals.pi[t])
    delta = {}
    for b, dec in decisions.items():
        gam = float(duals.gamma.get(b, 0.0))
        d = bld.var(-gam, 0.0, 1.0 if gam != 0.0 else 0.0, binary=True)
        delta[b] = d
        if gam > 0:
            # delta may be 1 only if every threshold holds
            for k, t in dec.le:
                bld.row({d: 1.0, blk.x[k][t]: 1.0}, "<=", 1.0)
            for k, t in dec.ge:
                bld.row({d: 1.0, blk.x[k][t]: -1.0}, "<=", 0.0)
        elif gam < 0:
            # delta >= sum of satisfied thresholds - (|beta| - 1)
            coeffs = {d: 1.0}
            for k, t in dec.le:
                coeffs[blk.x[k][t]] = coeffs.get(blk.x[k][t], 0.0) + 1.0
            for k, t in dec.ge:
                coeffs[blk.x[k][t]] = coeffs.get(blk.x[k][t], 0.0) - 1.0
            bld.row(coeffs, ">=", float(len(dec.le) - (len(dec.le) + len(dec.ge) - 1)))
    theta = float(duals.theta[z])
    bld.offset = -theta
    if cut_rhs is not None:
        bld.row({j: c for j, c in enumerate(bld.obj) if c != 0.0}, "<=", cut_rhs + theta)
    return PricingProblem(instance, z, bld.build(), blk, duals, decisions, delta, cut_rhs)


def reduced_cost(col: Column, duals: DualBundle, decisions: Mapping[int, BranchingDecision] = ()) -> float:
    val = (0.0 if duals.farkas else col.cost) - float(np.dot(duals.pi, col.y)) - float(duals.theta[col.group])
    for b, dec in dict(decisions).items():
        if dec.satisfied_by(col):
            val -= float(duals.gamma.get(b, 0.0))
    return val


def pricing_objective_at(p: PricingProblem, col: Column) -> float:
    """The pricing model's objective at the point encoding ``col`` (delta set by the thresholds)."""
    xv = np.zeros(p.minlp.lp.n)
    for k, row in enumerate(p.block.x):
        for t, j in enumerate(row):
            xv[j] = col.x[k, t]
    for t, j in enumerate(p.block.y):
        xv[j] = col.y[t]
    for b, d in p.delta.items():
        xv[d] = 1.0 if p.decisions[b].satisfied_by(col) else 0.0
    return float(p.minlp.lp.objective @ xv + p.minlp.obj_offset)


def solve_pricing(p: PricingProblem, limits: Optional[MinlpLimits] = None, exact: bool = False,
                  time_limit: Optional[float] = None) -> PricedColumn:
    if limits is None:
        limits = MinlpLimits(gap=0.0) if exact else MinlpLimits(LIMITED.gap, LIMITED.solutions, LIMITED.nodes)
    if time_limit is not None:
        limits = MinlpLimits(limits.gap, limits.solutions, limits.nodes,
                             time_limit if limits.time is None else min(limits.time, time_limit))
    res = solve_minlp(p.minlp, limits)
    if res.status == STATUS_INFEASIBLE:
        bound = p.cut_rhs if p.cut_rhs is not None else math.inf
        return PricedColumn(None, math.inf, bound, "infeasible")
    bound = res.primal_bound if res.status == STATUS_OPTIMAL else res.dual_bound
    if p.cut_rhs is not None:
        bound = min(bound, p.cut_rhs)
    if res.incumbent is None:
        return PricedColumn(None, math.inf, bound, res.status)
    blk = p.block
    x = np.array([[res.incumbent[j] for j in row] for row in blk.x])
    y = np.array([res.incumbent[j] for j in blk.y])
    y = trim_production(p.instance.groups[p.group], np.round(x).astype(int), np.minimum(y, p.instance.demand))
    col = make_column(p.instance, p.group, x, y)
    rc = reduced_cost(col, p.duals, p.decisions)
    bound = min(bound, rc)
    if rc < ACCEPT_RC:
        return PricedColumn(col, rc, bound, res.status)
    return PricedColumn(None, rc, bound, res.status)


# ---------------------------------------------------------------- bounds

def lagrangian_bound(c_rmp: float, w: Sequence[float], Z: Sequence[int],
                     equality: Sequence[bool] = ()) -> float:
    """c_rmp + sum_z Z_z min(0, w_z); groups with equality convexity rows use w_z itself."""
    eq = list(equality) or [False] * len(w)
    total = c_rmp
    for wz, zz, e in zip(w, Z, eq):
        total += zz * (wz if e else min(0.0, wz))
    return total


def farley_ratio_lower_bound(duals: DualBundle, w: float, demand: Sequence[float], q_min: float) -> Optional[float]:
    """Lower bound on cost / (pi.y) over all columns of the single group, from its pricing bound w.

    Every column has cost - pi.y >= v = w + theta + sum of negative gammas. For v >= 0 this
    gives cost / pi.y >= 1 + v / P with P = sum_t pi_t min(E_t, Q_min) >= pi.y. For v < 0
    columns with small pi.y can have any ratio down to zero.
    """
    if not math.isfinite(w):
        return None
    v = w + float(duals.theta[0]) + sum(min(0.0, g) for g in duals.gamma.values())
    P = float(sum(p * min(e, q_min) for p, e in zip(duals.pi, demand)))
    if P <= 1e-12:
        return None
    return 1.0 + v / P if v >= 0.0 else 0.0


def farley_bound(duals: DualBundle, candidates: Sequence[Column], demand: Sequence[float],
                 ratio_lower_bound: Optional[float] = None) -> Optional[float]:
    """l(pi) * pi.E with l the smallest cost / (pi.y) over the candidates (and the optional bound)."""
    best = math.inf
    for col in candidates:
        py = float(np.dot(duals.pi, col.y))
        if py > 1e-12:
            best = min(best, col.cost / py)
    if ratio_lower_bound is not None:
        best = min(best, ratio_lower_bound)
    if not math.isfinite(best):
        return None
    return best * float(np.dot(duals.pi, demand))


def early_stop_cut(c_imp: float, c_rmp: float, Z: int) -> Optional[float]:
    """Right-hand side of the reduced-cost cut, or None without an incumbent."""
    if not math.isfinite(c_imp):
        return None
    return (c_imp - c_rmp) / Z


def jit_estimate(instance: Instance, z: int, duals: DualBundle) -> float:
    """Greedy production on the best-priced periods while the idle-maintenance plan stays feasible."""
    group = instance.groups[z]
    T = instance.periods
    cap = group.q_min
    y = np.zeros(T)
    order = sorted(range(T), key=lambda t: (-duals.pi[t], t))
    for t in order:
        if duals.pi[t] <= 0:
            break
        trial = y.copy()
        trial[t] = min(cap, instance.demand[t])
        if not _plan_ok(group, trial):
            break
        y = trial
    return -float(np.dot(duals.pi, y)) - float(duals.theta[z])


def _plan_ok(group, y: np.ndarray) -> bool:
    prev = np.array([c.max_condition for c in group.components])
    for t in range(len(y)):
        cur = np.array([min(c.max_condition, eval_func(c.f, prev[k], y[t], prev, group.f_box(k)))
                        for k, c in enumerate(group.components)])
        if (cur < 0).any():
            return False
        for k, c in enumerate(group.components):
            if y[t] > eval_func(c.g, cur[k], 0.0, (), group.g_box(k)) + 1e-9:
                return False
        prev = cur
    return True


def jit_ordering(instance: Instance, duals: DualBundle) -> List[int]:
    est = [jit_estimate(instance, z, duals) for z in range(len(instance.groups))]
    return sorted(range(len(instance.groups)), key=lambda z: (est[z], z))
