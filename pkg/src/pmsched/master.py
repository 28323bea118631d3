"""Restricted master problem: column pool, rows, duals, Farkas mode and the integer RMP."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .lp_core import INFEASIBLE, OPTIMAL, LpProblem, LpSolver
from .minlp_kernel import ConvexMinlp, MinlpLimits, solve_minlp
from .model import (FEAS_TOL, Instance, MachineGroupSpec, MachineSchedule, Schedule, simulate_conditions,
                    validate_schedule)

DEDUP_TOL = 1e-9


def rmp_gap(primal: float, dual: float) -> float:
    """(primal - dual) / max(1, primal)."""
    if not (math.isfinite(primal) and math.isfinite(dual)):
        return math.inf
    return (primal - dual) / max(1.0, primal)


@dataclass
class SolveReport:
    status: str  # optimal | infeasible | limit
    primal_bound: float
    dual_bound: float
    gap: float
    nodes: int
    pricing_rounds: int = 0
    columns: int = 0
    wall_time: float = 0.0
    schedule: Optional[Schedule] = None
    method: str = ""
    time_breakdown: Dict[str, float] = field(default_factory=dict)
    stats: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        def num(v):
            return v if math.isfinite(v) else None
        return {
            "method": self.method,
            "status": self.status,
            "primal_bound": num(self.primal_bound),
            "dual_bound": num(self.dual_bound),
            "gap": num(self.gap),
            "nodes": self.nodes,
            "pricing_rounds": self.pricing_rounds,
            "columns": self.columns,
            "wall_time": self.wall_time,
            "time_breakdown": self.time_breakdown,
        }


class ColumnError(ValueError):
    """A column that is not a feasible single-machine schedule of its group."""


@dataclass
class Column:
    group: int
    x: np.ndarray  # (K, T) binary
    y: np.ndarray  # (T,)
    r: np.ndarray  # (K, T)
    cost: float
    id: int = -1

    def to_dict(self) -> Dict[str, object]:
        return {"id": self.id, "group": self.group, "cost": self.cost, "x": self.x.tolist(),
                "y": self.y.tolist(), "r": self.r.tolist()}


def make_column(instance: Instance, z: int, x, y, r=None) -> Column:
    """Column with the largest condition trajectory unless ``r`` is given."""
    group = instance.groups[z]
    x = np.asarray(np.round(x), dtype=int)
    y = np.clip(np.asarray(y, dtype=float), 0.0, None)
    if r is None:
        R = np.array([c.max_condition for c in group.components])[:, None]
        r = np.clip(simulate_conditions(group, x, y), 0.0, R)
    cost = float(sum(c.cost * x[k].sum() for k, c in enumerate(group.components)))
    return Column(z, x, y, np.asarray(r, dtype=float), cost)


def idle_column(instance: Instance, z: int) -> Column:
    K = instance.groups[z].n_components
    return make_column(instance, z, np.zeros((K, instance.periods), dtype=int), np.zeros(instance.periods))


def idle_feasible(instance: Instance, z: int) -> bool:
    group = instance.groups[z]
    K, T = group.n_components, instance.periods
    return bool((simulate_conditions(group, np.zeros((K, T), dtype=int), np.zeros(T)) >= -FEAS_TOL).all())


def column_violations(instance: Instance, col: Column, tol: float = FEAS_TOL) -> List[str]:
    group = instance.groups[col.group]
    K, T = group.n_components, instance.periods
    if col.x.shape != (K, T) or col.y.shape != (T,) or col.r.shape != (K, T):
        return [f"shape mismatch for group {col.group}: expected K={K}, T={T}"]
    single = Instance(T, (MachineGroupSpec(group.components, group.implications, 1),), tuple([0.0] * T))
    out = [str(v) for v in validate_schedule(single, Schedule([MachineSchedule(col.x, col.y, col.r)]), tol)]
    over = np.flatnonzero(col.y > np.asarray(instance.demand) + tol)
    if len(over):
        out.append(f"production above demand in periods {list(over + 1)}")
    cost = sum(c.cost * col.x[k].sum() for k, c in enumerate(group.components))
    if abs(cost - col.cost) > 1e-9:
        out.append(f"cost {col.cost} does not match maintenance cost {cost}")
    return out


@dataclass(frozen=True)
class BranchingDecision:
    """Threshold set over group ``group``'s maintenance variables plus the side it bounds.

    ``le`` holds (k, t) with x <= 0, ``ge`` holds (k, t) with x >= 1. The down side bounds the
    member sum by ``bound`` from above, the up side from below.
    """

    group: int
    le: Tuple[Tuple[int, int], ...]
    ge: Tuple[Tuple[int, int], ...]
    side: str
    bound: float

    def satisfied_by(self, col: Column) -> bool:
        if col.group != self.group:
            return False
        return all(col.x[k, t] <= 0 for k, t in self.le) and all(col.x[k, t] >= 1 for k, t in self.ge)

    def describe(self) -> str:
        parts = [f"x[{k},{t}]<=0" for k, t in self.le] + [f"x[{k},{t}]>=1" for k, t in self.ge]
        rel = "<=" if self.side == "down" else ">="
        return f"z{self.group}:{{{', '.join(parts)}}} {rel} {self.bound:g}"


@dataclass
class BranchRow:
    decision: BranchingDecision
    row: int
    members: set = field(default_factory=set)


@dataclass
class DualBundle:
    pi: np.ndarray
    theta: np.ndarray
    gamma: Dict[int, float] = field(default_factory=dict)  # branch row index -> dual
    farkas: bool = False


@dataclass
class RmpSolution:
    status: str  # optimal | infeasible
    objective: float
    lam: np.ndarray
    duals: Optional[DualBundle]


class MasterState:
    """Column pool and the restricted master LP (demand, convexity and branching rows)."""

    def __init__(self, instance: Instance):
        self.instance = instance
        T = instance.periods
        self.lp = LpSolver()
        self.demand_rows = [self.lp.add_row({}, ">=", float(instance.demand[t])) for t in range(T)]
        # groups whose idle plan is infeasible must schedule every machine explicitly
        self.equality_groups = {z for z in range(len(instance.groups)) if not idle_feasible(instance, z)}
        self.convexity_rows = [
            self.lp.add_row({}, "=" if z in self.equality_groups else "<=", float(g.multiplicity))
            for z, g in enumerate(instance.groups)]
        self.columns: List[Column] = []
        self.by_group: List[List[int]] = [[] for _ in instance.groups]
        self.branch_rows: List[BranchRow] = []
        self._active: List[int] = []
        self._index: Dict[Tuple[int, bytes], List[int]] = {}

    # ------------------------------------------------------------ columns
    def find_duplicate(self, col: Column) -> Optional[int]:
        for i in self._index.get((col.group, col.x.tobytes()), []):
            if np.abs(self.columns[i].y - col.y).max(initial=0.0) <= DEDUP_TOL:
                return i
        return None

    def add_column(self, col: Column, check: bool = True) -> int:
        dup = self.find_duplicate(col)
        if dup is not None:
            return dup
        if check:
            bad = column_violations(self.instance, col)
            if bad:
                raise ColumnError("; ".join(bad))
        col.id = len(self.columns)
        coeffs = {self.demand_rows[t]: float(v) for t, v in enumerate(col.y) if v != 0.0}
        coeffs[self.convexity_rows[col.group]] = 1.0
        for br in self.branch_rows:
            if br.decision.satisfied_by(col):
                br.members.add(col.id)
                coeffs[br.row] = 1.0
        self.lp.add_column(col.cost, 0.0, np.inf, coeffs)
        self.columns.append(col)
        self.by_group[col.group].append(col.id)
        self._index.setdefault((col.group, col.x.tobytes()), []).append(col.id)
        return col.id

    # ------------------------------------------------------------ branching rows
    def add_branching(self, decision: BranchingDecision) -> int:
        members = {c.id for c in self.columns if decision.satisfied_by(c)}
        rel = "<=" if decision.side == "down" else ">="
        row = self.lp.add_row({i: 1.0 for i in members}, rel, decision.bound)
        self.lp.set_row_active(row, False)
        self.branch_rows.append(BranchRow(decision, row, members))
        return len(self.branch_rows) - 1

    def set_active_branching(self, active: Sequence[int]):
        on = set(active)
        for b, br in enumerate(self.branch_rows):
            self.lp.set_row_active(br.row, b in on)
        self._active = sorted(on)

    def active_branching(self) -> List[int]:
        return list(self._active)

    def memberships_from_scratch(self) -> List[set]:
        return [{c.id for c in self.columns if br.decision.satisfied_by(c)} for br in self.branch_rows]

    def dump(self) -> Dict[str, object]:
        return {"columns": [c.to_dict() for c in self.columns],
                "branching": [{"decision": br.decision.describe(), "members": sorted(br.members)}
                              for br in self.branch_rows]}

    # ------------------------------------------------------------ bundles
    def _bundle(self, y: np.ndarray, farkas: bool) -> DualBundle:
        pi = np.array([y[i] for i in self.demand_rows])
        theta = np.array([y[i] for i in self.convexity_rows])
        gamma = {b: float(y[self.branch_rows[b].row]) for b in self._active}
        return DualBundle(pi, theta, gamma, farkas)


def solve_rmp(state: MasterState) -> RmpSolution:
    """Optimal duals, or normalized Farkas duals when the RMP is infeasible."""
    sol = state.lp.solve()
    if sol.status == OPTIMAL:
        return RmpSolution(OPTIMAL, sol.objective, sol.primal.copy(), state._bundle(sol.duals, False))
    if sol.status == INFEASIBLE:
        ray = np.asarray(sol.farkas_ray, dtype=float)
        scale = np.abs(ray).max(initial=0.0)
        if scale > 0:
            ray = ray / scale
        return RmpSolution(INFEASIBLE, math.inf, sol.primal.copy(), state._bundle(ray, True))
    raise RuntimeError(f"restricted master LP ended with status {sol.status}")


@dataclass
class IntegerRmpResult:
    lam: np.ndarray
    objective: float


def solve_integer_rmp(state: MasterState, time_limit: Optional[float] = 5.0, solutions: Optional[int] = 1,
                      objective_cutoff: Optional[float] = None,
                      branching: Sequence[int] = ()) -> Optional[IntegerRmpResult]:
    """Integral lambda over the current pool, strictly below the cutoff, or None."""
    n = len(state.columns)
    if n == 0:
        return None
    lp = state.lp
    rows = []
    keep = list(state.demand_rows) + list(state.convexity_rows) + [state.branch_rows[b].row for b in branching]
    A = lp.A.reshape(lp.m, lp.n)
    for i in keep:
        coeffs = {j: float(A[i, j]) for j in np.flatnonzero(A[i])}
        rows.append((coeffs, lp.rel[i], float(lp.b[i])))
    upper = np.array([float(state.instance.groups[c.group].multiplicity) for c in state.columns])
    prob = LpProblem(np.array([c.cost for c in state.columns]), rows, np.zeros(n), upper)
    m = ConvexMinlp(prob, [], [], list(range(n)))
    cutoff = None if objective_cutoff is None or not math.isfinite(objective_cutoff) else objective_cutoff - 1e-9
    res = solve_minlp(m, MinlpLimits(gap=0.0, solutions=solutions, time=time_limit), cutoff)
    if res.incumbent is None:
        return None
    if objective_cutoff is not None and res.primal_bound >= objective_cutoff - 1e-9:
        return None
    lam = np.round(res.incumbent).astype(int)
    return IntegerRmpResult(lam, float(sum(c.cost * v for c, v in zip(state.columns, lam))))


def expand_to_schedule(state: MasterState, counts: Sequence[Tuple[Column, int]]) -> Schedule:
    """Per-machine schedules from (column, multiplicity) pairs; spare machines stay idle."""
    inst = state.instance
    per_group: List[List[Column]] = [[] for _ in inst.groups]
    for col, mult in counts:
        per_group[col.group].extend([col] * int(mult))
    machines = []
    used = [0] * len(inst.groups)
    for z in inst.machine_groups():
        if used[z] < len(per_group[z]):
            col = per_group[z][used[z]]
            machines.append(MachineSchedule(col.x.copy(), col.y.copy(), col.r.copy()))
        else:
            idle = idle_column(inst, z)
            machines.append(MachineSchedule(idle.x, idle.y, idle.r))
        used[z] += 1
    for z, cols in enumerate(per_group):
        if len(cols) > inst.groups[z].multiplicity:
            raise ColumnError(f"group {z} uses {len(cols)} schedules for {inst.groups[z].multiplicity} machines")
    return Schedule(machines)
