"""Best-bound branch and bound with outer approximation for concave rows."""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .lp_core import INFEASIBLE, OPTIMAL, LpProblem, LpSolver, Row
from .model import FuncBox, FuncSpec, eval_func, grad_func

INT_TOL = 1e-6
OA_TOL = 1e-7
MAX_CUTS_PER_ROW = 200
PURGE_SLACK = 1e-6
FRACTIONAL_OA_ROUNDS = 8
INTEGRAL_OA_ROUNDS = 200

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_LIMIT = "limit"


@dataclass
class NonlinearRow:
    """``target <= func(cond, prod; peers) [+ big_m * bigm_var]``."""

    target: int
    func: FuncSpec
    cond: Optional[int] = None
    prod: Optional[int] = None
    peers: Dict[int, int] = field(default_factory=dict)
    box: Optional[FuncBox] = None
    bigm_var: Optional[int] = None
    big_m: float = 0.0
    cond_const: float = 0.0  # used when `cond` is None
    peer_consts: Dict[int, float] = field(default_factory=dict)

    def args(self, x: np.ndarray):
        prev = x[self.cond] if self.cond is not None else self.cond_const
        prod = x[self.prod] if self.prod is not None else 0.0
        n_peer = max(list(self.peers) + list(self.peer_consts), default=-1) + 1
        peers = np.zeros(n_peer)
        for k, v in self.peer_consts.items():
            peers[k] = v
        for k, j in self.peers.items():
            peers[k] = x[j]
        return prev, prod, peers

    def rhs_value(self, x: np.ndarray) -> float:
        prev, prod, peers = self.args(x)
        val = eval_func(self.func, prev, prod, peers, self.box)
        if self.bigm_var is not None:
            val += self.big_m * x[self.bigm_var]
        return val

    def violation(self, x: np.ndarray) -> float:
        return x[self.target] - self.rhs_value(x)


@dataclass
class ConvexMinlp:
    lp: LpProblem
    binaries: List[int]
    nonlinear: List[NonlinearRow] = field(default_factory=list)
    integers: List[int] = field(default_factory=list)  # general integers beyond the binaries
    obj_offset: float = 0.0

    def integer_vars(self) -> List[int]:
        return sorted(set(self.binaries) | set(self.integers))


@dataclass
class MinlpLimits:
    gap: float = 0.0
    solutions: Optional[int] = None
    nodes: Optional[int] = None
    time: Optional[float] = None


@dataclass
class MinlpResult:
    status: str
    incumbent: Optional[np.ndarray]
    primal_bound: float
    dual_bound: float
    nodes: int
    cuts: int = 0
    lp_solves: int = 0
    bound_trace: List[float] = field(default_factory=list)
    solutions: List[np.ndarray] = field(default_factory=list)


def oa_cut_row(row: NonlinearRow, point: np.ndarray) -> Row:
    """Linearization of ``row`` at ``point``; valid everywhere on the box by concavity."""
    prev, prod, peers = row.args(point)
    grad = grad_func(row.func, (prev, prod, peers), row.box)
    # the gradient is taken at the clamped point, so linearize around it too
    box = row.box
    cp = min(max(prev, 0.0), box.cond_max) if box else max(prev, 0.0)
    pp = min(max(prod, 0.0), box.prod_max) if box else max(prod, 0.0)
    fval = eval_func(row.func, prev, prod, peers, box)
    coeffs: Dict[int, float] = {row.target: 1.0}
    const = fval
    if row.cond is not None:
        coeffs[row.cond] = coeffs.get(row.cond, 0.0) - grad[0]
        const -= grad[0] * cp
    if row.prod is not None:
        coeffs[row.prod] = coeffs.get(row.prod, 0.0) - grad[1]
        const -= grad[1] * pp
    for k, j in row.peers.items():
        g = grad[2 + k]
        hi = box.peer_max[k] if box and k < len(box.peer_max) else None
        u = max(peers[k], 0.0)
        if hi is not None:
            u = min(u, hi)
        coeffs[j] = coeffs.get(j, 0.0) - g
        const -= g * u
    if row.bigm_var is not None:
        coeffs[row.bigm_var] = coeffs.get(row.bigm_var, 0.0) - row.big_m
    return ({j: v for j, v in coeffs.items() if v != 0.0 or j == row.target}, "<=", const)


def add_oa_cut(relaxation: LpProblem, row: NonlinearRow, point: np.ndarray) -> LpProblem:
    return LpProblem(relaxation.objective.copy(), list(relaxation.rows) + [oa_cut_row(row, point)],
                     relaxation.lower.copy(), relaxation.upper.copy())


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    fixes: Dict[int, tuple] = field(compare=False, default_factory=dict)
    depth: int = field(compare=False, default=0)


class _OaRelaxation:
    def __init__(self, m: ConvexMinlp):
        self.m = m
        self.solver = LpSolver(m.lp)
        self.cuts: List[List[int]] = [[] for _ in m.nonlinear]
        self.retired: List[int] = []
        self.purge_at = 2 * len(m.nonlinear) + 40
        self.n_cuts = 0
        self.lp_solves = 0
        self.lo0 = m.lp.lower.copy()
        self.hi0 = m.lp.upper.copy()
        self.int_vars = m.integer_vars()

    def apply(self, fixes: Dict[int, tuple]):
        for j in self.int_vars:
            lo, hi = fixes.get(j, (self.lo0[j], self.hi0[j]))
            self.solver.set_bounds(j, lo, hi)

    def add_cut(self, r: int, point: np.ndarray):
        row = oa_cut_row(self.m.nonlinear[r], point)
        if len(self.cuts[r]) >= MAX_CUTS_PER_ROW:
            acts = [(self.solver.A[i] @ point - self.solver.b[i], i) for i in self.cuts[r]]
            slack_row = min(acts)[1]
            self.solver.set_row_active(slack_row, False)
            self.cuts[r].remove(slack_row)
            self.retired.append(slack_row)
        self.cuts[r].append(self.solver.add_row(*row))
        self.n_cuts += 1

    def purge(self, x: np.ndarray):
        """Drop non-binding cuts with basic slacks once the pool outgrows its budget."""
        n_cut_rows = sum(len(c) for c in self.cuts) + len(self.retired)
        if n_cut_rows <= self.purge_at:
            return
        drop = [i for i in self.retired if self.solver.slack_is_basic(i)]
        for cuts in self.cuts:
            for i in cuts:
                if self.solver.slack_is_basic(i) and self.solver.b[i] - self.solver.A[i] @ x > PURGE_SLACK:
                    drop.append(i)
        if not drop:
            return
        mapping = self.solver.remove_rows(drop)
        self.cuts = [[mapping[i] for i in cuts if i in mapping] for cuts in self.cuts]
        self.retired = [mapping[i] for i in self.retired if i in mapping]

    def solve(self, max_rounds: int, cutoff: float, stop_if_fractional: bool):
        """OA loop. Returns (lp solution, converged flag)."""
        rounds = 0
        while True:
            sol = self.solver.solve()
            self.lp_solves += 1
            if sol.status != OPTIMAL:
                return sol, False
            if sol.objective + self.m.obj_offset >= cutoff:
                return sol, False
            x = sol.primal
            viol = [row.violation(x) for row in self.m.nonlinear]
            bad = [r for r, v in enumerate(viol) if v > OA_TOL]
            self.purge(x)
            if not bad:
                return sol, True
            if rounds >= max_rounds:
                return sol, False
            if stop_if_fractional and rounds >= FRACTIONAL_OA_ROUNDS and _most_fractional(x, self.int_vars) >= 0:
                return sol, False
            for r in bad:
                self.add_cut(r, x)
            rounds += 1


def _most_fractional(x: np.ndarray, int_vars: Sequence[int]) -> int:
    best, best_j = INT_TOL, -1
    for j in int_vars:
        frac = abs(x[j] - round(x[j]))
        if frac > best + 1e-12:
            best, best_j = frac, j
    return best_j


def _gap(primal: float, dual: float) -> float:
    if not math.isfinite(primal):
        return math.inf
    if not math.isfinite(dual):
        return math.inf
    return (primal - dual) / max(1.0, abs(primal))


def solve_minlp(m: ConvexMinlp, limits: Optional[MinlpLimits] = None,
                objective_cutoff: Optional[float] = None) -> MinlpResult:
    limits = limits or MinlpLimits()
    start = time.perf_counter()
    relax = _OaRelaxation(m)
    int_vars = relax.int_vars
    cutoff_ext = math.inf if objective_cutoff is None else objective_cutoff
    primal = math.inf
    incumbent = None
    found: List[np.ndarray] = []
    n_solutions = 0
    heap: List[_Node] = [_Node(-math.inf, 0, {}, 0)]
    seq = 1
    nodes = 0
    cutoff_floor = math.inf  # smallest bound among nodes pruned only by the external cutoff
    unresolved = math.inf
    trace: List[float] = []
    stopped = False

    def current_cutoff():
        return min(primal, cutoff_ext) - 1e-9

    def global_dual():
        vals = [nd.bound for nd in heap]
        return min(vals + [primal, cutoff_floor, unresolved])

    while heap:
        dual = global_dual()
        trace.append(dual)
        if limits.gap is not None and _gap(primal, dual) <= limits.gap and math.isfinite(primal):
            stopped = _gap(primal, dual) > 1e-9
            break
        if limits.time is not None and time.perf_counter() - start > limits.time:
            stopped = True
            break
        if limits.nodes is not None and nodes >= limits.nodes:
            stopped = True
            break
        if limits.solutions is not None and n_solutions >= limits.solutions:
            stopped = True
            break
        node = heapq.heappop(heap)
        cut = current_cutoff()
        if node.bound >= cut:
            if node.bound < primal:
                cutoff_floor = min(cutoff_floor, node.bound)
            continue
        nodes += 1
        relax.apply(node.fixes)
        sol, converged = relax.solve(INTEGRAL_OA_ROUNDS, cut + 1e-9, True)
        if sol.status == INFEASIBLE:
            continue
        if sol.status != OPTIMAL:
            unresolved = min(unresolved, node.bound)
            continue
        bound = max(node.bound, sol.objective + m.obj_offset)
        if bound >= cut:
            if bound < primal:
                cutoff_floor = min(cutoff_floor, bound)
            continue
        x = sol.primal
        j = _most_fractional(x, int_vars)
        if j < 0:
            if not converged:
                unresolved = min(unresolved, bound)
                continue
            kind, val, xc = _polish(relax, x, node.fixes, cut)
            if kind == "cutoff":
                if val < primal:
                    cutoff_floor = min(cutoff_floor, val)
                continue
            if kind != "ok":
                unresolved = min(unresolved, bound)
                continue
            if val < primal:
                primal, incumbent = val, xc
                n_solutions += 1
                found.append(xc)
            continue
        lo, hi = node.fixes.get(j, (relax.lo0[j], relax.hi0[j]))
        down = dict(node.fixes)
        down[j] = (lo, math.floor(x[j]))
        up = dict(node.fixes)
        up[j] = (math.ceil(x[j]), hi)
        heapq.heappush(heap, _Node(bound, seq, down, node.depth + 1))
        heapq.heappush(heap, _Node(bound, seq + 1, up, node.depth + 1))
        seq += 2

    relax.apply({})
    if heap and stopped:
        dual = global_dual()
    else:
        dual = min(primal, cutoff_floor, unresolved)
    if incumbent is None:
        if not stopped and cutoff_floor == math.inf and unresolved == math.inf:
            status = STATUS_INFEASIBLE
        else:
            status = STATUS_LIMIT
    else:
        status = STATUS_OPTIMAL if _gap(primal, dual) <= 1e-9 else STATUS_LIMIT
    return MinlpResult(status, incumbent, primal, dual, nodes, relax.n_cuts, relax.lp_solves, trace, found)


def _polish(relax: _OaRelaxation, x: np.ndarray, fixes: Dict[int, tuple], cut: float):
    """Fix the integer variables at their rounded values and converge the OA loop."""
    fixed = dict(fixes)
    for j in relax.int_vars:
        v = float(round(x[j]))
        fixed[j] = (v, v)
    relax.apply(fixed)
    sol, converged = relax.solve(INTEGRAL_OA_ROUNDS, cut + 1e-9, False)
    relax.apply(fixes)
    if sol.status == OPTIMAL and sol.objective + relax.m.obj_offset >= cut + 1e-9:
        return "cutoff", sol.objective + relax.m.obj_offset, None
    if sol.status != OPTIMAL or not converged:
        return "failed", math.inf, None
    xc = sol.primal.copy()
    for j in relax.int_vars:
        xc[j] = round(xc[j])
    return "ok", sol.objective + relax.m.obj_offset, xc


class MinlpBuilder:
    """Incremental construction of a ConvexMinlp."""

    def __init__(self):
        self.obj: List[float] = []
        self.lo: List[float] = []
        self.hi: List[float] = []
        self.rows: List[Row] = []
        self.binaries: List[int] = []
        self.integers: List[int] = []
        self.nonlinear: List[NonlinearRow] = []
        self.offset = 0.0

    def var(self, cost: float = 0.0, lo: float = 0.0, hi: float = math.inf, binary: bool = False,
            integer: bool = False) -> int:
        j = len(self.obj)
        self.obj.append(cost)
        self.lo.append(lo)
        self.hi.append(hi)
        if binary:
            self.binaries.append(j)
        elif integer:
            self.integers.append(j)
        return j

    def row(self, coeffs: Dict[int, float], rel: str, rhs: float) -> int:
        self.rows.append((coeffs, rel, rhs))
        return len(self.rows) - 1

    def build(self) -> ConvexMinlp:
        lp = LpProblem(np.array(self.obj, dtype=float), self.rows, np.array(self.lo, dtype=float),
                       np.array(self.hi, dtype=float))
        return ConvexMinlp(lp, list(self.binaries), list(self.nonlinear), list(self.integers), self.offset)
