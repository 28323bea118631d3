"""Branch-and-price over the aggregated master problem."""

from __future__ import annotations

import heapq
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field, replace
from functools import reduce
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .master import (BranchingDecision, Column, DualBundle, MasterState, RmpSolution, SolveReport, expand_to_schedule,
                     make_column, rmp_gap, solve_integer_rmp, solve_rmp)
from .lp_core import INFEASIBLE
from .minlp_kernel import MinlpLimits
from .model import Instance, Schedule, validate_schedule
from .pricing import (build_pricing, early_stop_cut, farley_bound, farley_ratio_lower_bound, jit_ordering,
                      lagrangian_bound, solve_pricing)

INT_TOL = 1e-6
SUPPORT_TOL = 1e-9
TIME_KEYS = ("exact-pricing", "integer-rmp", "branching", "rmp-resolve", "other")


# ---------------------------------------------------------------- integrality and branching

def _padded(state: MasterState, lam: np.ndarray) -> np.ndarray:
    # columns priced after the last RMP solve sit at zero
    n = len(state.columns)
    return lam if len(lam) >= n else np.concatenate([lam, np.zeros(n - len(lam))])


def _classes(state: MasterState, lam: np.ndarray, z: int) -> Dict[bytes, List[int]]:
    lam = _padded(state, lam)
    out: Dict[bytes, List[int]] = defaultdict(list)
    for i in state.by_group[z]:
        if lam[i] > SUPPORT_TOL:
            out[state.columns[i].x.tobytes()].append(i)
    return out


def check_integrality(state: MasterState, lam: np.ndarray) -> Optional[int]:
    """None if every class of identical maintenance patterns sums to an integer, else the first bad group."""
    for z in range(len(state.instance.groups)):
        for members in _classes(state, lam, z).values():
            s = float(sum(lam[i] for i in members))
            if abs(s - round(s)) > INT_TOL:
                return z
    return None


def _frac(v: float) -> bool:
    return abs(v - round(v)) > INT_TOL


def choose_threshold_direction(var: Tuple[int, int], le_side: Sequence[float],
                               ge_side: Sequence[float]) -> Tuple[Tuple[int, int], float, str]:
    """Prefer the side with more fractional columns, then the larger sum of squares, then <=."""
    if len(ge_side) > len(le_side):
        return var, 1.0, ">="
    if len(ge_side) == len(le_side) and sum(v * v for v in ge_side) > sum(v * v for v in le_side) + 1e-12:
        return var, 1.0, ">="
    return var, 0.0, "<="


@dataclass
class BranchCandidate:
    le: Tuple[Tuple[int, int], ...]
    ge: Tuple[Tuple[int, int], ...]
    value: float  # sum of lambda over support columns satisfying the thresholds
    fractional_members: Tuple[int, ...]
    steps: List[Tuple[Tuple, Tuple, Tuple[int, ...], float]] = field(default_factory=list)


def _satisfies(col: Column, le, ge) -> bool:
    return all(col.x[k, t] <= 0 for k, t in le) and all(col.x[k, t] >= 1 for k, t in ge)


def variable_order(state: MasterState, lam: np.ndarray, frac: Sequence[int]) -> List[Tuple[int, int]]:
    """Maintenance variables by how many fractional columns disagree with the heaviest one."""
    ref = max(frac, key=lambda i: (lam[i], -i))
    X = np.array([state.columns[i].x for i in frac])
    diff = (X != state.columns[ref].x[None]).sum(axis=0)
    K, T = diff.shape
    cand = [(k, t) for t in range(T) for k in range(K) if diff[k, t] > 0]
    return sorted(cand, key=lambda kt: (-diff[kt], kt[1], kt[0]))


def find_branching(state: MasterState, lam: np.ndarray, z: int) -> Optional[BranchCandidate]:
    """Refine threshold sets until the fractional columns satisfying them have a fractional sum."""
    lam = _padded(state, lam)
    frac = [i for i in state.by_group[z] if lam[i] > SUPPORT_TOL and _frac(lam[i])]
    support = [i for i in state.by_group[z] if lam[i] > SUPPORT_TOL]
    if not frac:
        return None
    order = variable_order(state, lam, frac)
    cols = state.columns

    def value(le, ge) -> float:
        return float(sum(lam[i] for i in support if _satisfies(cols[i], le, ge)))

    steps = []
    members = tuple(frac)
    v = value((), ())
    steps.append(((), (), members, v))
    if _frac(v):
        return BranchCandidate((), (), v, members, steps)
    heap = []
    seq = 0

    def push(le, ge, mem, from_le):
        nonlocal seq
        lams = [lam[i] for i in mem]
        heapq.heappush(heap, (-len(mem), -sum(x * x for x in lams), 0 if from_le else 1, seq, le, ge, mem))
        seq += 1

    push((), (), members, True)
    while heap:
        *_, le, ge, mem = heapq.heappop(heap)
        split = None
        for var in order:
            vals = {cols[i].x[var] for i in mem}
            if len(vals) > 1:
                split = var
                break
        if split is None:
            continue
        k, t = split
        le_mem = tuple(i for i in mem if cols[i].x[k, t] <= 0)
        ge_mem = tuple(i for i in mem if cols[i].x[k, t] >= 1)
        _, _, rel = choose_threshold_direction(split, [lam[i] for i in le_mem], [lam[i] for i in ge_mem])
        children = [(le + (split,), ge, le_mem), (le, ge + (split,), ge_mem)]
        if rel == ">=":
            children.reverse()
        for cle, cge, cmem in children:
            cv = value(cle, cge)
            steps.append((cle, cge, cmem, cv))
            if _frac(cv):
                return BranchCandidate(cle, cge, cv, cmem, steps)
        for cle, cge, cmem in children:
            push(cle, cge, cmem, len(cle) > len(le))
    return None


# ---------------------------------------------------------------- repair

def repair_step(state: MasterState, lam: np.ndarray) -> Schedule:
    """Merge each class of identical maintenance patterns into one column used (class sum) times."""
    lam = _padded(state, lam)
    counts: List[Tuple[Column, int]] = []
    inst = state.instance
    for z in range(len(inst.groups)):
        for members in _classes(state, lam, z).values():
            total = float(sum(lam[i] for i in members))
            n = int(round(total))
            if abs(total - n) > INT_TOL:
                raise AssertionError(f"class sum {total} is not integral")
            if n == 0:
                continue
            if len(members) == 1 and abs(lam[members[0]] - n) <= INT_TOL:
                counts.append((state.columns[members[0]], n))
                continue
            w = np.array([lam[i] for i in members]) / total
            y = sum(wi * state.columns[i].y for wi, i in zip(w, members))
            col = make_column(inst, z, state.columns[members[0]].x, y)
            counts.append((col, n))
    return expand_to_schedule(state, counts)


# ---------------------------------------------------------------- tree

@dataclass
class BpConfig:
    time_limit: float = 300.0
    node_limit: Optional[int] = None
    gap_tol: float = 1e-6
    early_branching: bool = True
    rmp_heuristic: bool = True
    farley: bool = True
    rmp_heuristic_time: float = 5.0
    rmp_heuristic_columns: int = 25
    early_branch_rounds: int = 5
    seed_schedule: Optional[Schedule] = None


@dataclass
class NodeState:
    id: int
    parent: Optional[int]
    decisions: List[int]  # branch row indices on the path
    bound: float
    depth: int = 0
    status: str = "open"  # open | branched | pruned | integral | infeasible | limit
    rounds: int = 0
    columns: int = 0


@dataclass
class BoundEvent:
    node: int
    kind: str  # lagrangian | farley | tightened | rmp
    value: float


def cost_multiple(instance: Instance) -> float:
    """Largest g with every maintenance cost a multiple of g (at 1e-6 resolution)."""
    vals = [int(round(c * 1e6)) for c in instance.cost_values()]
    if not vals:
        return 0.0
    g = reduce(math.gcd, vals)
    return g / 1e6


def tighten(value: float, g: float) -> float:
    if g < 1e-3 or not math.isfinite(value):
        return value
    return g * math.ceil(value / g - 1e-9)


def apply_branching(state: MasterState, node: NodeState, cand: BranchCandidate,
                    next_id: int) -> Tuple[NodeState, NodeState]:
    z = state.columns[cand.fractional_members[0]].group
    down = BranchingDecision(z, cand.le, cand.ge, "down", float(math.floor(cand.value)))
    up = BranchingDecision(z, cand.le, cand.ge, "up", float(math.ceil(cand.value)))
    bd = state.add_branching(down)
    bu = state.add_branching(up)
    return (NodeState(next_id, node.id, node.decisions + [bd], node.bound, node.depth + 1),
            NodeState(next_id + 1, node.id, node.decisions + [bu], node.bound, node.depth + 1))


class _Clock:
    def __init__(self):
        self.t = dict.fromkeys(TIME_KEYS, 0.0)

    def add(self, key: str, dt: float):
        self.t[key] += dt


class BranchAndPrice:
    def __init__(self, instance: Instance, config: Optional[BpConfig] = None):
        self.inst = instance
        self.cfg = config or BpConfig()
        self.state = MasterState(instance)
        self.g = cost_multiple(instance)
        self.start = time.perf_counter()
        self.clock = _Clock()
        self.c_imp = math.inf
        self.incumbent: Optional[Schedule] = None
        self.bound_events: List[BoundEvent] = []
        self.dual_trace: List[float] = []
        self.node_log: List[str] = []
        self.nodes: Dict[int, NodeState] = {}
        self.rounds = 0
        self.farkas_rounds = 0
        self.incumbents = 0
        self.cols_since_heur = 0
        self.heur_runs = 0
        self.limit_hit = False
        self.unresolved = math.inf
        self.G = len(instance.groups)
        self.Z = [g.multiplicity for g in instance.groups]
        self.eq = [z in self.state.equality_groups for z in range(self.G)]

    # ------------------------------------------------------------ helpers
    def elapsed(self) -> float:
        return time.perf_counter() - self.start

    def out_of_time(self) -> bool:
        return self.elapsed() > self.cfg.time_limit

    def remaining(self) -> float:
        return max(0.01, self.cfg.time_limit - self.elapsed())

    def _decisions_for(self, node: NodeState, z: int) -> Dict[int, BranchingDecision]:
        return {b: self.state.branch_rows[b].decision for b in node.decisions
                if self.state.branch_rows[b].decision.group == z}

    def _offer(self, schedule: Schedule, source: str) -> bool:
        if validate_schedule(self.inst, schedule):
            return False
        cost = schedule.cost(self.inst)
        if cost < self.c_imp - 1e-9:
            self.c_imp = cost
            self.incumbent = schedule
            self.incumbents += 1
            return True
        return False

    def _add(self, col: Column) -> bool:
        before = len(self.state.columns)
        self.state.add_column(col)
        if len(self.state.columns) > before:
            self.cols_since_heur += 1
            return True
        return False

    def _price(self, node: NodeState, duals: DualBundle, z: int, exact: bool, cut: Optional[float]):
        t0 = time.perf_counter()
        p = build_pricing(self.inst, z, duals, self._decisions_for(node, z), cut)
        res = solve_pricing(p, exact=exact, time_limit=self.remaining())
        self.clock.add("exact-pricing" if exact else "other", time.perf_counter() - t0)
        return res

    def _rmp(self) -> RmpSolution:
        t0 = time.perf_counter()
        sol = solve_rmp(self.state)
        self.clock.add("rmp-resolve", time.perf_counter() - t0)
        return sol

    def _emit(self, node: NodeState, kind: str, value: float):
        self.bound_events.append(BoundEvent(node.id, kind, value))

    # ------------------------------------------------------------ column generation at one node
    def column_generation(self, node: NodeState) -> Tuple[str, Optional[RmpSolution]]:
        """Returns (outcome, last optimal RMP solution); outcome in
        converged | early | pruned | infeasible | limit."""
        rounds_here = 0
        while True:
            if self.out_of_time():
                return "limit", None
            sol = self._rmp()
            if sol.status == INFEASIBLE:
                self.farkas_rounds += 1
                found, proven = False, True
                for z in range(self.G):
                    res = self._price(node, sol.duals, z, False, None)
                    if res.column is None:
                        res = self._price(node, sol.duals, z, True, None)
                        proven = proven and res.status in ("optimal", "infeasible")
                    if res.column is not None and self._add(res.column):
                        found = True
                        node.columns += 1
                        break
                if not found:
                    return ("infeasible" if proven else "limit"), None
                continue
            c_rmp = sol.objective
            rounds_here += 1
            node.rounds += 1
            self.rounds += 1
            duals = sol.duals
            cut = None
            if self.G == 1:
                cut = early_stop_cut(self.c_imp, c_rmp, self.Z[0])
            w: List[Optional[float]] = [None] * self.G
            added = False
            stalled = False
            order = jit_ordering(self.inst, duals)
            for exact in (False, True):
                for z in order:
                    res = self._price(node, duals, z, exact, cut)
                    w[z] = res.bound if w[z] is None else max(w[z], res.bound)
                    if res.column is not None:
                        if self._add(res.column):
                            node.columns += 1
                            added = True
                        else:
                            stalled = True
                        break
                if added or stalled:
                    break
                if self.out_of_time():
                    return "limit", sol
            if all(v is not None for v in w):
                lag = lagrangian_bound(c_rmp, w, self.Z, self.eq)
                self._emit(node, "lagrangian", lag)
                self._raise(node, lag)
            if self.cfg.farley and self.G == 1 and w[0] is not None and duals.pi.any():
                rlb = farley_ratio_lower_bound(duals, w[0], self.inst.demand, self.inst.groups[0].q_min)
                fb = farley_bound(duals, self.state.columns, self.inst.demand, rlb)
                if fb is not None and rlb is not None:
                    fb = min(fb, c_rmp)
                    self._emit(node, "farley", fb)
                    self._raise(node, fb)
            if not added:
                self._emit(node, "rmp", c_rmp)
                self._raise(node, c_rmp)
                return "converged", sol
            if node.bound >= self.c_imp - 1e-9:
                return "pruned", sol
            if (self.cfg.early_branching and rounds_here >= self.cfg.early_branch_rounds
                    and tighten(c_rmp, self.g) <= node.bound + 1e-9
                    and check_integrality(self.state, sol.lam) is not None):
                return "early", sol

    def _raise(self, node: NodeState, value: float):
        t = tighten(value, self.g)
        if t != value:
            self._emit(node, "tightened", t)
        if t > node.bound:
            node.bound = t

    # ------------------------------------------------------------ heuristics
    def _integer_rmp(self):
        if not self.cfg.rmp_heuristic or not self.state.columns:
            return
        t0 = time.perf_counter()
        self.heur_runs += 1
        res = solve_integer_rmp(self.state, min(self.cfg.rmp_heuristic_time, self.remaining()), 1, self.c_imp)
        ok = False
        if res is not None:
            counts = [(c, int(v)) for c, v in zip(self.state.columns, res.lam) if v > 0]
            try:
                ok = self._offer(expand_to_schedule(self.state, counts), "integer-rmp")
            except ValueError:
                ok = False
        if not ok:
            self.cols_since_heur = 0
        self.clock.add("integer-rmp", time.perf_counter() - t0)

    # ------------------------------------------------------------ main loop
    def global_dual(self, heap) -> float:
        vals = [nd.bound for _, _, nd in heap] + [self.c_imp, self.unresolved]
        return min(vals)

    def run(self) -> SolveReport:
        if self.cfg.seed_schedule is not None:
            for n, (ms, z) in enumerate(zip(self.cfg.seed_schedule.machines, self.inst.machine_groups())):
                self._add(make_column(self.inst, z, ms.x, np.minimum(ms.y, self.inst.demand)))
            self._offer(self.cfg.seed_schedule, "seed")
        root = NodeState(0, None, [], -math.inf)
        self.nodes[0] = root
        heap = [(root.bound, 0, root)]
        next_id = 1
        processed = 0
        while heap:
            dual = self.global_dual(heap)
            self.dual_trace.append(dual)
            if math.isfinite(self.c_imp) and rmp_gap(self.c_imp, dual) <= self.cfg.gap_tol:
                break
            if self.out_of_time() or (self.cfg.node_limit is not None and processed >= self.cfg.node_limit):
                self.limit_hit = True
                break
            _, _, node = heapq.heappop(heap)
            if node.bound >= self.c_imp - 1e-9:
                node.status = "pruned"
                continue
            processed += 1
            self.state.set_active_branching(node.decisions)
            outcome, sol = self.column_generation(node)
            if node.id == 0 or self.cols_since_heur >= self.cfg.rmp_heuristic_columns:
                self._integer_rmp()
            self._log(node)
            if outcome == "infeasible":
                node.status = "infeasible"
                continue
            if outcome == "limit":
                node.status = "limit"
                self.limit_hit = True
                self.unresolved = min(self.unresolved, node.bound)
                break
            if outcome == "pruned" or node.bound >= self.c_imp - 1e-9:
                node.status = "pruned"
                continue
            t0 = time.perf_counter()
            z = check_integrality(self.state, sol.lam)
            if z is None:
                self._offer(repair_step(self.state, sol.lam), "repair")
                node.status = "integral"
                self.clock.add("branching", time.perf_counter() - t0)
                continue
            cand = find_branching(self.state, sol.lam, z)
            if cand is None:
                raise AssertionError("fractional group without a separating threshold set")
            down, up = apply_branching(self.state, node, cand, next_id)
            next_id += 2
            node.status = "branched"
            for child in (down, up):
                self.nodes[child.id] = child
                heapq.heappush(heap, (child.bound, child.id, child))
            self.clock.add("branching", time.perf_counter() - t0)
        return self._report(heap, processed)

    def _log(self, node: NodeState):
        self.node_log.append(f"{node.id}\t{node.depth}\t{node.bound:.9g}\t{node.rounds}\t{node.columns}")

    def _report(self, heap, processed: int) -> SolveReport:
        dual = self.global_dual(heap) if heap else min(self.c_imp, self.unresolved)
        if self.limit_hit:
            dual = min(dual, self.unresolved)
        dual = min(dual, self.c_imp)
        if self.incumbent is None and not self.limit_hit and not heap:
            status = "infeasible"
        elif self.incumbent is not None and rmp_gap(self.c_imp, dual) <= self.cfg.gap_tol:
            status = "optimal"
            dual = max(dual, self.c_imp) if not self.limit_hit else dual
        else:
            status = "limit"
        if status == "optimal":
            dual = self.c_imp
        wall = self.elapsed()
        used = sum(self.clock.t.values())
        brk = dict(self.clock.t)
        brk["other"] += max(0.0, wall - used)
        total = sum(brk.values()) or 1.0
        rep = SolveReport(status, self.c_imp, dual if status != "infeasible" else math.inf,
                          rmp_gap(self.c_imp, dual) if status != "infeasible" else math.inf, processed,
                          pricing_rounds=self.rounds, columns=len(self.state.columns), wall_time=wall,
                          schedule=self.incumbent, method="dw",
                          time_breakdown={k: v / total for k, v in brk.items()})
        rep.stats = {"bound_events": [(e.node, e.kind, e.value) for e in self.bound_events],
                     "dual_trace": list(self.dual_trace),
                     "node_log": list(self.node_log),
                     "node_bounds": {n.id: (n.parent, n.bound) for n in self.nodes.values()},
                     "node_decisions": {n.id: [self.state.branch_rows[b].decision for b in n.decisions]
                                        for n in self.nodes.values()},
                     "integer_rmp_runs": self.heur_runs,
                     "farkas_rounds": self.farkas_rounds,
                     "incumbents": self.incumbents}
        return rep


def solve_bp(instance: Instance, limits: Optional[MinlpLimits] = None,
             config: Optional[BpConfig] = None) -> SolveReport:
    """Branch-and-price; ``limits`` (time, nodes, gap) override the matching config fields."""
    cfg = replace(config) if config is not None else BpConfig()
    if limits is not None:
        if limits.time is not None:
            cfg.time_limit = limits.time
        if limits.nodes is not None:
            cfg.node_limit = limits.nodes
        if limits.gap is not None:
            cfg.gap_tol = max(limits.gap, 1e-9)
    return BranchAndPrice(instance, cfg).run()
