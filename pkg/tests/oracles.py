"""Brute-force reference solvers used by the tests.

Everything here is written against the raw instance data only; no solver code
from the package is imported, so agreement with it is meaningful.
"""

from __future__ import annotations

import itertools
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

TOL = 1e-6


# ---------------------------------------------------------------- toy integer program

def toy_enumeration():
    """min v1 + 2 v2 + w1 + 3 w2 over {0,1,2}^4 with one linking row and two block rows."""
    best, arg = math.inf, None
    for v1, v2, w1, w2 in itertools.product(range(3), repeat=4):
        if v1 + v2 + w1 + w2 < 4 or 3 * v1 + v2 > 3 or 2 * w1 + w2 > 3:
            continue
        val = v1 + 2 * v2 + w1 + 3 * w2
        if val < best:
            best, arg = val, (v1, v2, w1, w2)
    return best, arg


# ---------------------------------------------------------------- function values

def _term(kind, slot, coeffs, u):
    if kind == "linear":
        return coeffs[0] * u
    if kind == "polynomial":
        out = np.zeros_like(u)
        for i, a in enumerate(coeffs):
            out = out + a * u ** (i + 1)
        return out
    a, c = coeffs[0], coeffs[1]
    b = coeffs[2] if len(coeffs) > 2 else 0.0
    if slot == "prod":
        return -a * (np.exp2(c * u) - 1.0) + b * u
    return a * (1.0 - np.exp2(-c * u)) + b * u


# ---------------------------------------------------------------- maintenance patterns

def _component_patterns(D: int, T: int) -> List[Tuple[int, ...]]:
    out = []
    last = T - D  # latest 1-based start of a full window
    for bits in itertools.product((0, 1), repeat=T):
        ok = True
        for t in range(T):
            started = bits[t] == 1 and (t == 0 or bits[t - 1] == 0)
            if started and any(bits[i] == 0 for i in range(t + 1, min(t + D, T - 1) + 1)):
                ok = False
                break
        if ok:
            if last <= 0:
                ok = not any(bits)
            else:
                ok = all(bits[t] <= bits[last - 1] for t in range(last, T))
        if ok:
            out.append(bits)
    return out


def machine_patterns(group, T: int) -> List[Tuple[float, np.ndarray]]:
    """All admissible maintenance matrices of one machine, cheapest first."""
    per = [_component_patterns(c.duration, T) for c in group.components]
    out = []
    for combo in itertools.product(*per):
        x = np.array(combo, dtype=int)
        if any((x[k] > x[kp]).any() for k, kp in group.implications):
            continue
        cost = float(sum(c.cost * x[k].sum() for k, c in enumerate(group.components)))
        out.append((cost, x))
    out.sort(key=lambda p: p[0])
    return out


# ---------------------------------------------------------------- feasibility of fixed patterns
#
# For fixed maintenance the largest condition trajectory is a concave function of the
# production vector (concave nondecreasing recursion), so the worst slack over all rows is
# concave too. Functions are evaluated without clamping at zero to keep that property; the
# two agree wherever conditions are nonnegative.

def _f_unclamped(comp, k, conds, prod):
    f = comp.f
    out = np.full(len(prod), float(f.constant))
    for t in f.terms:
        if t.slot == "cond":
            u = conds[:, k]
        elif t.slot == "prod":
            u = prod
        else:
            u = conds[:, t.peer]
        out = out + _term(f.kind, t.slot, t.coeffs, u)
    return out


def _g_unclamped(comp, r):
    out = np.full(len(r), float(comp.g.constant))
    for t in comp.g.terms:
        out = out + _term(comp.g.kind, t.slot, t.coeffs, r)
    return out


def machine_slack(group, x: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Worst slack of every production path in ``ys`` (S, T') over the first T' periods."""
    comps = group.components
    S, T = ys.shape
    conds = np.tile([c.max_condition for c in comps], (S, 1)).astype(float)
    worst = np.full(S, np.inf)
    for t in range(T):
        new = np.empty_like(conds)
        for k, comp in enumerate(comps):
            if x[k, t]:
                new[:, k] = comp.max_condition
            else:
                new[:, k] = np.minimum(comp.max_condition, _f_unclamped(comp, k, conds, ys[:, t]))
        for k, comp in enumerate(comps):
            worst = np.minimum(worst, new[:, k])
            worst = np.minimum(worst, _g_unclamped(comp, new[:, k]) - ys[:, t])
        conds = new
    return worst


def single_feasible(group, x: np.ndarray, demand: Sequence[float]) -> bool:
    q = min(c.max_production for c in group.components)
    for t, e in enumerate(demand):
        if e > (0.0 if x[:, t].any() else q) + TOL:
            return False
    return bool(machine_slack(group, x, np.array([demand], dtype=float))[0] >= -TOL)


class _Found(Exception):
    pass


GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def pair_feasible(g1, x1: np.ndarray, g2, x2: np.ndarray, demand: Sequence[float],
                  divisions: int = 1000) -> bool:
    """Is there a split y1 + y2 = E, at resolution Q/divisions, that both machines can follow?

    Lower production never hurts a machine, so splitting the demand exactly is enough.
    The worst slack is maximized over y1 by nested golden-section search on the outer
    periods and a full grid on the last one.
    """
    E = np.asarray(demand, dtype=float)
    T = len(E)
    q1 = min(c.max_production for c in g1.components)
    q2 = min(c.max_production for c in g2.components)
    h = min(q1, q2) / divisions
    lo = np.zeros(T)
    hi = np.zeros(T)
    for t in range(T):
        cap1 = 0.0 if x1[:, t].any() else q1
        cap2 = 0.0 if x2[:, t].any() else q2
        lo[t], hi[t] = max(0.0, E[t] - cap2), min(E[t], cap1)
        if lo[t] > hi[t] + TOL:
            return False
    hi = np.maximum(hi, lo)
    # necessary: each machine alone must manage its forced minimum
    if machine_slack(g1, x1, lo[None, :])[0] < -TOL or machine_slack(g2, x2, (E - hi)[None, :])[0] < -TOL:
        return False

    def phi(paths: np.ndarray) -> np.ndarray:
        vals = np.minimum(machine_slack(g1, x1, paths), machine_slack(g2, x2, E[None, :] - paths))
        if vals.max() >= -TOL:
            raise _Found
        return vals

    def inner(prefix: List[float]) -> float:
        d = len(prefix)
        if d == T - 1:
            grid = np.unique(np.concatenate([np.arange(lo[d], hi[d], h), [hi[d]]]))
            paths = np.column_stack([np.tile(prefix, (len(grid), 1)), grid]) if d else grid[:, None]
            return float(phi(paths).max())
        a, b = lo[d], hi[d]
        if b - a <= h:
            return max(inner(prefix + [a]), inner(prefix + [b]))
        c1, c2 = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
        v1, v2 = inner(prefix + [c1]), inner(prefix + [c2])
        while b - a > h:
            if v1 >= v2:
                b, c2, v2 = c2, c1, v1
                c1 = b - GOLDEN * (b - a)
                v1 = inner(prefix + [c1])
            else:
                a, c1, v1 = c1, c2, v2
                c2 = a + GOLDEN * (b - a)
                v2 = inner(prefix + [c2])
        return max(v1, v2, inner(prefix + [a]), inner(prefix + [b]))

    try:
        inner([])
    except _Found:
        return True
    return False


def oracle_optimum(instance, divisions: int = 1000, accept=None) -> Tuple[str, float]:
    """("optimal", cost) or ("infeasible", inf) by enumerating maintenance patterns.

    ``accept``, if given, receives [(group, x), ...] for one pattern per machine and can
    reject combinations (used to restrict the search to a branch-and-bound node).
    """
    T = instance.periods
    machines = [z for z, g in enumerate(instance.groups) for _ in range(g.multiplicity)]
    if len(machines) > 2:
        raise ValueError("the enumeration oracle handles at most two machines")
    demand = list(instance.demand)
    if len(machines) == 1:
        grp = instance.groups[machines[0]]
        for cost, x in machine_patterns(grp, T):
            if accept is not None and not accept([(machines[0], x)]):
                continue
            if single_feasible(grp, x, demand):
                return "optimal", cost
        return "infeasible", math.inf
    g1, g2 = instance.groups[machines[0]], instance.groups[machines[1]]
    p1 = machine_patterns(g1, T)
    p2 = machine_patterns(g2, T)
    same = machines[0] == machines[1]
    pairs = []
    for i, (c1, _) in enumerate(p1):
        for j, (c2, _) in enumerate(p2):
            if same and j < i:
                continue
            pairs.append((c1 + c2, i, j))
    pairs.sort()
    for cost, i, j in pairs:
        if accept is not None and not accept([(machines[0], p1[i][1]), (machines[1], p2[j][1])]):
            continue
        if pair_feasible(g1, p1[i][1], g2, p2[j][1], demand, divisions):
            return "optimal", cost
    return "infeasible", math.inf
