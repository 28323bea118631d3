"""Dense bounded-variable revised simplex with duals and Farkas certificates.

Rows are stored as ``a.x + s = b`` with a slack ``s`` whose bounds encode the
relation (``<=``: s >= 0, ``>=``: s <= 0, ``=``: s = 0). Phase 1 minimizes the
sum of basic infeasibilities starting from whatever basis is at hand, which is
also how re-solves after row, column or bound changes are warm started.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

FEAS_TOL = 1e-7
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
BLAND_AFTER = 1000
REFACTOR_EVERY = 50

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"

RELATIONS = ("<=", ">=", "=")

Row = Tuple[Dict[int, float], str, float]


class LpNumericalError(RuntimeError):
    """Basis stayed singular after a refactorization retry."""


@dataclass
class LpProblem:
    objective: np.ndarray
    rows: List[Row]
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        n = len(self.objective)
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("bounds must match the number of variables")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        for coeffs, rel, rhs in self.rows:
            if rel not in RELATIONS:
                raise ValueError(f"unknown relation {rel!r}")
            if not np.isfinite(rhs):
                raise ValueError("row rhs must be finite")
            if any(j < 0 or j >= n for j in coeffs):
                raise ValueError("row references an unknown variable")

    @property
    def n(self) -> int:
        return len(self.objective)


@dataclass
class LpSolution:
    status: str
    primal: np.ndarray
    objective: float
    duals: np.ndarray
    farkas_ray: Optional[np.ndarray] = None
    iterations: int = 0


def _slack_bounds(rel: str) -> Tuple[float, float]:
    if rel == "<=":
        return 0.0, np.inf
    if rel == ">=":
        return -np.inf, 0.0
    return 0.0, 0.0


class LpSolver:
    """Stateful solver that keeps its basis between solves."""

    def __init__(self, problem: Optional[LpProblem] = None):
        self.c = np.zeros(0)
        self.lo = np.zeros(0)
        self.hi = np.zeros(0)
        self.A = np.zeros((0, 0))
        self.b = np.zeros(0)
        self.rel: List[str] = []
        self.slo = np.zeros(0)
        self.shi = np.zeros(0)
        self._basis: Optional[List[int]] = None  # j >= 0 structural, -(i+1) slack
        self._at_upper: Dict[int, bool] = {}
        # last optimal basis; it stays dual feasible under added rows and bound changes
        self._opt_basis: Optional[Tuple[List[int], Dict[int, bool]]] = None
        self.iterations_total = 0
        if problem is not None:
            for j in range(problem.n):
                self.add_column(problem.objective[j], problem.lower[j], problem.upper[j])
            self.add_rows(problem.rows)

    # ------------------------------------------------------------ building
    @property
    def n(self) -> int:
        return len(self.c)

    @property
    def m(self) -> int:
        return len(self.b)

    def add_column(self, cost: float, lower: float = 0.0, upper: float = np.inf,
                   coeffs: Optional[Dict[int, float]] = None) -> int:
        if lower > upper:
            raise ValueError("lower bound exceeds upper bound")
        j = self.n
        self.c = np.append(self.c, float(cost))
        self.lo = np.append(self.lo, float(lower))
        self.hi = np.append(self.hi, float(upper))
        col = np.zeros((self.m, 1))
        for i, v in (coeffs or {}).items():
            col[i, 0] = v
        self.A = np.hstack([self.A.reshape(self.m, j), col])
        return j

    def add_rows(self, rows: Sequence[Row]) -> List[int]:
        ids = []
        if not rows:
            return ids
        block = np.zeros((len(rows), self.n))
        for r, (coeffs, rel, rhs) in enumerate(rows):
            if rel not in RELATIONS:
                raise ValueError(f"unknown relation {rel!r}")
            for j, v in coeffs.items():
                block[r, j] += v
            lo, hi = _slack_bounds(rel)
            self.rel.append(rel)
            self.b = np.append(self.b, float(rhs))
            self.slo = np.append(self.slo, lo)
            self.shi = np.append(self.shi, hi)
            ids.append(self.m - 1)
        self.A = np.vstack([self.A.reshape(self.m - len(rows), self.n), block])
        if self._basis is not None:
            self._basis.extend(-(i + 1) for i in ids)
        if self._opt_basis is not None:
            self._opt_basis[0].extend(-(i + 1) for i in ids)
        return ids

    def remove_rows(self, ids: Sequence[int]) -> Dict[int, int]:
        """Delete rows; returns the old-to-new index map of the rows that remain.

        The basis survives when every removed row has a basic slack.
        """
        drop = set(int(i) for i in ids)
        keep = [i for i in range(self.m) if i not in drop]
        mapping = {old: new for new, old in enumerate(keep)}
        self.A = self.A.reshape(self.m, self.n)[keep]
        self.b = self.b[keep]
        self.slo = self.slo[keep]
        self.shi = self.shi[keep]
        self.rel = [self.rel[i] for i in keep]

        def remap_basis(basis):
            if basis is None:
                return None
            out = []
            for j in basis:
                if j >= 0:
                    out.append(j)
                elif -j - 1 not in drop:
                    out.append(-(mapping[-j - 1] + 1))
            return out if len(out) == len(keep) else None

        def remap_upper(flags):
            return {(k if k >= 0 else -(mapping[-k - 1] + 1)): v for k, v in flags.items()
                    if k >= 0 or -k - 1 not in drop}

        self._basis = remap_basis(self._basis)
        self._at_upper = remap_upper(self._at_upper) if self._basis is not None else {}
        if self._opt_basis is not None:
            ob = remap_basis(self._opt_basis[0])
            self._opt_basis = (ob, remap_upper(self._opt_basis[1])) if ob is not None else None
        return mapping

    def slack_is_basic(self, i: int) -> bool:
        return self._basis is not None and -(i + 1) in self._basis

    def add_row(self, coeffs: Dict[int, float], rel: str, rhs: float) -> int:
        return self.add_rows([(coeffs, rel, rhs)])[0]

    def set_bounds(self, j: int, lower: float, upper: float):
        if lower > upper:
            raise ValueError("lower bound exceeds upper bound")
        self.lo[j] = lower
        self.hi[j] = upper

    def set_row_active(self, i: int, active: bool):
        """Inactive rows get a free slack, so they no longer restrict anything."""
        if active:
            self.slo[i], self.shi[i] = _slack_bounds(self.rel[i])
        else:
            self.slo[i], self.shi[i] = -np.inf, np.inf

    def set_rhs(self, i: int, rhs: float):
        self.b[i] = rhs

    def set_objective(self, c: np.ndarray):
        self.c = np.asarray(c, dtype=float).copy()

    def row_activity(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x

    def reset_basis(self):
        self._basis = None
        self._at_upper = {}
        self._opt_basis = None

    # ------------------------------------------------------------ solving
    def solve(self, iteration_limit: int = 100000) -> LpSolution:
        n, m = self.n, self.m
        N = n + m
        Af = np.hstack([self.A.reshape(m, n), np.eye(m)])
        cf = np.concatenate([self.c, np.zeros(m)])
        lo = np.concatenate([self.lo, self.slo])
        hi = np.concatenate([self.hi, self.shi])

        head = self._initial_head(n, m)
        is_basic = np.zeros(N, dtype=bool)
        is_basic[head] = True
        x = np.zeros(N)
        for j in range(N):
            if not is_basic[j]:
                x[j] = self._nonbasic_value(j, n, lo[j], hi[j])
        try:
            Binv = self._invert(Af, head)
        except LpNumericalError:
            head = list(range(n, N))
            is_basic[:] = False
            is_basic[head] = True
            for j in range(N):
                if not is_basic[j]:
                    x[j] = self._nonbasic_value(j, n, lo[j], hi[j])
            Binv = np.eye(m)
        head = np.array(head, dtype=int)
        x[head] = Binv @ (self.b - Af[:, ~is_basic] @ x[~is_basic]) if m else x[head]

        iters = 0
        if m and self._make_dual_feasible(Af, cf, lo, hi, head, is_basic, x, Binv):
            Binv, iters = self._dual_simplex(Af, cf, lo, hi, head, is_basic, x, Binv,
                                             min(iteration_limit, 5 * m + 100))
        degenerate = 0
        bland = False
        since_refactor = 0
        status = None
        y = np.zeros(m)
        ray = None
        while True:
            if since_refactor >= REFACTOR_EVERY:
                Binv = self._refactor(Af, head, is_basic, x, lo, hi)
                since_refactor = 0
            xb = x[head]
            below = xb < lo[head] - FEAS_TOL
            above = xb > hi[head] + FEAS_TOL
            phase1 = bool(below.any() or above.any())
            if phase1:
                cb = np.where(below, -1.0, np.where(above, 1.0, 0.0))
                cn = np.zeros(N)
            else:
                cb = cf[head]
                cn = cf
            y = Binv.T @ cb
            d = cn - Af.T @ y
            d[head] = 0.0
            q, direction = self._choose_entering(d, x, lo, hi, is_basic, bland)
            if q < 0:
                if since_refactor > 0:
                    # confirm on a fresh factorization before stopping
                    Binv = self._refactor(Af, head, is_basic, x, lo, hi)
                    since_refactor = 0
                    continue
                if phase1:
                    status = INFEASIBLE
                    ray = y.copy()
                else:
                    status = OPTIMAL
                break
            if iters >= iteration_limit:
                status = ITERATION_LIMIT
                break
            iters += 1
            alpha = Binv @ Af[:, q]
            rate = -direction * alpha
            theta, leave, leave_to_upper = self._ratio_test(rate, x[head], lo[head], hi[head], head, phase1, bland)
            span = hi[q] - lo[q]
            if span < theta:
                theta, leave = span, -1
            if not np.isfinite(theta):
                status = UNBOUNDED
                break
            degenerate = degenerate + 1 if theta <= 1e-12 else 0
            if degenerate > BLAND_AFTER:
                bland = True
            x[q] += direction * theta
            x[head] += theta * rate
            if leave < 0:
                continue
            out = head[leave]
            x[out] = hi[out] if leave_to_upper else lo[out]
            is_basic[out] = False
            is_basic[q] = True
            head[leave] = q
            piv = alpha[leave]
            row = Binv[leave] / piv
            Binv -= np.outer(alpha, row)
            Binv[leave] = row
            since_refactor += 1

        self.iterations_total += iters
        self._basis = [int(j) if j < n else -(int(j) - n + 1) for j in head]
        self._at_upper = {}
        for j in range(N):
            if not is_basic[j] and np.isfinite(hi[j]) and x[j] == hi[j] and hi[j] != lo[j]:
                key = j if j < n else -(j - n + 1)
                self._at_upper[key] = True
        if status == OPTIMAL:
            self._opt_basis = (list(self._basis), dict(self._at_upper))
        elif self._opt_basis is not None:
            self._basis, self._at_upper = list(self._opt_basis[0]), dict(self._opt_basis[1])
        primal = x[:n].copy()
        if status == OPTIMAL:
            return LpSolution(OPTIMAL, primal, float(self.c @ primal), y.copy(), None, iters)
        if status == INFEASIBLE:
            return LpSolution(INFEASIBLE, primal, np.inf, np.zeros(m), ray, iters)
        if status == UNBOUNDED:
            return LpSolution(UNBOUNDED, primal, -np.inf, np.zeros(m), None, iters)
        return LpSolution(ITERATION_LIMIT, primal, float(self.c @ primal), y.copy(), None, iters)

    # ------------------------------------------------------------ internals
    def _initial_head(self, n: int, m: int) -> List[int]:
        if self._basis is None or len(self._basis) != m:
            return list(range(n, n + m))
        head = [j if j >= 0 else n + (-j - 1) for j in self._basis]
        if len(set(head)) != m or any(h >= n + m for h in head):
            return list(range(n, n + m))
        return head

    def _nonbasic_value(self, j: int, n: int, lo: float, hi: float) -> float:
        key = j if j < n else -(j - n + 1)
        if self._at_upper.get(key) and np.isfinite(hi):
            return hi
        if np.isfinite(lo):
            return lo
        if np.isfinite(hi):
            return hi
        return 0.0

    def _make_dual_feasible(self, Af, cf, lo, hi, head, is_basic, x, Binv) -> bool:
        """Flip boxed nonbasics to their favourable bound; False if some reduced cost stays wrong."""
        y = Binv.T @ cf[head]
        d = cf - Af.T @ y
        flips = {}
        ok = True
        for j in np.flatnonzero(~is_basic):
            if lo[j] == hi[j]:
                continue
            at_lo = np.isfinite(lo[j]) and x[j] == lo[j]
            at_hi = np.isfinite(hi[j]) and x[j] == hi[j]
            if at_lo and d[j] < -OPT_TOL:
                if not np.isfinite(hi[j]):
                    ok = False
                    break
                flips[j] = hi[j]
            elif at_hi and d[j] > OPT_TOL:
                if not np.isfinite(lo[j]):
                    ok = False
                    break
                flips[j] = lo[j]
            elif not at_lo and not at_hi and abs(d[j]) > OPT_TOL:
                ok = False
                break
        if ok and flips:
            for j, v in flips.items():
                x[j] = v
            x[head] = Binv @ (self.b - Af[:, ~is_basic] @ x[~is_basic])
        return ok

    def _dual_simplex(self, Af, cf, lo, hi, head, is_basic, x, Binv, limit):
        """Bounded dual simplex from a dual feasible basis.

        Stops at primal feasibility, at a row without entering candidates, or at ``limit``;
        the primal loop afterwards confirms the status and produces certificates.
        """
        iters = 0
        since = 0
        while iters < limit:
            if since >= REFACTOR_EVERY:
                try:
                    Binv = self._invert(Af, list(head))
                except LpNumericalError:
                    Binv = self._refactor(Af, head, is_basic, x, lo, hi)
                    return Binv, iters
                x[head] = Binv @ (self.b - Af[:, ~is_basic] @ x[~is_basic])
                since = 0
            xb = x[head]
            lob, hib = lo[head], hi[head]
            infeas = np.maximum(lob - xb, 0.0) + np.maximum(xb - hib, 0.0)
            r = int(np.argmax(infeas))
            if infeas[r] <= FEAS_TOL:
                break
            increase = xb[r] < lob[r]
            target = lob[r] if increase else hib[r]
            y = Binv.T @ cf[head]
            d = cf - Af.T @ y
            alpha = Af.T @ Binv[r]
            nb = ~is_basic
            can_up = nb & (x < hi - 1e-12)
            can_down = nb & (x > lo + 1e-12)
            # x_Br moves by -alpha_j per unit increase of x_j
            if increase:
                cand_up = can_up & (alpha < -PIVOT_TOL)
                cand_down = can_down & (alpha > PIVOT_TOL)
            else:
                cand_up = can_up & (alpha > PIVOT_TOL)
                cand_down = can_down & (alpha < -PIVOT_TOL)
            cand = cand_up | cand_down
            if not cand.any():
                break
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                ratio = np.where(cand, np.abs(d) / np.abs(alpha), np.inf)
            best = ratio.min()
            ties = np.flatnonzero(ratio <= best + 1e-12)
            q = int(ties[np.argmax(np.abs(alpha[ties]))])
            col = Binv @ Af[:, q]
            step = (target - xb[r]) / -col[r]
            x[q] += step
            x[head] -= step * col
            out = head[r]
            x[out] = target
            is_basic[out] = False
            is_basic[q] = True
            head[r] = q
            row = Binv[r] / col[r]
            Binv -= np.outer(col, row)
            Binv[r] = row
            since += 1
            iters += 1
        return Binv, iters

    def _refactor(self, Af, head, is_basic, x, lo, hi) -> np.ndarray:
        """Fresh inverse; a numerically singular basis is replaced by the slack basis."""
        n = self.n
        try:
            Binv = self._invert(Af, list(head))
        except LpNumericalError:
            for j in head:
                if j < n:
                    is_basic[j] = False
                    x[j] = _nearest_bound(x[j], lo[j], hi[j])
            head[:] = np.arange(n, n + self.m)
            is_basic[head] = True
            Binv = np.eye(self.m)
        x[head] = Binv @ (self.b - Af[:, ~is_basic] @ x[~is_basic])
        return Binv

    @staticmethod
    def _invert(Af: np.ndarray, head: List[int]) -> np.ndarray:
        m = Af.shape[0]
        if m == 0:
            return np.zeros((0, 0))
        B = Af[:, head]
        try:
            Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise LpNumericalError("singular basis") from exc
        if not np.all(np.isfinite(Binv)) or np.abs(B @ Binv - np.eye(m)).max() > 1e-6:
            raise LpNumericalError("ill-conditioned basis")
        return Binv

    @staticmethod
    def _choose_entering(d, x, lo, hi, is_basic, bland):
        can_up = (~is_basic) & (x < hi - 1e-12) & (d < -OPT_TOL)
        can_down = (~is_basic) & (x > lo + 1e-12) & (d > OPT_TOL)
        cand = can_up | can_down
        if not cand.any():
            return -1, 0
        if bland:
            q = int(np.flatnonzero(cand)[0])
        else:
            score = np.where(cand, np.abs(d), -1.0)
            q = int(np.argmax(score))
        return q, (1 if can_up[q] else -1)

    @staticmethod
    def _ratio_test(rate, xb, lob, hib, head, phase1, bland):
        """Bounded ratio test; infeasible basics may pass through their violated bound only."""
        ok = np.abs(rate) > PIVOT_TOL
        with np.errstate(divide="ignore", invalid="ignore"):
            pos = ok & (rate > 0)
            neg = ok & (rate < 0)
            lim = np.full(len(rate), np.inf)
            up = np.zeros(len(rate), dtype=bool)
            # rate > 0: value increases
            a = pos & (xb < lob - FEAS_TOL)
            lim[a] = (lob[a] - xb[a]) / rate[a]
            b = pos & ~a & np.isfinite(hib) & (xb <= hib + FEAS_TOL)
            lim[b] = np.maximum(0.0, (hib[b] - xb[b]) / rate[b])
            up[b] = True
            # rate < 0: value decreases
            c = neg & (xb > hib + FEAS_TOL)
            lim[c] = (xb[c] - hib[c]) / -rate[c]
            up[c] = True
            d = neg & ~c & np.isfinite(lob) & (xb >= lob - FEAS_TOL)
            lim[d] = np.maximum(0.0, (xb[d] - lob[d]) / -rate[d])
        theta = float(lim.min()) if len(lim) else np.inf
        if not np.isfinite(theta):
            return np.inf, -1, False
        ties = np.flatnonzero(lim <= theta + 1e-12)
        if bland:
            leave = int(ties[np.argmin(np.asarray(head)[ties])])
        else:
            leave = int(ties[np.argmax(np.abs(rate[ties]))])
        return theta, leave, bool(up[leave])


def _nearest_bound(v: float, lo: float, hi: float) -> float:
    fin = [b for b in (lo, hi) if np.isfinite(b)]
    if not fin:
        return 0.0
    return min(fin, key=lambda b: abs(b - v))


def solve_lp(p: LpProblem, iteration_limit: int = 100000) -> LpSolution:
    return LpSolver(p).solve(iteration_limit)


def farkas_margin(rows: Sequence[Row], lower: np.ndarray, upper: np.ndarray, ray: np.ndarray,
                  zero_tol: float = 1e-9) -> float:
    """``ray.b - max over the box of (ray.A) x``; positive means the ray certifies infeasibility."""
    n = len(lower)
    agg = np.zeros(n)
    rhs = 0.0
    for (coeffs, _rel, b), w in zip(rows, ray):
        for j, v in coeffs.items():
            agg[j] += w * v
        rhs += w * b
    best = 0.0
    for j in range(n):
        a = agg[j]
        if abs(a) <= zero_tol:
            continue
        bound = upper[j] if a > 0 else lower[j]
        if not np.isfinite(bound):
            return -np.inf
        best += a * bound
    return rhs - best


def ray_signs_ok(rows: Sequence[Row], ray: np.ndarray, tol: float = 1e-12) -> bool:
    for (_c, rel, _b), w in zip(rows, ray):
        if rel == ">=" and w < -tol:
            return False
        if rel == "<=" and w > tol:
            return False
    return True
