"""Instances, schedules, degradation/limit functions and the schedule validator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

FORMAT_VERSION = 1
FEAS_TOL = 1e-6
LN2 = math.log(2.0)

KINDS = ("linear", "polynomial", "exponential")
SLOTS = ("cond", "prod", "peer")


class ModelError(ValueError):
    """Structured validation error for model data."""


class FuncSpecError(ModelError):
    pass


class SchemaError(ModelError):
    pass


class ScheduleDimensionError(ModelError):
    pass


@dataclass(frozen=True)
class Term:
    """One separable term of a FuncSpec.

    `slot` is "cond" (own condition), "prod" (production) or "peer" (condition of
    component `peer`). Coefficient meaning depends on the function kind:

    * linear: ``[a]`` -> ``a*u``
    * polynomial: ``[a1, a2, a3]`` -> ``a1*u + a2*u**2 + a3*u**3``
    * exponential: ``[a, c]`` or ``[a, c, b]`` -> ``a*(1 - 2**(-c*u)) + b*u`` for
      cond/peer slots and ``-a*(2**(c*u) - 1) + b*u`` for the prod slot.
    """

    slot: str
    coeffs: Tuple[float, ...]
    peer: Optional[int] = None


@dataclass(frozen=True)
class FuncSpec:
    kind: str
    terms: Tuple[Term, ...]
    constant: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FuncSpecError(f"unknown function kind {self.kind!r}")
        if not self.terms:
            raise FuncSpecError("function has no terms")
        object.__setattr__(self, "terms", tuple(self.terms))
        if not math.isfinite(self.constant):
            raise FuncSpecError("non-finite constant")
        for term in self.terms:
            if term.slot not in SLOTS:
                raise FuncSpecError(f"unknown input slot {term.slot!r}")
            if term.slot == "peer":
                if term.peer is None or term.peer < 0:
                    raise FuncSpecError("peer slot needs a component index")
            elif term.peer is not None:
                raise FuncSpecError("peer index given on a non-peer slot")
            n = len(term.coeffs)
            if self.kind == "linear" and n != 1:
                raise FuncSpecError("linear term needs exactly one coefficient")
            if self.kind == "polynomial" and not 1 <= n <= 3:
                raise FuncSpecError("polynomial term needs 1 to 3 coefficients")
            if self.kind == "exponential":
                if n not in (2, 3):
                    raise FuncSpecError("exponential term needs [a, c] or [a, c, b]")
                if term.coeffs[1] < 0:
                    raise FuncSpecError("exponential rate must be nonnegative")
            if not all(math.isfinite(c) for c in term.coeffs):
                raise FuncSpecError("non-finite coefficient")

    @property
    def peers(self) -> Tuple[int, ...]:
        return tuple(sorted({t.peer for t in self.terms if t.slot == "peer"}))


@dataclass(frozen=True)
class FuncBox:
    """Upper corners of the box domain; lower corners are all zero."""

    cond_max: float
    prod_max: float
    peer_max: Tuple[float, ...] = ()


def _term_value(kind: str, term: Term, u: float) -> float:
    c = term.coeffs
    if kind == "linear":
        return c[0] * u
    if kind == "polynomial":
        return sum(a * u ** (i + 1) for i, a in enumerate(c))
    a, rate = c[0], c[1]
    b = c[2] if len(c) == 3 else 0.0
    if term.slot == "prod":
        return -a * (2.0 ** (rate * u) - 1.0) + b * u
    return a * (1.0 - 2.0 ** (-rate * u)) + b * u


def _term_deriv(kind: str, term: Term, u: float) -> float:
    c = term.coeffs
    if kind == "linear":
        return c[0]
    if kind == "polynomial":
        return sum((i + 1) * a * u**i for i, a in enumerate(c))
    a, rate = c[0], c[1]
    b = c[2] if len(c) == 3 else 0.0
    if term.slot == "prod":
        return -a * rate * LN2 * 2.0 ** (rate * u) + b
    return a * rate * LN2 * 2.0 ** (-rate * u) + b


def _clamp(u: float, hi: Optional[float]) -> float:
    u = max(0.0, float(u))
    if hi is not None:
        u = min(u, hi)
    return u


def _slot_input(term: Term, prev: float, prod: float, peers: Sequence[float], box: Optional[FuncBox]) -> float:
    if term.slot == "cond":
        return _clamp(prev, box.cond_max if box else None)
    if term.slot == "prod":
        return _clamp(prod, box.prod_max if box else None)
    hi = box.peer_max[term.peer] if box and term.peer < len(box.peer_max) else None
    val = peers[term.peer] if term.peer < len(peers) else 0.0
    return _clamp(val, hi)


def eval_func(f: FuncSpec, prev_condition: float, production: float,
              peer_conditions: Sequence[float] = (), box: Optional[FuncBox] = None) -> float:
    """Value of `f`; inputs are clamped to the box (lower corner always 0)."""
    total = f.constant
    for term in f.terms:
        u = _slot_input(term, prev_condition, production, peer_conditions, box)
        total += _term_value(f.kind, term, u)
    return float(total)


def grad_func(f: FuncSpec, point: Tuple[float, float, Sequence[float]],
              box: Optional[FuncBox] = None) -> np.ndarray:
    """Analytic gradient ``[d/dcond, d/dprod, d/dpeer_0, ...]`` at the (clamped) point."""
    prev, prod, peers = point
    n_peer = max(len(peers), max(f.peers, default=-1) + 1)
    grad = np.zeros(2 + n_peer)
    for term in f.terms:
        u = _slot_input(term, prev, prod, peers, box)
        d = _term_deriv(f.kind, term, u)
        if term.slot == "cond":
            grad[0] += d
        elif term.slot == "prod":
            grad[1] += d
        else:
            grad[2 + term.peer] += d
    return grad


@dataclass(frozen=True)
class ComponentSpec:
    cost: float
    duration: int
    max_condition: float
    max_production: float
    f: FuncSpec
    g: FuncSpec

    def __post_init__(self):
        if not self.cost > 0:
            raise ModelError("component cost must be positive")
        if int(self.duration) != self.duration or self.duration < 1:
            raise ModelError("duration must be a positive integer")
        if not self.max_condition > 0 or not self.max_production > 0:
            raise ModelError("max condition and max production must be positive")
        if any(t.slot != "cond" for t in self.g.terms):
            raise ModelError("limit function g may only read the component condition")


@dataclass(frozen=True)
class MachineGroupSpec:
    components: Tuple[ComponentSpec, ...]
    implications: Tuple[Tuple[int, int], ...] = ()
    multiplicity: int = 1

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "implications", tuple(tuple(p) for p in self.implications))
        if not self.components:
            raise ModelError("machine group needs at least one component")
        if int(self.multiplicity) != self.multiplicity or self.multiplicity < 1:
            raise ModelError("multiplicity must be a positive integer")
        K = len(self.components)
        for k, kp in self.implications:
            if not (0 <= k < K and 0 <= kp < K):
                raise ModelError(f"implication ({k}, {kp}) references an unknown component")
            if k == kp:
                raise ModelError("self-implication is not allowed")
        for comp in self.components:
            for p in comp.f.peers:
                if p >= K:
                    raise ModelError("degradation function reads an unknown peer component")

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def q_min(self) -> float:
        return min(c.max_production for c in self.components)

    def f_box(self, k: int) -> FuncBox:
        comp = self.components[k]
        return FuncBox(comp.max_condition, comp.max_production,
                       tuple(c.max_condition for c in self.components))

    def g_box(self, k: int) -> FuncBox:
        comp = self.components[k]
        return FuncBox(comp.max_condition, comp.max_production, ())


@dataclass(frozen=True)
class Instance:
    periods: int
    groups: Tuple[MachineGroupSpec, ...]
    demand: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "demand", tuple(float(e) for e in self.demand))
        if int(self.periods) != self.periods or self.periods < 1:
            raise ModelError("periods must be a positive integer")
        if len(self.demand) != self.periods:
            raise ModelError("demand length must equal the number of periods")
        if any(e < 0 or not math.isfinite(e) for e in self.demand):
            raise ModelError("demand must be finite and nonnegative")
        if not self.groups:
            raise ModelError("instance needs at least one machine group")

    @property
    def n_machines(self) -> int:
        return sum(g.multiplicity for g in self.groups)

    def machine_groups(self) -> List[int]:
        """Group index of every machine, in expansion order."""
        out = []
        for z, g in enumerate(self.groups):
            out.extend([z] * g.multiplicity)
        return out

    def cost_values(self) -> List[float]:
        return [c.cost for g in self.groups for c in g.components]


def big_m(component: ComponentSpec) -> float:
    """M = R - min(0, f(0, Q; 0, ..., 0))."""
    n_peer = max(component.f.peers, default=-1) + 1
    low = eval_func(component.f, 0.0, component.max_production, [0.0] * n_peer)
    return component.max_condition - min(0.0, low)


@dataclass
class MachineSchedule:
    x: np.ndarray  # [K, T] in {0, 1}
    y: np.ndarray  # [T]
    r: np.ndarray  # [K, T]

    def cost(self, group: MachineGroupSpec) -> float:
        return float(sum(c.cost * self.x[k].sum() for k, c in enumerate(group.components)))


@dataclass
class Schedule:
    machines: List[MachineSchedule]

    def cost(self, instance: Instance) -> float:
        groups = instance.machine_groups()
        return sum(m.cost(instance.groups[z]) for m, z in zip(self.machines, groups))


@dataclass(frozen=True)
class Violation:
    family: str
    machine: Optional[int]
    component: Optional[int]
    period: Optional[int]
    residual: float

    def __str__(self):
        return (f"{self.family}: machine={self.machine} component={self.component} "
                f"period={self.period} residual={self.residual:.3g}")


def simulate_conditions(group: MachineGroupSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Largest condition trajectory admitted by the degradation rows for fixed x and y.

    Entries may be negative; the plan is condition-feasible iff all are >= 0.
    """
    K, T = x.shape
    R = np.array([c.max_condition for c in group.components])
    r = np.zeros((K, T))
    prev = R.copy()
    for t in range(T):
        for k, comp in enumerate(group.components):
            if x[k, t] > 0.5:
                r[k, t] = R[k]
            else:
                val = eval_func(comp.f, prev[k], y[t], prev, group.f_box(k))
                r[k, t] = min(R[k], val)
        prev = r[:, t].copy()
    return r


def trim_production(group: MachineGroupSpec, x: np.ndarray, y: np.ndarray, margin: float = 1e-9) -> np.ndarray:
    """Lower each y_t just enough for capacity, downtime, conditions and production limits to hold.

    Less production never lowers a condition, so the periods are fixed one at a time.
    """
    x = np.asarray(x)
    y = np.clip(np.asarray(y, dtype=float), 0.0, group.q_min)
    y[(x > 0.5).any(axis=0)] = 0.0
    K, T = x.shape
    R = np.array([c.max_condition for c in group.components])
    prev = R.copy()

    def step(prev, xt, yt):
        cur = np.array([R[k] if xt[k] > 0.5 else min(R[k], eval_func(c.f, prev[k], yt, prev, group.f_box(k)))
                        for k, c in enumerate(group.components)])
        ok = (cur >= 0).all() and all(yt <= eval_func(c.g, max(cur[k], 0.0), 0.0, (), group.g_box(k)) + margin
                                      for k, c in enumerate(group.components))
        return cur, ok

    for t in range(T):
        cur, ok = step(prev, x[:, t], y[t])
        if not ok:
            lo, hi = 0.0, y[t]
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if step(prev, x[:, t], mid)[1]:
                    lo = mid
                else:
                    hi = mid
            y[t] = lo
            cur, _ = step(prev, x[:, t], lo)
        prev = cur
    return y


def validate_schedule(instance: Instance, schedule: Schedule, tol: float = FEAS_TOL) -> List[Violation]:
    """Every violated constraint of the compact model; empty iff feasible."""
    T = instance.periods
    groups = instance.machine_groups()
    if len(schedule.machines) != len(groups):
        raise ScheduleDimensionError(
            f"schedule has {len(schedule.machines)} machines, instance has {len(groups)}")
    out: List[Violation] = []
    total = np.zeros(T)
    for n, (ms, z) in enumerate(zip(schedule.machines, groups)):
        grp = instance.groups[z]
        K = grp.n_components
        x, y, r = np.asarray(ms.x), np.asarray(ms.y, dtype=float), np.asarray(ms.r, dtype=float)
        if x.shape != (K, T) or y.shape != (T,) or r.shape != (K, T):
            raise ScheduleDimensionError(f"machine {n}: arrays do not match K={K}, T={T}")
        total += y
        for k, comp in enumerate(grp.components):
            for t in range(T):
                if x[k, t] not in (0, 1):
                    out.append(Violation("binary", n, k, t + 1, float(x[k, t])))
                if r[k, t] < -tol or r[k, t] > comp.max_condition + tol:
                    out.append(Violation("bounds", n, k, t + 1, float(r[k, t])))
        for t in range(T):
            if y[t] < -tol:
                out.append(Violation("bounds", n, None, t + 1, float(y[t])))
        xb = (x > 0.5).astype(int)
        for k, comp in enumerate(grp.components):
            M = big_m(comp)
            D = comp.duration
            for t in range(T):
                lim = eval_func(comp.g, r[k, t], 0.0, (), grp.g_box(k))
                if y[t] > lim + tol:
                    out.append(Violation("production_limit", n, k, t + 1, float(y[t] - lim)))
                down = (1 - xb[k, t]) * comp.max_production
                if y[t] > down + tol:
                    out.append(Violation("downtime", n, k, t + 1, float(y[t] - down)))
                prev_x = xb[k, t - 1] if t > 0 else 0
                if xb[k, t] - prev_x > 0:
                    for i in range(t + 1, min(t + D, T - 1) + 1):
                        if xb[k, i] < 1:
                            out.append(Violation("duration", n, k, i + 1, 1.0))
                prev_r = r[:, t - 1] if t > 0 else np.array([c.max_condition for c in grp.components])
                cap = eval_func(comp.f, prev_r[k], y[t], prev_r, grp.f_box(k)) + M * xb[k, t]
                if r[k, t] > cap + tol:
                    out.append(Violation("degradation", n, k, t + 1, float(r[k, t] - cap)))
        for k, kp in grp.implications:
            for t in range(T):
                if xb[k, t] > xb[kp, t]:
                    out.append(Violation("implication", n, k, t + 1, 1.0))
    for t in range(T):
        if instance.demand[t] > total[t] + tol:
            out.append(Violation("demand", None, None, t + 1, float(instance.demand[t] - total[t])))
    return out


# ---------------------------------------------------------------- serialization

def _check_keys(d: Dict[str, Any], required: Sequence[str], where: str, optional: Sequence[str] = ()):
    if not isinstance(d, dict):
        raise SchemaError(f"{where}: expected an object")
    unknown = set(d) - set(required) - set(optional)
    if unknown:
        raise SchemaError(f"{where}: unknown fields {sorted(unknown)}")
    missing = set(required) - set(d)
    if missing:
        raise SchemaError(f"{where}: missing fields {sorted(missing)}")


def func_to_dict(f: FuncSpec) -> Dict[str, Any]:
    terms = []
    for t in f.terms:
        d: Dict[str, Any] = {"slot": t.slot, "coeffs": list(t.coeffs)}
        if t.peer is not None:
            d["peer"] = t.peer
        terms.append(d)
    return {"kind": f.kind, "terms": terms, "constant": f.constant}


def func_from_dict(d: Dict[str, Any]) -> FuncSpec:
    _check_keys(d, ["kind", "terms"], "function", ["constant"])
    terms = []
    for td in d["terms"]:
        _check_keys(td, ["slot", "coeffs"], "term", ["peer"])
        terms.append(Term(td["slot"], tuple(float(c) for c in td["coeffs"]), td.get("peer")))
    return FuncSpec(d["kind"], tuple(terms), float(d.get("constant", 0.0)))


def instance_to_dict(inst: Instance) -> Dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "periods": inst.periods,
        "demand": list(inst.demand),
        "groups": [
            {
                "multiplicity": g.multiplicity,
                "components": [
                    {
                        "cost": c.cost,
                        "duration": c.duration,
                        "max_condition": c.max_condition,
                        "max_production": c.max_production,
                        "f": func_to_dict(c.f),
                        "g": func_to_dict(c.g),
                    }
                    for c in g.components
                ],
                "implications": [list(p) for p in g.implications],
            }
            for g in inst.groups
        ],
    }


def instance_from_dict(d: Dict[str, Any]) -> Instance:
    _check_keys(d, ["format_version", "periods", "demand", "groups"], "instance")
    if d["format_version"] != FORMAT_VERSION:
        raise SchemaError(f"unsupported format_version {d['format_version']}")
    try:
        groups = []
        for gd in d["groups"]:
            _check_keys(gd, ["multiplicity", "components"], "group", ["implications"])
            comps = []
            for cd in gd["components"]:
                _check_keys(cd, ["cost", "duration", "max_condition", "max_production", "f", "g"], "component")
                comps.append(ComponentSpec(float(cd["cost"]), int(cd["duration"]), float(cd["max_condition"]),
                                           float(cd["max_production"]), func_from_dict(cd["f"]),
                                           func_from_dict(cd["g"])))
            imps = tuple((int(a), int(b)) for a, b in gd.get("implications", []))
            groups.append(MachineGroupSpec(tuple(comps), imps, int(gd["multiplicity"])))
        return Instance(int(d["periods"]), tuple(groups), tuple(float(e) for e in d["demand"]))
    except SchemaError:
        raise
    except (TypeError, KeyError, ValueError) as exc:
        raise SchemaError(str(exc)) from exc


def schedule_to_dict(s: Schedule) -> Dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "machines": [{"x": np.asarray(m.x).astype(int).tolist(), "y": np.asarray(m.y).tolist(),
                      "r": np.asarray(m.r).tolist()} for m in s.machines],
    }


def schedule_from_dict(d: Dict[str, Any]) -> Schedule:
    _check_keys(d, ["format_version", "machines"], "schedule")
    out = []
    for md in d["machines"]:
        _check_keys(md, ["x", "y", "r"], "machine schedule")
        try:
            out.append(MachineSchedule(np.array(md["x"], dtype=int), np.array(md["y"], dtype=float),
                                       np.array(md["r"], dtype=float)))
        except (TypeError, ValueError) as exc:
            raise SchemaError(str(exc)) from exc
    return Schedule(out)


def dump_json(obj: Dict[str, Any]) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def check_func_shape(f: FuncSpec, box: FuncBox, n_points: int = 100, seed: int = 0,
                     tol: float = 1e-9) -> List[str]:
    """Sampled monotonicity and concavity checks over the box; returns the issues found."""
    rng = np.random.default_rng(seed)
    n_peer = len(box.peer_max)
    hi = np.array([box.cond_max, box.prod_max, *box.peer_max])

    def val(p):
        return eval_func(f, p[0], p[1], p[2:], box)

    issues = []
    for _ in range(n_points):
        u = rng.uniform(0, 1, 2 + n_peer) * hi
        v = rng.uniform(0, 1, 2 + n_peer) * hi
        for lam in (0.25, 0.5, 0.75):
            mid = lam * u + (1 - lam) * v
            if val(mid) < lam * val(u) + (1 - lam) * val(v) - tol:
                issues.append("not concave")
        for j in range(2 + n_peer):
            w = u.copy()
            w[j] = min(hi[j], u[j] + 0.1 * hi[j])
            diff = val(w) - val(u)
            if j == 1 and diff > tol:
                issues.append("increasing in production")
            if j != 1 and diff < -tol:
                issues.append("decreasing in a condition input")
    return sorted(set(issues))
