"""Random instances, the just-in-time maintenance heuristic and its counterexample."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .model import (ComponentSpec, FuncSpec, Instance, MachineGroupSpec, MachineSchedule, Schedule, Term,
                    eval_func)

LAYOUTS = {"one-group-20": (20,), "two-groups-10": (10, 10)}
COMPLEXITY = {"low": ((1, 3), 0.10), "high": ((3, 7), 0.15)}
KINDS = ("linear", "polynomial", "exponential")
COEF_HIGH = 3.0


@dataclass
class GenConfig:
    seed: int = 0
    periods: int = 10
    layout: Union[str, Tuple[int, ...]] = "one-group-20"
    complexity: str = "low"
    rho: float = 0.8
    components: Optional[Tuple[int, int]] = None  # overrides the complexity range
    implication_prob: Optional[float] = None
    wear_scale: float = 1.0  # multiplies production wear; short horizons need more than 1
    idle_scale: float = 1.0  # multiplies the per-period ageing that happens without production

    def multiplicities(self) -> Tuple[int, ...]:
        if isinstance(self.layout, str):
            if self.layout not in LAYOUTS:
                raise ValueError(f"unknown layout {self.layout!r}")
            return LAYOUTS[self.layout]
        mults = tuple(int(z) for z in self.layout)
        if not mults or min(mults) < 1:
            raise ValueError("layout multiplicities must be positive")
        return mults

    def validate(self):
        if self.periods < 1:
            raise ValueError("periods must be positive")
        if self.complexity not in COMPLEXITY:
            raise ValueError(f"unknown complexity {self.complexity!r}")
        if not 0 < self.rho <= 1.2:
            raise ValueError("rho must lie in (0, 1.2]")
        self.multiplicities()


@dataclass
class RawFunction:
    """A function kind with its raw U[0, 3] draws, before canonicalization."""

    kind: str
    coeffs: List[float]


def sample_raw_function(rng: np.random.Generator, n_coeffs: int = 4) -> RawFunction:
    kind = KINDS[int(rng.integers(0, 3))]
    return RawFunction(kind, list(rng.uniform(0.0, COEF_HIGH, n_coeffs)))


def _limit_function(raw: RawFunction, R: float, Q: float) -> FuncSpec:
    """Concave nondecreasing g on [0, R] with g(0) >= 0."""
    s = raw.coeffs
    base = Q * 0.1 * s[0]
    top = 0.5 + s[1] / 6.0  # g(R) - g(0) in units of Q
    if raw.kind == "linear":
        return FuncSpec("linear", (Term("cond", (Q * top / R,)),), base)
    if raw.kind == "polynomial":
        a2 = -s[2] / 12.0
        a3 = -s[3] / 24.0
        a1 = top - a2 - a3
        # slope at R is top + a2 + 2 a3 >= 0
        return FuncSpec("polynomial", (Term("cond", (Q * a1 / R, Q * a2 / R**2, Q * a3 / R**3)),), base)
    c = 0.5 + s[2] / 3.0
    a = top / (1.0 - 2.0 ** (-c))
    return FuncSpec("exponential", (Term("cond", (Q * a, c / R)),), base)


def _degradation_function(raw: RawFunction, R: float, Q: float, peers: Sequence[Tuple[int, float]],
                          wear_scale: float = 1.0, idle_scale: float = 1.0) -> FuncSpec:
    """f = r_prev + const - wear(y) - sum of peer penalties; concave, f(R, 0; R...) <= R."""
    s = raw.coeffs
    idle = -idle_scale * 0.02 * s[0] * R
    terms = [Term("cond", (1.0,) if raw.kind != "exponential" else (0.0, 0.0, 1.0))]
    const = idle
    if raw.kind == "linear":
        terms.append(Term("prod", (-wear_scale * R * 0.1 * (0.5 + s[1]) / Q,)))
        for kp, Rp in peers:
            w = 0.02 * s[2] * R
            terms.append(Term("peer", (w / Rp,), kp))
            const -= w
    elif raw.kind == "polynomial":
        w1, w2, w3 = (wear_scale * 0.05 * v for v in s[1:4])
        terms.append(Term("prod", (-R * w1 / Q, -R * w2 / Q**2, -R * w3 / Q**3)))
        for kp, Rp in peers:
            w = 0.02 * s[2] * R
            terms.append(Term("peer", (2 * w / Rp, -w / Rp**2), kp))
            const -= w
    else:
        c = 0.5 + s[2] / 3.0
        w = wear_scale * 0.1 * (0.5 + s[1]) / (2.0**c - 1.0)
        terms.append(Term("prod", (R * w, c / Q)))
        for kp, Rp in peers:
            cp = 0.5 + s[3] / 3.0
            wp = 0.02 * s[3] * R / (1.0 - 2.0 ** (-cp))
            terms.append(Term("peer", (wp, cp / Rp), kp))
            const -= wp * (1.0 - 2.0 ** (-cp))
    return FuncSpec(raw.kind, tuple(terms), const)


def _component_count(rng, lo_hi):
    lo, hi = lo_hi
    return int(rng.integers(lo, hi + 1))


def generate(config: GenConfig) -> Instance:
    config.validate()
    rng = np.random.default_rng(config.seed)
    (lo_hi, prob) = COMPLEXITY[config.complexity]
    if config.components is not None:
        lo_hi = config.components
    if config.implication_prob is not None:
        prob = config.implication_prob
    T = config.periods
    groups = []
    for mult in config.multiplicities():
        K = _component_count(rng, lo_hi)
        Q = rng.uniform(5.0, 20.0, K)
        R = rng.uniform(5.0, 15.0, K)
        C = rng.integers(1, 11, K).astype(float)
        D = rng.integers(1, 3, K)
        imps = []
        peer_of: List[List[Tuple[int, float]]] = [[] for _ in range(K)]
        for k in range(K):
            for kp in range(K):
                if k == kp:
                    continue
                if rng.random() < prob:
                    imps.append((k, kp))
                if rng.random() < prob:
                    peer_of[k].append((kp, float(R[kp])))
        comps = []
        for k in range(K):
            f = _degradation_function(sample_raw_function(rng), float(R[k]), float(Q[k]), peer_of[k],
                                      config.wear_scale, config.idle_scale)
            g = _limit_function(sample_raw_function(rng), float(R[k]), float(Q[k]))
            comps.append(ComponentSpec(float(C[k]), int(D[k]), float(R[k]), float(Q[k]), f, g))
        groups.append(MachineGroupSpec(tuple(comps), tuple(imps), mult))
    cap = sum(g.multiplicity * g.q_min for g in groups)
    demand = tuple(float(config.rho * cap * u) for u in rng.uniform(0.6, 1.0, T))
    return Instance(T, tuple(groups), demand)


def maintenance_action_cost(comp: ComponentSpec) -> float:
    """Cost of one full-length maintenance window (x = 1 for D + 1 periods)."""
    return comp.cost * (comp.duration + 1)


def _linear(slot_coeffs, constant=0.0) -> FuncSpec:
    return FuncSpec("linear", tuple(Term(s, (c,), p) for s, c, p in slot_coeffs), constant)


def make_jit_counterexample() -> Instance:
    """One machine, components A (index 0) and B (index 1), B implies A, unit wear.

    A fails in period 5 unless maintained in the window {3, 4}; B fails in period 8
    unless maintained before it. The last maintenance window {6, 7} ends at t2 = 7
    and the horizon is t2 + 1 = 8.
    """
    wear = _linear([("cond", 1.0, None), ("prod", -1.0, None)])
    g = _linear([("cond", 0.0, None)], 1.0)
    comp_a = ComponentSpec(1.0, 1, 2.0, 1.0, wear, g)
    comp_b = ComponentSpec(2.0, 1, 3.0, 1.0, wear, g)
    group = MachineGroupSpec((comp_a, comp_b), ((1, 0),), 1)
    demand = (1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0)
    return Instance(len(demand), (group,), demand)


def _closure(group: MachineGroupSpec, ks: Sequence[int]) -> List[int]:
    out = set(ks)
    changed = True
    while changed:
        changed = False
        for k, kp in group.implications:
            if k in out and kp not in out:
                out.add(kp)
                changed = True
    return sorted(out)


def _step(group: MachineGroupSpec, prev: np.ndarray, xcol: np.ndarray, y: float) -> Tuple[np.ndarray, List[int]]:
    """Next condition vector and the components whose rows fail."""
    K = group.n_components
    r = np.zeros(K)
    bad = []
    for k, comp in enumerate(group.components):
        if xcol[k]:
            r[k] = comp.max_condition
        else:
            r[k] = min(comp.max_condition, eval_func(comp.f, prev[k], y, prev, group.f_box(k)))
    for k, comp in enumerate(group.components):
        if r[k] < -1e-9 or y > eval_func(comp.g, max(r[k], 0.0), 0.0, (), group.g_box(k)) + 1e-9:
            bad.append(k)
    return r, bad


def _jit_machine(group: MachineGroupSpec, y: np.ndarray) -> Optional[MachineSchedule]:
    K, T = group.n_components, len(y)
    R = np.array([c.max_condition for c in group.components])
    x = np.zeros((K, T), dtype=int)
    for _ in range(K * T + 1):
        # simulate with the current maintenance plan, find the first failure
        prev = R.copy()
        r = np.zeros((K, T))
        fail_t, fail_k = None, []
        for t in range(T):
            if x[:, t].any() and y[t] > 1e-12:
                return None
            cur, bad = _step(group, prev, x[:, t], y[t])
            r[:, t] = cur
            if bad:
                fail_t, fail_k = t, bad
                break
            prev = cur
        if fail_t is None:
            return MachineSchedule(x, y.copy(), np.clip(r, 0.0, R[:, None]))
        comps = _closure(group, fail_k)
        length = max(group.components[k].duration for k in comps) + 1
        # latest window [s, s + length - 1] that ends before the failure and has no production
        start = None
        for s in range(fail_t - length, -1, -1):
            window = range(s, s + length)
            if all(y[i] <= 1e-12 for i in window) and not any(x[k, s] for k in comps):
                start = s
                break
        if start is None:
            return None
        for k in comps:
            x[k, start:start + length] = 1
    return None


def jit_maintenance_heuristic(instance: Instance) -> Optional[Schedule]:
    """Proportional production split, then just-in-time maintenance per machine.

    Returns None when the plan cannot be completed.
    """
    groups = instance.machine_groups()
    caps = np.array([instance.groups[z].q_min for z in groups])
    share = caps / caps.sum()
    machines = []
    for n, z in enumerate(groups):
        y = np.array(instance.demand) * share[n]
        ms = _jit_machine(instance.groups[z], y)
        if ms is None:
            return None
        machines.append(ms)
    return Schedule(machines)


TINY_LAYOUTS = ((1,), (2,), (1, 1))


def tiny_config(seed: int) -> GenConfig:
    """At most two machines and two components over three or four periods.

    Strong idle ageing makes maintenance matter within such short horizons.
    """
    return GenConfig(seed, periods=3 + seed % 2, layout=TINY_LAYOUTS[seed % 3], components=(1, 2), rho=0.3,
                     idle_scale=6.0)


def tiny_corpus(count: int = 50, start: int = 0) -> List[Instance]:
    return [generate(tiny_config(s)) for s in range(start, start + count)]


def symmetric_config(seed: int) -> GenConfig:
    """One group of eight identical single-component machines over six periods."""
    return GenConfig(seed, periods=6, layout=(8,), components=(1, 1), rho=0.2, wear_scale=6.0, idle_scale=6.0)
