"""Small hand-built instances and master states shared by several test modules."""

import numpy as np

from pmsched.master import MasterState, make_column
from pmsched.model import ComponentSpec, FuncSpec, Instance, MachineGroupSpec, Term


def linear(cond=0.0, prod=0.0, const=0.0):
    terms = [Term("cond", (cond,))]
    if prod:
        terms.append(Term("prod", (prod,)))
    return FuncSpec("linear", tuple(terms), const)


def flat_component(cost=1.0, duration=1, R=5.0, Q=2.0, wear=0.0, cap=None):
    """Condition loses ``wear`` per unit produced; production limit is the constant ``cap``."""
    f = linear(cond=1.0, prod=-wear)
    g = linear(const=Q if cap is None else cap)
    return ComponentSpec(cost, duration, R, Q, f, g)


def split_pair_instance() -> Instance:
    # no wear, production limit 2, demand 1 in both periods
    return Instance(2, (MachineGroupSpec((flat_component(Q=2.0),), (), 1),), (1.0, 1.0))


def split_pair_state():
    inst = split_pair_instance()
    st = MasterState(inst)
    zero = np.zeros((1, 2), dtype=int)
    # both columns exceed the per-period demand cap, which the master would reject
    a = st.add_column(make_column(inst, 0, zero, [2.0, 0.0]), check=False)
    b = st.add_column(make_column(inst, 0, zero, [0.0, 2.0]), check=False)
    return inst, st, (a, b)


REFINE_X = ((0, 0, 1), (0, 1, 0), (1, 0, 0), (1, 0, 1), (1, 1, 0))
REFINE_LAMBDA = (0.5, 0.5, 0.3, 0.2, 0.5)


def refinement_state():
    inst = Instance(3, (MachineGroupSpec((flat_component(),), (), 2),), (0.0, 0.0, 0.0))
    st = MasterState(inst)
    for x in REFINE_X:
        # several of these patterns break the duration rule; only the branching logic is under test
        st.add_column(make_column(inst, 0, np.array([x]), np.zeros(3)), check=False)
    return inst, st, np.array(REFINE_LAMBDA)
