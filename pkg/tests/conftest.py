import numpy as np
import pytest

from twosite import analysis, jets, model
from twosite.params import SystemParams


@pytest.fixture(scope="session")
def params():
    return SystemParams.table1()


@pytest.fixture(scope="session")
def eq10(params):
    """Nominal equilibrium: unit electric export, zero averaged pressure."""
    return analysis.solve_equilibrium(params, 1.0, 0.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260811)


@pytest.fixture(scope="session", autouse=True)
def _warmup(params):
    """Trigger numba compilation outside of any timed assertions."""
    from twosite import _jetcore as jc
    x = model.heat_balance_state(params, w=0.4, delta=(0.2, 0.1))
    jets.lie_table(x, params, 5)
    jets.propagate_model(x, params, 4, tangents=np.eye(13))
    jc.zeroing_rhs_core(x, params.pv)
    jc.closed_loop_rhs_core(np.concatenate([x, [0.0, 0.0]]), params.pv,
                            np.ones(5), np.ones(3), 0.0, 1.0, 0.0)
    jc.rhs_jacobian(x, params.pv)


def random_state(p, rng, w_range=(0.15, 0.8)):
    """A generic finite state with forward pipe flow (not necessarily in the
    nonsingular region)."""
    x = model.heat_balance_state(p, w=float(rng.uniform(*w_range)),
                                 delta=(rng.uniform(-0.4, 0.9),
                                        rng.uniform(-0.4, 0.9)))
    x[model.GAS] += rng.uniform(-0.15, 0.15, 6)
    x[model.OMEGA1] = rng.uniform(-0.4, 0.4)
    x[model.OMEGA2] = rng.uniform(-0.4, 0.4)
    x[model.XH1] += rng.uniform(-0.5, 0.5)
    x[model.XH3] = rng.uniform(-1.0, 1.0)
    return x
