"""State layout, vector fields, and output maps of the two-site CHP model.

State vector (13 entries):

    x[0]  v_p1   fuel valve position, site 1            [p.u.]
    x[1]  w_f1   fuel flow at the combustor, site 1     [p.u.]
    x[2]  w_t1   fuel flow at the turbine, site 1       [p.u.]
    x[3]  v_p2   fuel valve position, site 2            [p.u.]
    x[4]  w_f2   fuel flow at the combustor, site 2     [p.u.]
    x[5]  w_t2   fuel flow at the turbine, site 2       [p.u.]
    x[6]  delta1 rotor angle, site 1                    [rad]
    x[7]  omega1 scaled rotor speed deviation, site 1   [-]
    x[8]  delta2 rotor angle, site 2                    [rad]
    x[9]  omega2 scaled rotor speed deviation, site 2   [-]
    x[10] dp     boiler pressure difference p1 - p2     [scaled]
    x[11] w      steam velocity in the pipe             [scaled]
    x[12] pavg   weighted average boiler pressure       [scaled]

Each gas turbine is a chain of three first-order lags from the fuel valve
command to the turbine fuel flow.  The generators follow swing equations
against an infinite bus; electric power flows are trigonometric in the rotor
angles.  The boilers integrate their heat imbalance into pressure, and the
pipe momentum balance drives the steam velocity from the pressure difference
against quadratic friction.  The averaged pressure x[12] feeds back into
nothing; this one-directional coupling is what creates the non-trivial
invariant structure of the internal dynamics.

Outputs: y1 is the electric power delivered to the infinite bus, y2 the heat
flow rate through the pipe from site 1 to site 2, both functions of the state
only.  Inputs u1, u2 are the fuel valve commands; they enter only the valve
equations, with constant gains (1 - Wo_i)/Tv_i.
"""

from dataclasses import dataclass

import numpy as np

from . import _jetcore as jc

NX = 13
NU = 2

# Index constants.
VP1, WF1, WT1, VP2, WF2, WT2 = 0, 1, 2, 3, 4, 5
DELTA1, OMEGA1, DELTA2, OMEGA2 = 6, 7, 8, 9
XH1, XH2, XH3 = 10, 11, 12

# Slices of the three physical subsystems.
GAS = slice(0, 6)
ELEC = slice(6, 10)
HEAT = slice(10, 13)

# Coordinates copied verbatim into the internal-dynamics variables.
ETA_IDX = (WT1, DELTA1, OMEGA1, XH3)            # original outputs
ETA_HAT_IDX = (WT1, DELTA1, OMEGA1, XH1, XH2)   # redefined outputs


class ModelDomainError(ValueError):
    """Raised when a state violates the model's domain requirements."""


@dataclass(frozen=True)
class Inputs:
    """Fuel valve commands; nominal range [0, 1], not enforced in dynamics."""
    u1: float
    u2: float


@dataclass(frozen=True)
class Outputs:
    y1: float    # electric power to the infinite bus [p.u.]
    y2: float    # site 1 -> site 2 pipe heat flow [MJ/s]


def check_state(x):
    """Validate and return a finite 13-vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (NX,):
        raise ModelDomainError(f"state must have shape ({NX},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ModelDomainError("state contains non-finite entries")
    return x


def split_state(x):
    """Return the (gas, electric, heat) blocks of a state vector."""
    x = np.asarray(x, dtype=float)
    return x[GAS], x[ELEC], x[HEAT]


def f_full(x, p, u=None):
    """Vector field of the full model; drift only unless inputs are given."""
    x = check_state(x)
    if u is None:
        return jc.rhs(x, 0.0, 0.0, p.pv)
    return jc.rhs(x, float(u[0]), float(u[1]), p.pv)


def f_jacobian(x, p):
    """Analytic Jacobian of the drift field."""
    x = check_state(x)
    return jc.rhs_jacobian(x, p.pv)


def g1(p):
    """Input vector field of site 1 (constant)."""
    g = np.zeros(NX)
    g[VP1] = (1.0 - p.Wo_1) / p.Tv_1
    return g


def g2(p):
    """Input vector field of site 2 (constant)."""
    g = np.zeros(NX)
    g[VP2] = (1.0 - p.Wo_2) / p.Tv_2
    return g


def mechanical_power(xg, p):
    """Per-unit mechanical powers (P_m1, P_m2) from the turbine fuel flows."""
    pm1 = p.Ke1_pu * (xg[2] - p.Wo_1) / (1.0 - p.Wo_1)
    pm2 = p.Ke2_pu * (xg[5] - p.Wo_2) / (1.0 - p.Wo_2)
    return pm1, pm2


def electrical_flows(xe, p):
    """Electric power flows and the partials used in singularity diagnostics.

    Returns a dict with generator outputs P_e1, P_e2, the infinite-bus export
    P_e_inf, and the angle derivatives of the bus-to-site transfer powers
    P_inf,1 and P_2,inf that enter the decoupling-determinant expressions.
    """
    d1, d2 = xe[0], xe[2]
    e12 = p.E_1 * p.E_2
    s1, c1 = np.sin(d1), np.cos(d1)
    s2, c2 = np.sin(d2), np.cos(d2)
    s12, c12 = np.sin(d1 - d2), np.cos(d1 - d2)
    pe1 = e12 * (p.G_12 * c12 + p.B_12 * s12) + p.E_1 * (p.G_10 * c1 + p.B_10 * s1)
    pe2 = e12 * (p.G_12 * c12 - p.B_12 * s12) + p.E_2 * (p.G_20 * c2 + p.B_20 * s2)
    pe_inf = p.E_1 * (p.B_10 * s1 - p.G_10 * c1) + p.E_2 * (p.B_20 * s2 - p.G_20 * c2)
    # P_inf,1(d1) = E_1 (G_10 cos d1 - B_10 sin d1); P_2,inf(d2) = E_2 (G_20 cos d2 + B_20 sin d2)
    dpinf1 = -p.E_1 * (p.G_10 * s1 + p.B_10 * c1)
    dp2inf = p.E_2 * (p.B_20 * c2 - p.G_20 * s2)
    return {
        "P_e1": pe1,
        "P_e2": pe2,
        "P_e_inf": pe_inf,
        "dPinf1_ddelta1": dpinf1,
        "dP2inf_ddelta2": dp2inf,
    }


def heat_flows(xh, xg, p):
    """Boiler absorptions and the pipe heat flow, all in MJ/s."""
    qa1 = p.Kh_1 * (xg[1] + p.beta_1) / (1.0 + p.beta_1)
    qa2 = p.Kh_2 * (xg[4] + p.beta_2) / (1.0 + p.beta_2)
    q12 = p.flow_coeff * xh[1]
    return {"Qa1": qa1, "Qa2": qa2, "Q12": q12}


def outputs(x, p):
    """Evaluate both regulated outputs."""
    x = check_state(x)
    flows = electrical_flows(x[ELEC], p)
    return Outputs(y1=flows["P_e_inf"], y2=p.flow_coeff * x[XH2])


def output_y1(x, p):
    return electrical_flows(np.asarray(x)[ELEC], p)["P_e_inf"]


def output_y2(x, p):
    return p.flow_coeff * np.asarray(x)[XH2]


def redefined_output(x, p):
    """The virtual heat-side output: the averaged boiler pressure."""
    return float(np.asarray(x)[XH3])


def heat_balance_state(p, w=0.5, pavg=0.0, delta=(0.0, 0.0), omega=(0.0, 0.0)):
    """Construct a state with both boiler balances and the pipe at rest.

    The fuel flows are chosen so each boiler absorbs exactly its load plus its
    share of the pipe flow, and the pressure difference balances friction.
    Useful as a seed for equilibrium searches and in tests.
    """
    q12 = p.flow_coeff * w
    wf1 = ((p.QL_1 + q12) / p.Kh_1) * (1.0 + p.beta_1) - p.beta_1
    wf2 = ((p.QL_2 - q12) / p.Kh_2) * (1.0 + p.beta_2) - p.beta_2
    x = np.zeros(NX)
    x[VP1] = x[WF1] = x[WT1] = wf1
    x[VP2] = x[WF2] = x[WT2] = wf2
    x[DELTA1], x[DELTA2] = delta
    x[OMEGA1], x[OMEGA2] = omega
    x[XH1] = p.rho_ratio * p.fric * w * abs(w)
    x[XH2] = w
    x[XH3] = pavg
    return x
