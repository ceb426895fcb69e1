"""Output-redefinition tracking controller and closed-loop simulation.

The regulated outputs are the electric export y1 and the pipe heat flow y2,
but the pair (y1, y2) leaves non-minimum-phase internal dynamics.  The
controller therefore tracks y1 together with the averaged boiler pressure
(the redefined heat-side output), whose internal dynamics are minimum phase,
and steers the heat flow indirectly: a reference generator

    sigma1' = K sigma2,      sigma2' = y2 - Y2ref,      yhat2ref = sigma1

integrates the heat-flow error into a slowly moving pressure reference.  The
control law performs input-output linearization with pole placement on the
two chains (lengths 5 and 3):

    u = Ahat(x)^-1 [ -L_f^5 he - sum_j alpha_e[j] xte[j] ;
                     -L_f^3 hhat - sum_j alpha_h[j] xth[j] ]

with chain errors

    xte = (xi_e1 - Y1ref, xi_e2, ..., xi_e5)
    xth = (xi_h1 - sigma1, xi_h2 - K sigma2, xi_h3 - K (y2 - Y2ref)).

For K = 0 the generator freezes and the law stabilizes the equilibrium
pinned by (Y1ref, yhat2ref = sigma1(0)).  Input saturation is monitored and
reported, never enforced.
"""

from dataclasses import dataclass, field

import numpy as np

from . import model, sim
from ._jetcore import STATUS_OK, closed_loop_rhs_core, control_terms

# Pole sets used by the demonstration scenarios: all five electric-chain
# poles at -2.5 rad/s and all three heat-chain poles at -0.25 rad/s.
DEFAULT_POLES_E = (-2.5, -2.5, -2.5, -2.5, -2.5)
DEFAULT_POLES_H = (-0.25, -0.25, -0.25)


class ControllerFault(RuntimeError):
    """Decoupling matrix singular during a closed-loop run."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class ConfigError(ValueError):
    """Controller configuration violates its invariants."""


def coefficients_from_roots(roots):
    """Ascending-power coefficients (alpha_1 ... alpha_n) of prod (s - r)."""
    roots = np.atleast_1d(np.asarray(roots, dtype=complex))
    coeffs = np.poly(roots)          # descending, leading 1
    if np.abs(coeffs.imag).max() > 1e-9 * max(1.0, np.abs(coeffs.real).max()):
        raise ConfigError("pole set is not closed under conjugation")
    return coeffs.real[::-1][:-1].copy()


def is_hurwitz(alpha):
    """Whether s^n + alpha[n-1] s^(n-1) + ... + alpha[0] has all roots in Re < 0."""
    roots = np.roots(np.concatenate([[1.0], np.asarray(alpha)[::-1]]))
    return bool(np.all(roots.real < 0.0))


@dataclass(frozen=True)
class ControllerConfig:
    y1ref: float
    y2ref: float = 0.0
    K: float = 0.0                       # 0: stabilization; > 0: tracking
    alpha_e: tuple = field(default=None)  # ascending coefficients, length 5
    alpha_h: tuple = field(default=None)  # ascending coefficients, length 3

    def __post_init__(self):
        if self.alpha_e is None:
            object.__setattr__(self, "alpha_e",
                               tuple(coefficients_from_roots(DEFAULT_POLES_E)))
        if self.alpha_h is None:
            object.__setattr__(self, "alpha_h",
                               tuple(coefficients_from_roots(DEFAULT_POLES_H)))
        object.__setattr__(self, "alpha_e", tuple(float(a) for a in self.alpha_e))
        object.__setattr__(self, "alpha_h", tuple(float(a) for a in self.alpha_h))
        self.validate()

    def validate(self):
        if len(self.alpha_e) != 5:
            raise ConfigError(f"alpha_e must have 5 coefficients, got {len(self.alpha_e)}")
        if len(self.alpha_h) != 3:
            raise ConfigError(f"alpha_h must have 3 coefficients, got {len(self.alpha_h)}")
        if not is_hurwitz(self.alpha_e):
            raise ConfigError("electric-chain polynomial is not Hurwitz")
        if not is_hurwitz(self.alpha_h):
            raise ConfigError("heat-chain polynomial is not Hurwitz")

    @classmethod
    def from_poles(cls, y1ref, y2ref=0.0, K=0.0, poles_e=DEFAULT_POLES_E,
                   poles_h=DEFAULT_POLES_H):
        return cls(y1ref=y1ref, y2ref=y2ref, K=K,
                   alpha_e=tuple(coefficients_from_roots(poles_e)),
                   alpha_h=tuple(coefficients_from_roots(poles_h)))

    @property
    def mode(self):
        return "stabilization" if self.K == 0.0 else "tracking"


def companion(alpha):
    """Companion matrix of s^n + alpha[n-1] s^(n-1) + ... + alpha[0]."""
    n = len(alpha)
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -np.asarray(alpha)
    return A


def reference_step(sigma, x, cfg, p):
    """Reference-generator derivative and the redefined-output reference."""
    y2 = model.output_y2(x, p)
    dsigma = np.array([cfg.K * sigma[1], y2 - cfg.y2ref])
    return dsigma, float(sigma[0])


def control_law(x, sigma, cfg, p):
    """Evaluate the tracking law at one state; returns (u, info).

    ``info`` carries the chain errors, the decoupling matrix, and its
    determinant, for diagnostics and tests.
    """
    x = model.check_state(x)
    xi_e, lf5, xi_h, lf3, A, y2 = control_terms(x, p.pv)
    xte = xi_e - np.array([cfg.y1ref, 0.0, 0.0, 0.0, 0.0])
    xth = xi_h - np.array([sigma[0], cfg.K * sigma[1],
                           cfg.K * (y2 - cfg.y2ref)])
    ve = -lf5 - float(np.dot(cfg.alpha_e, xte))
    vh = -lf3 - float(np.dot(cfg.alpha_h, xth))
    det = float(A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0])
    scale = float(np.hypot(A[0, 0], A[0, 1]) * np.hypot(A[1, 0], A[1, 1]))
    if abs(det) <= 1e-8 * scale:
        raise ControllerFault(f"decoupling matrix singular (det = {det:.3e})")
    u = np.linalg.solve(A, np.array([ve, vh]))
    info = {"xi_e_err": xte, "xi_h_err": xth, "A": A, "det": det, "y2": y2}
    return u, info


def closed_loop_rhs(t, xa, cfg, p, alpha_e, alpha_h):
    status, dxa, _, _ = closed_loop_rhs_core(
        xa, p.pv, alpha_e, alpha_h, cfg.K, cfg.y1ref, cfg.y2ref)
    if status != STATUS_OK:
        raise ControllerFault(
            f"decoupling matrix singular at t = {t:.4f}", t=t)
    return dxa


def simulate_closed_loop(p, cfg, x0, sigma0=(0.0, 0.0), icfg=None):
    """Integrate the 15-state closed loop (plant + reference generator).

    Channels: outputs ``y1``, ``y2``, the moving reference ``yhat2ref``,
    inputs ``u`` (n, 2), generator states ``sigma`` (n, 2), and the plant
    block ``x`` (n, 13).  Inputs outside [0, 1] are reported in
    ``channels["u_range"]``, not clipped.
    """
    icfg = icfg or sim.IntegratorConfig(rtol=1e-8, atol=1e-10,
                                        horizon=120.0, sample_dt=0.05)
    x0 = model.check_state(x0)
    alpha_e = np.asarray(cfg.alpha_e)
    alpha_h = np.asarray(cfg.alpha_h)
    xa0 = np.concatenate([x0, np.asarray(sigma0, dtype=float)])
    traj = sim.integrate(lambda t, xa: closed_loop_rhs(t, xa, cfg, p,
                                                       alpha_e, alpha_h),
                         xa0, icfg)
    xs = traj.y[:, :13]
    sigmas = traj.y[:, 13:]
    us = np.empty((len(traj.t), 2))
    for i, xa in enumerate(traj.y):
        status, _, u1, u2 = closed_loop_rhs_core(
            xa, p.pv, alpha_e, alpha_h, cfg.K, cfg.y1ref, cfg.y2ref)
        us[i] = (u1, u2)
    y1 = np.array([model.output_y1(x, p) for x in xs])
    y2 = np.array([model.output_y2(x, p) for x in xs])
    traj.channels.update(
        x=xs, sigma=sigmas, u=us, y1=y1, y2=y2, yhat2ref=sigmas[:, 0].copy(),
        u_range=(float(us.min()), float(us.max())))
    return traj
