"""Zero dynamics of the original outputs and internal-dynamics matrices.

Pinning the electric export and the pipe heat flow (with all their relevant
time derivatives) to constant references leaves four internal coordinates

    eta = (w_t1, delta1, omega1, pavg).

Their drift q(eta) is the drift of the corresponding full state, reconstructed
by inverting the normal-form map with the output chains frozen.  Because no
equation depends on the averaged pressure, q is independent of eta_4: states
where the first three components vanish form a line of equilibria
parameterised by eta_4, and when the first three components can vanish but
the fourth cannot, trajectories settle onto a line along which the averaged
pressure drifts at a constant rate.

Two simulation routes are provided and cross-validated: integrating q
directly (each step inverts the coordinate map), and integrating the full
13-state model under the exact output-zeroing input.

The stability matrices of the redefined internal dynamics (5x5) and of the
ramped tracking condition with its integral loop (6x6 block form) are
computed from exact drift Jacobians pushed through the inverse coordinate
map; a central-difference variant exists as an independent check.
"""

from dataclasses import dataclass

import numpy as np

from . import analysis, model, normal_form, sim
from ._jetcore import STATUS_OK, rhs, rhs_jacobian, zeroing_rhs_core

# Drift components describing the internal coordinates (matching ETA_IDX /
# ETA_HAT_IDX, since the internal coordinates are verbatim state entries).
R_ROWS = list(model.ETA_IDX)
R_HAT_ROWS = list(model.ETA_HAT_IDX)


class ZeroDynamicsFault(RuntimeError):
    """Output-zeroing input undefined (singular decoupling matrix)."""


@dataclass(frozen=True)
class ZeroDynState:
    """A point of the zero dynamics: internal coordinates plus pinned outputs."""
    eta: np.ndarray
    y1ref: float
    y2ref: float


@dataclass(frozen=True)
class ManifoldResidual:
    """Drift components of the internal coordinates at a zero-dynamics point.

    On the invariant set the first three vanish; F4 is the drift rate of the
    averaged pressure (zero exactly on the equilibrium line).
    """
    F1: float
    F2: float
    F3: float
    F4: float

    @property
    def values(self):
        return np.array([self.F1, self.F2, self.F3, self.F4])


def pinned_coords(eta, y1ref, y2ref):
    """Normal-form image with both output chains frozen at the references."""
    z = np.zeros(13)
    z[0] = y1ref
    z[5] = y2ref
    z[9:13] = np.asarray(eta, dtype=float)
    return z


def reconstruct_state(p, eta, y1ref, y2ref, guess=None):
    """Full state matching internal coordinates eta with outputs pinned."""
    eta = np.asarray(eta, dtype=float)
    if guess is None:
        guess = _default_guess(p, eta, y1ref, y2ref)
    return normal_form.phi_inverse(pinned_coords(eta, y1ref, y2ref), guess, p)


def _default_guess(p, eta, y1ref, y2ref):
    w = y2ref / p.flow_coeff
    x = model.heat_balance_state(p, w=w)
    x[model.WT1] = x[model.WF1] = x[model.VP1] = eta[0]
    x[model.DELTA1] = eta[1]
    x[model.OMEGA1] = eta[2]
    x[model.XH3] = eta[3]
    s2 = (y1ref - p.E_1 * p.B_10 * np.sin(eta[1])) / (p.E_2 * p.B_20)
    x[model.DELTA2] = np.arcsin(np.clip(s2, -0.98, 0.98))
    x[model.OMEGA2] = 0.0
    return x


def q_eval(p, eta, y1ref, y2ref, guess=None, return_state=False):
    """Drift of the internal coordinates at eta under pinned outputs."""
    x = reconstruct_state(p, eta, y1ref, y2ref, guess)
    q = rhs(x, 0.0, 0.0, p.pv)[R_ROWS]
    if return_state:
        return q, x
    return q


class _PinnedInverter:
    """Chord-Newton inversion of the pinned coordinate map along a trajectory.

    Holds the previous solution and a factorized Jacobian; consecutive
    internal states differ little, so most evaluations converge in one or two
    back-substitutions without refactoring.  Falls back to the damped full
    Newton when the chord iteration stalls.
    """

    _FACT5 = np.array([1.0, 1.0, 2.0, 6.0, 24.0])
    _EMPTY_TANG = np.zeros((0, 13))

    def __init__(self, p, y1ref, y2ref, x0):
        self.p = p
        self.pv = p.pv
        self.y1ref = y1ref
        self.y2ref = y2ref
        self.x = np.array(x0, dtype=float)
        self._lu = None

    def _refresh(self):
        from scipy.linalg import lu_factor
        self._lu = lu_factor(normal_form.dphi(self.x, self.p))

    def _residual(self, x, z):
        from ._jetcore import propagate
        obs, _ = propagate(x, self._EMPTY_TANG, 4, self.pv)
        g = np.empty(13)
        g[0:5] = self._FACT5 * obs[0, :5, 0]
        g[5:9] = self._FACT5[:4] * obs[1, :4, 0]
        g[9:13] = x[R_ROWS]
        return g - z

    def eval(self, eta):
        from scipy.linalg import lu_solve
        z = pinned_coords(eta, self.y1ref, self.y2ref)
        tol = 1e-11 + 1e-13 * float(np.linalg.norm(z, np.inf))
        if self._lu is None:
            self._refresh()
        x = self.x.copy()
        for attempt in range(2):
            for _ in range(8):
                g = self._residual(x, z)
                if float(np.linalg.norm(g, np.inf)) <= tol:
                    self.x = x
                    return rhs(x, 0.0, 0.0, self.pv)[R_ROWS], x
                x = x + lu_solve(self._lu, -g)
            if attempt == 0:
                self._refresh()
                x = self.x.copy()
        # Chord iteration stalled; run the damped Newton and refactor there.
        x = reconstruct_state(self.p, eta, self.y1ref, self.y2ref, guess=self.x)
        self.x = x
        self._refresh()
        return rhs(x, 0.0, 0.0, self.pv)[R_ROWS], x


def manifold_residual(p, eta, y1ref, y2ref, guess=None):
    """Invariant-set residuals at eta (components of the internal drift)."""
    q = q_eval(p, eta, y1ref, y2ref, guess)
    return ManifoldResidual(*map(float, q))


def zeroing_input(p, x):
    """The input pair that freezes both output chains at the current state."""
    status, _, u1, u2 = zeroing_rhs_core(np.asarray(x, dtype=float), p.pv)
    if status != STATUS_OK:
        raise ZeroDynamicsFault("decoupling matrix singular along zero dynamics")
    return np.array([u1, u2])


def default_sim_config(horizon=120.0, sample_dt=0.2):
    return sim.IntegratorConfig(rtol=1e-7, atol=1e-9, horizon=horizon,
                                sample_dt=sample_dt)


def simulate_zero_dynamics(p, eta0, y1ref, y2ref, cfg=None, method="full_state"):
    """Simulate the zero dynamics from one internal initial condition.

    ``method="full_state"`` integrates the 13-state model under the exact
    output-zeroing input; ``method="reduced"`` integrates the internal drift
    directly, inverting the coordinate map at every evaluation (warm-started).
    Channels: ``eta`` (n, 4), ``F`` (n, 4) invariant residuals, ``y1``, ``y2``,
    and for the full-state route ``u`` (n, 2).
    """
    cfg = cfg or default_sim_config()
    eta0 = np.asarray(eta0, dtype=float)
    x0 = reconstruct_state(p, eta0, y1ref, y2ref)
    pv = p.pv

    if method == "full_state":
        def rhs_t(t, x):
            status, dx, _, _ = zeroing_rhs_core(x, pv)
            if status != STATUS_OK:
                raise ZeroDynamicsFault(
                    f"zero-dynamics fault at t = {t:.4f} (status {status})")
            return dx

        traj = sim.integrate(rhs_t, x0, cfg)
        etas = traj.y[:, R_ROWS]
        F = np.array([rhs(xi, 0.0, 0.0, pv)[R_ROWS] for xi in traj.y])
        u = np.array([zeroing_input(p, xi) for xi in traj.y])
        traj.channels.update(eta=etas, F=F, u=u,
                             y1=np.array([model.output_y1(xi, p) for xi in traj.y]),
                             y2=np.array([model.output_y2(xi, p) for xi in traj.y]))
        return traj

    if method == "reduced":
        inverter = _PinnedInverter(p, y1ref, y2ref, x0)

        def q_robust(eta):
            # Stage evaluations can jump; fall back to a fresh guess before
            # giving up.
            try:
                return inverter.eval(eta)[0]
            except normal_form.NonConvergenceError:
                q, x = q_eval(p, eta, y1ref, y2ref, return_state=True)
                inverter.x = x
                inverter._refresh()
                return q

        traj = sim.integrate(lambda t, eta: q_robust(eta), eta0, cfg)
        etas = traj.y
        inverter.x = x0.copy()
        F = np.array([q_robust(eta) for eta in etas])
        traj.channels.update(eta=etas, F=F)
        return traj

    raise ValueError(f"unknown method {method!r}")


def eta_grid(eta1, eta2_values, eta3, eta4_values):
    """Cartesian initial-condition grid for the zero-dynamics experiments."""
    return [np.array([eta1, d, eta3, h])
            for d in eta2_values for h in eta4_values]


# ---------------------------------------------------------------------------
# Internal-dynamics stability matrices.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QResult:
    matrix: np.ndarray       # (5, 5) Jacobian of the redefined internal drift
    eigvals: np.ndarray      # (5,)
    eq: analysis.EquilibriumSolution


@dataclass(frozen=True)
class Theorem3Matrices:
    qtilde: np.ndarray        # (5, 5)
    b2: np.ndarray            # (5,)
    b3: np.ndarray            # (5,)
    c: np.ndarray             # (5,)
    matrix: np.ndarray        # (6, 6) closed-loop internal/integral block
    eigvals: np.ndarray       # (6,)
    eigvals_qtilde: np.ndarray
    sol: analysis.Theorem3Solution


def _qhat_sensitivity(p, x):
    """Exact (d qhat / d z) at a state: drift Jacobian through the inverse map."""
    Dr = rhs_jacobian(x, p.pv)[R_HAT_ROWS, :]
    Jphi = normal_form.dphi_hat(x, p)
    return np.linalg.solve(Jphi.T, Dr.T).T


def matrix_Q(p, y1ref, yhat2ref=0.0, eq=None):
    """Stability matrix of the redefined internal dynamics at an equilibrium.

    The Jacobian is exact: the drift Jacobian of the five internal drift
    components is pushed through the inverse of the redefined coordinate map
    and restricted to the internal columns.
    """
    if eq is None:
        eq = analysis.solve_equilibrium(p, y1ref, yhat2ref)
    sens = _qhat_sensitivity(p, eq.x)
    Q = sens[:, 8:13]
    return QResult(matrix=Q, eigvals=np.linalg.eigvals(Q), eq=eq)


def matrix_Q_fd(p, y1ref, yhat2ref=0.0, eq=None):
    """Central-difference variant of :func:`matrix_Q` (verification oracle)."""
    if eq is None:
        eq = analysis.solve_equilibrium(p, y1ref, yhat2ref)
    z0 = normal_form.phi_hat(eq.x, p).flat
    Q = np.empty((5, 5))
    x_guess = eq.x.copy()
    for j in range(5):
        h = 1e-6 * max(1.0, abs(z0[8 + j]))
        qs = []
        for s in (+1.0, -1.0):
            z = z0.copy()
            z[8 + j] += s * h
            x = normal_form.phi_hat_inverse(z, x_guess, p)
            qs.append(rhs(x, 0.0, 0.0, p.pv)[R_HAT_ROWS])
        Q[:, j] = (qs[0] - qs[1]) / (2.0 * h)
    return QResult(matrix=Q, eigvals=np.linalg.eigvals(Q), eq=eq)


def matrix_theorem3(p, y1ref, y2ref, K=0.01, sol=None):
    """Closed-loop internal/integral stability matrix of the tracking law.

    Assembles [[Qtilde + K B3 C, K B2], [C, 0]] at the ramped operating
    condition; for K = 0 its spectrum is that of Qtilde plus a zero
    eigenvalue.
    """
    if sol is None:
        sol = analysis.solve_theorem3(p, y1ref, y2ref, K=K)
    sens = _qhat_sensitivity(p, sol.x_ref)
    qtilde = sens[:, 8:13]
    b2 = sens[:, 6]
    b3 = sens[:, 7]
    c = np.zeros(5)
    c[4] = p.flow_coeff          # heat flow reads only the pipe velocity
    M = np.zeros((6, 6))
    M[:5, :5] = qtilde + K * np.outer(b3, c)
    M[:5, 5] = K * b2
    M[5, :5] = c
    return Theorem3Matrices(qtilde=qtilde, b2=b2, b3=b3, c=c, matrix=M,
                            eigvals=np.linalg.eigvals(M),
                            eigvals_qtilde=np.linalg.eigvals(qtilde), sol=sol)
