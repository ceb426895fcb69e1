"""Root finding and reference scans: equilibria and tracking conditions.

``solve_equilibrium`` pins the electric export and the averaged boiler
pressure and solves the 15-equation system (13 state derivatives plus the two
output pins) for the state and the two constant inputs.  Because nothing in
the dynamics depends on the averaged pressure, solutions come in a
one-parameter family: changing the pressure reference translates only that
coordinate.

``solve_theorem3`` finds the operating condition of the tracking controller:
an internal state (for the redefined outputs) whose drift vanishes while the
averaged pressure ramps at the constant rate nu = K sigma2_ref and the pipe
heat flow meets its reference.  For K = 0 the ramp rate is still solved for,
as the limit shape of the condition; a genuine constant-pressure equilibrium
exists only where the heat flow reference is consistent with the electric
one.

``scan_references`` walks a grid of references with warm continuation and
collects eigenvalues of the internal-dynamics matrices; per-point failures
are recorded in the rows rather than raised.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import model, normal_form
from ._jetcore import rhs, rhs_jacobian


class NoEquilibriumError(RuntimeError):
    """Newton failed to find a solution from any attempted start."""


@dataclass(frozen=True)
class EquilibriumSolution:
    x: np.ndarray          # (13,) state
    u: np.ndarray          # (2,) constant inputs
    residual: float        # max-norm of the 15 defining equations
    y1ref: float
    yhat2ref: float

    @property
    def y2(self):
        """Pipe heat flow at the solution [MJ/s]."""
        return None if self.x is None else float(self.x[model.XH2])


@dataclass(frozen=True)
class Theorem3Solution:
    eta_hat_ref: np.ndarray   # (5,) internal coordinates (w_t1, d1, omega1, dp, w)
    nu: float                 # pressure ramp rate K*sigma2_ref
    sigma2_ref: float         # nu / K (nan when K = 0)
    residual: float
    x_ref: np.ndarray         # (13,) reconstructed state of the operating condition
    in_dhat: bool
    y1ref: float
    y2ref: float
    K: float


def equilibrium_guess(p, y1ref, yhat2ref=0.0):
    """Physically motivated starting point for the equilibrium solve.

    Fuel flows come from the linear heat/electric balance (turbine chains at
    rest), rotor angles from inverting the bus transfer with susceptance
    terms only, and the pipe state from the boiler balance.
    """
    ke1 = p.Ke1_pu / (1.0 - p.Wo_1)
    ke2 = p.Ke2_pu / (1.0 - p.Wo_2)
    kh1 = p.Kh_1 / (1.0 + p.beta_1)
    kh2 = p.Kh_2 / (1.0 + p.beta_2)
    A = np.array([[ke1, ke2], [kh1, kh2]])
    b = np.array([y1ref + ke1 * p.Wo_1 + ke2 * p.Wo_2,
                  p.QL_1 + p.QL_2 - kh1 * p.beta_1 - kh2 * p.beta_2])
    wf1, wf2 = np.linalg.solve(A, b)
    q12 = kh1 * (wf1 + p.beta_1) - p.QL_1
    w = q12 / p.flow_coeff
    pm1 = ke1 * (wf1 - p.Wo_1)
    pm2 = ke2 * (wf2 - p.Wo_2)
    d1 = math.asin(min(0.98, max(-0.98, pm1 / (p.E_1 * p.B_10))))
    d2 = math.asin(min(0.98, max(-0.98, pm2 / (p.E_2 * p.B_20))))
    x = np.zeros(model.NX)
    x[model.VP1] = x[model.WF1] = x[model.WT1] = wf1
    x[model.VP2] = x[model.WF2] = x[model.WT2] = wf2
    x[model.DELTA1], x[model.DELTA2] = d1, d2
    x[model.XH1] = p.rho_ratio * p.fric * w * abs(w)
    x[model.XH2] = w
    x[model.XH3] = yhat2ref
    u = np.array([(wf1 - p.Wo_1) / (1.0 - p.Wo_1),
                  (wf2 - p.Wo_2) / (1.0 - p.Wo_2)])
    return x, u


def _dy1_dx(x, p):
    row = np.zeros(model.NX)
    d1, d2 = x[model.DELTA1], x[model.DELTA2]
    row[model.DELTA1] = p.E_1 * (p.B_10 * math.cos(d1) + p.G_10 * math.sin(d1))
    row[model.DELTA2] = p.E_2 * (p.B_20 * math.cos(d2) + p.G_20 * math.sin(d2))
    return row


def _newton_equilibrium(p, y1ref, yhat2ref, x0, u0, tol, max_iter):
    pv = p.pv
    gv1 = (1.0 - p.Wo_1) / p.Tv_1
    gv2 = (1.0 - p.Wo_2) / p.Tv_2
    v = np.concatenate([x0, u0])

    def residual(v):
        F = np.empty(15)
        F[:13] = rhs(v[:13], v[13], v[14], pv)
        F[13] = model.output_y1(v[:13], p) - y1ref
        F[14] = v[model.XH3] - yhat2ref
        return F

    F = residual(v)
    fn = float(np.linalg.norm(F))
    for _ in range(max_iter):
        if float(np.linalg.norm(F, np.inf)) <= tol:
            return v[:13], v[13:], float(np.linalg.norm(residual(v), np.inf))
        J = np.zeros((15, 15))
        J[:13, :13] = rhs_jacobian(v[:13], pv)
        J[model.VP1, 13] = gv1
        J[model.VP2, 14] = gv2
        J[13, :13] = _dy1_dx(v[:13], p)
        J[14, model.XH3] = 1.0
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            return None
        alpha = 1.0
        for _ in range(12):
            vn = v + alpha * step
            Fn = residual(vn)
            fnn = float(np.linalg.norm(Fn))
            if fnn < (1.0 - 0.25 * alpha) * fn or fnn <= tol:
                v, F, fn = vn, Fn, fnn
                break
            alpha *= 0.5
        else:
            return None
    if float(np.linalg.norm(F, np.inf)) <= tol:
        return v[:13], v[13:], float(np.linalg.norm(F, np.inf))
    return None


def solve_equilibrium(p, y1ref, yhat2ref=0.0, guess=None, tol=1e-12,
                      max_iter=60, homotopy=True):
    """Equilibrium state and inputs pinned to (y1ref, yhat2ref).

    Newton with an analytic Jacobian from either the supplied guess or the
    balance-based one; on failure, continuation walks the electric reference
    from 1.0 toward the target in 0.02 steps.
    """
    starts = []
    if guess is not None:
        if isinstance(guess, EquilibriumSolution):
            starts.append((guess.x.copy(), guess.u.copy()))
        else:
            starts.append((np.array(guess[0], dtype=float),
                           np.array(guess[1], dtype=float)))
    starts.append(equilibrium_guess(p, y1ref, yhat2ref))
    for x0, u0 in starts:
        out = _newton_equilibrium(p, y1ref, yhat2ref, x0, u0, tol, max_iter)
        if out is not None:
            x, u, res = out
            return EquilibriumSolution(x=x, u=u, residual=res,
                                       y1ref=y1ref, yhat2ref=yhat2ref)
    if homotopy:
        y1_start = 1.0
        n = max(1, int(math.ceil(abs(y1ref - y1_start) / 0.02)))
        x0, u0 = equilibrium_guess(p, y1_start, yhat2ref)
        cur = (x0, u0)
        for y1 in np.linspace(y1_start, y1ref, n + 1):
            out = _newton_equilibrium(p, y1, yhat2ref, cur[0], cur[1], tol, max_iter)
            if out is None:
                raise NoEquilibriumError(
                    f"equilibrium continuation stalled at y1ref = {y1:.4f} "
                    f"(target {y1ref:.4f})")
            cur = (out[0], out[1])
        return EquilibriumSolution(x=cur[0], u=cur[1],
                                   residual=out[2], y1ref=y1ref, yhat2ref=yhat2ref)
    raise NoEquilibriumError(f"no equilibrium found for y1ref = {y1ref:.4f}")


# ---------------------------------------------------------------------------
# Tracking operating condition.
# ---------------------------------------------------------------------------

R_HAT_ROWS = (model.WT1, model.DELTA1, model.OMEGA1, model.XH1, model.XH2)


def _qhat_and_sens(p, xi_e1, nu, eta_hat, x_guess):
    """Internal drift q_hat and its exact sensitivities at one condition.

    Reconstructs the state from (xi_e = (xi_e1, 0, ...), xi_h_hat = (0, nu, 0),
    eta_hat), then pushes the drift Jacobian through the inverse coordinate
    map.  Returns (qhat, d_qhat/d_eta_hat (5x5), d_qhat/d_nu (5,), x, noise)
    where ``noise`` estimates the q_hat error induced by the inner-inversion
    stopping tolerance (it grows near the singular set).
    """
    z = np.zeros(13)
    z[0] = xi_e1
    z[6] = nu
    z[8:13] = eta_hat
    x = normal_form.phi_hat_inverse(z, x_guess, p)
    qhat = rhs(x, 0.0, 0.0, p.pv)[list(R_HAT_ROWS)]
    Dr = rhs_jacobian(x, p.pv)[list(R_HAT_ROWS), :]
    Jphi = normal_form.dphi_hat(x, p)
    sens = np.linalg.solve(Jphi.T, Dr.T).T      # Dr @ inv(Jphi)
    inv_res = 1e-11 + 1e-13 * float(np.linalg.norm(z, np.inf))
    noise = inv_res * float(np.abs(sens).sum(axis=1).max())
    return qhat, sens[:, 8:13], sens[:, 6], x, noise


def solve_theorem3(p, y1ref, y2ref, K=0.01, guess=None, tol=1e-9,
                   max_iter=50, homotopy=True):
    """Solve for the tracking operating condition (eta_hat_ref, sigma2_ref).

    Unknowns are the five internal coordinates and the pressure ramp rate
    nu = K sigma2_ref; equations are the five internal drift components and
    the pipe-flow pin.  Reports membership of the reconstructed condition in
    the nonsingular region.
    """
    if guess is not None:
        eta0, nu0, x0 = guess
    else:
        eq = solve_equilibrium(p, y1ref, 0.0)
        eta0 = eq.x[list(model.ETA_HAT_IDX)]
        nu0 = 0.0
        x0 = eq.x.copy()

    def evaluate(v, x, y2):
        qhat, Qcur, Bnu, x, noise = _qhat_and_sens(p, y1ref, v[5], v[:5], x)
        F = np.empty(6)
        F[:5] = qhat
        F[5] = p.flow_coeff * v[4] - y2
        return F, Qcur, Bnu, x, max(tol, 4.0 * noise)

    def attempt(y2, eta, nu, xg):
        v = np.concatenate([eta, [nu]])
        x = xg
        try:
            F, Qcur, Bnu, x, tol_eff = evaluate(v, x, y2)
        except (normal_form.NonConvergenceError, normal_form.SingularityError):
            return None
        fn = float(np.linalg.norm(F))
        for _ in range(max_iter):
            if float(np.linalg.norm(F, np.inf)) <= tol_eff:
                return v, x, float(np.linalg.norm(F, np.inf))
            J = np.zeros((6, 6))
            J[:5, :5] = Qcur
            J[:5, 5] = Bnu
            J[5, 4] = p.flow_coeff
            try:
                step = np.linalg.solve(J, -F)
            except np.linalg.LinAlgError:
                return None
            alpha = 1.0
            for _ in range(10):
                try:
                    Fn, Qn, Bn, xn, tn = evaluate(v + alpha * step, x, y2)
                except (normal_form.NonConvergenceError, normal_form.SingularityError):
                    alpha *= 0.5
                    continue
                fnn = float(np.linalg.norm(Fn))
                if fnn < (1.0 - 0.25 * alpha) * fn or fnn <= tn:
                    v, F, Qcur, Bnu, x, fn, tol_eff = \
                        v + alpha * step, Fn, Qn, Bn, xn, fnn, tn
                    break
                alpha *= 0.5
            else:
                # Stalled at the inner-inversion noise floor; accept if met.
                if float(np.linalg.norm(F, np.inf)) <= tol_eff:
                    return v, x, float(np.linalg.norm(F, np.inf))
                return None
        if float(np.linalg.norm(F, np.inf)) <= tol_eff:
            return v, x, float(np.linalg.norm(F, np.inf))
        return None

    out = attempt(y2ref, eta0, nu0, x0)
    if out is None and homotopy:
        eq = solve_equilibrium(p, y1ref, 0.0)
        y2_start = float(p.flow_coeff * eq.x[model.XH2])
        eta, nu, xg = eq.x[list(model.ETA_HAT_IDX)], 0.0, eq.x.copy()
        n = max(1, int(math.ceil(abs(y2ref - y2_start) / 0.1)))
        cur = None
        for y2 in np.linspace(y2_start, y2ref, n + 1):
            cur = attempt(y2, eta, nu, xg)
            if cur is None:
                raise NoEquilibriumError(
                    f"tracking-condition continuation stalled at y2ref = {y2:.4f}")
            eta, nu, xg = cur[0][:5], cur[0][5], cur[1]
        out = cur
    if out is None:
        raise NoEquilibriumError(
            f"no tracking condition found for (y1ref, y2ref) = ({y1ref}, {y2ref})")
    v, x, res = out
    return Theorem3Solution(
        eta_hat_ref=v[:5], nu=float(v[5]),
        sigma2_ref=float(v[5] / K) if K != 0.0 else float("nan"),
        residual=res, x_ref=x, in_dhat=normal_form.in_dhat(x, p),
        y1ref=y1ref, y2ref=y2ref, K=K)


# ---------------------------------------------------------------------------
# Reference scans.
# ---------------------------------------------------------------------------

def scan_references(p, kind, values, K=0.01, y1ref=1.0, yhat2ref=0.0,
                    progress=None):
    """Eigenvalue scan over a reference grid with warm continuation.

    ``kind``: "Q" scans the electric reference with the minimum-phase matrix;
    "Qtilde" and "theorem3" scan the heat reference at fixed ``y1ref`` with
    the ramped internal matrix or the full closed-loop block matrix.
    Returns a list of row dicts; failures get status != "ok" and the scan
    continues.
    """
    from . import zero_dynamics as zd

    rows = []
    warm = None
    for val in values:
        row = {"ref": float(val), "status": "ok"}
        try:
            if kind == "Q":
                eq = solve_equilibrium(p, val, yhat2ref, guess=warm,
                                       homotopy=warm is None)
                warm = eq
                res = zd.matrix_Q(p, val, yhat2ref, eq=eq)
                eig = res.eigvals
                row["in_dhat"] = bool(normal_form.in_dhat(eq.x, p))
            elif kind in ("Qtilde", "theorem3"):
                sol = solve_theorem3(p, y1ref, val, K=K, guess=warm,
                                     homotopy=warm is None)
                warm = (sol.eta_hat_ref, sol.nu, sol.x_ref)
                res = zd.matrix_theorem3(p, y1ref, val, K=K, sol=sol)
                eig = res.eigvals_qtilde if kind == "Qtilde" else res.eigvals
                row["in_dhat"] = bool(sol.in_dhat)
            else:
                raise ValueError(f"unknown scan kind {kind!r}")
        except (NoEquilibriumError, normal_form.NonConvergenceError,
                normal_form.SingularityError) as exc:
            row["status"] = type(exc).__name__
            row["error"] = str(exc)
            rows.append(row)
            continue
        row["eig_re"] = np.real(eig)
        row["eig_im"] = np.imag(eig)
        row["max_re"] = float(np.max(np.real(eig)))
        row["stable"] = bool(np.max(np.real(eig)) < 0.0)
        rows.append(row)
        if progress:
            progress(row)
    return rows


def locate_sign_change(rows):
    """Linear interpolation of the reference where max Re(eig) crosses zero."""
    xs = [r["ref"] for r in rows if r["status"] == "ok"]
    ys = [r["max_re"] for r in rows if r["status"] == "ok"]
    for (x0, y0), (x1, y1) in zip(zip(xs, ys), zip(xs[1:], ys[1:])):
        if y0 == 0.0:
            return x0
        if y0 * y1 < 0.0:
            return x0 - y0 * (x1 - x0) / (y1 - y0)
    return None
