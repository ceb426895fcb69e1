"""Normal-form coordinates for the two output choices and their diagnostics.

Original outputs (electric export, pipe heat flow) admit vector relative
degree {5, 4} away from a singular set, giving coordinates

    Phi(x)    = (xi_e, xi_h, eta),          eta     = (w_t1, delta1, omega1, pavg)

with xi_e the first five Lie derivatives of the electric output and xi_h the
first four of the heat output.  Replacing the heat output by the averaged
boiler pressure (the redefined output) gives relative degree {5, 3} and

    Phi_hat(x) = (xi_e, xi_h_hat, eta_hat), eta_hat = (w_t1, delta1, omega1, dp, w).

Both maps, their exact Jacobians (via jet tangents), damped-Newton inverses,
the 2x2 input-decoupling matrices, and grid scans of the singular sets live
here.  The decoupling determinants depend on the rotor angles only; fitted
closed forms in the bus-transfer power slopes provide independent structure
checks of that property.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from . import jets, model

# Determinants smaller than DET_RTOL times a Hadamard row-norm scale are
# treated as singular.
DET_RTOL = 1e-8

_FACT = np.array([1.0, 1.0, 2.0, 6.0, 24.0, 120.0])


class SingularityError(RuntimeError):
    """A Jacobian or decoupling matrix is numerically singular."""

    def __init__(self, message, det=None):
        super().__init__(message)
        self.det = det


class NonConvergenceError(RuntimeError):
    """Newton inversion failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class NormalCoords:
    xi_e: np.ndarray     # (5,)
    xi_h: np.ndarray     # (4,)
    eta: np.ndarray      # (4,)

    @property
    def flat(self):
        return np.concatenate([self.xi_e, self.xi_h, self.eta])

    @classmethod
    def from_flat(cls, z):
        z = np.asarray(z, dtype=float)
        return cls(z[0:5].copy(), z[5:9].copy(), z[9:13].copy())


@dataclass(frozen=True)
class NormalCoordsHat:
    xi_e: np.ndarray       # (5,)
    xi_h_hat: np.ndarray   # (3,)
    eta_hat: np.ndarray    # (5,)

    @property
    def flat(self):
        return np.concatenate([self.xi_e, self.xi_h_hat, self.eta_hat])

    @classmethod
    def from_flat(cls, z):
        z = np.asarray(z, dtype=float)
        return cls(z[0:5].copy(), z[5:8].copy(), z[8:13].copy())


@dataclass(frozen=True)
class DecouplingMatrix:
    matrix: np.ndarray        # (2, 2) mixed Lie derivatives
    det: float
    scale: float              # Hadamard row-norm scale for the threshold
    singular: bool
    det_closed_form: float    # fitted angle-slope expression, for cross-checks

    def solve(self, b):
        if self.singular:
            raise SingularityError(
                f"decoupling matrix singular (det = {self.det:.3e})", det=self.det)
        return np.linalg.solve(self.matrix, b)


def phi(x, p):
    """Normal-form image of a state under the original outputs."""
    obs, _ = jets.propagate_model(x, p, 4)
    xi_e = _FACT[:5] * obs[0, :5, 0]
    xi_h = _FACT[:4] * obs[1, :4, 0]
    eta = np.asarray(x, dtype=float)[list(model.ETA_IDX)]
    return NormalCoords(xi_e, xi_h, eta)


def phi_hat(x, p):
    """Normal-form image of a state under the redefined outputs."""
    obs, _ = jets.propagate_model(x, p, 4)
    xi_e = _FACT[:5] * obs[0, :5, 0]
    xi_h_hat = _FACT[:3] * obs[2, :3, 0]
    eta_hat = np.asarray(x, dtype=float)[list(model.ETA_HAT_IDX)]
    return NormalCoordsHat(xi_e, xi_h_hat, eta_hat)


def _unit_tangents():
    return np.eye(model.NX)


def dphi(x, p):
    """Exact Jacobian of the original-output coordinate map."""
    obs, _ = jets.propagate_model(x, p, 4, tangents=_unit_tangents())
    J = np.zeros((model.NX, model.NX))
    for k in range(5):
        J[k, :] = _FACT[k] * obs[0, k, 1:]
    for k in range(4):
        J[5 + k, :] = _FACT[k] * obs[1, k, 1:]
    for r, i in enumerate(model.ETA_IDX):
        J[9 + r, i] = 1.0
    return J


def dphi_hat(x, p):
    """Exact Jacobian of the redefined-output coordinate map."""
    obs, _ = jets.propagate_model(x, p, 4, tangents=_unit_tangents())
    J = np.zeros((model.NX, model.NX))
    for k in range(5):
        J[k, :] = _FACT[k] * obs[0, k, 1:]
    for k in range(3):
        J[5 + k, :] = _FACT[k] * obs[2, k, 1:]
    for r, i in enumerate(model.ETA_HAT_IDX):
        J[8 + r, i] = 1.0
    return J


def det_with_scale(J):
    """Determinant and its Hadamard row-norm scale."""
    det = float(np.linalg.det(J))
    scale = float(np.prod(np.linalg.norm(J, axis=1)))
    return det, scale


def _newton_invert(forward, jacobian, z, guess, max_iter=50, tol_abs=1e-11,
                   tol_rel=1e-13, label="coordinate map"):
    z = np.asarray(z, dtype=float)
    x = np.asarray(guess, dtype=float).copy()
    tol = tol_abs + tol_rel * float(np.linalg.norm(z, np.inf))
    g = forward(x) - z
    gn = float(np.linalg.norm(g))
    for _ in range(max_iter):
        if float(np.linalg.norm(g, np.inf)) <= tol:
            return x
        J = jacobian(x)
        det, scale = det_with_scale(J)
        if abs(det) <= DET_RTOL * scale:
            raise SingularityError(
                f"{label}: singular Jacobian during inversion "
                f"(det = {det:.3e}, scale = {scale:.3e})", det=det)
        step = np.linalg.solve(J, -g)
        alpha = 1.0
        for _ in range(12):
            xn = x + alpha * step
            g_new = forward(xn) - z
            gn_new = float(np.linalg.norm(g_new))
            if gn_new < (1.0 - 0.25 * alpha) * gn or gn_new <= tol:
                x, g, gn = xn, g_new, gn_new
                break
            alpha *= 0.5
        else:
            raise NonConvergenceError(
                f"{label}: line search stalled (residual {gn:.3e})", residual=gn)
    if float(np.linalg.norm(g, np.inf)) <= tol:
        return x
    raise NonConvergenceError(
        f"{label}: no convergence after {max_iter} iterations "
        f"(residual {gn:.3e})", residual=gn)


def phi_inverse(z, guess, p, **kw):
    """Invert the original-output map by damped Newton from ``guess``."""
    if isinstance(z, NormalCoords):
        z = z.flat
    return _newton_invert(lambda x: phi(x, p).flat, lambda x: dphi(x, p),
                          z, guess, label="phi", **kw)


def phi_hat_inverse(z, guess, p, **kw):
    """Invert the redefined-output map by damped Newton from ``guess``."""
    if isinstance(z, NormalCoordsHat):
        z = z.flat
    return _newton_invert(lambda x: phi_hat(x, p).flat, lambda x: dphi_hat(x, p),
                          z, guess, label="phi_hat", **kw)


def _decoupling_rows(obs, p, variant):
    """Assemble the 2x2 decoupling matrix from a tower with input tangents."""
    A = np.empty((2, 2))
    A[0, 0] = _FACT[4] * obs[0, 4, 1]
    A[0, 1] = _FACT[4] * obs[0, 4, 2]
    if variant == "original":
        A[1, 0] = _FACT[3] * obs[1, 3, 1]
        A[1, 1] = _FACT[3] * obs[1, 3, 2]
    elif variant == "redefined":
        A[1, 0] = _FACT[2] * obs[2, 2, 1]
        A[1, 1] = _FACT[2] * obs[2, 2, 2]
    else:
        raise ValueError(f"variant must be 'original' or 'redefined', got {variant!r}")
    return A


def decoupling(x, p, variant="redefined"):
    """Input-decoupling matrix at a state, with singularity diagnostics.

    The returned ``det_closed_form`` evaluates the fitted two-term expression
    in the bus-transfer power slopes; it matches ``det`` wherever the
    determinant really is a function of the rotor angles alone.
    """
    obs, _ = jets.propagate_model(x, p, 4, tangents=jets.input_directions(p))
    A = _decoupling_rows(obs, p, variant)
    det = float(A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0])
    scale = float(np.hypot(A[0, 0], A[0, 1]) * np.hypot(A[1, 0], A[1, 1]))
    cu, cv = decoupling_affine_coefficients(p, variant)
    flows = model.electrical_flows(np.asarray(x)[model.ELEC], p)
    det_cf = cu * flows["dPinf1_ddelta1"] + cv * flows["dP2inf_ddelta2"]
    return DecouplingMatrix(matrix=A, det=det, scale=scale,
                            singular=abs(det) <= DET_RTOL * scale,
                            det_closed_form=float(det_cf))


def _probe_state(p, d1, d2):
    w = 0.25 * (p.QL_1 + p.QL_2) / p.flow_coeff
    return model.heat_balance_state(p, w=w, delta=(d1, d2))


def _det_at(p, variant, d1, d2):
    x = _probe_state(p, d1, d2)
    obs, _ = jets.propagate_model(x, p, 4, tangents=jets.input_directions(p))
    A = _decoupling_rows(obs, p, variant)
    return float(A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0])


def _slopes(p, d1, d2):
    xe = np.array([d1, 0.0, d2, 0.0])
    flows = model.electrical_flows(xe, p)
    return flows["dPinf1_ddelta1"], flows["dP2inf_ddelta2"]


@lru_cache(maxsize=8)
def decoupling_affine_coefficients(p, variant):
    """Fit det = c_u dPinf1/ddelta1 + c_v dP2inf/ddelta2 from two probe states.

    The determinant really is affine in the two bus-transfer slopes with
    state-independent coefficients: the electric chain contributes one slope
    per column and the heat rows are constant.  For the original outputs the
    heat row has opposite signs (raising either fuel valve pushes the pipe
    flow in opposite directions), which makes the cosine coefficients share
    a sign; the redefined heat row is a constant pair of equal entries, so
    the cosine coefficients oppose and the zero set contains a ratio curve
    through mid-range angles.
    """
    pairs = [(0.3, -0.2), (-0.25, 0.45)]
    M = np.array([_slopes(p, *ang) for ang in pairs])
    b = np.array([_det_at(p, variant, *ang) for ang in pairs])
    cu, cv = np.linalg.solve(M, b)
    return float(cu), float(cv)


def decoupling_closed_form(x, p, variant="redefined"):
    """Hand-derived chain-product prediction of the decoupling matrix.

    Follows the shortest input-to-output paths: valve gain, fuel-system and
    compressor lags, then either the swing chain (top row, proportional to
    the angle slope of the own bus transfer) or the boiler-pressure chain
    (bottom row, constant).  Used as an independent cross-check of the jet
    construction.
    """
    x = np.asarray(x, dtype=float)
    d1, d2 = x[model.DELTA1], x[model.DELTA2]
    gv1 = (1.0 - p.Wo_1) / p.Tv_1
    gv2 = (1.0 - p.Wo_2) / p.Tv_2
    ke1 = p.Ke1_pu / (1.0 - p.Wo_1)
    ke2 = p.Ke2_pu / (1.0 - p.Wo_2)
    pe1_slope = p.E_1 * (p.B_10 * np.cos(d1) + p.G_10 * np.sin(d1))
    pe2_slope = p.E_2 * (p.B_20 * np.cos(d2) + p.G_20 * np.sin(d2))
    A = np.empty((2, 2))
    A[0, 0] = gv1 * ke1 * pe1_slope / (p.Tf_1 * p.Tcd_1 * p.Te_1 ** 2)
    A[0, 1] = gv2 * ke2 * pe2_slope / (p.Tf_2 * p.Tcd_2 * p.Te_2 ** 2)
    kh1 = p.Kh_1 / (1.0 + p.beta_1)
    kh2 = p.Kh_2 / (1.0 + p.beta_2)
    if variant == "original":
        ch1 = 1.0 / (p.Th_1 * p.Qr)
        ch2 = 1.0 / (p.Th_2 * p.Qr)
        pipe = p.flow_coeff / (p.rho_ratio * p.Th_3)
        A[1, 0] = gv1 * pipe * ch1 * kh1 / p.Tf_1
        A[1, 1] = -gv2 * pipe * ch2 * kh2 / p.Tf_2
    else:
        ch3 = 1.0 / ((p.Th_1 + p.Th_2) * p.Qr)
        A[1, 0] = gv1 * ch3 * kh1 / p.Tf_1
        A[1, 1] = gv2 * ch3 * kh2 / p.Tf_2
    return A


@lru_cache(maxsize=8)
def jacobian_det_form(p, variant):
    """Fit det DPhi = v^3 (c20 u^2 + c11 u v + c02 v^2) in the angle slopes.

    u and v are the two bus-transfer power slopes; the cubic-times-quadratic
    shape is what separating the output chains from the internal coordinates
    produces, and the fit provides an independent sign oracle for the scan.
    """
    jac = dphi if variant == "original" else dphi_hat
    pairs = [(0.2, -0.3), (-0.35, 0.25), (0.5, 0.4)]
    rows, b = [], []
    for d1, d2 in pairs:
        u, v = _slopes(p, d1, d2)
        rows.append([v ** 3 * u * u, v ** 3 * u * v, v ** 3 * v * v])
        x = _probe_state(p, d1, d2)
        b.append(det_with_scale(jac(x, p))[0])
    c = np.linalg.solve(np.array(rows), np.array(b))
    return tuple(float(ci) for ci in c)


def jacobian_det_closed_form(p, variant, d1, d2):
    """Evaluate the fitted Jacobian-determinant form at rotor angles (d1, d2)."""
    c20, c11, c02 = jacobian_det_form(p, variant)
    u, v = _slopes(p, d1, d2)
    return v ** 3 * (c20 * u * u + c11 * u * v + c02 * v * v)


@dataclass
class ScanResult:
    """Grid scan of the decoupling and Jacobian determinants over rotor angles."""

    variant: str
    delta1: np.ndarray        # (n1,) grid for x_e1
    delta2: np.ndarray        # (n2,) grid for x_e3
    det_dec: np.ndarray       # (n1, n2) decoupling determinant
    det_dphi: np.ndarray      # (n1, n2) coordinate-map Jacobian determinant
    inside: np.ndarray        # (n1, n2) bool, connected nonsingular region of (0, 0)
    crossing: np.ndarray      # (n1, n2) bool, sign change against a neighbour

    def contains(self, d1, d2):
        """Whether the angle pair falls in a cell of the region around (0, 0)."""
        i = int(np.argmin(np.abs(self.delta1 - d1)))
        j = int(np.argmin(np.abs(self.delta2 - d2)))
        return bool(self.inside[i, j])

    def rows(self):
        """Flat row iterator for CSV serialization."""
        for i, d1 in enumerate(self.delta1):
            for j, d2 in enumerate(self.delta2):
                flags = int(self.inside[i, j]) | (int(self.crossing[i, j]) << 1)
                yield (d1, d2, self.det_dec[i, j], self.det_dphi[i, j], flags)

    def summary(self):
        return {
            "variant": self.variant,
            "n1": int(len(self.delta1)),
            "n2": int(len(self.delta2)),
            "inside_cells": int(self.inside.sum()),
            "origin_inside": self.contains(0.0, 0.0),
        }


def _scan_rows(p, variant, delta1, delta2, base_state):
    det_dec = np.empty((len(delta1), len(delta2)))
    det_dphi = np.empty_like(det_dec)
    x = np.array(base_state, dtype=float)
    # Input gains map the unit-tangent columns onto the g directions.
    gv = np.array([(1.0 - p.Wo_1) / p.Tv_1, (1.0 - p.Wo_2) / p.Tv_2])
    for i, d1 in enumerate(delta1):
        for j, d2 in enumerate(delta2):
            x[model.DELTA1] = d1
            x[model.DELTA2] = d2
            obs, _ = jets.propagate_model(x, p, 4, tangents=_unit_tangents())
            a11 = _FACT[4] * obs[0, 4, 1 + model.VP1] * gv[0]
            a12 = _FACT[4] * obs[0, 4, 1 + model.VP2] * gv[1]
            if variant == "original":
                a21 = _FACT[3] * obs[1, 3, 1 + model.VP1] * gv[0]
                a22 = _FACT[3] * obs[1, 3, 1 + model.VP2] * gv[1]
                J = np.zeros((model.NX, model.NX))
                for k in range(5):
                    J[k, :] = _FACT[k] * obs[0, k, 1:]
                for k in range(4):
                    J[5 + k, :] = _FACT[k] * obs[1, k, 1:]
                for r, idx in enumerate(model.ETA_IDX):
                    J[9 + r, idx] = 1.0
            else:
                a21 = _FACT[2] * obs[2, 2, 1 + model.VP1] * gv[0]
                a22 = _FACT[2] * obs[2, 2, 1 + model.VP2] * gv[1]
                J = np.zeros((model.NX, model.NX))
                for k in range(5):
                    J[k, :] = _FACT[k] * obs[0, k, 1:]
                for k in range(3):
                    J[5 + k, :] = _FACT[k] * obs[2, k, 1:]
                for r, idx in enumerate(model.ETA_HAT_IDX):
                    J[8 + r, idx] = 1.0
            det_dec[i, j] = a11 * a22 - a12 * a21
            det_dphi[i, j] = np.linalg.det(J)
    return det_dec, det_dphi


def singularity_scan(p, variant="redefined", n1=201, n2=201,
                     lo=-math.pi, hi=math.pi, base_state=None, workers=0):
    """Scan both determinants over a rotor-angle grid.

    All coordinates other than the two rotor angles are held at
    ``base_state`` (a balanced-flow state by default); the determinants are
    functions of the angles alone, which the tests verify separately.
    """
    delta1 = np.linspace(lo, hi, n1)
    delta2 = np.linspace(lo, hi, n2)
    if base_state is None:
        base_state = _probe_state(p, 0.0, 0.0)
    if workers and workers > 1 and n1 >= 4:
        from concurrent.futures import ProcessPoolExecutor

        chunks = np.array_split(np.arange(n1), min(workers, n1))
        det_dec = np.empty((n1, n2))
        det_dphi = np.empty((n1, n2))
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [(c, ex.submit(_scan_rows, p, variant, delta1[c], delta2,
                                  base_state)) for c in chunks]
            for c, fut in futs:
                dd, dj = fut.result()
                det_dec[c] = dd
                det_dphi[c] = dj
    else:
        det_dec, det_dphi = _scan_rows(p, variant, delta1, delta2, base_state)

    i0 = int(np.argmin(np.abs(delta1)))
    j0 = int(np.argmin(np.abs(delta2)))
    ok = (np.sign(det_dec) == np.sign(det_dec[i0, j0])) \
        & (np.sign(det_dphi) == np.sign(det_dphi[i0, j0]))
    labels, _ = ndimage.label(ok)
    inside = labels == labels[i0, j0]
    crossing = np.zeros_like(inside)
    for det in (det_dec, det_dphi):
        s = np.sign(det)
        crossing[:-1, :] |= s[:-1, :] != s[1:, :]
        crossing[1:, :] |= s[1:, :] != s[:-1, :]
        crossing[:, :-1] |= s[:, :-1] != s[:, 1:]
        crossing[:, 1:] |= s[:, 1:] != s[:, :-1]
    return ScanResult(variant=variant, delta1=delta1, delta2=delta2,
                      det_dec=det_dec, det_dphi=det_dphi,
                      inside=inside, crossing=crossing)


def in_dhat(x, p, scan=None):
    """Fast membership check for the nonsingular region of the redefined map.

    Uses the determinant signs at the state itself (the region is the
    connected sign-consistent neighbourhood of small angles); with a
    precomputed scan, also requires the enclosing cell to be flagged inside.
    """
    dec = decoupling(x, p, "redefined")
    if dec.singular:
        return False
    J = dphi_hat(x, p)
    det, scale = det_with_scale(J)
    if abs(det) <= DET_RTOL * scale:
        return False
    x0 = _probe_state(p, 0.0, 0.0)
    dec0 = decoupling(x0, p, "redefined")
    det0, _ = det_with_scale(dphi_hat(x0, p))
    if np.sign(dec.det) != np.sign(dec0.det) or np.sign(det) != np.sign(det0):
        return False
    if scan is not None:
        return scan.contains(x[model.DELTA1], x[model.DELTA2])
    return True


def random_states_in_dhat(p, n, rng, w_range=(0.1, 0.9), angle_range=(-0.6, 1.1)):
    """Sample states from the nonsingular region of the redefined map.

    Rejection sampling around balanced heat-flow states; angles stay within
    the sign-consistent neighbourhood of the origin.
    """
    out = []
    while len(out) < n:
        w = float(rng.uniform(*w_range))
        d1 = float(rng.uniform(*angle_range))
        d2 = float(rng.uniform(*angle_range))
        x = model.heat_balance_state(p, w=w, delta=(d1, d2))
        x[model.GAS] += rng.uniform(-0.15, 0.15, 6)
        x[model.OMEGA1] = rng.uniform(-0.4, 0.4)
        x[model.OMEGA2] = rng.uniform(-0.4, 0.4)
        x[model.XH1] += rng.uniform(-0.5, 0.5)
        x[model.XH3] = rng.uniform(-1.0, 1.0)
        if x[model.XH2] <= 0.0:
            continue
        if in_dhat(x, p):
            out.append(x)
    return np.array(out)
