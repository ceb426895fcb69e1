"""Numba kernels: vector field, analytic Jacobian, and Taylor-jet propagation.

All kernels operate on a packed parameter vector ``pv`` (layout given by the
``PV_*`` index constants below) so that they stay independent of Python
objects.  ``SystemParams.pv`` produces the packed vector.

Jet storage convention
----------------------
A jet of order K for a scalar quantity v along the flow of the drift field is
an array ``c`` of shape (K+1, M).  ``c[k, 0]`` is the k-th Taylor coefficient
of v(x(t)) at t = 0, so the k-th Lie derivative is ``k! * c[k, 0]``.
Columns ``c[k, 1 + j]`` carry first-order directional derivatives of the same
coefficient with respect to the initial state, in tangent direction j.
Products combine the Cauchy rule over the order axis with dual-number
arithmetic over the tangent axis.

The pipe friction term w|w| is handled differently by the two layers.  The
plain ``rhs`` used for time integration keeps the exact w|w| form for all w.
Jet propagation differentiates the forward-flow regime, where w|w| = w^2;
at states with reversed flow this is the smooth continuation of that regime
(the convention under which the internal-dynamics analysis is carried out),
not the true friction law.
"""

import numpy as np
from numba import njit

# Packed parameter vector layout.
PV_TV1, PV_TF1, PV_TCD1, PV_TV2, PV_TF2, PV_TCD2 = 0, 1, 2, 3, 4, 5
PV_WO1, PV_WO2 = 6, 7
PV_KE1, PV_KE2 = 8, 9          # mechanical ratings, per-unit on the MVA base
PV_KH1, PV_KH2 = 10, 11        # heat ratings, MJ/s
PV_BETA1, PV_BETA2 = 12, 13
PV_TE1, PV_TE2 = 14, 15
PV_D1, PV_D2 = 16, 17
PV_E1, PV_E2 = 18, 19
PV_B10, PV_B20, PV_B12 = 20, 21, 22
PV_G10, PV_G20, PV_G12 = 23, 24, 25
PV_QL1, PV_QL2 = 26, 27
PV_CH1, PV_CH2, PV_CH3 = 28, 29, 30   # 1/(Th1 Qr), 1/(Th2 Qr), 1/((Th1+Th2) Qr)
PV_ITH3 = 31                   # 1/Th3
PV_IRHO = 32                   # rho_r / rho_s
PV_FRIC = 33                   # lambda L / (2 d)
PV_FLOW = 34                   # pipe heat flow [MJ/s] per unit of scaled velocity
PV_GV1, PV_GV2 = 35, 36        # (1 - Wo_i) / Tv_i, the nonzero input-gain entries
NPV = 37

# Status codes returned by jet kernels.
STATUS_OK = 0
STATUS_SINGULAR = 1            # decoupling matrix numerically singular

_FACT = np.array([1.0, 1.0, 2.0, 6.0, 24.0, 120.0, 720.0, 5040.0])


@njit(cache=True)
def rhs(x, u1, u2, pv):
    """Full 13-state vector field f(x) + g1 u1 + g2 u2."""
    f = np.empty(13)
    # Gas turbines: valve, fuel system, compressor discharge.
    f[0] = (pv[PV_WO1] - x[0]) / pv[PV_TV1] + pv[PV_GV1] * u1
    f[1] = (x[0] - x[1]) / pv[PV_TF1]
    f[2] = (x[1] - x[2]) / pv[PV_TCD1]
    f[3] = (pv[PV_WO2] - x[3]) / pv[PV_TV2] + pv[PV_GV2] * u2
    f[4] = (x[3] - x[4]) / pv[PV_TF2]
    f[5] = (x[4] - x[5]) / pv[PV_TCD2]
    # Electric subsystem: swing equations against the infinite bus.
    s1 = np.sin(x[6]); c1 = np.cos(x[6])
    s2 = np.sin(x[8]); c2 = np.cos(x[8])
    s12 = np.sin(x[6] - x[8]); c12 = np.cos(x[6] - x[8])
    e12 = pv[PV_E1] * pv[PV_E2]
    pe1 = e12 * (pv[PV_G12] * c12 + pv[PV_B12] * s12) \
        + pv[PV_E1] * (pv[PV_G10] * c1 + pv[PV_B10] * s1)
    pe2 = e12 * (pv[PV_G12] * c12 - pv[PV_B12] * s12) \
        + pv[PV_E2] * (pv[PV_G20] * c2 + pv[PV_B20] * s2)
    pm1 = pv[PV_KE1] * (x[2] - pv[PV_WO1]) / (1.0 - pv[PV_WO1])
    pm2 = pv[PV_KE2] * (x[5] - pv[PV_WO2]) / (1.0 - pv[PV_WO2])
    f[6] = x[7] / pv[PV_TE1]
    f[7] = (pm1 - pv[PV_D1] * x[7] - pe1) / pv[PV_TE1]
    f[8] = x[9] / pv[PV_TE2]
    f[9] = (pm2 - pv[PV_D2] * x[9] - pe2) / pv[PV_TE2]
    # Heat subsystem in (pressure difference, velocity, averaged pressure).
    qa1 = pv[PV_KH1] * (x[1] + pv[PV_BETA1]) / (1.0 + pv[PV_BETA1])
    qa2 = pv[PV_KH2] * (x[4] + pv[PV_BETA2]) / (1.0 + pv[PV_BETA2])
    q12 = pv[PV_FLOW] * x[11]
    f[10] = pv[PV_CH1] * (qa1 - pv[PV_QL1] - q12) \
        - pv[PV_CH2] * (qa2 - pv[PV_QL2] + q12)
    f[11] = pv[PV_ITH3] * (pv[PV_IRHO] * x[10] - pv[PV_FRIC] * x[11] * abs(x[11]))
    f[12] = pv[PV_CH3] * (qa1 + qa2 - pv[PV_QL1] - pv[PV_QL2])
    return f


@njit(cache=True)
def rhs_jacobian(x, pv):
    """Analytic Jacobian of the drift field on the forward-flow branch.

    The friction term is differentiated as w^2 (slope 2w), the smooth
    continuation through flow reversal used by the whole analysis layer and
    by the jet kernels; it matches the true w|w| law wherever w > 0.
    """
    J = np.zeros((13, 13))
    J[0, 0] = -1.0 / pv[PV_TV1]
    J[1, 0] = 1.0 / pv[PV_TF1]; J[1, 1] = -1.0 / pv[PV_TF1]
    J[2, 1] = 1.0 / pv[PV_TCD1]; J[2, 2] = -1.0 / pv[PV_TCD1]
    J[3, 3] = -1.0 / pv[PV_TV2]
    J[4, 3] = 1.0 / pv[PV_TF2]; J[4, 4] = -1.0 / pv[PV_TF2]
    J[5, 4] = 1.0 / pv[PV_TCD2]; J[5, 5] = -1.0 / pv[PV_TCD2]
    s1 = np.sin(x[6]); c1 = np.cos(x[6])
    s2 = np.sin(x[8]); c2 = np.cos(x[8])
    s12 = np.sin(x[6] - x[8]); c12 = np.cos(x[6] - x[8])
    e12 = pv[PV_E1] * pv[PV_E2]
    dpe1_d1 = e12 * (-pv[PV_G12] * s12 + pv[PV_B12] * c12) \
        + pv[PV_E1] * (-pv[PV_G10] * s1 + pv[PV_B10] * c1)
    dpe1_d2 = e12 * (pv[PV_G12] * s12 - pv[PV_B12] * c12)
    dpe2_d1 = e12 * (-pv[PV_G12] * s12 - pv[PV_B12] * c12)
    dpe2_d2 = e12 * (pv[PV_G12] * s12 + pv[PV_B12] * c12) \
        + pv[PV_E2] * (-pv[PV_G20] * s2 + pv[PV_B20] * c2)
    J[6, 7] = 1.0 / pv[PV_TE1]
    J[7, 2] = pv[PV_KE1] / (1.0 - pv[PV_WO1]) / pv[PV_TE1]
    J[7, 6] = -dpe1_d1 / pv[PV_TE1]
    J[7, 7] = -pv[PV_D1] / pv[PV_TE1]
    J[7, 8] = -dpe1_d2 / pv[PV_TE1]
    J[8, 9] = 1.0 / pv[PV_TE2]
    J[9, 5] = pv[PV_KE2] / (1.0 - pv[PV_WO2]) / pv[PV_TE2]
    J[9, 6] = -dpe2_d1 / pv[PV_TE2]
    J[9, 8] = -dpe2_d2 / pv[PV_TE2]
    J[9, 9] = -pv[PV_D2] / pv[PV_TE2]
    dqa1 = pv[PV_KH1] / (1.0 + pv[PV_BETA1])
    dqa2 = pv[PV_KH2] / (1.0 + pv[PV_BETA2])
    J[10, 1] = pv[PV_CH1] * dqa1
    J[10, 4] = -pv[PV_CH2] * dqa2
    J[10, 11] = -(pv[PV_CH1] + pv[PV_CH2]) * pv[PV_FLOW]
    J[11, 10] = pv[PV_ITH3] * pv[PV_IRHO]
    J[11, 11] = -pv[PV_ITH3] * pv[PV_FRIC] * 2.0 * x[11]
    J[12, 1] = pv[PV_CH3] * dqa1
    J[12, 4] = pv[PV_CH3] * dqa2
    return J


@njit(cache=True, inline="always")
def _acc_ring_conv(a, b, k, out):
    """out += k-th Cauchy coefficient of a*b with dual tangent columns."""
    M = a.shape[1]
    for i in range(k + 1):
        a0 = a[i, 0]
        b0 = b[k - i, 0]
        out[0] += a0 * b0
        for m in range(1, M):
            out[m] += a0 * b[k - i, m] + a[i, m] * b0


@njit(cache=True)
def _sincos_step(u, S, C, k):
    """Advance sine/cosine jets of angle jet u to coefficient k."""
    M = u.shape[1]
    if k == 0:
        s0 = np.sin(u[0, 0])
        c0 = np.cos(u[0, 0])
        S[0, 0] = s0
        C[0, 0] = c0
        for m in range(1, M):
            S[0, m] = c0 * u[0, m]
            C[0, m] = -s0 * u[0, m]
        return
    for m in range(M):
        S[k, m] = 0.0
        C[k, m] = 0.0
    for j in range(1, k + 1):
        w = float(j)
        uj0 = u[j, 0]
        cb0 = C[k - j, 0]
        sb0 = S[k - j, 0]
        S[k, 0] += w * uj0 * cb0
        C[k, 0] -= w * uj0 * sb0
        for m in range(1, M):
            S[k, m] += w * (uj0 * C[k - j, m] + u[j, m] * cb0)
            C[k, m] -= w * (uj0 * S[k - j, m] + u[j, m] * sb0)
    inv = 1.0 / k
    for m in range(M):
        S[k, m] *= inv
        C[k, m] *= inv


@njit(cache=True)
def propagate(x, tang, order, pv):
    """Propagate a state jet of ``order`` along the drift field.

    Parameters: initial state x (13,), tangent seed directions tang (T, 13),
    jet order, packed parameters.  Returns (obs, X) where obs[0], obs[1],
    obs[2] are the jets of the electric power output, the pipe heat flow
    output, and the averaged boiler pressure, each of shape (order+1, 1+T),
    and X is the full state jet (13, order+1, 1+T).
    """
    K = order
    T = tang.shape[0]
    M = 1 + T
    X = np.zeros((13, K + 1, M))
    obs = np.zeros((3, K + 1, M))
    for i in range(13):
        X[i, 0, 0] = x[i]
        for j in range(T):
            X[i, 0, 1 + j] = tang[j, i]

    D12 = np.zeros((K + 1, M))
    S1 = np.zeros((K + 1, M)); C1 = np.zeros((K + 1, M))
    S2 = np.zeros((K + 1, M)); C2 = np.zeros((K + 1, M))
    S12 = np.zeros((K + 1, M)); C12 = np.zeros((K + 1, M))
    WW = np.zeros((K + 1, M))
    fk = np.zeros((13, M))
    ww_k = np.zeros(M)

    e1 = pv[PV_E1]; e2 = pv[PV_E2]; e12 = e1 * e2
    g12 = pv[PV_G12]; b12 = pv[PV_B12]
    g10 = pv[PV_G10]; b10 = pv[PV_B10]
    g20 = pv[PV_G20]; b20 = pv[PV_B20]
    dqa1 = pv[PV_KH1] / (1.0 + pv[PV_BETA1])
    qa1_0 = pv[PV_KH1] * pv[PV_BETA1] / (1.0 + pv[PV_BETA1])
    dqa2 = pv[PV_KH2] / (1.0 + pv[PV_BETA2])
    qa2_0 = pv[PV_KH2] * pv[PV_BETA2] / (1.0 + pv[PV_BETA2])

    for k in range(K + 1):
        for m in range(M):
            D12[k, m] = X[6, k, m] - X[8, k, m]
        _sincos_step(X[6], S1, C1, k)
        _sincos_step(X[8], S2, C2, k)
        _sincos_step(D12, S12, C12, k)
        for m in range(M):
            ww_k[m] = 0.0
        _acc_ring_conv(X[11], X[11], k, ww_k)
        for m in range(M):
            WW[k, m] = ww_k[m]    # jet of w^2: friction on the forward-flow branch

        if k == K:
            break

        d0 = 1.0 if k == 0 else 0.0
        for m in range(M):
            # Gas turbines.
            fk[0, m] = (pv[PV_WO1] * (d0 if m == 0 else 0.0) - X[0, k, m]) / pv[PV_TV1]
            fk[1, m] = (X[0, k, m] - X[1, k, m]) / pv[PV_TF1]
            fk[2, m] = (X[1, k, m] - X[2, k, m]) / pv[PV_TCD1]
            fk[3, m] = (pv[PV_WO2] * (d0 if m == 0 else 0.0) - X[3, k, m]) / pv[PV_TV2]
            fk[4, m] = (X[3, k, m] - X[4, k, m]) / pv[PV_TF2]
            fk[5, m] = (X[4, k, m] - X[5, k, m]) / pv[PV_TCD2]
            # Electric subsystem.
            pm1 = pv[PV_KE1] * X[2, k, m] / (1.0 - pv[PV_WO1])
            pm2 = pv[PV_KE2] * X[5, k, m] / (1.0 - pv[PV_WO2])
            if m == 0 and k == 0:
                pm1 -= pv[PV_KE1] * pv[PV_WO1] / (1.0 - pv[PV_WO1])
                pm2 -= pv[PV_KE2] * pv[PV_WO2] / (1.0 - pv[PV_WO2])
            pe1 = e12 * (g12 * C12[k, m] + b12 * S12[k, m]) \
                + e1 * (g10 * C1[k, m] + b10 * S1[k, m])
            pe2 = e12 * (g12 * C12[k, m] - b12 * S12[k, m]) \
                + e2 * (g20 * C2[k, m] + b20 * S2[k, m])
            fk[6, m] = X[7, k, m] / pv[PV_TE1]
            fk[7, m] = (pm1 - pv[PV_D1] * X[7, k, m] - pe1) / pv[PV_TE1]
            fk[8, m] = X[9, k, m] / pv[PV_TE2]
            fk[9, m] = (pm2 - pv[PV_D2] * X[9, k, m] - pe2) / pv[PV_TE2]
            # Heat subsystem; WW is the jet of w^2 (valid since w > 0).
            qa1 = dqa1 * X[1, k, m]
            qa2 = dqa2 * X[4, k, m]
            if m == 0 and k == 0:
                qa1 += qa1_0
                qa2 += qa2_0
            q12 = pv[PV_FLOW] * X[11, k, m]
            ql1 = pv[PV_QL1] * (d0 if m == 0 else 0.0)
            ql2 = pv[PV_QL2] * (d0 if m == 0 else 0.0)
            fk[10, m] = pv[PV_CH1] * (qa1 - ql1 - q12) - pv[PV_CH2] * (qa2 - ql2 + q12)
            fk[11, m] = pv[PV_ITH3] * (pv[PV_IRHO] * X[10, k, m] - pv[PV_FRIC] * WW[k, m])
            fk[12, m] = pv[PV_CH3] * (qa1 + qa2 - ql1 - ql2)

        inv = 1.0 / (k + 1)
        for i in range(13):
            for m in range(M):
                X[i, k + 1, m] = fk[i, m] * inv

    for k in range(K + 1):
        for m in range(M):
            obs[0, k, m] = e1 * (b10 * S1[k, m] - g10 * C1[k, m]) \
                + e2 * (b20 * S2[k, m] - g20 * C2[k, m])
            obs[1, k, m] = pv[PV_FLOW] * X[11, k, m]
            obs[2, k, m] = X[12, k, m]
    return obs, X


@njit(cache=True)
def control_terms(x, pv):
    """Lie-derivative quantities used by the tracking control law.

    Returns (xi_e (5,), lf5_he, xi_h_hat (3,), lf3_hhat, Ahat (2,2), y2).
    """
    tang = np.zeros((2, 13))
    tang[0, 0] = pv[PV_GV1]
    tang[1, 3] = pv[PV_GV2]
    obs, X = propagate(x, tang, 5, pv)
    xi_e = np.empty(5)
    xi_h_hat = np.empty(3)
    A = np.empty((2, 2))
    for k in range(5):
        xi_e[k] = _FACT[k] * obs[0, k, 0]
    lf5_he = _FACT[5] * obs[0, 5, 0]
    for k in range(3):
        xi_h_hat[k] = _FACT[k] * obs[2, k, 0]
    lf3_hhat = _FACT[3] * obs[2, 3, 0]
    A[0, 0] = _FACT[4] * obs[0, 4, 1]
    A[0, 1] = _FACT[4] * obs[0, 4, 2]
    A[1, 0] = _FACT[2] * obs[2, 2, 1]
    A[1, 1] = _FACT[2] * obs[2, 2, 2]
    y2 = obs[1, 0, 0]
    return xi_e, lf5_he, xi_h_hat, lf3_hhat, A, y2


@njit(cache=True, inline="always")
def _solve2(A, b1, b2):
    """Solve a 2x2 system; returns (ok, u1, u2) with a scaled singularity guard."""
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    scale = np.sqrt(A[0, 0] ** 2 + A[0, 1] ** 2) * np.sqrt(A[1, 0] ** 2 + A[1, 1] ** 2)
    if abs(det) <= 1e-8 * scale:
        return False, 0.0, 0.0
    u1 = (A[1, 1] * b1 - A[0, 1] * b2) / det
    u2 = (-A[1, 0] * b1 + A[0, 0] * b2) / det
    return True, u1, u2


@njit(cache=True)
def closed_loop_rhs_core(xa, pv, alpha_e, alpha_h, kgain, y1ref, y2ref):
    """Closed-loop derivative of (x, sigma1, sigma2) under the tracking law.

    Returns (status, dxa (15,), u1, u2).
    """
    x = xa[:13]
    dxa = np.zeros(15)
    xi_e, lf5_he, xi_h_hat, lf3_hhat, A, y2 = control_terms(x, pv)
    sigma1 = xa[13]
    sigma2 = xa[14]
    ve = -lf5_he
    ve -= alpha_e[0] * (xi_e[0] - y1ref)
    for j in range(1, 5):
        ve -= alpha_e[j] * xi_e[j]
    vh = -lf3_hhat
    vh -= alpha_h[0] * (xi_h_hat[0] - sigma1)
    vh -= alpha_h[1] * (xi_h_hat[1] - kgain * sigma2)
    vh -= alpha_h[2] * (xi_h_hat[2] - kgain * (y2 - y2ref))
    ok, u1, u2 = _solve2(A, ve, vh)
    if not ok:
        return STATUS_SINGULAR, dxa, 0.0, 0.0
    dxa[:13] = rhs(x, u1, u2, pv)
    dxa[13] = kgain * sigma2
    dxa[14] = y2 - y2ref
    return STATUS_OK, dxa, u1, u2


@njit(cache=True)
def zeroing_rhs_core(x, pv):
    """State derivative under the input that pins both original outputs.

    The input solves A(x) u = -(L_f^5 h_e, L_f^4 h_h) so that the fifth
    derivative of the electric output and the fourth derivative of the heat
    output stay at zero.  Returns (status, dx (13,), u1, u2).
    """
    tang = np.zeros((2, 13))
    tang[0, 0] = pv[PV_GV1]
    tang[1, 3] = pv[PV_GV2]
    dx = np.zeros(13)
    obs, X = propagate(x, tang, 5, pv)
    A = np.empty((2, 2))
    A[0, 0] = _FACT[4] * obs[0, 4, 1]
    A[0, 1] = _FACT[4] * obs[0, 4, 2]
    A[1, 0] = _FACT[3] * obs[1, 3, 1]
    A[1, 1] = _FACT[3] * obs[1, 3, 2]
    b1 = -_FACT[5] * obs[0, 5, 0]
    b2 = -_FACT[4] * obs[1, 4, 0]
    ok, u1, u2 = _solve2(A, b1, b2)
    if not ok:
        return STATUS_SINGULAR, dx, 0.0, 0.0
    dx[:] = rhs(x, u1, u2, pv)
    return STATUS_OK, dx, u1, u2
