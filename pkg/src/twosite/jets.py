"""Lie derivatives of scalar observables along the model's vector fields.

Higher-order Lie derivatives L_f^k h and mixed derivatives L_{g_i} L_f^k h
are computed by propagating a truncated Taylor expansion (a jet) of the flow
of the drift field f: the k-th Taylor coefficient of h(x(t)) equals
L_f^k h(x) / k!, and attaching first-order tangents to the initial state
turns coefficient gradients into directional derivatives, so
L_g L_f^k h = k! * (tangent part of coefficient k) for a tangent seeded
with g.

Jets differentiate the forward-flow regime of the model, in which the pipe
friction w|w| equals w^2; for reversed flow this is the smooth continuation
of that regime rather than the true friction law, so cross-checks against
the integrated flow must stay at w > 0.

Two implementations exist:

* a fast, model-specific kernel (``twosite._jetcore.propagate``) used for the
  three built-in observables ``"he"``, ``"hh"``, ``"hhat"``;
* a generic :class:`Jet` arithmetic over numpy arrays, accepting arbitrary
  vector fields and observables written as jet expressions.  It is the
  reference path for property tests and cross-checks the kernel.

An independent oracle (:func:`fd_oracle`) estimates the same derivatives by
high-order finite differences of h along accurately integrated flow samples;
it shares no code with the jet propagation.
"""

import math

import numpy as np

from . import _jetcore as jc
from . import model

OBSERVABLES = ("he", "hh", "hhat")
_OBS_ROW = {"he": 0, "hh": 1, "hhat": 2}

MAX_ORDER = 6


class SmoothnessError(ValueError):
    """Raised by jet arithmetic at a point where an operand is not smooth."""


class OrderError(ValueError):
    """Raised when the requested derivative order exceeds the engine limit."""


def _factorials(n):
    return np.array([math.factorial(k) for k in range(n + 1)], dtype=float)


# ---------------------------------------------------------------------------
# Fast path: model observables through the numba kernel.
# ---------------------------------------------------------------------------

def _check_order(k):
    if not 0 <= k <= MAX_ORDER:
        raise OrderError(f"derivative order {k} outside [0, {MAX_ORDER}]")


def propagate_model(x, p, order, tangents=None):
    """Raw kernel call; returns the (observable, state) jets."""
    _check_order(order)
    x = model.check_state(x)
    if tangents is None:
        tang = np.zeros((0, model.NX))
    else:
        tang = np.ascontiguousarray(np.atleast_2d(np.asarray(tangents, dtype=float)))
    return jc.propagate(x, tang, order, p.pv)


def input_directions(p):
    """The two constant input vector fields as tangent seeds."""
    return np.vstack([model.g1(p), model.g2(p)])


def lie_f(obs, x, p, k):
    """k-th Lie derivative of an observable along the drift field.

    ``obs`` is one of ``"he"``, ``"hh"``, ``"hhat"``.  k = 0 returns the
    observable itself.
    """
    _check_order(k)
    row = _OBS_ROW[obs]
    jets, _ = propagate_model(x, p, k)
    return math.factorial(k) * jets[row, k, 0]


def lie_g_lie_f(obs, x, p, k, which):
    """Mixed derivative L_{g_which} L_f^k of a built-in observable (which in {1, 2})."""
    _check_order(k)
    if which not in (1, 2):
        raise ValueError(f"input index must be 1 or 2, got {which!r}")
    row = _OBS_ROW[obs]
    jets, _ = propagate_model(x, p, k, tangents=input_directions(p))
    return math.factorial(k) * jets[row, k, which]


def lie_table(x, p, order, with_inputs=True):
    """All Lie derivatives of the three observables up to ``order``.

    Returns a dict mapping observable name to an array of shape (order+1,)
    for ``lf`` and, when ``with_inputs``, to (2, order+1) arrays of the mixed
    derivatives under ``lg``.
    """
    tang = input_directions(p) if with_inputs else None
    jets, _ = propagate_model(x, p, order, tangents=tang)
    fact = _factorials(order)
    out = {"lf": {}, "lg": {}}
    for name, row in _OBS_ROW.items():
        out["lf"][name] = fact * jets[row, :, 0]
        if with_inputs:
            out["lg"][name] = np.vstack([fact * jets[row, :, 1], fact * jets[row, :, 2]])
    return out


# ---------------------------------------------------------------------------
# Generic jets: reference implementation over arbitrary fields/observables.
# ---------------------------------------------------------------------------

class Jet:
    """Truncated Taylor polynomial with optional first-order tangent columns.

    ``coeffs`` has shape (K+1, M); column 0 holds values, columns 1..M-1
    directional derivatives.  Arithmetic is closed at fixed order K.
    """

    __slots__ = ("c",)

    def __init__(self, coeffs):
        self.c = np.array(coeffs, dtype=float)
        if self.c.ndim != 2 or self.c.shape[0] < 2:
            raise ValueError("jet coefficients must have shape (K+1, M), K >= 1")

    @classmethod
    def variable(cls, value, order, tangent=()):
        """Seed a jet for one state coordinate with optional tangent entries."""
        c = np.zeros((order + 1, 1 + len(tangent)))
        c[0, 0] = value
        for j, t in enumerate(tangent):
            c[0, 1 + j] = t
        return cls(c)

    @classmethod
    def const(cls, value, order, width=1):
        c = np.zeros((order + 1, width))
        c[0, 0] = value
        return cls(c)

    @property
    def order(self):
        return self.c.shape[0] - 1

    @property
    def width(self):
        return self.c.shape[1]

    @property
    def value(self):
        return self.c[0, 0]

    def coeff(self, k):
        """The k-th Taylor coefficient row (value plus tangents)."""
        return self.c[k]

    def _like(self, coeffs):
        return Jet(coeffs)

    def __add__(self, other):
        if isinstance(other, Jet):
            return self._like(self.c + other.c)
        c = self.c.copy()
        c[0, 0] += float(other)
        return self._like(c)

    __radd__ = __add__

    def __neg__(self):
        return self._like(-self.c)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Jet) else -float(other))

    def __rsub__(self, other):
        return (-self) + float(other)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return self._like(self.c * float(other))
        a, b = self.c, other.c
        K1 = a.shape[0]
        out = np.zeros_like(a)
        for k in range(K1):
            for i in range(k + 1):
                ai, bk = a[i], b[k - i]
                out[k, 0] += ai[0] * bk[0]
                out[k, 1:] += ai[0] * bk[1:] + ai[1:] * bk[0]
        return self._like(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            raise TypeError("division by a jet is not supported")
        return self._like(self.c / float(other))


def sincos(u):
    """Sine and cosine of a jet via the standard differential recurrence."""
    K = u.order
    s = np.zeros_like(u.c)
    c = np.zeros_like(u.c)
    s0, c0 = math.sin(u.value), math.cos(u.value)
    s[0, 0], c[0, 0] = s0, c0
    s[0, 1:] = c0 * u.c[0, 1:]
    c[0, 1:] = -s0 * u.c[0, 1:]
    for k in range(1, K + 1):
        for j in range(1, k + 1):
            uj, sb, cb = u.c[j], s[k - j], c[k - j]
            s[k, 0] += j * uj[0] * cb[0]
            s[k, 1:] += j * (uj[0] * cb[1:] + uj[1:] * cb[0])
            c[k, 0] -= j * uj[0] * sb[0]
            c[k, 1:] -= j * (uj[0] * sb[1:] + uj[1:] * sb[0])
        s[k] /= k
        c[k] /= k
    return Jet(s), Jet(c)


def jet_abs(u):
    """|u| for a jet whose value is bounded away from zero: sign(u0) * u."""
    if u.value == 0.0:
        raise SmoothnessError("|.| is not differentiable at 0")
    return u * (1.0 if u.value > 0.0 else -1.0)


def model_field_jets(s, p):
    """The model drift field written in generic jet arithmetic."""
    sin1, cos1 = sincos(s[model.DELTA1])
    sin2, cos2 = sincos(s[model.DELTA2])
    sin12, cos12 = sincos(s[model.DELTA1] - s[model.DELTA2])
    e12 = p.E_1 * p.E_2
    pe1 = e12 * p.G_12 * cos12 + e12 * p.B_12 * sin12 \
        + p.E_1 * p.G_10 * cos1 + p.E_1 * p.B_10 * sin1
    pe2 = e12 * p.G_12 * cos12 - e12 * p.B_12 * sin12 \
        + p.E_2 * p.G_20 * cos2 + p.E_2 * p.B_20 * sin2
    pm1 = (p.Ke1_pu / (1.0 - p.Wo_1)) * (s[model.WT1] - p.Wo_1)
    pm2 = (p.Ke2_pu / (1.0 - p.Wo_2)) * (s[model.WT2] - p.Wo_2)
    qa1 = (p.Kh_1 / (1.0 + p.beta_1)) * (s[model.WF1] + p.beta_1)
    qa2 = (p.Kh_2 / (1.0 + p.beta_2)) * (s[model.WF2] + p.beta_2)
    q12 = p.flow_coeff * s[model.XH2]
    ch1 = 1.0 / (p.Th_1 * p.Qr)
    ch2 = 1.0 / (p.Th_2 * p.Qr)
    ch3 = 1.0 / ((p.Th_1 + p.Th_2) * p.Qr)
    # Friction on the forward-flow branch (w|w| = w^2), smoothly continued
    # through flow reversal to match the analysis convention.
    w_abs_w = s[model.XH2] * s[model.XH2]
    return [
        (p.Wo_1 - s[model.VP1]) * (1.0 / p.Tv_1),
        (s[model.VP1] - s[model.WF1]) * (1.0 / p.Tf_1),
        (s[model.WF1] - s[model.WT1]) * (1.0 / p.Tcd_1),
        (p.Wo_2 - s[model.VP2]) * (1.0 / p.Tv_2),
        (s[model.VP2] - s[model.WF2]) * (1.0 / p.Tf_2),
        (s[model.WF2] - s[model.WT2]) * (1.0 / p.Tcd_2),
        s[model.OMEGA1] * (1.0 / p.Te_1),
        (pm1 - p.D_1 * s[model.OMEGA1] - pe1) * (1.0 / p.Te_1),
        s[model.OMEGA2] * (1.0 / p.Te_2),
        (pm2 - p.D_2 * s[model.OMEGA2] - pe2) * (1.0 / p.Te_2),
        ch1 * (qa1 - p.QL_1 - q12) - ch2 * (qa2 - p.QL_2 + q12),
        (1.0 / p.Th_3) * ((1.0 / p.rho_ratio) * s[model.XH1] - p.fric * w_abs_w),
        ch3 * (qa1 + qa2 - p.QL_1 - p.QL_2),
    ]


def model_observable(name, p):
    """Built-in observables as jet expressions (for the generic path)."""
    def he(s):
        sin1, cos1 = sincos(s[model.DELTA1])
        sin2, cos2 = sincos(s[model.DELTA2])
        return p.E_1 * p.B_10 * sin1 - p.E_1 * p.G_10 * cos1 \
            + p.E_2 * p.B_20 * sin2 - p.E_2 * p.G_20 * cos2

    def hh(s):
        return p.flow_coeff * s[model.XH2]

    def hhat(s):
        return s[model.XH3]

    return {"he": he, "hh": hh, "hhat": hhat}[name]


def propagate_generic(field, x0, order, tangents=None):
    """Propagate state jets of ``order`` along an arbitrary field.

    ``field`` maps a list of state jets to the list of their derivatives.
    Returns the list of state jets.
    """
    x0 = np.asarray(x0, dtype=float)
    tangents = [np.asarray(t, dtype=float) for t in (tangents or [])]
    jets = [Jet.variable(x0[i], order, [t[i] for t in tangents])
            for i in range(len(x0))]
    for k in range(order):
        fjets = field(jets)
        for i, fj in enumerate(fjets):
            if not isinstance(fj, Jet):
                fj = Jet.const(float(fj), order, width=1 + len(tangents))
            jets[i].c[k + 1] = fj.c[k] / (k + 1)
    return jets


def lie_f_generic(field, h, x0, k, tangents=None):
    """L_f^k h via generic jets; returns the coefficient row scaled by k!.

    Without tangents the result is a scalar; with tangents, an array whose
    entry 0 is L_f^k h and entry 1+j is the directional derivative along
    tangent j (that is, L_{t_j} L_f^k h).
    """
    jets = propagate_generic(field, x0, max(k, 1), tangents)
    hj = h(jets)
    row = math.factorial(k) * hj.c[k]
    if tangents:
        return row
    return float(row[0])


# ---------------------------------------------------------------------------
# Finite-difference flow oracle.
# ---------------------------------------------------------------------------

# 7-point central stencils carry these truncation orders for d^k/dt^k.
_RICHARDSON_ORDER = {1: 6, 2: 6, 3: 4, 4: 4}


def _stencil_weights(k, offsets, dt):
    """Weights reproducing d^k/dt^k from samples at offsets*dt (Vandermonde)."""
    offsets = np.asarray(offsets, dtype=float)
    n = len(offsets)
    A = np.vander(offsets, n, increasing=True).T
    b = np.zeros(n)
    b[k] = math.factorial(k)
    w = np.linalg.solve(A, b)
    return w / dt ** k


def flow_samples(x, p, ts, u=(0.0, 0.0), rtol=1e-13, atol=1e-15, field=None):
    """States of the flow at the requested times, integrated tightly.

    Each sample is produced as an exact integration endpoint (the solver is
    restarted at every requested time) rather than through the dense-output
    interpolant, whose error would be amplified by high-order differencing.
    ``field`` overrides the model drift with an arbitrary rhs(t, y).
    """
    from . import sim

    ts = np.asarray(ts, dtype=float)
    if field is None:
        x = model.check_state(x)
    else:
        x = np.asarray(x, dtype=float)
    out = np.empty((len(ts), len(x)))
    out[ts == 0.0] = x
    u1, u2 = float(u[0]), float(u[1])
    if field is None:
        pv = p.pv

        def rhs(t, y):
            return jc.rhs(y, u1, u2, pv)
    else:
        rhs = field

    for sign in (-1.0, 1.0):
        idx = np.where(ts < 0 if sign < 0 else ts > 0)[0]
        if idx.size == 0:
            continue
        order = idx[np.argsort(sign * ts[idx])]   # march away from t = 0
        y, t0 = x, 0.0
        for i in order:
            seg = sim.IntegratorConfig(rtol=rtol, atol=atol,
                                       horizon=ts[i] - t0, sample_dt=None)
            traj = sim.integrate(rhs, y, seg, t0=t0, t_eval=np.array([ts[i]]))
            y, t0 = traj.y[-1], ts[i]
            out[i] = y
    return out


def _fd_estimate(h_vals, k, dt):
    """Richardson-extrapolated 7-point estimate from 13 samples at spacing dt."""
    inner = np.arange(-3, 4)
    w1 = _stencil_weights(k, inner, dt)
    w2 = _stencil_weights(k, inner, 2 * dt)
    est1 = float(np.dot(w1, h_vals[inner + 6]))
    est2 = float(np.dot(w2, h_vals[2 * inner + 6]))
    m = _RICHARDSON_ORDER[k]
    return (2 ** m * est1 - est2) / (2 ** m - 1)


def fd_oracle(obs, x, p, k, dt=None, field=None):
    """Estimate d^k/dt^k h(x(t)) at t = 0 by central differences of the flow.

    Samples h along short, tightly integrated trajectories on a 7-point
    stencil at spacings dt and 2 dt, then Richardson-extrapolates once.
    The default step grows with the order (1e-3 up to k = 2, 4e-3 above)
    because roundoff amplification scales as dt^-k.  Orders above 4 are
    rejected; the estimator is meant for verification, not production use.
    ``field`` substitutes an arbitrary rhs(t, y) for the model drift.
    """
    if k == 0:
        return _eval_observable(obs, x, p)
    if k > 4:
        raise OrderError("finite-difference oracle supports orders <= 4")
    if dt is None:
        dt = 1e-3 if k <= 2 else 4e-3
    offsets = np.arange(-6, 7)
    states = flow_samples(x, p, offsets * dt, field=field)
    h_vals = np.array([_eval_observable(obs, s, p) for s in states])
    return _fd_estimate(h_vals, k, dt)


def fd_oracle_table(x, p, kmax=4):
    """All three built-in observables' flow derivatives for k = 0..kmax.

    Shares the integrated flow samples across observables and orders, which
    makes it much cheaper than repeated :func:`fd_oracle` calls.  Returns
    {name: array of length kmax + 1}.
    """
    if kmax > 4:
        raise OrderError("finite-difference oracle supports orders <= 4")
    offsets = np.arange(-6, 7)
    sampled = {}
    out = {name: np.empty(kmax + 1) for name in OBSERVABLES}
    for name in OBSERVABLES:
        out[name][0] = _eval_observable(name, x, p)
    for k in range(1, kmax + 1):
        dt = 1e-3 if k <= 2 else 4e-3
        if dt not in sampled:
            states = flow_samples(x, p, offsets * dt)
            sampled[dt] = {name: np.array([_eval_observable(name, s, p)
                                           for s in states])
                           for name in OBSERVABLES}
        for name in OBSERVABLES:
            out[name][k] = _fd_estimate(sampled[dt][name], k, dt)
    return out


def _eval_observable(obs, x, p):
    if callable(obs):
        return float(obs(x, p))
    if obs == "he":
        return model.output_y1(x, p)
    if obs == "hh":
        return model.output_y2(x, p)
    if obs == "hhat":
        return model.redefined_output(x, p)
    raise ValueError(f"unknown observable {obs!r}")
