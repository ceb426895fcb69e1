import numpy as np
import pytest

from twosite import jets, model

from conftest import random_state


def test_zeroth_order_is_the_observable(params, rng):
    x = random_state(params, rng)
    assert jets.lie_f("he", x, params, 0) == pytest.approx(model.output_y1(x, params))
    assert jets.lie_f("hh", x, params, 0) == pytest.approx(model.output_y2(x, params))
    assert jets.lie_f("hhat", x, params, 0) == x[model.XH3]


def test_first_order_is_the_drift_component(params, rng):
    """The first derivative of the averaged pressure is its drift entry."""
    for _ in range(5):
        x = random_state(params, rng)
        lf = jets.lie_f("hhat", x, params, 1)
        assert lf == pytest.approx(model.f_full(x, params)[model.XH3], rel=1e-12)


def test_linear_system_analytic(params):
    """Scalar flow x' = a x: derivatives are a^k x, per jets and per oracle."""
    a, x0 = -1.7, 0.8
    field = lambda s: [a * s[0]]
    h = lambda s: s[0]
    for k in range(6):
        val = jets.lie_f_generic(field, h, [x0], k)
        assert val == pytest.approx(a ** k * x0, rel=1e-12)
    # The flow is entire, so a wide stencil is optimal (roundoff shrinks
    # as dt^-k while truncation stays negligible).
    for k in range(1, 5):
        est = jets.fd_oracle(lambda x, p: x[0], np.array([x0]), params, k,
                             dt=0.02, field=lambda t, y: a * y)
        assert est == pytest.approx(a ** k * x0, rel=1e-8)


def test_relative_degree_annihilation(params, rng):
    """Input derivatives vanish below the relative degree of each output."""
    for _ in range(10):
        x = random_state(params, rng)
        tab = jets.lie_table(x, params, 4)
        assert np.abs(tab["lg"]["he"][:, :4]).max() < 1e-9
        assert np.abs(tab["lg"]["hh"][:, :3]).max() < 1e-9
        assert np.abs(tab["lg"]["hhat"][:, :2]).max() < 1e-9
        assert np.abs(tab["lg"]["hhat"][:, 2]).min() > 1e-4
        assert np.abs(tab["lg"]["he"][:, 4]).min() > 1e-4


def test_oracle_agreement(params, rng):
    """Jet derivatives match the integrated-flow oracle."""
    worst = 0.0
    for _ in range(8):
        x = random_state(params, rng)
        table = jets.fd_oracle_table(x, params, kmax=4)
        for obs in jets.OBSERVABLES:
            for k in range(5):
                a = jets.lie_f(obs, x, params, k)
                rel = abs(a - table[obs][k]) / max(1.0, abs(a))
                worst = max(worst, rel)
    assert worst < 1e-4


def test_leibniz_rule(params, rng):
    """L_f(h1 h2) = h1 L_f h2 + h2 L_f h1 in generic jet arithmetic."""
    field = lambda s: jets.model_field_jets(s, params)

    def h1(s):
        sin1, _ = jets.sincos(s[model.DELTA1])
        return sin1 * s[model.XH2]

    def h2(s):
        return s[model.WT1] + s[model.XH2] * s[model.XH2]

    for _ in range(5):
        x = random_state(params, rng)
        sj = jets.propagate_generic(field, x, 1)
        v1, v2 = h1(sj).value, h2(sj).value
        lf_prod = jets.lie_f_generic(field, lambda s: h1(s) * h2(s), x, 1)
        lf1 = jets.lie_f_generic(field, h1, x, 1)
        lf2 = jets.lie_f_generic(field, h2, x, 1)
        expect = v1 * lf2 + v2 * lf1
        assert lf_prod == pytest.approx(expect, rel=1e-10)


def test_direction_linearity(params, rng):
    """Mixed derivatives are linear in the tangent direction."""
    field = lambda s: jets.model_field_jets(s, params)
    h = jets.model_observable("he", params)
    x = random_state(params, rng)
    g1, g2 = model.g1(params), model.g2(params)
    a, b = 0.7, -1.3
    row = jets.lie_f_generic(field, h, x, 4, tangents=[g1, g2, a * g1 + b * g2])
    assert row[3] == pytest.approx(a * row[1] + b * row[2], rel=1e-10)


def test_generic_matches_kernel(params, rng):
    field = lambda s: jets.model_field_jets(s, params)
    tg = jets.input_directions(params)
    for _ in range(5):
        x = random_state(params, rng)
        for obs in jets.OBSERVABLES:
            h = jets.model_observable(obs, params)
            for k in (0, 2, 4, 5):
                row = jets.lie_f_generic(field, h, x, k, tangents=list(tg))
                fast = jets.lie_f(obs, x, params, k)
                assert row[0] == pytest.approx(fast, rel=1e-10, abs=1e-12)
                for which in (1, 2):
                    g = jets.lie_g_lie_f(obs, x, params, k, which)
                    assert row[which] == pytest.approx(g, rel=1e-10, abs=1e-12)


def test_jet_arithmetic():
    rng = np.random.default_rng(5)
    a = jets.Jet(rng.normal(size=(6, 3)))
    b = jets.Jet(rng.normal(size=(6, 3)))
    c = jets.Jet(rng.normal(size=(6, 3)))
    left = (a * b) * c
    right = a * (b * c)
    assert np.allclose(left.c, right.c, atol=1e-12)
    assert np.allclose((a * b).c, (b * a).c)
    # Trigonometric identity holds coefficient-wise.
    s, co = jets.sincos(a)
    one = s * s + co * co
    assert one.value == pytest.approx(1.0)
    assert np.abs(one.c[1:]).max() < 1e-12
    assert np.abs(one.c[0, 1:]).max() < 1e-12


def test_jet_abs_sign_branch():
    u = jets.Jet.variable(-2.0, 3, tangent=[1.0])
    au = jets.jet_abs(u)
    assert au.value == 2.0
    assert au.c[0, 1] == -1.0
    with pytest.raises(jets.SmoothnessError):
        jets.jet_abs(jets.Jet.variable(0.0, 3))


def test_order_limits(params, rng):
    x = random_state(params, rng)
    with pytest.raises(jets.OrderError):
        jets.lie_f("he", x, params, 7)
    with pytest.raises(jets.OrderError):
        jets.fd_oracle("he", x, params, 5)
    with pytest.raises(ValueError):
        jets.lie_g_lie_f("he", x, params, 2, which=3)
