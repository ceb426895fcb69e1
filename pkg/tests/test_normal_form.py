import numpy as np
import pytest

from twosite import jets, model, normal_form

from conftest import random_state


@pytest.fixture(scope="module")
def dhat_states(params):
    rng = np.random.default_rng(99)
    return normal_form.random_states_in_dhat(params, 30, rng)


def test_copied_coordinates(params, rng):
    x = random_state(params, rng)
    nc = normal_form.phi(x, params)
    assert np.array_equal(nc.eta, x[list(model.ETA_IDX)])
    assert nc.xi_e[0] == pytest.approx(model.output_y1(x, params))
    assert nc.xi_h[0] == pytest.approx(model.output_y2(x, params))
    nch = normal_form.phi_hat(x, params)
    assert np.array_equal(nch.eta_hat, x[list(model.ETA_HAT_IDX)])
    assert nch.xi_h_hat[0] == x[model.XH3]
    # Round-trip through the flat layout.
    assert np.array_equal(normal_form.NormalCoords.from_flat(nc.flat).flat, nc.flat)


def test_jacobians_match_finite_differences(params, dhat_states):
    x = dhat_states[0]
    h = 1e-7
    for jac, fwd in ((normal_form.dphi, lambda y: normal_form.phi(y, params).flat),
                     (normal_form.dphi_hat,
                      lambda y: normal_form.phi_hat(y, params).flat)):
        J = jac(x, params)
        for j in range(model.NX):
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            col = (fwd(xp) - fwd(xm)) / (2 * h)
            scale = max(1.0, np.abs(J[:, j]).max())
            assert np.abs(J[:, j] - col).max() / scale < 1e-5


def test_round_trip_inversion(params, dhat_states, rng):
    for x in dhat_states[:20]:
        z = normal_form.phi(x, params)
        guess = x + rng.normal(scale=1e-2, size=model.NX)
        back = normal_form.phi_inverse(z, guess, params)
        assert np.abs(back - x).max() < 1e-9
        # Exact guess is a fixed point of the iteration.
        again = normal_form.phi_inverse(z, x, params)
        assert np.abs(again - x).max() < 1e-9
        zh = normal_form.phi_hat(x, params)
        backh = normal_form.phi_hat_inverse(zh, guess, params)
        assert np.abs(backh - x).max() < 1e-9


def test_inversion_reports_failure(params):
    z = normal_form.phi(model.heat_balance_state(params, w=0.4), params)
    guess = model.heat_balance_state(params, w=0.4, delta=(1.5, -1.5))
    with pytest.raises((normal_form.NonConvergenceError,
                        normal_form.SingularityError)):
        normal_form.phi_inverse(z, guess, params, max_iter=3)


def test_decoupling_entries_are_mixed_lie_derivatives(params, dhat_states):
    x = dhat_states[0]
    dec = normal_form.decoupling(x, params, "original")
    for col, which in ((0, 1), (1, 2)):
        assert dec.matrix[0, col] == pytest.approx(
            jets.lie_g_lie_f("he", x, params, 4, which), rel=1e-12)
        assert dec.matrix[1, col] == pytest.approx(
            jets.lie_g_lie_f("hh", x, params, 3, which), rel=1e-12)
    dech = normal_form.decoupling(x, params, "redefined")
    for col, which in ((0, 1), (1, 2)):
        assert dech.matrix[1, col] == pytest.approx(
            jets.lie_g_lie_f("hhat", x, params, 2, which), rel=1e-12)


def test_determinants_depend_on_angles_only(params, rng):
    x = random_state(params, rng)
    base = {v: normal_form.decoupling(x, params, v).det
            for v in ("original", "redefined")}
    base_j = {v: normal_form.det_with_scale(
        (normal_form.dphi if v == "original" else normal_form.dphi_hat)(x, params))[0]
        for v in ("original", "redefined")}
    for j in range(model.NX):
        if j in (model.DELTA1, model.DELTA2):
            continue
        xp = x.copy()
        xp[j] += 0.05 * max(1.0, abs(x[j]))
        for v in ("original", "redefined"):
            det = normal_form.decoupling(xp, params, v).det
            assert det == pytest.approx(base[v], rel=1e-9)
            jac = normal_form.dphi if v == "original" else normal_form.dphi_hat
            det_j = normal_form.det_with_scale(jac(xp, params))[0]
            assert det_j == pytest.approx(base_j[v], rel=1e-9)


def test_decoupling_nonsingular_at_equilibrium(params, eq10):
    dec = normal_form.decoupling(eq10.x, params, "redefined")
    assert not dec.singular
    assert abs(dec.det) > 1e3


def test_decoupling_affine_form(params, rng):
    """The determinant is affine in the two bus-transfer slopes.

    In cosine terms (coefficients -c_u and +c_v of cos d1 and cos d2), the
    original pair combines with a common sign (no mid-range zero curve)
    while the redefined pair opposes, producing the ratio curve that bounds
    the nonsingular region.
    """
    cu, cv = normal_form.decoupling_affine_coefficients(params, "original")
    assert (-cu) * cv > 0
    cuh, cvh = normal_form.decoupling_affine_coefficients(params, "redefined")
    assert (-cuh) * cvh < 0
    for _ in range(20):
        x = random_state(params, rng)
        for variant in ("original", "redefined"):
            dec = normal_form.decoupling(x, params, variant)
            assert dec.det_closed_form == pytest.approx(dec.det, rel=1e-8)


def test_decoupling_matches_chain_products(params, rng):
    """Jet-built decoupling entries equal the hand-derived chain products."""
    for _ in range(10):
        x = random_state(params, rng)
        for variant in ("original", "redefined"):
            dec = normal_form.decoupling(x, params, variant)
            pred = normal_form.decoupling_closed_form(x, params, variant)
            assert np.allclose(dec.matrix, pred, rtol=1e-10)


def test_region_boundary_is_the_ratio_curve(params):
    """The redefined determinant vanishes where the weighted cosines match."""
    A = normal_form.decoupling_closed_form(
        np.zeros(model.NX), params, "redefined")
    ratio = (A[0, 1] / A[0, 0])      # cos d1 / cos d2 at the zero set
    d2 = 0.35
    d1_crit = np.arccos(ratio * np.cos(d2))
    x = np.zeros(model.NX)
    x[model.XH2] = 0.4
    x[model.DELTA2] = d2
    for eps, sign in ((-0.05, 1.0), (0.05, -1.0)):
        x[model.DELTA1] = d1_crit + eps
        det = normal_form.decoupling(x, params, "redefined").det
        ref = normal_form.decoupling(
            model.heat_balance_state(params, w=0.4), params, "redefined").det
        assert np.sign(det) == sign * np.sign(ref)


def test_jacobian_determinant_closed_form(params, rng):
    """det DPhi factors through the angle slopes as v^3 times a quadratic."""
    for variant, jac in (("original", normal_form.dphi),
                         ("redefined", normal_form.dphi_hat)):
        for _ in range(10):
            x = random_state(params, rng)
            det = normal_form.det_with_scale(jac(x, params))[0]
            pred = normal_form.jacobian_det_closed_form(
                params, variant, x[model.DELTA1], x[model.DELTA2])
            assert pred == pytest.approx(det, rel=1e-6)
            assert np.sign(pred) == np.sign(det)


def test_relative_degrees_in_dhat(params, dhat_states):
    for x in dhat_states:
        tab = jets.lie_table(x, params, 4)
        assert np.abs(tab["lg"]["he"][:, :4]).max() < 1e-8
        assert np.abs(tab["lg"]["hh"][:, :3]).max() < 1e-8
        assert np.abs(tab["lg"]["hhat"][:, :2]).max() < 1e-8
        assert np.abs(tab["lg"]["he"][:, 4]).min() > 1e-4
        assert np.abs(tab["lg"]["hhat"][:, 2]).min() > 1e-4


def test_internal_coordinate_independence(params, dhat_states):
    """Moving the averaged pressure changes only the first redefined output
    coordinate; the rest of the image is untouched."""
    x = dhat_states[0]
    base = normal_form.phi_hat(x, params)
    for a in (-0.7, 0.4, 1.3):
        xs = x.copy()
        xs[model.XH3] += a
        moved = normal_form.phi_hat(xs, params)
        assert moved.xi_h_hat[0] == pytest.approx(base.xi_h_hat[0] + a)
        assert np.abs(moved.xi_e - base.xi_e).max() < 1e-12
        assert np.abs(moved.xi_h_hat[1:] - base.xi_h_hat[1:]).max() < 1e-12
        assert np.abs((moved.eta_hat - base.eta_hat)[[0, 1, 2, 3, 4]]).max() < 1e-12


def test_singularity_scan(params, eq10):
    scan = normal_form.singularity_scan(params, "redefined", n1=61, n2=61)
    assert scan.contains(0.0, 0.0)
    assert scan.summary()["origin_inside"]
    # The equilibrium angles sit inside the nonsingular region.
    assert scan.contains(eq10.x[model.DELTA1], eq10.x[model.DELTA2])
    # Determinants are functions of the angles alone: an entirely different
    # base state leaves the scan untouched.
    other = model.heat_balance_state(params, w=1.3, pavg=0.8)
    other[model.OMEGA1] = 0.3
    scan2 = normal_form.singularity_scan(params, "redefined", n1=61, n2=61,
                                         base_state=other)
    assert np.allclose(scan.det_dec, scan2.det_dec, rtol=1e-9)
    assert np.allclose(scan.det_dphi, scan2.det_dphi, rtol=1e-9)
    # Flat rows serialize one cell each.
    rows = list(scan.rows())
    assert len(rows) == 61 * 61
    assert any(r[4] & 1 for r in rows)


def test_equilibria_inside_region_across_references(params):
    from twosite import analysis
    scan = normal_form.singularity_scan(params, "redefined", n1=81, n2=81)
    warm = None
    for y1 in (0.7, 0.85, 1.0, 1.15, 1.27):
        eq = analysis.solve_equilibrium(params, y1, 0.0, guess=warm)
        warm = eq
        assert normal_form.in_dhat(eq.x, params, scan=scan), y1
