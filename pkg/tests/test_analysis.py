import numpy as np
import pytest

from twosite import analysis, model, normal_form, zero_dynamics as zd


def test_equilibrium_basics(params, eq10):
    assert eq10.residual < 1e-12
    # Pins hold exactly.
    assert model.output_y1(eq10.x, params) == pytest.approx(1.0, abs=1e-12)
    assert eq10.x[model.XH3] == pytest.approx(0.0, abs=1e-12)
    # Re-solving from the solution is a fixed point.
    again = analysis.solve_equilibrium(params, 1.0, 0.0, guess=eq10)
    assert np.abs(again.x - eq10.x).max() < 1e-12
    assert normal_form.in_dhat(eq10.x, params)


def test_heat_balance_relations_at_equilibrium(params, eq10):
    """Both boiler balances and the pipe momentum balance hold."""
    fl = model.heat_flows(eq10.x[model.HEAT], eq10.x[model.GAS], params)
    assert fl["Qa1"] == pytest.approx(params.QL_1 + fl["Q12"], rel=1e-12)
    assert fl["Qa2"] == pytest.approx(params.QL_2 - fl["Q12"], rel=1e-12)
    w = eq10.x[model.XH2]
    assert eq10.x[model.XH1] == pytest.approx(
        params.rho_ratio * params.fric * w * abs(w), rel=1e-12)
    # The consistent heat flow at unit electric export.
    assert fl["Q12"] == pytest.approx(1.6867, abs=5e-4)


def test_pressure_reference_translation_family(params, eq10):
    """Moving the pressure reference translates only the averaged pressure."""
    shifted = analysis.solve_equilibrium(params, 1.0, 0.7)
    diff = shifted.x - eq10.x
    assert abs(diff[model.XH3] - 0.7) < 1e-12
    others = np.delete(diff, model.XH3)
    assert np.abs(others).max() < 1e-12
    assert np.abs(shifted.u - eq10.u).max() < 1e-12


def test_equilibria_across_the_feasible_range(params):
    warm = None
    for y1 in np.arange(0.7, 1.31, 0.05):
        eq = analysis.solve_equilibrium(params, y1, 0.0, guess=warm)
        warm = eq
        assert eq.residual < 1e-10
        assert normal_form.in_dhat(eq.x, params), y1


def test_homotopy_reaches_distant_references(params):
    eq = analysis.solve_equilibrium(params, 1.28, 0.0)
    assert eq.residual < 1e-10


def test_infeasible_reference_raises(params):
    with pytest.raises(analysis.NoEquilibriumError):
        analysis.solve_equilibrium(params, 3.5, 0.0)


def test_theorem3_consistency_with_equilibrium(params, eq10):
    """At the self-consistent heat flow the ramp rate vanishes."""
    y2_star = float(params.flow_coeff * eq10.x[model.XH2])
    sol = analysis.solve_theorem3(params, 1.0, y2_star, K=0.01)
    assert abs(sol.nu) < 1e-10
    assert abs(sol.sigma2_ref) < 1e-8
    assert sol.in_dhat
    assert np.abs(sol.x_ref[list(model.ETA_HAT_IDX)] - sol.eta_hat_ref).max() < 1e-12


def test_theorem3_ramp_rate_matches_heat_imbalance(params):
    """The solved ramp rate equals the scaled total heat surplus."""
    sol = analysis.solve_theorem3(params, 1.2, 1.69, K=0.01)
    x = sol.x_ref
    fl = model.heat_flows(x[model.HEAT], x[model.GAS], params)
    surplus = fl["Qa1"] + fl["Qa2"] - params.QL_1 - params.QL_2
    expect = surplus / ((params.Th_1 + params.Th_2) * params.Qr)
    assert sol.nu == pytest.approx(expect, rel=1e-9)
    assert sol.nu > 0.0


def test_theorem3_failure_is_reported(params):
    """Far beyond the feasible heat range the solve fails loudly or lands
    outside the nonsingular region."""
    try:
        sol = analysis.solve_theorem3(params, 1.0, 6.5, K=0.01)
    except analysis.NoEquilibriumError:
        return
    assert not sol.in_dhat


def test_scan_q_minimum_phase_window(params):
    rows = analysis.scan_references(params, "Q", np.arange(0.6, 0.76, 0.02))
    assert all(r["status"] == "ok" for r in rows)
    crossing = analysis.locate_sign_change(rows)
    assert crossing == pytest.approx(0.67, abs=0.05)
    assert rows[0]["max_re"] > 0.0          # unstable below the window
    assert rows[-1]["max_re"] < 0.0


def test_scan_q_eigenstructure_at_unit_export(params):
    rows = analysis.scan_references(params, "Q", [1.0])
    eig = rows[0]["eig_re"] + 1j * rows[0]["eig_im"]
    real = eig[np.abs(eig.imag) < 1e-9]
    assert len(real) == 1 and -13.0 < real[0].real < -7.0
    pairs = eig[eig.imag > 1e-9]
    assert len(pairs) == 2
    assert rows[0]["max_re"] < 0.0


def test_scan_qtilde_stable_window(params):
    vals = np.arange(4.0, 5.21, 0.1)
    rows = analysis.scan_references(params, "Qtilde", vals, K=0.01, y1ref=1.0)
    ok = [r for r in rows if r["status"] == "ok"]
    assert len(ok) == len(rows)
    for r in ok:
        if r["ref"] <= 4.7:
            assert r["stable"] and r["in_dhat"]
    assert any(not (r["stable"] and r["in_dhat"]) for r in ok if r["ref"] >= 4.9)


def test_scan_records_failures_and_continues(params):
    rows = analysis.scan_references(params, "Q", [1.0, 3.5, 1.05])
    assert rows[0]["status"] == "ok"
    assert rows[1]["status"] != "ok" and "error" in rows[1]
    assert rows[2]["status"] == "ok"


def test_matrix_theorem3_blocks(params):
    m0 = zd.matrix_theorem3(params, 1.0, 1.69, K=0.0)
    ev = np.sort_complex(m0.eigvals)
    evq = np.sort_complex(np.append(m0.eigvals_qtilde, 0.0))
    assert np.allclose(ev, evq, atol=1e-9)
    # Small positive gain keeps the closed loop stable.
    m = zd.matrix_theorem3(params, 1.0, 1.69, K=1e-3)
    assert m.eigvals.real.max() < 0.0
    m2 = zd.matrix_theorem3(params, 1.2, 1.69, K=0.01)
    assert m2.eigvals.real.max() < 0.0
