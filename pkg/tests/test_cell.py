import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homog_rd.cell import (
    CellSettings,
    CellSolveError,
    cell_flux_average,
    cell_reaction_average,
    harmonic_mean,
    pairing_residual,
    solve_cell,
    solve_cell_elliptic,
    solve_cell_parabolic_periodic,
    solve_chi,
    solve_linear_basis,
)
from homog_rd.coefficients import BUILTIN_DENSITIES, BUILTIN_FLUXES, BUILTIN_REACTIONS, Regime, flux_from_expr

F, R, D = BUILTIN_FLUXES, BUILTIN_REACTIONS, BUILTIN_DENSITIES


def plap_oracle(xi, p, n=1 << 14):
    """1D p-Laplacian with weight 2 + cos: the flux is constant across the cell."""
    y = np.arange(n) / n
    m = np.mean((2 + np.cos(2 * np.pi * y)) ** (-1 / (p - 1)))
    return np.sign(xi) * abs(xi) ** (p - 1) / m ** (p - 1)


def test_harmonic_mean_quadrature():
    assert harmonic_mean(lambda y: 2 + np.cos(2 * np.pi * y)) == pytest.approx(np.sqrt(3), abs=1e-13)
    assert harmonic_mean(lambda y: 1 + 0 * y) == 1.0


@pytest.mark.parametrize("xi", [-3.0, 0.5, 2.0])
def test_plap_cell_matches_closed_form(xi):
    f = F["plap_cos"](1, 4)
    sol = solve_cell([0.5], 0.0, 0.0, [xi], f, R["zero"](1), D["one"](1), Regime.SUB, CellSettings(n=128))
    assert cell_flux_average(sol, f)[0] == pytest.approx(plap_oracle(xi, 4), rel=1e-8)


def test_layered_medium_2d():
    f = flux_from_expr(2, 2, "linear-matrix", "2 + cos(2*pi*y1)", c1=1.0, c2=3.0)
    chi = solve_chi([0.5, 0.5], 0.0, f, D["one"](2), Regime.SUB, CellSettings(n=32))
    B = np.column_stack([cell_flux_average(c, f) for c in chi])
    assert np.allclose(B, [[np.sqrt(3), 0.0], [0.0, 2.0]], atol=1e-12)


def test_constant_matrix_needs_no_corrector():
    f = F["linear_aniso"](2, 2)
    chi = solve_chi([0.5, 0.5], 0.0, f, D["one"](2), Regime.SUB, CellSettings(n=8))
    B = np.column_stack([cell_flux_average(c, f) for c in chi])
    assert np.allclose(B, [[2.0, 0.5], [0.5, 1.0]], atol=1e-14)
    assert all(np.abs(c.pi.values).max() < 1e-14 for c in chi)


def test_checker_bhat_symmetric_positive():
    f = F["linear_checker"](2, 2)
    chi = solve_chi([0.5, 0.5], 0.0, f, D["cos_half"](2), Regime.SUB, CellSettings(n=16))
    B = np.column_stack([cell_flux_average(c, f) for c in chi])
    assert np.allclose(B, B.T, atol=1e-10)
    assert np.all(np.linalg.eigvalsh(B) > 0)


def test_period_map_matches_elliptic_for_tau_independent_data():
    b, g, rho = F["linear_cos"](1, 2), R["r_sin"](1), D["cos_half"](1)
    ell = solve_cell_elliptic([0.5], 0.0, 0.7, [1.0], b, g, rho, Regime.SUB, CellSettings(n=64))
    pm = solve_cell_parabolic_periodic([0.5], 0.0, 0.7, [1.0], b, g, rho,
                                       CellSettings(n=64, m=8, method="period-map"))
    assert pm.method == "period-map" and pm.sweeps >= 1
    assert np.abs(pm.pi.values - ell.pi.values[None]).max() < 1e-8
    assert pm.drift < 1e-12


def test_time_periodic_single_mode_oracle():
    # pi = c(tau) sin(2 pi y) with c' = -4 pi^2 c + 1 + sin(2 pi tau) / 2
    sol = solve_cell_parabolic_periodic([0.0], 0.0, 0.0, [0.0], F["identity"](1, 2), R["sin_tau"](1), D["one"](1),
                                        CellSettings(n=16, m=64))
    a, w = 4 * np.pi**2, 2 * np.pi
    tau = np.arange(64) / 64
    c = 1 / a + 0.5 * (a * np.sin(w * tau) - w * np.cos(w * tau)) / (a * a + w * w)
    exact = c[:, None] * np.sin(2 * np.pi * np.arange(16) / 16)[None]
    assert np.abs(sol.pi.values - exact).max() < 1e-12
    assert pairing_residual(sol, D["one"](1)) < 1e-12


@pytest.mark.parametrize("method", ["spectral", "period-map"])
def test_critical_nonlinear_tau_dependent(method):
    f, g, rho = F["plap_cos"](1, 4), R["r_sin_tau"](1), D["cos_half"](1)
    sol = solve_cell_parabolic_periodic([0.5], 0.0, 0.8, [1.0], f, g, rho, CellSettings(n=32, m=8, method=method))
    assert sol.grid.has_tau and sol.regime is Regime.CRITICAL
    assert abs(sol.constraint) < 1e-12
    if method == "spectral":
        assert sol.pairing < 1e-9
        assert sol.residual < 1e-8


def test_spectral_and_period_map_agree_to_first_order():
    # tau enters through g only, so the corrector genuinely depends on tau
    f, g, rho = F["linear_cos"](1, 2), R["r_sin_tau"](1), D["cos_half"](1)
    args = ([0.5], 0.0, 0.5, [1.0], f, g, rho)
    spectral = solve_cell_parabolic_periodic(*args, CellSettings(n=32, m=64))
    errs = []
    for m in (16, 32):
        pm = solve_cell_parabolic_periodic(*args, CellSettings(n=32, m=m, method="period-map"))
        errs.append(np.abs(pm.pi.values - spectral.pi.values[:: 64 // m]).max())
    assert errs[0] > 1e-6
    assert errs[1] < 0.6 * errs[0]


def test_super_regime_has_no_tau_axis():
    sol = solve_cell([0.5], 0.0, 0.3, [1.0], F["linear_cos_tau"](1, 2), R["r_sin_tau"](1), D["one"](1),
                     Regime.SUPER, CellSettings(n=32, m=8))
    assert not sol.grid.has_tau and sol.tau_variance() == 0.0 and sol.avg_taus is not None


def test_dispatch_critical_tau_independent_uses_stationary_solve():
    sol = solve_cell([0.5], 0.0, 0.3, [1.0], F["linear_cos"](1, 2), R["r_sin"](1), D["one"](1),
                     Regime.CRITICAL, CellSettings(n=32, m=8))
    assert sol.regime is Regime.CRITICAL and not sol.grid.has_tau


def test_elliptic_rejects_critical():
    with pytest.raises(ValueError):
        solve_cell_elliptic([0.5], 0.0, 0.0, [1.0], F["identity"](1, 2), R["zero"](1), D["one"](1), Regime.CRITICAL)


def test_newton_failure_carries_history():
    f = F["plap_cos"](1, 4)
    with pytest.raises(CellSolveError) as info:
        solve_cell([0.5], 0.0, 2.0, [5.0], f, R["tanh_sin"](1), D["cos_half"](1), Regime.SUB,
                   CellSettings(n=64, max_iter=1, tol=1e-15))
    assert len(info.value.history) >= 1


def test_warm_start_reproduces_cold_start():
    f, g, rho = F["plap_cos"](1, 4), R["r_sin"](1), D["one"](1)
    s = CellSettings(n=64)
    a = solve_cell([0.5], 0.0, 0.5, [1.0], f, g, rho, Regime.SUB, s)
    b = solve_cell([0.5], 0.0, 0.5, [1.2], f, g, rho, Regime.SUB, s, guess=a.pi.values)
    c = solve_cell([0.5], 0.0, 0.5, [1.2], f, g, rho, Regime.SUB, s)
    assert np.abs(b.pi.values - c.pi.values).max() < 1e-8


def test_linear_basis_superposition():
    b, g, rho = F["linear_cos"](1, 2), R["r_sin"](1), D["cos_half"](1)
    s = CellSettings(n=64)
    basis = solve_linear_basis([0.5], 0.0, [0.7], b, g, rho, Regime.SUB, s)
    full = solve_cell([0.5], 0.0, 0.7, [1.3], b, g, rho, Regime.SUB, s)
    combo = 1.3 * basis.chi[0].pi.values + basis.w1[0].pi.values
    assert np.abs(full.pi.values - combo).max() < 1e-10


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(-3, 3))
def test_effective_reaction_linear_in_r(r, xi):
    a, g, one = F["identity"](1, 2), R["r_sin"](1), D["one"](1)
    sol = solve_cell([0.5], 0.0, r, [xi], a, g, one, Regime.SUB, CellSettings(n=32))
    assert cell_reaction_average(sol, g) == pytest.approx(r / (8 * np.pi**2), abs=1e-12)
    assert abs(sol.constraint) < 1e-13


def test_settings_reject_unknown_method():
    with pytest.raises(ValueError):
        CellSettings(method="rk4")


@pytest.mark.parametrize("fid", ["plap_cos", "cubic"])
def test_newton_energy_non_increasing_without_reaction(fid):
    from homog_rd.cell import _initial_guess, _newton, _Problem
    from homog_rd.torus import TorusGrid

    f = F[fid](1, 4)
    prob = _Problem(TorusGrid(1, 64), [0.5], 0.0, 0.0, [3.0], f, R["zero"](1), D["cos_half"](1))
    energies = []
    s = CellSettings(n=64)
    # a rough start so that several damped steps are taken
    start = prob.project_off_kernel(np.sin(2 * np.pi * np.arange(64) / 64) * 0.5)
    _newton(prob, start, s, on_iterate=lambda pi, res, E: energies.append(E))
    if f.potential(0, 0, np.zeros((1, 1)), 0, np.ones((1, 1))) is None:
        assert all(E is None for E in energies)
        return
    assert len(energies) >= 2
    assert all(b <= a + 1e-13 * max(1.0, abs(a)) for a, b in zip(energies, energies[1:]))
    assert _initial_guess(prob, s.delta).shape == (64,)


def test_unique_corrector_from_different_guesses():
    f, g, rho = F["plap_cos"](1, 4), R["tanh_sin"](1), D["cos_half"](1)
    s = CellSettings(n=64)
    rng = np.random.default_rng(9)
    a = solve_cell([0.5], 0.0, 0.9, [1.5], f, g, rho, Regime.SUB, s)
    b = solve_cell([0.5], 0.0, 0.9, [1.5], f, g, rho, Regime.SUB, s, guess=0.05 * rng.standard_normal(64))
    assert np.abs(a.pi.values - b.pi.values).max() < 1e-8
