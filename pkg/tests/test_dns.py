from dataclasses import replace

import numpy as np
import pytest

from homog_rd._fd import BoxGrid
from homog_rd.dns import DnsError, apriori_monitor, dns_resolution, dns_solve, energy_monitor, l2_qt_error
from homog_rd.effective import tabulate_effective
from homog_rd.macro import solve_macro
from homog_rd.scenario import Budget, Grids, load_scenario


@pytest.fixture
def heat(scenario_dir):
    return load_scenario(scenario_dir / "heat_1d.cfg")


def test_resolution_counts(heat):
    grid, n = dns_resolution(heat, 1 / 8)
    assert grid.M == (8 * heat.grids.dns_x,)
    dt = heat.T / n
    assert dt <= heat.T / heat.grids.macro_t + 1e-15
    assert dt <= (1 / 8) ** heat.k / heat.grids.dns_t + 1e-15


def test_under_resolved_and_budget(heat):
    with pytest.raises(DnsError, match="under-resolved"):
        dns_resolution(replace(heat, grids=replace(heat.grids, dns_x=4)), 1 / 8)
    with pytest.raises(DnsError, match="resolution budget exceeded"):
        dns_resolution(replace(heat, budget=Budget(max_dns_nodes=10)), 1 / 8)


def test_eps_independent_dns_equals_macro(heat):
    cfg = replace(heat, grids=Grids(cell_y=16, cell_tau=1, macro_x=64, macro_t=64, dns_x=8, dns_t=8))
    macro = solve_macro(cfg, tabulate_effective(cfg))
    dns = dns_solve(cfg, 1 / 8)
    assert dns.grid == macro.grid and len(dns.times) == len(macro.times)
    assert l2_qt_error(dns, macro) < 1e-9


def test_energy_identity_small_and_first_order(heat):
    res = []
    for M in (16, 32):
        sol = dns_solve(heat, 1 / 8, nsteps=M, grid=BoxGrid(heat.domain, (M,)))
        e = energy_monitor(sol)
        assert e[0] == 0.0 and e.shape == sol.times.shape
        res.append(np.abs(e).max())
    assert 1.8 < res[0] / res[1] < 2.2


def test_apriori_monitor_heat(heat):
    sol = dns_solve(heat, 1 / 8, nsteps=16, grid=BoxGrid(heat.domain, (16,)))
    mon = apriori_monitor(sol)
    assert mon["sup_l2_sq"] == pytest.approx(0.5, rel=1e-12)
    assert 0 < mon["int_grad_p"] < np.pi**2 / 2 * heat.T


def test_oscillating_dns_close_to_macro(scenario_dir):
    cfg = load_scenario(scenario_dir / "linear_1d.cfg")
    cfg = replace(cfg, grids=replace(cfg.grids, macro_x=64, macro_t=64), T=0.01)
    macro = solve_macro(cfg, tabulate_effective(cfg))
    dns = dns_solve(cfg, 1 / 8)
    assert dns.grid.M == (8 * cfg.grids.dns_x,)
    err = l2_qt_error(dns, macro)
    assert 0 < err < 1e-2


def test_l2_error_rejects_mismatched_domain(heat):
    dns = dns_solve(heat, 1 / 8, nsteps=4, grid=BoxGrid(heat.domain, (8,)))
    other = replace(heat, T=0.2)
    macro = solve_macro(other, tabulate_effective(other), nsteps=4)
    with pytest.raises(ValueError, match="different"):
        l2_qt_error(dns, macro)


def test_zero_datum_stays_zero(scenario_dir):
    cfg = load_scenario(scenario_dir / "linear_1d.cfg")
    from homog_rd.coefficients import BUILTIN_INITIALS

    cfg = replace(cfg, initial=BUILTIN_INITIALS["zero"](cfg.domain), T=0.002)
    sol = dns_solve(cfg, 1 / 8)
    assert np.all(sol.U == 0.0)
    assert np.all(energy_monitor(sol) == 0.0)
    mon = apriori_monitor(sol)
    assert mon["sup_l2_sq"] == 0.0 and mon["int_grad_p"] == 0.0


def test_weighted_l2_non_increasing_without_reaction(scenario_dir):
    from homog_rd.coefficients import BUILTIN_REACTIONS

    cfg = load_scenario(scenario_dir / "linear_1d.cfg")
    cfg = replace(cfg, reaction=BUILTIN_REACTIONS["zero"](1), T=0.004)
    sol = dns_solve(cfg, 1 / 8)
    rho = cfg.density.evaluate(sol.grid.nodes() * 8)
    l2 = [sol.grid.l2_norm_sq(u, rho) for u in sol.U]
    assert all(b <= a * (1 + 1e-13) for a, b in zip(l2, l2[1:]))


def test_oscillating_source_stays_bounded():
    from homog_rd.coefficients import BUILTIN_REACTIONS

    g = BUILTIN_REACTIONS["r_sin"](1)
    vals = []
    for eps in (1 / 8, 1 / 16, 1 / 32, 1 / 64):
        grid = BoxGrid(((0.0, 1.0),), (int(16 / eps),))
        x = grid.nodes()
        u = np.sin(np.pi * x[0])
        vals.append(abs(np.sum(g.evaluate(x / eps, 0.0, u)) * grid.cell_volume() / eps))
    assert max(vals) < 1.0
