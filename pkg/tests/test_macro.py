import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homog_rd._fd import BoxGrid, ColoredJacobian, NewtonFailure, newton_solve, project_initial
from homog_rd.effective import tabulate_effective
from homog_rd.macro import macro_step, solve_macro, uniqueness_probe
from homog_rd.scenario import load_scenario, parse_scenario

HEAT_2D = """
[scenario]
name = heat2
dimension = 2
k = 1
T = 0.02
epsilons = 1/4
[flux]
id = identity
[reaction]
id = zero
[density]
id = one
[grids]
cell_y = 8
cell_tau = 1
macro_x = 16
macro_t = 16
"""


def test_box_grid_shapes():
    g = BoxGrid(((0.0, 1.0), (0.0, 2.0)), (4, 8))
    assert g.shape == (5, 9) and g.interior_shape == (3, 7)
    assert np.allclose(g.h, [0.25, 0.25])
    u = np.random.default_rng(0).standard_normal(g.interior_shape)
    assert np.array_equal(g.interior(g.embed(u)), u)
    X, r, xi = g.faces(g.embed(u), 0)
    assert X.shape == (2, 4, 7) and r.shape == (4, 7) and xi.shape == (2, 4, 7)


def test_divergence_of_face_gradient_is_second_difference():
    g = BoxGrid(((0.0, 1.0),), (10,))
    x = g.nodes()[0]
    u = x * (1 - x)
    _, _, xi = g.faces(u, 0)
    assert np.allclose(g.divergence([xi[0]]), -2.0, atol=1e-12)
    assert np.allclose(g.central_gradient(u)[0], (1 - 2 * x)[1:-1], atol=1e-12)


def test_cell_gradient_exact_on_bilinear():
    g = BoxGrid(((0.0, 1.0), (0.0, 1.0)), (4, 4))
    X = g.nodes()
    u = 3 * X[0] - 2 * X[1] + X[0] * X[1]
    cg = g.cell_gradient(u)
    c = (np.arange(4) + 0.5) / 4
    cx, cy = np.meshgrid(c, c, indexing="ij")
    assert np.allclose(cg[0], 3 + cy) and np.allclose(cg[1], -2 + cx)


def test_project_initial_modes():
    g = BoxGrid(((0.0, 1.0),), (4,))
    step = lambda x: ((x[0] > 0.3) & (x[0] < 0.7)).astype(float)  # noqa: E731
    nodal = project_initial(g, step, "nodal")
    avg = project_initial(g, step, "cell-average")
    assert nodal.tolist() == [0.0, 0.0, 1.0, 0.0, 0.0]
    assert avg[0] == avg[-1] == 0.0
    assert 0.0 < avg[1] < 1.0 and avg[2] == 1.0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_colored_jacobian_matches_dense(seed):
    rng = np.random.default_rng(seed)
    shape = (5, 4)
    c = rng.standard_normal(shape)

    def fun(u):
        p = np.pad(u, 1)
        lap = p[2:, 1:-1] + p[:-2, 1:-1] + p[1:-1, 2:] + p[1:-1, :-2] - 4 * u
        diag = p[2:, 2:] * p[:-2, :-2]
        return lap + c * u**3 + 0.1 * diag

    u = rng.standard_normal(shape)
    J = ColoredJacobian(shape)(fun, u).toarray()
    h = 1e-6
    dense = np.empty_like(J)
    for j in range(u.size):
        e = np.zeros(u.size)
        e[j] = h
        dense[:, j] = (fun(u + e.reshape(shape)) - fun(u - e.reshape(shape))).ravel() / (2 * h)
    assert np.allclose(J, dense, atol=1e-7)


def test_newton_solve_and_failure():
    jac = ColoredJacobian((3,))
    res = newton_solve(lambda u: u**3 + u - 2.0, np.zeros(3), jac, 1e-12, 1.0)
    assert np.allclose(res.u, 1.0) and res.iterations <= 10
    with pytest.raises(NewtonFailure):
        newton_solve(lambda u: u**2 + 1.0, np.ones(3), jac, 1e-12, 1.0, max_iter=5)


def test_heat_macro_first_order_in_time(scenario_dir):
    cfg = load_scenario(scenario_dir / "heat_1d.cfg")
    eff = tabulate_effective(cfg)
    errs = []
    for n in (32, 64):
        sol = solve_macro(cfg, eff, nsteps=n)
        x = sol.grid.nodes()[0]
        errs.append(np.abs(sol.final - np.exp(-np.pi**2 * cfg.T) * np.sin(np.pi * x)).max())
    assert errs[1] < errs[0] < 1.5e-2
    assert 1.7 < errs[0] / errs[1] < 2.3


def test_heat_macro_2d():
    cfg = parse_scenario(HEAT_2D)
    sol = solve_macro(cfg, tabulate_effective(cfg))
    X = sol.grid.nodes()
    exact = np.exp(-2 * np.pi**2 * cfg.T) * np.sin(np.pi * X[0]) * np.sin(np.pi * X[1])
    assert np.abs(sol.final - exact).max() < 1e-2
    assert sol.newton_converged() and sol.clamps == 0
    n = sol.norms()
    assert n["sup_l2_sq"] == pytest.approx(0.25, rel=1e-6)


def test_macro_step_matches_trajectory(scenario_dir):
    cfg = load_scenario(scenario_dir / "heat_1d.cfg")
    eff = tabulate_effective(cfg)
    sol = solve_macro(cfg, eff, nsteps=4)
    u1, rec = macro_step(sol.U[0], cfg.T / 4, eff, sol.grid, cfg.T / 4)
    assert np.allclose(u1, sol.U[1], atol=1e-12) and rec.substeps == 1


def test_uniqueness_probe_linear(scenario_dir):
    cfg = load_scenario(scenario_dir / "heat_1d.cfg")
    eff = tabulate_effective(cfg)
    out = uniqueness_probe(cfg, eff, eta=1e-6, nsteps=8)
    assert out["linear"]
    assert out["data_constant"] <= 1.0 + 1e-6
    assert out["path_divergence"] < 1e-9


LAYERED = """
[scenario]
name = layered
dimension = 1
k = 1
T = 0.02
epsilons = 1/8
[flux]
id = linear_cos
[reaction]
id = zero
[density]
id = cos_half
[grids]
cell_y = 32
cell_tau = 1
macro_x = 64
macro_t = 64
"""


def test_layered_law_decays_with_harmonic_diffusivity():
    cfg = parse_scenario(LAYERED)
    eff = tabulate_effective(cfg)
    errs = []
    for n in (32, 64):
        sol = solve_macro(cfg, eff, nsteps=n)
        x = sol.grid.nodes()[0]
        errs.append(np.abs(sol.final - np.exp(-np.sqrt(3) * np.pi**2 * cfg.T) * np.sin(np.pi * x)).max())
    assert errs[0] < 1e-2 and errs[1] < 0.6 * errs[0]


def test_macro_l2_non_increasing_without_reaction():
    cfg = parse_scenario(LAYERED.replace("id = linear_cos", "id = plap_cos\nkind = weighted-p-laplacian")
                         .replace("k = 1", "k = 1\np = 4").replace("[grids]", "[tab]\nr_points = 5\n"
                                                                     "xi_points = 17\n[grids]"))
    sol = solve_macro(cfg, tabulate_effective(cfg), nsteps=16)
    l2 = [sol.grid.l2_norm_sq(u) for u in sol.U]
    assert all(b <= a + 1e-14 for a, b in zip(l2, l2[1:]))
    assert np.all(sol.U[:, 0] == 0) and np.all(sol.U[:, -1] == 0)


def test_uniqueness_probe_scaling_and_zero(scenario_dir):
    cfg = load_scenario(scenario_dir / "heat_1d.cfg")
    eff = tabulate_effective(cfg)
    assert uniqueness_probe(cfg, eff, eta=0.0, nsteps=4)["data_divergence"] == 0.0
    k1 = uniqueness_probe(cfg, eff, eta=1e-6, nsteps=8)["data_constant"]
    k2 = uniqueness_probe(cfg, eff, eta=5e-7, nsteps=8)["data_constant"]
    assert k1 == pytest.approx(k2, rel=1e-3)
