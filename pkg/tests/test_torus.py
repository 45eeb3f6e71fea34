import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from homog_rd.coefficients import BUILTIN_REACTIONS
from homog_rd.fieldio import read_field_binary, read_field_csv, write_field_binary, write_field_csv
from homog_rd.torus import (
    FredholmError,
    PeriodicField,
    TorusGrid,
    build_potential,
    diff,
    diff_matrix,
    div_y,
    grad_y,
    laplacian_y,
    poisson_solve_periodic,
    quadrature,
    tau_pairing,
    tau_pairing_antisymmetry_check,
    weighted_mean,
    weighted_zero_mean_project,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_grid_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        TorusGrid(1, 12)
    with pytest.raises(ValueError):
        TorusGrid(1, 16, 6)
    with pytest.raises(ValueError):
        TorusGrid(3, 8)


def test_shapes_and_nodes():
    g = TorusGrid(2, 8, 4)
    assert g.shape == (4, 8, 8) and g.y_axes == (1, 2) and g.size == 256
    y, tau = g.broadcast_nodes()
    assert y.shape == (2, 4, 8, 8) and tau.shape == (4, 8, 8)
    assert g.without_tau().shape == (8, 8)


@pytest.mark.parametrize("k", [1, 3, 7])
def test_diff_exact_on_trig_modes(k):
    n = 32
    y = np.arange(n) / n
    d = diff(np.sin(2 * np.pi * k * y), 0)
    assert np.allclose(d, 2 * np.pi * k * np.cos(2 * np.pi * k * y), atol=1e-10)


def test_diff_matrix_antisymmetric_and_kills_nyquist():
    D = diff_matrix(16)
    assert np.allclose(D, -D.T, atol=1e-13)
    nyq = (-1.0) ** np.arange(16)
    assert np.allclose(D @ nyq, 0, atol=1e-12)
    assert np.allclose(D @ np.ones(16), 0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(float, (8, 8), elements=finite), arrays(float, (8, 8), elements=finite))
def test_integration_by_parts(u, v):
    g = TorusGrid(2, 8)
    for ax in (0, 1):
        lhs = quadrature(diff(u, ax) * v, g)
        rhs = -quadrature(u * diff(v, ax), g)
        assert abs(lhs - rhs) <= 1e-9 * (1 + np.abs(u).max() * np.abs(v).max())


def test_div_grad_is_laplacian():
    g = TorusGrid(2, 16)
    y = g.y_nodes()
    u = np.sin(2 * np.pi * y[0]) * np.cos(4 * np.pi * y[1])
    assert np.allclose(div_y(grad_y(u, g), g), -(4 + 16) * np.pi**2 * u, atol=1e-9)
    assert np.allclose(laplacian_y(u, g), div_y(grad_y(u, g), g))


def test_quadrature_keeps_tau_axis():
    g = TorusGrid(1, 8, 4)
    f = np.arange(4.0)[:, None] + np.zeros((4, 8))
    assert np.allclose(quadrature(f, g, axes="y"), np.arange(4.0))
    assert quadrature(f, g) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        quadrature(f, g, axes="tau")


def test_poisson_solves_single_mode_and_is_centered():
    g = TorusGrid(1, 64)
    y = g.y_nodes()[0]
    src = np.sin(2 * np.pi * y)
    R = poisson_solve_periodic(src, g)
    assert np.allclose(R, -src / (4 * np.pi**2), atol=1e-14)
    assert abs(quadrature(R, g)) < 1e-15


def test_poisson_rejects_uncentered_source():
    g = TorusGrid(1, 16)
    with pytest.raises(FredholmError, match="Fredholm condition violated"):
        poisson_solve_periodic(1 + np.sin(2 * np.pi * g.y_nodes()[0]), g)


def test_potential_of_r_sin():
    g = TorusGrid(1, 64)
    pot = build_potential(BUILTIN_REACTIONS["r_sin"](1), [0.5, 2.0], g)
    y = g.y_nodes()[0]
    assert np.allclose(pot.G[1, 0], -2.0 * np.cos(2 * np.pi * y) / (2 * np.pi), atol=1e-12)
    assert pot.bound_constant() == pytest.approx(1 / (2 * np.pi), rel=1e-10)
    assert pot.lipschitz_constant() == pytest.approx(1 / (2 * np.pi), rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(arrays(float, (4, 8), elements=finite), st.floats(0.2, 0.9))
def test_weighted_projection_idempotent(u, amp):
    g = TorusGrid(1, 8, 4)
    rho = 1 + amp * np.cos(2 * np.pi * g.y_nodes()[0])
    p = weighted_zero_mean_project(u, rho, g)
    assert np.allclose(weighted_mean(p, rho, g), 0, atol=1e-12)
    assert np.allclose(weighted_zero_mean_project(p, rho, g), p, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(float, (8, 16), elements=finite), arrays(float, (8, 16), elements=finite))
def test_tau_pairing_antisymmetric(u, v):
    g = TorusGrid(1, 16, 8)
    rho = 1 + 0.5 * np.cos(2 * np.pi * g.y_nodes()[0])
    scale = 1 + np.abs(u).max() * np.abs(v).max()
    assert tau_pairing_antisymmetry_check(u, v, rho, g) <= 1e-9 * scale
    assert abs(tau_pairing(u, u, rho, g)) <= 1e-9 * (1 + np.abs(u).max() ** 2)


def test_periodic_field_validation():
    g = TorusGrid(1, 8)
    with pytest.raises(ValueError):
        PeriodicField(g, np.zeros(4))
    with pytest.raises(ValueError):
        PeriodicField(g, np.full(8, np.nan))
    f = PeriodicField(g, np.zeros(8))
    with pytest.raises(ValueError):
        f.values[0] = 1.0


@pytest.mark.parametrize("grid", [TorusGrid(1, 8), TorusGrid(2, 4), TorusGrid(2, 4, 2)])
def test_field_io_roundtrip(tmp_path, grid):
    vals = np.random.default_rng(0).standard_normal(grid.shape)
    f = PeriodicField(grid, vals)
    write_field_binary(tmp_path / "f.bin", f)
    write_field_csv(tmp_path / "f.csv", f)
    for back in (read_field_binary(tmp_path / "f.bin"), read_field_csv(tmp_path / "f.csv")):
        assert back.grid == grid
        assert np.array_equal(back.values, vals)


def test_field_binary_layout_y1_fastest(tmp_path):
    g = TorusGrid(2, 2)
    vals = np.array([[0.0, 1.0], [2.0, 3.0]])  # vals[i1, i2]
    write_field_binary(tmp_path / "f.bin", PeriodicField(g, vals))
    raw = np.frombuffer((tmp_path / "f.bin").read_bytes()[16:], dtype="<f8")
    assert raw.tolist() == [0.0, 2.0, 1.0, 3.0]


def test_field_binary_rejects_bad_magic(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(ValueError, match="magic"):
        read_field_binary(tmp_path / "x.bin")
