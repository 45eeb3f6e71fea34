"""Direct simulation of the oscillating problem for one epsilon, with energy and a priori monitors.

    rho(x/eps) u_t = Div a(x, t, x/eps, t/eps^k, Du) + (1/eps) g(x/eps, t/eps^k, u)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ._fd import BoxGrid, NewtonFailure, implicit_euler, project_initial
from .macro import MacroSolution


class DnsError(RuntimeError):
    pass


MIN_NODES_PER_PERIOD = 8
MIN_STEPS_PER_PERIOD = 8


@dataclass
class DnsSolution:
    grid: BoxGrid
    times: np.ndarray
    U: np.ndarray
    eps: float
    k: float
    p: float
    dt: float
    steps: list = field(default_factory=list)
    energy_terms: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.U[-1]


def dns_resolution(cfg, eps: float) -> tuple[BoxGrid, int]:
    """DNS grid (an integer number of nodes per eps-period) and step count."""
    g = cfg.grids
    if g.dns_x < MIN_NODES_PER_PERIOD or g.dns_t < MIN_STEPS_PER_PERIOD:
        raise DnsError(f"under-resolved: need >= {MIN_NODES_PER_PERIOD} nodes and >= {MIN_STEPS_PER_PERIOD} "
                       f"steps per period, got dns_x={g.dns_x}, dns_t={g.dns_t}")
    M = []
    for lo, hi in cfg.domain:
        periods = math.ceil((hi - lo) / eps - 1e-9)
        M.append(periods * g.dns_x)
    grid = BoxGrid(tuple(cfg.domain), tuple(M))
    dt_max = min(eps**cfg.k / g.dns_t, cfg.T / g.macro_t)
    nsteps = math.ceil(cfg.T / dt_max - 1e-9)
    nodes = int(np.prod(grid.shape))
    if nodes > cfg.budget.max_dns_nodes or nsteps > cfg.budget.max_dns_steps:
        raise DnsError(f"resolution budget exceeded: {nodes} nodes x {nsteps} steps for eps={eps:g} "
                       f"(limits {cfg.budget.max_dns_nodes} nodes, {cfg.budget.max_dns_steps} steps)")
    h = grid.h
    if np.any(h > eps / MIN_NODES_PER_PERIOD * (1 + 1e-12)) or cfg.T / nsteps > eps**cfg.k / MIN_STEPS_PER_PERIOD * (1 + 1e-12):
        raise DnsError(f"under-resolved: h={h.max():.3g}, dt={cfg.T / nsteps:.3g} for eps={eps:g}")
    return grid, nsteps


def dns_residual(cfg, eps: float, grid: BoxGrid):
    flux, reaction, density = cfg.flux, cfg.reaction, cfg.density
    k = cfg.k
    Xint = grid.interior_nodes()
    rho = density.evaluate(Xint / eps)
    yint = Xint / eps

    def face_flux(full, t):
        out = []
        for d in range(grid.dim):
            X, r, xi = grid.faces(full, d)
            a = flux.evaluate(X, t, X / eps, t / eps**k, xi)
            out.append(a[d])
        return out

    def residual(u_int, u_prev, t, dt):
        full = grid.embed(u_int)
        src = reaction.evaluate(yint, t / eps**k, u_int) / eps
        return rho * (u_int - u_prev) / dt - grid.divergence(face_flux(full, t)) - src

    return residual, face_flux


def dns_solve(cfg, eps: float, nsteps: int | None = None, grid: BoxGrid | None = None) -> DnsSolution:
    """Implicit Euler with the weighted mass ``rho(x/eps)`` and a fully implicit reaction."""
    if grid is None or nsteps is None:
        g0, n0 = dns_resolution(cfg, eps)
        grid = grid or g0
        nsteps = nsteps or n0
    residual, face_flux = dns_residual(cfg, eps, grid)
    u0 = project_initial(grid, cfg.initial, cfg.initial_projection)
    try:
        times, U, steps = implicit_euler(residual, grid, u0, cfg.T, nsteps, cfg.tol.dns)
    except NewtonFailure as exc:
        raise DnsError(f"eps={eps:g}: {exc}") from None
    sol = DnsSolution(grid, times, U, float(eps), float(cfg.k), float(cfg.p), cfg.T / nsteps, steps)
    sol.energy_terms = _energy_terms(cfg, sol, face_flux)
    return sol


def _energy_terms(cfg, sol: DnsSolution, face_flux) -> dict:
    grid, eps, k = sol.grid, sol.eps, cfg.k
    vol = grid.cell_volume()
    X = grid.nodes()
    rho = cfg.density.evaluate(X / eps)
    mass = np.array([np.sum(rho * u**2) * vol for u in sol.U])
    diss, react = [], []
    for t, u in zip(sol.times, sol.U):
        fl = face_flux(u, t)
        d = 0.0
        for ax in range(grid.dim):
            _, _, xi = grid.faces(u, ax)
            d += np.sum(fl[ax] * xi[ax]) * vol
        diss.append(d)
        react.append(np.sum(cfg.reaction.evaluate(X / eps, t / eps**k, u) * u) * vol / eps)
    return {"mass": mass, "dissipation": np.array(diss), "reaction": np.array(react)}


def energy_monitor(sol: DnsSolution) -> np.ndarray:
    """Per-step residual of the energy identity

    ``|rho^1/2 u(t)|^2 - |rho^1/2 u0|^2 + 2 int_0^t int a.Du - 2 int_0^t int (1/eps) g u``

    with the trapezoid rule in time and face sums in space.
    """
    e = sol.energy_terms
    t = sol.times
    cum = lambda f: np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(t))])  # noqa: E731
    return e["mass"] - e["mass"][0] + 2 * cum(e["dissipation"]) - 2 * cum(e["reaction"])


def apriori_monitor(sol: DnsSolution) -> dict:
    """``sup_t |u|^2_{L^2}`` and ``int_0^T |Du|^p_{L^p} dt``."""
    grid = sol.grid
    vol = grid.cell_volume()
    l2 = np.array([np.sum(u**2) * vol for u in sol.U])
    gp = np.array([np.sum(np.sum(grid.cell_gradient(u) ** 2, axis=0) ** (sol.p / 2)) * vol for u in sol.U])
    return {"sup_l2_sq": float(l2.max()), "int_grad_p": float(np.trapezoid(gp, sol.times))}


def l2_qt_error(dns: DnsSolution, macro: MacroSolution) -> float:
    """Discrete ``L^2(Q_T)`` distance after multilinear interpolation of the macro field onto the DNS nodes."""
    if dns.grid.domain != macro.grid.domain or not math.isclose(dns.times[-1], macro.times[-1], rel_tol=1e-12):
        raise ValueError("DNS and macro solutions live on different space-time domains")
    axes = [macro.times] + macro.grid.axes()
    interp = RegularGridInterpolator(axes, macro.U, method="linear")
    pts_axes = [dns.times] + dns.grid.axes()
    mesh = np.meshgrid(*pts_axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    U0 = interp(pts).reshape(dns.U.shape)
    vol = dns.grid.cell_volume()
    per_t = np.sum((dns.U - U0) ** 2, axis=tuple(range(1, dns.U.ndim))) * vol
    return float(np.sqrt(np.trapezoid(per_t, dns.times)))
