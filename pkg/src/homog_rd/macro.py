"""Homogenized problem ``u_t = Div q(x, t, u, Du) + q0(x, t, u, Du)`` on a box, zero Dirichlet data."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._fd import BoxGrid, ColoredJacobian, NewtonFailure, StepRecord, implicit_euler, newton_solve, project_initial
from .effective import EffectiveLaw, PartialTableError


class MacroSolveError(RuntimeError):
    pass


@dataclass
class MacroSolution:
    grid: BoxGrid
    times: np.ndarray
    U: np.ndarray
    steps: list = field(default_factory=list)
    clamps: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.U[-1]

    def norms(self, p: float = 2.0) -> dict:
        """``sup_t |u|^2_{L^2}``, ``int |Du|^p_{L^p} dt`` and the discrete ``L^2(Q_T)`` norm."""
        return _norms(self.grid, self.times, self.U, p)

    def newton_converged(self) -> bool:
        return all(np.isfinite(s.residual) for s in self.steps)


def _norms(grid: BoxGrid, times, U, p):
    vol = grid.cell_volume()
    l2 = np.array([np.sum(u**2) * vol for u in U])
    grad = np.array([np.sum(np.sum(grid.cell_gradient(u) ** 2, axis=0) ** (p / 2)) * vol for u in U])
    return {"sup_l2_sq": float(l2.max()), "int_grad_p": float(np.trapezoid(grad, times)),
            "l2_qt": float(np.sqrt(np.trapezoid(l2, times)))}


def macro_residual(eff: EffectiveLaw, grid: BoxGrid):
    """Residual of one implicit Euler step on interior nodes."""
    Xint = grid.interior_nodes()
    Xn = Xint.reshape(grid.dim, -1)

    def residual(u_int, u_prev, t, dt):
        full = grid.embed(u_int)
        fluxes = []
        for d in range(grid.dim):
            X, r, xi = grid.faces(full, d)
            shp = r.shape
            q = eff.q(X.reshape(grid.dim, -1), t, r.ravel(), xi.reshape(grid.dim, -1))
            fluxes.append(q[d].reshape(shp))
        Du = grid.central_gradient(full).reshape(grid.dim, -1)
        src = eff.q0(Xn, t, u_int.ravel(), Du).reshape(u_int.shape)
        return (u_int - u_prev) / dt - grid.divergence(fluxes) - src

    return residual


def macro_step(u_n: np.ndarray, dt: float, eff: EffectiveLaw, grid: BoxGrid, t_new: float, tol: float = 1e-10,
               max_halvings: int = 6):
    """Advance the full nodal field ``u_n`` by one implicit Euler step.

    Returns ``(u_new_full, StepRecord)``.  On Newton failure the step is
    split into 2, 4, ... substeps, up to ``max_halvings`` times.
    """
    res = macro_residual(eff, grid)
    jac = ColoredJacobian(grid.interior_shape)
    u = grid.interior(u_n)
    t0 = t_new - dt
    for level in range(max_halvings + 1):
        sub = 2**level
        try:
            v, iters, r = u, 0, 0.0
            for s in range(sub):
                h = dt / sub
                prev = v
                out = newton_solve(lambda w: res(w, prev, t0 + (s + 1) * h, h), prev, jac, tol, h)
                v, iters, r = out.u, max(iters, out.iterations), out.residual
            return grid.embed(v), StepRecord(t_new, iters, r, sub)
        except NewtonFailure as exc:
            last = exc
    raise MacroSolveError(f"macro step to t={t_new:.6g} failed after {max_halvings} halvings: {last}")


def macro_grid(cfg) -> BoxGrid:
    return BoxGrid(tuple(cfg.domain), (cfg.grids.macro_x,) * cfg.dim)


def solve_macro(cfg, eff: EffectiveLaw, u_init: np.ndarray | None = None, nsteps: int | None = None,
                grid: BoxGrid | None = None) -> MacroSolution:
    """Full implicit Euler trajectory of the homogenized problem on ``[0, T]``."""
    if eff.partial:
        raise PartialTableError(f"effective table is partial ({len(eff.failures)} failed cell solves)")
    grid = grid or macro_grid(cfg)
    u0 = project_initial(grid, cfg.initial, cfg.initial_projection) if u_init is None else np.array(u_init)
    before = eff.clamp_count
    try:
        times, U, steps = implicit_euler(macro_residual(eff, grid), grid, u0, cfg.T,
                                         nsteps or cfg.grids.macro_t, cfg.tol.macro)
    except NewtonFailure as exc:
        raise MacroSolveError(str(exc)) from None
    return MacroSolution(grid, times, U, steps, eff.clamp_count - before)


def uniqueness_probe(cfg, eff: EffectiveLaw, eta: float = 1e-6, seed: int = 0, nsteps: int | None = None,
                     grid: BoxGrid | None = None) -> dict:
    """Re-solve from a perturbed initial datum and from a perturbed first Newton iterate.

    For a linear law the final divergence must scale linearly with ``eta``;
    for nonlinear laws the report is informational.
    """
    grid = grid or macro_grid(cfg)
    rng = np.random.default_rng(seed)
    base = solve_macro(cfg, eff, nsteps=nsteps, grid=grid)
    u0 = base.U[0]
    pert = grid.embed(rng.standard_normal(grid.interior_shape))
    pert /= max(np.sqrt(grid.l2_norm_sq(pert)), 1e-300)

    def divergence(sol):
        return float(np.sqrt(grid.l2_norm_sq(sol.final - base.final)))

    out = {"eta": eta, "linear": eff.kind == "linear"}
    if eta == 0.0:
        out.update(data_divergence=0.0, path_divergence=0.0)
        return out
    sol = solve_macro(cfg, eff, u_init=u0 + eta * pert, nsteps=nsteps, grid=grid)
    out["data_divergence"] = divergence(sol)
    out["data_constant"] = out["data_divergence"] / eta

    # perturbed Newton path: each step starts from a shifted iterate
    res = macro_residual(eff, grid)
    jac = ColoredJacobian(grid.interior_shape)
    n = nsteps or cfg.grids.macro_t
    dt = cfg.T / n
    u = grid.interior(u0)
    for k in range(n):
        prev = u
        start = prev + eta * grid.interior(pert)
        u = newton_solve(lambda w: res(w, prev, (k + 1) * dt, dt), start, jac, cfg.tol.macro, dt).u
    out["path_divergence"] = float(np.sqrt(grid.l2_norm_sq(grid.embed(u) - base.final)))
    return out
