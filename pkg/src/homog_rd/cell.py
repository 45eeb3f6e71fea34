"""Corrector cell problems on the torus.

For frozen macro data ``(x, t, r, xi)`` the corrector ``pi`` solves

    transport * rho d_tau pi = div_y a(x, t, y, tau, xi + grad_y pi) + g(y, tau, r)

with ``transport = 1`` in the critical regime (space-time periodic problem)
and ``transport = 0`` otherwise.  The sub regime is solved slice by slice in
tau; the super regime uses tau-averaged coefficients and returns a field on Y.

Discretization is nodal spectral collocation.  Because the spectral
derivative annihilates Nyquist modes, the discrete operator has a small
kernel spanned by the +-1 sign patterns (constants and Nyquist modes along
each axis).  Newton steps solve ``(J + P_K) d = -F`` where ``P_K`` is the
orthogonal projector on that kernel, which keeps the linear systems regular
without changing the solution's gradient.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, gmres

from .coefficients import DensityWeight, FluxLaw, ReactionLaw, Regime
from .torus import (
    PeriodicField,
    TorusGrid,
    diff,
    diff_matrix,
    quadrature,
    tau_pairing,
    weighted_zero_mean_project,
    _wavenumbers,
    laplacian_symbol,
)


class CellSolveError(RuntimeError):
    """Newton (or the period map) failed; carries the residual history."""

    def __init__(self, message: str, history=()):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class CellSettings:
    n: int = 64
    m: int = 16
    tol: float = 1e-10
    max_iter: int = 60
    delta: float = 1e-6
    dense_limit: int = 2048
    period_tol: float = 1e-9
    max_sweeps: int = 200
    method: str = "spectral"

    def __post_init__(self):
        if self.method not in ("spectral", "period-map"):
            raise ValueError(f"unknown parabolic method {self.method!r}")


@dataclass(frozen=True)
class CellSolution:
    """Corrector ``pi`` with the parameters it was solved for and diagnostics."""

    pi: PeriodicField
    regime: Regime
    x: tuple
    t: float
    r: float
    xi: tuple
    residual: float
    history: tuple
    iterations: int
    constraint: float
    pairing: float = 0.0
    picard_steps: int = 0
    method: str = "newton"
    drift: float = 0.0
    sweeps: int = 0
    avg_taus: tuple | None = None

    @property
    def grid(self) -> TorusGrid:
        return self.pi.grid

    def matches(self, x, t, r, xi, atol=1e-14) -> bool:
        return (np.allclose(_vec(x, len(self.x)), self.x, rtol=0, atol=atol)
                and abs(float(t) - self.t) <= atol and abs(float(r) - self.r) <= atol
                and np.allclose(_vec(xi, len(self.xi)), self.xi, rtol=0, atol=atol))

    def tau_variance(self) -> float:
        if not self.grid.has_tau:
            return 0.0
        return float(np.max(np.var(self.pi.values, axis=0)))


@dataclass(frozen=True)
class LinearCellBasis:
    """Linear-case cell fields: ``chi_j`` per axis and ``w1`` per r sample."""

    x: tuple
    t: float
    chi: tuple
    r_samples: tuple = ()
    w1: tuple = ()

    def with_w1(self, r_samples, w1) -> "LinearCellBasis":
        return LinearCellBasis(self.x, self.t, self.chi, tuple(float(r) for r in r_samples), tuple(w1))


def _vec(v, N):
    return tuple(float(c) for c in np.broadcast_to(np.asarray(v, dtype=float).reshape(-1), (N,)))


# --------------------------------------------------------------------------
# kernel patterns and sparse operators


def _kernel_basis(shape: tuple, y_axes: tuple, tau_axis: int | None) -> np.ndarray:
    """Orthonormal +-1 patterns spanning the discrete kernel, shape ``(k, size)``."""
    axes = list(y_axes) + ([tau_axis] if tau_axis is not None else [])
    per_axis = []
    for ax in range(len(shape)):
        n = shape[ax]
        pats = [np.ones(n)]
        if ax in axes and n % 2 == 0 and n > 1:
            pats.append((-1.0) ** np.arange(n))
        per_axis.append(pats)
    vecs = []
    for combo in itertools.product(*per_axis):
        v = combo[0]
        for w in combo[1:]:
            v = np.multiply.outer(v, w)
        vecs.append(np.ravel(v))
    B = np.array(vecs)
    return B / np.sqrt(B.shape[1])


def _kernel_mask(shape: tuple, y_axes: tuple, tau_axis: int | None) -> np.ndarray:
    """Boolean Fourier-space mask of the kernel modes."""
    mask = np.ones(shape, dtype=bool)
    axes = list(y_axes) + ([tau_axis] if tau_axis is not None else [])
    for ax in range(len(shape)):
        n = shape[ax]
        idx = np.arange(n)
        ok = (idx == 0) | ((idx == n // 2) & (n % 2 == 0)) if ax in axes else np.ones(n, dtype=bool)
        sh = [1] * len(shape)
        sh[ax] = n
        mask &= ok.reshape(sh)
    return mask


def _remove_y_patterns(g: np.ndarray, y_axes: tuple) -> np.ndarray:
    """Drop the y sign-pattern modes of ``g`` (per tau slice)."""
    gh = np.fft.fftn(g, axes=y_axes)
    m = np.ones(g.shape, dtype=bool)
    for ax in y_axes:
        n = g.shape[ax]
        idx = np.arange(n)
        ok = (idx == 0) | ((idx == n // 2) & (n % 2 == 0))
        sh = [1] * g.ndim
        sh[ax] = n
        m &= ok.reshape(sh)
    gh[m] = 0.0
    return np.real(np.fft.ifftn(gh, axes=y_axes))


@functools.lru_cache(maxsize=16)
def _dense_y_derivatives(n: int, dim: int) -> tuple:
    """Dense spectral derivative matrices on the flattened y grid (ij order)."""
    D = diff_matrix(n)
    if dim == 1:
        return (D,)
    eye = np.eye(n)
    return (np.kron(D, eye), np.kron(eye, D))


# --------------------------------------------------------------------------
# discrete problem


class _Problem:
    """Residual, Jacobian and energy of one discrete cell problem."""

    def __init__(self, grid: TorusGrid, x, t, r, xi, flux: FluxLaw, reaction: ReactionLaw,
                 density: DensityWeight, transport: bool = False, mass: float = 0.0,
                 tau_value: float | None = None, prev: np.ndarray | None = None):
        self.grid = grid
        self.flux = flux
        self.N = grid.dim
        self.shape = grid.shape
        y, tau = grid.broadcast_nodes()
        if tau_value is not None:
            tau = np.full(self.shape, float(tau_value))
        self.y, self.tau = y, tau
        nd = len(self.shape)
        self.x = np.asarray(x, dtype=float).reshape((self.N,) + (1,) * nd)
        self.t = float(t)
        self.xi = np.asarray(xi, dtype=float).reshape((self.N,) + (1,) * nd)
        self.rho = np.broadcast_to(density.evaluate(y), self.shape)
        self.g = _remove_y_patterns(np.broadcast_to(reaction.evaluate(y, tau, r), self.shape), grid.y_axes)
        self.transport = bool(transport) and grid.has_tau
        self.mass = float(mass)
        self.prev = prev
        self.tau_axis = 0 if self.transport else None
        if self.mass == 0.0:
            self.K = _kernel_basis(self.shape, grid.y_axes, self.tau_axis)
        else:
            self.K = np.zeros((0, grid.size))

    # fields -------------------------------------------------------------
    def lam(self, pi):
        return self.xi + np.stack([diff(pi, ax) for ax in self.grid.y_axes])

    def div(self, v):
        return sum(diff(v[j], ax) for j, ax in enumerate(self.grid.y_axes))

    def flux_field(self, pi):
        return self.flux.evaluate(self.x, self.t, self.y, self.tau, self.lam(pi))

    def residual(self, pi):
        F = self.div(self.flux_field(pi)) + self.g
        if self.transport:
            F = F - self.rho * diff(pi, 0)
        if self.mass:
            F = F - self.mass * self.rho * (pi - self.prev)
        return F

    def project_off_kernel(self, v):
        if not len(self.K):
            return v
        flat = v.reshape(-1)
        return (flat - self.K.T @ (self.K @ flat)).reshape(v.shape)

    def norm(self, F) -> float:
        return float(np.sqrt(np.mean(self.project_off_kernel(F) ** 2)))

    def energy(self, pi):
        if self.transport:
            return None
        phi = self.flux.potential(self.x, self.t, self.y, self.tau, self.lam(pi))
        if phi is None:
            return None
        e = np.mean(phi) - np.mean(self.g * pi)
        if self.mass:
            e += 0.5 * self.mass * np.mean(self.rho * (pi - self.prev) ** 2)
        return float(e)

    def scale(self) -> float:
        a0 = self.flux.evaluate(self.x, self.t, self.y, self.tau, np.broadcast_to(self.xi, (self.N,) + self.shape))
        return max(1.0, float(np.sqrt(np.mean(a0**2))) * 2 * np.pi, float(np.sqrt(np.mean(self.g**2))))

    # linear algebra ---------------------------------------------------------
    def coefficients(self, pi, delta, picard=False):
        lam = self.lam(pi)
        if picard:
            a = self.flux.evaluate(self.x, self.t, self.y, self.tau, lam)
            l2 = np.sum(lam**2, axis=0)
            J = self.flux.jacobian(self.x, self.t, self.y, self.tau, lam, delta)
            fallback = np.trace(J) / self.N
            k = np.where(l2 > 1e-24, np.sum(a * lam, axis=0) / np.where(l2 > 1e-24, l2, 1.0), fallback)
            k = np.maximum(k, 1e-12 * max(1.0, float(np.max(np.abs(k)))))
            eye = np.eye(self.N).reshape((self.N, self.N) + (1,) * len(self.shape))
            return eye * k
        return self.flux.jacobian(self.x, self.t, self.y, self.tau, lam, delta)

    def solve_linear(self, A, rhs, dense_limit):
        if self.grid.size <= dense_limit:
            return self._solve_dense(A, rhs)
        return self._solve_gmres(A, rhs)

    def _dense_operator(self, A):
        """Dense matrix of ``div(A grad .) - transport rho d_tau - mass rho``."""
        ny = self.grid.n ** self.N
        Ds = _dense_y_derivatives(self.grid.n, self.N)
        m = self.shape[0] if self.grid.has_tau else 1
        Ar = A.reshape(self.N, self.N, m, ny)
        rho = np.ravel(self.rho)[:ny] if not self.grid.has_tau else np.ravel(self.rho[0])
        blocks = np.zeros((m, ny, ny))
        for a in range(m):
            for i in range(self.N):
                for j in range(self.N):
                    blocks[a] += Ds[i] @ (Ar[i, j, a][:, None] * Ds[j])
            if self.mass:
                blocks[a][np.diag_indices(ny)] -= self.mass * rho
        if m == 1:
            return blocks[0]
        L = np.zeros((m, ny, m, ny))
        for a in range(m):
            L[a, :, a, :] = blocks[a]
        if self.transport:
            Dt = diff_matrix(m)
            idx = np.arange(ny)
            L[:, idx, :, idx] -= rho[:, None, None] * Dt[None, :, :]
        return L.reshape(m * ny, m * ny)

    def _solve_dense(self, A, rhs):
        M = self._dense_operator(A)
        if len(self.K):
            M += self.K.T @ self.K
        sol = scipy.linalg.solve(M, np.ravel(rhs), check_finite=False)
        return sol.reshape(self.shape)

    def _apply(self, A, v):
        v = v.reshape(self.shape)
        out = self.div(np.einsum("ij...,j...->i...", A, np.stack([diff(v, ax) for ax in self.grid.y_axes])))
        if self.transport:
            out = out - self.rho * diff(v, 0)
        if self.mass:
            out = out - self.mass * self.rho * v
        if len(self.K):
            out = out + (self.K.T @ (self.K @ np.ravel(v))).reshape(self.shape)
        return np.ravel(out)

    def _symbol(self, A):
        shape = self.shape
        Abar = np.mean(A.reshape(self.N, self.N, -1), axis=-1)
        ks = [2 * np.pi * _wavenumbers(n) for n in shape]
        grids = np.meshgrid(*ks, indexing="ij")
        ky = [grids[ax] for ax in self.grid.y_axes]
        sym = -sum(Abar[i, j] * ky[i] * ky[j] for i in range(self.N) for j in range(self.N)).astype(complex)
        rbar = float(np.mean(self.rho))
        if self.transport:
            sym = sym - rbar * 1j * grids[0]
        if self.mass:
            sym = sym - self.mass * rbar
        if len(self.K):
            sym[_kernel_mask(shape, self.grid.y_axes, self.tau_axis)] = 1.0
        return sym

    def _solve_gmres(self, A, rhs):
        size = self.grid.size
        sym = self._symbol(A)
        op = LinearOperator((size, size), matvec=lambda v: self._apply(A, v), dtype=float)
        pre = LinearOperator(
            (size, size), dtype=float,
            matvec=lambda v: np.ravel(np.real(np.fft.ifftn(np.fft.fftn(v.reshape(self.shape)) / sym))))
        sol, info = gmres(op, np.ravel(rhs), M=pre, rtol=1e-12, atol=0.0, restart=60, maxiter=40)
        if info < 0:
            raise CellSolveError(f"GMRES breakdown (info={info})")
        return sol.reshape(self.shape)


def _newton(prob: _Problem, pi0, s: CellSettings, on_iterate=None):
    """Damped Newton with Armijo backtracking and a Picard fallback.

    ``on_iterate(pi, residual, energy)`` is called for the start and for
    every accepted iterate.
    """
    pi = np.array(pi0, dtype=float)
    F = prob.residual(pi)
    res = prob.norm(F)
    E = prob.energy(pi)
    target = s.tol * prob.scale()
    history = [res]
    picard = 0
    if on_iterate is not None:
        on_iterate(pi, res, E)
    for it in range(s.max_iter):
        if res <= target:
            return pi, history, it, picard
        accepted = False
        for use_picard in (False, True):
            A = prob.coefficients(pi, s.delta, picard=use_picard)
            d = prob.solve_linear(A, -F, s.dense_limit)
            d = prob.project_off_kernel(d)
            step, rejected = 1.0, 0
            while step > 2.0**-30:
                trial = pi + step * d
                Ft = prob.residual(trial)
                rt = prob.norm(Ft)
                Et = prob.energy(trial) if E is not None else None
                ok = np.isfinite(rt) and rt <= (1 - 1e-4 * step) * res
                if ok and Et is not None:
                    ok = Et <= E + 1e-13 * max(1.0, abs(E))
                if ok:
                    accepted = True
                    break
                rejected += 1
                # after three rejected trial steps try a frozen-coefficient step first
                if rejected == 3 and not use_picard:
                    break
                step *= 0.5
            if accepted:
                picard += int(use_picard)
                break
        if not accepted:
            raise CellSolveError(f"line search failed at iteration {it}, residual {res:.3e}", history)
        pi, F, res, E = trial, Ft, rt, Et
        history.append(res)
        if on_iterate is not None:
            on_iterate(pi, res, E)
    if res <= target:
        return pi, history, s.max_iter, picard
    raise CellSolveError(f"cell Newton did not converge in {s.max_iter} iterations, residual {res:.3e}",
                         history)


def _initial_guess(prob: _Problem, delta: float) -> np.ndarray:
    """Solve the problem with p = 2 weights, then rescale its gradient magnitude."""
    N, shape = prob.N, prob.shape
    flux = prob.flux
    if flux.kind == "linear-matrix":
        return np.zeros(shape)
    if flux.kind == "weighted-p-laplacian":
        w = flux.weight(prob.x, prob.t, prob.y, prob.tau)
        A = np.eye(N).reshape((N, N) + (1,) * len(shape)) * w
    else:
        A = flux.jacobian(prob.x, prob.t, prob.y, prob.tau, np.zeros((N,) + shape), delta)
        A = A + np.eye(N).reshape((N, N) + (1,) * len(shape)) * 1e-12
    rhs = -(prob.div(np.einsum("ij...,j...->i...", A, np.broadcast_to(prob.xi, (N,) + shape))) + prob.g)
    if prob.mass:
        rhs = rhs + prob.mass * prob.rho * prob.prev
    pil = prob.project_off_kernel(prob.solve_linear(A, rhs, 2048))
    if flux.kind != "weighted-p-laplacian":
        return pil
    lam = prob.lam(pil)
    mag = np.sqrt(np.sum(lam**2, axis=0))
    target = lam * np.where(mag > 0, mag, 1.0) ** (1.0 / (flux.p - 1) - 1.0)
    # least-squares potential of the rescaled gradient
    ax = prob.grid.y_axes
    src = prob.div(target - prob.xi)
    sym = laplacian_symbol(prob.grid)
    inv = np.zeros_like(sym)
    inv[sym != 0] = 1 / sym[sym != 0]
    if prob.grid.has_tau:
        inv = inv[None]
    return np.real(np.fft.ifftn(np.fft.fftn(src, axes=ax) * inv, axes=ax))


# --------------------------------------------------------------------------
# public solvers


def _effective_laws(flux, reaction, regime: Regime, m: int):
    if regime is Regime.SUPER and (flux.depends_on_tau or reaction.depends_on_tau):
        taus = np.arange(m) / m
        return flux.tau_averaged(taus), reaction.tau_averaged(taus), tuple(taus)
    return flux, reaction, None


def _tau_dependent(flux, reaction) -> bool:
    return bool(flux.depends_on_tau or reaction.depends_on_tau)


def _finish(pi, grid, rho_vals, regime, x, t, r, xi, history, iters, picard, method="newton",
            drift=0.0, sweeps=0, avg_taus=None) -> CellSolution:
    pi = weighted_zero_mean_project(pi, rho_vals, grid)
    constraint = float(np.max(np.abs(np.atleast_1d(quadrature(rho_vals * pi, grid, axes="y")))))
    pairing = tau_pairing(pi, pi, rho_vals, grid) if grid.has_tau else 0.0
    N = grid.dim
    return CellSolution(PeriodicField(grid, pi), regime, _vec(x, N), float(t), float(r), _vec(xi, N),
                        history[-1] if history else 0.0, tuple(history), iters, constraint, pairing,
                        picard, method, drift, sweeps, avg_taus)


def solve_cell_elliptic(x, t, r, xi, flux: FluxLaw, reaction: ReactionLaw, density: DensityWeight,
                        regime: Regime | str = Regime.SUB, settings: CellSettings = CellSettings(),
                        guess=None) -> CellSolution:
    """Corrector for the sub or super regime.

    Sub regime: independent y-problems per tau slice (one slice if nothing
    depends on tau).  Super regime: a single y-problem with tau-averaged
    flux and reaction.
    """
    regime = Regime(regime)
    if regime is Regime.CRITICAL:
        raise ValueError("critical regime requires solve_cell_parabolic_periodic")
    s = settings
    flux_e, reaction_e, avg = _effective_laws(flux, reaction, regime, s.m)
    ygrid = TorusGrid(flux.dim, s.n)
    if regime is Regime.SUB and _tau_dependent(flux, reaction):
        grid = TorusGrid(flux.dim, s.n, s.m)
        taus = grid.tau_nodes()
    else:
        grid = ygrid
        taus = [0.0]
    slices, history, iters, picard = [], [], 0, 0
    for j, tv in enumerate(taus):
        prob = _Problem(ygrid, x, t, r, xi, flux_e, reaction_e, density, tau_value=tv)
        if guess is not None:
            g0 = np.asarray(guess, dtype=float)
            p0 = g0[j] if grid.has_tau and g0.ndim > flux.dim else g0
        else:
            p0 = _initial_guess(prob, s.delta)
        pi, h, it, pc = _newton(prob, prob.project_off_kernel(p0), s)
        slices.append(pi)
        history = h if not history or h[-1] > history[-1] else history
        iters = max(iters, it)
        picard += pc
    pi = np.stack(slices) if grid.has_tau else slices[0]
    rho_vals = density.evaluate(ygrid.y_nodes())
    return _finish(pi, grid, np.broadcast_to(rho_vals, ygrid.shape), regime, x, t, r, xi, history, iters,
                   picard, avg_taus=avg)


def solve_cell_parabolic_periodic(x, t, r, xi, flux: FluxLaw, reaction: ReactionLaw,
                                  density: DensityWeight, settings: CellSettings = CellSettings(),
                                  guess=None) -> CellSolution:
    """Tau-periodic corrector of the critical regime on Y x Z.

    ``settings.method='spectral'`` solves the space-time collocation system
    with a Fourier derivative in tau.  ``'period-map'`` integrates one period
    with implicit Euler and iterates the period map to its fixed point.
    """
    s = settings
    grid = TorusGrid(flux.dim, s.n, s.m)
    ygrid = grid.without_tau()
    rho_vals = np.broadcast_to(density.evaluate(ygrid.y_nodes()), ygrid.shape)
    if s.method == "period-map":
        return _period_map(x, t, r, xi, flux, reaction, density, grid, rho_vals, s, guess)
    prob = _Problem(grid, x, t, r, xi, flux, reaction, density, transport=True)
    p0 = np.zeros(grid.shape) if guess is None else np.broadcast_to(np.asarray(guess, float), grid.shape)
    if guess is None and flux.kind != "linear-matrix":
        # start from the elliptic corrector of the tau-averaged data
        p0 = np.broadcast_to(solve_cell_elliptic(x, t, r, xi, flux, reaction, density, Regime.SUPER,
                                                 s).pi.values, grid.shape)
    pi, history, iters, picard = _newton(prob, prob.project_off_kernel(np.array(p0)), s)
    return _finish(pi, grid, rho_vals, Regime.CRITICAL, x, t, r, xi, history, iters, picard,
                   method="spectral")


def _period_map(x, t, r, xi, flux, reaction, density, grid, rho_vals, s: CellSettings, guess):
    ygrid = grid.without_tau()
    m = grid.m
    dtau = 1.0 / m
    taus = grid.tau_nodes()
    start = np.zeros(ygrid.shape) if guess is None else np.asarray(guess, dtype=float).reshape(ygrid.shape)
    history, total_iters, picard = [], 0, 0
    for sweep in range(1, s.max_sweeps + 1):
        cur = start
        traj = []
        for j in range(m):
            tv = taus[(j + 1) % m] if j + 1 < m else 1.0
            prob = _Problem(ygrid, x, t, r, xi, flux, reaction, density, mass=1.0 / dtau, tau_value=tv,
                            prev=cur)
            cur, h, it, pc = _newton(prob, cur, s)
            total_iters += it
            picard += pc
            traj.append(cur)
        gap = float(np.sqrt(np.mean(rho_vals * (cur - start) ** 2)))
        history.append(gap)
        start = cur
        if gap < s.period_tol:
            # slice j holds tau = (j+1)/m; reorder so index 0 is tau = 0 (= tau 1)
            pi = np.stack([traj[-1]] + traj[:-1])
            drift = float(np.ptp(np.atleast_1d(quadrature(rho_vals * pi, grid, axes="y"))))
            return _finish(pi, grid, rho_vals, Regime.CRITICAL, x, t, r, xi, history, total_iters, picard,
                           method="period-map", drift=drift, sweeps=sweep)
    raise CellSolveError(f"periodic steady state not reached after {s.max_sweeps} sweeps "
                         f"(gap {history[-1]:.3e})", history)


def solve_cell(x, t, r, xi, flux, reaction, density, regime, settings: CellSettings = CellSettings(),
               guess=None) -> CellSolution:
    """Dispatch on the regime.

    In the critical regime with tau-independent data the unique periodic
    solution is the stationary one, so the elliptic solve is used.
    """
    regime = Regime(regime)
    if regime is Regime.CRITICAL:
        if not _tau_dependent(flux, reaction):
            sol = solve_cell_elliptic(x, t, r, xi, flux, reaction, density, Regime.SUB, settings, guess)
            return _retag(sol, Regime.CRITICAL)
        return solve_cell_parabolic_periodic(x, t, r, xi, flux, reaction, density, settings, guess)
    return solve_cell_elliptic(x, t, r, xi, flux, reaction, density, regime, settings, guess)


def _retag(sol: CellSolution, regime: Regime) -> CellSolution:
    return replace(sol, regime=regime)


def solve_chi(x, t, flux: FluxLaw, density: DensityWeight, regime, settings: CellSettings = CellSettings()):
    """``chi_j`` for each axis: the corrector with ``xi = e_j`` and no reaction."""
    if flux.kind != "linear-matrix":
        raise ValueError("solve_chi requires a linear-matrix flux")
    from .coefficients import BUILTIN_REACTIONS

    zero = BUILTIN_REACTIONS["zero"](flux.dim)
    N = flux.dim
    return tuple(solve_cell(x, t, 0.0, np.eye(N)[j], flux, zero, density, regime, settings) for j in range(N))


def solve_w1(x, t, r, flux: FluxLaw, reaction: ReactionLaw, density: DensityWeight, regime,
             settings: CellSettings = CellSettings()) -> CellSolution:
    """``w1``: the corrector with ``xi = 0`` driven by ``g(., ., r)``."""
    if flux.kind != "linear-matrix":
        raise ValueError("solve_w1 requires a linear-matrix flux")
    return solve_cell(x, t, r, np.zeros(flux.dim), flux, reaction, density, regime, settings)


def solve_linear_basis(x, t, r_samples, flux, reaction, density, regime,
                       settings: CellSettings = CellSettings()) -> LinearCellBasis:
    chi = solve_chi(x, t, flux, density, regime, settings)
    w1 = [solve_w1(x, t, r, flux, reaction, density, regime, settings) for r in r_samples]
    return LinearCellBasis(_vec(x, flux.dim), float(t), chi).with_w1(r_samples, w1)


def cell_flux_average(sol: CellSolution, flux: FluxLaw) -> np.ndarray:
    """``int a(x, t, y, tau, xi + grad pi)`` over the solution grid."""
    grid = sol.grid
    law = flux.tau_averaged(np.asarray(sol.avg_taus)) if sol.avg_taus is not None else flux
    y, tau = grid.broadcast_nodes()
    nd = len(grid.shape)
    x = np.asarray(sol.x).reshape((grid.dim,) + (1,) * nd)
    lam = np.asarray(sol.xi).reshape((grid.dim,) + (1,) * nd) + np.stack(
        [diff(sol.pi.values, ax) for ax in grid.y_axes])
    a = law.evaluate(x, sol.t, y, tau, lam)
    return np.array([quadrature(a[j], grid) for j in range(grid.dim)])


def cell_reaction_average(sol: CellSolution, reaction: ReactionLaw) -> float:
    """``int d_r g(y, tau, r) pi`` over the solution grid."""
    grid = sol.grid
    law = reaction.tau_averaged(np.asarray(sol.avg_taus)) if sol.avg_taus is not None else reaction
    y, tau = grid.broadcast_nodes()
    return float(quadrature(law.dr(y, tau, sol.r) * sol.pi.values, grid))


def pairing_residual(sol: CellSolution, density: DensityWeight) -> float:
    if not sol.grid.has_tau:
        return 0.0
    rho = density.evaluate(sol.grid.without_tau().y_nodes())
    return abs(tau_pairing(sol.pi.values, sol.pi.values, rho, sol.grid))


def harmonic_mean(b, n: int = 1 << 14) -> float:
    """``(int_0^1 dy / b(y))^{-1}`` by the periodic trapezoid rule."""
    y = np.arange(n) / n
    return 1.0 / float(np.mean(1.0 / np.asarray(b(y), dtype=float)))


__all__ = [
    "CellSettings", "CellSolution", "CellSolveError", "LinearCellBasis", "solve_cell",
    "solve_cell_elliptic", "solve_cell_parabolic_periodic", "solve_chi", "solve_w1",
    "solve_linear_basis", "cell_flux_average", "cell_reaction_average", "pairing_residual", "harmonic_mean",
]
