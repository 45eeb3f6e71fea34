"""Conservative finite differences on boxes with homogeneous Dirichlet data, and a colored-Jacobian Newton step.

Faces along axis ``d`` carry ``r`` (average of the two nodes) and ``xi``
(difference along ``d``; transverse components are averages of central
differences).  The residual at a node depends on its 3^N neighbourhood
only, so 3^N colors recover the sparse Jacobian from as many
Jacobian-vector products.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


class NewtonFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class BoxGrid:
    """Uniform node grid on a box with ``M`` intervals per axis."""

    domain: tuple
    M: tuple

    @property
    def dim(self) -> int:
        return len(self.M)

    @property
    def h(self) -> np.ndarray:
        return np.array([(hi - lo) / m for (lo, hi), m in zip(self.domain, self.M)])

    @property
    def shape(self) -> tuple:
        return tuple(m + 1 for m in self.M)

    @property
    def interior_shape(self) -> tuple:
        return tuple(m - 1 for m in self.M)

    def axes(self) -> list:
        return [np.linspace(lo, hi, m + 1) for (lo, hi), m in zip(self.domain, self.M)]

    def nodes(self) -> np.ndarray:
        return np.array(np.meshgrid(*self.axes(), indexing="ij"))

    def interior_nodes(self) -> np.ndarray:
        X = self.nodes()
        return X[(slice(None),) + (slice(1, -1),) * self.dim]

    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def embed(self, u_int: np.ndarray) -> np.ndarray:
        full = np.zeros(self.shape)
        full[(slice(1, -1),) * self.dim] = u_int
        return full

    def interior(self, u_full: np.ndarray) -> np.ndarray:
        return u_full[(slice(1, -1),) * self.dim]

    # faces -----------------------------------------------------------------
    def faces(self, u_full: np.ndarray, axis: int):
        """``(x_face, r_face, xi_face)`` for the faces normal to ``axis``.

        Faces span all intervals along ``axis`` and the interior rows of the
        other axes.  Shapes: ``x`` and ``xi`` are ``(N, *F)``, ``r`` is ``F``.
        """
        N, h = self.dim, self.h
        lo = [slice(1, -1)] * N
        hi = [slice(1, -1)] * N
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        ua, ub = u_full[tuple(lo)], u_full[tuple(hi)]
        r = 0.5 * (ua + ub)
        xi = []
        for d in range(N):
            if d == axis:
                xi.append((ub - ua) / h[d])
                continue
            # transverse derivative: average the central differences of the two nodes
            def shifted(base, s):
                sl = list(base)
                sl[d] = slice(1 + s, self.M[d] + s)
                return u_full[tuple(sl)]
            xi.append((shifted(lo, 1) - shifted(lo, -1) + shifted(hi, 1) - shifted(hi, -1)) / (4 * h[d]))
        axes = self.axes()
        coords = []
        for d in range(N):
            a = axes[d]
            coords.append(0.5 * (a[:-1] + a[1:]) if d == axis else a[1:-1])
        X = np.array(np.meshgrid(*coords, indexing="ij"))
        return X, r, np.array(xi)

    def divergence(self, face_fluxes) -> np.ndarray:
        """Conservative divergence on interior nodes from per-axis face fluxes."""
        out = np.zeros(self.interior_shape)
        for d, F in enumerate(face_fluxes):
            a = [slice(None)] * self.dim
            b = [slice(None)] * self.dim
            a[d] = slice(1, None)
            b[d] = slice(0, -1)
            out += (F[tuple(a)] - F[tuple(b)]) / self.h[d]
        return out

    def central_gradient(self, u_full: np.ndarray) -> np.ndarray:
        """Central differences at interior nodes, shape ``(N, *interior)``."""
        out = []
        for d in range(self.dim):
            a = [slice(1, -1)] * self.dim
            b = [slice(1, -1)] * self.dim
            a[d] = slice(2, None)
            b[d] = slice(0, -2)
            out.append((u_full[tuple(a)] - u_full[tuple(b)]) / (2 * self.h[d]))
        return np.array(out)

    def cell_gradient(self, u_full: np.ndarray) -> np.ndarray:
        """Gradient at cell centres (averaged differences), shape ``(N, *M)``."""
        N = self.dim
        out = []
        for d in range(N):
            acc = 0.0
            for corner in itertools.product((0, 1), repeat=N - 1):
                sl_hi, sl_lo, k = [], [], 0
                for e in range(N):
                    if e == d:
                        sl_hi.append(slice(1, None))
                        sl_lo.append(slice(0, -1))
                    else:
                        c = corner[k]
                        k += 1
                        s = slice(c, self.M[e] + c)
                        sl_hi.append(s)
                        sl_lo.append(s)
                acc = acc + (u_full[tuple(sl_hi)] - u_full[tuple(sl_lo)])
            out.append(acc / (2 ** (N - 1) * self.h[d]))
        return np.array(out)

    def l2_norm_sq(self, u_full: np.ndarray, weight=None) -> float:
        w = 1.0 if weight is None else weight
        return float(np.sum(w * u_full**2) * self.cell_volume())


def project_initial(grid: BoxGrid, u0, mode: str = "nodal", sub: int = 16) -> np.ndarray:
    """Initial datum on the nodes: point values, or averages over the node's dual cell."""
    if mode == "nodal":
        u = np.asarray(u0(grid.nodes()), dtype=float)
    else:
        offs = (np.arange(sub) + 0.5) / sub - 0.5
        X = grid.nodes()
        u = np.zeros(grid.shape)
        for o in itertools.product(offs, repeat=grid.dim):
            shift = (np.array(o) * grid.h).reshape((grid.dim,) + (1,) * grid.dim)
            u += np.asarray(u0(X + shift), dtype=float)
        u /= sub**grid.dim
    u = np.array(np.broadcast_to(u, grid.shape))
    for d in range(grid.dim):
        idx = [slice(None)] * grid.dim
        idx[d] = 0
        u[tuple(idx)] = 0.0
        idx[d] = -1
        u[tuple(idx)] = 0.0
    return u


# --------------------------------------------------------------------------
# colored Jacobian and Newton


class ColoredJacobian:
    """Sparse Jacobian of a 3^N-stencil residual from 3^N central-difference JVPs."""

    def __init__(self, shape: tuple):
        self.shape = tuple(shape)
        N = len(shape)
        idx = np.indices(shape)
        self.color = np.ravel(sum((idx[d] % 3) * 3**d for d in range(N)))
        self.ncolors = 3**N
        size = int(np.prod(shape))
        rows, cols = [], []
        flat = np.arange(size).reshape(shape)
        for off in itertools.product((-1, 0, 1), repeat=N):
            src = [slice(max(0, -o), s - max(0, o)) for o, s in zip(off, shape)]
            dst = [slice(max(0, o), s - max(0, -o)) for o, s in zip(off, shape)]
            cols.append(np.ravel(flat[tuple(src)]))
            rows.append(np.ravel(flat[tuple(dst)]))
        self.rows = np.concatenate(rows)
        self.cols = np.concatenate(cols)
        self.size = size

    def __call__(self, fun, u: np.ndarray) -> sp.csc_matrix:
        h = 1e-6 * (1.0 + float(np.max(np.abs(u)))) if u.size else 1e-6
        JV = np.empty((self.ncolors, self.size))
        uf = np.ravel(u)
        for c in range(self.ncolors):
            v = (self.color == c).astype(float)
            fp = np.ravel(fun((uf + h * v).reshape(self.shape)))
            fm = np.ravel(fun((uf - h * v).reshape(self.shape)))
            JV[c] = (fp - fm) / (2 * h)
        vals = JV[self.color[self.cols], self.rows]
        return sp.csc_matrix((vals, (self.rows, self.cols)), shape=(self.size, self.size))


@dataclass
class NewtonResult:
    u: np.ndarray
    iterations: int
    residual: float
    history: list


def newton_solve(fun, u0: np.ndarray, jac: ColoredJacobian, tol: float, scale: float,
                 max_iter: int = 30) -> NewtonResult:
    """Newton with backtracking on the RMS residual.

    Converged when ``rms(F) * scale <= tol * (1 + rms(u))``; ``scale`` is
    the time step, so the test is in units of the unknown.
    """
    u = np.array(u0, dtype=float)
    F = fun(u)
    res = float(np.sqrt(np.mean(F**2))) if F.size else 0.0
    history = [res]
    for it in range(max_iter + 1):
        unorm = float(np.sqrt(np.mean(u**2))) if u.size else 0.0
        if res * scale <= tol * (1.0 + unorm):
            return NewtonResult(u, it, res, history)
        if it == max_iter:
            break
        J = jac(fun, u)
        try:
            d = splu(J).solve(-np.ravel(F)).reshape(u.shape)
        except RuntimeError as exc:
            raise NewtonFailure(f"singular Jacobian: {exc}") from None
        step = 1.0
        while True:
            trial = u + step * d
            Ft = fun(trial)
            rt = float(np.sqrt(np.mean(Ft**2)))
            if np.isfinite(rt) and rt <= (1 - 1e-4 * step) * res:
                break
            step *= 0.5
            if step < 1e-4:
                # accept tiny steps only when already at round-off level
                if np.isfinite(rt) and rt * scale <= 10 * tol * (1.0 + unorm):
                    break
                raise NewtonFailure(f"line search failed at iteration {it}, residual {res:.3e}")
        u, F, res = trial, Ft, rt
        history.append(res)
    raise NewtonFailure(f"Newton did not converge in {max_iter} iterations, residual {res:.3e}")


@dataclass
class StepRecord:
    t: float
    newton_iterations: int
    residual: float
    substeps: int


def implicit_euler(residual, grid: BoxGrid, u_init_full: np.ndarray, T: float, nsteps: int, tol: float,
                   max_halvings: int = 6, max_iter: int = 30, on_step=None):
    """Integrate ``residual(u_new_int, u_old_int, t_new, dt) = 0`` with step halving on failure.

    Returns ``(times, states, records)``; ``states[n]`` is the full nodal field.
    """
    jac = ColoredJacobian(grid.interior_shape)
    dt = T / nsteps
    times = [0.0]
    states = [np.array(u_init_full)]
    records = []
    u = grid.interior(u_init_full).copy()
    for n in range(nsteps):
        t0 = n * dt
        for level in range(max_halvings + 1):
            sub = 2**level
            try:
                v, iters, res = u, 0, 0.0
                for s in range(sub):
                    tau = dt / sub
                    tn = t0 + (s + 1) * tau
                    prev = v
                    out = newton_solve(lambda w: residual(w, prev, tn, tau), prev, jac, tol, tau, max_iter)
                    v, iters, res = out.u, max(iters, out.iterations), out.residual
                break
            except NewtonFailure as exc:
                if level == max_halvings:
                    raise NewtonFailure(f"step {n + 1} at t={t0 + dt:.6g} failed after {max_halvings} "
                                        f"halvings: {exc}") from None
        u = v
        times.append((n + 1) * dt)
        states.append(grid.embed(u))
        records.append(StepRecord((n + 1) * dt, iters, res, sub))
        if on_step is not None:
            on_step(n + 1, states[-1])
    return np.array(times), np.array(states), records
