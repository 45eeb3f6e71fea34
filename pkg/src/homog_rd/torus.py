"""Spectral calculus on the periodic cell Y = (0,1)^N and on Y x Z.

Arrays carry an optional leading tau axis followed by ``dim`` y axes in
``ij`` order, i.e. ``field.shape == grid.shape``.  Vector fields put the
component first: ``(dim, *grid.shape)``.

All derivatives are trigonometric (FFT) derivatives.  On even grids the
Nyquist mode of each axis is annihilated by the derivative along that axis,
which keeps ``D`` real and exactly antisymmetric; the Laplacian used by
:func:`poisson_solve_periodic` is ``div(grad(.))`` with the same convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


FREDHOLM_TOL = 1e-10


class FredholmError(ValueError):
    """Right-hand side of a periodic Poisson problem is not centered."""


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid with ``n`` nodes per y axis and ``m`` tau slices."""

    dim: int
    n: int
    m: int | None = None

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dim}")
        if not _is_pow2(self.n):
            raise ValueError(f"cell resolution must be a power of two, got {self.n}")
        if self.m is not None and not _is_pow2(self.m):
            raise ValueError(f"tau resolution must be a power of two, got {self.m}")

    @property
    def has_tau(self) -> bool:
        return self.m is not None

    @property
    def shape_y(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return ((self.m,) if self.has_tau else ()) + self.shape_y

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def y_axes(self) -> tuple[int, ...]:
        off = 1 if self.has_tau else 0
        return tuple(range(off, off + self.dim))

    def y_nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(dim, *shape_y)``."""
        s = np.arange(self.n) / self.n
        return np.array(np.meshgrid(*([s] * self.dim), indexing="ij"))

    def tau_nodes(self) -> np.ndarray:
        if not self.has_tau:
            return np.zeros(1)
        return np.arange(self.m) / self.m

    def broadcast_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        """``(y, tau)`` broadcast to the full grid shape.

        ``y`` has shape ``(dim, *shape)`` and ``tau`` has shape ``shape``.
        """
        y = self.y_nodes()
        if not self.has_tau:
            return y, np.zeros(self.shape_y)
        tau = self.tau_nodes().reshape((self.m,) + (1,) * self.dim)
        y = np.broadcast_to(y[:, None], (self.dim,) + self.shape)
        return y, np.broadcast_to(tau, self.shape)

    def without_tau(self) -> "TorusGrid":
        return TorusGrid(self.dim, self.n)


@dataclass(frozen=True)
class PeriodicField:
    """Nodal values on a :class:`TorusGrid`."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"field shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class PotentialPair:
    """Potential ``R`` with ``Laplace_y R = g`` and ``G = grad_y R``.

    Arrays are indexed ``[r_index, ...grid]``; ``G`` and ``dG_dr`` carry the
    vector component right after the r index.
    """

    grid: TorusGrid
    r_samples: np.ndarray
    R: np.ndarray
    G: np.ndarray
    dG_dr: np.ndarray
    h_r: np.ndarray

    def bound_constant(self) -> float:
        """Smallest C with ``|G| <= C |r|`` over the samples."""
        mag = np.sqrt(np.sum(self.G**2, axis=1))
        ratio = [mag[i].max() / abs(r) for i, r in enumerate(self.r_samples) if r != 0]
        return float(max(ratio)) if ratio else 0.0

    def lipschitz_constant(self) -> float:
        """Max of ``|d_r G|`` over the samples."""
        return float(np.sqrt(np.sum(self.dG_dr**2, axis=1)).max())


# --------------------------------------------------------------------------
# spectral primitives


def _wavenumbers(n: int) -> np.ndarray:
    k = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    return k


def diff(u: np.ndarray, axis: int) -> np.ndarray:
    """Spectral derivative along one periodic unit-length axis."""
    n = u.shape[axis]
    if n == 1:
        return np.zeros_like(u)
    shape = [1] * u.ndim
    shape[axis] = n
    ik = (2j * np.pi * _wavenumbers(n)).reshape(shape)
    return np.real(np.fft.ifft(ik * np.fft.fft(u, axis=axis), axis=axis))


def diff_matrix(n: int) -> np.ndarray:
    """Real antisymmetric matrix of :func:`diff` on ``n`` nodes."""
    return diff(np.eye(n), axis=0)


def grad_y(u: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return np.stack([diff(u, ax) for ax in grid.y_axes])


def div_y(v: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return sum(diff(v[j], ax) for j, ax in enumerate(grid.y_axes))


def diff_tau(u: np.ndarray, grid: TorusGrid) -> np.ndarray:
    if not grid.has_tau:
        return np.zeros_like(u)
    return diff(u, 0)


def laplacian_symbol(grid: TorusGrid) -> np.ndarray:
    """Fourier symbol of ``div_y(grad_y(.))`` over the y axes, shape ``shape_y``."""
    k = _wavenumbers(grid.n)
    ks = np.meshgrid(*([k] * grid.dim), indexing="ij")
    return -sum((2 * np.pi * kj) ** 2 for kj in ks)


def laplacian_y(u: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return div_y(grad_y(u, grid), grid)


def quadrature(f: np.ndarray, grid: TorusGrid, axes: str = "all") -> np.ndarray | float:
    """Periodic trapezoid rule.

    ``axes='all'`` integrates over Y (and Z when present); ``axes='y'`` keeps
    the tau axis.
    """
    f = np.asarray(f, dtype=float)
    if axes == "y":
        nd = grid.dim
    elif axes == "all":
        nd = len(grid.shape)
    else:
        raise ValueError(f"unknown axes selector {axes!r}")
    out = np.mean(f, axis=tuple(range(f.ndim - nd, f.ndim)))
    return float(out) if np.ndim(out) == 0 else out


def band_limit(u: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
    """Remove every Fourier mode whose index is Nyquist along one of ``axes``."""
    uh = np.fft.fftn(u, axes=axes)
    for ax in axes:
        n = u.shape[ax]
        if n % 2 == 0 and n > 1:
            idx = [slice(None)] * u.ndim
            idx[ax] = n // 2
            uh[tuple(idx)] = 0.0
    return np.real(np.fft.ifftn(uh, axes=axes))


# --------------------------------------------------------------------------
# Poisson solve, potentials, projection


def poisson_solve_periodic(g: np.ndarray, grid: TorusGrid, tol: float = FREDHOLM_TOL) -> np.ndarray:
    """Zero-mean ``R`` with ``div_y grad_y R = g`` per tau slice.

    Raises :class:`FredholmError` when a slice of ``g`` has nonzero mean
    beyond ``tol * max(1, max|g|)``.
    """
    g = np.asarray(g, dtype=float)
    means = np.atleast_1d(quadrature(g, grid, axes="y"))
    scale = max(1.0, float(np.max(np.abs(g))) if g.size else 1.0)
    worst = float(np.max(np.abs(means)))
    if worst > tol * scale:
        raise FredholmError(f"Fredholm condition violated: mean of g is {worst:.3e}")
    axes = grid.y_axes
    sym = laplacian_symbol(grid)
    inv = np.zeros_like(sym)
    nz = sym != 0
    inv[nz] = 1.0 / sym[nz]
    gh = np.fft.fftn(g, axes=axes)
    return np.real(np.fft.ifftn(gh * inv, axes=axes))


def build_potential(reaction, r_samples, grid: TorusGrid) -> PotentialPair:
    """Tabulate ``R``, ``G = grad_y R`` and ``d_r G`` for each r sample.

    ``d_r G`` uses a centered difference with step ``1e-4 * max(1, |r|)``.
    """
    r_samples = np.atleast_1d(np.asarray(r_samples, dtype=float))
    y, tau = grid.broadcast_nodes()
    Rs, Gs, dGs, hs = [], [], [], []
    for r in r_samples:
        h = 1e-4 * max(1.0, abs(r))
        R = poisson_solve_periodic(reaction.evaluate(y, tau, r), grid)
        Rp = poisson_solve_periodic(reaction.evaluate(y, tau, r + h), grid)
        Rm = poisson_solve_periodic(reaction.evaluate(y, tau, r - h), grid)
        Rs.append(R)
        Gs.append(grad_y(R, grid))
        dGs.append(grad_y((Rp - Rm) / (2 * h), grid))
        hs.append(h)
    return PotentialPair(grid, r_samples, np.array(Rs), np.array(Gs), np.array(dGs), np.array(hs))


def weighted_zero_mean_project(u: np.ndarray, rho: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """``u - (int rho u) / (int rho)`` per tau slice; ``rho`` lives on Y."""
    u = np.asarray(u, dtype=float)
    w = quadrature(rho * u, grid, axes="y") / quadrature(rho, grid, axes="y")
    w = np.asarray(w)
    return u - w.reshape(w.shape + (1,) * grid.dim)


def weighted_mean(u: np.ndarray, rho: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Per-slice ``int_Y rho u dy``."""
    return np.atleast_1d(quadrature(rho * u, grid, axes="y"))


def tau_pairing_antisymmetry_check(u: np.ndarray, v: np.ndarray, rho: np.ndarray, grid: TorusGrid) -> float:
    """``|[rho d_tau u, v] + [rho d_tau v, u]|`` with spectral ``d_tau``."""
    if not grid.has_tau:
        return 0.0
    a = quadrature(rho * diff_tau(u, grid) * v, grid)
    b = quadrature(rho * diff_tau(v, grid) * u, grid)
    return abs(a + b)


def tau_pairing(u: np.ndarray, v: np.ndarray, rho: np.ndarray, grid: TorusGrid) -> float:
    """``[rho d_tau u, v]`` integrated over Y x Z."""
    if not grid.has_tau:
        return 0.0
    return float(quadrature(rho * diff_tau(u, grid) * v, grid))
