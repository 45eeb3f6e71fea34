"""Effective coefficients: q and q0 from correctors, the linear-case b_hat and F1..F3, tabulation."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import __version__
from .cell import (
    CellSettings,
    CellSolution,
    CellSolveError,
    cell_flux_average,
    cell_reaction_average,
    solve_cell,
    solve_linear_basis,
)
from .coefficients import FluxLaw, ReactionLaw
from .fieldio import read_table, write_table
from .torus import quadrature

log = logging.getLogger(__name__)

CACHE_ENV = "HOMOG_RD_CACHE"


class ClampWarning(RuntimeWarning):
    """A query fell outside the tabulated hull and was clamped."""


class PartialTableError(RuntimeError):
    pass


def _check(cell: CellSolution, x, t, r, xi):
    if not cell.matches(x, t, r, xi):
        raise ValueError(f"cell solution was solved for (x={cell.x}, t={cell.t}, r={cell.r}, xi={cell.xi}), "
                         f"not for (x={x}, t={t}, r={r}, xi={xi})")


def effective_flux_q(x, t, r, xi, cell: CellSolution, flux: FluxLaw) -> np.ndarray:
    """``q = int a(x, t, y, tau, xi + grad_y pi) dy dtau``."""
    _check(cell, x, t, r, xi)
    return cell_flux_average(cell, flux)


def effective_reaction_q0(x, t, r, xi, cell: CellSolution, reaction: ReactionLaw) -> float:
    """``q0 = int d_r g(y, tau, r) pi dy dtau``."""
    _check(cell, x, t, r, xi)
    return cell_reaction_average(cell, reaction)


def _dr_average(sol: CellSolution, reaction: ReactionLaw, r: float) -> float:
    grid = sol.grid
    law = reaction.tau_averaged(np.asarray(sol.avg_taus)) if sol.avg_taus is not None else reaction
    y, tau = grid.broadcast_nodes()
    return float(quadrature(law.dr(y, tau, r) * sol.pi.values, grid))


# --------------------------------------------------------------------------
# interpolation


class _Interp:
    """Multilinear interpolation over the non-singleton axes of a table."""

    def __init__(self, axes, values, owner):
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.values = np.asarray(values, dtype=float)
        self.owner = owner
        self.active = [i for i, a in enumerate(self.axes) if len(a) > 1]
        vals = self.values
        for i in reversed(range(len(self.axes))):
            if len(self.axes[i]) == 1:
                vals = np.take(vals, 0, axis=i)
        self.reduced = vals
        self.rgi = None
        if self.active:
            self.rgi = RegularGridInterpolator([self.axes[i] for i in self.active], vals, method="linear",
                                               bounds_error=False, fill_value=None)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        M = pts.shape[0]
        comp = self.values.shape[len(self.axes):]
        if not self.active:
            return np.broadcast_to(self.reduced, (M,) + comp).copy()
        sub = pts[:, self.active]
        lo = np.array([self.axes[i][0] for i in self.active])
        hi = np.array([self.axes[i][-1] for i in self.active])
        clipped = np.clip(sub, lo, hi)
        span = np.maximum(hi - lo, 1.0)
        n_out = int(np.count_nonzero(np.any(np.abs(clipped - sub) > 1e-12 * span, axis=1)))
        if n_out:
            self.owner._count_clamps(n_out)
        return self.rgi(clipped)


@dataclass(frozen=True)
class EffectiveLaw:
    """Tabulated effective law over the ``(x, t, r, xi)`` lattice.

    ``kind='linear'`` stores ``bhat(x, t)`` and ``F1, F2, F3(x, t, r)`` and is
    exact in ``xi``; ``kind='nonlinear'`` stores ``q`` and ``q0`` on a xi
    lattice.  Out-of-hull queries are clamped and counted.
    """

    kind: str
    dim: int
    xs: tuple
    ts: np.ndarray
    rs: np.ndarray
    xis: tuple | None
    tables: dict
    manifest: dict = field(default_factory=dict)
    partial: bool = False
    failures: tuple = ()

    def __post_init__(self):
        if self.kind not in ("linear", "nonlinear"):
            raise ValueError(f"unknown effective kind {self.kind!r}")
        object.__setattr__(self, "_lock", threading.Lock())
        object.__setattr__(self, "_clamps", [0])
        base = list(self.xs) + [self.ts]
        if self.kind == "linear":
            interp = {
                "bhat": _Interp(base, self.tables["bhat"], self),
                "F1": _Interp(base + [self.rs], self.tables["F1"], self),
                "F2": _Interp(base + [self.rs], self.tables["F2"], self),
                "F3": _Interp(base + [self.rs], self.tables["F3"], self),
            }
        else:
            full = base + [self.rs] + list(self.xis)
            interp = {"q": _Interp(full, self.tables["q"], self), "q0": _Interp(full, self.tables["q0"], self)}
        object.__setattr__(self, "_interp", interp)

    # bookkeeping ----------------------------------------------------------
    def _count_clamps(self, n):
        with self._lock:
            first = self._clamps[0] == 0
            self._clamps[0] += n
        if first:
            warnings.warn("effective-law query outside the tabulated lattice; clamping to the hull",
                          ClampWarning, stacklevel=4)

    @property
    def clamp_count(self) -> int:
        return self._clamps[0]

    def reset_clamps(self):
        with self._lock:
            self._clamps[0] = 0

    # evaluation ----------------------------------------------------------
    def _points(self, x, t, r, xi=None):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        M = r.shape[0]
        x = np.broadcast_to(np.asarray(x, dtype=float).reshape(self.dim, -1), (self.dim, M))
        t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1), (M,))
        cols = [x[j] for j in range(self.dim)] + [t, r]
        if xi is not None:
            xi = np.broadcast_to(np.asarray(xi, dtype=float).reshape(self.dim, -1), (self.dim, M))
            cols += [xi[j] for j in range(self.dim)]
        return np.stack(cols, axis=1), M

    def bhat(self, x, t) -> np.ndarray:
        """Homogenized matrix at the points ``(x, t)``, shape ``(N, N, M)``."""
        self._need("linear")
        M = np.asarray(x, dtype=float).reshape(self.dim, -1).shape[1]
        pts, _ = self._points(x, t, np.zeros(M))
        return np.moveaxis(self._interp["bhat"](pts[:, : self.dim + 1]), 0, -1)

    def linear_parts(self, x, t, r):
        """``(bhat, F1, F2, F3)`` with component axes first and points last."""
        self._need("linear")
        pts, M = self._points(x, t, r)
        base = pts[:, : self.dim + 1]
        B = np.moveaxis(self._interp["bhat"](base), 0, -1)
        F1 = self._interp["F1"](pts).T
        F2 = self._interp["F2"](pts).T
        F3 = self._interp["F3"](pts)
        return B, F1, F2, F3

    def q(self, x, t, r, xi) -> np.ndarray:
        """Effective flux, shape ``(N, M)``."""
        xi = np.asarray(xi, dtype=float)
        if self.kind == "linear":
            B, F1, _, _ = self.linear_parts(x, t, r)
            xi = xi.reshape(self.dim, -1)
            return np.einsum("ijm,jm->im", B, np.broadcast_to(xi, F1.shape)) + F1
        pts, M = self._points(x, t, r, xi)
        return self._interp["q"](pts).T

    def q0(self, x, t, r, xi) -> np.ndarray:
        """Effective reaction, shape ``(M,)``."""
        xi = np.asarray(xi, dtype=float)
        if self.kind == "linear":
            _, _, F2, F3 = self.linear_parts(x, t, r)
            xi = np.broadcast_to(xi.reshape(self.dim, -1), F2.shape)
            return np.sum(F2 * xi, axis=0) + F3
        pts, M = self._points(x, t, r, xi)
        return self._interp["q0"](pts)

    def _need(self, kind):
        if self.kind != kind:
            raise ValueError(f"operation needs a {kind} effective law, this one is {self.kind}")

    def hull(self) -> dict:
        out = {"r": [float(self.rs[0]), float(self.rs[-1])], "t": [float(self.ts[0]), float(self.ts[-1])]}
        for j, a in enumerate(self.xs):
            out[f"x{j + 1}"] = [float(a[0]), float(a[-1])]
        if self.xis is not None:
            for j, a in enumerate(self.xis):
                out[f"xi{j + 1}"] = [float(a[0]), float(a[-1])]
        return out

    def digest(self) -> dict:
        """Small deterministic summary for reports."""
        x0 = [float(a[len(a) // 2]) for a in self.xs]
        t0 = float(self.ts[0])
        out = {"kind": self.kind, "hull": self.hull(), "partial": self.partial}
        probes_r = [-1.0, 0.0, 1.0]
        e = np.eye(self.dim)
        if self.kind == "linear":
            out["bhat"] = np.round(self.bhat(np.array(x0), t0)[..., 0], 12).tolist()
        qs = []
        for r in probes_r:
            for j in range(self.dim):
                qv = self.q(np.array(x0), t0, [r], e[j])[:, 0]
                q0v = self.q0(np.array(x0), t0, [r], e[j])[0]
                qs.append({"r": r, "xi": e[j].tolist(), "q": np.round(qv, 12).tolist(),
                           "q0": round(float(q0v), 12)})
        out["probes"] = qs
        return out


# --------------------------------------------------------------------------
# assembly


def assemble_linear_effective(xs, ts, rs, bases, flux: FluxLaw, reaction: ReactionLaw, manifest=None,
                              failures=()) -> EffectiveLaw:
    """Linear law from cell bases on the ``(x, t)`` lattice.

    ``bases`` is a flat sequence in C order over ``(x1, [x2], t)`` of
    :class:`LinearCellBasis` (or ``None`` for a failed point).
    """
    N = flux.dim
    xs = tuple(np.asarray(a, dtype=float) for a in xs)
    ts = np.asarray(ts, dtype=float)
    rs = np.asarray(rs, dtype=float)
    lat = tuple(len(a) for a in xs) + (len(ts),)
    nr = len(rs)
    bhat = np.full(lat + (N, N), np.nan)
    F1 = np.full(lat + (nr, N), np.nan)
    F2 = np.full(lat + (nr, N), np.nan)
    F3 = np.full(lat + (nr,), np.nan)
    if len(bases) != int(np.prod(lat)):
        raise ValueError(f"lattice mismatch: {len(bases)} bases for lattice of shape {lat}")
    for flat, basis in enumerate(bases):
        if basis is None:
            continue
        idx = np.unravel_index(flat, lat)
        if len(basis.r_samples) != nr or not np.allclose(basis.r_samples, rs, rtol=0, atol=1e-14):
            raise ValueError("lattice mismatch: basis r samples differ from the r lattice")
        for j, chi in enumerate(basis.chi):
            bhat[idx + (slice(None), j)] = cell_flux_average(chi, flux)
        for i, (r, w1) in enumerate(zip(rs, basis.w1)):
            F1[idx + (i,)] = cell_flux_average(w1, flux)
            F2[idx + (i,)] = [_dr_average(chi, reaction, r) for chi in basis.chi]
            F3[idx + (i,)] = _dr_average(w1, reaction, r)
    return EffectiveLaw("linear", N, xs, ts, rs, None, {"bhat": bhat, "F1": F1, "F2": F2, "F3": F3},
                        manifest or {}, partial=bool(failures), failures=tuple(failures))


# --------------------------------------------------------------------------
# tabulation


def default_lattice(cfg) -> dict:
    """Lattices over x, t, r, xi derived from the scenario and its initial datum."""
    lat = cfg.lattice
    N = cfg.dim
    nx = cfg.grids.macro_x
    axes = [np.linspace(lo, hi, nx + 1) for lo, hi in cfg.domain]
    X = np.array(np.meshgrid(*axes, indexing="ij"))
    u0 = np.asarray(cfg.initial(X), dtype=float)
    umax = float(np.max(np.abs(u0))) if u0.size else 0.0
    grads = np.gradient(u0, *axes) if N > 1 else [np.gradient(u0, axes[0])]
    gmax = float(max(np.max(np.abs(g)) for g in grads)) if u0.size else 0.0
    r_max = lat.r_max if lat.r_max is not None else max(2.0 * umax, 1e-3)
    xi_max = lat.xi_max if lat.xi_max is not None else max(2.0 * gmax, 1e-3)
    rs = np.linspace(-r_max, r_max, lat.r_points)
    xis = [np.linspace(-xi_max, xi_max, lat.xi_points) for _ in range(N)]
    if cfg.flux.depends_on_xt:
        npx = lat.x_points or 5
        npt = lat.t_points or 5
        xs = [np.linspace(lo, hi, npx) for lo, hi in cfg.domain]
        ts = np.linspace(0.0, cfg.T, npt)
    else:
        xs = [np.array([0.5 * (lo + hi)]) for lo, hi in cfg.domain]
        ts = np.array([0.0])
    return {"xs": xs, "ts": ts, "rs": rs, "xis": xis}


def cell_settings(cfg) -> CellSettings:
    return CellSettings(n=cfg.grids.cell_y, m=cfg.grids.cell_tau, tol=cfg.tol.cell,
                        period_tol=cfg.tol.period_map)


def table_manifest(cfg, kind: str, lattice: dict, settings: CellSettings) -> dict:
    def arr(a):
        a = np.asarray(a, dtype=float)
        return [float(a[0]), float(a[-1]), int(len(a))]

    man = {
        "schema": "homog_rd.table/1",
        "version": __version__,
        "kind": kind,
        "dim": cfg.dim,
        "p": cfg.p,
        "regime": cfg.regime.value,
        "ids": {"flux": cfg.flux.name, "reaction": cfg.reaction.name, "density": cfg.density.name},
        "cell": {"n": settings.n, "m": settings.m, "tol": settings.tol, "method": settings.method,
                 "period_tol": settings.period_tol},
        "lattice": {"x": [arr(a) for a in lattice["xs"]], "t": arr(lattice["ts"]), "r": arr(lattice["rs"])},
    }
    if kind == "nonlinear":
        man["lattice"]["xi"] = [arr(a) for a in lattice["xis"]]
    if cfg.flux.depends_on_xt:
        man["domain"] = [list(d) for d in cfg.domain]
        man["T"] = cfg.T
    return man


def manifest_hash(manifest: dict) -> str:
    return hashlib.sha256(json.dumps(manifest, sort_keys=True).encode()).hexdigest()


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "homog_rd")


def _cacheable(cfg) -> bool:
    return all(name != "custom" for name in (cfg.flux.name, cfg.reaction.name, cfg.density.name))


def _pack(law: EffectiveLaw):
    names = sorted(law.tables)
    flat = np.concatenate([np.ravel(law.tables[k]) for k in names])
    layout = [[k, list(law.tables[k].shape)] for k in names]
    return flat, layout


def _unpack(flat, layout):
    out, off = {}, 0
    for name, shape in layout:
        n = int(np.prod(shape))
        out[name] = flat[off: off + n].reshape(shape)
        off += n
    return out


def save_table(law: EffectiveLaw, path) -> None:
    flat, layout = _pack(law)
    man = dict(law.manifest, layout=layout, partial=law.partial,
               axes={"xs": [a.tolist() for a in law.xs], "ts": law.ts.tolist(), "rs": law.rs.tolist(),
                     "xis": None if law.xis is None else [a.tolist() for a in law.xis]})
    write_table(path, flat, man)


def load_table(path) -> EffectiveLaw:
    flat, man = read_table(path)
    ax = man["axes"]
    tables = _unpack(flat, man["layout"])
    base = {k: v for k, v in man.items() if k not in ("layout", "axes", "partial", "shape")}
    return EffectiveLaw(man["kind"], man["dim"], tuple(np.array(a) for a in ax["xs"]), np.array(ax["ts"]),
                        np.array(ax["rs"]), None if ax["xis"] is None else tuple(np.array(a) for a in ax["xis"]),
                        tables, base, partial=bool(man["partial"]))


def tabulate_effective(cfg, kind: str | None = None, threads: int = 1, use_cache: bool = True,
                       lattice: dict | None = None, settings: CellSettings | None = None) -> EffectiveLaw:
    """Build (or load from cache) the effective law of a scenario.

    ``kind`` defaults to ``'linear'`` for linear-matrix fluxes.  Work is
    split per lattice row and gathered in order, so results do not depend
    on ``threads``.
    """
    flux, reaction, density = cfg.flux, cfg.reaction, cfg.density
    if kind is None:
        kind = "linear" if flux.kind == "linear-matrix" else "nonlinear"
    if kind == "linear" and flux.kind != "linear-matrix":
        raise ValueError("linear tabulation needs a linear-matrix flux")
    lattice = lattice or default_lattice(cfg)
    settings = settings or cell_settings(cfg)
    manifest = table_manifest(cfg, kind, lattice, settings)
    digest = manifest_hash(manifest)
    manifest["hash"] = digest
    path = cache_dir() / f"{digest}.tab"
    if use_cache and _cacheable(cfg) and path.is_file():
        try:
            law = load_table(path)
            log.info("effective table loaded from cache %s", path)
            return law
        except (OSError, ValueError, KeyError) as exc:
            log.warning("ignoring unreadable cache entry %s: %s", path, exc)

    xs, ts, rs = lattice["xs"], lattice["ts"], lattice["rs"]
    regime = cfg.regime
    xt_points = [(np.array(xv), float(tv)) for *xv, tv in _product(*xs, ts)]
    failures = []

    if kind == "linear":
        def task(pt):
            xv, tv = pt
            try:
                return solve_linear_basis(xv, tv, rs, flux, reaction, density, regime, settings), None
            except (CellSolveError, ValueError, np.linalg.LinAlgError) as exc:
                return None, {"x": xv.tolist(), "t": tv, "error": str(exc)}

        results = _run(task, xt_points, threads)
        bases = [b for b, _ in results]
        failures = [f for _, f in results if f is not None]
        law = assemble_linear_effective(xs, ts, rs, bases, flux, reaction, manifest, failures)
    else:
        xis = lattice["xis"]
        xi_pts = [np.array(v) for v in _product(*xis)] if cfg.dim > 1 else [np.array([v]) for v in xis[0]]
        rows = [(xv, tv, float(r)) for xv, tv in xt_points for r in rs]

        def task(row):
            xv, tv, r = row
            qv, q0v, errs = [], [], []
            guess = None
            for xi in xi_pts:
                try:
                    # warm start from the previous xi of the same row
                    sol = solve_cell(xv, tv, r, xi, flux, reaction, density, regime, settings, guess)
                    guess = sol.pi.values
                    qv.append(cell_flux_average(sol, flux))
                    q0v.append(cell_reaction_average(sol, reaction))
                except (CellSolveError, ValueError, np.linalg.LinAlgError) as exc:
                    qv.append(np.full(cfg.dim, np.nan))
                    q0v.append(np.nan)
                    errs.append({"x": xv.tolist(), "t": tv, "r": r, "xi": xi.tolist(), "error": str(exc)})
                    guess = None
            return np.array(qv), np.array(q0v), errs

        results = _run(task, rows, threads)
        lat = tuple(len(a) for a in xs) + (len(ts), len(rs)) + tuple(len(a) for a in xis)
        Q = np.stack([q for q, _, _ in results]).reshape(lat + (cfg.dim,))
        Q0 = np.stack([q0 for _, q0, _ in results]).reshape(lat)
        failures = [e for _, _, errs in results for e in errs]
        law = EffectiveLaw("nonlinear", cfg.dim, tuple(xs), np.asarray(ts), np.asarray(rs), tuple(xis),
                           {"q": Q, "q0": Q0}, manifest, partial=bool(failures), failures=tuple(failures))

    if failures:
        log.warning("effective table is partial: %d cell solves failed", len(failures))
    elif use_cache and _cacheable(cfg):
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            save_table(law, path)
        except OSError as exc:
            log.warning("could not write cache entry %s: %s", path, exc)
    return law


def _product(*axes):
    grids = np.meshgrid(*axes, indexing="ij")
    return list(zip(*[g.ravel() for g in grids]))


def _run(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


__all__ = [
    "EffectiveLaw", "ClampWarning", "PartialTableError", "effective_flux_q", "effective_reaction_q0",
    "assemble_linear_effective", "tabulate_effective", "default_lattice", "cell_settings", "save_table",
    "load_table", "cache_dir", "manifest_hash",
]
