"""Scenario configuration files and sampled checks of the structural assumptions."""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np

from . import coefficients as co
from .coefficients import DensityWeight, FluxLaw, ReactionLaw, Regime, regime_of


class ConfigError(ValueError):
    """Malformed or inconsistent scenario file."""


class AssumptionError(RuntimeError):
    """A hard structural check (periodicity, centering) failed."""

    def __init__(self, message: str, report: "ValidationReport"):
        super().__init__(message)
        self.report = report


def _pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grids:
    cell_y: int = 64
    cell_tau: int = 16
    macro_x: int = 64
    macro_t: int = 128
    dns_x: int = 16
    dns_t: int = 8

    def __post_init__(self):
        for name, v in asdict(self).items():
            if not _pow2(int(v)):
                raise ConfigError(f"grids.{name} must be a power of two, got {v}")


@dataclass(frozen=True)
class Tolerances:
    cell: float = 1e-10
    macro: float = 1e-10
    dns: float = 1e-10
    validate: float = 1e-8
    period_map: float = 1e-9


@dataclass(frozen=True)
class Lattice:
    """Tabulation lattice for the effective coefficients (``None`` = data driven)."""

    r_points: int = 33
    xi_points: int = 17
    r_max: float | None = None
    xi_max: float | None = None
    x_points: int | None = None
    t_points: int | None = None


@dataclass(frozen=True)
class Budget:
    max_dns_nodes: int = 1 << 21
    max_dns_steps: int = 1 << 20


@dataclass(frozen=True)
class ScenarioConfig:
    """A complete problem instance."""

    dim: int
    p: float
    k: float
    T: float
    domain: tuple[tuple[float, float], ...]
    flux: FluxLaw
    reaction: ReactionLaw
    density: DensityWeight
    initial: Callable
    epsilons: tuple[float, ...]
    grids: Grids = field(default_factory=Grids)
    tol: Tolerances = field(default_factory=Tolerances)
    lattice: Lattice = field(default_factory=Lattice)
    budget: Budget = field(default_factory=Budget)
    name: str = "scenario"
    initial_name: str = "custom"
    initial_projection: str = "nodal"
    seed: int = 0
    assert_convergence: bool = False
    expect_invalid: bool = False
    source: bytes = b""

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError(f"dimension must be 1 or 2, got {self.dim}")
        if not self.k > 0:
            raise ConfigError(f"k must be positive, got {self.k}")
        if not self.T > 0:
            raise ConfigError(f"T must be positive, got {self.T}")
        eps = self.epsilons
        if not eps or any(e <= 0 for e in eps) or any(a <= b for a, b in zip(eps, eps[1:])):
            raise ConfigError(f"epsilon ladder must be positive and strictly decreasing, got {eps}")
        if len(self.domain) != self.dim or any(hi <= lo for lo, hi in self.domain):
            raise ConfigError(f"domain must give {self.dim} intervals lo < hi")
        if self.flux.dim != self.dim:
            raise ConfigError("flux dimension does not match the scenario")
        if self.p != self.flux.p:
            raise ConfigError(f"scenario p = {self.p} but flux has p = {self.flux.p}")
        if self.initial_projection not in ("nodal", "cell-average"):
            raise ConfigError(f"unknown initial projection {self.initial_projection!r}")

    @property
    def regime(self) -> Regime:
        return regime_of(self.k)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.source).hexdigest()

    def ids(self) -> dict:
        return {"flux": self.flux.name, "reaction": self.reaction.name, "density": self.density.name,
                "initial": self.initial_name, "flux_kind": self.flux.kind}


# --------------------------------------------------------------------------
# parsing


def _num(s: str) -> float:
    try:
        return float(Fraction(s.strip()))
    except (ValueError, ZeroDivisionError):
        try:
            return float(s)
        except ValueError:
            raise ConfigError(f"not a number: {s!r}") from None


def _nums(s: str) -> list[float]:
    return [_num(v) for v in s.replace(",", " ").split()]


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _section(cp, name) -> dict:
    return dict(cp[name]) if cp.has_section(name) else {}


def _law(sec: dict, registry: dict, what: str, build_expr, *args):
    if "id" in sec and "expr" in sec:
        raise ConfigError(f"{what}: give either id or expr, not both")
    if "id" in sec:
        key = sec["id"].strip()
        if key not in registry:
            raise ConfigError(f"{what}: unknown built-in id {key!r}; known: {sorted(registry)}")
        return registry[key](*args)
    if "expr" in sec:
        return build_expr(sec["expr"])
    raise ConfigError(f"{what}: missing id or expr")


def parse_scenario(text: str, name: str = "scenario") -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from INI-style text.

    Top-level keys live in ``[scenario]``; nested keys such as ``flux.kind``
    live in ``[flux]``.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    if not cp.has_section("scenario"):
        raise ConfigError("missing [scenario] section")
    top = _section(cp, "scenario")
    try:
        dim = int(top["dimension"])
        p = _num(top.get("p", "2"))
        k = _num(top["k"])
        T = _num(top["T"])
        eps = tuple(_nums(top["epsilons"]))
    except KeyError as exc:
        raise ConfigError(f"missing key scenario.{exc.args[0]}") from None
    dom = _nums(top.get("domain", " ".join(["0 1"] * dim)))
    if len(dom) != 2 * dim:
        raise ConfigError("scenario.domain needs two numbers per axis")
    domain = tuple((dom[2 * j], dom[2 * j + 1]) for j in range(dim))

    fsec = _section(cp, "flux")
    kind = fsec.get("kind", "linear-matrix").strip()
    c1 = _num(fsec["c1"]) if "c1" in fsec else None
    c2 = _num(fsec["c2"]) if "c2" in fsec else None
    if "matrix" in fsec:
        rows = [[s.strip() for s in row.split(",")] for row in fsec["matrix"].split(";")]
        flux = co.flux_from_expr(dim, p, kind, rows, c1=c1, c2=c2)
    else:
        flux = _law(fsec, co.BUILTIN_FLUXES, "flux",
                    lambda e: co.flux_from_expr(dim, p, kind, e, c1=c1, c2=c2), dim, p)
        if "id" in fsec and "kind" in fsec and flux.kind != kind:
            raise ConfigError(f"flux id {fsec['id']!r} is {flux.kind}, config says {kind}")
    rsec = _section(cp, "reaction")
    C = _num(rsec["C"]) if "C" in rsec else None
    reaction = _law(rsec or {"id": "zero"}, co.BUILTIN_REACTIONS, "reaction",
                    lambda e: co.reaction_from_expr(dim, e, C=C), dim)
    dsec = _section(cp, "density")
    Lam = _num(dsec["Lambda"]) if "Lambda" in dsec else None
    density = _law(dsec or {"id": "one"}, co.BUILTIN_DENSITIES, "density",
                   lambda e: co.density_from_expr(dim, e, Lambda=Lam), dim)

    isec = _section(cp, "initial")
    if "expr" in isec:
        initial = co.initial_from_expr(dim, isec["expr"])
        initial_name = f"expr:{isec['expr']}"
    else:
        key = isec.get("id", top.get("initial", "sin_pi")).strip()
        if key not in co.BUILTIN_INITIALS:
            raise ConfigError(f"initial: unknown built-in id {key!r}")
        initial = co.BUILTIN_INITIALS[key](domain)
        initial_name = key
    projection = isec.get("projection", "cell-average" if initial_name in co.DISCONTINUOUS_INITIALS else "nodal")

    def sub(section, cls, conv):
        vals = {kk: conv[kk](v) for kk, v in _section(cp, section).items() if kk in conv}
        unknown = set(_section(cp, section)) - set(conv)
        if unknown:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
        return cls(**vals)

    grids = sub("grids", Grids, {kk: (lambda v: int(_num(v))) for kk in Grids.__dataclass_fields__})
    tol = sub("tol", Tolerances, {kk: _num for kk in Tolerances.__dataclass_fields__})
    lat_conv = {"r_points": lambda v: int(_num(v)), "xi_points": lambda v: int(_num(v)),
                "r_max": _num, "xi_max": _num, "x_points": lambda v: int(_num(v)),
                "t_points": lambda v: int(_num(v))}
    lattice = sub("tab", Lattice, lat_conv)
    budget = sub("budget", Budget, {kk: (lambda v: int(_num(v))) for kk in Budget.__dataclass_fields__})
    try:
        return ScenarioConfig(
            dim=dim, p=p, k=k, T=T, domain=domain, flux=flux, reaction=reaction, density=density,
            initial=initial, epsilons=eps, grids=grids, tol=tol, lattice=lattice, budget=budget,
            name=top.get("name", name).strip(), initial_name=initial_name, initial_projection=projection,
            seed=int(_num(top.get("seed", "0"))),
            assert_convergence=_bool(top.get("assert_convergence", "false")),
            expect_invalid=_bool(top.get("expect_invalid", "false")),
            source=text.encode(),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_scenario(path.read_text(), name=path.stem)


# --------------------------------------------------------------------------
# sampled assumption checks


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    worst: float
    tolerance: float
    samples: str
    hard: bool = False
    location: dict | None = None
    note: str = ""


@dataclass
class ValidationReport:
    checks: list[AssumptionCheck]
    seed: int

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[AssumptionCheck]:
        return [c for c in self.checks if not c.passed]

    def messages(self) -> list[str]:
        out = []
        for c in self.failures():
            msg = f"{c.name}: violation {c.worst:.3e} > {c.tolerance:.1e}"
            if c.note:
                msg = f"{c.note} ({msg})"
            if c.location:
                msg += f" at {json.dumps(c.location)}"
            out.append(msg)
        return out

    def to_text(self) -> str:
        lines = [f"validation (seed={self.seed}): {'PASS' if self.passed else 'FAIL'}"]
        for c in self.checks:
            lines.append(f"  [{'pass' if c.passed else 'FAIL'}] {c.name:<22s} worst={c.worst:.3e} "
                         f"tol={c.tolerance:.1e} samples={c.samples}")
        lines += [f"  ! {m}" for m in self.messages()]
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "passed": self.passed, "checks": [asdict(c) for c in self.checks]}


def _argmax_loc(values, **coords):
    i = int(np.argmax(values))
    return {k: np.asarray(v).reshape(-1)[i].tolist() if np.ndim(v) <= 1 else np.asarray(v)[:, i].tolist()
            for k, v in coords.items()}


def validate_scenario(cfg: ScenarioConfig, seed: int | None = None, n_samples: int = 512,
                      strict: bool = False) -> ValidationReport:
    """Sampled verification of the monotone-flux, Lipschitz, density and centering assumptions.

    Sampling is deterministic given ``seed`` (default ``cfg.seed``).  With
    ``strict`` a failed hard check (periodicity, centering) raises
    :class:`AssumptionError`.
    """
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    tol = cfg.tol.validate
    N, p, flux, g, rho = cfg.dim, cfg.p, cfg.flux, cfg.reaction, cfg.density
    checks: list[AssumptionCheck] = []
    desc = f"{n_samples} random + corners, seed {seed}"

    lo = np.array([d[0] for d in cfg.domain])
    hi = np.array([d[1] for d in cfg.domain])
    x = lo[:, None] + (hi - lo)[:, None] * rng.random((N, n_samples))
    x[:, 0] = lo
    x[:, 1] = hi
    t = cfg.T * rng.random(n_samples)
    t[0] = 0.0
    y = rng.random((N, n_samples))
    y[:, 0] = 0.0
    tau = rng.random(n_samples)
    tau[0] = 0.0
    scales = np.array([0.1, 1.0, 10.0])[rng.integers(0, 3, n_samples)]
    lam = rng.standard_normal((N, n_samples)) * scales
    lam2 = rng.standard_normal((N, n_samples)) * scales
    lam[:, 0] = 0.0
    lam2[:, 1] = 0.0

    # a(.,0) = 0
    a0 = flux.evaluate(x, t, y, tau, np.zeros_like(lam))
    v = np.sqrt(np.sum(a0**2, axis=0))
    checks.append(AssumptionCheck("zero flux", bool(v.max() <= tol), float(v.max()), tol, desc))

    # monotonicity
    aa = flux.evaluate(x, t, y, tau, lam)
    ab = flux.evaluate(x, t, y, tau, lam2)
    d = lam - lam2
    dn = np.sqrt(np.sum(d**2, axis=0))
    inner = np.sum((aa - ab) * d, axis=0)
    ok = dn > 0
    ratio = inner[ok] / dn[ok] ** p
    fitted_c1 = float(ratio.min())
    c1 = flux.c1 if flux.c1 is not None else 0.0
    scale = np.maximum(1.0, dn[ok] ** p)
    viol = np.maximum(0.0, (c1 * dn[ok] ** p - inner[ok]) / scale)
    mono_ok = viol.max() <= tol and fitted_c1 > (0.0 if flux.c1 is None else -tol)
    checks.append(AssumptionCheck("monotonicity", bool(mono_ok), float(viol.max()), tol, desc,
                                  note=f"fitted c1 = {fitted_c1:.4g}"))

    # growth
    mag = np.sqrt(np.sum(aa**2, axis=0))
    nl = np.sqrt(np.sum(lam**2, axis=0))
    bound = 1.0 + nl ** (p - 1)
    fitted_c2 = float((mag / bound).max())
    c2 = flux.c2 if flux.c2 is not None else math.inf
    gv = np.maximum(0.0, (mag - c2 * bound) / bound) if math.isfinite(c2) else np.zeros_like(mag)
    checks.append(AssumptionCheck("growth", bool(gv.max() <= tol), float(gv.max()), tol, desc,
                                  note=f"fitted c2 = {fitted_c2:.4g}"))

    # periodicity of a in (y, tau), of rho and g in y (and tau)
    per_worst, per_loc = 0.0, None
    shifts = [np.eye(N)[j] for j in range(N)]
    for j, e in enumerate(shifts + [None]):
        ys = y + (e[:, None] if e is not None else 0.0)
        ts = tau + (1.0 if e is None else 0.0)
        diffs = {
            "flux": np.sqrt(np.sum((flux.evaluate(x, t, ys, ts, lam) - aa) ** 2, axis=0)) / np.maximum(1, mag),
            "reaction": np.abs(g.evaluate(ys, ts, lam[0]) - g.evaluate(y, tau, lam[0])),
        }
        if e is not None:
            diffs["density"] = np.abs(rho.evaluate(ys) - rho.evaluate(y))
        for what, dv in diffs.items():
            if dv.max() > per_worst:
                per_worst = float(dv.max())
                per_loc = dict(coefficient=what, shift="tau" if e is None else f"y{j + 1}",
                               **_argmax_loc(dv, y=y, tau=tau))
    per_ok = per_worst <= tol
    checks.append(AssumptionCheck("periodicity", bool(per_ok), per_worst, tol, desc, hard=True,
                                  location=None if per_ok else per_loc,
                                  note="" if per_ok else "non-periodic coefficient"))

    # Lipschitz in r in r
    r1 = rng.standard_normal(n_samples) * scales
    r2 = r1 + rng.standard_normal(n_samples) * 1e-3 * np.maximum(1.0, np.abs(r1))
    dq = np.abs(g.evaluate(y, tau, r1) - g.evaluate(y, tau, r2)) / np.abs(r1 - r2)
    fitted_C = float(dq.max())
    Cv = 0.0 if g.C is None else max(0.0, fitted_C - g.C * (1 + 1e-3)) / max(1.0, g.C)
    checks.append(AssumptionCheck("Lipschitz in r", bool(Cv <= tol), float(Cv), tol, desc,
                                  note=f"fitted C = {fitted_C:.4g}"))

    # g(., ., 0) = 0
    g0 = np.abs(g.evaluate(y, tau, 0.0))
    checks.append(AssumptionCheck("equilibrium", bool(g0.max() <= tol), float(g0.max()), tol, desc))

    # density bounds on the cell grid, unit mean
    from .torus import TorusGrid, quadrature

    grid = TorusGrid(N, cfg.grids.cell_y)
    yg = grid.y_nodes()
    rv = rho.evaluate(yg)
    Lam = rho.Lambda
    bviol = float(max(0.0, (1 / Lam - rv.min()), rv.max() - Lam))
    checks.append(AssumptionCheck("density bounds", bool(bviol <= tol), bviol, tol,
                                  f"cell grid n={grid.n}", note=f"Lambda = {Lam:g}"))
    mviol = abs(quadrature(rv, grid) - 1.0)
    checks.append(AssumptionCheck("density mean", bool(mviol <= tol), float(mviol), tol, f"cell grid n={grid.n}"))

    # centering: int_Y g(y, tau, r) dy = 0
    taus = np.concatenate([[0.0], rng.random(15)])
    rs = np.concatenate([[-1.0, 1.0], rng.standard_normal(30) * 2])
    cen, cen_loc = 0.0, None
    for tv in taus:
        for rv_ in rs:
            gv_ = g.evaluate(yg, tv, rv_)
            m = abs(quadrature(gv_, grid))
            if m > cen:
                cen, cen_loc = m, {"tau": float(tv), "r": float(rv_)}
    cen_ok = cen <= tol * max(1.0, float(np.max(np.abs(rs))))
    checks.append(AssumptionCheck("centering", bool(cen_ok), float(cen), tol,
                                  f"{len(taus)} tau x {len(rs)} r on n={grid.n}", hard=True,
                                  location=None if cen_ok else cen_loc,
                                  note="" if cen_ok else "Fredholm condition violated"))

    report = ValidationReport(checks, seed)
    hard = [c for c in report.failures() if c.hard]
    if strict and hard:
        raise AssumptionError("; ".join(report.messages()), report)
    return report
