"""Coefficient models: nonlinear flux, centered reaction, density weight.

Evaluator conventions (all vectorized over trailing sample shapes ``S``):

* ``y`` and ``lam`` are component-first arrays of shape ``(N, *S)``;
* ``x`` is component-first and broadcastable against ``(N, *S)``;
* ``t``, ``tau``, ``r`` broadcast against ``S``.
"""

from __future__ import annotations

import ast
import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

FLUX_KINDS = ("general-monotone", "linear-matrix", "weighted-p-laplacian")


class Regime(str, enum.Enum):
    SUB = "sub"
    CRITICAL = "critical"
    SUPER = "super"


def regime_of(k: float) -> Regime:
    """Time-scaling regime: sub for k < 2, critical for k = 2, super for k > 2."""
    if not k > 0:
        raise ValueError(f"time-scaling exponent must be positive, got {k}")
    if math.isclose(k, 2.0, rel_tol=1e-12, abs_tol=0.0):
        return Regime.CRITICAL
    return Regime.SUB if k < 2 else Regime.SUPER


def _bcast(v, shape) -> np.ndarray:
    return np.broadcast_to(np.asarray(v, dtype=float), shape)


@dataclass(frozen=True)
class FluxLaw:
    """Monotone flux ``a(x, t, y, tau, lam)`` with growth exponent ``p``.

    ``coefficient`` returns the ``(N, N, *S)`` matrix field for the
    linear-matrix kind and the scalar weight for the weighted-p-laplacian
    kind; ``func``/``jac_func`` describe a general monotone flux.
    """

    dim: int
    p: float
    kind: str
    coefficient: Callable | None = None
    func: Callable | None = None
    jac_func: Callable | None = None
    c1: float | None = None
    c2: float | None = None
    c0: float | None = None
    omega: str | None = None
    name: str = "custom"
    depends_on_xt: bool = False
    depends_on_tau: bool = True

    def __post_init__(self):
        if self.kind not in FLUX_KINDS:
            raise ValueError(f"unknown flux kind {self.kind!r}")
        if self.p < 2:
            raise ValueError(f"growth exponent p must be >= 2, got {self.p}")
        if self.kind == "linear-matrix" and self.p != 2:
            raise ValueError("linear-matrix flux requires p = 2")
        if self.kind == "general-monotone" and self.func is None:
            raise ValueError("general-monotone flux needs an evaluator")
        if self.kind != "general-monotone" and self.coefficient is None:
            raise ValueError(f"{self.kind} flux needs a coefficient field")

    def matrix(self, x, t, y, tau) -> np.ndarray:
        S = np.shape(y)[1:]
        B = np.asarray(self.coefficient(x, t, y, tau), dtype=float)
        if B.ndim == 2:
            B = B.reshape(B.shape + (1,) * len(S))
        return np.broadcast_to(B, (self.dim, self.dim) + S)

    def weight(self, x, t, y, tau) -> np.ndarray:
        return _bcast(self.coefficient(x, t, y, tau), np.shape(y)[1:])

    def evaluate(self, x, t, y, tau, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        if self.kind == "linear-matrix":
            return np.einsum("ij...,j...->i...", self.matrix(x, t, y, tau), lam)
        if self.kind == "weighted-p-laplacian":
            w = self.weight(x, t, y, tau)
            mag2 = np.sum(lam**2, axis=0)
            return w * mag2 ** ((self.p - 2) / 2) * lam
        return np.asarray(self.func(x, t, y, tau, lam), dtype=float)

    def jacobian(self, x, t, y, tau, lam, delta: float = 0.0) -> np.ndarray:
        """``d a_i / d lam_j`` with ``|lam|^2`` replaced by ``delta^2 + |lam|^2``."""
        lam = np.asarray(lam, dtype=float)
        N = self.dim
        if self.kind == "linear-matrix":
            return np.array(self.matrix(x, t, y, tau))
        if self.kind == "weighted-p-laplacian":
            w = self.weight(x, t, y, tau)
            s = delta**2 + np.sum(lam**2, axis=0)
            q = self.p - 2
            eye = np.eye(N).reshape((N, N) + (1,) * (lam.ndim - 1))
            outer = lam[:, None] * lam[None, :]
            with np.errstate(divide="ignore", invalid="ignore"):
                second = np.where(s > 0, q * s ** ((q - 2) / 2), 0.0) if q != 0 else 0.0
            return w * (s ** (q / 2) * eye + second * outer)
        if self.jac_func is not None:
            return np.asarray(self.jac_func(x, t, y, tau, lam, delta), dtype=float)
        return self._fd_jacobian(x, t, y, tau, lam)

    def _fd_jacobian(self, x, t, y, tau, lam) -> np.ndarray:
        J = np.empty((self.dim,) + lam.shape)
        for j in range(self.dim):
            h = 1e-6 * np.maximum(1.0, np.abs(lam[j]))
            e = np.zeros_like(lam)
            e[j] = h
            J[:, j] = (self.evaluate(x, t, y, tau, lam + e) - self.evaluate(x, t, y, tau, lam - e)) / (2 * h)
        return J

    def potential(self, x, t, y, tau, lam) -> np.ndarray | None:
        """Energy density whose gradient in ``lam`` is the flux, when known."""
        lam = np.asarray(lam, dtype=float)
        if self.kind == "linear-matrix":
            return 0.5 * np.einsum("i...,ij...,j...->...", lam, self.matrix(x, t, y, tau), lam)
        if self.kind == "weighted-p-laplacian":
            return self.weight(x, t, y, tau) * np.sum(lam**2, axis=0) ** (self.p / 2) / self.p
        return None

    def tau_averaged(self, taus: np.ndarray) -> "FluxLaw":
        """Flux averaged over the tau nodes ``taus``; the result ignores tau.

        ``x`` passed to the averaged evaluators must be component-first with
        the same number of dimensions as ``y``.
        """
        taus = np.asarray(taus, dtype=float)
        base = self

        def expand(x, y, *fields):
            S = np.shape(y)[1:]
            tt = taus.reshape((-1,) + (1,) * len(S))
            full = (base.dim, len(taus)) + S
            xx = np.asarray(x, dtype=float)[:, None]
            out = [np.broadcast_to(np.asarray(f, dtype=float)[:, None], full) for f in (y,) + fields]
            return xx, tt, out

        if self.kind == "general-monotone":
            def func(x, t, y, tau, lam):
                xx, tt, (yy, ll) = expand(x, y, lam)
                return base.evaluate(xx, t, yy, tt, ll).mean(axis=1)

            def jac(x, t, y, tau, lam, delta=0.0):
                xx, tt, (yy, ll) = expand(x, y, lam)
                return base.jacobian(xx, t, yy, tt, ll, delta).mean(axis=2)

            return FluxLaw(self.dim, self.p, self.kind, func=func, jac_func=jac, c1=self.c1,
                           c2=self.c2, c0=self.c0, name=f"{self.name}|tau-avg",
                           depends_on_xt=self.depends_on_xt, depends_on_tau=False)

        def coef(x, t, y, tau):
            xx, tt, (yy,) = expand(x, y)
            if base.kind == "linear-matrix":
                return base.matrix(xx, t, yy, tt).mean(axis=2)
            return base.weight(xx, t, yy, tt).mean(axis=0)

        return FluxLaw(self.dim, self.p, self.kind, coefficient=coef, c1=self.c1, c2=self.c2,
                       c0=self.c0, name=f"{self.name}|tau-avg", depends_on_xt=self.depends_on_xt,
                       depends_on_tau=False)


@dataclass(frozen=True)
class ReactionLaw:
    """Centered reaction ``g(y, tau, r)`` with Lipschitz constant ``C``."""

    func: Callable
    dr_func: Callable | None = None
    C: float | None = None
    name: str = "custom"
    depends_on_tau: bool = True

    def evaluate(self, y, tau, r) -> np.ndarray:
        S = np.broadcast_shapes(np.shape(y)[1:], np.shape(tau), np.shape(r))
        return _bcast(self.func(y, tau, r), S)

    def dr(self, y, tau, r) -> np.ndarray:
        """``d g / d r``; centered difference with step ``1e-4 max(1, |r|)`` if no derivative is given."""
        if self.dr_func is not None:
            S = np.broadcast_shapes(np.shape(y)[1:], np.shape(tau), np.shape(r))
            return _bcast(self.dr_func(y, tau, r), S)
        h = 1e-4 * np.maximum(1.0, np.abs(r))
        return (self.evaluate(y, tau, r + h) - self.evaluate(y, tau, r - h)) / (2 * h)

    def tau_averaged(self, taus: np.ndarray) -> "ReactionLaw":
        taus = np.asarray(taus, dtype=float)
        base = self

        def avg(fn):
            def wrapped(y, tau, r):
                S = np.shape(y)[1:]
                tt = taus.reshape((-1,) + (1,) * len(S))
                yy = np.asarray(y)[:, None]
                return np.asarray(np.broadcast_to(fn(yy, tt, r), (len(taus),) + S)).mean(axis=0)
            return wrapped

        return ReactionLaw(avg(base.evaluate), avg(base.dr), C=self.C,
                           name=f"{self.name}|tau-avg", depends_on_tau=False)


@dataclass(frozen=True)
class DensityWeight:
    """Positive Y-periodic density with bounds ``1/Lambda <= rho <= Lambda``."""

    func: Callable
    Lambda: float = 1.0
    name: str = "custom"

    def evaluate(self, y) -> np.ndarray:
        return _bcast(self.func(y), np.shape(y)[1:])


# --------------------------------------------------------------------------
# expressions

_FUNCS = {name: getattr(np, name) for name in (
    "sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "sinh", "cosh",
    "arctan", "minimum", "maximum", "where", "sign")}
_CONSTS = {"pi": np.pi, "e": np.e}
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Mod,
    ast.Compare, ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.IfExp,
)


class ExpressionError(ValueError):
    pass


@dataclass(frozen=True)
class Expression:
    """Restricted arithmetic expression over named numpy arrays."""

    source: str
    variables: tuple[str, ...]
    code: object = field(repr=False, compare=False, default=None)

    @classmethod
    def compile(cls, source: str, variables) -> "Expression":
        try:
            tree = ast.parse(source.strip(), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse expression {source!r}: {exc.msg}") from None
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED_NODES):
                raise ExpressionError(f"disallowed syntax {type(node).__name__} in {source!r}")
            if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
                raise ExpressionError(f"only numpy math functions may be called in {source!r}")
            if isinstance(node, ast.Name) and node.id not in _FUNCS and node.id not in _CONSTS \
                    and node.id not in variables:
                raise ExpressionError(f"unknown name {node.id!r} in {source!r}")
        return cls(source, tuple(variables), compile(tree, "<expr>", "eval"))

    def uses(self, *names) -> bool:
        tree = ast.parse(self.source.strip(), mode="eval")
        used = {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)}
        return bool(used.intersection(names))

    def __call__(self, **values):
        ns = dict(_FUNCS)
        ns.update(_CONSTS)
        ns.update(values)
        return eval(self.code, {"__builtins__": {}}, ns)  # noqa: S307 - validated AST


def _space_vars(prefix: str, arr, dim: int) -> dict:
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 0:
        arr = np.full(dim, float(arr))
    out = {f"{prefix}{j + 1}": arr[j] for j in range(min(dim, arr.shape[0]))}
    for j in range(arr.shape[0], 2):
        out[f"{prefix}{j + 1}"] = 0.0
    if dim == 1:
        out.setdefault(f"{prefix}2", 0.0)
    return out


_COEF_VARS = ("x1", "x2", "t", "y1", "y2", "tau")


def flux_from_expr(dim: int, p: float, kind: str, expr: "str | list", c1=None, c2=None, name=None) -> FluxLaw:
    """Linear-matrix or weighted-p-laplacian flux from coefficient expressions.

    ``expr`` is a scalar expression (isotropic) or, for the linear-matrix
    kind, an ``N x N`` nested list of expressions.
    """
    if kind == "general-monotone":
        raise ExpressionError("general-monotone fluxes are only available as built-in ids")
    if isinstance(expr, str):
        e = Expression.compile(expr, _COEF_VARS)
        uses_xt = e.uses("x1", "x2", "t")
        uses_tau = e.uses("tau")

        def scalar(x, t, y, tau):
            return e(**_space_vars("x", x, dim), t=t, **_space_vars("y", y, dim), tau=tau)

        if kind == "linear-matrix":
            def coef(x, t, y, tau):
                w = np.asarray(scalar(x, t, y, tau), dtype=float)
                eye = np.eye(dim).reshape((dim, dim) + (1,) * w.ndim)
                return eye * w
        else:
            coef = scalar
    else:
        if kind != "linear-matrix":
            raise ExpressionError("matrix coefficients require the linear-matrix kind")
        es = [[Expression.compile(s, _COEF_VARS) for s in row] for row in expr]
        if len(es) != dim or any(len(row) != dim for row in es):
            raise ExpressionError(f"matrix coefficient must be {dim}x{dim}")
        uses_xt = any(e.uses("x1", "x2", "t") for row in es for e in row)
        uses_tau = any(e.uses("tau") for row in es for e in row)

        def coef(x, t, y, tau):
            kw = dict(**_space_vars("x", x, dim), t=t, **_space_vars("y", y, dim), tau=tau)
            S = np.shape(y)[1:]
            return np.array([[np.broadcast_to(np.asarray(e(**kw), dtype=float), S) for e in row] for row in es])

    return FluxLaw(dim, p, kind, coefficient=coef, c1=c1, c2=c2, name=name or f"expr:{expr}",
                   depends_on_xt=uses_xt, depends_on_tau=uses_tau)


def reaction_from_expr(dim: int, expr: str, C=None, name=None) -> ReactionLaw:
    e = Expression.compile(expr, ("y1", "y2", "tau", "r"))

    def g(y, tau, r):
        return e(**_space_vars("y", y, dim), tau=tau, r=r)

    return ReactionLaw(g, C=C, name=name or f"expr:{expr}", depends_on_tau=e.uses("tau"))


def density_from_expr(dim: int, expr: str, Lambda=None, name=None) -> DensityWeight:
    e = Expression.compile(expr, ("y1", "y2"))

    def rho(y):
        return e(**_space_vars("y", y, dim))

    return DensityWeight(rho, Lambda=Lambda if Lambda is not None else _fit_lambda(rho, dim),
                         name=name or f"expr:{expr}")


def _fit_lambda(rho, dim: int, n: int = 64) -> float:
    s = np.arange(n) / n
    y = np.array(np.meshgrid(*([s] * dim), indexing="ij"))
    v = np.broadcast_to(np.asarray(rho(y), dtype=float), y.shape[1:])
    if np.any(v <= 0):
        return math.inf
    return float(max(v.max(), 1.0 / v.min()))


def initial_from_expr(dim: int, expr: str):
    e = Expression.compile(expr, ("x1", "x2"))

    def u0(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(e(**_space_vars("x", x, dim)), dtype=float), x.shape[1:])

    return u0


# --------------------------------------------------------------------------
# built-in coefficients

TWO_PI = 2 * np.pi


def _iso(dim, w):
    w = np.asarray(w, dtype=float)
    return np.eye(dim).reshape((dim, dim) + (1,) * w.ndim) * w


def _flux_identity(dim, p):
    return FluxLaw(dim, 2.0, "linear-matrix", coefficient=lambda x, t, y, tau: np.eye(dim),
                   c1=1.0, c2=1.0, name="identity", depends_on_tau=False)


def _flux_linear_cos(dim, p):
    return FluxLaw(dim, 2.0, "linear-matrix",
                   coefficient=lambda x, t, y, tau: _iso(dim, 2 + np.cos(TWO_PI * y[0])),
                   c1=1.0, c2=3.0, name="linear_cos", depends_on_tau=False)


def _flux_linear_cos_tau(dim, p):
    return FluxLaw(dim, 2.0, "linear-matrix",
                   coefficient=lambda x, t, y, tau: _iso(
                       dim, (2 + np.cos(TWO_PI * y[0])) * (1 + 0.5 * np.sin(TWO_PI * np.asarray(tau)))),
                   c1=0.5, c2=4.5, name="linear_cos_tau")


def _flux_linear_aniso(dim, p):
    if dim != 2:
        raise ValueError("linear_aniso is two-dimensional")
    B = np.array([[2.0, 0.5], [0.5, 1.0]])
    return FluxLaw(2, 2.0, "linear-matrix", coefficient=lambda x, t, y, tau: B,
                   c1=0.79, c2=2.21, name="linear_aniso", depends_on_tau=False)


def _flux_linear_checker(dim, p):
    if dim != 2:
        raise ValueError("linear_checker is two-dimensional")
    return FluxLaw(2, 2.0, "linear-matrix",
                   coefficient=lambda x, t, y, tau: _iso(
                       2, (2 + np.cos(TWO_PI * y[0])) * (2 + np.sin(TWO_PI * y[1]))),
                   c1=1.0, c2=9.0, name="linear_checker", depends_on_tau=False)


def _flux_linear_xt(dim, p):
    return FluxLaw(dim, 2.0, "linear-matrix",
                   coefficient=lambda x, t, y, tau: _iso(
                       dim, (1 + 0.5 * np.asarray(x)[0] + 0 * np.asarray(t)) * (2 + np.cos(TWO_PI * y[0]))),
                   c1=1.0, c2=4.5, name="linear_xt", depends_on_xt=True, depends_on_tau=False)


def _flux_plap(dim, p):
    return FluxLaw(dim, p, "weighted-p-laplacian", coefficient=lambda x, t, y, tau: 1.0,
                   c1=2.0 ** (2 - p), c2=1.0, name="plap", depends_on_tau=False)


def _flux_plap_cos(dim, p):
    return FluxLaw(dim, p, "weighted-p-laplacian",
                   coefficient=lambda x, t, y, tau: 2 + np.cos(TWO_PI * y[0]),
                   c1=2.0 ** (2 - p), c2=3.0, name="plap_cos", depends_on_tau=False)


def _flux_cubic(dim, p):
    def w(y):
        return 1 + 0.5 * np.sin(TWO_PI * y[0])

    def a(x, t, y, tau, lam):
        return w(y) * (1 + np.sum(lam**2, axis=0)) * lam

    def jac(x, t, y, tau, lam, delta=0.0):
        N = lam.shape[0]
        eye = np.eye(N).reshape((N, N) + (1,) * (lam.ndim - 1))
        return w(y) * ((1 + np.sum(lam**2, axis=0)) * eye + 2 * lam[:, None] * lam[None, :])

    return FluxLaw(dim, 4.0, "general-monotone", func=a, jac_func=jac, c1=0.125, c2=3.0,
                   name="cubic", depends_on_tau=False)


BUILTIN_FLUXES: dict[str, Callable] = {
    "identity": _flux_identity,
    "linear_cos": _flux_linear_cos,
    "linear_cos_tau": _flux_linear_cos_tau,
    "linear_aniso": _flux_linear_aniso,
    "linear_checker": _flux_linear_checker,
    "linear_xt": _flux_linear_xt,
    "plap": _flux_plap,
    "plap_cos": _flux_plap_cos,
    "cubic": _flux_cubic,
}


def _r_arr(r):
    return np.asarray(r, dtype=float)


BUILTIN_REACTIONS: dict[str, Callable] = {
    "zero": lambda dim: ReactionLaw(lambda y, tau, r: 0.0, lambda y, tau, r: 0.0, C=0.0,
                                    name="zero", depends_on_tau=False),
    "r_sin": lambda dim: ReactionLaw(lambda y, tau, r: _r_arr(r) * np.sin(TWO_PI * y[0]),
                                     lambda y, tau, r: np.sin(TWO_PI * y[0]) + 0 * _r_arr(r),
                                     C=1.0, name="r_sin", depends_on_tau=False),
    "tanh_sin": lambda dim: ReactionLaw(lambda y, tau, r: np.tanh(_r_arr(r)) * np.sin(TWO_PI * y[0]),
                                        lambda y, tau, r: np.sin(TWO_PI * y[0]) / np.cosh(_r_arr(r)) ** 2,
                                        C=1.0, name="tanh_sin", depends_on_tau=False),
    "r_sin_tau": lambda dim: ReactionLaw(
        lambda y, tau, r: _r_arr(r) * np.sin(TWO_PI * y[0]) * (1 + 0.5 * np.sin(TWO_PI * np.asarray(tau))),
        lambda y, tau, r: np.sin(TWO_PI * y[0]) * (1 + 0.5 * np.sin(TWO_PI * np.asarray(tau))) + 0 * _r_arr(r),
        C=1.5, name="r_sin_tau"),
    "sin_tau": lambda dim: ReactionLaw(
        lambda y, tau, r: np.sin(TWO_PI * y[0]) * (1 + 0.5 * np.sin(TWO_PI * np.asarray(tau))) + 0 * _r_arr(r),
        lambda y, tau, r: 0 * y[0] + 0 * _r_arr(r), C=0.0, name="sin_tau"),
    "r_sin_cos": lambda dim: ReactionLaw(
        lambda y, tau, r: _r_arr(r) * np.sin(TWO_PI * y[0]) * np.cos(TWO_PI * y[-1]),
        lambda y, tau, r: np.sin(TWO_PI * y[0]) * np.cos(TWO_PI * y[-1]) + 0 * _r_arr(r),
        C=1.0, name="r_sin_cos", depends_on_tau=False),
    "r_one_plus_sin": lambda dim: ReactionLaw(
        lambda y, tau, r: _r_arr(r) * (1 + np.sin(TWO_PI * y[0])),
        lambda y, tau, r: 1 + np.sin(TWO_PI * y[0]) + 0 * _r_arr(r),
        C=2.0, name="r_one_plus_sin", depends_on_tau=False),
}

BUILTIN_DENSITIES: dict[str, Callable] = {
    "one": lambda dim: DensityWeight(lambda y: 1.0, Lambda=1.0, name="one"),
    "cos_half": lambda dim: DensityWeight(lambda y: 1 + 0.5 * np.cos(TWO_PI * y[0]), Lambda=2.0, name="cos_half"),
}


def _sin_pi(domain):
    def u0(x):
        x = np.asarray(x, dtype=float)
        out = np.ones(x.shape[1:])
        for j, (lo, hi) in enumerate(domain):
            out = out * np.sin(np.pi * (x[j] - lo) / (hi - lo))
        return out
    return u0


def _step(domain):
    def u0(x):
        x = np.asarray(x, dtype=float)
        out = np.ones(x.shape[1:])
        for j, (lo, hi) in enumerate(domain):
            s = (x[j] - lo) / (hi - lo)
            out = out * ((s > 0.25) & (s < 0.75))
        return out.astype(float)
    return u0


BUILTIN_INITIALS: dict[str, Callable] = {
    "sin_pi": _sin_pi,
    "zero": lambda domain: (lambda x: np.zeros(np.shape(x)[1:])),
    "step": _step,
}

# initial data that are piecewise continuous and should be projected by cell averages
DISCONTINUOUS_INITIALS = {"step"}
