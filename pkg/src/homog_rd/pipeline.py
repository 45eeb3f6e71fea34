"""End-to-end convergence study: validate, tabulate, macro solve, DNS ladder, compare."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .dns import apriori_monitor, dns_solve, energy_monitor, l2_qt_error
from .effective import EffectiveLaw, tabulate_effective
from .macro import solve_macro
from .scenario import ScenarioConfig, validate_scenario

log = logging.getLogger(__name__)

REPORT_SCHEMA = "homog_rd.report/1"
MONITOR_FACTOR = 2.0


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


@dataclass
class Check:
    name: str
    passed: bool
    asserted: bool
    detail: str = ""


@dataclass
class ConvergenceReport:
    scenario: str
    regime: str
    k: float
    p: float
    epsilons: list
    errors: list
    monitors: list
    macro_norms: dict
    effective: dict
    config_hash: str
    version: str = __version__
    checks: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.asserted)

    def to_dict(self) -> dict:
        """Structured form; wall-clock timings are kept out so the output is reproducible."""
        d = asdict(self)
        d.pop("timings")
        d["schema"] = REPORT_SCHEMA
        d["passed"] = self.passed
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [
            f"convergence report: {self.scenario}",
            f"  regime {self.regime} (k={self.k:g}), p={self.p:g}",
            f"  config sha256 {self.config_hash}",
            f"  homog_rd {self.version}",
            "",
            f"  {'eps':>10s}  {'L2(Q_T) error':>14s}  {'sup|u|^2':>12s}  {'int|Du|^p':>12s}  {'energy res':>11s}",
        ]
        for eps, err, mon in zip(self.epsilons, self.errors, self.monitors):
            lines.append(f"  {eps:10.6g}  {err:14.6e}  {mon['sup_l2_sq']:12.6e}  {mon['int_grad_p']:12.6e}  "
                         f"{mon['energy_residual']:11.3e}")
        lines.append("")
        if "bhat" in self.effective:
            lines.append(f"  bhat = {self.effective['bhat']}")
        for pr in self.effective.get("probes", [])[:3]:
            lines.append(f"  q(r={pr['r']:g}, xi={pr['xi']}) = {pr['q']}, q0 = {pr['q0']:.6e}")
        lines.append("")
        for c in self.checks:
            tag = "PASS" if c.passed else "FAIL"
            lines.append(f"  [{tag}] {c.name}{'' if c.asserted else ' (informational)'}: {c.detail}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ConvergenceReport":
        checks = [Check(**c) for c in d.get("checks", [])]
        keys = {f for f in cls.__dataclass_fields__} - {"checks", "timings"}
        return cls(**{k: d[k] for k in keys if k in d}, checks=checks)


def _stage(name, timings, fn, *args, **kwargs):
    t0 = time.perf_counter()
    try:
        out = fn(*args, **kwargs)
    except Exception as exc:  # noqa: BLE001 - any failure is reported with the stage name
        raise StageError(name, str(exc)) from exc
    timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0
    log.info("stage %s done in %.2fs", name, timings[name])
    return out


def run_convergence_study(cfg: ScenarioConfig, threads: int = 1, use_cache: bool = True,
                          eff: EffectiveLaw | None = None) -> ConvergenceReport:
    """Macro solve once, DNS per epsilon, and the L^2(Q_T) comparison.

    With ``cfg.assert_convergence`` the errors must decrease strictly and
    the a priori monitors must stay within a factor 2 of their values at
    the largest epsilon.
    """
    timings: dict = {}
    val = _stage("validate", timings, validate_scenario, cfg)
    if not val.passed:
        raise StageError("validate", "; ".join(val.messages()))
    if eff is None:
        eff = _stage("effective", timings, tabulate_effective, cfg, threads=threads, use_cache=use_cache)
    if eff.partial:
        raise StageError("effective", f"effective table is partial ({len(eff.failures)} failed cell solves); "
                         "refine grids.cell_y, loosen tol.cell or shrink the [tab] lattice and rerun")
    macro = _stage("macro", timings, solve_macro, cfg, eff)
    errors, monitors = [], []
    for eps in cfg.epsilons:
        sol = _stage("dns", timings, dns_solve, cfg, eps)
        err = _stage("compare", timings, l2_qt_error, sol, macro)
        mon = apriori_monitor(sol)
        mon["energy_residual"] = float(np.max(np.abs(energy_monitor(sol))))
        mon["newton_max"] = int(max((s.newton_iterations for s in sol.steps), default=0))
        mon["substeps_max"] = int(max((s.substeps for s in sol.steps), default=1))
        mon["nodes"] = [int(m) + 1 for m in sol.grid.M]
        mon["steps"] = int(len(sol.times) - 1)
        errors.append(err)
        monitors.append(mon)

    checks = []
    asserted = bool(cfg.assert_convergence) and len(errors) > 1
    dec = all(b < a for a, b in zip(errors, errors[1:]))
    checks.append(Check("errors strictly decreasing", dec if len(errors) > 1 else True, asserted,
                        " > ".join(f"{e:.3e}" for e in errors)))
    ref = monitors[0]
    worst = 1.0
    for m in monitors:
        for key in ("sup_l2_sq", "int_grad_p"):
            if ref[key] > 0 and m[key] > 0:
                worst = max(worst, m[key] / ref[key], ref[key] / m[key])
            elif ref[key] != m[key]:
                worst = float("inf")
    checks.append(Check("a priori monitors within 2x of the largest eps", worst < MONITOR_FACTOR, asserted,
                        f"worst ratio {worst:.4f}"))
    newton_ok = macro.newton_converged()
    checks.append(Check("macro Newton converged at every step", newton_ok, True,
                        f"max iterations {max((s.newton_iterations for s in macro.steps), default=0)}, "
                        f"max substeps {max((s.substeps for s in macro.steps), default=1)}"))
    checks.append(Check("effective-law queries inside the lattice", macro.clamps == 0, False,
                        f"{macro.clamps} clamped queries"))

    return ConvergenceReport(
        scenario=cfg.name, regime=cfg.regime.value, k=cfg.k, p=cfg.p, epsilons=list(cfg.epsilons),
        errors=errors, monitors=monitors, macro_norms=macro.norms(cfg.p), effective=eff.digest(),
        config_hash=cfg.config_hash, checks=checks, timings=timings,
    )
