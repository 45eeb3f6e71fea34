"""Command-line interface: ``homog-rd <subcommand> --config <file> [options]``.

Exit codes: 0 when every asserted check passes, 2 when a check fails, 1 on
usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .scenario import ConfigError, load_scenario, validate_scenario

EXIT_OK, EXIT_USAGE, EXIT_CHECK = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _floats(s: str) -> list[float]:
    from fractions import Fraction

    try:
        return [float(Fraction(v)) for v in s.replace(",", " ").split()]
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"expected numbers, got {s!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario file")
    common.add_argument("--out", help="output directory (default out/<scenario>)")
    common.add_argument("--seed", type=int, help="seed of the validation sampler")
    common.add_argument("--threads", type=int, default=1, help="worker threads for tabulation")
    common.add_argument("--epsilon", type=_floats, help="epsilon override (dns, cell)")
    common.add_argument("--no-cache", action="store_true", help="ignore the effective-table cache")
    common.add_argument("--regime-override", help=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="homog-rd", description="Periodic homogenization of reaction-diffusion problems.")
    p.add_argument("--version", action="version", version=f"homog_rd {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("validate", parents=[common], help="sampled assumption checks")
    pot = sub.add_parser("potential", parents=[common], help="reaction potential R and G")
    pot.add_argument("--r", type=_floats, default=[1.0], help="r samples")
    cell = sub.add_parser("cell", parents=[common], help="single cell solve")
    cell.add_argument("--xi", type=_floats, help="macro gradient xi (default 0)")
    cell.add_argument("--r", type=_floats, default=[0.0], help="macro value r")
    cell.add_argument("--x", type=_floats, help="macro point x (default domain centre)")
    cell.add_argument("--t", type=float, default=0.0, help="macro time t")
    sub.add_parser("effective", parents=[common], help="build or inspect the effective table")
    mac = sub.add_parser("macro", parents=[common], help="solve the homogenized problem")
    mac.add_argument("--stride", type=int, default=0, help="snapshot stride (default: ~16 snapshots)")
    dns = sub.add_parser("dns", parents=[common], help="direct simulation for one epsilon")
    dns.add_argument("--stride", type=int, default=0, help="snapshot stride (default: ~16 snapshots)")
    sub.add_parser("verify", parents=[common], help="full convergence study")
    sub.add_parser("report", parents=[common], help="print a stored convergence report")
    return p


def _out_dir(args, cfg) -> Path:
    out = Path(args.out) if args.out else Path("out") / cfg.name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_validate(args, cfg) -> int:
    rep = validate_scenario(cfg, seed=args.seed)
    print(rep.to_text())
    if args.out:
        (_out_dir(args, cfg) / "validation.json").write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK if rep.passed else EXIT_CHECK


def _cmd_potential(args, cfg) -> int:
    from .fieldio import write_field_binary
    from .torus import PeriodicField, TorusGrid, build_potential

    dep = cfg.reaction.depends_on_tau
    grid = TorusGrid(cfg.dim, cfg.grids.cell_y, cfg.grids.cell_tau if dep else None)
    pot = build_potential(cfg.reaction, args.r, grid)
    print(f"potential on n={grid.n}{f', m={grid.m}' if dep else ''} for r = {pot.r_samples.tolist()}")
    print(f"  bound constant max|G|/|r| = {pot.bound_constant():.6e}")
    print(f"  Lipschitz max|d_r G|      = {pot.lipschitz_constant():.6e}")
    out = _out_dir(args, cfg)
    for i, r in enumerate(pot.r_samples):
        write_field_binary(out / f"R_r{i}.bin", PeriodicField(grid, pot.R[i]))
        for j in range(cfg.dim):
            write_field_binary(out / f"G{j + 1}_r{i}.bin", PeriodicField(grid, pot.G[i, j]))
    return EXIT_OK


def _cmd_cell(args, cfg) -> int:
    from .cell import cell_flux_average, cell_reaction_average, solve_cell
    from .effective import cell_settings
    from .fieldio import write_field_binary, write_field_csv

    N = cfg.dim
    xi = np.zeros(N) if args.xi is None else np.broadcast_to(np.array(args.xi), (N,))
    x = np.array([0.5 * (lo + hi) for lo, hi in cfg.domain]) if args.x is None else np.broadcast_to(
        np.array(args.x), (N,))
    r = float(args.r[0])
    sol = solve_cell(x, args.t, r, xi, cfg.flux, cfg.reaction, cfg.density, cfg.regime, cell_settings(cfg))
    q = cell_flux_average(sol, cfg.flux)
    q0 = cell_reaction_average(sol, cfg.reaction)
    print(f"cell solve ({cfg.regime.value}) at x={x.tolist()}, t={args.t:g}, r={r:g}, xi={xi.tolist()}")
    print(f"  residual     {sol.residual:.3e} after {sol.iterations} iterations ({sol.picard_steps} Picard)")
    print(f"  int rho pi   {sol.constraint:.3e}")
    if sol.grid.has_tau:
        print(f"  pairing      {sol.pairing:.3e}")
    print(f"  q  = {q.tolist()}")
    print(f"  q0 = {q0:.12e}")
    out = _out_dir(args, cfg)
    write_field_binary(out / "pi.bin", sol.pi)
    write_field_csv(out / "pi.csv", sol.pi)
    return EXIT_OK


def _cmd_effective(args, cfg) -> int:
    from .effective import save_table, tabulate_effective

    eff = tabulate_effective(cfg, threads=args.threads, use_cache=not args.no_cache)
    print(json.dumps(eff.digest(), indent=2, sort_keys=True))
    save_table(eff, _out_dir(args, cfg) / "effective.tab")
    if eff.partial:
        print(f"table is partial: {len(eff.failures)} cell solves failed", file=sys.stderr)
        for f in eff.failures[:10]:
            print(f"  {f}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def _snapshots(path, times, U, grid, stride):
    from .fieldio import write_series_csv

    stride = stride or max(1, (len(times) - 1) // 16)
    X = grid.nodes().reshape(grid.dim, -1)
    cols = {f"x{j + 1}": X[j] for j in range(grid.dim)}
    for n in range(0, len(times), stride):
        cols[f"t={times[n]:.6g}"] = U[n].ravel()
    if (len(times) - 1) % stride:
        cols[f"t={times[-1]:.6g}"] = U[-1].ravel()
    write_series_csv(path, cols)


def _cmd_macro(args, cfg) -> int:
    from .effective import tabulate_effective
    from .macro import solve_macro

    eff = tabulate_effective(cfg, threads=args.threads, use_cache=not args.no_cache)
    if eff.partial:
        print("effective table is partial; run `effective` to inspect the failures", file=sys.stderr)
        return EXIT_CHECK
    sol = solve_macro(cfg, eff)
    norms = sol.norms(cfg.p)
    print(json.dumps({"norms": norms, "clamped_queries": sol.clamps,
                      "max_newton": max(s.newton_iterations for s in sol.steps)}, indent=2, sort_keys=True))
    out = _out_dir(args, cfg)
    _snapshots(out / "macro.csv", sol.times, sol.U, sol.grid, args.stride)
    return EXIT_OK


def _cmd_dns(args, cfg) -> int:
    from .dns import apriori_monitor, dns_solve, energy_monitor
    from .fieldio import write_series_csv

    eps = float(args.epsilon[0]) if args.epsilon else cfg.epsilons[0]
    sol = dns_solve(cfg, eps)
    mon = apriori_monitor(sol)
    en = energy_monitor(sol)
    mon["energy_residual"] = float(np.max(np.abs(en)))
    print(json.dumps({"eps": eps, "nodes": [m + 1 for m in sol.grid.M], "steps": len(sol.times) - 1,
                      "monitors": mon}, indent=2, sort_keys=True))
    out = _out_dir(args, cfg)
    _snapshots(out / f"dns_eps{eps:g}.csv", sol.times, sol.U, sol.grid, args.stride)
    e = sol.energy_terms
    write_series_csv(out / f"monitors_eps{eps:g}.csv", {
        "t": sol.times, "energy_residual": en, "mass": e["mass"], "dissipation": e["dissipation"],
        "reaction": e["reaction"]})
    return EXIT_OK


def _cmd_verify(args, cfg) -> int:
    from .pipeline import StageError, run_convergence_study

    t0 = time.perf_counter()
    try:
        rep = run_convergence_study(cfg, threads=args.threads, use_cache=not args.no_cache)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CHECK
    out = _out_dir(args, cfg)
    (out / "report.txt").write_text(rep.to_text())
    (out / "report.json").write_text(rep.to_json())
    timings = dict(rep.timings, total=time.perf_counter() - t0)
    (out / "timings.json").write_text(json.dumps(timings, indent=2, sort_keys=True))
    print(rep.to_text(), end="")
    return EXIT_OK if rep.passed else EXIT_CHECK


def _cmd_report(args, cfg) -> int:
    from .pipeline import ConvergenceReport

    out = Path(args.out) if args.out else Path("out") / cfg.name
    path = out / "report.json"
    if not path.is_file():
        print(f"no report at {path}; run `verify` first", file=sys.stderr)
        return EXIT_USAGE
    rep = ConvergenceReport.from_dict(json.loads(path.read_text()))
    print(rep.to_text(), end="")
    return EXIT_OK if rep.passed else EXIT_CHECK


COMMANDS = {
    "validate": _cmd_validate, "potential": _cmd_potential, "cell": _cmd_cell, "effective": _cmd_effective,
    "macro": _cmd_macro, "dns": _cmd_dns, "verify": _cmd_verify, "report": _cmd_report,
}


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    if args.regime_override is not None:
        print("--regime-override is not supported: the regime is derived from k", file=sys.stderr)
        return EXIT_USAGE
    if args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_scenario(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None and args.command != "validate":
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    try:
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeError, ValueError) as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return EXIT_CHECK


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
