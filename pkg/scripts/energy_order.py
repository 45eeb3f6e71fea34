"""Energy-identity residual of the DNS under simultaneous halving of h and dt (heat scenario)."""

import sys
from pathlib import Path

import numpy as np

from homog_rd._fd import BoxGrid
from homog_rd.dns import dns_solve, energy_monitor
from homog_rd.scenario import load_scenario


def main(path=None):
    path = path or Path(__file__).resolve().parents[1] / "scenarios" / "heat_1d.cfg"
    cfg = load_scenario(path)
    prev = None
    print(f"{'M':>5s}  {'residual':>12s}  {'ratio':>6s}")
    for M in (16, 32, 64, 128):
        sol = dns_solve(cfg, cfg.epsilons[0], nsteps=M, grid=BoxGrid(cfg.domain, (M,) * cfg.dim))
        res = float(np.max(np.abs(energy_monitor(sol))))
        print(f"{M:5d}  {res:12.4e}  {'' if prev is None else f'{prev / res:6.3f}'}")
        prev = res


if __name__ == "__main__":
    main(*sys.argv[1:])
