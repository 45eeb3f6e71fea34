"""Homogenized coefficient of b(y) = 2 + cos(2 pi y) against sqrt(3) across cell resolutions."""

import math

from homog_rd.cell import CellSettings, cell_flux_average, solve_cell
from homog_rd.coefficients import BUILTIN_DENSITIES, BUILTIN_FLUXES, BUILTIN_REACTIONS, Regime


def main():
    b = BUILTIN_FLUXES["linear_cos"](1, 2)
    zero, one = BUILTIN_REACTIONS["zero"](1), BUILTIN_DENSITIES["one"](1)
    print(f"{'n':>6s}  {'bhat':>20s}  {'bhat - sqrt 3':>14s}")
    for n in (4, 8, 16, 32, 64, 128, 256):
        sol = solve_cell(0.5, 0.0, 0.0, [1.0], b, zero, one, Regime.SUB, CellSettings(n=n))
        bh = cell_flux_average(sol, b)[0]
        print(f"{n:6d}  {bh:20.16f}  {bh - math.sqrt(3):14.3e}")


if __name__ == "__main__":
    main()
