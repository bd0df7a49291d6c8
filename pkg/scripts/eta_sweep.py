"""Membrane-thickness sweep against the sharp-interface micro solver.

For a fixed eps the thick-membrane solution (bulk conduction with a low
conducting band of width eta around each interface) should approach the
dynamic sharp-interface solution as eta shrinks.  Prints the distance
column for each eta.

    python3 scripts/eta_sweep.py --etas 0.2 0.1 0.05 --eps 0.5
"""
import argparse
import sys

from bh import cell, geometry, micro
from bh.config import preset_function
from bh.timegrid import TimeGrid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--etas", type=float, nargs="+", default=[0.2, 0.1, 0.05])
    ap.add_argument("--eps", type=float, default=0.5)
    ap.add_argument("--r0", type=float, default=0.25)
    ap.add_argument("--h", type=float, default=0.04, help="cell mesh size")
    ap.add_argument("--t-end", type=float, default=0.5)
    ap.add_argument("--dt", type=float, default=0.025)
    ap.add_argument("--out", default=None, help="write the csv here")
    args = ap.parse_args()

    coeffs = cell.CellCoefficients(1.0, 3.0, 1.0)
    spec = geometry.GeometrySpec("Disk2D", {"r0": args.r0}, h=args.h)
    rep = micro.concentration_study(
        args.etas, spec=spec, coeffs=coeffs,
        grid=TimeGrid(args.t_end, args.dt), eps=args.eps,
        u0_bar=preset_function("sin-product", 2))

    text = rep.csv()
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"wrote {args.out}")
    print(text, end="")
    return 0 if rep.monotone_decrease else 1


if __name__ == "__main__":
    sys.exit(main())
