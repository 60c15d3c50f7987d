"""Spatial and temporal convergence tables for the manufactured solutions.

    python scripts/mms_table.py --grids 16 32 64 128
"""

import argparse

from qflow.verify import mms_convergence, temporal_order


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grids", type=int, nargs="+", default=[16, 32, 64])
    ap.add_argument("--problems", nargs="+", default=["heat", "stokes", "coupled_linear"])
    args = ap.parse_args()
    for prob in args.problems:
        r = mms_convergence(prob, grids=tuple(args.grids))
        print(f"{prob}: {'PASS' if r.passed else 'FAIL'}")
        for key, errs in r.details["errors"].items():
            if not any(errs):
                continue
            orders = r.details["orders"][key]
            print(f"  {key:>2s}  " + "  ".join(f"n={n:<4d} e={e:.3e}" for n, e in zip(args.grids, errs)))
            print("      orders " + " ".join(f"{o:.3f}" for o in orders))
    t = temporal_order()
    print("temporal: " + " ".join(f"dt={d:.2e} e={e:.3e}" for d, e in zip(t.details["dt"], t.details["errors"])))
    print("  orders " + " ".join(f"{o:.3f}" for o in t.details["orders"]))


if __name__ == "__main__":
    main()
