"""Picard iteration counts and contraction factors against dt on the standard bubble.

    python scripts/picard_study.py --n 32 --dts 4e-3 2e-3 1e-3 5e-4 2.5e-4
"""

import argparse

from qflow import GridSpec, MaterialParams, SchemeConfig, State, VelocityField, ViscositySpec
from qflow import picard_step, standard_bubble


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--dts", type=float, nargs="+", default=[4e-3, 2e-3, 1e-3, 5e-4, 2.5e-4])
    args = ap.parse_args()
    g = GridSpec(args.n, args.n)
    st0 = State(0.0, VelocityField.zeros(g), standard_bubble(g, 3))
    for dt in args.dts:
        _, rep = picard_step(st0, MaterialParams(), ViscositySpec(), SchemeConfig(dt=dt))
        print(f"dt={dt:9.2e}  iterations={rep.iterations:3d}  rho={rep.rho:.4f}")


if __name__ == "__main__":
    main()
