"""Regularized runs at decreasing epsilon against the epsilon = 0 run.

    python scripts/epsilon_study.py --eps 1e-2 1e-3 1e-4 1e-5 --n 32
"""

import argparse

from qflow.verify import epsilon_limit_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eps", type=float, nargs="+", default=[1e-2, 1e-3, 1e-4])
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--steps", type=int, default=20)
    ap.add_argument("--dt", type=float, default=1e-3)
    args = ap.parse_args()
    reps = epsilon_limit_study(eps_list=tuple(args.eps), n=args.n, steps=args.steps, dt=args.dt)
    d = reps[0].details
    for e, diff in zip(d["eps"], d["diff"]):
        print(f"eps={e:8.1e}  ||Q_eps - Q_0|| = {diff:.4e}")
    for r in reps:
        print(r.line())


if __name__ == "__main__":
    main()
