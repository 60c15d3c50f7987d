"""Independent oracle values for the test suite.

Computed with sympy (exact arithmetic or high-precision quadrature) without
importing qflow. Output is frozen into ``tests/oracle_values.json``::

    python scripts/oracles.py > tests/oracle_values.json
"""

import json

import sympy as sp

x, y = sp.symbols("x y", real=True)
pi = sp.pi


def f_bulk(Q, a=1, b=1, c=1):
    tr2 = (Q * Q).trace()
    tr3 = (Q * Q * Q).trace()
    return sp.Rational(a) / 2 * tr2 - sp.Rational(b) / 3 * tr3 + sp.Rational(c) / 4 * tr2**2


def f_bulk_tr4(Q, a=1, b=1, c=1):
    tr2 = (Q * Q).trace()
    tr3 = (Q * Q * Q).trace()
    tr4 = (Q * Q * Q * Q).trace()
    return sp.Rational(a) / 2 * tr2 - sp.Rational(b) / 3 * tr3 + sp.Rational(c) / 4 * tr4


def lower_order(Q, a=1, b=1, c=1):
    d = Q.shape[0]
    tr2 = (Q * Q).trace()
    return -a * Q + b * (Q * Q - tr2 * sp.eye(d) / d) - c * tr2 * Q


def nested(M):
    return [[float(v) for v in row] for row in M.tolist()]


def main():
    out = {}
    h = sp.Rational(1, 2)
    Q2 = sp.diag(h, -h)
    Q3 = sp.diag(-sp.Rational(1, 3), -sp.Rational(1, 3), sp.Rational(2, 3))
    out["fB_diag_half_2d"] = float(f_bulk(Q2))
    out["fB_diag_half_2d_tr4"] = float(f_bulk_tr4(Q2))
    out["fB_uniaxial_e3"] = float(f_bulk(Q3))
    out["L_diag_half_2d"] = nested(lower_order(Q2))
    out["L_uniaxial_e3"] = nested(lower_order(Q3))
    tr2 = (Q2 * Q2).trace()
    out["nu_rational_diag_half"] = float(1 + tr2 / (1 + tr2))

    # co-rotation and commutator examples
    W = sp.Matrix([[0, h], [-h, 0]])
    out["S_example"] = nested(W * Q2 - Q2 * W)
    L2 = sp.Matrix([[0, 1], [1, 0]])
    out["sigma_example"] = nested(Q2 * L2 - L2 * Q2)

    # sine profile Q = phi * Qhat on the unit square, phi = sin(pi x) sin(pi y)
    phi = sp.sin(pi * x) * sp.sin(pi * y)
    Qhat = sp.Matrix([[sp.Rational(3, 10), sp.Rational(1, 5)], [sp.Rational(1, 5), -sp.Rational(3, 10)]])
    qq = (Qhat * Qhat).trace()
    grad_sq = (sp.diff(phi, x) ** 2 + sp.diff(phi, y) ** 2) * qq
    out["sine_gradient_energy"] = float(sp.integrate(grad_sq, (x, 0, 1), (y, 0, 1)))
    fb = f_bulk(phi * Qhat)
    out["sine_bulk_energy"] = float(sp.integrate(sp.expand(fb), (x, 0, 1), (y, 0, 1)))
    out["sine_Q_L2_sq"] = float(sp.integrate(phi**2 * qq, (x, 0, 1), (y, 0, 1)))
    lap = sp.diff(phi, x, 2) + sp.diff(phi, y, 2)
    out["sine_Q_lap_sq"] = float(sp.integrate(lap**2 * qq, (x, 0, 1), (y, 0, 1)))

    # velocity U = curl(sin^2(pi x) sin^2(pi y))
    psi = sp.sin(pi * x) ** 2 * sp.sin(pi * y) ** 2
    U1, U2 = sp.diff(psi, y), -sp.diff(psi, x)
    out["curl_velocity_L2_sq"] = float(sp.integrate(sp.expand(U1**2 + U2**2), (x, 0, 1), (y, 0, 1)))
    gsq = sum(sp.diff(c, v) ** 2 for c in (U1, U2) for v in (x, y))
    out["curl_velocity_grad_sq"] = float(sp.integrate(sp.expand(gsq), (x, 0, 1), (y, 0, 1)))
    D12 = (sp.diff(U1, y) + sp.diff(U2, x)) / 2
    dsq = sp.diff(U1, x) ** 2 + sp.diff(U2, y) ** 2 + 2 * D12**2
    out["curl_velocity_strain_sq"] = float(sp.integrate(sp.expand(dsq), (x, 0, 1), (y, 0, 1)))

    # discrete Dirichlet (odd ghost) eigenvalue of -lap_h for the lowest sine mode
    n = 32
    hh = sp.Rational(1, n)
    mu = 2 * 4 / hh**2 * sp.sin(pi * hh / 2) ** 2
    out["mu_h_n32"] = float(mu)
    dt = sp.Rational(1, 1000)
    out["heat_factor_n32_dt1e-3"] = float(1 / (1 + dt * mu))
    print(json.dumps(out, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
