"""Discrete energy, dissipation rate and the dissipation audit.

The discrete free energy is built so that its variational derivative is exactly
``-H_h = -(lam lap_h Q + L(Q))``. The gradient part sums squared differences over
all cell faces (wall faces use the odd ghost and carry weight 1/2), which equals
``-<Q, lap_h Q> / 2`` by summation by parts.

The dissipation rate is ``B = int nu(Q) |D u|^2 + Gamma ||H(Q)||^2`` with
``D u`` the symmetric velocity gradient. For constant ``nu = 1`` and
divergence-free ``u`` vanishing on the wall, the first term is ``||grad u||^2 / 2``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .grid_ops import QField, VelocityField, operators, strain_energy, velocity_gradient
from .poisson_helmholtz import viscosity_fields
from .tensor_core import MaterialParams, ViscositySpec, bulk_energy_fB, frobenius_metric, lower_order_L, to_matrix

__all__ = [
    "free_energy",
    "kinetic_energy",
    "molecular_field",
    "dissipation_B",
    "EnergyLedger",
    "AuditReport",
    "dissipation_audit",
    "DiagnosticNorms",
    "diagnostic_norms",
]

CSV_HEADER = ("t", "kinetic", "free_energy", "total", "B", "cumB", "residual")


def _q_sq(flat: np.ndarray, dim: int) -> np.ndarray:
    """Per-row Frobenius square of coefficient rows."""
    G = frobenius_metric(dim)
    return np.sum((flat @ G) * flat, axis=-1)


def gradient_energy(Q: QField) -> float:
    """``int |grad Q|^2`` from face differences, i.e. ``-<Q, lap_h Q>``."""
    o = operators(Q.grid)
    gx = _q_sq(o.fgx @ Q.flat, Q.dim)
    gy = _q_sq(o.fgy @ Q.flat, Q.dim)
    return float((o.fwx @ gx + o.fwy @ gy) * Q.grid.cell_area)


def free_energy(Q: QField, p: MaterialParams) -> float:
    """``F(Q) = int lam/2 |grad Q|^2 + f_B(Q)`` with midpoint quadrature for ``f_B``."""
    bulk = float(np.sum(bulk_energy_fB(Q.matrices(), p)) * Q.grid.cell_area)
    return 0.5 * p.lam * gradient_energy(Q) + bulk


def kinetic_energy(u: VelocityField) -> float:
    return 0.5 * float(u.u.ravel() @ u.u.ravel() + u.v.ravel() @ u.v.ravel()) * u.grid.cell_area


def molecular_field(Q: QField, p: MaterialParams) -> np.ndarray:
    """``H_h = lam lap_h Q + L(Q)`` per cell, shape ``(n_cells, d, d)``."""
    lq = to_matrix(operators(Q.grid).lap_c @ Q.flat, Q.dim)
    return p.lam * lq + lower_order_L(to_matrix(Q.flat, Q.dim), p)


def dissipation_B(u: VelocityField, Q: QField, p: MaterialParams, spec: ViscositySpec = ViscositySpec()) -> float:
    """``int nu(Q) |D u|^2 + Gamma int |H(Q)|^2``; nonnegative."""
    nu_c, nu_n = viscosity_fields(Q, spec)
    H = molecular_field(Q, p)
    return strain_energy(u, nu_c, nu_n) + p.gamma * float(np.sum(H * H)) * Q.grid.cell_area


@dataclass
class EnergyLedger:
    """Append-only record of energies along a run.

    ``cumB`` integrates ``B`` with the right-endpoint rule, which is the
    quadrature that the backward-Euler step dissipates exactly; the trapezoid
    value is kept in ``cumB_trapezoid`` for reference.
    """

    t: list = field(default_factory=list)
    kinetic: list = field(default_factory=list)
    free: list = field(default_factory=list)
    total: list = field(default_factory=list)
    B: list = field(default_factory=list)
    cumB: list = field(default_factory=list)
    cumB_trapezoid: list = field(default_factory=list)
    residual: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.t)

    def record(self, state, p: MaterialParams, spec: ViscositySpec = ViscositySpec()) -> None:
        if self.t and not state.t > self.t[-1]:
            raise ValueError(f"ledger times must increase ({state.t} after {self.t[-1]})")
        k = kinetic_energy(state.u)
        f = free_energy(state.Q, p)
        b = dissipation_B(state.u, state.Q, p, spec)
        vals = (state.t, k, f, b)
        if not all(math.isfinite(v) for v in vals):
            raise FloatingPointError(f"non-finite energy at t={state.t}")
        if self.t:
            dt = state.t - self.t[-1]
            cum = self.cumB[-1] + dt * b
            trap = self.cumB_trapezoid[-1] + 0.5 * dt * (b + self.B[-1])
        else:
            cum = trap = 0.0
        self.t.append(state.t)
        self.kinetic.append(k)
        self.free.append(f)
        self.total.append(k + f)
        self.B.append(b)
        self.cumB.append(cum)
        self.cumB_trapezoid.append(trap)
        self.residual.append(k + f + cum - self.total[0])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for row in zip(self.t, self.kinetic, self.free, self.total, self.B, self.cumB, self.residual):
                w.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path) -> "EnergyLedger":
        led = cls()
        with open(path, newline="") as fh:
            r = csv.DictReader(fh)
            for row in r:
                led.t.append(float(row["t"]))
                led.kinetic.append(float(row["kinetic"]))
                led.free.append(float(row["free_energy"]))
                led.total.append(float(row["total"]))
                led.B.append(float(row["B"]))
                led.cumB.append(float(row["cumB"]))
                led.residual.append(float(row["residual"]))
        led.cumB_trapezoid = [math.nan] * len(led.t)
        return led


@dataclass(frozen=True)
class AuditReport:
    max_residual: float  # signed maximum of E(t) + int B - E(0)
    max_abs_residual: float
    E0: float
    tol_audit: float
    passed: bool
    monotone: bool  # E^{n+1} <= E^n + tol_audit * dt for every step
    max_increase: float  # max over steps of (E^{n+1} - E^n) / dt

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"dissipation audit {verdict}: max residual {self.max_residual:.3e} "
            f"(bound {self.tol_audit * (1 + self.E0):.3e}), monotone={self.monotone}"
        )


def dissipation_audit(ledger: EnergyLedger, tol_audit: float = 1e-3) -> AuditReport:
    """Check ``E(t) + int_0^t B <= E(0)`` up to ``tol_audit (1 + E(0))``."""
    if len(ledger) == 0:
        raise ValueError("empty ledger")
    res = np.asarray(ledger.residual)
    E = np.asarray(ledger.total)
    t = np.asarray(ledger.t)
    E0 = float(E[0])
    if len(E) > 1:
        inc = np.diff(E) / np.diff(t)
        max_inc = float(inc.max())
    else:
        max_inc = 0.0
    monotone = max_inc <= tol_audit
    mx = float(res.max())
    return AuditReport(
        max_residual=mx,
        max_abs_residual=float(np.abs(res).max()),
        E0=E0,
        tol_audit=tol_audit,
        passed=bool(mx <= tol_audit * (1.0 + abs(E0))),
        monotone=bool(monotone),
        max_increase=max_inc,
    )


@dataclass(frozen=True)
class DiagnosticNorms:
    u_L2: float
    u_H1: float
    Q_L2: float
    Q_H1: float
    Q_H2: float
    B: float


def diagnostic_norms(state, p: MaterialParams, spec: ViscositySpec = ViscositySpec()) -> DiagnosticNorms:
    """Discrete ``||u||_{H^1}``, ``||Q||_{H^1}``, ``||Q||_{H^2}`` proxies and ``B``."""
    u, Q = state.u, state.Q
    A = Q.grid.cell_area
    o = operators(Q.grid)
    uL2 = 2.0 * kinetic_energy(u)
    gu = float(np.sum(velocity_gradient(u) ** 2)) * A
    qL2 = float(np.sum(_q_sq(Q.flat, Q.dim))) * A
    qg = gradient_energy(Q)
    ql = float(np.sum(_q_sq(o.lap_c @ Q.flat, Q.dim))) * A
    return DiagnosticNorms(
        u_L2=math.sqrt(uL2),
        u_H1=math.sqrt(uL2 + gu),
        Q_L2=math.sqrt(qL2),
        Q_H1=math.sqrt(qL2 + qg),
        Q_H2=math.sqrt(qL2 + qg + ql),
        B=dissipation_B(u, Q, p, spec),
    )
