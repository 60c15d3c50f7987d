"""Backward-Euler Picard integrator with frozen coefficients.

One step from ``(u^n, Q^n)`` freezes ``Q~ = Q^n`` and iterates

    z^{k+1} = L(Q~)^{-1} N(Q~) z^k,   z^0 = (u^n, Q^n),

where the linear part ``L(Q~)`` holds the implicit viscous term ``div(nu(Q~) D u)``,
the ``sigma(Q~, Q)`` momentum coupling, the co-rotation ``S(grad u, Q~)`` and, in
the Q-equation, ``I + dt (eps lap^2 - Gamma lam lap)``. ``N(Q~)`` collects the
rest. At the fixed point every term is evaluated at the new time level, so the
step is fully implicit backward Euler for the nonlinear system.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid_ops import (
    GridSpec,
    QField,
    VelocityField,
    convect_q,
    convect_u,
    div_matrix,
    elastic_force,
    ericksen_tau,
    operators,
    velocity_gradient,
    viscous_apply,
)
from .poisson_helmholtz import (
    SolverConfig,
    SolverError,
    ViscousSolver,
    helmholtz_project,
    pcg,
    viscosity_fields,
    viscous_solve,
)
from .tensor_core import (
    MaterialParams,
    ViscositySpec,
    corotation_S,
    frobenius_metric,
    from_matrix,
    lower_order_L,
    sigma_stress,
    to_matrix,
)

__all__ = [
    "State",
    "SchemeConfig",
    "PicardReport",
    "StepRejected",
    "RunFailure",
    "nonlinear_rhs",
    "linearized_solve",
    "picard_map",
    "picard_step",
    "advance",
    "x_norm",
    "fixed_point_residual",
    "boundary_laplacian",
    "format_log_line",
]


@dataclass(frozen=True)
class State:
    t: float
    u: VelocityField
    Q: QField

    def __post_init__(self):
        if self.u.grid != self.Q.grid:
            raise ValueError("velocity and Q live on different grids")

    @property
    def grid(self) -> GridSpec:
        return self.Q.grid

    @classmethod
    def zeros(cls, grid: GridSpec, dim: int, t: float = 0.0) -> "State":
        return cls(t, VelocityField.zeros(grid), QField.zeros(grid, dim))


@dataclass(frozen=True)
class SchemeConfig:
    dt: float
    epsilon: float = 0.0
    picard_tol: float = 1e-10
    picard_max: int = 50
    mode: str = "standard"
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(method="direct"))
    inner_tol: float = 1e-12  # CG tolerance of the viscous and Q solves
    stress: str = "force"
    max_halvings: int = 5

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.mode not in ("standard", "regularized"):
            raise ValueError(f"mode must be 'standard' or 'regularized', got {self.mode!r}")
        if self.mode == "regularized" and self.epsilon <= 0:
            raise ValueError("regularized mode needs epsilon > 0")
        if self.mode == "standard" and self.epsilon != 0:
            raise ValueError("standard mode runs with epsilon = 0; use mode='regularized'")
        if self.picard_max < 1 or not self.picard_tol > 0:
            raise ValueError("picard_max >= 1 and picard_tol > 0 required")
        if self.stress not in ("force", "divergence"):
            raise ValueError(f"stress must be 'force' or 'divergence', got {self.stress!r}")

    @property
    def inner(self) -> SolverConfig:
        return replace(self.solver, tol=self.inner_tol)


@dataclass(frozen=True)
class PicardReport:
    residuals: tuple[float, ...]
    converged: bool
    dt: float

    @property
    def iterations(self) -> int:
        return len(self.residuals)

    @property
    def rho(self) -> float:
        """Geometric mean of successive residual ratios."""
        r = [x for x in self.residuals if x > 0]
        if len(r) < 2:
            return 0.0
        return (r[-1] / r[0]) ** (1.0 / (len(r) - 1))


class StepRejected(RuntimeError):
    def __init__(self, report: PicardReport, reason: str = ""):
        msg = reason or (
            f"Picard iteration did not converge in {report.iterations} iterations "
            f"(last residual {report.residuals[-1]:.3e}); reduce dt"
        )
        super().__init__(msg)
        self.report = report


class RunFailure(RuntimeError):
    pass


class _Workspace:
    """Warm starts carried between Picard iterations of one step."""

    def __init__(self):
        self.w = None
        self.q = None
        self.qF = None
        self.viscous = None


# --------------------------------------------------------------------------
# Operators of the step


def _in_plane(M):
    return M[..., :2, :2]


def _lap_matrices(Q: QField):
    o = operators(Q.grid)
    return to_matrix(o.lap_c @ Q.flat, Q.dim).reshape(Q.grid.nx, Q.grid.ny, Q.dim, Q.dim)


def _molecular_field(Q: QField, p: MaterialParams):
    Qm = Q.matrices()
    return p.lam * _lap_matrices(Q) + lower_order_L(Qm, p)


def _coeffs(M, Q: QField) -> QField:
    return Q.with_data(from_matrix(M))


def nonlinear_rhs(state_k: State, Q_tilde: QField, p: MaterialParams, spec: ViscositySpec, *,
                  stress: str = "force", solver: SolverConfig = SolverConfig(), project: bool = True,
                  _ws: _Workspace | None = None):
    """Explicit part ``N(Q~)`` of the step, evaluated at ``z^k = (u^k, Q^k)``.

    ``F = P div[(nu(Q) - nu(Q~)) D u + tau(Q) + lam sigma(Q - Q~, Q) - u (x) u]``
    and ``G = -(u . grad) Q + S(grad u, Q - Q~) + Gamma L(Q)``.

    With ``stress="force"`` the Ericksen term enters as the body force
    ``-(grad Q) : H(Q)``, which equals ``div tau`` up to a gradient and is the
    exact adjoint of the discrete Q-advection.
    """
    u, Q = state_k.u, state_k.Q
    g = Q.grid
    if Q_tilde.grid != g:
        raise ValueError("Q_tilde lives on a different grid")
    Qm, Qt = Q.matrices(), Q_tilde.matrices()
    lapQ = _lap_matrices(Q)
    dQ = Qm - Qt

    # momentum
    F = convect_u(u) * -1.0
    if not spec.is_constant:
        nc, nn = viscosity_fields(Q, spec)
        tc, tn = viscosity_fields(Q_tilde, spec)
        F = F - (viscous_apply(u, nc, nn) - viscous_apply(u, tc, tn))
    sig = p.lam * sigma_stress(dQ, lapQ)
    if stress == "force":
        H = p.lam * lapQ + lower_order_L(Qm, p)
        F = F + elastic_force(Q, H) + div_matrix(_in_plane(sig), g)
    elif stress == "divergence":
        F = F + div_matrix(ericksen_tau(Q, p.lam) + _in_plane(sig), g)
    else:
        raise ValueError(f"unknown stress form {stress!r}")
    if project:
        res = helmholtz_project(F, solver, q0=None if _ws is None else _ws.qF)
        if _ws is not None:
            res_q = res.potential
            _ws.qF = res_q
        F = res.field

    # Q-equation
    grad_u = velocity_gradient(u)
    Gm = corotation_S(grad_u, dQ) + p.gamma * lower_order_L(Qm, p)
    G = _coeffs(Gm, Q) - convect_q(u, Q)
    return F, G


@functools.lru_cache(maxsize=16)
def _q_operator(grid: GridSpec, dt: float, eps: float, glam: float):
    L = operators(grid).lap_c
    A = sp.identity(L.shape[0], format="csr") - (dt * glam) * L
    if eps > 0:
        A = A + (dt * eps) * (L @ L)
    A = A.tocsr()
    return A, A.diagonal().copy(), _LazyLU(A)


@functools.lru_cache(maxsize=8)
def _constant_viscous(grid, nu_c, nu_n, dt, cfg):
    return ViscousSolver(grid, (nu_c, nu_n), dt, cfg)


class _LazyLU:
    def __init__(self, A):
        self.A = A
        self._lu = None

    def solve(self, b):
        if self._lu is None:
            self._lu = spla.splu(self.A.tocsc())
        return self._lu.solve(b)


def linearized_solve(state_n: State, Q_tilde: QField, rhs, cfg: SchemeConfig, p: MaterialParams,
                     spec: ViscositySpec, Q_couple: QField | None = None, *, nu_tilde=None,
                     _ws: _Workspace | None = None) -> State:
    """One backward-Euler step of the frozen-coefficient linear system.

    Momentum: ``(I + dt K(nu(Q~))) w = u^n + dt (F + lam div sigma(Q~, Q_couple))``
    followed by ``u+ = P w``. The sigma coupling uses ``Q_couple`` (the current
    Picard iterate; ``Q^n`` if omitted). Q-equation:
    ``(I + dt(eps lap^2 - Gamma lam lap)) Q+ = Q^n + dt (S(grad u+, Q~) + G)``.
    """
    F, G = rhs
    g = state_n.grid
    dt = cfg.dt
    ws = _ws or _Workspace()
    Qc = state_n.Q if Q_couple is None else Q_couple
    inner = cfg.inner
    if nu_tilde is None:
        nu_tilde = viscosity_fields(Q_tilde, spec)

    sig = p.lam * sigma_stress(Q_tilde.matrices(), _lap_matrices(Qc))
    mom = F + div_matrix(_in_plane(sig), g)
    try:
        if ws.viscous is None:
            if np.ndim(nu_tilde[0]) == 0 and np.ndim(nu_tilde[1]) == 0:
                ws.viscous = _constant_viscous(g, float(nu_tilde[0]), float(nu_tilde[1]), dt, inner)
            else:
                ws.viscous = ViscousSolver(g, nu_tilde, dt, inner)
        w, _ = viscous_solve(state_n.u, nu_tilde, mom, dt, inner, x0=ws.w, solver=ws.viscous)
        ws.w = w
        proj = helmholtz_project(w, cfg.solver, q0=ws.q)
        ws.q = proj.potential
        u_new = proj.field

        A, diag, lu = _q_operator(g, dt, cfg.epsilon, p.gamma * p.lam)
        Sm = corotation_S(velocity_gradient(u_new), Q_tilde.matrices())
        b = state_n.Q.flat + dt * (from_matrix(Sm).reshape(-1, Q_tilde.m) + G.flat)
        x0 = None if Q_couple is None else Q_couple.flat
        pre = diag if inner.preconditioner == "jacobi" else None
        if inner.method == "direct":
            qn = lu.solve(b)
        else:
            qn, _ = pcg(lambda V: A @ V, b, tol=inner.tol, max_iter=max(inner.iterations_for(g), 50 * (g.nx + g.ny)),
                        diag=pre, x0=x0)
    except SolverError as exc:
        raise SolverError(f"linearized step at t={state_n.t:.6g}: {exc}", exc.residual, exc.iterations) from exc
    return State(state_n.t + dt, u_new, QField.from_flat(g, state_n.Q.dim, qn))


def picard_map(state_n: State, z: State, p, spec, cfg: SchemeConfig, *, nu_tilde=None, _ws=None) -> State:
    """One application of ``L(Q^n)^{-1} N(Q^n)`` to the iterate ``z``."""
    ws = _ws or _Workspace()
    F, G = nonlinear_rhs(z, state_n.Q, p, spec, stress=cfg.stress, solver=cfg.solver, _ws=ws)
    return linearized_solve(state_n, state_n.Q, (F, G), cfg, p, spec, Q_couple=z.Q, nu_tilde=nu_tilde, _ws=ws)


def x_norm(u: VelocityField, Q: QField) -> float:
    """Discrete H^1 x H^2 proxy: L^2 of u, grad u, Q, grad Q, lap Q."""
    g = Q.grid
    o = operators(g)
    Gm = frobenius_metric(Q.dim)

    def q2(a):
        a = a.reshape(-1, Q.m)
        return float(np.sum((a @ Gm) * a))

    su = float(u.u.ravel() @ u.u.ravel() + u.v.ravel() @ u.v.ravel())
    su += float(np.sum(velocity_gradient(u) ** 2))
    sq = q2(Q.flat) + q2(o.ccx @ Q.flat) + q2(o.ccy @ Q.flat) + q2(o.lap_c @ Q.flat)
    return math.sqrt((su + sq) * g.cell_area)


def _distance(a: State, b: State) -> float:
    return x_norm(a.u - b.u, a.Q - b.Q)


def picard_step(state_n: State, p: MaterialParams, spec: ViscositySpec, cfg: SchemeConfig):
    """Advance by ``cfg.dt``; returns ``(state, PicardReport)`` or raises :class:`StepRejected`."""
    ws = _Workspace()
    nu_tilde = viscosity_fields(state_n.Q, spec)
    z = state_n
    residuals = []
    for _ in range(cfg.picard_max):
        try:
            z_new = picard_map(state_n, z, p, spec, cfg, nu_tilde=nu_tilde, _ws=ws)
        except SolverError as exc:
            raise StepRejected(PicardReport(tuple(residuals) or (math.inf,), False, cfg.dt),
                               f"linear solver failed inside Picard loop: {exc}") from exc
        diff = _distance(z_new, z)
        size = x_norm(z_new.u, z_new.Q)
        r = diff / size if size > 1e-300 else diff
        if not math.isfinite(r):
            raise StepRejected(PicardReport(tuple(residuals) + (r,), False, cfg.dt), "Picard iterate diverged")
        residuals.append(r)
        z = State(state_n.t + cfg.dt, z_new.u, z_new.Q)
        if r <= cfg.picard_tol:
            return z, PicardReport(tuple(residuals), True, cfg.dt)
    raise StepRejected(PicardReport(tuple(residuals), False, cfg.dt))


def fixed_point_residual(state_n: State, state_new: State, p, spec, cfg: SchemeConfig) -> float:
    """Relative X-distance between ``state_new`` and its image under the Picard map."""
    img = picard_map(state_n, state_new, p, spec, cfg)
    size = x_norm(state_new.u, state_new.Q)
    return _distance(img, state_new) / size if size > 0 else _distance(img, state_new)


def advance(state: State, t_end: float, p: MaterialParams, spec: ViscositySpec, cfg: SchemeConfig,
            ledger=None, on_step=None) -> State:
    """Step to ``t_end``; the final step is shortened to land on it exactly.

    A rejected step is retried with ``dt`` halved, at most ``cfg.max_halvings``
    times; later steps return to ``cfg.dt``. ``ledger.record(state)`` and
    ``on_step(step, state, report)`` are called after each accepted step.
    """
    if t_end < state.t:
        raise ValueError(f"t_end {t_end} lies before the current time {state.t}")
    if ledger is not None and len(ledger) == 0:
        ledger.record(state, p, spec)
    step = 0
    while t_end - state.t > 1e-12 * max(1.0, abs(t_end)):
        remaining = t_end - state.t
        dt = cfg.dt
        last = remaining <= dt * (1 + 1e-9)
        if last and remaining < dt * (1 - 1e-9):
            # a shorter final step; a step within rounding of dt keeps dt itself
            dt = remaining
        for attempt in range(cfg.max_halvings + 1):
            try:
                new, report = picard_step(state, p, spec, replace(cfg, dt=dt))
                break
            except StepRejected as exc:
                if attempt == cfg.max_halvings:
                    raise RunFailure(
                        f"step at t={state.t:.6g} rejected after {cfg.max_halvings} dt halvings: {exc}"
                    ) from exc
                dt *= 0.5
                last = False
        t_new = t_end if last else state.t + dt
        state = State(t_new, new.u, new.Q)
        step += 1
        if ledger is not None:
            ledger.record(state, p, spec)
        if on_step is not None:
            on_step(step, state, report)
    return state


def _plain_lap_1d(n, h):
    return sp.diags([np.ones(n - 1), -2 * np.ones(n), np.ones(n - 1)], [-1, 0, 1]) / h**2


def boundary_laplacian(Q: QField) -> np.ndarray:
    """Wall values of ``lap Q`` implied by :func:`~qflow.grid_ops.biharmonic_q`.

    The ghost values of ``lap Q`` that the biharmonic actually used are
    recovered from its output (subtracting the ghost-free stencil), and the wall
    value is the mean of the first interior cell and that ghost. Corner cells,
    which carry two ghosts, are skipped. Returns shape ``(n_wall_cells, m)``.
    """
    from .grid_ops import biharmonic_q

    g = Q.grid
    if g.periodic:
        return np.zeros((0, Q.m))
    lq = (operators(g).lap_c @ Q.flat)
    plain = (sp.kron(_plain_lap_1d(g.nx, g.hx), sp.identity(g.ny))
             + sp.kron(sp.identity(g.nx), _plain_lap_1d(g.ny, g.hy)))
    excess = (biharmonic_q(Q).flat - plain @ lq).reshape(g.nx, g.ny, Q.m)
    lq = lq.reshape(g.nx, g.ny, Q.m)
    sl = slice(1, -1)
    pairs = [
        (lq[0, sl], excess[0, sl] * g.hx**2),
        (lq[-1, sl], excess[-1, sl] * g.hx**2),
        (lq[sl, 0], excess[sl, 0] * g.hy**2),
        (lq[sl, -1], excess[sl, -1] * g.hy**2),
    ]
    return np.concatenate([0.5 * (inner + ghost) for inner, ghost in pairs], axis=0)


def format_log_line(step: int, state: State, dt: float, report: PicardReport, energies) -> str:
    """Fixed-width run-log record."""
    kin, fe, tot, B = energies
    return (
        f"{step:8d} {state.t:14.8e} {dt:11.4e} {report.iterations:4d} {report.rho:10.3e} "
        f"{kin:16.9e} {fe:16.9e} {tot:16.9e} {B:16.9e}"
    )
