"""Conjugate-gradient solvers, the discrete Helmholtz projector and the viscous step.

The pressure Laplacian ``div grad`` on the MAC grid carries the Neumann
condition implied by ``u . n = 0`` (or is periodic). It is singular with the
constants as kernel, so right-hand sides are made mean-free and solutions are
returned with zero mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import functools

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid_ops import (
    GridSpec,
    QField,
    VelocityField,
    div_vec,
    node_average_q,
    operators,
    viscous_matrix,
)
from .tensor_core import ViscositySpec, viscosity_nu

__all__ = [
    "SolverConfig",
    "SolverError",
    "SolveInfo",
    "ProjectionResult",
    "pcg",
    "solve_poisson",
    "helmholtz_project",
    "viscosity_fields",
    "viscous_solve",
    "ViscousSolver",
    "momentum_solve",
]


class SolverError(RuntimeError):
    """Linear solve did not reach its tolerance within ``max_iter``."""

    def __init__(self, msg: str, residual: float, iterations: int):
        super().__init__(f"{msg} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    max_iter: int | None = None
    preconditioner: str = "jacobi"
    method: str = "cg"  # "cg" or "direct" (sparse LU, factorised once per operator)

    def __post_init__(self):
        if not (0.0 < self.tol < 1.0):
            raise ValueError(f"tol must lie in (0, 1), got {self.tol}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.preconditioner not in ("none", "jacobi"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.method not in ("cg", "direct"):
            raise ValueError(f"unknown method {self.method!r}")

    def iterations_for(self, grid: GridSpec) -> int:
        return self.max_iter if self.max_iter is not None else 10 * (grid.nx + grid.ny)


@dataclass(frozen=True)
class SolveInfo:
    iterations: int
    residual: float  # max-norm residual relative to max-norm rhs
    initial_residual: float


@dataclass(frozen=True)
class ProjectionResult:
    field: VelocityField
    potential: np.ndarray
    residual: float
    info: SolveInfo


def pcg(apply, b, *, tol, max_iter, diag=None, x0=None, atol=None, mean_free=False):
    """Preconditioned CG for an SPD (or PSD, consistent) operator.

    ``b`` may be ``(n,)`` or ``(n, k)``; columns are independent systems that
    share the operator and are iterated together. A column stops when
    ``max|r| <= tol * max|b|`` and, if ``atol`` is given, also
    ``max|r| <= atol``. Returns ``(x, SolveInfo)``.
    """
    b = np.asarray(b, dtype=float)
    vec = b.ndim == 1
    B = b[:, None] if vec else b
    if mean_free:
        B = B - B.mean(axis=0)
    X = np.zeros_like(B) if x0 is None else np.array(np.asarray(x0, dtype=float).reshape(B.shape))
    bn = np.abs(B).max(axis=0)
    target = tol * bn if atol is None else np.minimum(tol * bn, atol)
    if not np.any(bn > 0) and x0 is None:
        out = X[:, 0] if vec else X
        return out, SolveInfo(0, 0.0, 0.0)

    def A(V):
        return apply(V)

    R = B - A(X) if x0 is not None else B.copy()
    if mean_free:
        R -= R.mean(axis=0)
    scale = np.where(bn > 0, bn, 1.0)
    r0 = float(np.max(np.abs(R).max(axis=0) / scale))
    inv_d = None if diag is None else (1.0 / np.asarray(diag, dtype=float))[:, None]
    active = np.abs(R).max(axis=0) > target
    Z = R * inv_d if inv_d is not None else R.copy()
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    it = 0
    while np.any(active) and it < max_iter:
        it += 1
        AP = A(P)
        pAp = np.einsum("ij,ij->j", P, AP)
        alpha = np.where(active & (pAp > 0), rz / np.where(pAp > 0, pAp, 1.0), 0.0)
        X += alpha * P
        R -= alpha * AP
        if mean_free:
            R -= R.mean(axis=0)
        active &= np.abs(R).max(axis=0) > target
        Z = R * inv_d if inv_d is not None else R
        rz_new = np.einsum("ij,ij->j", R, Z)
        beta = np.where(rz > 0, rz_new / np.where(rz > 0, rz, 1.0), 0.0)
        P = Z + beta * P
        rz = rz_new
    if mean_free:
        X -= X.mean(axis=0)
    res = np.abs(R).max(axis=0)
    rel = float(np.max(res / scale))
    if np.any(res > target):
        raise SolverError("conjugate gradient did not converge", rel, it)
    out = X[:, 0] if vec else X
    return out, SolveInfo(it, rel, r0)


def _neg_pressure_laplacian(grid: GridSpec):
    L = operators(grid).lap_p
    return lambda V: -(L @ V)


@functools.lru_cache(maxsize=8)
def _poisson_lu(grid: GridSpec):
    # pin the first cell to remove the constant kernel
    A = (-operators(grid).lap_p)[1:, 1:].tocsc()
    return spla.splu(A)


def solve_poisson(rhs, grid: GridSpec, cfg: SolverConfig = SolverConfig(), x0=None, atol=None):
    """Solve ``div grad q = rhs`` with the pressure boundary closure of ``grid``.

    Neumann (``dirichlet0`` velocity) and periodic modes both require a
    mean-free right-hand side; the solution is returned with zero mean.
    Returns ``(q, SolveInfo)``.
    """
    f = np.asarray(rhs, dtype=float).reshape(-1)
    if f.size != grid.nx * grid.ny:
        raise ValueError("rhs does not match grid")
    if not np.all(np.isfinite(f)):
        raise ValueError("rhs contains non-finite values")
    scale = max(np.abs(f).max(), 1e-300)
    if abs(f.mean()) > 1e-10 * scale:
        raise ValueError(f"Neumann/periodic Poisson rhs must have zero mean (mean {f.mean():.3e})")
    L = operators(grid).lap_p
    if cfg.method == "direct":
        f = f - f.mean()
        q = np.zeros_like(f)
        if np.any(f):
            q[1:] = _poisson_lu(grid).solve(-f[1:])
            q -= q.mean()
        res = float(np.abs(L @ q - f).max() / scale) if np.any(f) else 0.0
        return q.reshape(grid.shape), SolveInfo(1, res, 1.0)
    diag = -L.diagonal() if cfg.preconditioner == "jacobi" else None
    q, info = pcg(
        _neg_pressure_laplacian(grid),
        -f,
        tol=cfg.tol,
        max_iter=cfg.iterations_for(grid),
        diag=diag,
        x0=None if x0 is None else np.asarray(x0, dtype=float).reshape(-1),
        atol=atol,
        mean_free=True,
    )
    return q.reshape(grid.shape), info


def helmholtz_project(v: VelocityField, cfg: SolverConfig = SolverConfig(), q0=None) -> ProjectionResult:
    """Split ``v = P v + grad q`` with ``div P v = 0`` to the solver tolerance.

    The Poisson residual equals the divergence of the returned field, so it is
    driven below ``tol * min(1, max|div v|)``: both relative to the input and
    absolute.
    """
    g = v.grid
    o = operators(g)
    d = div_vec(v)
    dn = float(np.abs(d).max())
    if dn == 0.0:
        return ProjectionResult(v, np.zeros(g.shape), 0.0, SolveInfo(0, 0.0, 0.0))
    d = d - d.mean()
    q, info = solve_poisson(d, g, cfg, x0=q0, atol=cfg.tol)
    qf = q.ravel()
    w = VelocityField(g, v.u - (o.grad_px @ qf).reshape(g.ushape), v.v - (o.grad_py @ qf).reshape(g.vshape))
    return ProjectionResult(w, q, float(np.abs(div_vec(w)).max()), info)


def viscosity_fields(Q: QField | None, spec: ViscositySpec, grid: GridSpec | None = None):
    """Cell and corner viscosities from ``Q``; corners use the corner-averaged Q."""
    if spec.is_constant or Q is None:
        return float(spec.nu0), float(spec.nu0)
    return viscosity_nu(Q.matrices(), spec).reshape(-1), viscosity_nu(node_average_q(Q), spec)


def _corner_from_cells(nu_c, grid):
    # plain average over the cells touching each corner (no ghost values)
    if grid.periodic:
        M = operators(grid).c2n_avg
    else:
        M = sp.kron(_touch(grid.nx), _touch(grid.ny), format="csr")
    return (M @ nu_c) / (M @ np.ones_like(nu_c))


def _touch(n):
    q = np.arange(n)
    return sp.csr_matrix((np.ones(2 * n), (np.r_[q, q + 1], np.r_[q, q])), shape=(n + 1, n))


def _split_nu(nu_field, grid):
    if isinstance(nu_field, tuple):
        nu_c, nu_n = nu_field
    else:
        nu_c = nu_field
        nu_n = nu_field if np.ndim(nu_field) == 0 else _corner_from_cells(np.ravel(nu_field), grid)
    if np.min(nu_c) <= 0 or np.min(nu_n) <= 0:
        raise ValueError("viscosity must be positive")
    return nu_c, nu_n


class ViscousSolver:
    """Reusable solver for ``(I + dt K(nu)) w = b`` with ``K = -div(nu D .)``."""

    def __init__(self, grid: GridSpec, nu_field, dt: float, cfg: SolverConfig = SolverConfig()):
        self.grid, self.dt, self.cfg = grid, float(dt), cfg
        nu_c, nu_n = _split_nu(nu_field, grid)
        K = viscous_matrix(grid, nu_c, nu_n)
        self.A = (sp.identity(K.shape[0], format="csr") + self.dt * K).tocsr()
        self.diag = self.A.diagonal() if cfg.preconditioner == "jacobi" else None
        self._lu = None

    def solve(self, b, x0=None, atol=None):
        if self.cfg.method == "direct":
            if self._lu is None:
                self._lu = spla.splu(self.A.tocsc())
            x = self._lu.solve(b)
            bn = max(np.abs(b).max(), 1e-300)
            return x, SolveInfo(1, float(np.abs(self.A @ x - b).max() / bn), 1.0)
        A = self.A
        return pcg(lambda V: A @ V, b, tol=self.cfg.tol, max_iter=self.cfg.iterations_for(self.grid),
                   diag=self.diag, x0=x0, atol=atol)


def viscous_solve(u_prev: VelocityField, nu_field, rhs: VelocityField | None, dt: float,
                  cfg: SolverConfig = SolverConfig(), x0: VelocityField | None = None, atol=None,
                  solver: ViscousSolver | None = None):
    """Solve ``(I + dt K(nu)) w = u_prev + dt rhs`` with ``K = -div(nu D .)``.

    ``nu_field`` is a scalar, a per-cell array, or a ``(cell, corner)`` pair.
    A prepared ``solver`` (same grid, ``nu`` and ``dt``) may be passed to reuse
    its operator. Returns ``(w, SolveInfo)``.
    """
    g = u_prev.grid
    b = u_prev.flat if rhs is None else u_prev.flat + dt * rhs.flat
    if solver is None:
        _split_nu(nu_field, g)
    if dt == 0.0:
        return VelocityField.from_flat(g, b), SolveInfo(0, 0.0, 0.0)
    if not np.any(b):
        return VelocityField.zeros(g), SolveInfo(0, 0.0, 0.0)
    solver = solver or ViscousSolver(g, nu_field, dt, cfg)
    x, info = solver.solve(b, x0=None if x0 is None else x0.flat, atol=atol)
    return VelocityField.from_flat(g, x), info


def momentum_solve(u_prev: VelocityField, nu_field, rhs: VelocityField | None, dt: float,
                   cfg: SolverConfig = SolverConfig()) -> VelocityField:
    """Implicit viscous step followed by the Helmholtz projection."""
    w, _ = viscous_solve(u_prev, nu_field, rhs, dt, cfg)
    return helmholtz_project(w, cfg).field
