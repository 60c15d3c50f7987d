"""Finite-difference operators on a uniform 2D MAC grid.

Layout (array index ``[i, j]`` is x-index first, flattened in C order):

* cell-centred scalars and Q-tensors: ``(nx, ny)``
* x-velocity ``u`` on x-faces, y-velocity ``v`` on y-faces. With
  ``bc="dirichlet0"`` only interior faces are stored (wall-normal velocity is
  zero), so ``u`` is ``(nx-1, ny)`` and ``v`` is ``(nx, ny-1)``. Periodic
  grids store ``(nx, ny)`` for both, face ``k`` being the low side of cell ``k``.
* cell corners ("nodes") carry the shear strain: ``(nx+1, ny+1)`` or ``(nx, ny)``.

Homogeneous Dirichlet data for cell-centred quantities uses odd ghost
reflection, which puts the wall value at exactly zero. The same reflection
closes the intermediate field of the biharmonic, so ``lap Q = 0`` on the wall.

All operators are assembled once per grid as scipy sparse matrices. Pairs that
must be adjoint (gradient / divergence, velocity gradient / matrix divergence,
advection / elastic force) are built as transposes of each other, so discrete
summation by parts holds to rounding in both boundary modes.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import scipy.sparse as sp

from .tensor_core import frobenius_metric, n_components, to_matrix

__all__ = [
    "GridSpec",
    "QField",
    "VelocityField",
    "operators",
    "grad_scalar",
    "grad_q",
    "div_vec",
    "div_matrix",
    "velocity_gradient",
    "laplacian_q",
    "biharmonic_q",
    "ericksen_tau",
    "elastic_force",
    "convect_q",
    "convect_u",
    "viscous_apply",
    "viscous_diagonal",
    "viscous_matrix",
    "strain_energy",
    "node_average_q",
    "write_snapshot",
    "read_snapshot",
    "export_csv",
]

BCS = ("dirichlet0", "periodic")


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0
    bc: str = "dirichlet0"

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid needs at least 4x4 cells, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("domain lengths must be positive")
        if self.bc not in BCS:
            raise ValueError(f"bc must be one of {BCS}, got {self.bc!r}")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def periodic(self) -> bool:
        return self.bc == "periodic"

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def ushape(self) -> tuple[int, int]:
        return (self.nx if self.periodic else self.nx - 1, self.ny)

    @property
    def vshape(self) -> tuple[int, int]:
        return (self.nx, self.ny if self.periodic else self.ny - 1)

    @property
    def nodeshape(self) -> tuple[int, int]:
        return (self.nx, self.ny) if self.periodic else (self.nx + 1, self.ny + 1)

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def uface_coords(self) -> tuple[np.ndarray, np.ndarray]:
        i0 = 0 if self.periodic else 1
        x = (np.arange(self.ushape[0]) + i0) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def vface_coords(self) -> tuple[np.ndarray, np.ndarray]:
        j0 = 0 if self.periodic else 1
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.vshape[1]) + j0) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def node_coords(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.arange(self.nodeshape[0]) * self.hx
        y = np.arange(self.nodeshape[1]) * self.hy
        return np.meshgrid(x, y, indexing="ij")


# --------------------------------------------------------------------------
# 1D building blocks


def _ops_1d(n: int, h: float, periodic: bool) -> SimpleNamespace:
    k = np.arange(n)
    if periodic:
        # face k sits on the low side of cell k; node k coincides with face k
        c2f = sp.csr_matrix(
            (np.r_[np.ones(n), -np.ones(n)] / h, (np.r_[k, k], np.r_[k, (k - 1) % n])), shape=(n, n)
        )
        favg = sp.csr_matrix((np.full(2 * n, 0.5), (np.r_[k, k], np.r_[k, (k + 1) % n])), shape=(n, n))
        cc = sp.csr_matrix(
            (np.r_[np.ones(n), -np.ones(n)] / (2 * h), (np.r_[k, k], np.r_[(k + 1) % n, (k - 1) % n])),
            shape=(n, n),
        )
        c2n = c2f
        c2n_avg = sp.csr_matrix((np.full(2 * n, 0.5), (np.r_[k, k], np.r_[k, (k - 1) % n])), shape=(n, n))
        f2n = sp.identity(n, format="csr")
        nw = np.ones(n)
    else:
        m = np.arange(n - 1)
        # interior face m separates cells m and m+1
        c2f = sp.csr_matrix(
            (np.r_[np.ones(n - 1), -np.ones(n - 1)] / h, (np.r_[m, m], np.r_[m + 1, m])), shape=(n - 1, n)
        )
        favg = sp.csr_matrix((np.full(2 * (n - 1), 0.5), (np.r_[m + 1, m], np.r_[m, m])), shape=(n, n - 1))
        cc = sp.lil_matrix((n, n))
        for i in range(n):
            if i + 1 < n:
                cc[i, i + 1] += 0.5 / h
            else:
                cc[i, i] -= 0.5 / h  # odd ghost c[n] = -c[n-1]
            if i - 1 >= 0:
                cc[i, i - 1] -= 0.5 / h
            else:
                cc[i, i] += 0.5 / h  # odd ghost c[-1] = -c[0]
        cc = cc.tocsr()
        # nodes 0..n, node q between cells q-1 and q, odd ghosts at both ends
        c2n = sp.lil_matrix((n + 1, n))
        c2n_avg = sp.lil_matrix((n + 1, n))
        c2n[0, 0] = 2.0 / h
        c2n[n, n - 1] = -2.0 / h
        for q in range(1, n):
            c2n[q, q] = 1.0 / h
            c2n[q, q - 1] = -1.0 / h
            c2n_avg[q, q] = 0.5
            c2n_avg[q, q - 1] = 0.5
        c2n = c2n.tocsr()
        c2n_avg = c2n_avg.tocsr()
        f2n = sp.csr_matrix((np.ones(n - 1), (m + 1, m)), shape=(n + 1, n - 1))
        nw = np.ones(n + 1)
        nw[0] = nw[-1] = 0.5
    f2c = (-c2f.T).tocsr()
    nn = c2n.shape[0]
    q = np.arange(n)
    n2c = sp.csr_matrix(
        (np.r_[np.ones(n), -np.ones(n)] / h, (np.r_[q, q], np.r_[(q + 1) % nn, q])), shape=(n, nn)
    )
    lap = n2c @ c2n
    return SimpleNamespace(
        c2f=c2f, f2c=f2c, favg=favg, cc=cc, c2n=c2n, c2n_avg=c2n_avg, n2c=n2c, f2n=f2n, nw=nw, lap=lap.tocsr()
    )


@functools.lru_cache(maxsize=32)
def operators(grid: GridSpec) -> SimpleNamespace:
    """All sparse operators of ``grid`` (cached per grid)."""
    X = _ops_1d(grid.nx, grid.hx, grid.periodic)
    Y = _ops_1d(grid.ny, grid.hy, grid.periodic)
    Ix = sp.identity(grid.nx, format="csr")
    Iy = sp.identity(grid.ny, format="csr")

    def kx(A):
        return sp.kron(A, Iy, format="csr")

    def ky(A):
        return sp.kron(Ix, A, format="csr")

    o = SimpleNamespace(X=X, Y=Y)
    o.div_u = kx(X.f2c)
    o.div_v = ky(Y.f2c)
    o.grad_px = kx(X.c2f)
    o.grad_py = ky(Y.c2f)
    o.lap_c = (kx(X.lap) + ky(Y.lap)).tocsr()
    o.lap_p = (o.div_u @ o.grad_px + o.div_v @ o.grad_py).tocsr()
    o.avg_u = kx(X.favg)
    o.avg_v = ky(Y.favg)
    o.ccx = kx(X.cc)
    o.ccy = ky(Y.cc)
    # velocity gradient at cell centres, (grad u)_ij = d_j u_i
    o.g_xx = o.div_u
    o.g_xy = sp.kron(X.favg, Y.cc, format="csr")
    o.g_yx = sp.kron(X.cc, Y.favg, format="csr")
    o.g_yy = o.div_v
    # corner (node) quantities
    o.dudy_n = sp.kron(X.f2n, Y.c2n, format="csr")
    o.dvdx_n = sp.kron(X.c2n, Y.f2n, format="csr")
    o.u_n = sp.kron(X.f2n, Y.c2n_avg, format="csr")
    o.v_n = sp.kron(X.c2n_avg, Y.f2n, format="csr")
    o.c2n_avg = sp.kron(X.c2n_avg, Y.c2n_avg, format="csr")
    o.n2u_y = sp.kron(X.f2n.T, Y.n2c, format="csr")
    o.n2v_x = sp.kron(X.n2c, Y.f2n.T, format="csr")
    o.node_w = np.outer(X.nw, Y.nw).ravel()
    # Dirichlet cell-face gradients including wall faces (for |grad Q|^2)
    o.fgx = kx(X.c2n)
    o.fgy = ky(Y.c2n)
    o.fwx = np.repeat(X.nw, grid.ny)
    o.fwy = np.tile(Y.nw, grid.nx)
    return o


# --------------------------------------------------------------------------
# Fields


@dataclass(frozen=True)
class QField:
    """Cell-centred Q-tensor field; ``data`` has shape ``(nx, ny, m)``."""

    grid: GridSpec
    dim: int
    data: np.ndarray

    def __post_init__(self):
        m = n_components(self.dim)
        a = np.asarray(self.data, dtype=float)
        if a.shape != (self.grid.nx, self.grid.ny, m):
            raise ValueError(f"QField data must have shape {(self.grid.nx, self.grid.ny, m)}, got {a.shape}")
        object.__setattr__(self, "data", a)

    @classmethod
    def zeros(cls, grid: GridSpec, dim: int) -> "QField":
        return cls(grid, dim, np.zeros((grid.nx, grid.ny, n_components(dim))))

    @property
    def m(self) -> int:
        return self.data.shape[-1]

    @property
    def flat(self) -> np.ndarray:
        return self.data.reshape(-1, self.m)

    def matrices(self) -> np.ndarray:
        return to_matrix(self.data, self.dim)

    @classmethod
    def from_flat(cls, grid, dim, flat) -> "QField":
        return cls(grid, dim, np.asarray(flat).reshape(grid.nx, grid.ny, -1))

    def with_data(self, data) -> "QField":
        return QField(self.grid, self.dim, data)

    def __add__(self, other):
        _check_same(self.grid, other.grid)
        return self.with_data(self.data + other.data)

    def __sub__(self, other):
        _check_same(self.grid, other.grid)
        return self.with_data(self.data - other.data)

    def __mul__(self, s):
        return self.with_data(self.data * s)

    __rmul__ = __mul__


@dataclass(frozen=True)
class VelocityField:
    grid: GridSpec
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if u.shape != self.grid.ushape or v.shape != self.grid.vshape:
            raise ValueError(
                f"velocity shapes {u.shape}, {v.shape} do not match grid {self.grid.ushape}, {self.grid.vshape}"
            )
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "VelocityField":
        return cls(grid, np.zeros(grid.ushape), np.zeros(grid.vshape))

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.u.ravel(), self.v.ravel()])

    @classmethod
    def from_flat(cls, grid: GridSpec, x) -> "VelocityField":
        nu = grid.ushape[0] * grid.ushape[1]
        return cls(grid, x[:nu].reshape(grid.ushape), x[nu:].reshape(grid.vshape))

    def __add__(self, other):
        _check_same(self.grid, other.grid)
        return VelocityField(self.grid, self.u + other.u, self.v + other.v)

    def __sub__(self, other):
        _check_same(self.grid, other.grid)
        return VelocityField(self.grid, self.u - other.u, self.v - other.v)

    def __mul__(self, s):
        return VelocityField(self.grid, self.u * s, self.v * s)

    __rmul__ = __mul__


def _check_same(*grids):
    g0 = grids[0]
    for g in grids[1:]:
        if g != g0:
            raise ValueError(f"grid mismatch: {g0} vs {g}")


# --------------------------------------------------------------------------
# Differential operators


def grad_scalar(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Centred cell gradient of a cell scalar, shape ``(nx, ny, 2)``."""
    o = operators(grid)
    x = np.asarray(f, dtype=float).ravel()
    if x.size != grid.nx * grid.ny:
        raise ValueError("scalar field does not match grid")
    return np.stack([o.ccx @ x, o.ccy @ x], axis=-1).reshape(grid.nx, grid.ny, 2)


def grad_q(Q: QField) -> np.ndarray:
    """Centred cell gradient of each coefficient, shape ``(nx, ny, m, 2)``."""
    o = operators(Q.grid)
    gx = o.ccx @ Q.flat
    gy = o.ccy @ Q.flat
    return np.stack([gx, gy], axis=-1).reshape(Q.grid.nx, Q.grid.ny, Q.m, 2)


def div_vec(w: VelocityField) -> np.ndarray:
    """MAC divergence at cell centres."""
    o = operators(w.grid)
    return (o.div_u @ w.u.ravel() + o.div_v @ w.v.ravel()).reshape(w.grid.shape)


def velocity_gradient(w: VelocityField) -> np.ndarray:
    """``(grad u)_ij = d_j u_i`` at cell centres, shape ``(nx, ny, 2, 2)``."""
    o = operators(w.grid)
    u, v = w.u.ravel(), w.v.ravel()
    G = np.empty((w.grid.nx * w.grid.ny, 2, 2))
    G[:, 0, 0] = o.g_xx @ u
    G[:, 0, 1] = o.g_xy @ u
    G[:, 1, 0] = o.g_yx @ v
    G[:, 1, 1] = o.g_yy @ v
    return G.reshape(w.grid.nx, w.grid.ny, 2, 2)


def div_matrix(F: np.ndarray, grid: GridSpec) -> VelocityField:
    """``(div F)_i = d_j F_ij`` on the velocity faces.

    Defined as the negative adjoint of :func:`velocity_gradient` in the grid
    inner product, so ``<div F, w> = -<F, grad w>`` exactly. Only the in-plane
    ``2x2`` block of ``F`` participates.
    """
    F = np.asarray(F, dtype=float)
    if F.shape[:2] != grid.shape or F.shape[-1] < 2 or F.shape[-2] < 2:
        raise ValueError(f"matrix field of shape {F.shape} does not match grid {grid.shape}")
    o = operators(grid)
    Fr = F.reshape(-1, F.shape[-2], F.shape[-1])
    du = -(o.g_xx.T @ Fr[:, 0, 0] + o.g_xy.T @ Fr[:, 0, 1])
    dv = -(o.g_yx.T @ Fr[:, 1, 0] + o.g_yy.T @ Fr[:, 1, 1])
    return VelocityField(grid, du.reshape(grid.ushape), dv.reshape(grid.vshape))


def laplacian_q(Q: QField) -> QField:
    """Five-point Laplacian per coefficient (odd ghosts in Dirichlet mode)."""
    return Q.with_data((operators(Q.grid).lap_c @ Q.flat).reshape(Q.data.shape))


def biharmonic_q(Q: QField) -> QField:
    """``lap(lap Q)`` with the intermediate field closed by ``lap Q = 0`` on the wall."""
    L = operators(Q.grid).lap_c
    return Q.with_data((L @ (L @ Q.flat)).reshape(Q.data.shape))


def ericksen_tau(Q: QField, lam: float) -> np.ndarray:
    """``-lam d_iQ : d_jQ`` per cell, shape ``(nx, ny, 2, 2)``."""
    g = grad_q(Q).reshape(-1, Q.m, 2)
    Gm = frobenius_metric(Q.dim)
    gx, gy = g[..., 0], g[..., 1]
    Ggx = gx @ Gm
    txy = -lam * np.sum(Ggx * gy, axis=-1)
    tau = np.empty((gx.shape[0], 2, 2))
    tau[:, 0, 0] = -lam * np.sum(Ggx * gx, axis=-1)
    tau[:, 1, 1] = -lam * np.sum((gy @ Gm) * gy, axis=-1)
    tau[:, 0, 1] = txy
    tau[:, 1, 0] = txy
    return tau.reshape(Q.grid.nx, Q.grid.ny, 2, 2)


def convect_q(w: VelocityField, Q: QField) -> QField:
    """``(u . grad) Q`` with face velocities averaged to cell centres."""
    _check_same(w.grid, Q.grid)
    o = operators(Q.grid)
    ub = o.avg_u @ w.u.ravel()
    vb = o.avg_v @ w.v.ravel()
    out = ub[:, None] * (o.ccx @ Q.flat) + vb[:, None] * (o.ccy @ Q.flat)
    return Q.with_data(out.reshape(Q.data.shape))


def elastic_force(Q: QField, H: np.ndarray) -> VelocityField:
    """Body force ``-(d_i Q) : H`` placed on the velocity faces.

    This is the negative adjoint of ``u -> H : (u . grad) Q`` from
    :func:`convect_q`, so the advective power of the Q-equation and the work of
    this force cancel exactly on the grid. In the continuum it differs from
    ``div tau(Q)`` only by a gradient, which the Helmholtz projection removes.
    """
    o = operators(Q.grid)
    Hq = np.asarray(H, dtype=float).reshape(-1, Q.dim, Q.dim)
    dx = to_matrix(o.ccx @ Q.flat, Q.dim)
    dy = to_matrix(o.ccy @ Q.flat, Q.dim)
    gx = np.sum(dx * Hq, axis=(-2, -1))
    gy = np.sum(dy * Hq, axis=(-2, -1))
    g = Q.grid
    return VelocityField(g, -(o.avg_u.T @ gx).reshape(g.ushape), -(o.avg_v.T @ gy).reshape(g.vshape))


def convect_u(w: VelocityField) -> VelocityField:
    """Divergence-form ``div(u (x) u)`` on the MAC faces.

    Kinetic energy neutral whenever the discrete divergence of ``w`` vanishes.
    """
    o = operators(w.grid)
    u, v = w.u.ravel(), w.v.ravel()
    uc = o.avg_u @ u
    vc = o.avg_v @ v
    uvn = (o.u_n @ u) * (o.v_n @ v)
    cu = o.grad_px @ (uc * uc) + o.n2u_y @ uvn
    cv = o.n2v_x @ uvn + o.grad_py @ (vc * vc)
    g = w.grid
    return VelocityField(g, cu.reshape(g.ushape), cv.reshape(g.vshape))


def node_average_q(Q: QField) -> np.ndarray:
    """Q averaged to cell corners, matrices of shape ``(n_nodes, d, d)``."""
    o = operators(Q.grid)
    return to_matrix(o.c2n_avg @ Q.flat, Q.dim)


def _strain(w: VelocityField):
    o = operators(w.grid)
    u, v = w.u.ravel(), w.v.ravel()
    return o.g_xx @ u, o.g_yy @ v, 0.5 * (o.dudy_n @ u + o.dvdx_n @ v)


def viscous_apply(w: VelocityField, nu_c: np.ndarray, nu_n: np.ndarray) -> VelocityField:
    """``-div(nu D(u))`` on the faces; ``nu_c`` per cell, ``nu_n`` per corner.

    Symmetric positive semidefinite: ``<K u, u> = sum nu |D u|^2`` with
    trapezoidal corner weights (see :func:`strain_energy`).
    """
    o = operators(w.grid)
    dxx, dyy, dxy = _strain(w)
    nc = np.broadcast_to(nu_c, dxx.shape).ravel()
    s = o.node_w * np.broadcast_to(nu_n, dxy.shape).ravel() * dxy
    ku = o.g_xx.T @ (nc * dxx) + o.dudy_n.T @ s
    kv = o.g_yy.T @ (nc * dyy) + o.dvdx_n.T @ s
    g = w.grid
    return VelocityField(g, ku.reshape(g.ushape), kv.reshape(g.vshape))


def viscous_diagonal(grid: GridSpec, nu_c, nu_n) -> np.ndarray:
    """Diagonal of the :func:`viscous_apply` operator (Jacobi preconditioner)."""
    o = operators(grid)
    nc = np.broadcast_to(nu_c, (grid.nx * grid.ny,))
    nn = o.node_w * np.broadcast_to(nu_n, o.node_w.shape) * 0.5
    du = o.g_xx.multiply(o.g_xx).T @ nc + o.dudy_n.multiply(o.dudy_n).T @ nn
    dv = o.g_yy.multiply(o.g_yy).T @ nc + o.dvdx_n.multiply(o.dvdx_n).T @ nn
    return np.concatenate([du, dv])


def viscous_matrix(grid: GridSpec, nu_c, nu_n) -> sp.csr_matrix:
    """Sparse matrix of :func:`viscous_apply` acting on ``VelocityField.flat``."""
    o = operators(grid)
    nc = np.broadcast_to(np.asarray(nu_c, dtype=float), (grid.nx * grid.ny,))
    nn = o.node_w * np.broadcast_to(np.asarray(nu_n, dtype=float), o.node_w.shape)
    Sc = sp.block_diag([o.g_xx, o.g_yy], format="csr")
    Sn = 0.5 * sp.hstack([o.dudy_n, o.dvdx_n], format="csr")
    K = Sc.T @ sp.diags(np.r_[nc, nc]) @ Sc + Sn.T @ sp.diags(2.0 * nn) @ Sn
    return K.tocsr()


def strain_energy(w: VelocityField, nu_c=1.0, nu_n=1.0) -> float:
    """``int nu |D u|^2`` with midpoint cells and trapezoidal corners."""
    o = operators(w.grid)
    dxx, dyy, dxy = _strain(w)
    nc = np.broadcast_to(nu_c, dxx.shape)
    nn = np.broadcast_to(nu_n, dxy.shape)
    total = np.sum(nc * (dxx**2 + dyy**2)) + 2.0 * np.sum(o.node_w * nn * dxy**2)
    return float(total * w.grid.cell_area)


# --------------------------------------------------------------------------
# Snapshot and CSV I/O

_MAGIC = "QFLOW1"


def write_snapshot(path, field) -> None:
    """Write ``QFLOW1 <nx> <ny> <d> <kind>`` then little-endian float64 blocks.

    ``kind`` is ``Q`` (one ``nx*ny`` block per basis coefficient, ``d`` is the
    tensor dimension), ``velocity`` (the ``u`` face block then the ``v`` face
    block, ``d = 2``) or ``scalar`` (one cell block, ``d = 1``). Blocks are in
    row-major ``[i, j]`` order.
    """
    if isinstance(field, QField):
        g, d, kind = field.grid, field.dim, "Q"
        blocks = [field.data[..., k] for k in range(field.m)]
    elif isinstance(field, VelocityField):
        g, d, kind = field.grid, 2, "velocity"
        blocks = [field.u, field.v]
    else:
        arr, g = field
        g, d, kind = g, 1, "scalar"
        blocks = [np.asarray(arr, dtype=float).reshape(g.shape)]
    with open(path, "wb") as fh:
        fh.write(f"{_MAGIC} {g.nx} {g.ny} {d} {kind}\n".encode("ascii"))
        for b in blocks:
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def read_snapshot(path, lx: float = 1.0, ly: float = 1.0, bc: str | None = None):
    """Inverse of :func:`write_snapshot`. Velocity snapshots infer ``bc`` from their size."""
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    head = raw[:nl].decode("ascii").split()
    if len(head) != 5 or head[0] != _MAGIC:
        raise ValueError(f"{path}: not a {_MAGIC} snapshot")
    nx, ny, d, kind = int(head[1]), int(head[2]), int(head[3]), head[4]
    vals = np.frombuffer(raw[nl + 1 :], dtype="<f8").astype(float)
    if kind == "Q":
        m = n_components(d)
        if vals.size != m * nx * ny:
            raise ValueError(f"{path}: expected {m * nx * ny} values, found {vals.size}")
        grid = GridSpec(nx, ny, lx, ly, bc or "dirichlet0")
        return QField(grid, d, vals.reshape(m, nx, ny).transpose(1, 2, 0))
    if kind == "velocity":
        inferred = "periodic" if vals.size == 2 * nx * ny else "dirichlet0"
        grid = GridSpec(nx, ny, lx, ly, bc or inferred)
        nu = grid.ushape[0] * grid.ushape[1]
        if vals.size != nu + grid.vshape[0] * grid.vshape[1]:
            raise ValueError(f"{path}: velocity block size {vals.size} does not match grid")
        return VelocityField(grid, vals[:nu].reshape(grid.ushape), vals[nu:].reshape(grid.vshape))
    if kind == "scalar":
        grid = GridSpec(nx, ny, lx, ly, bc or "dirichlet0")
        return vals.reshape(nx, ny), grid
    raise ValueError(f"{path}: unknown snapshot kind {kind!r}")


def export_csv(path, field) -> None:
    """Cell index, centre coordinates and components, one row per cell.

    Velocities are exported as their cell-centre averages.
    """
    if isinstance(field, QField):
        g = field.grid
        comps = field.data.reshape(-1, field.m)
        names = [f"q{k + 1}" for k in range(field.m)]
    elif isinstance(field, VelocityField):
        g = field.grid
        o = operators(g)
        comps = np.stack([o.avg_u @ field.u.ravel(), o.avg_v @ field.v.ravel()], axis=-1)
        names = ["u", "v"]
    else:
        raise TypeError("export_csv expects a QField or VelocityField")
    X, Y = g.cell_centers()
    I, J = np.meshgrid(np.arange(g.nx), np.arange(g.ny), indexing="ij")
    table = np.column_stack([I.ravel(), J.ravel(), X.ravel(), Y.ravel(), comps])
    header = ",".join(["i", "j", "x", "y", *names])
    fmt = ["%d", "%d"] + ["%.17g"] * (table.shape[1] - 2)
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt=fmt)
