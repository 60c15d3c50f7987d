"""Smooth, compactly supported initial data."""

from __future__ import annotations

import numpy as np

from .grid_ops import GridSpec, QField, VelocityField, read_snapshot
from .tensor_core import from_matrix

__all__ = ["bump", "uniaxial_bubble", "standard_bubble", "zero_data", "from_snapshots", "STANDARD_BUBBLE"]

# Smooth data used by the verification runs: a twisted uniaxial bubble that
# fills most of the unit square.
STANDARD_BUBBLE = dict(s=0.5, center=(0.5, 0.5), radius=0.45, director=(1.0, 0.0), twist=1.0)


def bump(r: np.ndarray, radius: float) -> np.ndarray:
    """``exp(1 - 1 / (1 - (r/R)^2))`` inside ``r < R``, zero outside; peak value 1."""
    rho2 = (np.asarray(r, dtype=float) / radius) ** 2
    out = np.zeros_like(rho2)
    inside = rho2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - rho2[inside]))
    return out


def uniaxial_bubble(grid: GridSpec, dim: int, s: float = 0.5, center=(0.5, 0.5), radius: float = 0.3,
                    director=(1.0, 0.0), twist: float = 1.0) -> QField:
    """``Q = s phi (n n^T - I/d)`` with a bump ``phi`` and an in-plane director.

    The director angle is ``theta0 + twist * phi``, so the orientation rotates
    inside the bubble. A nonzero twist makes ``sigma(Q, Q)`` nonzero and drives
    flow; with ``twist = 0`` the data is a pure order-parameter bump.
    """
    cx, cy = center
    if radius <= 0:
        raise ValueError("radius must be positive")
    if grid.bc == "dirichlet0" and not (
        radius <= cx <= grid.lx - radius and radius <= cy <= grid.ly - radius
    ):
        raise ValueError("bubble support must lie inside the domain")
    n = np.asarray(director, dtype=float)
    if n.shape not in ((2,), (3,)) or abs(np.linalg.norm(n[:2]) - 1.0) > 1e-12:
        raise ValueError("director must be an in-plane unit vector")
    X, Y = grid.cell_centers()
    dx, dy = X - cx, Y - cy
    if grid.periodic:
        dx = (dx + 0.5 * grid.lx) % grid.lx - 0.5 * grid.lx
        dy = (dy + 0.5 * grid.ly) % grid.ly - 0.5 * grid.ly
    phi = bump(np.hypot(dx, dy), radius)
    theta = np.arctan2(n[1], n[0]) + twist * phi
    vec = np.zeros(phi.shape + (dim,))
    vec[..., 0] = np.cos(theta)
    vec[..., 1] = np.sin(theta)
    M = s * phi[..., None, None] * (vec[..., :, None] * vec[..., None, :] - np.eye(dim) / dim)
    return QField(grid, dim, from_matrix(M))


def standard_bubble(grid: GridSpec, dim: int = 3) -> QField:
    c = dict(STANDARD_BUBBLE, center=(0.5 * grid.lx, 0.5 * grid.ly))
    return uniaxial_bubble(grid, dim, **c)


def zero_data(grid: GridSpec, dim: int):
    return VelocityField.zeros(grid), QField.zeros(grid, dim)


def from_snapshots(q_path, u_path=None, lx: float = 1.0, ly: float = 1.0, bc: str = "dirichlet0"):
    Q = read_snapshot(q_path, lx, ly, bc)
    if not isinstance(Q, QField):
        raise ValueError(f"{q_path} is not a Q snapshot")
    if u_path is None:
        return VelocityField.zeros(Q.grid), Q
    u = read_snapshot(u_path, lx, ly, bc)
    if not isinstance(u, VelocityField) or u.grid != Q.grid:
        raise ValueError(f"{u_path} is not a velocity snapshot on the Q grid")
    return u, Q
