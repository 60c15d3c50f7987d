"""Pointwise tensor algebra for the Beris-Edwards model.

Every function here is vectorised over leading axes: a Q-tensor argument is an
array of shape ``(..., d, d)`` (or a :class:`QTensor`, which converts itself via
``__array__``), and outputs keep the same leading shape.

Q-tensors are stored in a minimal basis of the space of symmetric traceless
matrices so that symmetry and trace-freeness hold structurally:

* ``d = 2``: ``(Q11, Q12)``
* ``d = 3``: ``(Q11, Q22, Q12, Q13, Q23)`` with ``Q33 = -Q11 - Q22``
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "QTensor",
    "MaterialParams",
    "ViscositySpec",
    "n_components",
    "to_matrix",
    "from_matrix",
    "frobenius_metric",
    "embed",
    "uniaxial",
    "stretch",
    "vorticity",
    "corotation_S",
    "sigma_stress",
    "bulk_energy_fB",
    "lower_order_L",
    "molecular_field_H",
    "grad_fB",
    "viscosity_nu",
    "bulk_lower_bound",
    "contract",
    "trace_powers",
]

_NCOMP = {2: 2, 3: 5}


def n_components(d: int) -> int:
    """Number of minimal-basis coefficients for tensor dimension ``d``."""
    try:
        return _NCOMP[d]
    except KeyError:
        raise ValueError(f"tensor dimension must be 2 or 3, got {d}") from None


def to_matrix(coeffs, d: int) -> np.ndarray:
    """Reconstruct ``(..., d, d)`` matrices from ``(..., m)`` basis coefficients."""
    q = np.asarray(coeffs, dtype=float)
    m = n_components(d)
    if q.shape[-1] != m:
        raise ValueError(f"expected {m} coefficients for d={d}, got {q.shape[-1]}")
    M = np.zeros(q.shape[:-1] + (d, d))
    if d == 2:
        M[..., 0, 0] = q[..., 0]
        M[..., 1, 1] = -q[..., 0]
        M[..., 0, 1] = M[..., 1, 0] = q[..., 1]
    else:
        M[..., 0, 0] = q[..., 0]
        M[..., 1, 1] = q[..., 1]
        M[..., 2, 2] = -(q[..., 0] + q[..., 1])
        M[..., 0, 1] = M[..., 1, 0] = q[..., 2]
        M[..., 0, 2] = M[..., 2, 0] = q[..., 3]
        M[..., 1, 2] = M[..., 2, 1] = q[..., 4]
    return M


def from_matrix(M) -> np.ndarray:
    """Basis coefficients of the Frobenius projection of ``M`` onto symmetric traceless matrices.

    For an input that is already symmetric and traceless this is the inverse of
    :func:`to_matrix` up to rounding.
    """
    M = np.asarray(M, dtype=float)
    d = M.shape[-1]
    n_components(d)
    S = 0.5 * (M + np.swapaxes(M, -1, -2))
    tr = np.trace(S, axis1=-2, axis2=-1) / d
    if d == 2:
        return np.stack([S[..., 0, 0] - tr, S[..., 0, 1]], axis=-1)
    return np.stack(
        [S[..., 0, 0] - tr, S[..., 1, 1] - tr, S[..., 0, 1], S[..., 0, 2], S[..., 1, 2]],
        axis=-1,
    )


def frobenius_metric(d: int) -> np.ndarray:
    """Gram matrix ``G`` with ``to_matrix(a):to_matrix(b) == a @ G @ b``."""
    m = n_components(d)
    E = to_matrix(np.eye(m), d)
    return np.einsum("aij,bij->ab", E, E)


def contract(A, B) -> np.ndarray:
    """Double contraction ``A:B = sum_ij A_ij B_ij`` over the trailing two axes."""
    return np.sum(np.asarray(A) * np.asarray(B), axis=(-2, -1))


def embed(A, d: int) -> np.ndarray:
    """Zero-pad ``(..., k, k)`` matrices into ``(..., d, d)`` (in-plane velocity gradients)."""
    A = np.asarray(A, dtype=float)
    k = A.shape[-1]
    if k == d:
        return A
    if k > d:
        raise ValueError(f"cannot embed a {k}x{k} matrix into {d}x{d}")
    out = np.zeros(A.shape[:-2] + (d, d))
    out[..., :k, :k] = A
    return out


@dataclass(frozen=True)
class QTensor:
    """A single symmetric traceless tensor stored by its basis coefficients."""

    dim: int
    coeffs: np.ndarray = field(repr=True)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if c.size != n_components(self.dim):
            raise ValueError(f"d={self.dim} needs {n_components(self.dim)} coefficients, got {c.size}")
        if not np.all(np.isfinite(c)):
            raise ValueError("Q-tensor coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def matrix(self) -> np.ndarray:
        return to_matrix(self.coeffs, self.dim)

    def __array__(self, dtype=None, copy=None):
        M = self.matrix
        return M if dtype is None else M.astype(dtype)

    @classmethod
    def from_matrix(cls, M) -> "QTensor":
        M = np.asarray(M, dtype=float)
        return cls(M.shape[-1], from_matrix(M))

    @classmethod
    def zero(cls, dim: int) -> "QTensor":
        return cls(dim, np.zeros(n_components(dim)))


@dataclass(frozen=True)
class MaterialParams:
    """Landau-de Gennes and elastic constants. ``a`` and ``b`` may take any sign."""

    a: float = 1.0
    b: float = 1.0
    c: float = 1.0
    lam: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("a", "b", "c", "lam", "gamma"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


@dataclass(frozen=True)
class ViscositySpec:
    """``nu(Q) = nu0 + nu1 tr(Q^2) / (1 + tr(Q^2))``, or ``nu0`` for the constant family."""

    family: str = "constant"
    nu0: float = 1.0
    nu1: float = 0.0

    def __post_init__(self):
        if self.family not in ("constant", "rational"):
            raise ValueError(f"unknown viscosity family {self.family!r}")
        if not self.nu0 > 0:
            raise ValueError("nu0 must be positive")
        if self.nu1 < 0:
            raise ValueError("nu1 must be non-negative")

    @property
    def is_constant(self) -> bool:
        return self.family == "constant" or self.nu1 == 0.0

    @property
    def bounds(self) -> tuple[float, float]:
        if self.family == "constant":
            return self.nu0, self.nu0
        return self.nu0, self.nu0 + self.nu1


def uniaxial(s: float, n, d: int | None = None) -> QTensor:
    """``s (n x n - I/d)`` for a unit director ``n``."""
    n = np.asarray(n, dtype=float)
    d = n.size if d is None else d
    if n.shape != (d,):
        raise ValueError(f"director must have {d} components, got shape {n.shape}")
    if abs(np.linalg.norm(n) - 1.0) > 1e-12:
        raise ValueError(f"director must be a unit vector, |n| = {np.linalg.norm(n)!r}")
    return QTensor.from_matrix(s * (np.outer(n, n) - np.eye(d) / d))


def stretch(grad_u) -> np.ndarray:
    """Symmetric part ``D = (grad u + grad u^T) / 2``."""
    G = np.asarray(grad_u, dtype=float)
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def vorticity(grad_u) -> np.ndarray:
    """Skew part ``W = (grad u - grad u^T) / 2``."""
    G = np.asarray(grad_u, dtype=float)
    return 0.5 * (G - np.swapaxes(G, -1, -2))


def corotation_S(grad_u, Q) -> np.ndarray:
    """Corotational term ``W Q - Q W``.

    ``grad_u`` may be a smaller (in-plane) matrix than ``Q``; it is zero-padded.
    """
    Q = np.asarray(Q, dtype=float)
    W = vorticity(embed(grad_u, Q.shape[-1]))
    return W @ Q - Q @ W


def sigma_stress(Q1, lapQ2) -> np.ndarray:
    """Antisymmetric stress ``Q1 lapQ2 - lapQ2 Q1``."""
    Q1 = np.asarray(Q1, dtype=float)
    L2 = np.asarray(lapQ2, dtype=float)
    return Q1 @ L2 - L2 @ Q1


def _traces(Q):
    Q2 = Q @ Q
    tr2 = np.trace(Q2, axis1=-2, axis2=-1)
    tr3 = contract(Q2, np.swapaxes(Q, -1, -2))
    tr4 = contract(Q2, np.swapaxes(Q2, -1, -2))
    return Q2, tr2, tr3, tr4


def trace_powers(Q) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(tr Q^2, tr Q^3, tr Q^4)``."""
    _, tr2, tr3, tr4 = _traces(np.asarray(Q, dtype=float))
    return tr2, tr3, tr4


def bulk_energy_fB(Q, p: MaterialParams) -> np.ndarray:
    """``a/2 tr Q^2 - b/3 tr Q^3 + c/4 (tr Q^2)^2``.

    The quartic is written with ``(tr Q^2)^2`` so that ``f_B`` is the exact
    potential of :func:`lower_order_L`; with ``tr Q^4`` the ``c``-terms would
    disagree by a factor of two (``Q^3 = tr(Q^2) Q / 2 + tr(Q^3) I / 3``).
    """
    Q = np.asarray(Q, dtype=float)
    _, tr2, tr3, _ = _traces(Q)
    return 0.5 * p.a * tr2 - p.b / 3.0 * tr3 + 0.25 * p.c * tr2**2


def lower_order_L(Q, p: MaterialParams) -> np.ndarray:
    """``-a Q + b (Q^2 - tr(Q^2) I / d) - c tr(Q^2) Q``."""
    Q = np.asarray(Q, dtype=float)
    d = Q.shape[-1]
    Q2, tr2, _, _ = _traces(Q)
    eye = np.eye(d)
    t = tr2[..., None, None]
    return -p.a * Q + p.b * (Q2 - t * eye / d) - p.c * t * Q


def molecular_field_H(Q, lapQ, p: MaterialParams) -> np.ndarray:
    """``lam lapQ + L(Q)``."""
    return p.lam * np.asarray(lapQ, dtype=float) + lower_order_L(Q, p)


def grad_fB(Q, p: MaterialParams) -> np.ndarray:
    """Unconstrained matrix gradient of ``f_B``: ``a Q - b Q^2 + c tr(Q^2) Q``.

    Valid as the derivative along symmetric directions. Projected onto the
    traceless symmetric matrices it equals ``-L(Q)``.
    """
    Q = np.asarray(Q, dtype=float)
    Q2, tr2, _, _ = _traces(Q)
    return p.a * Q - p.b * Q2 + p.c * tr2[..., None, None] * Q


def viscosity_nu(Q, spec: ViscositySpec) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    tr2 = contract(Q, Q)
    if spec.family == "constant":
        return np.full(tr2.shape, spec.nu0)
    return spec.nu0 + spec.nu1 * tr2 / (1.0 + tr2)


def bulk_lower_bound(p: MaterialParams, d: int) -> float:
    """Analytic ``C >= 0`` with ``f_B(Q) >= -C`` for every traceless symmetric ``Q``.

    With ``r = |Q|`` one has ``tr Q^3 = 0`` for ``d = 2`` and
    ``|tr Q^3| <= r^3 / sqrt(6)`` for ``d = 3`` (attained by uniaxial tensors),
    so ``f_B >= g(r)`` for a quartic ``g`` minimised here in closed form.
    """
    n_components(d)
    a, c = p.a, p.c
    b = 0.0 if d == 2 else abs(p.b) / np.sqrt(6.0)

    def g(r):
        return 0.5 * a * r**2 - b / 3.0 * r**3 + 0.25 * c * r**4

    # g'(r) = r (a - b r + c r^2)
    candidates = [0.0]
    disc = b * b - 4.0 * a * c
    if disc >= 0:
        root = np.sqrt(disc)
        candidates += [r for r in ((b - root) / (2 * c), (b + root) / (2 * c)) if r > 0]
    return max(0.0, -min(g(r) for r in candidates))
