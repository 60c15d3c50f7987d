import numpy as np
import pytest
import hypothesis.strategies as st
from hypothesis import given

from qflow import tensor_core as tc
from qflow.grid_ops import GridSpec, QField, VelocityField, div_vec, operators, strain_energy, viscous_matrix
from qflow.poisson_helmholtz import (
    SolverConfig,
    SolverError,
    ViscousSolver,
    helmholtz_project,
    momentum_solve,
    pcg,
    solve_poisson,
    viscosity_fields,
    viscous_solve,
)

BCS = ["dirichlet0", "periodic"]
CG = SolverConfig()
LU = SolverConfig(method="direct")


def random_velocity(rng, g):
    return VelocityField(g, rng.standard_normal(g.ushape), rng.standard_normal(g.vshape))


def test_solver_config_validation():
    for kw in ({"tol": 0.0}, {"tol": 1.5}, {"max_iter": 0}, {"preconditioner": "ilu"}, {"method": "gmres"}):
        with pytest.raises(ValueError):
            SolverConfig(**kw)
    assert SolverConfig().iterations_for(GridSpec(8, 16)) == 240


def test_pcg_small_spd_and_failure():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((20, 20))
    A = M @ M.T + 20 * np.eye(20)
    b = rng.standard_normal((20, 3))
    x, info = pcg(lambda V: A @ V, b, tol=1e-12, max_iter=200, diag=np.diag(A))
    np.testing.assert_allclose(A @ x, b, atol=1e-10)
    assert info.iterations <= 200
    with pytest.raises(SolverError) as exc:
        pcg(lambda V: A @ V, b[:, 0], tol=1e-14, max_iter=2)
    assert exc.value.iterations == 2


def test_pcg_zero_rhs():
    x, info = pcg(lambda V: V, np.zeros(5), tol=1e-10, max_iter=5)
    assert np.all(x == 0) and info.iterations == 0


@pytest.mark.parametrize("bc", BCS)
@pytest.mark.parametrize("cfg", [CG, LU, SolverConfig(preconditioner="none")])
def test_poisson_roundtrip(bc, cfg):
    g = GridSpec(24, 20, lx=1.5, bc=bc)
    X, Y = g.cell_centers()
    q = np.cos(2 * np.pi * X / g.lx) * np.cos(np.pi * Y)
    q -= q.mean()
    rhs = (operators(g).lap_p @ q.ravel()).reshape(g.shape)
    sol, info = solve_poisson(rhs, g, cfg)
    assert np.abs(sol - q).max() <= 1e-6 * np.abs(q).max()
    z, _ = solve_poisson(np.zeros(g.shape), g, cfg)
    assert np.all(z == 0)


def test_jacobi_changes_iterations_not_solution():
    g = GridSpec(32, 32, lx=4.0)
    rng = np.random.default_rng(1)
    f = rng.standard_normal(g.shape)
    f -= f.mean()
    a, ia = solve_poisson(f, g, SolverConfig(tol=1e-12))
    b, ib = solve_poisson(f, g, SolverConfig(tol=1e-12, preconditioner="none"))
    assert np.abs(a - b).max() <= 1e-8 * np.abs(a).max()


def test_poisson_rejects_nonzero_mean():
    g = GridSpec(8, 8)
    with pytest.raises(ValueError):
        solve_poisson(np.ones(g.shape), g)
    with pytest.raises(ValueError):
        solve_poisson(np.full(g.shape, np.nan), g)


@pytest.mark.parametrize("bc", BCS)
@pytest.mark.parametrize("cfg", [CG, LU])
def test_projection_properties(bc, cfg):
    rng = np.random.default_rng(2)
    g = GridSpec(32, 28, bc=bc)
    v = random_velocity(rng, g)
    r = helmholtz_project(v, cfg)
    vn = np.abs(v.flat).max()
    assert r.residual <= 10 * cfg.tol
    assert np.abs(div_vec(r.field)).max() <= 10 * cfg.tol
    r2 = helmholtz_project(r.field, cfg)
    assert np.abs(r2.field.flat - r.field.flat).max() <= 10 * cfg.tol * vn


@pytest.mark.parametrize("bc", BCS)
def test_projection_of_gradient_and_solenoidal(bc):
    g = GridSpec(24, 24, bc=bc)
    o = operators(g)
    X, Y = g.cell_centers()
    q = np.cos(2 * np.pi * X) * np.sin(2 * np.pi * Y)
    grad = VelocityField(g, (o.grad_px @ q.ravel()).reshape(g.ushape), (o.grad_py @ q.ravel()).reshape(g.vshape))
    out = helmholtz_project(grad).field
    assert np.linalg.norm(out.flat) <= 1e-9 * np.linalg.norm(grad.flat)
    psi = np.random.default_rng(3).standard_normal(g.nodeshape)
    if bc == "dirichlet0":
        psi[[0, -1], :] = 0.0
        psi[:, [0, -1]] = 0.0
    psi = psi.ravel()
    w = VelocityField(g, (o.n2u_y @ psi).reshape(g.ushape), -(o.n2v_x @ psi).reshape(g.vshape))
    assert np.abs(div_vec(w)).max() < 1e-10
    same = helmholtz_project(w).field
    assert np.abs(same.flat - w.flat).max() <= 1e-9 * np.abs(w.flat).max()


def test_viscous_solve_zero_and_validation():
    g = GridSpec(8, 8)
    z, info = viscous_solve(VelocityField.zeros(g), 1.0, None, 0.1)
    assert np.all(z.flat == 0)
    with pytest.raises(ValueError):
        viscous_solve(VelocityField.zeros(g), -1.0, None, 0.1)


@pytest.mark.parametrize("cfg", [CG, LU])
def test_viscous_solve_residual(cfg):
    rng = np.random.default_rng(4)
    g = GridSpec(16, 12)
    u0 = random_velocity(rng, g)
    f = random_velocity(rng, g)
    nu = 1 + rng.random(g.nx * g.ny)
    w, _ = viscous_solve(u0, nu, f, 0.01, cfg)
    s = ViscousSolver(g, nu, 0.01, cfg)
    np.testing.assert_allclose(s.A @ w.flat, u0.flat + 0.01 * f.flat, atol=1e-8)


def test_variable_viscosity_energy_identity():
    rng = np.random.default_rng(5)
    g = GridSpec(16, 16)
    Q = QField(g, 3, 0.3 * rng.standard_normal((16, 16, 5)))
    nu_c, nu_n = viscosity_fields(Q, tc.ViscositySpec("rational", 1.0, 2.0))
    assert np.ndim(nu_c) == 1 and nu_c.min() >= 1.0
    K = viscous_matrix(g, nu_c, nu_n)
    for _ in range(5):
        w = random_velocity(rng, g)
        a = w.flat @ (K @ w.flat) * g.cell_area
        b = strain_energy(w, nu_c, nu_n)
        assert a >= 0 and abs(a - b) <= 1e-10 * b


def test_constant_viscosity_fields_are_scalars():
    g = GridSpec(8, 8)
    assert viscosity_fields(QField.zeros(g, 3), tc.ViscositySpec(nu0=2.0)) == (2.0, 2.0)
    assert viscosity_fields(None, tc.ViscositySpec("rational", 1.0, 1.0)) == (1.0, 1.0)


@given(st.integers(8, 20), st.sampled_from(BCS), st.integers(0, 2**16))
def test_momentum_solve_divergence_free(n, bc, seed):
    rng = np.random.default_rng(seed)
    g = GridSpec(n, n, bc=bc)
    w = momentum_solve(random_velocity(rng, g), 1.0, random_velocity(rng, g), 0.01)
    assert np.abs(div_vec(w)).max() <= 10 * CG.tol
