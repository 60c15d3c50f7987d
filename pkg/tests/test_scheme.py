import math
from dataclasses import replace

import numpy as np
import pytest

from qflow import tensor_core as tc
from qflow.energy_ledger import EnergyLedger, dissipation_audit
from qflow.grid_ops import (
    GridSpec,
    QField,
    VelocityField,
    convect_q,
    convect_u,
    div_matrix,
    div_vec,
    elastic_force,
    ericksen_tau,
    operators,
    velocity_gradient,
)
from qflow.initial_data import standard_bubble, uniaxial_bubble
from qflow.poisson_helmholtz import helmholtz_project
from qflow.scheme import (
    PicardReport,
    RunFailure,
    SchemeConfig,
    State,
    StepRejected,
    advance,
    boundary_laplacian,
    fixed_point_residual,
    format_log_line,
    linearized_solve,
    nonlinear_rhs,
    picard_step,
    x_norm,
)

P = tc.MaterialParams()
NU = tc.ViscositySpec()


def small_state(rng, g, d=3, amp=0.1):
    X, Y = g.cell_centers()
    phi = np.sin(np.pi * X) * np.sin(np.pi * Y)
    Q = QField(g, d, amp * phi[..., None] * rng.standard_normal(tc.n_components(d)))
    v = VelocityField(g, amp * rng.standard_normal(g.ushape), amp * rng.standard_normal(g.vshape))
    return State(0.0, helmholtz_project(v).field, Q)


def test_config_validation():
    with pytest.raises(ValueError):
        SchemeConfig(dt=0.0)
    with pytest.raises(ValueError):
        SchemeConfig(dt=1e-3, epsilon=1e-3)
    with pytest.raises(ValueError):
        SchemeConfig(dt=1e-3, mode="regularized")
    with pytest.raises(ValueError):
        SchemeConfig(dt=1e-3, stress="weak")
    with pytest.raises(ValueError):
        SchemeConfig(dt=1e-3, picard_max=0)
    assert SchemeConfig(dt=1e-3).inner.tol == 1e-12


def test_state_validation():
    g = GridSpec(8, 8)
    with pytest.raises(ValueError):
        State(0.0, VelocityField.zeros(GridSpec(8, 8, bc="periodic")), QField.zeros(g, 3))


def test_nonlinear_rhs_zero():
    g = GridSpec(8, 8)
    st = State.zeros(g, 3)
    F, G = nonlinear_rhs(st, st.Q, P, NU)
    assert np.all(F.flat == 0) and np.all(G.data == 0)


def test_nonlinear_rhs_at_rest():
    rng = np.random.default_rng(0)
    g = GridSpec(12, 10)
    st = small_state(rng, g)
    st = State(0.0, VelocityField.zeros(g), st.Q)
    F, G = nonlinear_rhs(st, st.Q, P, NU, stress="divergence")
    expect = helmholtz_project(div_matrix(ericksen_tau(st.Q, P.lam), g)).field
    np.testing.assert_allclose(F.flat, expect.flat, atol=1e-10)
    np.testing.assert_allclose(G.matrices(), P.gamma * tc.lower_order_L(st.Q.matrices(), P), atol=1e-15)


@pytest.mark.parametrize("stress", ["force", "divergence"])
def test_nonlinear_rhs_reassembly(stress):
    rng = np.random.default_rng(1)
    g = GridSpec(12, 12)
    st = small_state(rng, g)
    Qt = small_state(rng, g).Q
    p = tc.MaterialParams(a=-0.3, b=0.7, c=1.1, lam=0.8, gamma=1.3)
    F, G = nonlinear_rhs(st, Qt, p, NU, stress=stress, project=False)
    Qm, Qtm = st.Q.matrices(), Qt.matrices()
    lap = tc.to_matrix(operators(g).lap_c @ st.Q.flat, 3).reshape(Qm.shape)
    sig = p.lam * tc.sigma_stress(Qm - Qtm, lap)[..., :2, :2]
    if stress == "force":
        H = p.lam * lap + tc.lower_order_L(Qm, p)
        mom = elastic_force(st.Q, H) + div_matrix(sig, g)
    else:
        mom = div_matrix(ericksen_tau(st.Q, p.lam) + sig, g)
    expect_F = mom - convect_u(st.u)
    np.testing.assert_allclose(F.flat, expect_F.flat, rtol=1e-12, atol=1e-12)
    S = tc.corotation_S(velocity_gradient(st.u), Qm - Qtm)
    expect_G = S + p.gamma * tc.lower_order_L(Qm, p) - convect_q(st.u, st.Q).matrices()
    np.testing.assert_allclose(G.matrices(), expect_G, atol=1e-12)


def test_linearized_solve_zero():
    g = GridSpec(8, 8)
    st = State.zeros(g, 2)
    out = linearized_solve(st, st.Q, (VelocityField.zeros(g), QField.zeros(g, 2)), SchemeConfig(dt=1e-3), P, NU)
    assert np.all(out.u.flat == 0) and np.all(out.Q.data == 0)
    assert out.t == pytest.approx(1e-3)


@pytest.mark.parametrize("method", ["direct", "cg"])
def test_heat_step_eigen_factor(oracle, method):
    from qflow.poisson_helmholtz import SolverConfig

    g = GridSpec(32, 32)
    X, Y = g.cell_centers()
    phi = np.sin(np.pi * X) * np.sin(np.pi * Y)
    Q0 = QField(g, 2, phi[..., None] * np.array([0.3, 0.2]))
    cfg = SchemeConfig(dt=1e-3, solver=SolverConfig(method=method))
    st = State(0.0, VelocityField.zeros(g), Q0)
    out = linearized_solve(st, QField.zeros(g, 2), (VelocityField.zeros(g), QField.zeros(g, 2)), cfg, P, NU)
    np.testing.assert_allclose(out.Q.data, oracle["heat_factor_n32_dt1e-3"] * Q0.data, rtol=1e-10, atol=1e-13)


def test_regularized_step_boundary_laplacian():
    g = GridSpec(24, 24)
    Q0 = standard_bubble(g, 3)
    cfg = SchemeConfig(dt=1e-3, epsilon=1e-3, mode="regularized")
    new, rep = picard_step(State(0.0, VelocityField.zeros(g), Q0), P, NU, cfg)
    assert rep.converged
    assert np.abs(boundary_laplacian(new.Q)).max() <= 10 * cfg.solver.tol


def test_boundary_laplacian_empty_for_periodic():
    assert boundary_laplacian(QField.zeros(GridSpec(8, 8, bc="periodic"), 3)).shape == (0, 5)


def test_picard_zero_data_one_iteration():
    g = GridSpec(16, 16)
    new, rep = picard_step(State.zeros(g, 3), P, NU, SchemeConfig(dt=1e-3))
    assert rep.iterations == 1 and rep.converged and rep.rho == 0.0
    assert np.all(new.Q.data == 0) and np.all(new.u.flat == 0)


def test_picard_converges_and_contracts():
    g = GridSpec(32, 32)
    st = State(0.0, VelocityField.zeros(g), standard_bubble(g, 3))
    _, r1 = picard_step(st, P, NU, SchemeConfig(dt=1e-3))
    new, r2 = picard_step(st, P, NU, SchemeConfig(dt=5e-4))
    assert r1.converged and r1.iterations <= 20 and 0 < r1.rho < 1
    assert r2.rho <= r1.rho
    assert fixed_point_residual(st, new, P, NU, SchemeConfig(dt=5e-4)) <= 1e-9
    assert np.abs(div_vec(new.u)).max() <= 1e-10


def test_variable_viscosity_step():
    g = GridSpec(16, 16)
    st = State(0.0, VelocityField.zeros(g), standard_bubble(g, 3))
    spec = tc.ViscositySpec("rational", 1.0, 2.0)
    new, rep = picard_step(st, P, spec, SchemeConfig(dt=1e-3))
    assert rep.converged and np.abs(div_vec(new.u)).max() <= 1e-10


def test_rejection_and_run_failure():
    g = GridSpec(16, 16)
    st = State(0.0, VelocityField.zeros(g), standard_bubble(g, 3))
    cfg = SchemeConfig(dt=1e-3, picard_max=1, max_halvings=1)
    with pytest.raises(StepRejected) as exc:
        picard_step(st, P, NU, cfg)
    assert not exc.value.report.converged
    with pytest.raises(RunFailure):
        advance(st, 2e-3, P, NU, cfg)


def test_advance_halves_dt_on_rejection():
    g = GridSpec(16, 16)
    st = State(0.0, VelocityField.zeros(g), standard_bubble(g, 3))
    _, rep = picard_step(st, P, NU, SchemeConfig(dt=1e-3))
    _, rep_half = picard_step(st, P, NU, SchemeConfig(dt=5e-4))
    assert rep_half.iterations < rep.iterations
    led = EnergyLedger()
    advance(st, 1e-3, P, NU, SchemeConfig(dt=1e-3, picard_max=rep_half.iterations), led)
    assert led.t[1] == pytest.approx(5e-4) and led.t[-1] == pytest.approx(1e-3)


def test_advance_noop_and_landing():
    g = GridSpec(8, 8)
    st = State.zeros(g, 2, t=0.3)
    assert advance(st, 0.3, P, NU, SchemeConfig(dt=1e-3)) is st
    with pytest.raises(ValueError):
        advance(st, 0.1, P, NU, SchemeConfig(dt=1e-3))
    out = advance(st, 0.3 + 2.5e-3, P, NU, SchemeConfig(dt=1e-3))
    assert out.t == 0.3 + 2.5e-3


def test_advance_composition_is_exact():
    g = GridSpec(16, 16)
    st = State(0.0, VelocityField.zeros(g), standard_bubble(g, 2))
    cfg = SchemeConfig(dt=1e-3)
    a = advance(st, 10e-3, P, NU, cfg)
    b = st
    for k in range(10):
        b = advance(b, (k + 1) * 1e-3, P, NU, cfg)
    assert np.array_equal(a.Q.data, b.Q.data) and np.array_equal(a.u.flat, b.u.flat)


def test_run_is_deterministic():
    g = GridSpec(16, 16)
    st = State(0.0, VelocityField.zeros(g), standard_bubble(g, 3))
    cfg = SchemeConfig(dt=1e-3)
    a = advance(st, 5e-3, P, NU, cfg)
    b = advance(st, 5e-3, P, NU, cfg)
    assert np.array_equal(a.Q.data, b.Q.data) and np.array_equal(a.u.flat, b.u.flat)


def test_forcing_free_run_dissipates():
    g = GridSpec(24, 24)
    st = State(0.0, VelocityField.zeros(g), standard_bubble(g, 3))
    led = EnergyLedger()
    seen = []
    advance(st, 0.02, P, NU, SchemeConfig(dt=1e-3), led, on_step=lambda i, s, r: seen.append((i, r)))
    audit = dissipation_audit(led)
    assert audit.passed and audit.monotone
    assert [i for i, _ in seen] == list(range(1, 21))
    assert max(np.diff(led.total)) < 0


def test_periodic_run():
    g = GridSpec(16, 16, bc="periodic")
    Q0 = uniaxial_bubble(g, 3, radius=0.4, center=(0.9, 0.5))
    led = EnergyLedger()
    out = advance(State(0.0, VelocityField.zeros(g), Q0), 5e-3, P, NU, SchemeConfig(dt=1e-3), led)
    assert np.abs(div_vec(out.u)).max() <= 1e-10
    assert dissipation_audit(led).passed


def test_x_norm_and_log_line():
    g = GridSpec(8, 8)
    assert x_norm(VelocityField.zeros(g), QField.zeros(g, 3)) == 0.0
    st = State.zeros(g, 3, t=0.5)
    line = format_log_line(3, st, 1e-3, PicardReport((1e-3, 1e-5), True, 1e-3), (1.0, 2.0, 3.0, 4.0))
    assert line.split()[0] == "3" and len(line.split()) == 9
    assert math.isclose(float(line.split()[4]), 1e-2)
