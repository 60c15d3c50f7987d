import math

import numpy as np
import pytest
import hypothesis.strategies as st
from hypothesis import given

from qflow import tensor_core as tc
from qflow.energy_ledger import (
    EnergyLedger,
    diagnostic_norms,
    dissipation_audit,
    dissipation_B,
    free_energy,
    gradient_energy,
    kinetic_energy,
    molecular_field,
)
from qflow.grid_ops import GridSpec, QField, VelocityField, operators
from qflow.initial_data import standard_bubble
from qflow.scheme import SchemeConfig, State, advance

P = tc.MaterialParams()
QHAT = np.array([[0.3, 0.2], [0.2, -0.3]])


def sine_state(g, t=0.0):
    X, Y = g.cell_centers()
    phi = np.sin(np.pi * X) * np.sin(np.pi * Y)
    Q = QField(g, 2, tc.from_matrix(phi[..., None, None] * QHAT))
    XU, YU = g.uface_coords()
    XV, YV = g.vface_coords()
    u = np.pi * np.sin(np.pi * XU) ** 2 * np.sin(2 * np.pi * YU)
    v = -np.pi * np.sin(2 * np.pi * XV) * np.sin(np.pi * YV) ** 2
    return State(t, VelocityField(g, u, v), Q)


def test_zero_state():
    g = GridSpec(8, 8)
    st0 = State.zeros(g, 3)
    assert free_energy(st0.Q, P) == 0.0 and kinetic_energy(st0.u) == 0.0
    assert dissipation_B(st0.u, st0.Q, P) == 0.0
    n = diagnostic_norms(st0, P)
    assert all(getattr(n, f) == 0.0 for f in ("u_L2", "u_H1", "Q_L2", "Q_H1", "Q_H2", "B"))


def test_gradient_energy_is_minus_q_lap_q():
    rng = np.random.default_rng(0)
    for bc in ("dirichlet0", "periodic"):
        g = GridSpec(10, 8, lx=1.3, bc=bc)
        Q = QField(g, 3, rng.standard_normal((10, 8, 5)))
        G = tc.frobenius_metric(3)
        lap = operators(g).lap_c @ Q.flat
        expect = -np.sum((Q.flat @ G) * lap) * g.cell_area
        np.testing.assert_allclose(gradient_energy(Q), expect, rtol=1e-12)


def test_free_energy_sine_profile(oracle):
    g = GridSpec(64, 64)
    st0 = sine_state(g)
    expect = 0.5 * oracle["sine_gradient_energy"] + oracle["sine_bulk_energy"]
    assert abs(free_energy(st0.Q, P) / expect - 1) < 0.02
    p2 = tc.MaterialParams(lam=2.0)
    diff = free_energy(st0.Q, p2) - free_energy(st0.Q, P)
    np.testing.assert_allclose(diff, 0.5 * gradient_energy(st0.Q), rtol=1e-13)


def test_diagnostic_norms_sine_fields(oracle):
    g = GridSpec(64, 64)
    n = diagnostic_norms(sine_state(g), P)
    uL2 = oracle["curl_velocity_L2_sq"]
    qL2, qg, ql = oracle["sine_Q_L2_sq"], oracle["sine_gradient_energy"], oracle["sine_Q_lap_sq"]
    checks = {
        "u_L2": math.sqrt(uL2),
        "u_H1": math.sqrt(uL2 + oracle["curl_velocity_grad_sq"]),
        "Q_L2": math.sqrt(qL2),
        "Q_H1": math.sqrt(qL2 + qg),
        "Q_H2": math.sqrt(qL2 + qg + ql),
    }
    for k, v in checks.items():
        assert abs(getattr(n, k) / v - 1) < 0.02, k


def test_norms_translation_invariant_periodic():
    g = GridSpec(16, 16, bc="periodic")
    rng = np.random.default_rng(1)
    Q = QField(g, 3, rng.standard_normal((16, 16, 5)))
    u = VelocityField(g, rng.standard_normal(g.ushape), rng.standard_normal(g.vshape))
    a = diagnostic_norms(State(0.0, u, Q), P)
    sh = lambda x: np.roll(np.roll(x, 3, axis=0), 5, axis=1)
    b = diagnostic_norms(State(0.0, VelocityField(g, sh(u.u), sh(u.v)), Q.with_data(sh(Q.data))), P)
    for f in ("u_L2", "u_H1", "Q_L2", "Q_H1", "Q_H2", "B"):
        np.testing.assert_allclose(getattr(a, f), getattr(b, f), rtol=1e-12)


def test_molecular_field_vanishes():
    g = GridSpec(8, 8)
    assert np.all(molecular_field(QField.zeros(g, 3), P) == 0)


@given(st.integers(0, 2**20), st.sampled_from(["constant", "rational"]))
def test_dissipation_nonnegative(seed, family):
    rng = np.random.default_rng(seed)
    g = GridSpec(8, 8)
    Q = QField(g, 3, rng.standard_normal((8, 8, 5)))
    u = VelocityField(g, rng.standard_normal(g.ushape), rng.standard_normal(g.vshape))
    spec = tc.ViscositySpec(family, 1.0, 0.5 if family == "rational" else 0.0)
    assert dissipation_B(u, Q, P, spec) >= 0.0


def test_ledger_zero_run_and_validation():
    g = GridSpec(8, 8)
    led = EnergyLedger()
    advance(State.zeros(g, 3), 5e-3, P, tc.ViscositySpec(), SchemeConfig(dt=1e-3), led)
    assert len(led) == 6 and all(r == 0.0 for r in led.residual)
    with pytest.raises(ValueError):
        led.record(State.zeros(g, 3, t=0.0), P)
    with pytest.raises(ValueError):
        dissipation_audit(EnergyLedger())


def test_ledger_rejects_nonfinite():
    g = GridSpec(8, 8)
    Q = QField(g, 2, np.full((8, 8, 2), np.nan))
    with pytest.raises(FloatingPointError):
        EnergyLedger().record(State(0.0, VelocityField.zeros(g), Q), P)


def test_ledger_quadratures():
    g = GridSpec(16, 16)
    led = EnergyLedger()
    for k, t in enumerate([0.0, 0.1, 0.3]):
        led.record(sine_state(g, t), P)
    B = led.B[0]
    np.testing.assert_allclose(led.cumB[-1], 0.3 * B)
    np.testing.assert_allclose(led.cumB_trapezoid[-1], 0.3 * B)
    np.testing.assert_allclose(led.residual, [0.0, 0.1 * B, 0.3 * B])


def test_ledger_csv_roundtrip(tmp_path):
    g = GridSpec(16, 16)
    led = EnergyLedger()
    advance(State(0.0, VelocityField.zeros(g), standard_bubble(g, 3)), 3e-3, P, tc.ViscositySpec(),
            SchemeConfig(dt=1e-3), led)
    led.to_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "t,kinetic,free_energy,total,B,cumB,residual"
    back = EnergyLedger.from_csv(tmp_path / "e.csv")
    for f in ("t", "kinetic", "free", "total", "B", "cumB", "residual"):
        assert getattr(back, f) == getattr(led, f)


def test_audit_detects_energy_growth():
    led = EnergyLedger(t=[0.0, 1e-3], kinetic=[0, 0], free=[1.0, 1.01], total=[1.0, 1.01], B=[0, 0],
                       cumB=[0, 0], cumB_trapezoid=[0, 0], residual=[0.0, 0.01])
    a = dissipation_audit(led)
    assert not a.passed and not a.monotone and a.max_increase == pytest.approx(10.0)
    assert "FAIL" in a.summary()
