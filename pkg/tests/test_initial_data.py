import numpy as np
import pytest

from qflow import tensor_core as tc
from qflow.grid_ops import GridSpec, QField, VelocityField, write_snapshot
from qflow.initial_data import bump, from_snapshots, standard_bubble, uniaxial_bubble, zero_data


def test_bump_profile():
    r = np.array([0.0, 0.5, 1.0, 2.0])
    b = bump(r, 1.0)
    assert b[0] == 1.0 and b[2] == 0.0 and b[3] == 0.0
    np.testing.assert_allclose(b[1], np.exp(1 - 1 / 0.75))


def test_bubble_is_compactly_supported_and_uniaxial():
    g = GridSpec(32, 32)
    Q = uniaxial_bubble(g, 3, s=0.5, radius=0.3, twist=0.0)
    assert np.all(Q.data[0] == 0) and np.all(Q.data[:, -1] == 0)
    M = Q.matrices()[16, 16]
    ev = np.sort(np.linalg.eigvalsh(M))
    np.testing.assert_allclose(ev[0], ev[1], atol=1e-14)


def test_bubble_validation():
    g = GridSpec(16, 16)
    with pytest.raises(ValueError):
        uniaxial_bubble(g, 3, radius=0.6)
    with pytest.raises(ValueError):
        uniaxial_bubble(g, 3, director=(1.0, 1.0))
    with pytest.raises(ValueError):
        uniaxial_bubble(g, 3, radius=0.0)
    uniaxial_bubble(GridSpec(16, 16, bc="periodic"), 3, center=(0.0, 0.0), radius=0.45)


def test_standard_bubble_and_zero():
    g = GridSpec(16, 16)
    assert standard_bubble(g, 2).dim == 2
    u, Q = zero_data(g, 3)
    assert np.all(u.flat == 0) and np.all(Q.data == 0)


def test_from_snapshots(tmp_path):
    g = GridSpec(8, 8)
    Q = standard_bubble(g, 3)
    write_snapshot(tmp_path / "q.bin", Q)
    u, Q2 = from_snapshots(tmp_path / "q.bin")
    assert np.array_equal(Q2.data, Q.data) and np.all(u.flat == 0)
    w = VelocityField(g, np.ones(g.ushape), np.zeros(g.vshape))
    write_snapshot(tmp_path / "u.bin", w)
    u, _ = from_snapshots(tmp_path / "q.bin", tmp_path / "u.bin")
    assert np.array_equal(u.flat, w.flat)
    with pytest.raises(ValueError):
        from_snapshots(tmp_path / "u.bin")
