import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsirigid.rigid_motion import (
    BodyGeometry,
    RigidState,
    RigidTrajectory,
    body_map,
    inertia_tensor,
    integrate_rotation,
    read_trajectory_csv,
    rigid_velocity,
    rodrigues,
    skew,
    transformed_inertia,
    write_trajectory_csv,
)

vec3 = st.lists(st.floats(-5, 5, allow_nan=False), min_size=3, max_size=3)


def random_rotation(rng):
    return rodrigues(rng.normal(size=3))


def test_skew_zero_and_unit():
    assert np.array_equal(skew((0, 0, 0)), np.zeros((3, 3)))
    assert np.array_equal(skew((0, 0, 1)), np.array([[0, -1, 0], [1, 0, 0], [0, 0, 0]], float))


@given(vec3, vec3)
def test_skew_is_cross_product(w, x):
    P = skew(w)
    assert np.linalg.norm(P @ np.array(x) - np.cross(w, x)) < 1e-14 * (1 + np.linalg.norm(w) * np.linalg.norm(x))
    assert np.array_equal(P.T, -P)


def test_integrate_rotation_stationary():
    rng = np.random.default_rng(0)
    Q0 = random_rotation(rng)
    _, Qs = integrate_rotation(Q0, lambda t: (0, 0, 0), 1.0, 0.1)
    assert all(np.array_equal(Q, Q0) for Q in Qs)


def test_integrate_rotation_quarter_turn():
    _, Qs = integrate_rotation(np.eye(3), lambda t: (0, 0, 1), np.pi / 2, np.pi / 200)
    expected = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], float)
    assert np.abs(Qs[-1] - expected).max() < 1e-12


def test_integrate_rotation_second_order_and_orthogonal():
    # time-varying omega: midpoint exponential is O(dt^2) against a fine reference
    omega = lambda t: (np.sin(t), 0.5 * np.cos(2 * t), 0.3)
    _, ref = integrate_rotation(np.eye(3), omega, 1.0, 1e-4)
    errs = []
    for dt in (0.02, 0.01):
        _, Qs = integrate_rotation(np.eye(3), omega, 1.0, dt)
        errs.append(np.abs(Qs[-1] - ref[-1]).max())
        assert max(np.linalg.norm(Q.T @ Q - np.eye(3)) for Q in Qs) < 1e-12
        assert max(abs(np.linalg.det(Q) - 1) for Q in Qs) < 1e-12
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_integrate_rotation_rejects_non_orthogonal():
    with pytest.raises(ValueError):
        integrate_rotation(np.diag([1.0, 1.0, 1.1]), lambda t: (0, 0, 0), 1.0, 0.1)


def test_central_difference_of_Q_matches_skew_omega_Q():
    omega = lambda t: (np.sin(t), 0.2, np.cos(t))
    errs = []
    for dt in (1e-2, 5e-3):
        times, Qs = integrate_rotation(np.eye(3), omega, 1.0, dt)
        n = len(times) // 2
        dQ = (Qs[n + 1] - Qs[n - 1]) / (2 * dt)
        errs.append(np.abs(dQ - skew(omega(times[n])) @ Qs[n]).max())
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_body_map_identity_translation_isometry():
    rng = np.random.default_rng(1)
    q0 = np.array([0.1, -0.2, 0.3])
    y = rng.normal(size=(10, 3))
    s0 = RigidState.at_rest(q0)
    assert np.abs(body_map(0.0, y, s0, q0) - y).max() < 1e-15
    s1 = RigidState(0.7, q0 + 0.7 * np.array([1, 0, 0]), np.eye(3), (1, 0, 0), (0, 0, 0))
    assert np.abs(body_map(0.7, y, s1, q0) - (y + [0.7, 0, 0])).max() < 1e-15
    s2 = RigidState(1.0, rng.normal(size=3), random_rotation(rng), (0, 0, 0), (0, 0, 0))
    x = body_map(1.0, y, s2, q0)
    d_phys = np.linalg.norm(x[:5] - x[5:], axis=1)
    d_ref = np.linalg.norm(y[:5] - y[5:], axis=1)
    assert np.abs(d_phys - d_ref).max() < 1e-13


def test_rigid_velocity_basic():
    s = RigidState(0.0, (1, 2, 3), np.eye(3), (0, 0, 0), (0, 0, 0))
    assert np.array_equal(rigid_velocity(0.0, (4, 5, 6), s), np.zeros(3))
    s = RigidState(0.0, (1, 2, 3), np.eye(3), (0.5, 0, 1), (1, 2, 3))
    assert np.allclose(rigid_velocity(0.0, (1, 2, 3), s), (0.5, 0, 1))


def test_rigid_velocity_is_time_derivative_of_body_map():
    q0 = np.zeros(3)
    A, Om = np.array([0.3, -0.1, 0.2]), np.array([0.2, 0.5, -0.4])
    y = np.array([0.4, 0.1, -0.3])
    errs = []
    for dt in (1e-2, 5e-3):
        traj = RigidTrajectory.prescribed(q0, A, Om, dt, int(round(1.0 / dt)))
        n = len(traj) // 2
        Bp = body_map(0, y, traj.state(n + 1), q0)
        Bm = body_map(0, y, traj.state(n - 1), q0)
        s = traj.state(n)
        errs.append(np.abs((Bp - Bm) / (2 * dt) - rigid_velocity(s.t, body_map(0, y, s, q0), s)).max())
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_unit_ball_inertia_closed_form_and_monte_carlo():
    geo = BodyGeometry(1.0)
    rng = np.random.default_rng(2)
    s = RigidState(0.3, (0.2, 0.1, 0.0), random_rotation(rng), (0, 0, 0), (0, 0, 0))
    J = inertia_tensor(geo, s)
    assert np.abs(J - 8 * np.pi / 15 * np.eye(3)).max() < 1e-6
    assert np.abs(J - J.T).max() < 1e-12
    # Monte-Carlo oracle (independent of the product rule)
    pts = rng.uniform(-1, 1, size=(400000, 3))
    pts = pts[np.einsum("ni,ni->n", pts, pts) <= 1]
    vol = 8.0 * len(pts) / 400000
    r2 = np.einsum("ni,ni->n", pts, pts)
    J_mc = vol * (r2.mean() * np.eye(3) - np.einsum("ni,nj->ij", pts, pts) / len(pts))
    assert np.abs(J_mc - J).max() < 0.03
    s2 = RigidState(2.0, (-0.3, 0, 0.1), random_rotation(rng), (0, 0, 0), (0, 0, 0))
    assert np.abs(inertia_tensor(geo, s2) - J).max() < 1e-10


def test_inertia_converges_with_resolution():
    geo = BodyGeometry(0.5)
    s = RigidState.at_rest(geo.q0)
    exact = geo.inertia_closed_form()
    assert np.abs(inertia_tensor(geo, s, n=3) - exact).max() < 1e-13
    assert np.abs(inertia_tensor(geo, s, n=8) - exact).max() < 1e-13


def test_degenerate_geometry_rejected():
    with pytest.raises(ValueError):
        BodyGeometry(0.0)


def test_transformed_inertia():
    rng = np.random.default_rng(3)
    M = rng.normal(size=(3, 3))
    J = M @ M.T + np.eye(3)
    Q = random_rotation(rng)
    assert np.array_equal(transformed_inertia(np.eye(3), J), J)
    Jb = 2.0 * np.eye(3)
    assert np.abs(transformed_inertia(Q, Jb) - Jb).max() < 1e-14
    ev = np.linalg.eigvalsh(transformed_inertia(Q, J))
    assert np.abs(ev - np.linalg.eigvalsh(J)).max() < 1e-12


def test_trajectory_is_exact_rigid_motion():
    # constant body-frame velocities: q' = Q A, checked by dense sub-stepping
    q0 = np.array([0.0, 0.1, 0.0])
    A, Om = np.array([0.5, 0.0, 0.2]), np.array([0.0, 0.3, 1.0])
    coarse = RigidTrajectory.prescribed(q0, A, Om, 0.1, 5)
    fine = RigidTrajectory.prescribed(q0, A, Om, 0.001, 500)
    assert np.abs(coarse.q[-1] - fine.q[-1]).max() < 1e-12
    assert np.abs(coarse.Q[-1] - fine.Q[-1]).max() < 1e-12
    q, Q, a, w = coarse.pose_in_step(3, coarse.t[2] + 0.05)
    assert np.abs(q - fine.q[250]).max() < 1e-12


def test_trajectory_csv_round_trip(tmp_path):
    traj = RigidTrajectory.prescribed(np.zeros(3), (0.1, 0, 0), (0, 0, 1), 0.1, 3)
    path = tmp_path / "rigid.csv"
    traj.to_csv(path)
    assert path.read_text().startswith("# schema: fsirigid.rigid.v1")
    states = read_trajectory_csv(path)
    assert len(states) == 4
    for n, s in enumerate(states):
        ref = traj.state(n)
        assert np.array_equal(s.Q, ref.Q) and np.array_equal(s.omega, ref.omega)
    write_trajectory_csv(tmp_path / "again.csv", states)
    assert (tmp_path / "again.csv").read_text() == path.read_text()
