import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsirigid.rigid_motion import RigidTrajectory, body_map
from fsirigid.transform import (
    GapHypothesisViolated,
    Stencil,
    TransformData,
    build_cutoff,
    build_transform,
    check_gap,
    coefficient_time_derivatives,
    dump_transform,
    fd_weights,
    flow_labels,
    invert_transform,
    load_transform,
    metric_and_christoffel,
    transport_field,
)

CUT = build_cutoff(0.5, 1.5, 0.1, 0.4)


def shell_points(n, r0=0.5, r1=1.5, seed=0):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return d * rng.uniform(r0, r1, size=(n, 1))


def test_cutoff_rejects_overlapping_shells():
    with pytest.raises(ValueError):
        build_cutoff(0.5, 1.0, 0.3, 0.3)
    with pytest.raises(ValueError):
        build_cutoff(0.5, 1.5, 0.0, 0.4)


def test_cutoff_profile_values_and_smoothness():
    chi, d1, d2 = CUT.profile(np.array([0.0, 0.6, 1.1, 1.4]))
    assert np.array_equal(chi, [1, 1, 0, 0])
    assert not d1.any() and not d2.any()
    # derivatives against central differences across the transition
    # gradient vanishes at both plateau boundaries
    assert np.abs(CUT.profile(np.array([CUT.r_in, CUT.r_out]))[1]).max() < 1e-10
    # interior of the transition (the third derivative jumps at the junctions)
    rho = np.linspace(0.61, 1.09, 61)
    e = 1e-5
    c, c1, c2 = CUT.profile(rho)
    cp, cm = CUT.profile(rho + e)[0], CUT.profile(rho - e)[0]
    assert np.abs((cp - cm) / (2 * e) - c1).max() < 1e-8
    assert np.abs((CUT.profile(rho + e)[1] - CUT.profile(rho - e)[1]) / (2 * e) - c2).max() < 1e-6


def fd_gradient(x, q, a, om):
    e = 1e-6
    G = np.zeros((len(x), 3, 3))
    for j in range(3):
        dx = np.zeros(3)
        dx[j] = e
        G[:, :, j] = (transport_field(x + dx, q, a, om, CUT, False)
                      - transport_field(x - dx, q, a, om, CUT, False)) / (2 * e)
    return G


def test_transport_gradient_matches_fd_and_is_divergence_free():
    rng = np.random.default_rng(4)
    q = np.array([0.05, -0.02, 0.01])
    a, om = rng.normal(size=3), rng.normal(size=3)
    x = shell_points(500, 0.3, 1.6, seed=5)
    w, gw = transport_field(x, q, a, om, CUT)
    G = fd_gradient(x, q, a, om)
    assert np.abs(G - gw).max() < 1e-7
    assert np.abs(np.trace(gw, axis1=1, axis2=2)).max() < 1e-12
    assert np.abs(np.trace(G, axis1=1, axis2=2)).max() < 1e-7


def test_transport_is_rigid_inside_and_zero_near_wall():
    a, om = np.array([0.3, 0, 0.1]), np.array([0, 0, 1.0])
    x = shell_points(200, 0.5, 0.6)
    assert np.abs(transport_field(x, np.zeros(3), a, om, CUT, False) - (a + np.cross(om, x))).max() < 1e-15
    x = shell_points(200, 1.1, 1.5)
    assert not transport_field(x, np.zeros(3), a, om, CUT, False).any()


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_transport_divergence_free_property(v):
    x = shell_points(50, 0.55, 1.15, seed=7)
    _, gw = transport_field(x, np.zeros(3), np.array(v[:3]), np.array(v[3:]), CUT)
    assert np.abs(np.trace(gw, axis1=1, axis2=2)).max() < 1e-12


def test_gap_check():
    check_gap((0.1, 0, 0), np.zeros(3), CUT)
    with pytest.raises(GapHypothesisViolated):
        check_gap((0.45, 0, 0), np.zeros(3), CUT)
    with pytest.raises(GapHypothesisViolated):
        check_gap((0.2, 0, 0), np.zeros(3), CUT, delta=0.9)


def test_zero_motion_gives_identity():
    y = shell_points(100)
    traj = RigidTrajectory.prescribed(np.zeros(3), (0, 0, 0), (0, 0, 0), 0.1, 3)
    for td in build_transform(traj, CUT, y):
        assert td.is_identity()
        assert np.array_equal(td.X, y)


def test_volume_preservation_plateau_and_consistency():
    y = shell_points(400, seed=3)
    traj = RigidTrajectory.prescribed(np.zeros(3), (0.3, 0.2, -0.1), (0.1, 0.4, 0.9), 0.02, 10)
    plateau = np.linalg.norm(y, axis=1) <= CUT.r_in
    # stencil entirely inside the plateau
    deep = np.linalg.norm(y, axis=1) <= CUT.r_in - 2.5 / 64
    wall = np.linalg.norm(y, axis=1) >= CUT.r_out + 0.1
    for n, td in enumerate(build_transform(traj, CUT, y)):
        assert np.abs(td.det - 1).max() < 1e-8
        assert np.abs(td.Finv @ td.F - np.eye(3)).max() < 1e-12
        assert np.abs(td.g @ td.ginv - np.eye(3)).max() < 1e-12
        assert np.abs(td.X[plateau] - body_map(0, y[plateau], traj.state(n), traj.q0)).max() < 1e-10
        assert np.array_equal(td.X[wall], y[wall])
        # Christoffel symbols vanish where the map is rigid
        assert np.abs(td.Gam[deep]).max() < 1e-12


def quadratic_map(y, B, C):
    """X = y + B y + 1/2 C[k,i,j] y_i y_j, analytic gradient and Hessian."""
    X = y + y @ B.T + 0.5 * np.einsum("kij,ni,nj->nk", C, y, y)
    F = np.eye(3) + B + np.einsum("kij,nj->nki", C, y)
    return X, F


def test_christoffel_against_quadratic_map_oracle():
    rng = np.random.default_rng(8)
    B = 0.1 * rng.normal(size=(3, 3))
    C = 0.1 * rng.normal(size=(3, 3, 3))
    C = 0.5 * (C + C.transpose(0, 2, 1))
    y = rng.uniform(-0.5, 0.5, size=(30, 3))
    errs = []
    for h in (1 / 16, 1 / 32):
        st_ = Stencil(h, "cube")
        pts = st_.points(y)
        _, F = quadratic_map(pts.reshape(-1, 3), B, C)
        mc = metric_and_christoffel(F.reshape(pts.shape + (3,)), st_, second=True)
        # Gamma^k_ij = dY_k/dx_m d^2 X_m / dy_i dy_j
        F0 = np.eye(3) + B + np.einsum("kij,nj->nki", C, y)
        Gam = np.einsum("nkm,mij->nkij", np.linalg.inv(F0), C)
        errs.append(np.abs(mc["Gam"] - Gam).max())
        # d_d Gamma^k_ij = -Y_k,a C[a,b,d] Y_b,m C[m,i,j]  (X has constant Hessian)
        Y = np.linalg.inv(F0)
        dGam = -np.einsum("nka,abd,nbm,mij->ndkij", Y, C, Y, C)
        assert np.abs(mc["dGam"] - dGam).max() < 1e-7
        # d_d g_ij = C[k,i,d] F_kj + F_ki C[k,j,d],  d_d g^-1 = -g^-1 (d_d g) g^-1
        dg = np.einsum("kid,nkj->ndij", C, F0) + np.einsum("nki,kjd->ndij", F0, C)
        dginv = -np.einsum("nia,ndab,nbj->ndij", Y @ Y.transpose(0, 2, 1), dg, Y @ Y.transpose(0, 2, 1))
        assert np.abs(mc["dginv"] - dginv).max() < 1e-10
    # g is a polynomial of degree 2: the 4th-order stencil is exact up to rounding
    assert max(errs) < 1e-11


def test_stencil_derivatives_are_fourth_order():
    f = lambda p: np.sin(p[..., 0]) * np.exp(0.5 * p[..., 1]) * np.cos(p[..., 2])
    y = np.array([[0.3, -0.2, 0.1]])
    x, yy, z = y[0]
    exact_d1 = np.array([np.cos(x) * np.exp(0.5 * yy) * np.cos(z),
                         0.5 * np.sin(x) * np.exp(0.5 * yy) * np.cos(z),
                         -np.sin(x) * np.exp(0.5 * yy) * np.sin(z)])
    exact_dxy = 0.5 * np.cos(x) * np.exp(0.5 * yy) * np.cos(z)
    e1, e2 = [], []
    for h in (0.1, 0.05):
        s = Stencil(h, "cube")
        vals = f(s.points(y))
        e1.append(np.abs(s.d1(vals)[0] - exact_d1).max())
        e2.append(abs(s.d2(vals)[0, 0, 1] - exact_dxy))
    assert 12 < e1[0] / e1[1] < 20
    assert 12 < e2[0] / e2[1] < 20


def test_cross_stencil_refuses_second_metric_derivatives():
    s = Stencil(0.1, "cross")
    F = np.broadcast_to(np.eye(3), (2, len(s), 3, 3))
    with pytest.raises(ValueError):
        metric_and_christoffel(F, s, second=True)


def test_analytic_metric_time_derivative_matches_fd():
    # central differences of g converge to the variational dg/dt at second order
    y = shell_points(100, 0.55, 1.2, seed=9)
    errs = []
    for dt in (4e-3, 2e-3):
        m = int(round(0.02 / dt))
        traj = RigidTrajectory.prescribed(np.zeros(3), (0.2, 0.1, 0), (0, 0.3, 1.0), dt, m + 1)
        tds = list(build_transform(traj, CUT, y, kind="point"))
        d = coefficient_time_derivatives(tds[m - 1:m + 2], 1, fields=("g",))["g"][0]
        errs.append(np.abs(d - tds[m].dgdt).max())
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_stationary_body_has_zero_time_derivatives():
    y = shell_points(30)
    traj = RigidTrajectory.prescribed(np.zeros(3), (0, 0, 0), (0, 0, 0), 0.1, 4)
    d = coefficient_time_derivatives(list(build_transform(traj, CUT, y)), 2)
    assert all(not a.any() for v in d.values() for a in v)


def test_pure_translation_and_rigid_inverse():
    y = shell_points(300, 0.5, 0.58, seed=13)
    A = np.array([0.2, -0.1, 0.05])
    traj = RigidTrajectory.prescribed(np.zeros(3), A, (0, 0, 0), 0.05, 10)
    X, _ = flow_labels(y, traj, 10, CUT)
    assert np.abs(X - (y + traj.q[-1])).max() < 1e-9
    traj = RigidTrajectory.prescribed(np.zeros(3), A, (0.3, 0, 0.8), 0.05, 10)
    X, _ = flow_labels(y, traj, 10, CUT)
    yr = invert_transform(X, traj, 10, CUT)
    s = traj.state(10)
    assert np.abs(yr - (X - s.q) @ s.Q).max() < 1e-9


def test_fd_weights():
    assert np.allclose(fd_weights([-1, 0, 1], 1), [-0.5, 0, 0.5])
    assert np.allclose(fd_weights([-1, 0, 1], 2), [1, -2, 1])
    assert np.allclose(fd_weights([-2, -1, 0, 1, 2], 1), [1 / 12, -2 / 3, 0, 2 / 3, -1 / 12])


def test_coefficient_time_derivatives_need_enough_uniform_snapshots():
    y = shell_points(5)
    tds = [TransformData.identity(y, t) for t in (0.0, 0.1, 0.3)]
    with pytest.raises(ValueError):
        coefficient_time_derivatives(tds, 1)
    with pytest.raises(ValueError):
        coefficient_time_derivatives(tds[:2], 1)


def test_inverse_round_trip():
    y = shell_points(200, seed=11)
    traj = RigidTrajectory.prescribed(np.zeros(3), (0.3, 0, 0.1), (0, 0.5, 1.0), 0.05, 6)
    X, _ = flow_labels(y, traj, 6, CUT)
    samples = shell_points(2000, seed=12)
    sX, _ = flow_labels(samples, traj, 6, CUT)
    yr = invert_transform(X, traj, 6, CUT, samples_y=samples, samples_X=sX)
    assert np.abs(yr - y).max() < 1e-10


def test_transform_dump_round_trip(tmp_path):
    y = shell_points(20)
    traj = RigidTrajectory.prescribed(np.zeros(3), (0.1, 0, 0), (0, 0, 1), 0.05, 2)
    td = list(build_transform(traj, CUT, y))[-1]
    dump_transform(td, tmp_path / "td.bin")
    back = load_transform(tmp_path / "td.bin")
    assert back["t"] == td.t and back["npoints"] == 20
    assert np.array_equal(back["Gam"], td.Gam) and np.array_equal(back["X"], td.X)
