from math import factorial

import numpy as np
import pytest

from fsirigid.fem import (CoupledSpace, RigidBody, TaylorHoodSpace, inf_sup_estimate, load_vector,
                          stokes_dirichlet_solve, tet_rule_14, tet_rule_collapsed, weighted_inner)
from fsirigid.manufactured import ShellStokesSolution
from fsirigid.mesh import build_shell_mesh
from fsirigid.operators import form_A, form_M
from fsirigid.transform import TransformData, build_cutoff


def _monomial_error(lam, w, degree):
    err = 0.0
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            for c in range(degree + 1 - a - b):
                exact = factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)
                err = max(err, abs(np.sum(w * lam[:, 1]**a * lam[:, 2]**b * lam[:, 3]**c) - exact))
    return err


def test_quadrature_rules_integrate_monomials():
    assert _monomial_error(*tet_rule_14(), 5) < 1e-15
    assert _monomial_error(*tet_rule_collapsed(4), 7) < 1e-15


@pytest.fixture(scope="module")
def th1():
    return TaylorHoodSpace(build_shell_mesh(0.5, 1.5, 1))


def test_space_volume_and_tags(th1):
    assert th1.volume() == pytest.approx(th1.mesh.volume(), rel=1e-13)
    r = np.linalg.norm(th1.nodes[th1.node_tags == 2], axis=1)
    assert r.max() <= 0.5 + 1e-12   # body nodes sit on the faceted inner sphere


def test_viscous_symmetric_with_rigid_kernel(th1):
    K = th1.viscous
    assert abs(K - K.T).max() < 1e-13
    y = th1.nodes
    for v in (np.array([1.0, -2.0, 0.5]), None):
        U = np.broadcast_to(v, y.shape) if v is not None else np.cross([0.3, 0.1, -0.7], y)
        assert np.abs(K @ U.ravel()).max() < 1e-12


def test_constant_pressure_in_kernel(th1):
    free = (3 * np.flatnonzero(th1.node_tags == 0)[:, None] + np.arange(3)).ravel()
    Bt1 = th1.divergence.T @ np.ones(th1.npressure)
    assert np.abs(Bt1[free]).max() < 1e-13
    assert th1.pressure_mean.sum() == pytest.approx(th1.volume(), rel=1e-13)


def test_identity_forms_reproduce_plain_matrices(th1):
    td = TransformData.identity(th1.qp)
    U = np.random.default_rng(0).standard_normal((th1.nnodes, 3))
    assert np.abs(th1.apply_form(form_A(td), U).ravel() - th1.viscous @ U.ravel()).max() < 1e-12
    assert np.abs(th1.apply_form(form_M(td), U).ravel() - th1.mass @ U.ravel()).max() < 1e-13


def test_form_matrix_matches_matrix_free():
    th = TaylorHoodSpace(build_shell_mesh(0.5, 1.5, 0))
    C = np.random.default_rng(1).standard_normal((th.nquad, 12, 12))
    U = np.random.default_rng(2).standard_normal((th.nnodes, 3))
    A = th.form_matrix(C, chunk=37)
    assert np.abs(A @ U.ravel() - th.apply_form(C, U).ravel()).max() < 1e-11


def test_coupled_map_is_rigid_on_body(th1):
    cs = CoupledSpace(th1, RigidBody(0.5))
    A, Om = np.array([0.1, -0.2, 0.3]), np.array([0.5, 0.0, -1.0])
    z = cs.restrict(np.zeros((th1.nnodes, 3)), A, Om)
    U = cs.expand(z)
    b = cs.body_nodes
    assert np.abs(U[b] - (A + np.cross(Om, th1.nodes[b]))).max() < 1e-15
    assert np.abs(U[cs.wall_nodes]).max() == 0
    assert np.abs(U[cs.free]).max() == 0


def test_weighted_mass_matches_inner_product(th1):
    cs = CoupledSpace(th1, RigidBody(0.5))
    rng = np.random.default_rng(3)
    z1, z2 = rng.standard_normal(cs.nz), rng.standard_normal(cs.nz)
    G = cs.weighted_mass()
    _, a1, w1 = cs.split(z1)
    _, a2, w2 = cs.split(z2)
    ref = weighted_inner(cs.expand(z1), a1, w1, cs.expand(z2), a2, w2, th1.mass, cs.body.inertia)
    assert z2 @ (G @ z1) == pytest.approx(ref, rel=1e-12)
    with pytest.raises(ValueError):
        cs.weighted_mass(np.diag([1.0, -1.0, 1.0]))


def test_extension_field_is_rigid_on_body_and_zero_on_wall(th1):
    cs = CoupledSpace(th1, RigidBody(0.5))
    cut = build_cutoff(0.5, 1.5, 0.1, 0.4)
    A, Om = np.array([0.2, 0.0, -0.1]), np.array([0.0, 1.0, 0.0])
    b = cs.extension_field(A, Om, cut)
    assert np.abs(b[cs.body_nodes] - (A + np.cross(Om, th1.nodes[cs.body_nodes]))).max() < 1e-14
    assert np.abs(b[cs.wall_nodes]).max() == 0


def test_stokes_error_decreases_level0_to_1():
    sol = ShellStokesSolution(0.5, 1.5)
    errs = []
    for level in (0, 1):
        th = TaylorHoodSpace(build_shell_mesh(0.5, 1.5, level))
        U, P = stokes_dirichlet_solve(th, load_vector(th, sol.force(th.qp)), th.interpolate(sol.velocity))
        assert abs(th.pressure_mean @ P) < 1e-10
        errs.append(np.sqrt(th.qw @ np.sum((th.eval_values(U) - sol.velocity(th.qp))**2, axis=1)))
    assert errs[1] < errs[0] / 2


def test_inf_sup_positive():
    betas = [inf_sup_estimate(TaylorHoodSpace(build_shell_mesh(0.5, 1.5, L))) for L in (0, 1)]
    assert min(betas) > 0.05
