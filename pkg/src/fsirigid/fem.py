"""Taylor-Hood (P2 velocity / P1 pressure) discretization of the shell with
rigid-body degrees of freedom.

Vector fields are stored node-major as arrays (nnodes, 3); the flat index of
component n at node a is ``3 a + n``.  Coupled unknowns are
``z = [U at free nodes, A, Omega]``; body nodes carry ``A + Omega x (y - q0)``
and wall nodes are zero, so ``U_flat = T z``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import BODY, OUTER, ShellMesh
from .transform import CutoffField, transport_field

# ------------------------------------------------------------------ quadrature

_A1, _W1 = 0.09273525031089123, 0.01224884051939366
_A2, _W2 = 0.3108859192633006, 0.01878132095300264
_B, _W3 = 0.04550370412564965, 0.007091003462846911


def tet_rule_14():
    """Degree-5, 14-point rule on the unit tetrahedron (weights sum to 1/6).

    Returns barycentric coordinates (14, 4) and weights (14,).
    """
    pts, wts = [], []
    for a, w in ((_A1, _W1), (_A2, _W2)):
        for k in range(4):
            lam = np.full(4, a)
            lam[k] = 1 - 3 * a
            pts.append(lam)
            wts.append(w)
    c = 0.5 - _B
    for i in range(4):
        for j in range(i + 1, 4):
            lam = np.full(4, _B)
            lam[i] = lam[j] = c
            pts.append(lam)
            wts.append(_W3)
    return np.array(pts), np.array(wts)


def tet_rule_collapsed(n: int):
    """Conical-product Gauss rule with n^3 points (exact to degree 2n - 1)."""
    from scipy.special import roots_jacobi

    x0, w0 = roots_jacobi(n, 2.0, 0.0)
    x1, w1 = roots_jacobi(n, 1.0, 0.0)
    x2, w2 = np.polynomial.legendre.leggauss(n)
    u, v, s = (x0 + 1) / 2, (x1 + 1) / 2, (x2 + 1) / 2
    wu, wv, ws = w0 / 8, w1 / 4, w2 / 2
    pts, wts = [], []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                a = u[i]
                b = v[j] * (1 - a)
                c = s[k] * (1 - a - b)
                pts.append((1 - a - b - c, a, b, c))
                wts.append(wu[i] * wv[j] * ws[k])
    return np.array(pts), np.array(wts)


# ------------------------------------------------------------------ P2 basis

EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


def p2_basis(lam):
    """Values (nq, 10) and barycentric derivatives (nq, 10, 4) of the P2 basis."""
    nq = len(lam)
    val = np.zeros((nq, 10))
    dlam = np.zeros((nq, 10, 4))
    for i in range(4):
        val[:, i] = lam[:, i] * (2 * lam[:, i] - 1)
        dlam[:, i, i] = 4 * lam[:, i] - 1
    for e, (i, j) in enumerate(EDGES):
        val[:, 4 + e] = 4 * lam[:, i] * lam[:, j]
        dlam[:, 4 + e, i] = 4 * lam[:, j]
        dlam[:, 4 + e, j] = 4 * lam[:, i]
    return val, dlam


def _coo(rows, cols, vals, shape):
    return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape)


# --------------------------------------------------------------------- spaces

@dataclass(frozen=True)
class RigidBody:
    """Ball-shaped body with unit mass (normalized) and uniform density inertia."""

    radius: float
    q0: tuple = (0.0, 0.0, 0.0)
    mass: float = 1.0

    @property
    def inertia(self) -> np.ndarray:
        return 8.0 * np.pi / 15.0 * self.radius**5 * np.eye(3)


class TaylorHoodSpace:
    """P2 velocity, P1 pressure and quadrature data on a shell mesh."""

    def __init__(self, mesh: ShellMesh, rule: str = "14"):
        self.mesh = mesh
        tets = mesh.tets
        nv = mesh.nvertices
        edges = np.sort(tets[:, EDGES].reshape(-1, 2), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        inv = inv.reshape(len(tets), 6)
        self.nvertices = nv
        self.edges = uniq
        self.elem_dofs = np.concatenate([tets, nv + inv], axis=1)
        self.nodes = np.concatenate([mesh.vertices, mesh.vertices[uniq].mean(axis=1)])
        vt = mesh.vertex_tags()
        et = np.where(vt[uniq[:, 0]] == vt[uniq[:, 1]], vt[uniq[:, 0]], 0)
        self.node_tags = np.concatenate([vt, et])
        self._set_quadrature(rule)

    # ---------------------------------------------------------------- sizes
    @property
    def nnodes(self) -> int:
        return len(self.nodes)

    @property
    def npressure(self) -> int:
        return self.nvertices

    def _set_quadrature(self, rule):
        if rule == "14":
            lam, w = tet_rule_14()
        else:
            lam, w = tet_rule_collapsed(int(rule))
        self.rule = rule
        mesh = self.mesh
        P = mesh.vertices[mesh.tets]                       # (ne, 4, 3)
        J = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0], P[:, 3] - P[:, 0]], axis=2)
        det = np.linalg.det(J)
        Jinv = np.linalg.inv(J)                            # rows = grad lambda_1..3
        glam = np.concatenate([-Jinv.sum(axis=1, keepdims=True), Jinv], axis=1)  # (ne, 4, 3)
        val, dlam = p2_basis(lam)
        ne, nq = len(mesh.tets), len(w)
        self.nq_elem = nq
        self.qp = np.einsum("qk,nki->nqi", lam, P).reshape(-1, 3)
        self.qw = (det[:, None] * w[None, :]).ravel()
        self.elem_volume = det / 6.0
        self.phi = val                                     # (nq, 10)
        self.dphi = np.einsum("qak,nki->nqai", dlam, glam)  # (ne, nq, 10, 3)
        self.lam = lam
        self.glam = glam                                   # P1 gradients (ne, 4, 3)
        rows = np.repeat(np.arange(ne * nq), 10).reshape(ne, nq, 10)
        cols = np.broadcast_to(self.elem_dofs[:, None, :], (ne, nq, 10))
        shape = (ne * nq, self.nnodes)
        self.E0 = _coo(rows, cols, np.broadcast_to(val, (ne, nq, 10)), shape)
        self.E1 = [_coo(rows, cols, self.dphi[..., d], shape) for d in range(3)]
        rows4 = np.repeat(np.arange(ne * nq), 4).reshape(ne, nq, 4)
        cols4 = np.broadcast_to(mesh.tets[:, None, :], (ne, nq, 4))
        self.L0 = _coo(rows4, cols4, np.broadcast_to(lam, (ne, nq, 4)), (ne * nq, self.nvertices))
        self.L1 = [_coo(rows4, cols4, np.broadcast_to(glam[:, None, :, d], (ne, nq, 4)),
                        (ne * nq, self.nvertices)) for d in range(3)]

    @property
    def nquad(self) -> int:
        return len(self.qw)

    # ------------------------------------------------------------ evaluation
    def eval_values(self, U):
        return self.E0 @ np.asarray(U).reshape(self.nnodes, 3)

    def eval_grad(self, U):
        """(nq, 3, 3) with [q, i, j] = d_j U_i."""
        U = np.asarray(U).reshape(self.nnodes, 3)
        return np.stack([E @ U for E in self.E1], axis=2)

    def eval_features(self, U):
        U = np.asarray(U).reshape(self.nnodes, 3)
        return np.concatenate([self.eval_grad(U).reshape(-1, 9), self.E0 @ U], axis=1)

    def features_transpose(self, R):
        """Adjoint of eval_features: (nq, 12) weights -> nodal (nnodes, 3)."""
        out = np.zeros((self.nnodes, 3))
        for p in range(3):
            acc = self.E0.T @ R[:, 9 + p]
            for m in range(3):
                acc = acc + self.E1[m].T @ R[:, 3 * p + m]
            out[:, p] = acc
        return out

    def apply_form(self, C, U, weights=None):
        """Nodal residual of sum_q w f_psi^T C f_U for all test functions psi."""
        w = self.qw if weights is None else weights
        f = self.eval_features(U)
        return self.features_transpose(w[:, None] * np.einsum("qij,qj->qi", C, f))

    def evaluate_form(self, C, U, V) -> float:
        return float(np.einsum("q,qi,qij,qj->", self.qw, self.eval_features(V), C,
                               self.eval_features(U)))

    def form_matrix(self, C, chunk: int = 2000) -> sp.csr_matrix:
        """Assembled (3 nnodes)^2 matrix of a 12x12 form tensor (tests, small meshes)."""
        ne, nq = len(self.elem_dofs), self.nq_elem
        Cq = C.reshape(ne, nq, 12, 12)
        rows_all, cols_all, vals_all = [], [], []
        for s in range(0, ne, chunk):
            e = slice(s, min(ne, s + chunk))
            d = self.dphi[e]                                   # (c, nq, 10, 3)
            c = d.shape[0]
            Phi = np.zeros((c, nq, 12, 10, 3))
            for p in range(3):
                for m in range(3):
                    Phi[:, :, 3 * p + m, :, p] = d[..., m]
                Phi[:, :, 9 + p, :, p] = self.phi[None]
            Phi = Phi.reshape(c, nq, 12, 30)
            w = self.qw.reshape(ne, nq)[e]
            Ke = np.einsum("cq,cqia,cqij,cqjb->cab", w, Phi, Cq[e], Phi)
            dofs = (3 * self.elem_dofs[e][:, :, None] + np.arange(3)).reshape(c, 30)
            rows_all.append(np.repeat(dofs, 30, axis=1).ravel())
            cols_all.append(np.tile(dofs, (1, 30)).ravel())
            vals_all.append(Ke.ravel())
        n = 3 * self.nnodes
        return sp.csr_matrix((np.concatenate(vals_all), (np.concatenate(rows_all),
                                                          np.concatenate(cols_all))), shape=(n, n))

    def eval_pressure(self, P):
        return self.L0 @ P

    def eval_pressure_grad(self, P):
        return np.stack([L @ P for L in self.L1], axis=1)

    # ------------------------------------------------------------ matrices
    @cached_property
    def scalar_mass(self) -> sp.csr_matrix:
        ne, nq = len(self.elem_dofs), self.nq_elem
        w = self.qw.reshape(ne, nq)
        Me = np.einsum("nq,qa,qb->nab", w, self.phi, self.phi)
        r = np.repeat(self.elem_dofs, 10, axis=1)
        c = np.tile(self.elem_dofs, (1, 10))
        return _coo(r, c, Me, (self.nnodes, self.nnodes))

    @cached_property
    def mass(self) -> sp.csr_matrix:
        """Vector L2 mass on flat velocity DOFs."""
        return sp.kron(self.scalar_mass, sp.identity(3), format="csr")

    @cached_property
    def viscous(self) -> sp.csr_matrix:
        """2 int D(U):D(psi):  K[(a,n),(b,m)] = delta_nm grad phi_a.grad phi_b + d_m phi_a d_n phi_b."""
        ne, nq = len(self.elem_dofs), self.nq_elem
        w = self.qw.reshape(ne, nq)
        d = self.dphi
        S = np.einsum("eq,eqai,eqbi->eab", w, d, d)
        X = np.einsum("eq,eqam,eqbn->eambn", w, d, d)          # int d_m phi_a d_n phi_b
        Ke = np.einsum("eab,ij->eaibj", S, np.eye(3)) + np.einsum("eambn->eanbm", X)
        dofs = (3 * self.elem_dofs[:, :, None] + np.arange(3)).reshape(ne, 30)
        r = np.repeat(dofs, 30, axis=1)
        c = np.tile(dofs, (1, 30))
        return _coo(r, c, Ke.reshape(ne, 30, 30), (3 * self.nnodes, 3 * self.nnodes))

    @cached_property
    def divergence(self) -> sp.csr_matrix:
        """B[k, (a, n)] = - int lambda_k d_n phi_a  (so B U = - int q div U)."""
        ne, nq = len(self.elem_dofs), self.nq_elem
        w = self.qw.reshape(ne, nq)
        Be = -np.einsum("eq,qk,eqac->ekac", w, self.lam, self.dphi).reshape(ne, 4, 30)
        dofs = (3 * self.elem_dofs[:, :, None] + np.arange(3)).reshape(ne, 30)
        r = np.repeat(self.mesh.tets, 30, axis=1)
        c = np.tile(dofs, (1, 4))
        return _coo(r, c, Be, (self.nvertices, 3 * self.nnodes))

    @cached_property
    def pressure_mean(self) -> np.ndarray:
        """m_k = int lambda_k."""
        return self.L0.T @ self.qw

    @cached_property
    def pressure_mass(self) -> sp.csr_matrix:
        ne, nq = len(self.elem_dofs), self.nq_elem
        w = self.qw.reshape(ne, nq)
        Me = np.einsum("nq,qa,qb->nab", w, self.lam, self.lam)
        r = np.repeat(self.mesh.tets, 4, axis=1)
        c = np.tile(self.mesh.tets, (1, 4))
        return _coo(r, c, Me, (self.nvertices, self.nvertices))

    def interpolate(self, f) -> np.ndarray:
        """Nodal interpolant of a callable x -> (n, 3)."""
        return np.asarray(f(self.nodes), dtype=float).reshape(self.nnodes, 3)

    def volume(self) -> float:
        return float(self.qw.sum())


class CoupledSpace:
    """Velocity DOFs tied to the rigid unknowns (A, Omega) on the body boundary."""

    def __init__(self, th: TaylorHoodSpace, body: RigidBody):
        self.th = th
        self.body = body
        tags = th.node_tags
        self.free = np.flatnonzero(tags == 0)
        self.body_nodes = np.flatnonzero(tags == BODY)
        self.wall_nodes = np.flatnonzero(tags == OUTER)
        nf = len(self.free)
        self.nfree = 3 * nf
        self.nz = 3 * nf + 6
        rows, cols, vals = [], [], []
        fr = (3 * self.free[:, None] + np.arange(3)).ravel()
        rows.append(fr)
        cols.append(np.arange(3 * nf))
        vals.append(np.ones(3 * nf))
        r = th.nodes[self.body_nodes] - np.asarray(body.q0)
        for i in range(3):
            rows.append(3 * self.body_nodes + i)
            cols.append(np.full(len(r), 3 * nf + i))
            vals.append(np.ones(len(r)))
            # (Omega x r)_i = sum_j (-skew(r))_ij Omega_j
            for j in range(3):
                coef = np.zeros(len(r))
                k = 3 - i - j
                if i != j:
                    sign = 1.0 if (i, j, k) in ((0, 1, 2), (1, 2, 0), (2, 0, 1)) else -1.0
                    coef = sign * r[:, k]  # eps_ijk Omega_j r_k
                    rows.append(3 * self.body_nodes + i)
                    cols.append(np.full(len(r), 3 * nf + 3 + j))
                    vals.append(coef)
        self.T = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(3 * th.nnodes, self.nz))

    @property
    def sA(self):
        return slice(self.nfree, self.nfree + 3)

    @property
    def sOm(self):
        return slice(self.nfree + 3, self.nfree + 6)

    def expand(self, z) -> np.ndarray:
        """Nodal velocity (nnodes, 3) from coupled unknowns."""
        return (self.T @ z).reshape(self.th.nnodes, 3)

    def restrict(self, U_nodal, A, Omega) -> np.ndarray:
        z = np.zeros(self.nz)
        z[:self.nfree] = np.asarray(U_nodal).reshape(-1, 3)[self.free].ravel()
        z[self.sA] = A
        z[self.sOm] = Omega
        return z

    def split(self, z):
        return z[:self.nfree], z[self.sA], z[self.sOm]

    @cached_property
    def rigid_mass(self) -> sp.csr_matrix:
        """diag(0, m I, J) on z."""
        R = sp.lil_matrix((self.nz, self.nz))
        R[self.sA, self.sA] = self.body.mass * np.eye(3)
        R[self.sOm, self.sOm] = self.body.inertia
        return R.tocsr()

    def weighted_mass(self, J_cal=None) -> sp.csr_matrix:
        """Gram matrix of the weighted product int psi.phi + phi_a.psi_a + J phi_w.psi_w on z."""
        J = self.body.inertia if J_cal is None else np.asarray(J_cal, dtype=float)
        if not np.allclose(J, J.T) or np.linalg.eigvalsh(J).min() <= 0:
            raise ValueError("inertia must be symmetric positive definite")
        R = sp.lil_matrix((self.nz, self.nz))
        R[self.sA, self.sA] = self.body.mass * np.eye(3)
        R[self.sOm, self.sOm] = J
        return (self.T.T @ self.th.mass @ self.T + R.tocsr()).tocsr()

    def extension_field(self, A, Omega, cutoff: CutoffField) -> np.ndarray:
        """Nodal b_{A,Omega} = curl(zeta psi) around the body at rest."""
        return transport_field(self.th.nodes, np.asarray(self.body.q0, dtype=float), A, Omega,
                               cutoff, with_gradient=False)


def weighted_inner(phi, phi_a, phi_w, psi, psi_a, psi_w, mass, J_cal) -> float:
    """((phi, phi_a, phi_w), (psi, psi_a, psi_w)) with a fluid mass matrix."""
    J = np.asarray(J_cal, dtype=float)
    if not np.allclose(J, J.T) or np.linalg.eigvalsh(J).min() <= 0:
        raise ValueError("inertia must be symmetric positive definite")
    fl = float(np.ravel(psi) @ (mass @ np.ravel(phi)))
    return fl + float(np.dot(phi_a, psi_a)) + float(np.dot(J @ np.asarray(phi_w), psi_w))


# ------------------------------------------------------------------ Stokes

def stokes_dirichlet_solve(th: TaylorHoodSpace, load, boundary_values=None):
    """Steady Stokes  -div(2 D u) + grad p = f  with Dirichlet data on both spheres.

    ``load`` is the nodal right-hand side (nnodes, 3) (already integrated);
    ``boundary_values`` nodal values used on boundary nodes (default 0).
    Returns (U (nnodes, 3), P (nvertices,)) with mean-zero pressure.
    """
    n = 3 * th.nnodes
    bnd = np.flatnonzero(th.node_tags != 0)
    bdofs = (3 * bnd[:, None] + np.arange(3)).ravel()
    free = np.setdiff1d(np.arange(n), bdofs)
    g = np.zeros(n)
    if boundary_values is not None:
        g[bdofs] = np.asarray(boundary_values).reshape(-1)[bdofs]
    K, B = th.viscous, th.divergence
    rhs_u = np.asarray(load).reshape(-1) - K @ g
    rhs_p = -(B @ g)
    Kff = K[free][:, free]
    Bf = B[:, free]
    m = th.pressure_mean[:, None]
    S = sp.bmat([[Kff, Bf.T, None], [Bf, None, sp.csr_matrix(m)], [None, sp.csr_matrix(m.T), None]],
                format="csc")
    rhs = np.concatenate([rhs_u[free], rhs_p, [0.0]])
    sol = spla.splu(S).solve(rhs)
    u = g.copy()
    u[free] = sol[:len(free)]
    P = sol[len(free):len(free) + th.nvertices]
    return u.reshape(th.nnodes, 3), P


def load_vector(th: TaylorHoodSpace, f_at_qp) -> np.ndarray:
    """Nodal int f . phi_a e_n from values at quadrature points (nq, 3)."""
    return th.E0.T @ (th.qw[:, None] * f_at_qp)


def inf_sup_estimate(th: TaylorHoodSpace) -> float:
    """sqrt of the smallest non-zero eigenvalue of B K^-1 B^T against the P1 mass
    (all-wall no-slip velocity space)."""
    n = 3 * th.nnodes
    bnd = np.flatnonzero(th.node_tags != 0)
    bdofs = (3 * bnd[:, None] + np.arange(3)).ravel()
    free = np.setdiff1d(np.arange(n), bdofs)
    K = th.viscous[free][:, free].tocsc()
    B = th.divergence[:, free]
    lu = spla.splu(K)
    X = lu.solve(B.T.toarray())
    S = B @ X
    S = 0.5 * (S + S.T)
    Mp = th.pressure_mass.toarray()
    import scipy.linalg as sla
    ev = sla.eigh(S, Mp, eigvals_only=True)
    return float(np.sqrt(max(ev[1], 0.0)))
