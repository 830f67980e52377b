"""Transformed differential operators on the reference fluid domain.

Every linear operator here is stored as a *coefficient pack*: arrays
``(C2, C1, C0)`` at sample points with

    (Op U)_i = C2[j, k] d_j d_k U_i + C1[i, l, j] d_l U_j + C0[i, j] U_j.

The operators with differentiated coefficients (``L_m``, ``M_m``, ...) are the
same contraction with ``d^m/dt^m`` of the pack, so the Leibniz rule holds by
construction.  Fields are passed as jets: values, gradients ``grad[i, j] = d_j U_i``
and Hessians ``hess[i, j, k] = d_j d_k U_i``.

Weak forms use a 12-entry feature vector per point: ``f[3 p + m] = d_m U_p``
and ``f[9 + n] = U_n``.  A bilinear form is a (12, 12) tensor ``C`` with
``a(U, psi) = sum_q w_q f_psi^T C f_U``.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .transform import TransformData, time_derivatives

EYE = np.eye(3)


@dataclass
class Jet:
    """Point samples of a vector field and its first two derivatives."""

    val: np.ndarray
    grad: np.ndarray
    hess: np.ndarray | None = None
    t: float | None = None

    def __add__(self, other):
        return Jet(self.val + other.val, self.grad + other.grad,
                   None if self.hess is None or other.hess is None else self.hess + other.hess, self.t)

    def scale(self, c):
        return Jet(c * self.val, c * self.grad, None if self.hess is None else c * self.hess, self.t)

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, 3)), np.zeros((n, 3, 3)), np.zeros((n, 3, 3, 3)))


@dataclass
class Pack:
    """Coefficients of a second-order (or lower) linear operator at sample points."""

    C0: np.ndarray
    C1: np.ndarray | None = None
    C2: np.ndarray | None = None

    def apply(self, U: Jet) -> np.ndarray:
        out = np.einsum("nij,nj->ni", self.C0, U.val)
        if self.C1 is not None:
            out += np.einsum("nilj,njl->ni", self.C1, U.grad)
        if self.C2 is not None:
            if U.hess is None:
                raise ValueError("second-order operator needs a Hessian")
            out += np.einsum("njk,nijk->ni", self.C2, U.hess)
        return out

    def arrays(self):
        return [a for a in (self.C0, self.C1, self.C2)]

    @classmethod
    def from_arrays(cls, arrs):
        return cls(*arrs)


def _require(td: TransformData, *names):
    missing = [n for n in names if getattr(td, n, None) is None]
    if missing:
        raise ValueError(f"transform data lacks {', '.join(missing)}")


# ----------------------------------------------------------------- packs

def pack_L(td: TransformData) -> Pack:
    """Transformed Laplacian.  The zero-order term sums over all indices."""
    _require(td, "dginv", "dGam")
    gi, Gam, dgi, dGam = td.ginv, td.Gam, td.dginv, td.dGam
    div_gi = np.einsum("nkkl->nl", dgi)  # d_k g^{kl}
    C2 = gi
    C1 = (np.einsum("ij,nl->nilj", EYE, div_gi)
          + 2.0 * np.einsum("nkl,nijk->nilj", gi, Gam))
    C0 = (np.einsum("nkkl,nijl->nij", dgi, Gam)
          + np.einsum("nkl,nkijl->nij", gi, dGam)
          + np.einsum("nkl,nmjl,nikm->nij", gi, Gam, Gam))
    return Pack(C0, C1, C2)


def pack_M(td: TransformData) -> Pack:
    C1 = np.einsum("ij,nl->nilj", EYE, td.Ydot)
    C0 = (np.einsum("nijk,nk->nij", td.Gam, td.Ydot)
          + np.einsum("nik,nkj->nij", td.Finv, td.dXdot))
    return Pack(C0, C1)


def pack_N(U_tilde, td: TransformData) -> Pack:
    """Linear-in-U part of the convection with frozen advecting field ``U_tilde``."""
    Ut = np.asarray(U_tilde, dtype=float)
    C1 = np.einsum("ij,nl->nilj", EYE, Ut)
    C0 = np.einsum("nijk,nj->nik", td.Gam, Ut)
    return Pack(C0, C1)


def pack_laplace(n: int) -> Pack:
    return Pack(np.zeros((n, 3, 3)), np.zeros((n, 3, 3, 3)),
                np.broadcast_to(EYE, (n, 3, 3)).copy())


def pack_time_derivatives(packs, dt: float, l: int):
    """[d^1 pack, ..., d^l pack] at the middle of an odd number of packs."""
    packs = list(packs)
    nslots = len(packs[0].arrays())
    out = [[None] * nslots for _ in range(l)]
    for s in range(nslots):
        if packs[0].arrays()[s] is None:
            continue
        ders = time_derivatives([p.arrays()[s] for p in packs], dt, l)
        for m in range(l):
            out[m][s] = ders[m]
    return [Pack.from_arrays(o) for o in out]


# ------------------------------------------------------- strong operators

def op_L(U: Jet, td: TransformData) -> np.ndarray:
    return pack_L(td).apply(U)


def op_M(U: Jet, td: TransformData) -> np.ndarray:
    return pack_M(td).apply(U)


def op_N(U: Jet, U_tilde, td: TransformData) -> np.ndarray:
    if isinstance(U_tilde, Jet):
        if U_tilde.t is not None and U.t is not None and abs(U_tilde.t - U.t) > 1e-12:
            raise ValueError("convecting field and velocity are given at different times")
        U_tilde = U_tilde.val
    return pack_N(U_tilde, td).apply(U)


def op_G(gradP, td: TransformData) -> np.ndarray:
    """g^{ij} d_j P."""
    return np.einsum("nij,nj->ni", td.ginv, np.asarray(gradP, dtype=float))


def laplacian(U: Jet) -> np.ndarray:
    return np.einsum("nijj->ni", U.hess)


def rhs_F(U: Jet, gradP, U_tilde, td: TransformData) -> np.ndarray:
    """(L - Delta) U - M U - N U - (G - grad) P."""
    gradP = np.asarray(gradP, dtype=float)
    return (op_L(U, td) - laplacian(U) - op_M(U, td) - op_N(U, U_tilde, td)
            - (op_G(gradP, td) - gradP))


def rhs_G_H(A, Omega, Omega_tilde, J_cal):
    """G = -Omega~ x A, H = -Omega~ x (J Omega)."""
    Ot = np.asarray(Omega_tilde, dtype=float)
    G = -np.cross(Ot, np.asarray(A, dtype=float))
    H = -np.cross(Ot, np.asarray(J_cal, dtype=float) @ np.asarray(Omega, dtype=float))
    return G, H


def op_F_l(U_ders, gradP_ders, pack_ders, l: int) -> np.ndarray:
    """F_l = sum_p C(l,p) [L_{l-p} - M_{l-p} - N_{l-p}](d^p U) - G_{l-p}(d^p P).

    ``U_ders[p]`` is the jet of d^p U/dt^p and ``gradP_ders[p]`` the gradient of
    d^p P for p < l.  ``pack_ders[name][m-1]`` is the m-th time derivative of the
    pack for ``name`` in {'L', 'M', 'N'}; ``pack_ders['ginv'][m-1]`` that of g^{-1}.
    """
    for key in ("L", "M", "N", "ginv"):
        if key not in pack_ders or len(pack_ders[key]) < l:
            raise ValueError(f"missing time-derivative cache for {key!r} up to order {l}")
    if len(U_ders) < l or len(gradP_ders) < l:
        raise ValueError(f"need time derivatives of U and P up to order {l - 1}")
    out = 0.0
    for p in range(l):
        m = l - p
        c = comb(l, p)
        term = (pack_ders["L"][m - 1].apply(U_ders[p]) - pack_ders["M"][m - 1].apply(U_ders[p])
                - pack_ders["N"][m - 1].apply(U_ders[p])
                - np.einsum("nij,nj->ni", pack_ders["ginv"][m - 1], gradP_ders[p]))
        out = out + c * term
    return out


def rhs_G_H_l(A_ders, JOmega_ders, Omega_tilde_ders, l: int):
    """G_l = -sum_p C(l,p) d^{l-p} Omega~ x d^p A, H_l likewise with J Omega."""
    G = np.zeros(3)
    H = np.zeros(3)
    for p in range(l):
        c = comb(l, p)
        G -= c * np.cross(Omega_tilde_ders[l - p], A_ders[p])
        H -= c * np.cross(Omega_tilde_ders[l - p], JOmega_ders[p])
    return G, H


def pressure_cancellation(gradP, g, dg_dt, ginv, dginv_dt) -> float:
    """max |G d_t(G^-1) grad P + d_t G G^-1 grad P| over points."""
    gradP = np.asarray(gradP, dtype=float)
    r = (np.einsum("nij,njk,nk->ni", g, dginv_dt, gradP)
         + np.einsum("nij,njk,nk->ni", dg_dt, ginv, gradP))
    return float(np.abs(r).max()) if r.size else 0.0


def pressure_cancellation_td(gradP, td: TransformData) -> float:
    """Residual with exact (variational) time derivatives of the metric."""
    dginv = -np.einsum("nia,nab,nbj->nij", td.ginv, td.dgdt, td.ginv)
    return pressure_cancellation(gradP, td.g, td.dgdt, td.ginv, dginv)


# -------------------------------------------------------------- weak forms

def features(U: Jet) -> np.ndarray:
    n = len(U.val)
    return np.concatenate([U.grad.reshape(n, 9), U.val], axis=1)


def _christoffel_lift(Gam):
    """P with D U = P f: D[p, m] = d_m U_p + Gamma^p_mn U_n."""
    n = len(Gam)
    P = np.zeros((n, 9, 12))
    P[:, :, :9] = np.eye(9)
    P[:, :, 9:] = Gam.reshape(n, 9, 3)
    return P


def form_A(td: TransformData) -> np.ndarray:
    """Weak transformed viscous form (G-weighted transformed Laplacian, negated).

    a(U, psi) = int g_pq g^ms DU[p,m] Dpsi[q,s] + DU[p,q] Dpsi[q,p]; at the
    identity this is int 2 D(U):D(psi).
    """
    g, gi = td.g, td.ginv
    n = len(g)
    K = np.einsum("npq,nms->nqspm", g, gi).reshape(n, 9, 9)
    K = K + np.einsum("ps,mq->qspm", EYE, EYE).reshape(1, 9, 9)
    P = _christoffel_lift(td.Gam)
    return np.swapaxes(P, 1, 2) @ (K @ P)


def form_A_expanded(td: TransformData) -> np.ndarray:
    """The same form assembled term by term in the expanded index notation.

    The fourth group uses g_km (the index pairing that makes the expansion
    consistent with the compact covariant form).
    """
    g, gi, G = td.g, td.ginv, td.Gam
    n = len(g)
    C = np.zeros((n, 12, 12))
    # rows: psi features d_l psi_k -> 3k + l, psi_k -> 9 + k; columns likewise for U (i, j)
    t1 = np.einsum("jk,il->klij", EYE, EYE)[None] + np.einsum("nik,njl->nklij", g, gi)
    C[:, :9, :9] = t1.reshape(n, 9, 9)
    t2 = np.einsum("nmkl,nim,njl->nkij", G, g, gi) + np.einsum("njik->nkij", G)
    C[:, 9:, :9] = t2.reshape(n, 3, 9)
    t3 = np.einsum("nmij,nkm,njl->nkli", G, g, gi) + np.einsum("nlik->nkli", G)
    C[:, :9, 9:] = t3.reshape(n, 9, 3)
    t4 = (np.einsum("nmij,npkl,nmp,njl->nki", G, G, g, gi)
          + np.einsum("nlij,njkl->nki", G, G))
    C[:, 9:, 9:] = t4
    return C


def form_M(td: TransformData) -> np.ndarray:
    """int g_ik U_i psi_k."""
    n = len(td.g)
    C = np.zeros((n, 12, 12))
    C[:, 9:, 9:] = td.g
    return C


def form_first_order(pack: Pack, td: TransformData) -> np.ndarray:
    """int G (Op U) . psi for a first-order pack."""
    n = len(td.g)
    C = np.zeros((n, 12, 12))
    if pack.C1 is not None:
        C[:, 9:, :9] = np.einsum("nki,nilj->nkjl", td.g, pack.C1).reshape(n, 3, 9)
    C[:, 9:, 9:] = np.einsum("nki,nij->nkj", td.g, pack.C0)
    return C


def form_convective(U_tilde, td: TransformData) -> np.ndarray:
    """int G (M U + N(U~, U)) . psi."""
    pm, pn = pack_M(td), pack_N(U_tilde, td)
    return form_first_order(Pack(pm.C0 + pn.C0, pm.C1 + pn.C1), td)


def form_transport_skew(V, td: TransformData) -> np.ndarray:
    """Skew part of int G (nabla_V U) . psi, nabla_V U^i = V^l d_l U^i + Gamma^i_lj V^l U^j.

    Equals form_convective's transport when div V = 0 and V vanishes in the normal
    direction, and is exactly skew otherwise, so U . (form U) = 0 for every U.
    """
    C = form_first_order(pack_N(V, td), td)
    return 0.5 * (C - np.swapaxes(C, 1, 2))


def form_cross_mass(F_new, F_old) -> np.ndarray:
    """int (F_old U) . (F_new psi): the lagged half of the time difference of F U."""
    n = len(F_new)
    C = np.zeros((n, 12, 12))
    C[:, 9:, 9:] = np.einsum("nik,nij->nkj", F_new, F_old)
    return C


def form_frame_rate(td: TransformData) -> np.ndarray:
    """int (F U) . (dXdot psi): what d/dt (F U) adds beyond F dU/dt, tested against F psi."""
    n = len(td.F)
    C = np.zeros((n, 12, 12))
    C[:, 9:, 9:] = np.einsum("nik,nij->nkj", td.dXdot, td.F)
    return C


def form_pressure(n: int) -> np.ndarray:
    """Coefficient of -int P div psi (rows: psi features)."""
    c = np.zeros((n, 12))
    c[:, [0, 4, 8]] = -1.0
    return c


def evaluate_form(C, f_psi, f_U, weights) -> float:
    return float(np.einsum("n,ni,nij,nj->", weights, f_psi, C, f_U))


def weak_form_GL(U: Jet, psi: Jet, td: TransformData, weights) -> float:
    """<G L U, psi> as the quadrature sum of the transformed viscous form."""
    return evaluate_form(form_A(td), features(psi), features(U), weights)
