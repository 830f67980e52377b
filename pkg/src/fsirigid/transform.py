"""Volume-preserving change of variables between the reference fluid domain and
the physical one.

``X(t, .)`` is the flow of the divergence-free transport field
``w = curl(zeta * psi)`` with ``psi = a x r / 2 - |r|^2 omega / 2``, ``r = x - q``.
``w`` is the rigid velocity where the cutoff ``zeta`` equals one and vanishes
where it is zero, so ``X`` is rigid near the body, the identity near the wall and
``det grad X = 1``.  Metric tensors and Christoffel symbols are sampled at
label points from ``grad X`` (variational equation) and finite differences on a
small label stencil.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .rigid_motion import RigidState, RigidTrajectory


class GapHypothesisViolated(RuntimeError):
    """The body (or the support of the transform) came too close to the wall."""


# --------------------------------------------------------------------------- cutoff

def _smoothstep5(s):
    return s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


@dataclass(frozen=True)
class CutoffField:
    """Radial quintic cutoff around the body centre: 1 for rho <= r_in, 0 for rho >= r_out."""

    r_in: float
    r_out: float
    body_radius: float
    domain_radius: float

    def profile(self, rho):
        """(chi, chi', chi'') of the radial profile."""
        rho = np.asarray(rho, dtype=float)
        L = self.r_out - self.r_in
        s = np.clip((rho - self.r_in) / L, 0.0, 1.0)
        chi = 1.0 - _smoothstep5(s)
        d1 = -30.0 * s**2 * (1.0 - s) ** 2 / L
        d2 = -60.0 * s * (1.0 - s) * (1.0 - 2.0 * s) / L**2
        return chi, d1, d2

    def __call__(self, x, center):
        x = np.asarray(x, dtype=float)
        rho = np.linalg.norm(x - np.asarray(center, dtype=float), axis=-1)
        return self.profile(rho)[0]

    def gradient(self, x, center):
        r = np.asarray(x, dtype=float) - np.asarray(center, dtype=float)
        rho = np.linalg.norm(r, axis=-1)
        _, d1, _ = self.profile(rho)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = np.where(rho[..., None] > 0, d1[..., None] * r / rho[..., None], 0.0)
        return g

    @property
    def delta_in(self) -> float:
        return self.r_in - self.body_radius

    @property
    def delta_out(self) -> float:
        return self.domain_radius - self.r_out


def build_cutoff(body_radius: float, domain_radius: float, delta_in: float,
                 delta_out: float) -> CutoffField:
    """Cutoff equal to one within ``delta_in`` of the body, zero within ``delta_out`` of the wall."""
    if not (delta_in > 0 and delta_out > 0):
        raise ValueError("cutoff shell widths must be positive")
    r_in = body_radius + delta_in
    r_out = domain_radius - delta_out
    if not r_in < r_out:
        raise ValueError(
            f"cutoff transition shells overlap (body+delta_in={r_in} >= wall-delta_out={r_out}); "
            "the body-wall gap hypothesis cannot be met")
    return CutoffField(r_in, r_out, body_radius, domain_radius)


# ------------------------------------------------------------------ transport field

def _skew_batch(v):
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _cross(u, v):
    """np.cross for (n, 3) arrays (or one side a 3-vector), without the generic overhead."""
    u0, u1, u2 = u[..., 0], u[..., 1], u[..., 2]
    v0, v1, v2 = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([u1 * v2 - u2 * v1, u2 * v0 - u0 * v2, u0 * v1 - u1 * v0], axis=-1)


def transport_field(x, q, a, omega, cutoff: CutoffField, with_gradient: bool = True):
    """w(x) = curl(zeta psi) and optionally grad w (``[i, j] = d w_i / d x_j``)."""
    x = np.asarray(x, dtype=float)
    q = np.asarray(q, dtype=float)
    a = np.asarray(a, dtype=float)
    omega = np.asarray(omega, dtype=float)
    shape = x.shape[:-1]
    x = x.reshape(-1, 3)
    r = x - q
    rho = np.sqrt(np.einsum("ni,ni->n", r, r))
    w = np.zeros_like(x)
    gw = np.zeros((len(x), 3, 3)) if with_gradient else None

    inner = rho <= cutoff.r_in
    if inner.any():
        w[inner] = a + _cross(omega, r[inner])
        if with_gradient:
            gw[inner] = _skew_batch(omega)
    mid = (~inner) & (rho < cutoff.r_out)
    if mid.any():
        rm, pm = r[mid], rho[mid]
        chi, d1, d2 = cutoff.profile(pm)
        rhat = rm / pm[:, None]
        gz = d1[:, None] * rhat
        v = a + _cross(omega, rm)
        psi = 0.5 * _cross(a, rm) - 0.5 * (pm**2)[:, None] * omega
        w[mid] = chi[:, None] * v + _cross(gz, psi)
        if with_gradient:
            # skew(psi) H and skew(grad zeta) grad psi written out with
            # skew(u) skew(v) = v u^T - (u . v) I
            # gz = d1 rhat and rm = rho rhat merge the rank-one terms
            c = d1 / pm
            b = (d2 - c)[:, None] * _cross(psi, rhat) + (d1 * pm)[:, None] * _cross(rhat, omega)
            g = (v + 0.5 * a)[:, :, None] * gz[:, None, :] - b[:, :, None] * rhat[:, None, :]
            g += _skew_batch(chi[:, None] * omega - c[:, None] * psi)
            diag = -0.5 * (gz @ a)
            g[:, 0, 0] += diag
            g[:, 1, 1] += diag
            g[:, 2, 2] += diag
            gw[mid] = g
    w = w.reshape(shape + (3,))
    if with_gradient:
        return w, gw.reshape(shape + (3, 3))
    return w


def transport_velocity(t, x, state: RigidState, cutoff: CutoffField):
    """Divergence-free transport velocity at physical points ``x`` for a rigid state."""
    return transport_field(x, state.q, state.a, state.omega, cutoff, with_gradient=False)


def check_gap(q, q0, cutoff: CutoffField, delta: float | None = None):
    """Raise if the transform support (or the body, for ``delta``) reaches the wall."""
    off = float(np.linalg.norm(np.asarray(q) - np.asarray(q0)))
    if off + cutoff.r_out >= cutoff.domain_radius:
        raise GapHypothesisViolated(
            f"gap hypothesis violated: transform support reaches the wall (body offset {off:.4g})")
    if delta is not None:
        gap = cutoff.domain_radius - off - cutoff.body_radius
        if gap < delta:
            raise GapHypothesisViolated(
                f"gap hypothesis violated: body-wall gap {gap:.4g} < delta {delta:.4g}")


# ---------------------------------------------------------------------- flow map

MAX_SUBSTEP = 5e-3


def flow_step(X, F, traj: RigidTrajectory, n: int, cutoff: CutoffField, substeps=None):
    """Advance labels (positions ``X`` and gradients ``F``) over step n of ``traj`` (RK4).

    ``substeps=None`` picks enough RK4 substeps to keep them below ``MAX_SUBSTEP``.
    """
    t0, t1 = traj.t[n - 1], traj.t[n]
    if substeps is None:
        substeps = max(1, math.ceil((t1 - t0) / MAX_SUBSTEP - 1e-9))
    h = (t1 - t0) / substeps

    def rhs(s, Xs, Fs):
        q, _, a, om = traj.pose_in_step(n, s)
        w, gw = transport_field(Xs, q, a, om, cutoff)
        return w, gw @ Fs

    q_end = traj.q[n]
    check_gap(q_end, traj.q0, cutoff)
    # labels that stay outside the support over the whole step do not move
    shape = X.shape
    X = X.reshape(-1, 3)
    F = F.reshape(-1, 3, 3)
    reach = cutoff.r_out + np.linalg.norm(traj.A[n]) * (t1 - t0) * (1 + 1e-9) + 1e-12
    active = np.linalg.norm(X - traj.q[n - 1], axis=1) < reach
    X_all, F_all = X, F
    X, F = X[active], F[active]
    for k in range(substeps):
        s = t0 + k * h
        k1x, k1f = rhs(s, X, F)
        k2x, k2f = rhs(s + 0.5 * h, X + 0.5 * h * k1x, F + 0.5 * h * k1f)
        k3x, k3f = rhs(s + 0.5 * h, X + 0.5 * h * k2x, F + 0.5 * h * k2f)
        k4x, k4f = rhs(s + h, X + h * k3x, F + h * k3f)
        X = X + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        F = F + h / 6.0 * (k1f + 2 * k2f + 2 * k3f + k4f)
    X_all = X_all.copy()
    F_all = F_all.copy()
    X_all[active] = X
    F_all[active] = F
    return X_all.reshape(shape), F_all.reshape(shape[:-1] + (3, 3))


def flow_labels(labels, traj: RigidTrajectory, n: int, cutoff: CutoffField, substeps=None):
    """X(t_n, y) and grad X(t_n, y) for arbitrary labels, integrated from t_0."""
    X = np.array(labels, dtype=float)
    F = np.broadcast_to(np.eye(3), X.shape[:-1] + (3, 3)).copy()
    for k in range(1, n + 1):
        X, F = flow_step(X, F, traj, k, cutoff, substeps)
    return X, F


# ------------------------------------------------------------------------ stencils

_D1 = {-2: 1.0 / 12.0, -1: -2.0 / 3.0, 1: 2.0 / 3.0, 2: -1.0 / 12.0}
_D2 = {-2: -1.0 / 12.0, -1: 4.0 / 3.0, 0: -5.0 / 2.0, 1: 4.0 / 3.0, 2: -1.0 / 12.0}


class Stencil:
    """Fourth-order central-difference stencil of label offsets.

    ``kind='cross'`` (13 points) supports first and pure second derivatives,
    ``kind='cube'`` (125 points) also mixed second derivatives; ``kind='point'``
    is the bare label (no derivatives, no Christoffel symbols).
    """

    def __init__(self, h: float, kind: str = "cross"):
        if kind == "point":
            offs = [(0, 0, 0)]
        elif kind == "cross":
            offs = [(0, 0, 0)]
            for d in range(3):
                for s in (-2, -1, 1, 2):
                    o = [0, 0, 0]
                    o[d] = s
                    offs.append(tuple(o))
        elif kind == "cube":
            rng = range(-2, 3)
            offs = [(i, j, k) for i in rng for j in rng for k in rng]
        else:
            raise ValueError(f"unknown stencil kind {kind!r}")
        self.h = float(h)
        self.kind = kind
        self.offsets = np.array(offs, dtype=int)
        self.index = {o: i for i, o in enumerate(offs)}
        self.center = self.index[(0, 0, 0)]

    def __len__(self):
        return len(self.offsets)

    def points(self, base):
        """Label points, shape (n, m, 3)."""
        base = np.asarray(base, dtype=float)
        return base[:, None, :] + self.h * self.offsets[None, :, :]

    def _axis(self, d, s):
        o = [0, 0, 0]
        o[d] = s
        return self.index[tuple(o)]

    def d1(self, vals):
        """First derivatives: vals (n, m, ...) -> (n, 3, ...)."""
        vals = vals - vals[:, self.center:self.center + 1]
        out = np.zeros((vals.shape[0], 3) + vals.shape[2:])
        for d in range(3):
            for s, c in _D1.items():
                out[:, d] += c * vals[:, self._axis(d, s)]
        return out / self.h

    def d2(self, vals):
        """Second derivatives: vals (n, m, ...) -> (n, 3, 3, ...)."""
        vals = vals - vals[:, self.center:self.center + 1]
        out = np.zeros((vals.shape[0], 3, 3) + vals.shape[2:])
        for d in range(3):
            for s, c in _D2.items():
                out[:, d, d] += c * vals[:, self._axis(d, s)]
        if self.kind == "cube":
            for d in range(3):
                for e in range(d + 1, 3):
                    acc = 0.0
                    for s, c in _D1.items():
                        for u, b in _D1.items():
                            o = [0, 0, 0]
                            o[d], o[e] = s, u
                            acc = acc + c * b * vals[:, self.index[tuple(o)]]
                    out[:, d, e] = acc
                    out[:, e, d] = acc
        return out / self.h**2


# -------------------------------------------------------------- metric quantities

def metric_and_christoffel(F_stencil, stencil: Stencil, second: bool = False):
    """Metric tensors and Christoffel symbols at the stencil centres.

    ``F_stencil`` holds grad X on the stencil, shape (n, m, 3, 3).  Returns a dict
    with ``g`` (covariant), ``ginv`` (contravariant, from grad Y grad Y^T) and
    ``Gam[k, i, j]`` = Gamma^k_ij; with ``second=True`` also the spatial
    derivatives ``dginv[d, j, k]`` and ``dGam[d, k, i, j]`` (requires a cube stencil).
    """
    F_stencil = np.asarray(F_stencil, dtype=float)
    g_all = np.einsum("nmki,nmkj->nmij", F_stencil, F_stencil)
    F0 = F_stencil[:, stencil.center]
    Yg = np.linalg.inv(F0)
    g = g_all[:, stencil.center]
    ginv = np.einsum("nik,njk->nij", Yg, Yg)
    if stencil.kind == "point":
        n = len(F0)
        return dict(g=g, ginv=ginv, Gam=np.zeros((n, 3, 3, 3)), F=F0, Finv=Yg,
                    dg=np.zeros((n, 3, 3, 3)))
    dg = stencil.d1(g_all)  # [n, l, i, j] = d_l g_ij
    # T[n, l, i, j] = d_j g_il + d_i g_jl - d_l g_ij  (symmetric in i, j)
    T = (np.einsum("njil->nlij", dg) + np.einsum("nijl->nlij", dg) - dg)
    Gam = 0.5 * np.einsum("nkl,nlij->nkij", ginv, T)
    Gam = 0.5 * (Gam + np.swapaxes(Gam, 2, 3))
    out = dict(g=g, ginv=ginv, Gam=Gam, F=F0, Finv=Yg, dg=dg)
    if second:
        if stencil.kind != "cube":
            raise ValueError("second metric derivatives need a cube stencil")
        d2g = stencil.d2(g_all)  # [n, d, l, i, j]
        dginv = -np.einsum("nia,ndab,nbj->ndij", ginv, dg, ginv)
        dT = (np.einsum("ndjil->ndlij", d2g) + np.einsum("ndijl->ndlij", d2g) - d2g)
        dGam = 0.5 * (np.einsum("ndkl,nlij->ndkij", dginv, T)
                      + np.einsum("nkl,ndlij->ndkij", ginv, dT))
        out.update(dginv=dginv, dGam=dGam, d2g=d2g)
    return out


@dataclass
class TransformData:
    """Transform samples at label points for one time instant.

    Index conventions: ``F[i, j] = dX_i/dy_j``; ``Finv[i, k] = dY_i/dx_k`` at X(y);
    ``Gam[k, i, j] = Gamma^k_ij``; ``dXdot[k, j] = d/dy_j (dX_k/dt)``;
    ``dgdt`` is the exact time derivative of g from the variational equation.
    """

    t: float
    y: np.ndarray
    X: np.ndarray
    F: np.ndarray
    Finv: np.ndarray
    det: np.ndarray
    g: np.ndarray
    ginv: np.ndarray
    Gam: np.ndarray
    Xdot: np.ndarray
    Ydot: np.ndarray
    dXdot: np.ndarray
    dgdt: np.ndarray
    dginv: np.ndarray | None = None
    dGam: np.ndarray | None = None
    outside: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def npoints(self) -> int:
        return len(self.y)

    @classmethod
    def identity(cls, y, t: float = 0.0, second: bool = False) -> "TransformData":
        y = np.asarray(y, dtype=float)
        n = len(y)
        I = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
        z3 = np.zeros((n, 3))
        z33 = np.zeros((n, 3, 3))
        return cls(t=t, y=y, X=y.copy(), F=I, Finv=I.copy(), det=np.ones(n), g=I.copy(),
                   ginv=I.copy(), Gam=np.zeros((n, 3, 3, 3)), Xdot=z3, Ydot=z3.copy(),
                   dXdot=z33, dgdt=z33.copy(),
                   dginv=np.zeros((n, 3, 3, 3)) if second else None,
                   dGam=np.zeros((n, 3, 3, 3, 3)) if second else None)

    def is_identity(self) -> bool:
        return (np.array_equal(self.F, np.broadcast_to(np.eye(3), self.F.shape))
                and not self.Gam.any() and not self.Xdot.any())


def transform_data_from_flow(t, labels, X_st, F_st, stencil: Stencil, pose,
                             cutoff: CutoffField, second: bool = False,
                             domain_center=None) -> TransformData:
    """Assemble TransformData at stencil centres from flowed stencil labels."""
    q, Q, a, om = pose
    mc = metric_and_christoffel(F_st, stencil, second=second)
    X = X_st[:, stencil.center]
    F = mc["F"]
    Finv = mc["Finv"]
    w, gw = transport_field(X, q, a, om, cutoff)
    dXdot = gw @ F
    Ydot = -np.einsum("nik,nk->ni", Finv, w)
    S = gw + np.swapaxes(gw, 1, 2)
    dgdt = np.einsum("nki,nkl,nlj->nij", F, S, F)
    outside = 0
    if domain_center is not None:
        pts = stencil.points(labels)
        rad = np.linalg.norm(pts - np.asarray(domain_center), axis=-1)
        outside = int(np.any((rad > cutoff.domain_radius) | (rad < cutoff.body_radius), axis=1).sum())
    return TransformData(t=float(t), y=np.asarray(labels, dtype=float), X=X, F=F, Finv=Finv,
                         det=np.linalg.det(F), g=mc["g"], ginv=mc["ginv"], Gam=mc["Gam"],
                         Xdot=w, Ydot=Ydot, dXdot=dXdot, dgdt=dgdt,
                         dginv=mc.get("dginv"), dGam=mc.get("dGam"), outside=outside)


class TransformTracker:
    """Carries flowed stencil labels from step to step of a rigid trajectory.

    ``trial(traj, n)`` advances the committed state at t[n-1] over step n without
    committing; the solver calls it once per nonlinear iterate and commits the
    accepted one.
    """

    def __init__(self, labels, cutoff: CutoffField, h: float = 1.0 / 64, kind: str = "cross",
                 substeps=None, second: bool = False, q0=None):
        self.labels = np.asarray(labels, dtype=float)
        self.cutoff = cutoff
        self.stencil = Stencil(h, kind)
        self.substeps = substeps
        self.second = second
        self.q0 = np.zeros(3) if q0 is None else np.asarray(q0, dtype=float)
        pts = self.stencil.points(self.labels)
        self.X = pts.copy()
        self.F = np.broadcast_to(np.eye(3), pts.shape + (3,)).copy()
        self.n = 0

    def initial(self, traj: RigidTrajectory) -> TransformData:
        s = traj.state(0)
        return transform_data_from_flow(traj.t[0], self.labels, self.X, self.F, self.stencil,
                                        (s.q, s.Q, s.a, s.omega), self.cutoff, self.second,
                                        domain_center=self.q0)

    def trial(self, traj: RigidTrajectory, n: int):
        if n != self.n + 1:
            raise ValueError(f"tracker is at step {self.n}, cannot advance to step {n}")
        X, F = flow_step(self.X, self.F, traj, n, self.cutoff, self.substeps)
        s = traj.state(n)
        td = transform_data_from_flow(traj.t[n], self.labels, X, F, self.stencil,
                                      (s.q, s.Q, s.a, s.omega), self.cutoff, self.second,
                                      domain_center=self.q0)
        return (X, F), td

    def commit(self, flowed):
        self.X, self.F = flowed
        self.n += 1


def build_transform(traj: RigidTrajectory, cutoff: CutoffField, labels, substeps=None,
                    h: float = 1.0 / 64, kind: str = "cross", second: bool = False):
    """TransformData at every sample time of ``traj`` (generator)."""
    tr = TransformTracker(labels, cutoff, h=h, kind=kind, substeps=substeps, second=second,
                          q0=traj.q0)
    yield tr.initial(traj)
    for n in range(1, len(traj)):
        flowed, td = tr.trial(traj, n)
        tr.commit(flowed)
        yield td


def invert_transform(x, traj: RigidTrajectory, n: int, cutoff: CutoffField, samples_y=None,
                     samples_X=None, substeps=None, tol: float = 1e-11, maxiter: int = 50):
    """Y(t_n, x) by Newton iteration on y -> X(t_n, y) from a nearest-sample guess."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if samples_y is None:
        if samples_X is not None:
            raise ValueError("samples_X given without samples_y")
        y = x.copy()
    else:
        tree = cKDTree(samples_X)
        _, idx = tree.query(x)
        y = np.asarray(samples_y, dtype=float)[idx].copy()
    Xy, Fy = flow_labels(y, traj, n, cutoff, substeps)
    res = Xy - x
    err = np.linalg.norm(res, axis=1)
    active = err >= tol
    for _ in range(maxiter):
        if not active.any():
            return y
        idx = np.flatnonzero(active)
        step = np.linalg.solve(Fy[idx], res[idx, :, None])[..., 0]
        # backtracking keeps Newton from overshooting in the sheared transition shell
        lam = np.ones(len(idx))
        for _ in range(20):
            yt = y[idx] - lam[:, None] * step
            Xt, Ft = flow_labels(yt, traj, n, cutoff, substeps)
            et = np.linalg.norm(Xt - x[idx], axis=1)
            worse = et >= err[idx]
            if not worse.any() or lam.min() < 1e-4:
                break
            lam[worse] *= 0.5
        y[idx], Fy[idx], res[idx], err[idx] = yt, Ft, Xt - x[idx], et
        active[idx] = et >= tol
    if not active.any():
        return y
    bad = x[active][0]
    raise RuntimeError(f"inverse transform: Newton did not converge in {maxiter} iterations at x={bad}")


# -------------------------------------------------------------- time derivatives

def fd_weights(offsets, order: int) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at 0 (unit spacing)."""
    offsets = np.asarray(offsets, dtype=float)
    m = len(offsets)
    V = np.vander(offsets, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(V, rhs)


COEFFICIENT_FIELDS = ("g", "ginv", "Gam", "Ydot", "Finv", "dXdot", "F")


def time_derivatives(snapshots, dt: float, l: int):
    """Central FD derivatives of order 1..l at the middle of ``2l+1`` snapshots.

    ``snapshots`` is a sequence of arrays (same shape).  Returns a list
    ``[d^1, ..., d^l]``.
    """
    if len(snapshots) < 2 * l + 1 or len(snapshots) % 2 == 0:
        raise ValueError(f"need an odd number >= {2 * l + 1} of snapshots for order {l}")
    k = len(snapshots) // 2
    offs = np.arange(-k, k + 1)
    stack = np.stack([np.asarray(s, dtype=float) for s in snapshots])
    out = []
    for m in range(1, l + 1):
        wts = fd_weights(offs, m)
        out.append(np.tensordot(wts, stack - stack[k], axes=(0, 0)) / dt**m)
    return out


def coefficient_time_derivatives(tds, l: int, fields=COEFFICIENT_FIELDS):
    """d^m/dt^m (m <= l) of the coefficient fields at the middle snapshot.

    Returns ``{name: [d1, ..., dl]}``.
    """
    tds = list(tds)
    if len(tds) < 2 * l + 1:
        raise ValueError(f"need at least {2 * l + 1} snapshots for order {l}")
    times = np.array([td.t for td in tds])
    steps = np.diff(times)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
        raise ValueError("snapshots must be uniformly spaced in time")
    dt = steps[0]
    return {name: time_derivatives([getattr(td, name) for td in tds], dt, l) for name in fields}


# ----------------------------------------------------------------- binary dump

_MAGIC = b"FSIRTD01"
_DUMP_FIELDS = ("y", "X", "F", "Finv", "det", "g", "ginv", "Gam", "Xdot", "Ydot", "dXdot", "dgdt")


def dump_transform(td: TransformData, path) -> None:
    """Little-endian float64 dump: magic, t, npoints, nfields, then per field
    a 16-byte name, ndim, shape (int64) and data."""
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<dqq", td.t, td.npoints, len(_DUMP_FIELDS)))
        for name in _DUMP_FIELDS:
            arr = np.ascontiguousarray(getattr(td, name), dtype="<f8")
            fh.write(name.encode().ljust(16, b"\0"))
            fh.write(struct.pack("<q", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            fh.write(arr.tobytes())


def load_transform(path) -> dict:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError("not a transform snapshot")
    t, npts, nf = struct.unpack_from("<dqq", data, 8)
    pos = 32
    out = {"t": t, "npoints": npts}
    for _ in range(nf):
        name = data[pos:pos + 16].rstrip(b"\0").decode()
        pos += 16
        (ndim,) = struct.unpack_from("<q", data, pos)
        pos += 8
        shape = struct.unpack_from(f"<{ndim}q", data, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) * 8
        out[name] = np.frombuffer(data[pos:pos + size], dtype="<f8").reshape(shape)
        pos += size
    return out
