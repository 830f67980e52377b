"""Closed-form fields used by the verification suite."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import Jet
from .transform import Stencil


@dataclass(frozen=True)
class PlaneWaveField:
    """u(t, x) = sum_m c_m sin(k_m . x + nu_m t + phi_m) with c_m orthogonal to k_m.

    Each wave is divergence free, so the sum is too.
    """

    c: tuple = ((-0.3, -0.55, 0.0), (0.0, -0.28, -0.52), (-0.6, 0.0, -0.45))
    k: tuple = ((1.1, -0.6, 0.8), (0.5, 1.3, -0.7), (-0.9, 0.4, 1.2))
    nu: tuple = (0.8, -1.1, 0.6)
    phi: tuple = (0.3, -0.2, 1.0)

    def __post_init__(self):
        dots = np.einsum("mi,mi->m", np.asarray(self.c), np.asarray(self.k))
        if np.abs(dots).max() > 1e-12:
            raise ValueError("wave amplitudes must be orthogonal to their wave vectors")

    def _phase(self, t, x):
        return np.asarray(x) @ np.asarray(self.k).T + np.asarray(self.nu) * t + np.asarray(self.phi)

    def value(self, t, x):
        return np.sin(self._phase(t, x)) @ np.asarray(self.c)

    def grad(self, t, x):
        """[..., i, j] = d_j u_i."""
        return np.einsum("...m,mi,mj->...ij", np.cos(self._phase(t, x)), np.asarray(self.c),
                         np.asarray(self.k))

    def hess(self, t, x):
        K = np.asarray(self.k)
        return -np.einsum("...m,mi,mj,mk->...ijk", np.sin(self._phase(t, x)), np.asarray(self.c), K, K)

    def laplacian(self, t, x):
        k2 = np.sum(np.asarray(self.k) ** 2, axis=1)
        return -(np.sin(self._phase(t, x)) * k2) @ np.asarray(self.c)

    def dt(self, t, x):
        return (np.cos(self._phase(t, x)) * np.asarray(self.nu)) @ np.asarray(self.c)

    def convection(self, t, x):
        """(u . grad) u."""
        return np.einsum("...ij,...j->...i", self.grad(t, x), self.value(t, x))


@dataclass(frozen=True)
class ScalarWave:
    """p(x) = c sin(k . x + phi)."""

    c: float = 0.6
    k: tuple = (0.7, -1.2, 0.9)
    phi: float = 0.4

    def value(self, x):
        return self.c * np.sin(np.asarray(x) @ np.asarray(self.k) + self.phi)

    def grad(self, x):
        return (self.c * np.cos(np.asarray(x) @ np.asarray(self.k) + self.phi))[..., None] * np.asarray(self.k)


def jet_from_stencil(vals, stencil: Stencil, t=None) -> Jet:
    """Jet at stencil centres from samples ``vals`` of shape (n, m, 3)."""
    grad = np.moveaxis(stencil.d1(vals), 1, 2)          # (n, i, j)
    hess = None
    if stencil.kind == "cube":
        hess = np.moveaxis(stencil.d2(vals), (1, 2), (2, 3))  # (n, i, j, k)
    return Jet(vals[:, stencil.center].copy(), grad, hess, t)


def pulled_back_field(field: PlaneWaveField, t, X_st, F_st):
    """U = grad Y . u(X) = (grad X)^{-1} u(X) at every stencil point."""
    u = field.value(t, X_st)
    return np.linalg.solve(F_st, u[..., None])[..., 0]


@dataclass(frozen=True)
class ShearRotationMap:
    """A closed-form, volume-preserving, time-dependent map

    X(t, y) = R(t) S(t, y) + b(t), with the unit-triangular shear
    S = (y1 + alpha(t) sin(y2 + y3/2), y2 + beta(t) y3^2, y3).
    """

    alpha0: float = 0.3
    beta0: float = 0.2
    spin: tuple = (0.2, -0.1, 0.6)
    drift: tuple = (0.1, 0.0, -0.05)

    def _coef(self, t):
        alpha, dalpha = self.alpha0 * (1 + t), self.alpha0
        beta, dbeta = self.beta0 * (1 + 0.5 * t), 0.5 * self.beta0
        return alpha, dalpha, beta, dbeta

    def rotation(self, t):
        from .rigid_motion import rodrigues
        return rodrigues(np.asarray(self.spin) * t)

    def _shear(self, t, y):
        y = np.asarray(y, dtype=float)
        alpha, dalpha, beta, dbeta = self._coef(t)
        s, c = np.sin(y[..., 1] + 0.5 * y[..., 2]), np.cos(y[..., 1] + 0.5 * y[..., 2])
        S = np.stack([y[..., 0] + alpha * s, y[..., 1] + beta * y[..., 2] ** 2, y[..., 2]], -1)
        Sd = np.stack([dalpha * s, dbeta * y[..., 2] ** 2, np.zeros_like(s)], -1)
        DS = np.zeros(y.shape + (3,))
        DS[..., 0, 0] = DS[..., 1, 1] = DS[..., 2, 2] = 1.0
        DS[..., 0, 1], DS[..., 0, 2] = alpha * c, 0.5 * alpha * c
        DS[..., 1, 2] = 2 * beta * y[..., 2]
        DSd = np.zeros(y.shape + (3,))
        DSd[..., 0, 1], DSd[..., 0, 2] = dalpha * c, 0.5 * dalpha * c
        DSd[..., 1, 2] = 2 * dbeta * y[..., 2]
        return S, Sd, DS, DSd

    def X(self, t, y):
        S = self._shear(t, y)[0]
        return S @ self.rotation(t).T + np.asarray(self.drift) * t

    def F(self, t, y):
        return self.rotation(t) @ self._shear(t, y)[2]

    def Xdot(self, t, y):
        S, Sd, _, _ = self._shear(t, y)
        R = self.rotation(t)
        Rd = _skew(self.spin) @ R
        return S @ Rd.T + Sd @ R.T + np.asarray(self.drift)

    def dXdot(self, t, y):
        _, _, DS, DSd = self._shear(t, y)
        R = self.rotation(t)
        Rd = _skew(self.spin) @ R
        return Rd @ DS + R @ DSd

    def transform_data(self, t, labels, stencil: Stencil, second: bool = True):
        from .transform import TransformData, metric_and_christoffel
        labels = np.asarray(labels, dtype=float)
        pts = stencil.points(labels)
        mc = metric_and_christoffel(self.F(t, pts), stencil, second=second)
        F, Finv = mc["F"], mc["Finv"]
        Xd = self.Xdot(t, labels)
        dXd = self.dXdot(t, labels)
        dgdt = np.einsum("nki,nkj->nij", dXd, F) + np.einsum("nki,nkj->nij", F, dXd)
        return TransformData(t=float(t), y=labels, X=self.X(t, labels), F=F, Finv=Finv,
                             det=np.linalg.det(F), g=mc["g"], ginv=mc["ginv"], Gam=mc["Gam"],
                             Xdot=Xd, Ydot=-np.einsum("nik,nk->ni", Finv, Xd), dXdot=dXd,
                             dgdt=dgdt, dginv=mc.get("dginv"), dGam=mc.get("dGam"))


def _skew(v):
    v = np.asarray(v, dtype=float)
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])


@dataclass(frozen=True)
class ShellStokesSolution:
    """Steady Stokes pair on R_in < |x| < R_out with no slip on both spheres.

    u = grad s x e with s = (rho - a)^2 (b - rho)^2, rho = |x|^2, a = R_in^2, b = R_out^2,
    so u = 2 s'(rho) x x e vanishes (with s') on both spheres and is divergence free.
    p = x1 x2 x3 has zero mean on the shell.  f = -Laplace u + grad p.
    """

    R_in: float
    R_out: float
    e: tuple = (0.3, -0.5, 0.8)

    def _s(self):
        P = np.polynomial.Polynomial
        a, b = self.R_in**2, self.R_out**2
        return P([-a, 1]) ** 2 * P([b, -1]) ** 2

    def velocity(self, x):
        x = np.asarray(x, dtype=float)
        rho = np.sum(x * x, axis=-1)
        s1 = self._s().deriv(1)(rho)
        return 2 * s1[..., None] * np.cross(x, np.asarray(self.e))

    def grad(self, x):
        """[..., i, m] = d_m u_i."""
        x = np.asarray(x, dtype=float)
        rho = np.sum(x * x, axis=-1)
        s = self._s()
        s1, s2 = s.deriv(1)(rho), s.deriv(2)(rho)
        xe = np.cross(x, np.asarray(self.e))
        E = -_skew(self.e)          # d_m (x x e)_i = eps_imk e_k
        return 4 * s2[..., None, None] * xe[..., :, None] * x[..., None, :] + 2 * s1[..., None, None] * E

    def laplacian(self, x):
        x = np.asarray(x, dtype=float)
        rho = np.sum(x * x, axis=-1)
        s = self._s()
        lap_rho = 10 * s.deriv(2)(rho) + 4 * rho * s.deriv(3)(rho)
        return 2 * lap_rho[..., None] * np.cross(x, np.asarray(self.e))

    def pressure(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., 0] * x[..., 1] * x[..., 2]

    def pressure_grad(self, x):
        x = np.asarray(x, dtype=float)
        return np.stack([x[..., 1] * x[..., 2], x[..., 0] * x[..., 2], x[..., 0] * x[..., 1]], -1)

    def force(self, x):
        return -self.laplacian(x) + self.pressure_grad(x)
