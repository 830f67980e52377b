"""Rigid-body kinematics: rotations on SO(3), the body isometry, rigid velocity
fields and inertia tensors.

Conventions: ``Q`` maps body-frame vectors to the physical frame, the physical
angular velocity ``omega`` satisfies ``dQ/dt = skew(omega) Q`` and the
body-frame velocities are ``A = Q^T a`` and ``Omega = Q^T omega``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

ORTHO_TOL = 1e-12


def skew(omega) -> np.ndarray:
    """Matrix P with ``P @ x == np.cross(omega, x)``."""
    w = np.asarray(omega, dtype=float)
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def rodrigues(rotvec) -> np.ndarray:
    """exp(skew(rotvec)) in closed form."""
    v = np.asarray(rotvec, dtype=float)
    theta = float(np.linalg.norm(v))
    K = skew(v)
    if theta < 1e-8:
        # series to O(theta^4), exact to rounding for small angles
        return np.eye(3) + (1.0 - theta**2 / 6.0) * K + (0.5 - theta**2 / 24.0) * (K @ K)
    return np.eye(3) + np.sin(theta) / theta * K + (1.0 - np.cos(theta)) / theta**2 * (K @ K)


def rodrigues_integral(rotvec_rate, tau: float) -> np.ndarray:
    """int_0^tau exp(s * skew(rotvec_rate)) ds."""
    w = np.asarray(rotvec_rate, dtype=float)
    n = float(np.linalg.norm(w))
    K = skew(w)
    th = n * tau
    if th < 1e-5:
        return tau * np.eye(3) + tau**2 / 2.0 * K + tau**3 / 6.0 * (K @ K)
    return (tau * np.eye(3) + (1.0 - np.cos(th)) / n**2 * K
            + (th - np.sin(th)) / n**3 * (K @ K))


def is_rotation(Q, tol: float = ORTHO_TOL) -> bool:
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (3, 3):
        return False
    return (np.linalg.norm(Q.T @ Q - np.eye(3)) < tol
            and abs(np.linalg.det(Q) - 1.0) < tol)


def _require_rotation(Q) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if not is_rotation(Q, tol=1e-10):
        raise ValueError("matrix is not a proper rotation (Q^T Q != I or det Q != 1)")
    return Q


@dataclass
class RigidState:
    """Position, orientation and physical-frame velocities at time ``t``."""

    t: float
    q: np.ndarray
    Q: np.ndarray
    a: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(3)
        self.Q = np.asarray(self.Q, dtype=float).reshape(3, 3)
        self.a = np.asarray(self.a, dtype=float).reshape(3)
        self.omega = np.asarray(self.omega, dtype=float).reshape(3)

    @property
    def A(self) -> np.ndarray:
        return self.Q.T @ self.a

    @property
    def Omega(self) -> np.ndarray:
        return self.Q.T @ self.omega

    @classmethod
    def at_rest(cls, q0, t: float = 0.0) -> "RigidState":
        return cls(t, q0, np.eye(3), np.zeros(3), np.zeros(3))


@dataclass(frozen=True)
class BodyGeometry:
    """Ball of radius ``radius`` centred at ``center`` at t = 0, unit density."""

    radius: float
    center: tuple = (0.0, 0.0, 0.0)
    density: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"body radius must be positive, got {self.radius}")

    @property
    def q0(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    @property
    def volume(self) -> float:
        return 4.0 / 3.0 * np.pi * self.radius**3

    def inertia_closed_form(self) -> np.ndarray:
        return self.density * 8.0 * np.pi / 15.0 * self.radius**5 * np.eye(3)


def integrate_rotation(Q0, omega: Callable[[float], Sequence[float]] | np.ndarray,
                       t_end: float, dt: float):
    """Integrate ``dQ/dt = skew(omega(t)) Q`` with per-step exponentials.

    ``omega`` is either a callable of t or an array of shape (nsteps, 3) giving
    the (midpoint) angular velocity of each step.  Returns ``(times, Qs)``.
    """
    Q0 = _require_rotation(Q0)
    if not dt > 0:
        raise ValueError("dt must be positive")
    nsteps = int(round(t_end / dt))
    if abs(nsteps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be an integer multiple of dt")
    times = dt * np.arange(nsteps + 1)
    Qs = np.empty((nsteps + 1, 3, 3))
    Qs[0] = Q0
    for n in range(nsteps):
        if callable(omega):
            w = np.asarray(omega(times[n] + 0.5 * dt), dtype=float)
        else:
            w = np.asarray(omega[n], dtype=float)
        Qs[n + 1] = rodrigues(w * dt) @ Qs[n]
    return times, Qs


def body_map(t: float, y, state: RigidState, q0) -> np.ndarray:
    """B(t, y) = q(t) + Q(t)(y - q(0)); ``y`` may be (3,) or (n, 3)."""
    y = np.asarray(y, dtype=float)
    return state.q + (y - np.asarray(q0, dtype=float)) @ state.Q.T


def rigid_velocity(t: float, x, state: RigidState) -> np.ndarray:
    """a(t) + omega(t) x (x - q(t)); ``x`` may be (3,) or (n, 3)."""
    x = np.asarray(x, dtype=float)
    return state.a + np.cross(state.omega, x - state.q)


def ball_quadrature(radius: float, n: int = 8):
    """Product Gauss rule on a ball centred at the origin: (points, weights)."""
    xr, wr = np.polynomial.legendre.leggauss(n)
    r = 0.5 * radius * (xr + 1.0)
    wr = 0.5 * radius * wr * r**2
    mu, wmu = np.polynomial.legendre.leggauss(n)
    nphi = 2 * n
    phi = 2.0 * np.pi * np.arange(nphi) / nphi
    wphi = np.full(nphi, 2.0 * np.pi / nphi)
    R, MU, PHI = np.meshgrid(r, mu, phi, indexing="ij")
    W = wr[:, None, None] * wmu[None, :, None] * wphi[None, None, :]
    s = np.sqrt(1.0 - MU**2)
    pts = np.stack([R * s * np.cos(PHI), R * s * np.sin(PHI), R * MU], axis=-1)
    return pts.reshape(-1, 3), W.reshape(-1)


def inertia_tensor(geometry: BodyGeometry, state: RigidState, n: int = 8) -> np.ndarray:
    """Quadrature of int_S(t) (|x-q|^2 I - (x-q)(x-q)^T) dx."""
    if not geometry.radius > 0:
        raise ValueError("degenerate body geometry")
    pts, w = ball_quadrature(geometry.radius, n)
    x = body_map(state.t, pts + geometry.q0, state, geometry.q0)
    r = x - state.q
    r2 = np.einsum("ni,ni->n", r, r)
    J = (np.einsum("n,n->", w, r2) * np.eye(3) - np.einsum("n,ni,nj->ij", w, r, r))
    return geometry.density * J


def transformed_inertia(Q, J) -> np.ndarray:
    """Body-frame inertia Q^T J Q."""
    Q = np.asarray(Q, dtype=float)
    return Q.T @ np.asarray(J, dtype=float) @ Q


@dataclass
class RigidTrajectory:
    """Rigid motion sampled at step times.

    Over the step (t[n-1], t[n]] the body-frame velocities are frozen at
    ``A[n]`` and ``Omega[n]``, so inside the step
    ``Q(s) = Q[n-1] exp((s - t[n-1]) skew(Omega[n]))`` and the physical
    translational velocity ``Q(s) A[n]`` rotates with the body.  The motion is
    an exact solution of ``dq/dt = a``, ``dQ/dt = skew(omega) Q`` between
    samples.  Index 0 holds the initial velocities.
    """

    q0: np.ndarray
    t: list = field(default_factory=list)
    q: list = field(default_factory=list)
    Q: list = field(default_factory=list)
    A: list = field(default_factory=list)
    Omega: list = field(default_factory=list)

    @classmethod
    def start(cls, q0, A0=(0, 0, 0), Omega0=(0, 0, 0), Q0=None, t0: float = 0.0):
        q0 = np.asarray(q0, dtype=float)
        Q0 = np.eye(3) if Q0 is None else _require_rotation(Q0)
        return cls(q0=q0, t=[float(t0)], q=[q0.copy()], Q=[Q0.copy()],
                   A=[np.asarray(A0, dtype=float)], Omega=[np.asarray(Omega0, dtype=float)])

    def __len__(self):
        return len(self.t)

    @staticmethod
    def advance(q, Q, A, Omega, tau):
        """Pose after moving for ``tau`` with frozen body-frame velocities."""
        Qn = Q @ rodrigues(np.asarray(Omega) * tau)
        qn = q + Q @ (rodrigues_integral(Omega, tau) @ np.asarray(A, dtype=float))
        return qn, Qn

    def append(self, dt: float, A, Omega):
        A = np.asarray(A, dtype=float)
        Omega = np.asarray(Omega, dtype=float)
        qn, Qn = self.advance(self.q[-1], self.Q[-1], A, Omega, dt)
        self.t.append(self.t[-1] + dt)
        self.q.append(qn)
        self.Q.append(Qn)
        self.A.append(A)
        self.Omega.append(Omega)

    def truncate(self, n: int):
        """Keep samples 0..n."""
        for name in ("t", "q", "Q", "A", "Omega"):
            del getattr(self, name)[n + 1:]

    def state(self, n: int) -> RigidState:
        Q = self.Q[n]
        return RigidState(self.t[n], self.q[n], Q, Q @ self.A[n], Q @ self.Omega[n])

    def pose_in_step(self, n: int, s: float):
        """(q, Q, a, omega) at time ``s`` inside step n (t[n-1] < s <= t[n])."""
        tau = s - self.t[n - 1]
        A, Om = self.A[n], self.Omega[n]
        q, Q = self.advance(self.q[n - 1], self.Q[n - 1], A, Om, tau)
        return q, Q, Q @ A, Q @ Om

    def copy(self) -> "RigidTrajectory":
        return RigidTrajectory(self.q0.copy(), list(self.t), [x.copy() for x in self.q],
                               [x.copy() for x in self.Q], [x.copy() for x in self.A],
                               [x.copy() for x in self.Omega])

    @classmethod
    def prescribed(cls, q0, A, Omega, dt: float, nsteps: int, Q0=None):
        """Motion with constant body-frame velocities (a smooth helix)."""
        traj = cls.start(q0, A, Omega, Q0=Q0)
        for _ in range(nsteps):
            traj.append(dt, A, Omega)
        return traj

    def to_csv(self, path) -> None:
        write_trajectory_csv(path, [self.state(n) for n in range(len(self))])

    @classmethod
    def from_csv(cls, path, q0) -> "RigidTrajectory":
        states = read_trajectory_csv(path)
        traj = cls(q0=np.asarray(q0, dtype=float))
        for s in states:
            traj.t.append(s.t)
            traj.q.append(s.q)
            traj.Q.append(s.Q)
            traj.A.append(s.A)
            traj.Omega.append(s.Omega)
        return traj


CSV_SCHEMA = "fsirigid.rigid.v1"
CSV_COLUMNS = (["t", "q1", "q2", "q3"]
               + [f"Q{i}{j}" for i in range(1, 4) for j in range(1, 4)]
               + ["a1", "a2", "a3", "omega1", "omega2", "omega3"])


def write_trajectory_csv(path, states: Sequence[RigidState]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# schema: {CSV_SCHEMA}\n")
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for s in states:
            row = [s.t, *s.q, *s.Q.reshape(-1), *s.a, *s.omega]
            w.writerow([repr(float(v)) for v in row])


def read_trajectory_csv(path) -> list[RigidState]:
    rows = []
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    if header != CSV_COLUMNS:
        raise ValueError(f"unexpected trajectory columns in {path}")
    for row in reader:
        v = np.array([float(x) for x in row])
        rows.append(RigidState(v[0], v[1:4], v[4:13].reshape(3, 3), v[13:16], v[16:19]))
    return rows
