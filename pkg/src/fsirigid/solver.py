"""Time marching for the body-frame fluid/rigid-body system.

Each implicit-Euler step solves the transformed equations by a fixed-point
iteration around a flat Stokes-with-rigid-body solve: the flat operator stays on
the left, every metric correction goes to the right-hand side.  The nonlinear
driver wraps this in Picard iterations for the linearization field and for the
body velocities that move the transform.

Discrete step, tested with psi in the coupled space (all forms G-weighted)::

    int (F' U' - F U) . F' psi / dt + a_G(U', psi) + c_V(U', psi) - (P', div psi)
        + (A' - A) . psi_a / dt + (Om~ x A') . psi_a
        + J (Om' - Om) . psi_w / dt + (Om~ x J Om') . psi_w = 0

with primes at t_{n+1}, c_V the skew part of the covariant transport along
V = dY/dt + U~.  Testing with the solution gives the discrete energy inequality
exactly (up to the fixed-point tolerance).
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import CoupledSpace, RigidBody, TaylorHoodSpace
from .mesh import build_shell_mesh
from .operators import (form_A, form_cross_mass, form_frame_rate, form_M, form_transport_skew)
from .rigid_motion import RigidTrajectory, skew
from .transform import (GapHypothesisViolated, TransformData, TransformTracker, build_cutoff)

log = logging.getLogger(__name__)


class SolverFailure(RuntimeError):
    """Linear solve, fixed-point or Picard failure that survived all retries."""


class ContractionFailure(SolverFailure):
    """Fixed-point factor >= 1 for three consecutive iterations."""


# ---------------------------------------------------------------- configuration

@dataclass
class SolverConfig:
    dt: float = 1e-2
    T: float = 1.0
    fp_tol: float = 1e-10
    fp_maxit: int = 60
    lin_tol: float = 1e-10
    split_threshold: float = math.inf   # bound on ||U~||_{L^r L^s} per window
    s: float = 4.0
    r: float = 8.0
    picard_tol: float = 1e-10
    picard_maxit: int = 40
    geom_tol: float = 1e-9
    geom_maxit: int = 12
    max_bisect: int = 12
    gap_delta: float | None = None
    check_uniqueness: bool = False
    rebase_mu: float = 0.5          # freeze the left operator at the current metric above this

    def __post_init__(self):
        if not (self.dt > 0 and self.T > 0):
            raise ValueError("dt and T must be positive")
        if not self.s > 3:
            raise ValueError(f"Prodi-Serrin exponent s must exceed 3, got {self.s}")
        if abs(3.0 / self.s + 2.0 / self.r - 1.0) > 1e-12:
            raise ValueError(f"(s, r) = ({self.s}, {self.r}) violates 3/s + 2/r = 1")
        for name in ("fp_tol", "lin_tol", "picard_tol", "geom_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown solver options: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------- problem

class Problem:
    """Mesh, spaces, cutoff and the cached flat saddle-point factorizations."""

    def __init__(self, level: int = 1, R_in: float = 0.5, R_out: float = 1.5,
                 delta_in: float = 0.1, delta_out: float = 0.4, q0=(0.0, 0.0, 0.0),
                 fd_h: float = 1.0 / 64, substeps=1):
        self.level = level
        self.q0 = np.asarray(q0, dtype=float)
        self.mesh = build_shell_mesh(R_in, R_out, level, center=self.q0)
        self.th = TaylorHoodSpace(self.mesh)
        self.body = RigidBody(R_in, tuple(self.q0))
        self.cs = CoupledSpace(self.th, self.body)
        self.cutoff = build_cutoff(R_in, R_out, delta_in, delta_out)
        self.fd_h = fd_h
        self.substeps = substeps
        T = self.cs.T
        self.BT = (self.th.divergence @ T).tocsr()
        self.KT = (T.T @ self.th.viscous @ T).tocsr()
        self.MT = (T.T @ self.th.mass @ T).tocsr()
        self.R = self.cs.rigid_mass
        self.G0 = (self.MT + self.R).tocsr()
        self._lu = {}
        self._fine = None

    @property
    def nz(self) -> int:
        return self.cs.nz

    @property
    def J(self) -> np.ndarray:
        return self.body.inertia

    def describe(self) -> dict:
        return {"level": self.level, "R_in": self.mesh.R_in, "R_out": self.mesh.R_out,
                "delta_in": self.cutoff.delta_in, "delta_out": self.cutoff.delta_out,
                "q0": self.q0.tolist(), "nodes": self.th.nnodes, "tets": self.mesh.ntets,
                "unknowns": self.nz + self.th.npressure, "quadrature_points": self.th.nquad}

    def flat_operator(self, dt: float) -> sp.csr_matrix:
        return (self.MT / dt + self.KT + self.R / dt).tocsr()

    def reference(self, dt: float, td: TransformData | None = None) -> "Reference":
        """Left operator of the fixed point: flat, or frozen at the metric of ``td``."""
        key = float(dt)
        for k, ref in self._lu.items():
            if td is None and _same_dt(k, key):
                return ref
        if td is None:
            S = self.flat_operator(dt)
        else:
            C = geometry_tensor(td, dt)
            S = (self.cs.T.T @ self.th.form_matrix(C) @ self.cs.T + self.R / dt).tocsr()
        m = sp.csr_matrix(self.th.pressure_mean[None, :])
        Ssad = sp.bmat([[S, self.BT.T, None], [self.BT, None, m.T], [None, m, None]],
                       format="csc")
        ref = Reference(float(dt), None if td is None else td.t, S, spla.splu(Ssad), Ssad)
        if td is None:
            self._lu[key] = ref
        return ref

    def norm(self, z) -> float:
        """Flat weighted-mass norm on coupled unknowns."""
        return math.sqrt(max(float(z @ (self.G0 @ z)), 0.0))

    def fine_space(self) -> TaylorHoodSpace:
        """Same mesh with the 64-point collapsed Gauss rule."""
        if self._fine is None:
            self._fine = TaylorHoodSpace(self.mesh, rule="4")
        return self._fine

    def trackers(self):
        qt = TransformTracker(self.th.qp, self.cutoff, h=self.fd_h, kind="cross",
                              substeps=self.substeps, q0=self.q0)
        nt = TransformTracker(self.th.nodes, self.cutoff, h=self.fd_h, kind="point",
                              substeps=self.substeps, q0=self.q0)
        return qt, nt


def _same_dt(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-9 * max(abs(a), abs(b))


@dataclass
class Reference:
    """A factorized saddle-point operator; ``t_ref`` is None for the flat one."""

    dt: float
    t_ref: float | None
    S: sp.csr_matrix
    lu: object
    saddle: sp.csc_matrix


def stokes_rigid_solve(problem: Problem, rhs, dt: float, lin_tol: float = 1e-10,
                       ref: Reference | None = None):
    """Implicit step: (M/dt + K + R/dt) z + (BT)^T P = rhs, BT z = 0, mean(P) = 0.

    ``rhs`` is the assembled coupled load (fluid F*, rigid G*, H* rows), which
    includes the previous-state terms.  With ``ref`` the flat M and K are
    replaced by the frozen G-weighted ones.  Returns (z, P).
    """
    ref = ref or problem.reference(dt)
    lu, S = ref.lu, ref.saddle
    nz, npr = problem.nz, problem.th.npressure
    b = np.zeros(S.shape[0])
    b[:nz] = rhs
    x = lu.solve(b)
    res = np.linalg.norm(S @ x - b)
    scale = max(np.linalg.norm(b), np.finfo(float).tiny)
    if not np.isfinite(res) or res > lin_tol * scale and res > 1e-300:
        raise SolverFailure(f"linear solve residual {res:.3e} (relative {res / scale:.3e}) "
                            f"exceeds tolerance {lin_tol:.1e}")
    return x[:nz], x[nz:nz + npr]


# ------------------------------------------------------------------ step systems

@dataclass
class StepSystem:
    """Left side  T^T apply(C, T z) + Rig z  and right side ``known``."""

    C: np.ndarray
    Rig: np.ndarray         # 6x6 on (A, Omega)
    known: np.ndarray
    dt: float


def _rigid_block(problem: Problem, dt: float, Om_tilde) -> np.ndarray:
    J = problem.J
    W = skew(Om_tilde)
    Rig = np.zeros((6, 6))
    Rig[:3, :3] = problem.body.mass * np.eye(3) / dt + W * problem.body.mass
    Rig[3:, 3:] = J / dt + W @ J
    return Rig


def apply_system(problem: Problem, sysm: StepSystem, z) -> np.ndarray:
    cs, th = problem.cs, problem.th
    out = cs.T.T @ th.apply_form(sysm.C, cs.expand(z)).ravel()
    out[cs.nfree:] += sysm.Rig @ z[cs.nfree:]
    return out


def transport_velocity_ref(problem: Problem, td: TransformData, z_tilde) -> np.ndarray:
    """V = dY/dt + U~ at quadrature points."""
    return td.Ydot + problem.th.eval_values(problem.cs.expand(z_tilde))


def geometry_tensor(td: TransformData, dt: float) -> np.ndarray:
    """The U~-independent part of the step tensor."""
    return form_M(td) / dt + form_A(td)


def step_system(problem: Problem, td_new: TransformData, td_old: TransformData, z_old,
                z_tilde, dt: float, base=None) -> StepSystem:
    th, cs = problem.th, problem.cs
    V = transport_velocity_ref(problem, td_new, z_tilde)
    if base is None:
        base = geometry_tensor(td_new, dt)
    C = base + form_transport_skew(V, td_new)
    known = cs.T.T @ th.apply_form(form_cross_mass(td_new.F, td_old.F) / dt,
                                   cs.expand(z_old)).ravel()
    rig_old = np.zeros(6)
    rig_old[:3] = problem.body.mass * z_old[cs.sA] / dt
    rig_old[3:] = problem.J @ z_old[cs.sOm] / dt
    known[cs.nfree:] += rig_old
    return StepSystem(C, _rigid_block(problem, dt, z_tilde[cs.sOm]), known, dt)


def fixed_point(problem: Problem, sysm: StepSystem, z_init, config: SolverConfig,
                ref: Reference | None = None):
    """Iterate  S0 z_{k+1} + (BT)^T P = known + S0 z_k - L_G z_k  to convergence.

    S0 is the flat operator unless a rebased ``ref`` is given.  Returns (z, P, info)
    with per-iteration distances and contraction factors.
    """
    if ref is None or not _same_dt(ref.dt, sysm.dt):
        ref = problem.reference(sysm.dt)
    S0 = ref.S
    z = np.array(z_init, dtype=float)
    dists, mus = [], []
    streak = 0
    P = np.zeros(problem.th.npressure)
    converged = False
    for k in range(config.fp_maxit):
        rhs = sysm.known + S0 @ z - apply_system(problem, sysm, z)
        z_new, P = stokes_rigid_solve(problem, rhs, sysm.dt, config.lin_tol, ref)
        d = problem.norm(z_new - z)
        dists.append(d)
        if len(dists) > 1 and dists[-2] > 0:
            mu = d / dists[-2]
            mus.append(mu)
            streak = streak + 1 if mu >= 1 else 0
        z = z_new
        if d == 0 or d <= config.fp_tol * problem.norm(z):
            converged = True
            break
        if streak >= 3:
            raise ContractionFailure(f"fixed-point factor >= 1 for 3 iterations: {mus[-3:]}")
    if not converged:
        raise SolverFailure(f"fixed point not converged in {config.fp_maxit} iterations "
                            f"(last distance {dists[-1]:.3e})")
    res = apply_system(problem, sysm, z) + problem.BT.T @ P - sysm.known
    scale = max(np.linalg.norm(sysm.known), np.linalg.norm(apply_system(problem, sysm, z)), 1e-300)
    info = {"iterations": len(dists), "distances": dists, "mu": mus,
            "mu_hat": max(mus) if mus else 0.0, "residual": float(np.linalg.norm(res) / scale)}
    return z, P, info


# ----------------------------------------------------------------------- energy

def energy(problem: Problem, td: TransformData, z) -> float:
    """1/2 (int |F U|^2 + m |A|^2 + J Omega . Omega)."""
    cs = problem.cs
    U = cs.expand(z)
    fl = float(np.einsum("q,qi,qi->", problem.th.qw, *(2 * [np.einsum(
        "qij,qj->qi", td.F, problem.th.eval_values(U))])))
    A, Om = z[cs.sA], z[cs.sOm]
    return 0.5 * (fl + problem.body.mass * A @ A + Om @ problem.J @ Om)


def dissipation(problem: Problem, td: TransformData, z) -> float:
    """a_G(U, U) = 2 int |D u|^2 in physical variables."""
    U = problem.cs.expand(z)
    return problem.th.evaluate_form(form_A(td), U, U)


def initial_state(problem: Problem, A0=(0, 0, 0), Omega0=(0, 0, 0), u0=None) -> np.ndarray:
    """Discretely divergence-free coupled state closest (L2) to ``u0`` (default: the
    divergence-free extension of the rigid velocity), with the rigid part fixed."""
    cs, th = problem.cs, problem.th
    A0 = np.asarray(A0, dtype=float)
    Omega0 = np.asarray(Omega0, dtype=float)
    if u0 is None:
        U = cs.extension_field(A0, Omega0, problem.cutoff)
    else:
        U = np.asarray(u0(th.nodes), dtype=float).reshape(th.nnodes, 3)
    z_r = cs.restrict(np.zeros_like(U), A0, Omega0)
    nf = cs.nfree
    G = problem.MT
    rhs_full = cs.T.T @ (th.mass @ U.ravel()) - G @ z_r
    Gf = G[:nf][:, :nf]
    Bf = problem.BT[:, :nf]
    m = sp.csr_matrix(th.pressure_mean[None, :])
    S = sp.bmat([[Gf, Bf.T, None], [Bf, None, m.T], [None, m, None]], format="csc")
    b = np.concatenate([rhs_full[:nf], -(problem.BT @ z_r), [0.0]])
    x = spla.splu(S).solve(b)
    z = z_r.copy()
    z[:nf] = x[:nf]
    return z


# ------------------------------------------------------------------- trajectory

@dataclass
class StepRecord:
    t: float
    dt: float
    z: np.ndarray
    P: np.ndarray
    q: np.ndarray
    Q: np.ndarray
    energy: float
    dissipation: float
    X_nodes: np.ndarray | None = None
    F_nodes: np.ndarray | None = None
    iterations: int = 0
    mu: list = field(default_factory=list)
    distances: list = field(default_factory=list)
    picard: int = 0
    geometry_iterations: int = 0
    residual: float = 0.0
    uniqueness_gap: float | None = None
    gap: float = math.nan
    wall_time: float = 0.0
    td: TransformData | None = None
    z_tilde: np.ndarray | None = None
    reference_t: float | None = None
    rigid_momentum: np.ndarray | None = None
    rigid_force: np.ndarray | None = None


class Trajectory:
    """Accepted steps of a run; record 0 holds the initial state."""

    def __init__(self, problem: Problem, config: SolverConfig, rigid: RigidTrajectory):
        self.problem = problem
        self.config = config
        self.rigid = rigid
        self.records: list[StepRecord] = []

    def __len__(self):
        return len(self.records)

    def __getitem__(self, n) -> StepRecord:
        return self.records[n]

    @property
    def t(self) -> np.ndarray:
        return np.array([r.t for r in self.records])

    def A(self, n) -> np.ndarray:
        return self.records[n].z[self.problem.cs.sA]

    def Omega(self, n) -> np.ndarray:
        return self.records[n].z[self.problem.cs.sOm]

    def U(self, n) -> np.ndarray:
        return self.problem.cs.expand(self.records[n].z)

    def physical_velocity_nodes(self, n) -> np.ndarray:
        """u(X(y)) = F U at mesh nodes."""
        r = self.records[n]
        return np.einsum("nij,nj->ni", r.F_nodes, self.U(n))

    def mu_hat(self) -> np.ndarray:
        return np.array([max(r.mu) if r.mu else 0.0 for r in self.records[1:]])

    def rigid_rows(self):
        """(t, q, Q, a, omega) in the physical frame per record."""
        rows = []
        for r in self.records:
            a = r.Q @ r.z[self.problem.cs.sA]
            om = r.Q @ r.z[self.problem.cs.sOm]
            rows.append((r.t, r.q, r.Q, a, om))
        return rows

    def manifest(self) -> dict:
        return {"problem": self.problem.describe(), "config": self.config.to_dict(),
                "steps": [{"t": r.t, "dt": r.dt, "iterations": r.iterations,
                           "mu": r.mu, "picard": r.picard,
                           "geometry_iterations": r.geometry_iterations,
                           "residual": r.residual, "uniqueness_gap": r.uniqueness_gap,
                           "energy": r.energy, "dissipation": r.dissipation, "gap": r.gap,
                           "wall_time": r.wall_time} for r in self.records]}


def rigid_balance(problem: Problem, td: TransformData, z, z_tilde, P):
    """Rigid-test-function rows of the time-continuous weak system
    (m z)' + k z + (BT)^T P = 0: returns (rows of m z, rows of k z + (BT)^T P)."""
    cs = problem.cs
    V = transport_velocity_ref(problem, td, z_tilde)
    U = cs.expand(z)
    mz = cs.T.T @ problem.th.apply_form(form_M(td), U).ravel()
    kz = cs.T.T @ problem.th.apply_form(
        form_A(td) + form_transport_skew(V, td) - form_frame_rate(td), U).ravel()
    kz += problem.BT.T @ P
    W = skew(z_tilde[cs.sOm])
    p = mz[cs.nfree:].copy()
    p[:3] += problem.body.mass * z[cs.sA]
    p[3:] += problem.J @ z[cs.sOm]
    f = kz[cs.nfree:].copy()
    f[:3] += problem.body.mass * W @ z[cs.sA]
    f[3:] += W @ problem.J @ z[cs.sOm]
    return p, f


def body_wall_gap(problem: Problem, q) -> float:
    """dist(S(t), boundary of the domain) for a ball-in-ball geometry."""
    off = float(np.linalg.norm(np.asarray(q) - problem.q0))
    return problem.mesh.R_out - problem.mesh.R_in - off


def _initial_record(problem, rigid, z0, td0, node_td, keep, z_tilde=None):
    P0 = np.zeros(problem.th.npressure)
    p, f = rigid_balance(problem, td0, z0, z0 if z_tilde is None else z_tilde, P0)
    return StepRecord(rigid_momentum=p, rigid_force=f, t=rigid.t[0], dt=0.0, z=z0.copy(), P=np.zeros(problem.th.npressure),
                      q=rigid.q[0].copy(), Q=rigid.Q[0].copy(), energy=energy(problem, td0, z0),
                      dissipation=dissipation(problem, td0, z0), X_nodes=node_td.X.copy(),
                      F_nodes=node_td.F.copy(), gap=body_wall_gap(problem, rigid.q[0]),
                      td=td0 if keep else None)


def _check_hypothesis(problem: Problem, q, config: SolverConfig):
    if config.gap_delta is not None:
        gap = body_wall_gap(problem, q)
        if gap < config.gap_delta:
            raise GapHypothesisViolated(
                f"body-wall gap {gap:.4f} below configured delta {config.gap_delta}")


def solve_nonlinear(problem: Problem, config: SolverConfig, A0=(0, 0, 0), Omega0=(0, 0, 0),
                    u0=None, progress=None) -> Trajectory:
    """Picard iteration per step: the linearization field U~ and the transform
    (through the body velocities) come from the previous iterate."""
    z0 = initial_state(problem, A0, Omega0, u0)
    rigid = RigidTrajectory.start(problem.q0, z0[problem.cs.sA], z0[problem.cs.sOm])
    qt, nt = problem.trackers()
    td0 = qt.initial(rigid)
    traj = Trajectory(problem, config, rigid)
    traj.records.append(_initial_record(problem, rigid, z0, td0, nt.initial(rigid), False))
    scale = max(problem.norm(z0), 1e-300)
    state = {"td": td0, "ref": None}

    def one_step(dt):
        t0 = time.perf_counter()
        rec = traj.records[-1]
        n = len(rigid)
        z_old = rec.z
        td_old = state["td"]
        cs = problem.cs
        # predictor on the frozen previous transform (no flow needed)
        ref = state["ref"]
        z_tilde, _, _ = fixed_point(problem, step_system(problem, td_old, td_old, z_old, z_old, dt),
                                    z_old, config, ref)
        A_g, Om_g = z_tilde[cs.sA].copy(), z_tilde[cs.sOm].copy()
        first = None
        for git in range(1, config.geom_maxit + 1):
            rigid.append(dt, A_g, Om_g)
            try:
                _check_hypothesis(problem, rigid.q[n], config)
                flowed, td = qt.trial(rigid, n)
                base = geometry_tensor(td, dt)
                for pic in range(1, config.picard_maxit + 1):
                    sysm = step_system(problem, td, td_old, z_old, z_tilde, dt, base)
                    z, P, info = fixed_point(problem, sysm, z_old if first is None else z_tilde,
                                             config, ref)
                    if first is None:
                        first = info
                    change = problem.norm(z - z_tilde)
                    z_tilde = z
                    if change <= config.picard_tol * max(problem.norm(z), 1e-300 * scale):
                        break
                else:
                    raise SolverFailure(f"Picard not converged in {config.picard_maxit} iterations")
            except BaseException:
                rigid.truncate(n - 1)
                raise
            dv = max(np.abs(z[cs.sA] - A_g).max(), np.abs(z[cs.sOm] - Om_g).max())
            vscale = max(np.abs(z[cs.sA]).max(), np.abs(z[cs.sOm]).max(), 1e-300)
            if dv <= config.geom_tol * vscale or dv == 0:
                break
            rigid.truncate(n - 1)
            A_g, Om_g = z[cs.sA].copy(), z[cs.sOm].copy()
        else:
            raise SolverFailure(f"body velocities not converged in {config.geom_maxit} re-flows")
        qt.commit(flowed)
        nflow, ntd = nt.trial(rigid, n)
        nt.commit(nflow)
        state["td"] = td
        ugap = None
        if config.check_uniqueness:
            sysm = step_system(problem, td, td_old, z_old, z, dt, base)
            z2, _, _ = fixed_point(problem, sysm, z_old, config, ref)
            ugap = problem.norm(z2 - z) / max(problem.norm(z), 1e-300)
        p_rows, f_rows = rigid_balance(problem, td, z, z, P)
        traj.records.append(StepRecord(rigid_momentum=p_rows, rigid_force=f_rows,
            t=rigid.t[n], dt=dt, z=z, P=P, q=rigid.q[n].copy(), Q=rigid.Q[n].copy(),
            energy=energy(problem, td, z), dissipation=dissipation(problem, td, z),
            X_nodes=ntd.X, F_nodes=ntd.F, iterations=first["iterations"], mu=first["mu"],
            distances=first["distances"], picard=pic, geometry_iterations=git,
            residual=info["residual"], uniqueness_gap=ugap, gap=body_wall_gap(problem, rigid.q[n]),
            wall_time=time.perf_counter() - t0,
            reference_t=None if ref is None or not _same_dt(ref.dt, dt) else ref.t_ref))
        if first["mu_hat"] > config.rebase_mu:
            state["ref"] = problem.reference(dt, td)
        if progress:
            progress(traj)

    def advance(dt, depth):
        try:
            one_step(dt)
            return
        except SolverFailure as exc:
            ref = state["ref"]
            if ref is None or not _same_dt(ref.dt, dt) or ref.t_ref != state["td"].t:
                log.info("rebasing the left operator at t=%g: %s", state["td"].t, exc)
                state["ref"] = problem.reference(dt, state["td"])
                try:
                    one_step(dt)
                    return
                except SolverFailure as exc2:
                    exc = exc2
            if depth >= config.max_bisect:
                raise SolverFailure(f"step at t={traj.records[-1].t:.6g} failed after "
                                    f"{depth} bisections: {exc}") from exc
            log.info("bisecting step at t=%g (dt=%g): %s", traj.records[-1].t, dt, exc)
            state["ref"] = None
            advance(dt / 2, depth + 1)
            advance(dt / 2, depth + 1)

    nsteps = int(round(config.T / config.dt))
    for _ in range(nsteps):
        advance(config.dt, 0)
    return traj


# --------------------------------------------------------------- linear solves

def _fixed_point_rebasing(problem, sysm, z_init, config, ref, td_start):
    """fixed_point; on failure retry once with the left operator frozen at ``td_start``."""
    try:
        z, P, info = fixed_point(problem, sysm, z_init, config, ref)
    except SolverFailure:
        if ref is not None and ref.t_ref == td_start.t and _same_dt(ref.dt, sysm.dt):
            raise
        ref = problem.reference(sysm.dt, td_start)
        z, P, info = fixed_point(problem, sysm, z_init, config, ref)
    return z, P, info, ref


def extension_state(problem: Problem, A, Omega) -> np.ndarray:
    """Coupled vector of the divergence-free extension of A + Omega x y."""
    cs = problem.cs
    return cs.restrict(cs.extension_field(A, Omega, problem.cutoff), A, Omega)


def solve_linear(problem: Problem, config: SolverConfig, z0, rigid: RigidTrajectory,
                 z_tilde=None, keep_transforms: bool = False, progress=None) -> Trajectory:
    """Linearized problem on a prescribed motion.

    The transform follows ``rigid``; ``z_tilde(n)`` gives the linearization field
    at step n (default: the extension of the prescribed body velocities).  The
    time grid is the one of ``rigid``; a failing fixed point is reported, not split.
    """
    if z_tilde is None:
        def z_tilde(n):
            return extension_state(problem, rigid.A[n], rigid.Omega[n])
    qt, nt = problem.trackers()
    td_old = qt.initial(rigid)
    traj = Trajectory(problem, config, rigid)
    zt0 = z_tilde(0)
    rec0 = _initial_record(problem, rigid, np.asarray(z0, dtype=float), td_old, nt.initial(rigid),
                           keep_transforms, zt0)
    rec0.z_tilde = zt0
    traj.records.append(rec0)
    ref = None
    for n in range(1, len(rigid)):
        t0 = time.perf_counter()
        _check_hypothesis(problem, rigid.q[n], config)
        flowed, td = qt.trial(rigid, n)
        qt.commit(flowed)
        nflow, ntd = nt.trial(rigid, n)
        nt.commit(nflow)
        dt = rigid.t[n] - rigid.t[n - 1]
        zt = z_tilde(n)
        z_old = traj.records[-1].z
        sysm = step_system(problem, td, td_old, z_old, zt, dt)
        z, P, info, ref = _fixed_point_rebasing(problem, sysm, z_old, config, ref, td_old)
        ref_t = None if ref is None else ref.t_ref
        if info["mu_hat"] > config.rebase_mu:
            ref = problem.reference(dt, td)
        p_rows, f_rows = rigid_balance(problem, td, z, zt, P)
        traj.records.append(StepRecord(rigid_momentum=p_rows, rigid_force=f_rows,
            t=rigid.t[n], dt=dt, z=z, P=P, q=rigid.q[n].copy(), Q=rigid.Q[n].copy(),
            energy=energy(problem, td, z), dissipation=dissipation(problem, td, z),
            X_nodes=ntd.X, F_nodes=ntd.F, iterations=info["iterations"], mu=info["mu"],
            distances=info["distances"], picard=1, geometry_iterations=1,
            residual=info["residual"], gap=body_wall_gap(problem, rigid.q[n]),
            wall_time=time.perf_counter() - t0, td=td if keep_transforms else None, z_tilde=zt,
            reference_t=ref_t))
        td_old = td
        if progress:
            progress(traj)
    return traj


def _metric_rate_tensor(td: TransformData) -> np.ndarray:
    C = np.zeros((td.npoints, 12, 12))
    C[:, 9:, 9:] = td.dgdt
    return C


def _apply_T(problem: Problem, C, z) -> np.ndarray:
    cs = problem.cs
    return cs.T.T @ problem.th.apply_form(C, cs.expand(z)).ravel()


def solve_time_derivative(l: int, base: Trajectory, config: SolverConfig | None = None):
    """Candidate for (t dU/dt, t dP/dt, t dA/dt, t dOmega/dt) from the l = 1 problem.

    The base weak system reads (m z)' + k z + (BT)^T P = 0 with
    m = G-weighted mass (+ rigid mass) and k = a_G + c_V - (frame rate) + gyroscopic.
    Differentiating once and multiplying by t, U* = t z' solves
    (m U*)' + k U* + (BT)^T P* = m z' - t [(m' z)' + k' z],  U*(0) = 0,
    where z', (m' z)' and k' come from centred differences of the cached base
    steps (m' uses the exact metric rate).  Returns a list of (t, z*, P*) for the
    interior steps 1 .. N-2 of a uniformly stepped base.
    """
    if l != 1:
        raise NotImplementedError("only l = 1 is implemented")
    problem = base.problem
    config = config or base.config
    recs = base.records
    if len(recs) < 3 or any(r.td is None or r.z_tilde is None for r in recs):
        raise ValueError("solve_time_derivative needs a base run with cached transforms "
                         "(solve_linear(..., keep_transforms=True))")
    dts = np.diff([r.t for r in recs])
    if np.abs(dts - dts[0]).max() > 1e-12 * dts[0]:
        raise ValueError("base run must be uniformly stepped")
    dt = float(dts[0])
    cs = problem.cs
    J, mass = problem.J, problem.body.mass

    def k_apply(n, z):
        r = recs[n]
        V = transport_velocity_ref(problem, r.td, r.z_tilde)
        C = form_A(r.td) + form_transport_skew(V, r.td) - form_frame_rate(r.td)
        out = _apply_T(problem, C, z)
        W = skew(r.z_tilde[cs.sOm])
        out[cs.sA] += mass * W @ z[cs.sA]
        out[cs.sOm] += W @ J @ z[cs.sOm]
        return out

    def m_apply(n, z):
        out = _apply_T(problem, form_M(recs[n].td), z)
        out[cs.sA] += mass * z[cs.sA]
        out[cs.sOm] += J @ z[cs.sOm]
        return out

    mdot_z = [_apply_T(problem, _metric_rate_tensor(r.td), r.z) for r in recs]
    out = [(recs[0].t, np.zeros(cs.nz), np.zeros(problem.th.npressure))]
    z_star = np.zeros(cs.nz)
    ref = None
    for n in range(1, len(recs) - 1):
        r = recs[n]
        zdot = (recs[n + 1].z - recs[n - 1].z) / (2 * dt)
        dmz = (mdot_z[n + 1] - mdot_z[n - 1]) / (2 * dt)
        dk = (k_apply(n + 1, r.z) - k_apply(n - 1, r.z)) / (2 * dt)
        src = m_apply(n, zdot) - r.t * (dmz + dk)
        V = transport_velocity_ref(problem, r.td, r.z_tilde)
        C = (form_M(r.td) / dt + form_A(r.td) + form_transport_skew(V, r.td)
             - form_frame_rate(r.td))
        known = m_apply(n - 1, z_star) / dt + src
        sysm = StepSystem(C, _rigid_block(problem, dt, r.z_tilde[cs.sOm]), known, dt)
        z_star, P_star, info, ref = _fixed_point_rebasing(problem, sysm, z_star, config, ref,
                                                           recs[n - 1].td)
        if info["mu_hat"] > config.rebase_mu:
            ref = problem.reference(dt, r.td)
        out.append((r.t, z_star.copy(), P_star))
    return out
