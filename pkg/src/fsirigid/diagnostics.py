"""Checks of the identities, inequalities and hypotheses a run must satisfy.

Every function here is a pure function of a finished trajectory (plus
parameters), so they can be re-run in any order.  Signed quantities such as
the energy slack and the body-wall gap are reported as they are, never
clamped.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .fem import EDGES, TaylorHoodSpace
from .mesh import BODY, OUTER
from .operators import (Jet, pack_L, pack_M, pack_N, pack_time_derivatives, pressure_cancellation,
                        pressure_cancellation_td)
from .solver import SolverConfig, Trajectory, solve_linear
from .transform import TransformTracker, flow_step, transform_data_from_flow

SCHEMA = "fsirigid-diagnostics v1"


# ------------------------------------------------------------------- energy

def energy_report(traj: Trajectory) -> dict:
    """Per-step energy, dissipation and the cumulative slack
    E(0) - E(t) - sum dt * 2||D u||^2  (implicit Euler quadrature of the integral)."""
    recs = traj.records
    t = np.array([r.t for r in recs])
    E = np.array([r.energy for r in recs])
    D = np.array([r.dissipation for r in recs])
    work = np.concatenate([[0.0], np.cumsum([r.dt * r.dissipation for r in recs[1:]])])
    slack = E[0] - E - work
    step_slack = np.concatenate([[0.0], E[:-1] - E[1:] - np.array([r.dt for r in recs[1:]]) * D[1:]])
    return {"t": t, "energy": E, "dissipation": D, "slack": slack, "step_slack": step_slack}


# ------------------------------------------------------------- Prodi-Serrin

def check_exponents(s: float, r: float) -> None:
    if not s > 3 or not math.isfinite(s):
        raise ValueError(f"Prodi-Serrin exponent s must lie in (3, inf), got {s}")
    if abs(3.0 / s + 2.0 / r - 1.0) > 1e-12:
        raise ValueError(f"(s, r) = ({s}, {r}) violates 3/s + 2/r = 1")


def prodi_serrin(traj: Trajectory, s: float = 4.0, r: float = 8.0,
                 space: TaylorHoodSpace | None = None) -> float:
    """(int_0^T (int |u|^s dx)^(r/s) dt)^(1/r).

    The physical velocity F U is formed at the mesh nodes, interpolated in P2
    and integrated over the reference fluid domain with the quadrature of
    ``space`` (default: the solver's).  det grad X = 1, so no Jacobian enters.
    Time integral by the trapezoidal rule.
    """
    check_exponents(s, r)
    th = space or traj.problem.th
    vals = []
    for n in range(len(traj)):
        u = th.eval_values(traj.physical_velocity_nodes(n))
        vals.append(float(th.qw @ np.linalg.norm(u, axis=1) ** s) ** (r / s))
    if len(vals) < 2:
        return 0.0
    return float(np.trapezoid(vals, traj.t)) ** (1.0 / r)


def prodi_serrin_two_resolutions(traj: Trajectory, s: float = 4.0, r: float = 8.0):
    """Values with the 14-point and the 64-point element rule, and their relative gap."""
    coarse = prodi_serrin(traj, s, r)
    fine = prodi_serrin(traj, s, r, traj.problem.fine_space())
    rel = abs(coarse - fine) / max(abs(fine), 1e-300) if fine or coarse else 0.0
    return coarse, fine, rel


# --------------------------------------------------------- residual checks

def divergence_residual(traj: Trajectory) -> np.ndarray:
    BT = traj.problem.BT
    return np.array([float(np.abs(BT @ r.z).max()) for r in traj.records])


def momentum_residual(traj: Trajectory) -> dict:
    """Centred residual of the rigid-test-function rows of (m z)' + k z + B^T P = 0.

    Rows 0..2 test with rigid translations (linear momentum), rows 3..5 with
    rigid rotations (angular momentum).  Interior steps only; needs uniform
    steps around each evaluated index.
    """
    recs = traj.records
    t, ra, rw = [], [], []
    for n in range(1, len(recs) - 1):
        h0, h1 = recs[n].t - recs[n - 1].t, recs[n + 1].t - recs[n].t
        if abs(h0 - h1) > 1e-12 * h1:
            continue
        res = ((recs[n + 1].rigid_momentum - recs[n - 1].rigid_momentum) / (2 * h1)
               + recs[n].rigid_force)
        t.append(recs[n].t)
        ra.append(res[:3])
        rw.append(res[3:])
    return {"t": np.array(t), "r_a": np.array(ra).reshape(-1, 3),
            "r_omega": np.array(rw).reshape(-1, 3)}


def uniqueness_gap(traj: Trajectory, config: SolverConfig | None = None) -> dict:
    """Re-run the linearized solve with U~ set to the nonlinear solution on the
    same rigid motion and discretization; report max over steps of the
    difference in the flat weighted norm."""
    pb = traj.problem
    config = config or traj.config
    recs = traj.records
    lin = solve_linear(pb, config, recs[0].z, traj.rigid, z_tilde=lambda n: recs[n].z)
    diffs = np.array([pb.norm(a.z - b.z) for a, b in zip(lin.records, recs)])
    scale = max(pb.norm(r.z) for r in recs)
    return {"gap": float(diffs.max()), "relative": float(diffs.max() / scale) if scale else 0.0,
            "per_step": diffs}


# ----------------------------------------------------- Leibniz / pressure

def _p2_jet(th: TaylorHoodSpace, elems, lam, U) -> Jet:
    """Value, gradient and Hessian of a nodal P2 field at points inside ``elems``."""
    U = np.asarray(U).reshape(th.nnodes, 3)
    G = th.glam[elems]                           # (n, 4, 3)
    n = len(elems)
    phi = np.zeros((n, 10))
    dphi = np.zeros((n, 10, 3))
    hphi = np.zeros((n, 10, 3, 3))
    for i in range(4):
        phi[:, i] = lam[:, i] * (2 * lam[:, i] - 1)
        dphi[:, i] = (4 * lam[:, i] - 1)[:, None] * G[:, i]
        hphi[:, i] = 4 * np.einsum("nj,nk->njk", G[:, i], G[:, i])
    for e, (i, j) in enumerate(EDGES):
        phi[:, 4 + e] = 4 * lam[:, i] * lam[:, j]
        dphi[:, 4 + e] = 4 * (lam[:, j, None] * G[:, i] + lam[:, i, None] * G[:, j])
        hphi[:, 4 + e] = 4 * (np.einsum("nj,nk->njk", G[:, i], G[:, j])
                              + np.einsum("nj,nk->njk", G[:, j], G[:, i]))
    Ue = U[th.elem_dofs[elems]]                  # (n, 10, 3)
    return Jet(np.einsum("na,nai->ni", phi, Ue), np.einsum("naj,nai->nij", dphi, Ue),
               np.einsum("najk,nai->nijk", hphi, Ue))


def _pressure_grad(th: TaylorHoodSpace, elems, P) -> np.ndarray:
    return np.einsum("nak,na->nk", th.glam[elems], np.asarray(P)[th.mesh.tets[elems]])


def default_labels(traj: Trajectory, count: int = 12):
    """Element centroids well inside the transition layer of the cutoff."""
    pb = traj.problem
    mesh = pb.mesh
    cen = mesh.vertices[mesh.tets].mean(axis=1)
    rho = np.linalg.norm(cen - pb.q0, axis=1)
    lo = mesh.R_in + pb.cutoff.delta_in
    hi = mesh.R_out - pb.cutoff.delta_out
    pad = 0.2 * (hi - lo)
    cand = np.flatnonzero((rho > lo + pad) & (rho < hi - pad))
    if len(cand) == 0:
        raise ValueError("no elements inside the cutoff transition layer")
    pick = cand[np.linspace(0, len(cand) - 1, min(count, len(cand))).round().astype(int)]
    return pick, np.full((len(pick), 4), 0.25)


def _transforms_in_step(traj: Trajectory, n: int, times, labels, h_space: float):
    """TransformData (with second derivatives) at the given times inside step n."""
    pb = traj.problem
    rig = traj.rigid
    tr = TransformTracker(labels, pb.cutoff, h=h_space, kind="cube", second=True, q0=pb.q0)
    for k in range(1, n):
        flowed, _ = tr.trial(rig, k)
        tr.commit(flowed)
    out = []
    for t in times:
        tmp = rig.copy()
        tmp.truncate(n - 1)
        tmp.append(t - rig.t[n - 1], rig.A[n], rig.Omega[n])
        X, F = flow_step(tr.X, tr.F, tmp, n, pb.cutoff)
        s = tmp.state(n)
        out.append(transform_data_from_flow(t, labels, X, F, tr.stencil, (s.q, s.Q, s.a, s.omega),
                                            pb.cutoff, second=True))
    return out


def _liveliest_step(traj: Trajectory) -> int:
    E = np.array([r.energy for r in traj.records])
    return 1 + int(np.argmax(E[:-1] + E[1:]))


def leibniz_residual(traj: Trajectory, l: int = 1, h: float | None = None, n: int | None = None,
                     count: int = 12, h_space: float = 1.0 / 32) -> dict:
    """d_t(op U) - op(d_t U) - op_1 U by centred differences of step ``h``.

    Evaluated at the middle of step ``n``, where the rigid velocities are
    frozen and the transform is smooth in time.  The default step is the one
    with the largest mean energy: on a decaying run the late residuals sit at
    roundoff and carry no order information.
    U is the linear-in-time interpolant of the two bracketing states, the
    convecting field of N is U itself.  Also returns the pressure-cancellation
    residual with centred-difference (``pressure_fd``) and exact
    (``pressure_exact``) metric derivatives.  Max-norm over label points.
    """
    if l != 1:
        raise NotImplementedError("Leibniz residuals are implemented for l = 1")
    if len(traj) < 2:
        raise ValueError("need at least one step")
    n = n if n is not None else _liveliest_step(traj)
    r0, r1 = traj.records[n - 1], traj.records[n]
    dt = r1.t - r0.t
    h = h if h is not None else dt / 4
    if not 0 < h < dt / 2:
        raise ValueError("difference step must be positive and below half the time step")
    tm = 0.5 * (r0.t + r1.t)
    times = (tm - h, tm, tm + h)
    pb = traj.problem
    th = pb.th
    elems, lam = default_labels(traj, count)
    labels = np.einsum("na,nai->ni", lam, pb.mesh.vertices[pb.mesh.tets[elems]])
    tds = _transforms_in_step(traj, n, times, labels, h_space)
    J0 = _p2_jet(th, elems, lam, pb.cs.expand(r0.z))
    J1 = _p2_jet(th, elems, lam, pb.cs.expand(r1.z))
    gp0, gp1 = _pressure_grad(th, elems, r0.P), _pressure_grad(th, elems, r1.P)

    def at(t):
        w = (t - r0.t) / dt
        return J0.scale(1 - w) + J1.scale(w), (1 - w) * gp0 + w * gp1

    jets, gps = zip(*[at(t) for t in times])
    dU = Jet(*[(a - b) / (2 * h) for a, b in zip((jets[2].val, jets[2].grad, jets[2].hess),
                                                (jets[0].val, jets[0].grad, jets[0].hess))])
    res = {}
    makers = {"L": lambda k: pack_L(tds[k]), "M": lambda k: pack_M(tds[k]),
              "N": lambda k: pack_N(jets[k].val, tds[k])}
    for name, mk in makers.items():
        packs = [mk(k) for k in range(3)]
        d_of_op = (packs[2].apply(jets[2]) - packs[0].apply(jets[0])) / (2 * h)
        P1 = pack_time_derivatives(packs, h, 1)[0]
        res[name] = float(np.abs(d_of_op - packs[1].apply(dU) - P1.apply(jets[1])).max())
    G = [np.einsum("nij,nj->ni", td.ginv, g) for td, g in zip(tds, gps)]
    dginv = (tds[2].ginv - tds[0].ginv) / (2 * h)
    res["G"] = float(np.abs((G[2] - G[0]) / (2 * h)
                            - np.einsum("nij,nj->ni", tds[1].ginv, (gps[2] - gps[0]) / (2 * h))
                            - np.einsum("nij,nj->ni", dginv, gps[1])).max())
    dg = (tds[2].g - tds[0].g) / (2 * h)
    res["pressure_fd"] = pressure_cancellation(gps[1], tds[1].g, dg, tds[1].ginv, dginv)
    res["pressure_exact"] = pressure_cancellation_td(gps[1], tds[1])
    res["t"] = tm
    res["h"] = h
    return res


def leibniz_order(traj: Trajectory, n: int | None = None, h: float | None = None) -> dict:
    """Residuals at h and h/2 and their ratios (about 4 for a second-order check)."""
    n = n if n is not None else _liveliest_step(traj)
    a = leibniz_residual(traj, 1, h=h, n=n)
    b = leibniz_residual(traj, 1, h=a["h"] / 2, n=n)
    out = {}
    for k in ("L", "M", "N", "G", "pressure_fd"):
        out[k] = {"coarse": a[k], "fine": b[k], "ratio": a[k] / b[k] if b[k] > 0 else math.inf}
    out["pressure_exact"] = max(a["pressure_exact"], b["pressure_exact"])
    return out


# -------------------------------------------------------------- hypotheses

def hypothesis_monitor(traj: Trajectory, delta: float, s: float = 4.0, r: float = 8.0) -> dict:
    """Body-wall gap against ``delta``, finite-difference body accelerations and
    admissibility of the integrability exponents."""
    rows = traj.rigid_rows()
    t = np.array([x[0] for x in rows])
    gap = np.array([rec.gap for rec in traj.records])
    a = np.array([x[3] for x in rows])
    om = np.array([x[4] for x in rows])
    dt = np.diff(t)
    da = np.linalg.norm(np.diff(a, axis=0), axis=1) / dt if len(t) > 1 else np.zeros(0)
    dw = np.linalg.norm(np.diff(om, axis=0), axis=1) / dt if len(t) > 1 else np.zeros(0)
    try:
        check_exponents(s, r)
        admissible = True
    except ValueError:
        admissible = False
    return {"t": t, "gap": gap, "gap_ok": gap > delta, "min_gap": float(gap.min()),
            "dadt": da, "domegadt": dw,
            "max_dadt": float(da.max()) if da.size else 0.0,
            "max_domegadt": float(dw.max()) if dw.size else 0.0,
            "exponents_admissible": admissible}


def boundary_traces(traj: Trajectory, n: int) -> dict:
    """Mapped-back traces at step n: |u| on the outer wall and
    |u - a - omega x (x - q)| on the body surface, at P2 nodes."""
    pb = traj.problem
    r = traj.records[n]
    u = traj.physical_velocity_nodes(n)
    tags = pb.th.node_tags
    x = r.X_nodes
    _, q, Q, a, om = traj.rigid_rows()[n]
    wall = tags == OUTER
    body = tags == BODY
    rigid = a + np.cross(om, x[body] - q)
    return {"no_slip": float(np.abs(u[wall]).max()) if wall.any() else 0.0,
            "rigid": float(np.abs(u[body] - rigid).max()) if body.any() else 0.0,
            "wall_displacement": float(np.abs(x[wall] - pb.th.nodes[wall]).max())}


def pressure_cancellation_step(traj: Trajectory, n: int) -> float:
    """Exact-derivative pressure-cancellation residual at the label points of
    step n (transform rebuilt at t_n)."""
    res = leibniz_residual(traj, 1, n=n)
    return res["pressure_exact"]


# ------------------------------------------------------------------ report

@dataclass
class DiagnosticsReport:
    t: list
    energy: list
    dissipation: list
    slack: list
    step_slack: list
    divergence: list
    gap: list
    mu_hat: list
    uniqueness: list
    prodi_serrin: float | None = None
    momentum: dict = field(default_factory=dict)
    leibniz: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    contracts: dict = field(default_factory=dict)

    def passed(self) -> bool:
        return all(self.contracts.values())

    def summary(self) -> dict:
        d = {"schema": SCHEMA, "passed": self.passed(), "contracts": self.contracts,
             "prodi_serrin": self.prodi_serrin, "traces": self.traces, "leibniz": self.leibniz,
             "min_slack": min(self.slack) if self.slack else 0.0,
             "max_divergence": max(self.divergence) if self.divergence else 0.0,
             "min_gap": min(self.gap) if self.gap else math.nan,
             "max_mu_hat": max(self.mu_hat) if self.mu_hat else 0.0}
        u = [x for x in self.uniqueness if x is not None]
        d["max_uniqueness_gap"] = max(u) if u else None
        return d

    def write(self, outdir) -> None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "energy.csv", "w", newline="") as fh:
            fh.write(f"# {SCHEMA}\n")
            w = csv.writer(fh)
            w.writerow(["t", "energy", "dissipation", "slack", "step_slack", "divergence", "gap"])
            for row in zip(self.t, self.energy, self.dissipation, self.slack, self.step_slack,
                           self.divergence, self.gap):
                w.writerow([repr(float(v)) for v in row])
        with open(out / "fixed_point.csv", "w", newline="") as fh:
            fh.write(f"# {SCHEMA}\n")
            w = csv.writer(fh)
            w.writerow(["t", "mu_hat", "uniqueness_gap"])
            for t, m, u in zip(self.t[1:], self.mu_hat, self.uniqueness[1:]):
                w.writerow([repr(float(t)), repr(float(m)), "" if u is None else repr(float(u))])
        if self.momentum:
            with open(out / "momentum.csv", "w", newline="") as fh:
                fh.write(f"# {SCHEMA}\n")
                w = csv.writer(fh)
                w.writerow(["t", "r_a_x", "r_a_y", "r_a_z", "r_w_x", "r_w_y", "r_w_z"])
                for t, ra, rw in zip(self.momentum["t"], self.momentum["r_a"],
                                     self.momentum["r_omega"]):
                    w.writerow([repr(float(v)) for v in (t, *ra, *rw)])
        (out / "diagnostics.json").write_text(json.dumps(_jsonable(self.summary()), indent=2))


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


def build_report(traj: Trajectory, delta: float | None = None, s: float = 4.0, r: float = 8.0,
                 with_leibniz: bool = False, slack_tol: float = 1e-8) -> DiagnosticsReport:
    """All cheap diagnostics of a run plus contract flags.

    Contracts: relative energy slack >= -slack_tol, every entry finite, gap above
    ``delta`` (if given) and mu_hat < 1.
    """
    er = energy_report(traj)
    div = divergence_residual(traj)
    E0 = er["energy"][0]
    mom = momentum_residual(traj) if len(traj) >= 3 else {}
    traces = boundary_traces(traj, len(traj) - 1)
    mu = traj.mu_hat()
    rep = DiagnosticsReport(
        t=er["t"].tolist(), energy=er["energy"].tolist(), dissipation=er["dissipation"].tolist(),
        slack=er["slack"].tolist(), step_slack=er["step_slack"].tolist(), divergence=div.tolist(),
        gap=[rec.gap for rec in traj.records], mu_hat=mu.tolist(),
        uniqueness=[rec.uniqueness_gap for rec in traj.records],
        prodi_serrin=prodi_serrin(traj, s, r), momentum=mom, traces=traces)
    if with_leibniz and len(traj) >= 2 and any(rec.z.any() for rec in traj.records):
        rep.leibniz = leibniz_order(traj)
    tol = slack_tol * max(E0, 1e-300)
    contracts = {
        "energy_slack": bool(min(er["step_slack"].min(), er["slack"].min()) >= -tol),
        "finite": bool(np.all(np.isfinite(er["energy"])) and np.all(np.isfinite(div))),
        "contraction": bool(np.all(mu < 1)),
    }
    if delta is not None:
        contracts["gap"] = bool(np.all(np.array(rep.gap) > delta))
    rep.contracts = contracts
    return rep


def report_dict(rep: DiagnosticsReport) -> dict:
    return _jsonable(asdict(rep))
