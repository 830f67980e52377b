"""Scenario files, run orchestration and run artifacts.

A scenario is a JSON document::

    {"schema": "fsirigid-scenario v1", "name": "spin-down", "mode": "nonlinear",
     "level": 1, "geometry": {...}, "initial": {"A0": [..], "Omega0": [..]},
     "prescribed": null, "solver": {...}, "diagnostics": {...}, "output": {...}}

``mode`` is "nonlinear" (coupled problem) or "linear" (body motion prescribed
by ``prescribed`` = {"A": .., "Omega": ..}, linearization about the extension
of the body velocity).  A run directory holds manifest.json, rigid.csv,
fields.npz, the diagnostics CSVs and VTK snapshots.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import build_report, check_exponents, leibniz_order, uniqueness_gap
from .mesh import write_vtk
from .rigid_motion import RigidTrajectory
from .solver import (Problem, SolverConfig, SolverFailure, Trajectory, initial_state, solve_linear,
                     solve_nonlinear, solve_time_derivative)
from .transform import GapHypothesisViolated

log = logging.getLogger(__name__)

SCENARIO_SCHEMA = "fsirigid-scenario v1"
MANIFEST_SCHEMA = "fsirigid-manifest v1"
FIELDS_SCHEMA = "fsirigid-fields v1"

EXIT_OK, EXIT_CONTRACT, EXIT_CONFIG, EXIT_GAP, EXIT_SOLVER = 0, 1, 2, 3, 4


class ScenarioError(ValueError):
    pass


DEFAULT_GEOMETRY = {"R_in": 0.5, "R_out": 1.5, "delta_in": 0.1, "delta_out": 0.4,
                    "q0": [0.0, 0.0, 0.0]}


@dataclass
class Scenario:
    name: str = "custom"
    mode: str = "nonlinear"
    level: int = 1
    geometry: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_GEOMETRY))
    initial: dict = field(default_factory=lambda: {"A0": [0.0, 0.0, 0.0],
                                                   "Omega0": [0.0, 0.0, 0.0]})
    prescribed: dict | None = None
    solver: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=lambda: {"s": 4.0, "r": 8.0, "leibniz": False,
                                                       "uniqueness": False})
    output: dict = field(default_factory=lambda: {"vtk_stride": 10, "field_stride": 1})

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------ checks
    def validate(self) -> None:
        if self.mode not in ("nonlinear", "linear"):
            raise ScenarioError(f"mode must be 'nonlinear' or 'linear', got {self.mode!r}")
        if not isinstance(self.level, int) or not 0 <= self.level <= 3:
            raise ScenarioError(f"mesh level must be an integer in 0..3, got {self.level!r}")
        g = {**DEFAULT_GEOMETRY, **self.geometry}
        extra = set(self.geometry) - set(DEFAULT_GEOMETRY)
        if extra:
            raise ScenarioError(f"unknown geometry keys: {sorted(extra)}")
        if not 0 < g["R_in"] < g["R_out"]:
            raise ScenarioError("geometry needs 0 < R_in < R_out")
        if not (g["delta_in"] > 0 and g["delta_out"] > 0
                and g["R_in"] + g["delta_in"] < g["R_out"] - g["delta_out"]):
            raise ScenarioError("cutoff layers must be positive and must not overlap")
        if len(g["q0"]) != 3:
            raise ScenarioError("q0 must have three components")
        self.geometry = g
        for key in ("A0", "Omega0"):
            if len(self.initial.get(key, [0, 0, 0])) != 3:
                raise ScenarioError(f"initial {key} must have three components")
        if self.mode == "linear":
            if not self.prescribed or set(self.prescribed) != {"A", "Omega"}:
                raise ScenarioError("linear mode needs prescribed = {'A': [..], 'Omega': [..]}")
        try:
            self.config()
        except ValueError as exc:
            raise ScenarioError(str(exc)) from exc
        d = self.diagnostics
        try:
            check_exponents(float(d.get("s", 4.0)), float(d.get("r", 8.0)))
        except ValueError as exc:
            raise ScenarioError(str(exc)) from exc
        for key in ("vtk_stride", "field_stride"):
            v = self.output.get(key, 1)
            if not isinstance(v, int) or v < 0:
                raise ScenarioError(f"output {key} must be a non-negative integer")

    def config(self) -> SolverConfig:
        return SolverConfig.from_dict(self.solver)

    def problem(self) -> Problem:
        g = self.geometry
        return Problem(level=self.level, R_in=g["R_in"], R_out=g["R_out"],
                       delta_in=g["delta_in"], delta_out=g["delta_out"], q0=g["q0"])

    # ------------------------------------------------------------- io
    def to_dict(self) -> dict:
        return {"schema": SCENARIO_SCHEMA, "name": self.name, "mode": self.mode,
                "level": self.level, "geometry": self.geometry, "initial": self.initial,
                "prescribed": self.prescribed, "solver": self.solver,
                "diagnostics": self.diagnostics, "output": self.output}

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        schema = d.pop("schema", SCENARIO_SCHEMA)
        if schema != SCENARIO_SCHEMA:
            raise ScenarioError(f"unsupported scenario schema {schema!r}")
        known = {"name", "mode", "level", "geometry", "initial", "prescribed", "solver",
                 "diagnostics", "output"}
        extra = set(d) - known
        if extra:
            raise ScenarioError(f"unknown scenario keys: {sorted(extra)}")
        if "preset" in d:
            raise ScenarioError("use preset() for presets")
        return cls(**d)

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Scenario":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
        if "preset" in d:
            base = preset(d.pop("preset")).to_dict()
            for k, v in d.items():
                if isinstance(v, dict) and isinstance(base.get(k), dict):
                    base[k] = {**base[k], **v}
                else:
                    base[k] = v
            d = base
        return cls.from_dict(d)


def preset(name: str, **overrides) -> Scenario:
    """Built-in scenarios: rest, spin-down, wall-approach."""
    if name == "rest":
        d = {"name": "rest", "solver": {"dt": 1e-2, "T": 0.1}}
    elif name == "spin-down":
        d = {"name": "spin-down", "initial": {"A0": [0, 0, 0], "Omega0": [0, 0, 1]},
             "solver": {"dt": 1e-2, "T": 1.0}}
    elif name == "wall-approach":
        # the body is pushed towards the wall; the run must stop while the gap
        # is still above gap_delta / 2
        d = {"name": "wall-approach", "mode": "linear",
             "initial": {"A0": [0.5, 0, 0], "Omega0": [0, 0, 0]},
             "prescribed": {"A": [0.5, 0, 0], "Omega": [0, 0, 0]},
             "solver": {"dt": 2e-2, "T": 2.0, "gap_delta": 0.7}}
    else:
        raise ScenarioError(f"unknown preset {name!r} (rest, spin-down, wall-approach)")
    d.update(overrides)
    return Scenario(**d)


# ---------------------------------------------------------------- artifacts

def write_rigid_csv(traj: Trajectory, path) -> None:
    traj.rigid.to_csv(path)


def write_fields(traj: Trajectory, path, stride: int = 1) -> None:
    idx = list(range(0, len(traj), max(stride, 1)))
    np.savez(path, schema=np.array(FIELDS_SCHEMA), stride=np.array(stride),
             t=np.array([traj[n].t for n in idx]), z=np.array([traj[n].z for n in idx]),
             P=np.array([traj[n].P for n in idx]))


def write_snapshots(traj: Trajectory, outdir, stride: int) -> list:
    if stride <= 0:
        return []
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    pb = traj.problem
    nv = pb.mesh.nvertices
    paths = []
    for n in range(0, len(traj), stride):
        r = traj[n]
        u = traj.physical_velocity_nodes(n)[:nv]
        p = outdir / f"step_{n:05d}.vtk"
        write_vtk(p, r.X_nodes[:nv], pb.mesh.tets, {"velocity": u, "pressure": r.P},
                  title=f"fsirigid t={r.t:.6g}")
        paths.append(p.name)
    return paths


def _manifest(scn: Scenario, traj: Trajectory | None, status: str, message: str,
              contracts: dict, wall: float) -> dict:
    m = {"schema": MANIFEST_SCHEMA, "version": __version__, "status": status,
         "message": message, "scenario": scn.to_dict(), "contracts": contracts,
         "wall_time": wall}
    if traj is not None:
        tm = traj.manifest()
        m["problem"] = tm["problem"]
        m["config"] = tm["config"]
        m["steps"] = tm["steps"]
    return m


def run(scn: Scenario, outdir, progress=None) -> int:
    """Execute a scenario and write its artifacts; returns the exit code."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    cfg = scn.config()
    pb = scn.problem()
    holder = {}

    def track(traj):
        holder["traj"] = traj
        if progress:
            progress(traj)

    status, message, code = "ok", "", EXIT_OK
    try:
        A0, Om0 = scn.initial.get("A0", [0, 0, 0]), scn.initial.get("Omega0", [0, 0, 0])
        if scn.mode == "nonlinear":
            traj = solve_nonlinear(pb, cfg, A0, Om0, progress=track)
        else:
            nsteps = int(round(cfg.T / cfg.dt))
            rig = RigidTrajectory.prescribed(pb.q0, scn.prescribed["A"], scn.prescribed["Omega"],
                                             cfg.dt, nsteps)
            traj = solve_linear(pb, cfg, initial_state(pb, A0, Om0), rig, progress=track)
        holder["traj"] = traj
    except GapHypothesisViolated as exc:
        status, message, code = "gap", str(exc), EXIT_GAP
    except SolverFailure as exc:
        status, message, code = "solver", str(exc), EXIT_SOLVER
    traj = holder.get("traj")
    contracts = {}
    if traj is not None and len(traj) > 0:
        d = scn.diagnostics
        rep = build_report(traj, delta=cfg.gap_delta, s=float(d.get("s", 4.0)),
                           r=float(d.get("r", 8.0)))
        if code == EXIT_OK and d.get("leibniz") and len(traj) >= 2:
            rep.leibniz = leibniz_order(traj)
        if code == EXIT_OK and d.get("uniqueness") and scn.mode == "nonlinear":
            ug = uniqueness_gap(traj)
            rep.contracts["uniqueness"] = bool(ug["relative"] <= 10 * max(cfg.fp_tol,
                                                                          cfg.picard_tol))
            rep.leibniz["uniqueness_gap"] = ug["gap"]
        if code == EXIT_GAP:
            # the abort itself is the contract here; the recorded steps stay above delta
            rep.contracts.pop("gap", None)
        rep.write(out)
        contracts = rep.contracts
        write_rigid_csv(traj, out / "rigid.csv")
        write_fields(traj, out / "fields.npz", scn.output.get("field_stride", 1))
        write_snapshots(traj, out / "vtk", scn.output.get("vtk_stride", 0))
        if code == EXIT_OK and not rep.passed():
            status, code = "contract", EXIT_CONTRACT
            message = "failed contracts: " + ", ".join(k for k, v in contracts.items() if not v)
    man = _manifest(scn, traj, status, message, contracts, time.perf_counter() - t0)
    (out / "manifest.json").write_text(json.dumps(man, indent=2, default=_json_default) + "\n")
    return code


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    raise TypeError(f"not serializable: {type(x)}")


# ------------------------------------------------------------------- verify

def _read_csv(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], np.array([[float(v) if v else np.nan for v in r] for r in rows[1:]])


def verify(baseline, rundir, rtol: float = 1e-8, atol: float = 1e-12) -> dict:
    """Field-by-field comparison of two run directories."""
    a, b = Path(baseline), Path(rundir)
    report = {"files": {}, "ok": True}

    def note(name, ok, **info):
        report["files"][name] = {"ok": bool(ok), **info}
        report["ok"] = report["ok"] and bool(ok)

    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    same = ma["status"] == mb["status"] and len(ma.get("steps", [])) == len(mb.get("steps", []))
    note("manifest.json", same, status=(ma["status"], mb["status"]),
         steps=(len(ma.get("steps", [])), len(mb.get("steps", []))))
    for name in ("energy.csv", "fixed_point.csv", "momentum.csv", "rigid.csv"):
        pa, pb_ = a / name, b / name
        if not pa.exists() and not pb_.exists():
            continue
        if not (pa.exists() and pb_.exists()):
            note(name, False, reason="missing in one run")
            continue
        ha, xa = _read_csv(pa)
        hb, xb = _read_csv(pb_)
        if ha != hb or xa.shape != xb.shape:
            note(name, False, reason="header or shape differs")
            continue
        diff = np.abs(xa - xb)
        bad = ~np.isclose(xa, xb, rtol=rtol, atol=atol, equal_nan=True)
        note(name, not bad.any(), max_abs_diff=float(np.nanmax(diff)) if diff.size else 0.0)
    fa, fb = a / "fields.npz", b / "fields.npz"
    if fa.exists() and fb.exists():
        za, zb = np.load(fa)["z"], np.load(fb)["z"]
        if za.shape != zb.shape:
            note("fields.npz", False, reason="shape differs")
        else:
            note("fields.npz", np.allclose(za, zb, rtol=rtol, atol=atol),
                 max_abs_diff=float(np.abs(za - zb).max()) if za.size else 0.0)
    return report


# ------------------------------------------------------------------- derive

def derive(l: int, rundir, outdir=None, steps: int | None = None) -> dict:
    """l = 1 time-derivative solve on a finished run plus its FD-consistency check.

    The base steps are rebuilt by the linearized solve about the stored states
    on the stored rigid motion (the same discrete map), with transforms cached.
    Needs every step stored (field_stride 1).
    """
    rd = Path(rundir)
    man = json.loads((rd / "manifest.json").read_text())
    scn = Scenario.from_dict(man["scenario"])
    f = np.load(rd / "fields.npz")
    if int(f["stride"]) != 1:
        raise ScenarioError("derive needs every step stored (field_stride = 1)")
    z = f["z"]
    pb = scn.problem()
    rig = RigidTrajectory.from_csv(rd / "rigid.csv", pb.q0)
    n = len(z) if steps is None else min(len(z), steps + 1)
    if n < 4:
        raise ScenarioError("derive needs at least three steps")
    rig.truncate(n - 1)
    cfg = scn.config()
    base = solve_linear(pb, cfg, z[0], rig, z_tilde=lambda k: z[k], keep_transforms=True)
    der = solve_time_derivative(l, base, cfg)
    rows = []
    for k in range(1, len(der)):
        t, zs, _ = der[k]
        dtk = base[k + 1].t - base[k].t
        fd = (base[k + 1].z - base[k - 1].z) / (2 * dtk)
        scale = max(pb.norm(fd), 1e-300)
        rows.append((t, pb.norm(zs), pb.norm(zs / t - fd), pb.norm(zs / t - fd) / scale
                     if pb.norm(fd) > 0 else 0.0))
    out = Path(outdir) if outdir else rd / f"derive_l{l}"
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "derivative.csv", "w", newline="") as fh:
        fh.write("# fsirigid-derivative v1\n")
        w = csv.writer(fh)
        w.writerow(["t", "norm_U_star", "fd_residual", "fd_relative"])
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
    np.savez(out / "derivative.npz", schema=np.array("fsirigid-derivative v1"),
             t=np.array([d[0] for d in der]), z=np.array([d[1] for d in der]),
             P=np.array([d[2] for d in der]))
    return {"l": l, "steps": len(der), "max_fd_relative": max(r[3] for r in rows) if rows else 0.0,
            "max_norm": max(r[1] for r in rows) if rows else 0.0}
