"""Command line: fsirigid {run, verify, derive, mesh-info, diag}.

Exit codes: 0 success, 1 a contract failed, 2 invalid input, 3 body-wall gap
hypothesis violated, 4 solver failure.  FSIRIGID_OUT overrides the default
output root.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .scenario import (EXIT_CONFIG, EXIT_CONTRACT, EXIT_OK, EXIT_SOLVER, Scenario, ScenarioError,
                       derive, preset, run, verify)
from .solver import SolverFailure


def _out_root() -> Path:
    return Path(os.environ.get("FSIRIGID_OUT", "runs"))


def _set(d: dict, key: str, value):
    d = dict(d)
    d[key] = value
    return d


def _scenario_from_args(args) -> Scenario:
    if args.scenario:
        scn = Scenario.load(args.scenario)
    else:
        scn = preset(args.preset or "rest")
    d = scn.to_dict()
    if args.level is not None:
        d["level"] = args.level
    for key in ("dt", "T", "fp_tol", "gap_delta", "s", "r"):
        v = getattr(args, key, None)
        if v is not None:
            d["solver"] = _set(d["solver"], key, v)
    if args.s is not None or args.r is not None:
        d["diagnostics"] = {**d["diagnostics"], **{k: getattr(args, k) for k in ("s", "r")
                                                   if getattr(args, k) is not None}}
    if args.uniqueness:
        d["solver"] = _set(d["solver"], "check_uniqueness", True)
        d["diagnostics"] = _set(d["diagnostics"], "uniqueness", True)
    if args.leibniz:
        d["diagnostics"] = _set(d["diagnostics"], "leibniz", True)
    if args.vtk_stride is not None:
        d["output"] = _set(d["output"], "vtk_stride", args.vtk_stride)
    return Scenario.from_dict(d)


def cmd_run(args) -> int:
    try:
        scn = _scenario_from_args(args)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else _out_root() / scn.name
    if args.dump:
        scn.dump(args.dump)

    def progress(traj):
        r = traj.records[-1]
        if not args.quiet:
            mu = max(r.mu) if r.mu else 0.0
            print(f"t={r.t:.4f} E={r.energy:.6e} it={r.iterations} mu={mu:.3f} "
                  f"gap={r.gap:.4f} ({r.wall_time:.2f}s)", flush=True)

    code = run(scn, out, progress=progress)
    man = json.loads((out / "manifest.json").read_text())
    print(f"{man['status']}: {man['message'] or 'all contracts passed'} -> {out}")
    return code


def cmd_verify(args) -> int:
    try:
        rep = verify(args.baseline, args.run, rtol=args.rtol, atol=args.atol)
    except (OSError, KeyError, ValueError) as exc:
        print(f"cannot compare runs: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(rep, indent=2))
    return EXIT_OK if rep["ok"] else EXIT_CONTRACT


def cmd_derive(args) -> int:
    try:
        res = derive(args.l, args.run, args.out, steps=args.steps)
    except (ScenarioError, OSError, KeyError, NotImplementedError, ValueError) as exc:
        print(f"cannot derive: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(json.dumps(res, indent=2))
    return EXIT_OK


def cmd_mesh_info(args) -> int:
    from .fem import TaylorHoodSpace, inf_sup_estimate
    from .mesh import build_shell_mesh, write_mesh
    if not 0 < args.R_in < args.R_out:
        print("need 0 < R_in < R_out", file=sys.stderr)
        return EXIT_CONFIG
    mesh = build_shell_mesh(args.R_in, args.R_out, args.level)
    info = mesh.info()
    th = TaylorHoodSpace(mesh)
    info.update(p2_nodes=th.nnodes, pressure_dofs=th.npressure, quadrature_points=th.nquad,
                volume=th.volume())
    if args.inf_sup:
        info["inf_sup"] = inf_sup_estimate(th)
    if args.write:
        write_mesh(mesh, args.write)
    print(json.dumps(info, indent=2, default=float))
    return EXIT_OK


def cmd_diag(args) -> int:
    d = Path(args.run)
    try:
        summary = json.loads((d / "diagnostics.json").read_text())
        man = json.loads((d / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read run directory: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    summary["status"] = man["status"]
    print(json.dumps(summary, indent=2))
    return EXIT_OK if summary.get("passed") and man["status"] == "ok" else EXIT_CONTRACT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fsirigid", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="run a scenario file or preset")
    src = p.add_mutually_exclusive_group()
    src.add_argument("scenario", nargs="?", help="scenario JSON file")
    src.add_argument("--preset", choices=["rest", "spin-down", "wall-approach"])
    p.add_argument("--out", help="output directory")
    p.add_argument("--level", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--fp-tol", dest="fp_tol", type=float)
    p.add_argument("--gap-delta", dest="gap_delta", type=float)
    p.add_argument("--s", type=float, help="Prodi-Serrin space exponent")
    p.add_argument("--r", type=float, help="Prodi-Serrin time exponent")
    p.add_argument("--uniqueness", action="store_true", help="also check the uniqueness gap")
    p.add_argument("--leibniz", action="store_true", help="also run the Leibniz checks")
    p.add_argument("--vtk-stride", dest="vtk_stride", type=int)
    p.add_argument("--dump", help="write the effective scenario here")
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="compare two run directories")
    p.add_argument("baseline")
    p.add_argument("run")
    p.add_argument("--rtol", type=float, default=1e-8)
    p.add_argument("--atol", type=float, default=1e-12)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("derive", help="time-derivative solve on a finished run")
    p.add_argument("run")
    p.add_argument("-l", type=int, default=1)
    p.add_argument("--steps", type=int, help="only the first STEPS steps")
    p.add_argument("--out")
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("mesh-info", help="mesh and space sizes")
    p.add_argument("--level", type=int, default=1)
    p.add_argument("--R-in", dest="R_in", type=float, default=0.5)
    p.add_argument("--R-out", dest="R_out", type=float, default=1.5)
    p.add_argument("--inf-sup", dest="inf_sup", action="store_true")
    p.add_argument("--write", help="write the mesh file here")
    p.set_defaults(func=cmd_mesh_info)

    p = sub.add_parser("diag", help="print the diagnostics summary of a run")
    p.add_argument("run")
    p.set_defaults(func=cmd_diag)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
