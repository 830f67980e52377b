import numpy as np
import pytest

from fsirigid.diagnostics import (boundary_traces, build_report, check_exponents, energy_report,
                                  hypothesis_monitor, leibniz_order, leibniz_residual,
                                  momentum_residual, prodi_serrin, prodi_serrin_two_resolutions,
                                  uniqueness_gap)
from fsirigid.solver import Problem, SolverConfig, solve_nonlinear


@pytest.fixture(scope="module")
def pb():
    return Problem(level=0)


@pytest.fixture(scope="module")
def rest(pb):
    return solve_nonlinear(pb, SolverConfig(dt=1e-2, T=0.03))


@pytest.fixture(scope="module")
def spin(pb):
    return solve_nonlinear(pb, SolverConfig(dt=1e-2, T=0.06, check_uniqueness=True),
                           Omega0=(0, 0, 1))


def test_exponent_admissibility():
    check_exponents(4, 8)
    check_exponents(5, 5)
    for s, r in ((2, 8), (2, -4), (3, 1e300), (3, np.inf), (4, 4)):
        with pytest.raises(ValueError):
            check_exponents(s, r)


def test_zero_solution_gives_zero_diagnostics(rest):
    er = energy_report(rest)
    assert not er["energy"].any() and not er["slack"].any()
    assert prodi_serrin(rest) == 0
    mom = momentum_residual(rest)
    assert not mom["r_a"].any() and not mom["r_omega"].any()
    assert uniqueness_gap(rest)["gap"] == 0
    tr = boundary_traces(rest, len(rest) - 1)
    assert tr["no_slip"] == 0 and tr["rigid"] == 0
    res = leibniz_residual(rest)
    assert all(res[k] == 0 for k in ("L", "M", "N", "G", "pressure_fd", "pressure_exact"))


def test_stationary_body_gap_is_constant(pb, rest):
    mon = hypothesis_monitor(rest, delta=0.1)
    assert np.allclose(mon["gap"], pb.mesh.R_out - pb.mesh.R_in)
    assert mon["gap_ok"].all() and mon["max_dadt"] == 0


def test_spin_down_report(spin):
    rep = build_report(spin, delta=0.1)
    assert rep.passed(), rep.contracts
    assert np.all(np.diff(rep.energy) < 0)
    assert all(np.isfinite(v) for v in rep.slack)


def test_leibniz_and_pressure_orders(spin):
    out = leibniz_order(spin)
    for k in ("L", "M", "N", "G", "pressure_fd"):
        assert 3 <= out[k]["ratio"] <= 5, (k, out[k])
    assert out["pressure_exact"] < 1e-12


def test_prodi_serrin_resolutions_agree(spin):
    coarse, fine, rel = prodi_serrin_two_resolutions(spin)
    assert coarse > 0 and rel < 0.01


def test_uniqueness_gap_is_small(spin):
    assert uniqueness_gap(spin)["relative"] < 1e-8


def test_traces_on_moving_body(spin):
    for n in range(len(spin)):
        tr = boundary_traces(spin, n)
        assert tr["no_slip"] < 1e-14 and tr["rigid"] < 1e-12


def test_report_files(spin, tmp_path):
    rep = build_report(spin)
    rep.write(tmp_path)
    lines = (tmp_path / "energy.csv").read_text().splitlines()
    assert lines[0].startswith("# fsirigid-diagnostics")
    assert len(lines) == 2 + len(spin)
    assert (tmp_path / "diagnostics.json").exists()
