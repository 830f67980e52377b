import numpy as np
import pytest

from fsirigid.mesh import BODY, OUTER, build_shell_mesh, read_mesh, write_mesh, write_vtk


@pytest.mark.parametrize("level", [0, 1, 2])
def test_shell_mesh_valid_and_counts(level):
    m = build_shell_mesh(0.5, 1.5, level)
    m.validate()
    assert m.ntets == 120 * 8**level
    assert m.signed_volumes().min() > 0
    r = np.linalg.norm(m.vertices[m.vertex_tags() == BODY], axis=1)
    assert np.allclose(r, 0.5)
    r = np.linalg.norm(m.vertices[m.vertex_tags() == OUTER], axis=1)
    assert np.allclose(r, 1.5)


def test_volume_error_drops_about_fourfold():
    errs = [abs(build_shell_mesh(0.5, 1.5, L).volume() - 4 * np.pi / 3 * (1.5**3 - 0.5**3))
            for L in (1, 2)]
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_offset_center():
    m = build_shell_mesh(0.4, 1.0, 1, center=(0.2, -0.1, 0.3))
    m.validate()
    r = np.linalg.norm(m.vertices - m.center, axis=1)
    assert r.min() == pytest.approx(0.4) and r.max() == pytest.approx(1.0)


def test_ascii_round_trip(tmp_path):
    m = build_shell_mesh(0.5, 1.5, 1, center=(0.1, 0.0, 0.0))
    write_mesh(m, tmp_path / "shell.mesh")
    m2 = read_mesh(tmp_path / "shell.mesh")
    assert np.array_equal(m.vertices, m2.vertices)
    assert np.array_equal(m.tets, m2.tets)
    assert np.array_equal(m.boundary_tags, m2.boundary_tags)
    assert np.array_equal(m.center, m2.center)
    m2.validate()


def test_read_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.mesh"
    p.write_text("hello\n")
    with pytest.raises(ValueError):
        read_mesh(p)


def test_vtk_output(tmp_path):
    m = build_shell_mesh(0.5, 1.5, 0)
    write_vtk(tmp_path / "m.vtk", m.vertices, m.tets,
              {"u": m.vertices, "tag": m.vertex_tags()})
    text = (tmp_path / "m.vtk").read_text()
    assert f"CELLS {m.ntets} {5 * m.ntets}" in text
    assert "VECTORS u double" in text and "SCALARS tag double 1" in text


@pytest.mark.parametrize("args", [(0.5, 0.5, 0), (0.0, 1.0, 0), (1.0, 0.5, 0), (0.5, 1.0, -1)])
def test_degenerate_input_rejected(args):
    with pytest.raises(ValueError):
        build_shell_mesh(*args)
