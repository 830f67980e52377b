"""Tetrahedral mesh of a spherical shell R_in < |y - c| < R_out.

Built from an icosphere extruded through radial layers.  Each prism is cut into
three tetrahedra by the sorted-global-index rule, which makes the cuts of shared
quadrilateral faces agree between neighbouring prisms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

OUTER, BODY = 1, 2
TAG_NAMES = {OUTER: "outer", BODY: "body"}


def icosphere(level: int):
    """Unit icosphere: vertices (n, 3) and triangles (20 4^level, 3)."""
    p = (1 + 5**0.5) / 2
    V = [(-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0), (0, -1, p), (0, 1, p),
         (0, -1, -p), (0, 1, -p), (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1)]
    F = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in V]
    faces = [tuple(f) for f in F]
    for _ in range(level):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(verts), np.array(faces, dtype=np.int64)


@dataclass
class ShellMesh:
    R_in: float
    R_out: float
    level: int
    vertices: np.ndarray
    tets: np.ndarray
    boundary_faces: np.ndarray
    boundary_tags: np.ndarray
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def nvertices(self) -> int:
        return len(self.vertices)

    @property
    def ntets(self) -> int:
        return len(self.tets)

    def signed_volumes(self) -> np.ndarray:
        P = self.vertices[self.tets]
        return np.einsum("ni,ni->n", P[:, 1] - P[:, 0],
                         np.cross(P[:, 2] - P[:, 0], P[:, 3] - P[:, 0])) / 6.0

    def volume(self) -> float:
        return float(self.signed_volumes().sum())

    def exact_volume(self) -> float:
        return 4.0 * np.pi / 3.0 * (self.R_out**3 - self.R_in**3)

    def vertex_tags(self) -> np.ndarray:
        """0 interior, OUTER or BODY per vertex."""
        tags = np.zeros(self.nvertices, dtype=np.int64)
        for t in (OUTER, BODY):
            tags[np.unique(self.boundary_faces[self.boundary_tags == t])] = t
        return tags

    def h(self) -> float:
        """Longest edge."""
        P = self.vertices[self.tets]
        return float(max(np.linalg.norm(P[:, i] - P[:, j], axis=1).max()
                         for i in range(4) for j in range(i + 1, 4)))

    def validate(self) -> None:
        vol = self.signed_volumes()
        if (vol <= 0).any():
            raise ValueError(f"{int((vol <= 0).sum())} inverted or degenerate tetrahedra")
        # every face is shared by two tets or lies on the tagged boundary
        faces = np.sort(self.tets[:, [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]].reshape(-1, 3), axis=1)
        uniq, counts = np.unique(faces, axis=0, return_counts=True)
        if counts.max() > 2:
            raise ValueError("non-manifold face")
        bnd = uniq[counts == 1]
        tagged = np.sort(self.boundary_faces, axis=1)
        if len(bnd) != len(tagged) or not np.array_equal(
                np.unique(bnd, axis=0), np.unique(tagged, axis=0)):
            raise ValueError("boundary faces and tags disagree (non-conforming mesh)")

    def info(self) -> dict:
        return {"R_in": self.R_in, "R_out": self.R_out, "level": self.level,
                "vertices": self.nvertices, "tets": self.ntets,
                "boundary_faces": {TAG_NAMES[t]: int((self.boundary_tags == t).sum()) for t in TAG_NAMES},
                "volume": self.volume(), "exact_volume": self.exact_volume(),
                "min_signed_volume": float(self.signed_volumes().min()), "h_max": self.h()}


def build_shell_mesh(R_in: float, R_out: float, level: int, center=(0.0, 0.0, 0.0)) -> ShellMesh:
    """Icosphere level ``level`` with ``2 * 2**level`` radial layers: 120 * 8**level tets."""
    if not (0 < R_in < R_out):
        raise ValueError(f"need 0 < R_in < R_out, got R_in={R_in}, R_out={R_out}")
    if level < 0:
        raise ValueError("level must be non-negative")
    center = np.asarray(center, dtype=float)
    S, tri = icosphere(level)
    ns = len(S)
    nl = 2 * 2**level
    radii = np.linspace(R_in, R_out, nl + 1)
    verts = (radii[:, None, None] * S[None]).reshape(-1, 3) + center
    tets = []
    for k in range(nl):
        lo, hi = k * ns, (k + 1) * ns
        for f in tri:
            a, b, c = np.sort(f)
            A, B, C = lo + a, lo + b, lo + c
            A2, B2, C2 = hi + a, hi + b, hi + c
            tets += [(A, B, C, C2), (A, B, B2, C2), (A, A2, B2, C2)]
    tets = np.array(tets, dtype=np.int64)
    P = verts[tets]
    vol = np.einsum("ni,ni->n", P[:, 1] - P[:, 0], np.cross(P[:, 2] - P[:, 0], P[:, 3] - P[:, 0]))
    flip = vol < 0
    tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()
    bfaces = np.concatenate([tri + nl * ns, tri])
    btags = np.concatenate([np.full(len(tri), OUTER), np.full(len(tri), BODY)])
    mesh = ShellMesh(R_in, R_out, level, verts, tets, bfaces, btags, center)
    return mesh


# -------------------------------------------------------------------- file I/O

MESH_HEADER = "# fsirigid mesh v1"


def write_mesh(mesh: ShellMesh, path) -> None:
    """ASCII: header, geometry line, then vertex, tet and boundary-face blocks."""
    lines = [MESH_HEADER,
             f"geometry {mesh.R_in!r} {mesh.R_out!r} {mesh.level} "
             + " ".join(repr(float(c)) for c in mesh.center),
             f"vertices {mesh.nvertices}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in mesh.vertices]
    lines.append(f"tets {mesh.ntets}")
    lines += [" ".join(str(int(i)) for i in row) for row in mesh.tets]
    lines.append(f"boundary_faces {len(mesh.boundary_faces)}")
    lines += [f"{a} {b} {c} {TAG_NAMES[int(t)]}"
              for (a, b, c), t in zip(mesh.boundary_faces, mesh.boundary_tags)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> ShellMesh:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != MESH_HEADER:
        raise ValueError(f"{path}: not an fsirigid mesh file")
    g = lines[1].split()
    R_in, R_out, level = float(g[1]), float(g[2]), int(g[3])
    center = np.array([float(c) for c in g[4:7]]) if len(g) >= 7 else np.zeros(3)
    pos = 2
    nv = int(lines[pos].split()[1])
    verts = np.array([[float(x) for x in ln.split()] for ln in lines[pos + 1:pos + 1 + nv]])
    pos += 1 + nv
    nt = int(lines[pos].split()[1])
    tets = np.array([[int(x) for x in ln.split()] for ln in lines[pos + 1:pos + 1 + nt]], dtype=np.int64)
    pos += 1 + nt
    nb = int(lines[pos].split()[1])
    inv = {v: k for k, v in TAG_NAMES.items()}
    rows = [ln.split() for ln in lines[pos + 1:pos + 1 + nb]]
    bf = np.array([[int(x) for x in r[:3]] for r in rows], dtype=np.int64).reshape(-1, 3)
    bt = np.array([inv[r[3]] for r in rows], dtype=np.int64)
    return ShellMesh(R_in, R_out, level, verts, tets, bf, bt, center)


def write_vtk(path, points, tets, point_data=None, title="fsirigid") -> None:
    """Legacy-VTK ASCII unstructured grid of linear tetrahedra."""
    point_data = point_data or {}
    out = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {len(points)} double"]
    out += [" ".join(f"{v:.17g}" for v in p) for p in points]
    out.append(f"CELLS {len(tets)} {5 * len(tets)}")
    out += ["4 " + " ".join(str(int(i)) for i in t) for t in tets]
    out.append(f"CELL_TYPES {len(tets)}")
    out += ["10"] * len(tets)
    if point_data:
        out.append(f"POINT_DATA {len(points)}")
        for name, arr in point_data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.ndim == 2 and arr.shape[1] == 3:
                out.append(f"VECTORS {name} double")
                out += [" ".join(f"{v:.17g}" for v in row) for row in arr]
            else:
                out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                out += [f"{v:.17g}" for v in arr.ravel()]
    Path(path).write_text("\n".join(out) + "\n")
