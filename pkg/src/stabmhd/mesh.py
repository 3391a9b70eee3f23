"""Tetrahedral meshes, face/edge connectivity and star macro-agglomeration.

Cells are stored with positive orientation.  All finite element frames, on
the other hand, use the *sorted* local vertex order (ascending global index):
``local face i`` is the face opposite the i-th smallest vertex of the cell and
its vertices appear in ascending order.  Shared entities therefore carry the
same local parametrization from every incident cell.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# local entities of the reference tetrahedron, sorted frame
LOCAL_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
LOCAL_FACES = np.array([(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)])

# boundary tags used by the generators: outward normal direction
TAG_XMIN, TAG_XMAX, TAG_YMIN, TAG_YMAX, TAG_ZMIN, TAG_ZMAX = 1, 2, 3, 4, 5, 6


class MeshError(ValueError):
    pass


class MshParseError(MeshError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _signed_volumes(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    p = vertices[cells]
    return np.linalg.det(p[:, 1:] - p[:, :1]) / 6.0


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming tetrahedral mesh.

    ``boundary_faces`` holds sorted vertex triples, ``boundary_tags`` one
    integer per boundary face.
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_faces: np.ndarray
    boundary_tags: np.ndarray
    name: str = "mesh"

    def __post_init__(self):
        for arr in (self.vertices, self.cells, self.boundary_faces, self.boundary_tags):
            arr.setflags(write=False)
        vol = _signed_volumes(self.vertices, self.cells)
        if np.any(vol <= 0):
            bad = int(np.argmin(vol))
            raise MeshError(f"cell {bad} has non-positive signed volume {vol[bad]:.3e}")

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def sorted_cells(self) -> np.ndarray:
        return np.sort(self.cells, axis=1)

    def volumes(self) -> np.ndarray:
        return _signed_volumes(self.vertices, self.cells)

    def cell_diameters(self) -> np.ndarray:
        p = self.vertices[self.cells]
        d = [np.linalg.norm(p[:, i] - p[:, j], axis=1) for i, j in LOCAL_EDGES]
        return np.max(d, axis=0)

    def inradii(self) -> np.ndarray:
        p = self.vertices[self.cells]
        area = np.zeros(self.num_cells)
        for f in LOCAL_FACES:
            a, b, c = p[:, f[0]], p[:, f[1]], p[:, f[2]]
            area += 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        return 3.0 * self.volumes() / area

    @property
    def h(self) -> float:
        return float(self.cell_diameters().max())

    def shape_regularity(self) -> float:
        """max_E h_E / rho_E (rho_E = inradius)."""
        return float(np.max(self.cell_diameters() / self.inradii()))


# ----------------------------------------------------------------- generators

def _kuhn_cells(nx: int, ny: int, nz: int, keep, vid) -> list[tuple[int, int, int, int]]:
    cells = []
    unit = np.eye(3, dtype=int)
    for i, j, k in itertools.product(range(nx), range(ny), range(nz)):
        if not keep(i, j, k):
            continue
        base = np.array([i, j, k])
        for perm in itertools.permutations(range(3)):
            path = [base.copy()]
            for axis in perm:
                path.append(path[-1] + unit[axis])
            cells.append(tuple(vid[tuple(q)] for q in path))
    return cells


def _structured_mesh(lo: np.ndarray, n_per_dir: tuple[int, int, int], spacing: float, keep, name: str) -> Mesh:
    nx, ny, nz = n_per_dir
    vid: dict[tuple[int, int, int], int] = {}
    coords = []
    for i, j, k in itertools.product(range(nx + 1), range(ny + 1), range(nz + 1)):
        # a lattice point is used if any adjacent kept cube touches it
        used = any(
            0 <= i - a < nx and 0 <= j - b < ny and 0 <= k - c < nz and keep(i - a, j - b, k - c)
            for a, b, c in itertools.product((0, 1), repeat=3)
        )
        if used:
            vid[(i, j, k)] = len(coords)
            coords.append(lo + spacing * np.array([i, j, k], dtype=float))
    vertices = np.array(coords)
    cells = np.array(_kuhn_cells(nx, ny, nz, keep, vid), dtype=np.int64)
    vol = _signed_volumes(vertices, cells)
    flip = vol < 0
    cells[flip] = cells[flip][:, [0, 2, 1, 3]]
    bfaces, tags = _tag_boundary(vertices, cells)
    return Mesh(vertices, cells, bfaces, tags, name=name)


def _tag_boundary(vertices: np.ndarray, cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    faces, _, _, counts = _unique_faces(cells)
    bfaces = faces[counts == 1]
    # outward direction from the owning cell
    owner = {}
    for c, cell in enumerate(np.sort(cells, axis=1)):
        for f in LOCAL_FACES:
            owner.setdefault(tuple(cell[f]), c)
    tags = np.empty(len(bfaces), dtype=np.int64)
    for idx, f in enumerate(bfaces):
        c = owner[tuple(f)]
        p = vertices[f]
        n = np.cross(p[1] - p[0], p[2] - p[0])
        if np.dot(n, p.mean(axis=0) - vertices[cells[c]].mean(axis=0)) < 0:
            n = -n
        axis = int(np.argmax(np.abs(n)))
        tags[idx] = 2 * axis + (1 if n[axis] > 0 else 0) + 1
    return bfaces, tags


def generate_cube_mesh(n: int) -> Mesh:
    """Kuhn-split mesh of [0, 1]^3 with ``n`` subdivisions per edge."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return _structured_mesh(np.zeros(3), (n, n, n), 1.0 / n, lambda i, j, k: True, f"cube{n}")


def generate_lshape_mesh(n: int) -> Mesh:
    """Kuhn-split mesh of [-1,1]^3 minus [-1,0)^2 x [-1,1], ``n`` cells per unit length."""
    if n < 1:
        raise ValueError("n must be >= 1")
    m = 2 * n

    def keep(i, j, k):
        return not (i < n and j < n)

    return _structured_mesh(-np.ones(3), (m, m, m), 1.0 / n, keep, f"lshape{n}")


# ---------------------------------------------------------------- connectivity

def _unique_faces(cells: np.ndarray):
    sc = np.sort(cells, axis=1)
    allf = sc[:, LOCAL_FACES].reshape(-1, 3)
    faces, inverse, counts = np.unique(allf, axis=0, return_inverse=True, return_counts=True)
    return faces, inverse.reshape(-1), sc, counts


@dataclass(frozen=True, eq=False)
class FaceSet:
    """Faces with incidence.

    ``cells[f] = (c0, c1)``: for interior faces the normal points out of ``c0``
    (so the jump is trace from ``c0`` minus trace from ``c1``); boundary faces
    have ``c1 = -1`` and an outward normal.  ``local[f]`` holds the sorted-frame
    local face ids, ``signs[f]`` the factor n_E . n_f for each side.
    """

    faces: np.ndarray
    cells: np.ndarray
    local: np.ndarray
    signs: np.ndarray
    normals: np.ndarray
    areas: np.ndarray
    diameters: np.ndarray
    tags: np.ndarray
    cell_faces: np.ndarray

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.cells[:, 1] < 0)

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(self.cells[:, 1] >= 0)


def build_face_connectivity(mesh: Mesh) -> FaceSet:
    faces, inverse, sc, counts = _unique_faces(mesh.cells)
    if np.any(counts > 2):
        bad = faces[np.argmax(counts)]
        raise MeshError(f"non-conforming mesh: face {tuple(bad)} shared by more than two cells")
    nf = len(faces)
    cells = -np.ones((nf, 2), dtype=np.int64)
    local = -np.ones((nf, 2), dtype=np.int64)
    fill = np.zeros(nf, dtype=np.int64)
    cell_faces = inverse.reshape(-1, 4)
    for c in range(mesh.num_cells):
        for i in range(4):
            f = cell_faces[c, i]
            cells[f, fill[f]] = c
            local[f, fill[f]] = i
            fill[f] += 1

    p = mesh.vertices[faces]
    cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    nrm = np.linalg.norm(cr, axis=1)
    normals = cr / nrm[:, None]
    areas = 0.5 * nrm
    diameters = np.max(
        [np.linalg.norm(p[:, a] - p[:, b], axis=1) for a, b in ((0, 1), (0, 2), (1, 2))], axis=0
    )
    centroid = p.mean(axis=1)
    cell_centroids = mesh.vertices[mesh.cells].mean(axis=1)

    out0 = np.einsum("ij,ij->i", normals, centroid - cell_centroids[cells[:, 0]]) > 0
    bnd = cells[:, 1] < 0
    # boundary faces: normal flipped outward
    flip_b = bnd & ~out0
    normals[flip_b] *= -1
    # interior faces: reorder so the canonical normal points out of side 0
    swap = ~bnd & ~out0
    cells[swap] = cells[swap][:, ::-1]
    local[swap] = local[swap][:, ::-1]
    signs = np.where(bnd[:, None], np.array([1, 0]), np.array([1, -1])).astype(np.int64)

    tags = np.zeros(nf, dtype=np.int64)
    if len(mesh.boundary_faces):
        lookup = {tuple(f): t for f, t in zip(np.sort(mesh.boundary_faces, axis=1), mesh.boundary_tags)}
        for f in np.flatnonzero(bnd):
            tags[f] = lookup.get(tuple(faces[f]), 0)

    fs = FaceSet(faces, cells, local, signs, normals, areas, diameters, tags, cell_faces)
    for arr in (fs.faces, fs.cells, fs.local, fs.signs, fs.normals, fs.areas, fs.diameters, fs.tags, fs.cell_faces):
        arr.setflags(write=False)
    return fs


@dataclass(frozen=True, eq=False)
class EdgeSet:
    edges: np.ndarray
    cell_edges: np.ndarray

    @property
    def num_edges(self) -> int:
        return len(self.edges)


def build_edges(mesh: Mesh) -> EdgeSet:
    sc = mesh.sorted_cells
    alle = sc[:, LOCAL_EDGES].reshape(-1, 2)
    edges, inverse = np.unique(alle, axis=0, return_inverse=True)
    return EdgeSet(edges, inverse.reshape(-1, 6))


def local_quasi_uniformity(mesh: Mesh, faceset: FaceSet) -> float:
    """max over interior faces of h_E+ / h_E- (symmetrized)."""
    hE = mesh.cell_diameters()
    inter = faceset.interior
    if len(inter) == 0:
        return 1.0
    a, b = hE[faceset.cells[inter, 0]], hE[faceset.cells[inter, 1]]
    return float(np.max(np.maximum(a / b, b / a)))


# ---------------------------------------------------------------- MSH import

_SUPPORTED = {4: 4, 2: 3}


def import_msh(path: str | Path) -> Mesh:
    """Read an ASCII MSH 2.2 file with tetrahedra (type 4) and triangles (type 2)."""
    lines = Path(path).read_text().splitlines()
    sections: dict[str, tuple[int, list[str]]] = {}
    i = 0
    while i < len(lines):
        s = lines[i].strip()
        if s.startswith("$") and not s.startswith("$End"):
            name = s[1:]
            end = f"$End{name}"
            j = i + 1
            while j < len(lines) and lines[j].strip() != end:
                j += 1
            if j == len(lines):
                raise MshParseError(f"malformed section ${name}: missing {end}", i + 1)
            sections[name] = (i + 2, lines[i + 1 : j])
            i = j + 1
        else:
            i += 1

    if "MeshFormat" in sections:
        start, body = sections["MeshFormat"]
        fmt = body[0].split() if body else []
        if not fmt or not fmt[0].startswith("2") or (len(fmt) > 1 and fmt[1] != "0"):
            raise MshParseError("only ASCII MSH format 2.x is supported", start)

    for req in ("Nodes", "Elements"):
        if req not in sections:
            raise MshParseError(f"malformed section: missing ${req}")

    start, body = sections["Nodes"]
    nodes, node_index = _parse_nodes(start, body)

    start, body = sections["Elements"]
    tets, tris, tri_tags, tet_lines = _parse_elements(start, body, node_index)

    vertices = np.array(nodes, dtype=float)
    cells = np.array(tets, dtype=np.int64).reshape(-1, 4)
    if len(cells) == 0:
        raise MshParseError("malformed section $Elements: no tetrahedra", start)
    vol = _signed_volumes(vertices, cells)
    bad = np.flatnonzero(vol <= 0)
    if len(bad):
        raise MshParseError(f"inverted or degenerate tetrahedron (volume {vol[bad[0]]:.3e})", tet_lines[bad[0]])

    used = np.unique(cells)
    remap = -np.ones(len(vertices), dtype=np.int64)
    remap[used] = np.arange(len(used))
    vertices = vertices[used]
    cells = remap[cells]

    faces, _, _, counts = _unique_faces(cells)
    bfaces = faces[counts == 1]
    tag_of = {}
    for tri, tag in zip(tris, tri_tags):
        tri = remap[np.asarray(tri)]
        tag_of[tuple(np.sort(tri))] = tag
    tags = np.array([tag_of.get(tuple(f), 0) for f in bfaces], dtype=np.int64)
    return Mesh(vertices, cells, bfaces, tags, name=Path(path).stem)


def _parse_nodes(start: int, body: list[str]):
    if not body or not body[0].strip():
        raise MshParseError("malformed section $Nodes: empty", start - 1)
    try:
        count = int(body[0].split()[0])
    except ValueError:
        raise MshParseError("malformed section $Nodes: bad node count", start) from None
    if count <= 0 or len(body) - 1 < count:
        raise MshParseError("malformed section $Nodes: node count mismatch", start)
    nodes, index = [], {}
    for off, line in enumerate(body[1 : count + 1]):
        parts = line.split()
        if len(parts) != 4:
            raise MshParseError("malformed section $Nodes: expected 'id x y z'", start + 1 + off)
        try:
            index[int(parts[0])] = len(nodes)
            nodes.append([float(v) for v in parts[1:]])
        except ValueError:
            raise MshParseError("malformed section $Nodes: non-numeric entry", start + 1 + off) from None
    return nodes, index


def _parse_elements(start: int, body: list[str], node_index: dict[int, int]):
    if not body or not body[0].strip():
        raise MshParseError("malformed section $Elements: empty", start - 1)
    try:
        count = int(body[0].split()[0])
    except ValueError:
        raise MshParseError("malformed section $Elements: bad element count", start) from None
    if len(body) - 1 < count:
        raise MshParseError("malformed section $Elements: element count mismatch", start)
    tets, tris, tri_tags, tet_lines = [], [], [], []
    for off, line in enumerate(body[1 : count + 1]):
        lineno = start + 1 + off
        try:
            parts = [int(v) for v in line.split()]
        except ValueError:
            raise MshParseError("malformed section $Elements: non-integer entry", lineno) from None
        if len(parts) < 3:
            raise MshParseError("malformed section $Elements: truncated element", lineno)
        etype, ntags = parts[1], parts[2]
        if etype not in _SUPPORTED:
            raise MshParseError(f"unsupported element type {etype}", lineno)
        conn = parts[3 + ntags :]
        if len(conn) != _SUPPORTED[etype]:
            raise MshParseError(f"malformed section $Elements: element type {etype} needs {_SUPPORTED[etype]} nodes", lineno)
        try:
            conn = [node_index[v] for v in conn]
        except KeyError as exc:
            raise MshParseError(f"unknown node id {exc.args[0]}", lineno) from None
        tag = parts[3] if ntags > 0 else 0
        if etype == 4:
            tets.append(conn)
            tet_lines.append(lineno)
        else:
            tris.append(conn)
            tri_tags.append(tag)
    return tets, tris, tri_tags, tet_lines


def export_msh(mesh: Mesh, path: str | Path) -> None:
    """Write ``mesh`` as ASCII MSH 2.2 (boundary triangles carry their tag)."""
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(mesh.num_vertices)]
    out += [f"{i + 1} {x:.17g} {y:.17g} {z:.17g}" for i, (x, y, z) in enumerate(mesh.vertices)]
    out += ["$EndNodes", "$Elements", str(len(mesh.boundary_faces) + mesh.num_cells)]
    eid = 1
    for f, t in zip(mesh.boundary_faces, mesh.boundary_tags):
        out.append(f"{eid} 2 2 {t} {t} " + " ".join(str(v + 1) for v in f))
        eid += 1
    for c in mesh.cells:
        out.append(f"{eid} 4 2 0 0 " + " ".join(str(v + 1) for v in c))
        eid += 1
    out.append("$EndElements")
    Path(path).write_text("\n".join(out) + "\n")


# --------------------------------------------------------------- macro mesh

@dataclass(frozen=True, eq=False)
class MacroMesh:
    """Partition of the cells into connected macroelements, each containing a vertex star."""

    cell_to_macro: np.ndarray
    centers: np.ndarray
    max_cardinality: int = field(default=0)

    @property
    def num_macros(self) -> int:
        return len(self.centers)

    def members(self, m: int) -> np.ndarray:
        return np.flatnonzero(self.cell_to_macro == m)


def vertex_stars(mesh: Mesh) -> list[np.ndarray]:
    stars: list[list[int]] = [[] for _ in range(mesh.num_vertices)]
    for c, cell in enumerate(mesh.cells):
        for v in cell:
            stars[v].append(c)
    return [np.array(s, dtype=np.int64) for s in stars]


def cell_neighbors(faceset: FaceSet, num_cells: int) -> list[list[int]]:
    nb: list[list[int]] = [[] for _ in range(num_cells)]
    for c0, c1 in faceset.cells[faceset.interior]:
        nb[c0].append(int(c1))
        nb[c1].append(int(c0))
    return nb


def build_macro_mesh(mesh: Mesh, faceset: FaceSet | None = None) -> MacroMesh:
    """Greedy vertex-star covering followed by merging of leftover cells."""
    if faceset is None:
        faceset = build_face_connectivity(mesh)
    stars = vertex_stars(mesh)
    on_bnd = np.zeros(mesh.num_vertices, dtype=bool)
    on_bnd[faceset.faces[faceset.boundary].ravel()] = True
    order = sorted(range(mesh.num_vertices), key=lambda v: (on_bnd[v], -len(stars[v]), v))

    owner = -np.ones(mesh.num_cells, dtype=np.int64)
    centers = []
    for v in order:
        s = stars[v]
        if len(s) and np.all(owner[s] < 0):
            owner[s] = len(centers)
            centers.append(v)
    if not centers:
        raise MeshError("no vertex star could be formed")

    nb = cell_neighbors(faceset, mesh.num_cells)
    sizes = np.bincount(owner[owner >= 0], minlength=len(centers))
    while np.any(owner < 0):
        progress = False
        for c in np.flatnonzero(owner < 0):
            cand = [owner[d] for d in nb[c] if owner[d] >= 0]
            if cand:
                m = min(cand, key=lambda m: (sizes[m], m))
                owner[c] = m
                sizes[m] += 1
                progress = True
        if not progress:
            raise MeshError("leftover cells cannot be merged into any star macroelement")
    return MacroMesh(owner, np.array(centers, dtype=np.int64), int(sizes.max()))


def check_macro_mesh(mesh: Mesh, faceset: FaceSet, macro: MacroMesh) -> None:
    """Raise if a macroelement is disconnected or does not contain a full vertex star."""
    stars = vertex_stars(mesh)
    nb = cell_neighbors(faceset, mesh.num_cells)
    for m in range(macro.num_macros):
        cells = set(macro.members(m).tolist())
        if not set(stars[macro.centers[m]].tolist()) <= cells:
            raise MeshError(f"macroelement {m} does not contain the star of its center")
        seen, todo = set(), [next(iter(cells))]
        while todo:
            c = todo.pop()
            if c in seen:
                continue
            seen.add(c)
            todo.extend(d for d in nb[c] if d in cells and d not in seen)
        if seen != cells:
            raise MeshError(f"macroelement {m} is not face-connected")

