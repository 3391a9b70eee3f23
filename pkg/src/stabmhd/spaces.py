"""Global dof numbering, function spaces and finite element functions."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .elements import (
    CellGeometry,
    ReferenceBasis,
    cell_geometry,
    curl_from_grad,
    div_from_grad,
    get_basis,
)
from .mesh import LOCAL_EDGES, LOCAL_FACES, EdgeSet, FaceSet, Mesh, build_edges, build_face_connectivity

BOUNDARY_POLICIES = ("none", "normal", "all", "mean")


@dataclass(frozen=True, eq=False)
class DofMap:
    """Per-cell global dof indices.

    ``signs`` multiply local basis functions.  Local frames follow ascending
    global vertex order, so every shared entity is traversed identically from
    all incident cells and the signs are +1; they are kept explicit so that
    cell-level code never assumes it.
    """

    cell_dofs: np.ndarray
    signs: np.ndarray
    num_dofs: int
    constrained: np.ndarray
    mean_constraint: bool = False

    @cached_property
    def free(self) -> np.ndarray:
        mask = np.ones(self.num_dofs, dtype=bool)
        mask[self.constrained] = False
        return np.flatnonzero(mask)


def build_dofmap(
    mesh: Mesh,
    faceset: FaceSet,
    basis: ReferenceBasis,
    boundary_policy: str = "none",
    edges: EdgeSet | None = None,
) -> DofMap:
    if boundary_policy not in BOUNDARY_POLICIES:
        raise ValueError(f"unknown boundary policy {boundary_policy!r}")
    if faceset.cell_faces.shape[0] != mesh.num_cells:
        raise ValueError("faceset does not belong to mesh")
    counts = basis.entity_counts()
    ent = basis.entities
    if counts[1] and edges is None:
        edges = build_edges(mesh)
    nc = mesh.num_cells
    n_entities = {
        0: mesh.num_vertices,
        1: edges.num_edges if edges is not None else 0,
        2: faceset.num_faces,
        3: nc,
    }
    offsets, off = {}, 0
    for d in range(4):
        offsets[d] = off
        off += n_entities[d] * counts[d]
    num_dofs = off

    gid = {
        0: mesh.sorted_cells,
        1: edges.cell_edges if edges is not None else None,
        2: faceset.cell_faces,
        3: np.arange(nc)[:, None],
    }
    cell_dofs = np.empty((nc, basis.dim), dtype=np.int64)
    for i, (d, loc, idx) in enumerate(ent):
        cell_dofs[:, i] = offsets[d] + gid[d][:, loc] * counts[d] + idx

    constrained = np.empty(0, dtype=np.int64)
    if boundary_policy in ("normal", "all"):
        bfaces = faceset.boundary
        on_bnd = []
        c0 = faceset.cells[bfaces, 0]
        lf = faceset.local[bfaces, 0]
        for i, (d, loc, _) in enumerate(ent):
            if d == 2:
                sel = lf == loc
            elif d == 1 and boundary_policy == "all":
                sel = np.isin(lf, [f for f in range(4) if set(LOCAL_EDGES[loc]) <= set(LOCAL_FACES[f])])
            elif d == 0 and boundary_policy == "all":
                sel = lf != loc
            else:
                continue
            on_bnd.append(cell_dofs[c0[sel], i])
        if on_bnd:
            constrained = np.unique(np.concatenate(on_bnd))
    return DofMap(cell_dofs, np.ones_like(cell_dofs, dtype=float), num_dofs, constrained, boundary_policy == "mean")


@dataclass(eq=False)
class FunctionSpace:
    """A reference basis pushed onto a mesh through its Piola map."""

    mesh: Mesh
    faceset: FaceSet
    basis: ReferenceBasis
    dofmap: DofMap
    geometry: CellGeometry = field(repr=False)

    @property
    def num_dofs(self) -> int:
        return self.dofmap.num_dofs

    @property
    def ncomp(self) -> int:
        return self.basis.ncomp

    def tabulate(self, cells: np.ndarray, ref_pts: np.ndarray, derivatives: bool = True):
        """Physical basis values ``(n, nq, nb, ncomp)`` and gradients ``(n, nq, nb, ncomp, 3)``.

        ``ref_pts`` is ``(nq, 3)`` shared by all cells or ``(n, nq, 3)``.
        """
        g = self.geometry
        J, det, Ji = g.J[cells], g.detJ[cells], g.Jinv[cells]
        vals, grads = self.basis.tabulate(ref_pts, derivatives)
        shared = ref_pts.ndim == 2
        if shared:
            vals = vals[None]
            grads = grads[None] if grads is not None else None
        # batched 3x3 products broadcast over (cell, point, basis)
        Jb, Jib = J[:, None, None], Ji[:, None, None]
        mapping = self.basis.mapping
        if mapping == "contravariant":
            pv = (Jb @ vals[..., None])[..., 0] / det[:, None, None, None]
        elif mapping == "covariant":
            pv = (np.swapaxes(Jib, -1, -2) @ vals[..., None])[..., 0]
        else:
            pv = np.broadcast_to(vals, (len(cells),) + vals.shape[1:])
        pv = pv * self.dofmap.signs[cells][:, None, :, None]
        if not derivatives:
            return pv, None
        if mapping == "contravariant":
            pg = (Jb @ grads @ Jib) / det[:, None, None, None, None]
        elif mapping == "covariant":
            pg = np.swapaxes(Jib, -1, -2) @ grads @ Jib
        else:
            pg = grads @ Jib
        pg = pg * self.dofmap.signs[cells][:, None, :, None, None]
        return pv, pg

    def map_points(self, cells: np.ndarray, ref_pts: np.ndarray) -> np.ndarray:
        return self.geometry.map(cells, ref_pts)

    def pullback(self, cells: np.ndarray, values: np.ndarray) -> np.ndarray:
        """Reference-frame samples of a physical field given at mapped points ``(n, np, ncomp)``."""
        g = self.geometry
        if self.basis.mapping == "contravariant":
            return np.einsum("cij,cpj->cpi", g.Jinv[cells], values) * g.detJ[cells][:, None, None]
        if self.basis.mapping == "covariant":
            return np.einsum("cji,cpj->cpi", g.J[cells], values)
        return values


def make_space(
    mesh: Mesh,
    family: str,
    k: int,
    boundary_policy: str = "none",
    faceset: FaceSet | None = None,
    edges: EdgeSet | None = None,
    geometry: CellGeometry | None = None,
) -> FunctionSpace:
    faceset = faceset or build_face_connectivity(mesh)
    geometry = geometry or cell_geometry(mesh)
    basis = get_basis(family, k)
    dofmap = build_dofmap(mesh, faceset, basis, boundary_policy, edges)
    return FunctionSpace(mesh, faceset, basis, dofmap, geometry)


@dataclass(eq=False)
class FEFunction:
    space: FunctionSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.num_dofs,):
            raise ValueError(f"coefficient length {self.coeffs.shape} != {self.space.num_dofs}")

    @classmethod
    def zeros(cls, space: FunctionSpace) -> "FEFunction":
        return cls(space, np.zeros(space.num_dofs))

    def cell_coeffs(self, cells: np.ndarray) -> np.ndarray:
        return self.coeffs[self.space.dofmap.cell_dofs[cells]]

    def evaluate(self, cells: np.ndarray, ref_pts: np.ndarray, derivatives: bool = True):
        """Values ``(n, nq, ncomp)`` and gradients ``(n, nq, ncomp, 3)``."""
        vals, grads = self.space.tabulate(cells, ref_pts, derivatives)
        cc = self.cell_coeffs(cells)
        v = np.einsum("cqbi,cb->cqi", vals, cc)
        if grads is None:
            return v, None
        return v, np.einsum("cqbij,cb->cqij", grads, cc)

    def divergence(self, cells: np.ndarray, ref_pts: np.ndarray) -> np.ndarray:
        return div_from_grad(self.evaluate(cells, ref_pts)[1])

    def curl(self, cells: np.ndarray, ref_pts: np.ndarray) -> np.ndarray:
        return curl_from_grad(self.evaluate(cells, ref_pts)[1])

    def __add__(self, other: "FEFunction") -> "FEFunction":
        return FEFunction(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other: "FEFunction") -> "FEFunction":
        return FEFunction(self.space, self.coeffs - other.coeffs)
