"""Quadrature on mesh cells and faces, and sampling of coefficient fields."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .elements import CellGeometry, REF_VERTICES
from .mesh import LOCAL_FACES, FaceSet, Mesh
from .quadrature import tet_rule, tri_rule


@dataclass(frozen=True)
class CellQuadrature:
    cells: np.ndarray
    ref: np.ndarray  # (nq, 3)
    points: np.ndarray  # (n, nq, 3)
    weights: np.ndarray  # (n, nq)


def cell_quadrature(geometry: CellGeometry, cells: np.ndarray, degree: int) -> CellQuadrature:
    rule = tet_rule(degree)
    X = geometry.map(cells, rule.points)
    w = rule.weights[None, :] * np.abs(geometry.detJ[cells])[:, None]
    return CellQuadrature(cells, rule.points, X, w)


def cell_chunks(num_cells: int, size: int = 512):
    for start in range(0, num_cells, size):
        yield np.arange(start, min(start + size, num_cells))


def face_ref_points(local_faces: np.ndarray, st: np.ndarray) -> np.ndarray:
    """Reference-tetrahedron points ``(n, nq, 3)`` for face parameters ``st`` on local faces."""
    a = REF_VERTICES[LOCAL_FACES[local_faces, 0]]
    t1 = REF_VERTICES[LOCAL_FACES[local_faces, 1]] - a
    t2 = REF_VERTICES[LOCAL_FACES[local_faces, 2]] - a
    return a[:, None, :] + st[None, :, :1] * t1[:, None, :] + st[None, :, 1:] * t2[:, None, :]


@dataclass(frozen=True)
class FaceQuadrature:
    """Quadrature on a set of faces, seen from side 0 and (interior faces) side 1."""

    faces: np.ndarray
    points: np.ndarray  # (nf, nq, 3)
    weights: np.ndarray  # (nf, nq)
    normals: np.ndarray  # (nf, 3)
    diameters: np.ndarray  # (nf,)
    cells0: np.ndarray
    ref0: np.ndarray  # (nf, nq, 3)
    cells1: np.ndarray | None
    ref1: np.ndarray | None

    @property
    def interior(self) -> bool:
        return self.cells1 is not None


def face_quadrature(mesh: Mesh, faceset: FaceSet, faces: np.ndarray, degree: int) -> FaceQuadrature:
    """Faces must be all interior or all boundary."""
    rule = tri_rule(degree)
    st = rule.points
    p = mesh.vertices[faceset.faces[faces]]
    X = p[:, None, 0] + st[None, :, :1] * (p[:, None, 1] - p[:, None, 0]) + st[None, :, 1:] * (p[:, None, 2] - p[:, None, 0])
    w = 2.0 * faceset.areas[faces][:, None] * rule.weights[None, :]
    c0 = faceset.cells[faces, 0]
    c1 = faceset.cells[faces, 1]
    interior = c1 >= 0
    if np.any(interior) and not np.all(interior):
        raise ValueError("face_quadrature needs faces of a single kind")
    ref0 = face_ref_points(faceset.local[faces, 0], st)
    ref1 = face_ref_points(faceset.local[faces, 1], st) if np.all(interior) and len(faces) else None
    return FaceQuadrature(
        faces, X, w, faceset.normals[faces], faceset.diameters[faces], c0, ref0,
        c1 if ref1 is not None else None, ref1,
    )


class AnalyticField:
    """Vector field given by callbacks on physical points ``(..., 3)``."""

    def __init__(self, value: Callable[[np.ndarray], np.ndarray], grad: Callable[[np.ndarray], np.ndarray] | None = None):
        self.value = value
        self.grad = grad

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.value(x)


def constant_field(c) -> AnalyticField:
    c = np.asarray(c, dtype=float)
    return AnalyticField(
        lambda x: np.broadcast_to(c, x.shape[:-1] + c.shape).copy(),
        lambda x: np.zeros(x.shape[:-1] + c.shape + (3,)),
    )


def sample(field, cells: np.ndarray, ref: np.ndarray, X: np.ndarray, derivatives: bool = True):
    """Values ``(n, nq, 3)`` and gradients ``(n, nq, 3, 3)`` of an analytic or piecewise field."""
    if hasattr(field, "evaluate_cells"):
        return field.evaluate_cells(cells, ref, derivatives)
    v = field.value(X)
    if not derivatives:
        return v, None
    if field.grad is None:
        raise ValueError("field has no gradient callback")
    return v, field.grad(X)
