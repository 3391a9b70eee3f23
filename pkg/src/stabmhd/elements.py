"""Reference bases, dof functionals and Piola maps on the reference tetrahedron.

Every basis is stored as coefficients over the monomials of degree <= k in
reference coordinates and obtained by inverting the matrix of its dof
functionals against the monomial basis.  Entity dofs are written against
*unnormalized* entity vectors (edge vector, cross product of face edge
vectors) parametrized from the lower local vertex, which makes them invariant
under the affine Piola maps: the reference functional applied to a pulled
back field equals the physical functional on the mapped entity.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

from .mesh import LOCAL_EDGES, LOCAL_FACES, Mesh
from .quadrature import line_rule, tet_rule, tri_rule

REF_VERTICES = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
# gradients of the barycentric coordinates of the reference tetrahedron
BARY_GRADS = np.array([[-1.0, -1, -1], [1, 0, 0], [0, 1, 0], [0, 0, 1]])

VECTOR_FAMILIES = ("BDM", "N2curl")
SUPPORTED_K = (1, 2)
MAX_DUAL_CONDITION = 1e6


class UnsupportedElementError(ValueError):
    pass


class DegenerateCellError(ValueError):
    pass


# ------------------------------------------------------------------ monomials

@lru_cache(maxsize=None)
def monomial_exponents(k: int) -> np.ndarray:
    exps = [(a, b, c) for d in range(k + 1) for a in range(d, -1, -1) for b in range(d - a, -1, -1) for c in [d - a - b]]
    out = np.array(exps, dtype=np.int64).reshape(-1, 3)
    out.setflags(write=False)
    return out


def eval_monomials(pts: np.ndarray, exps: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    return np.prod(pts[..., None, :] ** exps, axis=-1)


def eval_monomial_grads(pts: np.ndarray, exps: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    out = np.empty(pts.shape[:-1] + (len(exps), 3))
    for d in range(3):
        e = exps.copy()
        coef = e[:, d].astype(float)
        e[:, d] = np.maximum(e[:, d] - 1, 0)
        out[..., d] = coef * np.prod(pts[..., None, :] ** e, axis=-1)
    return out


def barycentric(pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    return np.concatenate([1.0 - pts.sum(axis=-1, keepdims=True), pts], axis=-1)


def _simplex_multi_indices(n_vars: int, degree: int) -> list[tuple[int, ...]]:
    # lexicographically descending, so the first variable dominates
    return sorted(
        (idx for idx in product(range(degree + 1), repeat=n_vars) if sum(idx) == degree), reverse=True
    )


# -------------------------------------------------------------------- bases

@dataclass(frozen=True, eq=False)
class ReferenceBasis:
    """Basis on the reference tetrahedron together with its dual functionals.

    ``entities[i] = (dim, local_entity, index_within_entity)`` for dof ``i``.
    Functional ``i`` acts on a (pulled back) field sampled at ``dof_points`` as
    ``sum_p dof_weights[i, p, :] . v(dof_points[p])``.
    """

    family: str
    degree: int
    ncomp: int
    mapping: str
    coeffs: np.ndarray
    entities: np.ndarray
    dof_points: np.ndarray
    dof_weights: np.ndarray
    condition: float

    @property
    def dim(self) -> int:
        return len(self.coeffs)

    @property
    def exponents(self) -> np.ndarray:
        return monomial_exponents(self.degree)

    def tabulate(self, pts: np.ndarray, derivatives: bool = True):
        """Values ``(..., nb, ncomp)`` and gradients ``(..., nb, ncomp, 3)`` at reference points."""
        mono = eval_monomials(pts, self.exponents)
        vals = np.einsum("bcm,...m->...bc", self.coeffs, mono)
        if not derivatives:
            return vals, None
        dmono = eval_monomial_grads(pts, self.exponents)
        grads = np.einsum("bcm,...md->...bcd", self.coeffs, dmono)
        return vals, grads

    def apply_dofs(self, samples: np.ndarray) -> np.ndarray:
        """Dof values from field samples of shape ``(..., n_points, ncomp)``."""
        return np.einsum("ipc,...pc->...i", self.dof_weights, samples)

    def dual_matrix(self) -> np.ndarray:
        vals, _ = self.tabulate(self.dof_points, derivatives=False)
        return np.einsum("ipc,pbc->ib", self.dof_weights, vals)

    def entity_counts(self) -> dict[int, int]:
        counts = {}
        for d in range(4):
            sel = self.entities[:, 0] == d
            counts[d] = int(np.sum(sel & (self.entities[:, 1] == 0)))
        return counts


class _Functionals:
    def __init__(self, ncomp: int):
        self.ncomp = ncomp
        self.items: list[tuple[tuple[int, int], np.ndarray, np.ndarray]] = []

    def add(self, entity: tuple[int, int], points: np.ndarray, weights: np.ndarray) -> None:
        self.items.append((entity, np.atleast_2d(points), weights.reshape(len(points), self.ncomp)))

    def build(self, family: str, degree: int, mapping: str) -> ReferenceBasis:
        pts = np.concatenate([p for _, p, _ in self.items])
        n = len(self.items)
        W = np.zeros((n, len(pts), self.ncomp))
        off = 0
        entities = []
        seen: dict[tuple[int, int], int] = {}
        for i, (ent, p, w) in enumerate(self.items):
            W[i, off : off + len(p)] = w
            off += len(p)
            entities.append(ent + (seen.get(ent, 0),))
            seen[ent] = seen.get(ent, 0) + 1
        exps = monomial_exponents(degree)
        nm = len(exps)
        mono = eval_monomials(pts, exps)
        # prime basis: component c times monomial m, index c * nm + m
        D = np.einsum("ipc,pm->icm", W, mono).reshape(n, self.ncomp * nm)
        if D.shape[0] != D.shape[1]:
            raise UnsupportedElementError(f"{family}{degree}: {n} functionals for {D.shape[1]} basis functions")
        cond = float(np.linalg.cond(D))
        if not np.isfinite(cond) or cond > MAX_DUAL_CONDITION:
            raise UnsupportedElementError(f"{family}{degree}: dual matrix condition {cond:.2e}")
        X = np.linalg.inv(D)
        coeffs = X.T.reshape(n, self.ncomp, nm)
        coeffs[np.abs(coeffs) < 1e-13] = 0.0
        for arr in (coeffs, pts, W):
            arr.setflags(write=False)
        return ReferenceBasis(family, degree, self.ncomp, mapping, coeffs, np.array(entities), pts, W, cond)


def _face_frame(i: int):
    a, b, c = LOCAL_FACES[i]
    va = REF_VERTICES[a]
    t1, t2 = REF_VERTICES[b] - va, REF_VERTICES[c] - va
    return va, t1, t2


def _check_k(k: int) -> None:
    if k not in SUPPORTED_K:
        raise UnsupportedElementError(f"unsupported degree k={k} (supported: {SUPPORTED_K})")


@lru_cache(maxsize=None)
def bdm_basis(k: int, dof_degree: int | None = None) -> ReferenceBasis:
    """BDM_k: normal moments against P_k on faces, interior moments against N1_{k-1}.

    ``dof_degree`` sets the quadrature behind the functionals; any value of at
    least 2k gives the same functionals on the element space.
    """
    _check_k(k)
    dq = dof_degree or 2 * k + 2
    F = _Functionals(3)
    rule = tri_rule(dq)
    s, t = rule.points[:, 0], rule.points[:, 1]
    mu = np.column_stack([1 - s - t, s, t])
    for i in range(4):
        va, t1, t2 = _face_frame(i)
        pts = va + s[:, None] * t1 + t[:, None] * t2
        nrm = np.cross(t1, t2)
        for idx in _simplex_multi_indices(3, k):
            q = np.prod(mu ** np.array(idx), axis=1)
            F.add((2, i), pts, (rule.weights * q)[:, None] * nrm)
    if k >= 2:
        vrule = tet_rule(dq)
        lam = barycentric(vrule.points)
        for a, b in LOCAL_EDGES:
            w = lam[:, [a]] * BARY_GRADS[b] - lam[:, [b]] * BARY_GRADS[a]
            F.add((3, 0), vrule.points, vrule.weights[:, None] * w)
    return F.build("BDM", k, "contravariant")


@lru_cache(maxsize=None)
def nedelec2_basis(k: int, dof_degree: int | None = None) -> ReferenceBasis:
    """Second-kind Nedelec of degree k: tangential edge moments against P_k, face moments against RT_{k-2}."""
    _check_k(k)
    dq = dof_degree or 2 * k + 2
    F = _Functionals(3)
    lr = line_rule(dq)
    s = lr.points[:, 0]
    for e, (a, b) in enumerate(LOCAL_EDGES):
        va, tv = REF_VERTICES[a], REF_VERTICES[b] - REF_VERTICES[a]
        pts = va + s[:, None] * tv
        for idx in _simplex_multi_indices(2, k):
            q = (1 - s) ** idx[0] * s ** idx[1]
            F.add((1, e), pts, (lr.weights * q)[:, None] * tv)
    if k >= 2:
        rule = tri_rule(dq)
        s2, t2_ = rule.points[:, 0], rule.points[:, 1]
        rt0 = [np.column_stack([s2, t2_]), np.column_stack([s2 - 1, t2_]), np.column_stack([s2, t2_ - 1])]
        for i in range(4):
            va, t1, t2 = _face_frame(i)
            pts = va + s2[:, None] * t1 + t2_[:, None] * t2
            for q in rt0:
                vec = q[:, [0]] * t1 + q[:, [1]] * t2
                F.add((2, i), pts, rule.weights[:, None] * vec)
    return F.build("N2curl", k, "covariant")


def _lagrange_nodes(m: int) -> list[tuple[tuple[int, int], np.ndarray]]:
    """Equispaced nodes grouped by entity, ordered consistently along sorted entities."""
    if m == 0:
        return [((3, 0), np.full(4, 0.25))]
    nodes = []
    multi = [idx for idx in product(range(m + 1), repeat=4) if sum(idx) == m]
    groups: dict[tuple[int, int], list[tuple[int, ...]]] = {}
    for idx in multi:
        support = tuple(i for i in range(4) if idx[i] > 0)
        d = len(support) - 1
        if d == 0:
            ent = (0, support[0])
        elif d == 1:
            ent = (1, [tuple(e) for e in LOCAL_EDGES.tolist()].index(support))
        elif d == 2:
            ent = (2, [i for i in range(4) if i not in support][0])
        else:
            ent = (3, 0)
        groups.setdefault(ent, []).append(idx)
    for ent in sorted(groups):
        d, loc = ent
        if d == 1:
            verts = LOCAL_EDGES[loc]
        elif d == 2:
            verts = LOCAL_FACES[loc]
        else:
            verts = np.arange(4)
        for idx in sorted(groups[ent], key=lambda ix: tuple(-ix[v] for v in verts)):
            nodes.append((ent, np.array(idx, dtype=float) / m))
    return nodes


@lru_cache(maxsize=None)
def lagrange_basis(m: int, continuous: bool = True) -> ReferenceBasis:
    """Scalar Lagrange P_m with equispaced nodes (``continuous=False``: all dofs interior)."""
    if not 0 <= m <= 3:
        raise UnsupportedElementError(f"unsupported Lagrange degree {m}")
    F = _Functionals(1)
    for ent, lam in _lagrange_nodes(m):
        x = lam[1:]
        F.add(ent if continuous else (3, 0), x[None, :], np.ones(1))
    family = "ContinuousLagrange" if continuous else "DiscontinuousP"
    return F.build(family, m, "identity")


def get_basis(family: str, k: int) -> ReferenceBasis:
    if family == "BDM":
        return bdm_basis(k)
    if family == "N2curl":
        return nedelec2_basis(k)
    if family == "DiscontinuousP":
        return lagrange_basis(k, continuous=False)
    if family == "ContinuousLagrange":
        return lagrange_basis(k, continuous=True)
    raise UnsupportedElementError(f"unknown family {family!r}")


# ----------------------------------------------------------------- geometry

@dataclass(frozen=True, eq=False)
class CellGeometry:
    """Affine maps x = x0 + J xi in the sorted local vertex frame."""

    x0: np.ndarray
    J: np.ndarray
    detJ: np.ndarray
    Jinv: np.ndarray

    def map(self, cells: np.ndarray, ref_pts: np.ndarray) -> np.ndarray:
        J = self.J[cells]
        if ref_pts.ndim == 2:
            return self.x0[cells][:, None, :] + np.einsum("cij,qj->cqi", J, ref_pts)
        return self.x0[cells][:, None, :] + np.einsum("cij,cqj->cqi", J, ref_pts)


def cell_geometry(mesh: Mesh) -> CellGeometry:
    sc = mesh.sorted_cells
    p = mesh.vertices[sc]
    J = np.transpose(p[:, 1:] - p[:, :1], (0, 2, 1))
    det = np.linalg.det(J)
    scale = np.max(np.abs(J), axis=(1, 2)) ** 3
    if np.any(np.abs(det) <= 1e-14 * scale):
        raise DegenerateCellError("degenerate cell: det J ~ 0")
    return CellGeometry(p[:, 0], J, det, np.linalg.inv(J))


# --------------------------------------------------------------- Piola maps

def _bcast(arr: np.ndarray, ndim: int) -> np.ndarray:
    return arr.reshape(arr.shape + (1,) * (ndim - arr.ndim))


def piola_contravariant(J: np.ndarray, detJ, ref_values: np.ndarray, ref_divs: np.ndarray | None = None):
    """v = J v_hat / det J and div v = div v_hat / det J.

    ``J`` is ``(3, 3)`` or ``(n, 3, 3)``; values carry the component in the last axis
    and, when ``J`` is batched, the cell in the first axis.
    """
    J = np.asarray(J, dtype=float)
    detJ = np.asarray(detJ, dtype=float)
    if np.any(np.abs(detJ) < 1e-300):
        raise DegenerateCellError("degenerate cell: det J = 0")
    if J.ndim == 2:
        vals = ref_values @ J.T / detJ
        divs = None if ref_divs is None else ref_divs / detJ
        return vals, divs
    vals = np.einsum("cij,c...j->c...i", J, ref_values) / _bcast(detJ, ref_values.ndim)
    divs = None if ref_divs is None else ref_divs / _bcast(detJ, ref_divs.ndim)
    return vals, divs


def piola_covariant(J: np.ndarray, detJ, ref_values: np.ndarray, ref_curls: np.ndarray | None = None):
    """H = J^{-T} H_hat and curl H = J curl H_hat / det J."""
    J = np.asarray(J, dtype=float)
    detJ = np.asarray(detJ, dtype=float)
    if np.any(np.abs(detJ) < 1e-300):
        raise DegenerateCellError("degenerate cell: det J = 0")
    Jinv = np.linalg.inv(J)
    if J.ndim == 2:
        vals = ref_values @ Jinv
        curls = None if ref_curls is None else ref_curls @ J.T / detJ
        return vals, curls
    vals = np.einsum("cji,c...j->c...i", Jinv, ref_values)
    curls = None
    if ref_curls is not None:
        curls = np.einsum("cij,c...j->c...i", J, ref_curls) / _bcast(detJ, ref_curls.ndim)
    return vals, curls


def curl_from_grad(grads: np.ndarray) -> np.ndarray:
    """curl from a gradient array with ``grads[..., i, j] = d v_i / d x_j``."""
    return np.stack(
        [
            grads[..., 2, 1] - grads[..., 1, 2],
            grads[..., 0, 2] - grads[..., 2, 0],
            grads[..., 1, 0] - grads[..., 0, 1],
        ],
        axis=-1,
    )


def div_from_grad(grads: np.ndarray) -> np.ndarray:
    return np.trace(grads, axis1=-2, axis2=-1)
