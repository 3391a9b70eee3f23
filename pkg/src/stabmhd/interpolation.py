"""Interpolants and projections: dof interpolation, broken L2 projection, Oswald averaging."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elements import bdm_basis, cell_geometry, lagrange_basis, nedelec2_basis
from .integration import cell_chunks, face_quadrature
from .mesh import FaceSet, MacroMesh, Mesh
from .quadrature import tet_rule
from .spaces import FEFunction, FunctionSpace


class MissingPrerequisiteError(ValueError):
    pass


def interpolate(field, space: FunctionSpace) -> FEFunction:
    """Dof interpolant of a callback ``field(x) -> (..., ncomp)``.

    Entity dofs are evaluated once per incident cell; they agree because the
    dof functionals are Piola invariant, so the last write wins. Moments are
    integrated with a high-order rule so non-polynomial data keeps its exact
    fluxes up to roundoff.
    """
    basis = _accurate_functionals(space.basis)
    coeffs = np.zeros(space.num_dofs)
    for cells in cell_chunks(space.mesh.num_cells):
        X = space.map_points(cells, basis.dof_points)
        vals = np.asarray(field(X), dtype=float).reshape(X.shape[:2] + (basis.ncomp,))
        local = basis.apply_dofs(space.pullback(cells, vals))
        dofs = space.dofmap.cell_dofs[cells]
        coeffs[dofs] = local / space.dofmap.signs[cells]
    return FEFunction(space, coeffs)


INTERPOLATION_DOF_DEGREE = 14


def _accurate_functionals(basis):
    if basis.family == "BDM":
        return bdm_basis(basis.degree, INTERPOLATION_DOF_DEGREE)
    if basis.family == "N2curl":
        return nedelec2_basis(basis.degree, INTERPOLATION_DOF_DEGREE)
    return basis


def interp_bdm(field, space: FunctionSpace) -> FEFunction:
    if space.basis.family != "BDM":
        raise ValueError("interp_bdm needs a BDM space")
    return interpolate(field, space)


def interp_nedelec(field, space: FunctionSpace) -> FEFunction:
    if space.basis.family != "N2curl":
        raise ValueError("interp_nedelec needs a second-kind Nedelec space")
    coeffs = interpolate(field, space).coeffs
    if not np.all(np.isfinite(coeffs)):
        raise FloatingPointError("field is not finite on a dof entity; supply limiting values")
    return FEFunction(space, coeffs)


@dataclass(eq=False)
class PiecewiseField:
    """Broken polynomial field of degree ``degree`` in the DG Lagrange basis.

    ``coeffs`` has shape ``(num_cells, dim P_m, ncomp)``.
    """

    mesh: Mesh
    degree: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.basis = lagrange_basis(self.degree, continuous=False)
        self._geom = cell_geometry(self.mesh)
        if self.coeffs.shape[:2] != (self.mesh.num_cells, self.basis.dim):
            raise ValueError("coefficient table does not match mesh and degree")

    @property
    def ncomp(self) -> int:
        return self.coeffs.shape[2]

    def evaluate_cells(self, cells: np.ndarray, ref: np.ndarray, derivatives: bool = True):
        vals, grads = self.basis.tabulate(ref, derivatives)
        c = "" if ref.ndim == 2 else "c"
        cc = self.coeffs[cells]
        v = np.einsum(f"{c}qb,cbi->cqi", vals[..., 0], cc)
        if not derivatives:
            return v, None
        g_ref = np.einsum(f"{c}qbk,cbi->cqik", grads[..., 0, :], cc)
        return v, np.einsum("cqik,ckl->cqil", g_ref, self._geom.Jinv[cells])

    def cell_means(self) -> np.ndarray:
        rule = tet_rule(max(self.degree, 1))
        v, _ = self.evaluate_cells(np.arange(self.mesh.num_cells), rule.points, derivatives=False)
        return np.einsum("cqi,q->ci", v, rule.weights) / rule.weights.sum()


def l2_project(m: int, field, mesh: Mesh, quad_degree: int | None = None) -> PiecewiseField:
    """Cellwise L2 projection onto P_m of a callback ``field(x) -> (..., ncomp)``."""
    basis = lagrange_basis(m, continuous=False)
    rule = tet_rule(quad_degree if quad_degree is not None else 2 * m + 4)
    phi, _ = basis.tabulate(rule.points, derivatives=False)
    phi = phi[..., 0]
    M = np.einsum("q,qa,qb->ab", rule.weights, phi, phi)
    geom = cell_geometry(mesh)
    blocks = []
    for cells in cell_chunks(mesh.num_cells):
        X = geom.map(cells, rule.points)
        vals = np.asarray(field(X), dtype=float)
        vals = vals.reshape(X.shape[:2] + (-1,))
        rhs = np.einsum("q,qa,cqi->cai", rule.weights, phi, vals)
        blocks.append(np.linalg.solve(M[None], rhs))
    return PiecewiseField(mesh, m, np.concatenate(blocks))


def theta_piecewise_constant(theta, mesh: Mesh, quad_degree: int = 6) -> PiecewiseField:
    """Best piecewise-constant L2 approximation (cell means of each component)."""
    return l2_project(0, theta, mesh, quad_degree)


def oswald(p: PiecewiseField, k: int, macro: MacroMesh | None = None) -> PiecewiseField:
    """Averaging of a broken P_{k-1} field into the Oswald target space.

    k = 2: continuous P_1 by arithmetic nodal averaging over incident cells.
    k = 1: constant per macroelement by volume-weighted averaging.
    """
    if p.degree != k - 1:
        raise ValueError(f"Oswald operator for k={k} acts on degree {k - 1}, got {p.degree}")
    mesh = p.mesh
    if k == 1:
        if macro is None:
            raise MissingPrerequisiteError("k=1 Oswald averaging needs a macro mesh")
        vol = mesh.volumes()
        nm = macro.num_macros
        out = np.empty_like(p.coeffs)
        for i in range(p.ncomp):
            num = np.bincount(macro.cell_to_macro, weights=vol * p.coeffs[:, 0, i], minlength=nm)
            den = np.bincount(macro.cell_to_macro, weights=vol, minlength=nm)
            out[:, 0, i] = (num / den)[macro.cell_to_macro]
        return PiecewiseField(mesh, 0, out)
    if k == 2:
        sc = mesh.sorted_cells
        count = np.bincount(sc.ravel(), minlength=mesh.num_vertices)
        out = np.empty_like(p.coeffs)
        for i in range(p.ncomp):
            s = np.bincount(sc.ravel(), weights=p.coeffs[:, :, i].ravel(), minlength=mesh.num_vertices)
            out[:, :, i] = (s / count)[sc]
        return PiecewiseField(mesh, 1, out)
    raise ValueError(f"unsupported k={k}")


def weighted_l2_squared(p: PiecewiseField, weights: np.ndarray) -> float:
    """sum_E weights_E ||p||_E^2."""
    rule = tet_rule(2 * p.degree + 1)
    v, _ = p.evaluate_cells(np.arange(p.mesh.num_cells), rule.points, derivatives=False)
    vol = p.mesh.volumes()
    per_cell = np.einsum("cqi,cqi,q->c", v, v, rule.weights) * 6.0 * vol
    return float(np.sum(weights * per_cell))


def jump_l2_squared(p: PiecewiseField, faceset: FaceSet, power: float = 3.0) -> float:
    """sum over interior faces of h_f^power ||[p]||_f^2."""
    fq = face_quadrature(p.mesh, faceset, faceset.interior, 2 * p.degree + 1)
    v0, _ = p.evaluate_cells(fq.cells0, fq.ref0, derivatives=False)
    v1, _ = p.evaluate_cells(fq.cells1, fq.ref1, derivatives=False)
    jump = v0 - v1
    per_face = np.einsum("fqi,fqi,fq->f", jump, jump, fq.weights)
    return float(np.sum(fq.diameters**power * per_face))


def oswald_constant(p: PiecewiseField, faceset: FaceSet, k: int, macro: MacroMesh | None = None) -> float:
    """Ratio sum h_E^2 ||(I - I_O) p||^2 / sum h_f^3 ||[p]||_f^2 (nan if p has no jumps)."""
    q = oswald(p, k, macro)
    diff = PiecewiseField(p.mesh, p.degree, p.coeffs - q.coeffs)
    lhs = weighted_l2_squared(diff, p.mesh.cell_diameters() ** 2)
    rhs = jump_l2_squared(p, faceset, 3.0)
    return lhs / rhs if rhs > 0 else float("nan")
