"""Assembly of the volume and face forms of the stabilized MHD discretization.

Unknown ordering of the monolithic system: velocity | pressure | mean multiplier | magnetic.
Velocity dofs on boundary faces (normal moments) are fixed to the data and eliminated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.sparse as sp

from .cases import ManufacturedCase, curl_cross
from .elements import cell_geometry, curl_from_grad, div_from_grad
from .integration import cell_chunks, cell_quadrature, face_quadrature, sample
from .interpolation import interp_bdm
from .mesh import Mesh, build_edges, build_face_connectivity
from .spaces import FunctionSpace, make_space

CHUNK = 256


@dataclass(frozen=True)
class ProblemParams:
    k: int
    sigma_S: float = 1.0
    sigma_M: float = 1.0
    nu_S: float = 1.0
    nu_M: float = 1.0
    mu_a: float = 10.0
    mu_c: float = 0.5
    mu_J1: float = 0.05
    mu_J2: float = 0.01
    chi: Any = None
    theta: Any = None
    quad_degree: int | None = None

    def __post_init__(self):
        if self.sigma_S < 0 or self.sigma_M < 0:
            raise ValueError("reaction coefficients must be nonnegative")
        if self.nu_S <= 0 or self.nu_M <= 0:
            raise ValueError("diffusion coefficients must be positive")
        if min(self.mu_a, self.mu_c, self.mu_J1, self.mu_J2) < 0:
            raise ValueError("penalty parameters must be nonnegative")

    @property
    def degree(self) -> int:
        return self.quad_degree if self.quad_degree is not None else 2 * self.k + 2


@dataclass(eq=False)
class Discretization:
    mesh: Mesh
    V: FunctionSpace
    Q: FunctionSpace
    W: FunctionSpace

    @property
    def faceset(self):
        return self.V.faceset

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        return self.V.num_dofs, self.Q.num_dofs, 1, self.W.num_dofs

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)])


def make_discretization(mesh: Mesh, k: int) -> Discretization:
    fs = build_face_connectivity(mesh)
    edges = build_edges(mesh)
    geom = cell_geometry(mesh)
    V = make_space(mesh, "BDM", k, "normal", fs, edges, geom)
    Q = make_space(mesh, "DiscontinuousP", k - 1, "mean", fs, edges, geom)
    W = make_space(mesh, "N2curl", k, "none", fs, edges, geom)
    return Discretization(mesh, V, Q, W)


class _Triplets:
    """COO accumulator; duplicates are summed when converting to CSR."""

    def __init__(self, shape):
        self.shape = shape
        self.rows, self.cols, self.vals = [], [], []

    def add(self, rdofs, cdofs, local):
        n, a, b = local.shape
        self.rows.append(np.broadcast_to(rdofs[:, :, None], (n, a, b)).ravel())
        self.cols.append(np.broadcast_to(cdofs[:, None, :], (n, a, b)).ravel())
        self.vals.append(local.ravel())

    def tocsr(self) -> sp.csr_matrix:
        if not self.vals:
            return sp.csr_matrix(self.shape)
        m = sp.coo_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=self.shape,
        ).tocsr()
        m.sum_duplicates()
        return m


def _dofs(space, cells):
    return space.dofmap.cell_dofs[cells]


# ---------------------------------------------------------------- volume forms

def _volume_form(test: FunctionSpace, trial: FunctionSpace, degree: int, kernel, derivatives=True) -> sp.csr_matrix:
    acc = _Triplets((test.num_dofs, trial.num_dofs))
    for cells in cell_chunks(test.mesh.num_cells, CHUNK):
        cq = cell_quadrature(test.geometry, cells, degree)
        tv, tg = test.tabulate(cells, cq.ref, derivatives)
        if trial is test:
            sv, sg = tv, tg
        else:
            sv, sg = trial.tabulate(cells, cq.ref, derivatives)
        local = kernel(cq, (tv, tg), (sv, sg))
        acc.add(_dofs(test, cells), _dofs(trial, cells), local)
    return acc.tocsr()


def assemble_mass(space: FunctionSpace, degree: int | None = None) -> sp.csr_matrix:
    deg = degree if degree is not None else 2 * space.basis.degree
    return _volume_form(
        space, space, deg,
        lambda cq, t, s: np.einsum("cq,cqai,cqbi->cab", cq.weights, t[0], s[0]),
        derivatives=False,
    )


def _sym(g):
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def assemble_b(V: FunctionSpace, Q: FunctionSpace, degree: int | None = None) -> sp.csr_matrix:
    """Rows pressure, columns velocity: (div v, q)."""
    deg = degree if degree is not None else 2 * V.basis.degree

    def kern(cq, t, s):
        return np.einsum("cq,cqa,cqb->cab", cq.weights, t[0][..., 0], div_from_grad(s[1]))

    return _volume_form(Q, V, deg, kern)


def assemble_aM(W: FunctionSpace, degree: int | None = None) -> sp.csr_matrix:
    deg = degree if degree is not None else 2 * W.basis.degree

    def kern(cq, t, s):
        ct = curl_from_grad(t[1])
        return np.einsum("cq,cqai,cqbi->cab", cq.weights, ct, ct)

    return _volume_form(W, W, deg, kern)


def assemble_d(W: FunctionSpace, V: FunctionSpace, theta, degree: int) -> sp.csr_matrix:
    """Rows velocity, columns magnetic: D[v_i, H_j] = (curl H_j x Theta, v_i)."""

    def kern(cq, t, s):
        th, _ = sample(theta, cq.cells, cq.ref, cq.points, derivatives=False)
        ch = np.cross(curl_from_grad(s[1]), th[:, :, None, :])
        return np.einsum("cq,cqai,cqbi->cab", cq.weights, t[0], ch)

    return _volume_form(V, W, degree, kern)


# ---------------------------------------------------------------- face machinery

@dataclass
class _FaceTraces:
    """Basis traces on a chunk of faces; interior faces stack side-0 and side-1 dofs."""

    fq: Any
    dofs: np.ndarray
    vals: list  # per side (nf, nq, nb, 3)
    grads: list
    interior: bool

    def jump(self, per_side):
        if not self.interior:
            return per_side[0]
        return np.concatenate([per_side[0], -per_side[1]], axis=2)

    def avg(self, per_side):
        if not self.interior:
            return per_side[0]
        return 0.5 * np.concatenate([per_side[0], per_side[1]], axis=2)

    def sides(self):
        fq = self.fq
        out = [(fq.cells0, fq.ref0)]
        if self.interior:
            out.append((fq.cells1, fq.ref1))
        return out


def _face_traces(space: FunctionSpace, fq, derivatives=True) -> _FaceTraces:
    interior = fq.interior
    vals, grads, dofs = [], [], []
    for cells, ref in ([(fq.cells0, fq.ref0)] + ([(fq.cells1, fq.ref1)] if interior else [])):
        v, g = space.tabulate(cells, ref, derivatives)
        vals.append(v)
        grads.append(g)
        dofs.append(_dofs(space, cells))
    return _FaceTraces(fq, np.concatenate(dofs, axis=1), vals, grads, interior)


def _face_chunks(space: FunctionSpace, degree: int):
    fs = space.faceset
    for faces in (fs.interior, fs.boundary):
        for idx in cell_chunks(len(faces), CHUNK):
            yield face_quadrature(space.mesh, fs, faces[idx], degree)


def _gram(w, a, b):
    return np.einsum("fq,fqai,fqbi->fab", w, a, b)


def assemble_aS(V: FunctionSpace, params: ProblemParams) -> sp.csr_matrix:
    """Symmetric interior penalty form for the symmetric gradient over all faces."""
    deg = 2 * V.basis.degree
    mat = _volume_form(
        V, V, deg,
        lambda cq, t, s: np.einsum("cq,cqaij,cqbij->cab", cq.weights, _sym(t[1]), _sym(s[1])),
    )
    acc = _Triplets(mat.shape)
    for fq in _face_chunks(V, deg):
        tr = _face_traces(V, fq)
        jump = tr.jump(tr.vals)
        avg_en = tr.avg([np.einsum("fqbij,fj->fqbi", _sym(g), fq.normals) for g in tr.grads])
        pen = (params.mu_a / fq.diameters)[:, None] * fq.weights
        local = -_gram(fq.weights, jump, avg_en) - _gram(fq.weights, avg_en, jump) + _gram(pen, jump, jump)
        acc.add(tr.dofs, tr.dofs, local)
    return mat + acc.tocsr()


def assemble_c(V: FunctionSpace, params: ProblemParams) -> sp.csr_matrix:
    """Convection with upwind-penalized interior faces and weak inflow on the boundary."""
    chi = params.chi
    deg = params.degree
    if chi is None:
        return sp.csr_matrix((V.num_dofs, V.num_dofs))

    def kern(cq, t, s):
        c, _ = sample(chi, cq.cells, cq.ref, cq.points, derivatives=False)
        conv = np.einsum("cqbij,cqj->cqbi", s[1], c)
        return np.einsum("cq,cqai,cqbi->cab", cq.weights, t[0], conv)

    mat = _volume_form(V, V, deg, kern)
    acc = _Triplets(mat.shape)
    for fq in _face_chunks(V, deg):
        tr = _face_traces(V, fq, derivatives=False)
        c, _ = sample(chi, fq.cells0, fq.ref0, fq.points, derivatives=False)
        cn = np.einsum("fqi,fi->fq", c, fq.normals)
        if tr.interior:
            jump, avg = tr.jump(tr.vals), tr.avg(tr.vals)
            local = -_gram(fq.weights * cn, avg, jump) + _gram(params.mu_c * fq.weights * np.abs(cn), jump, jump)
        else:
            inflow = np.where(cn < 0, -cn, 0.0)
            local = _gram(fq.weights * inflow, tr.vals[0], tr.vals[0])
        acc.add(tr.dofs, tr.dofs, local)
    return mat + acc.tocsr()


def _theta_sides(theta, tr: _FaceTraces, derivatives: bool):
    return [sample(theta, cells, ref, tr.fq.points, derivatives) for cells, ref in tr.sides()]


def assemble_J(V: FunctionSpace, params: ProblemParams) -> sp.csr_matrix:
    """Jump penalties of Theta x u (all faces) and curl(u x Theta) (interior faces)."""
    theta = params.theta
    if theta is None or (params.mu_J1 == 0 and params.mu_J2 == 0):
        return sp.csr_matrix((V.num_dofs, V.num_dofs))
    acc = _Triplets((V.num_dofs, V.num_dofs))
    for fq in _face_chunks(V, params.degree):
        tr = _face_traces(V, fq)
        th = _theta_sides(theta, tr, derivatives=tr.interior)
        cr = [np.cross(t[0][:, :, None, :], v) for t, v in zip(th, tr.vals)]
        j1 = tr.jump(cr)
        local = _gram(params.mu_J1 * fq.weights, j1, j1)
        if tr.interior and params.mu_J2 > 0:
            cc = []
            for (tv, tg), v, g in zip(th, tr.vals, tr.grads):
                cc.append(curl_cross(v, g, tv[:, :, None, :], tg[:, :, None, :, :]))
            j2 = tr.jump(cc)
            local = local + _gram(params.mu_J2 * (fq.diameters**2)[:, None] * fq.weights, j2, j2)
        acc.add(tr.dofs, tr.dofs, local)
    return acc.tocsr()


# ---------------------------------------------------------------- right-hand side

def _volume_load(space: FunctionSpace, degree: int, load) -> np.ndarray:
    out = np.zeros(space.num_dofs)
    for cells in cell_chunks(space.mesh.num_cells, CHUNK):
        cq = cell_quadrature(space.geometry, cells, degree)
        v, _ = space.tabulate(cells, cq.ref, derivatives=False)
        val = load(cq.points)
        np.add.at(out, _dofs(space, cells), np.einsum("cq,cqai,cqi->ca", cq.weights, v, val))
    return out


def assemble_rhs(disc: Discretization, params: ProblemParams, case: ManufacturedCase, homogeneous_magnetic: bool = False):
    """Velocity and magnetic load vectors, including the boundary data consistency terms.

    ``homogeneous_magnetic`` drops G and the magnetic boundary data (used to check the
    discrete magnetic kernel property literally).
    """
    V, W = disc.V, disc.W
    deg = params.degree + case.rhs_degree_boost
    nS, nM = params.nu_S, params.nu_M
    F = _volume_load(V, deg, lambda x: _load_f(case, x, params))
    G = np.zeros(W.num_dofs)
    if not homogeneous_magnetic:
        G = _volume_load(W, deg, lambda x: _load_G(case, x, params))
    fs = disc.faceset
    for idx in cell_chunks(len(fs.boundary), CHUNK):
        fq = face_quadrature(disc.mesh, fs, fs.boundary[idx], deg)
        n = fq.normals[:, None, :]
        g = case.u(fq.points)
        w = fq.weights
        v, gv = V.tabulate(fq.cells0, fq.ref0)
        # symmetric interior penalty data
        en = np.einsum("fqbij,fqj->fqbi", _sym(gv), np.broadcast_to(n, g.shape))
        loc = nS * (-np.einsum("fq,fqi,fqbi->fb", w, g, en) + np.einsum("fq,fqi,fqbi->fb", params.mu_a / fq.diameters[:, None] * w, g, v))
        if params.chi is not None:
            c, _ = sample(params.chi, fq.cells0, fq.ref0, fq.points, derivatives=False)
            cn = np.einsum("fqi,fqi->fq", c, np.broadcast_to(n, g.shape))
            inflow = np.where(cn < 0, -cn, 0.0)
            loc += np.einsum("fq,fqi,fqbi->fb", w * inflow, g, v)
        if params.theta is not None:
            th, _ = sample(params.theta, fq.cells0, fq.ref0, fq.points, derivatives=False)
            tg = np.cross(th, g)
            tv = np.cross(th[:, :, None, :], v)
            loc += params.mu_J1 * np.einsum("fq,fqi,fqbi->fb", w, tg, tv)
        np.add.at(F, _dofs(V, fq.cells0), loc)
        if homogeneous_magnetic:
            continue
        h, _ = W.tabulate(fq.cells0, fq.ref0, derivatives=False)
        nb = np.broadcast_to(n, g.shape)
        data = nM * np.cross(case.curl_B(fq.points), nb)
        if params.theta is not None:
            data = data + np.cross(nb, np.cross(g, th))
        np.add.at(G, _dofs(W, fq.cells0), np.einsum("fq,fqi,fqbi->fb", w, data, h))
    return F, G


def _load_f(case: ManufacturedCase, x, p: ProblemParams):
    gu = case.u.grad(x)
    conv = np.einsum("...ij,...j->...i", gu, p.chi(x)) if p.chi is not None else 0.0
    lor = np.cross(p.theta(x), case.curl_B(x)) if p.theta is not None else 0.0
    return p.sigma_S * case.u(x) - p.nu_S * case.div_eps_u(x) + conv + lor - case.grad_p(x)


def _load_G(case: ManufacturedCase, x, p: ProblemParams):
    out = p.sigma_M * case.B(x) + p.nu_M * case.curl_curl_B(x)
    if p.theta is not None:
        out = out - curl_cross(case.u(x), case.u.grad(x), p.theta(x), p.theta.grad(x))
    return out


# ---------------------------------------------------------------- monolithic system

@dataclass(eq=False)
class SparseSystem:
    """Reduced square system over the free unknowns plus the data needed to expand it.

    ``matrix`` and ``rhs`` act on ``free``; ``full_matrix``/``full_rhs`` keep every
    unknown; ``fixed`` holds the prescribed values of eliminated unknowns.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    full_matrix: sp.csr_matrix
    full_rhs: np.ndarray
    free: np.ndarray
    fixed: np.ndarray
    offsets: np.ndarray
    blocks: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        x = self.fixed.copy()
        x[self.free] = x_free
        return x

    def split(self, x_full: np.ndarray):
        o = self.offsets
        return x_full[o[0]:o[1]], x_full[o[1]:o[2]], x_full[o[2]:o[3]], x_full[o[3]:o[4]]


def mean_vector(Q: FunctionSpace) -> np.ndarray:
    out = np.zeros(Q.num_dofs)
    for cells in cell_chunks(Q.mesh.num_cells, CHUNK):
        cq = cell_quadrature(Q.geometry, cells, max(Q.basis.degree, 1))
        v, _ = Q.tabulate(cells, cq.ref, derivatives=False)
        np.add.at(out, _dofs(Q, cells), np.einsum("cq,cqb->cb", cq.weights, v[..., 0]))
    return out


def assemble_system(
    disc: Discretization,
    params: ProblemParams,
    case: ManufacturedCase,
    homogeneous_magnetic: bool = False,
) -> SparseSystem:
    V, Q, W = disc.V, disc.Q, disc.W
    if params.k != V.basis.degree:
        raise ValueError(f"params.k={params.k} does not match the discretization degree {V.basis.degree}")
    MV = assemble_mass(V)
    MW = assemble_mass(W)
    aS = assemble_aS(V, params)
    C = assemble_c(V, params)
    J = assemble_J(V, params)
    Bq = assemble_b(V, Q)
    aM = assemble_aM(W)
    D = assemble_d(W, V, params.theta, params.degree) if params.theta is not None else sp.csr_matrix((V.num_dofs, W.num_dofs))
    m = sp.csr_matrix(mean_vector(Q)[:, None])
    A_uu = (params.sigma_S * MV + params.nu_S * aS + C + J).tocsr()
    A_BB = (params.sigma_M * MW + params.nu_M * aM).tocsr()
    K = sp.bmat(
        [
            [A_uu, Bq.T, None, -D],
            [Bq, None, m, None],
            [None, m.T, None, None],
            [D.T, None, None, A_BB],
        ],
        format="csr",
    )
    offsets = disc.offsets
    n = int(offsets[-1])
    if K.shape != (n, n):
        raise ValueError(f"dimension mismatch: operator {K.shape} vs unknowns {n}")
    F, G = assemble_rhs(disc, params, case, homogeneous_magnetic)
    rhs = np.zeros(n)
    rhs[offsets[0]:offsets[1]] = F
    rhs[offsets[3]:offsets[4]] = G

    fixed = np.zeros(n)
    constrained = V.dofmap.constrained
    if len(constrained):
        fixed[constrained] = interp_bdm(case.u, V).coeffs[constrained]
    mask = np.ones(n, dtype=bool)
    mask[constrained] = False
    free = np.flatnonzero(mask)
    Kc = K[:, constrained]
    reduced_rhs = (rhs - Kc @ fixed[constrained])[free]
    Kf = K[free][:, free].tocsr()
    blocks = {"A_uu": A_uu, "A_BB": A_BB, "D": D, "b": Bq, "aS": aS, "c": C, "J": J, "aM": aM, "M_u": MV, "M_B": MW, "mean": m}
    return SparseSystem(Kf, reduced_rhs, K, rhs, free, fixed, offsets, blocks)
