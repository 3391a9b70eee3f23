"""Error norms, parameter-dependent stability norms and observed convergence rates."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .assembly import Discretization, ProblemParams
from .cases import ManufacturedCase, curl_cross
from .elements import curl_from_grad
from .integration import cell_chunks, cell_quadrature, face_quadrature, sample
from .interpolation import PiecewiseField, theta_piecewise_constant
from .spaces import FEFunction

CHUNK = 256


@dataclass(frozen=True)
class ErrorReport:
    h: float
    dofs_u: int
    dofs_p: int
    dofs_B: int
    err_u_L2: float
    err_u_H1: float
    err_u_S: float
    err_u_upw: float
    err_u_cip: float
    err_u_curl: float
    err_u_stab: float
    err_p_L2: float
    err_B_L2: float
    err_B_curl: float
    err_B_M: float
    err_total: float

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class _Sums:
    """Squared integrals accumulated over cells and faces."""

    u_L2: float = 0.0
    u_H1: float = 0.0
    u_eps: float = 0.0
    u_pen: float = 0.0
    upw: float = 0.0
    cip1: float = 0.0
    cip2: float = 0.0
    cip2_total: float = 0.0
    curl: float = 0.0
    p_L2: float = 0.0
    B_L2: float = 0.0
    B_curl: float = 0.0


def _exact_or_zero(fn, x, shape):
    return fn(x) if fn is not None else np.zeros(x.shape[:-1] + shape)


def norm_components(
    disc: Discretization,
    params: ProblemParams,
    u_h: np.ndarray,
    B_h: np.ndarray,
    p_h: np.ndarray | None = None,
    exact: ManufacturedCase | None = None,
    theta_h: PiecewiseField | None = None,
    degree: int | None = None,
) -> _Sums:
    """Squared norm contributions of (exact - discrete); ``exact=None`` measures the discrete fields."""
    k = params.k
    deg = degree if degree is not None else 2 * k + 4
    if deg < 2 * k + 4:
        raise ValueError("error quadrature degree must be at least 2k+4")
    if exact is not None and (exact.u.grad is None or exact.B.grad is None):
        raise ValueError("exact fields need derivative callbacks")
    V, Q, W = disc.V, disc.Q, disc.W
    uf, Bf = FEFunction(V, u_h), FEFunction(W, B_h)
    pf = FEFunction(Q, p_h) if p_h is not None else None
    th_h = theta_h
    if th_h is None and params.theta is not None:
        th_h = theta_piecewise_constant(params.theta, disc.mesh)
    s = _Sums()
    hE = disc.mesh.cell_diameters()
    for cells in cell_chunks(disc.mesh.num_cells, CHUNK):
        cq = cell_quadrature(V.geometry, cells, deg)
        X, w = cq.points, cq.weights
        uv, ug = uf.evaluate(cells, cq.ref)
        Bv, Bg = Bf.evaluate(cells, cq.ref)
        eu = _exact_or_zero(exact and exact.u, X, (3,)) - uv
        gu = (exact.u.grad(X) if exact is not None else 0.0) - ug
        eB = _exact_or_zero(exact and exact.B, X, (3,)) - Bv
        cB = (exact.curl_B(X) if exact is not None else 0.0) - curl_from_grad(Bg)
        s.u_L2 += np.sum(w * np.sum(eu**2, -1))
        s.u_H1 += np.sum(w * np.sum(gu**2, (-2, -1)))
        s.u_eps += np.sum(w * np.sum((0.5 * (gu + np.swapaxes(gu, -1, -2))) ** 2, (-2, -1)))
        s.B_L2 += np.sum(w * np.sum(eB**2, -1))
        s.B_curl += np.sum(w * np.sum(cB**2, -1))
        if pf is not None:
            pv, _ = pf.evaluate(cells, cq.ref, derivatives=False)
            ep = (exact.p(X) if exact is not None else 0.0) - pv[..., 0]
            s.p_L2 += np.sum(w * ep**2)
        if th_h is not None:
            tv, tg = sample(th_h, cells, cq.ref, X)
            cc = curl_cross(eu, gu, tv, tg)
            s.curl += np.sum(hE[cells][:, None] ** 2 * w * np.sum(cc**2, -1))
    fs = disc.faceset
    for faces in (fs.interior, fs.boundary):
        for idx in cell_chunks(len(faces), CHUNK):
            fq = face_quadrature(disc.mesh, fs, faces[idx], deg)
            X, w, hf = fq.points, fq.weights, fq.diameters[:, None]
            sides = [(fq.cells0, fq.ref0)] + ([(fq.cells1, fq.ref1)] if fq.interior else [])
            ex_u = _exact_or_zero(exact and exact.u, X, (3,))
            ex_g = exact.u.grad(X) if exact is not None else np.zeros(X.shape[:-1] + (3, 3))
            per = []
            for cells, ref in sides:
                v, g = uf.evaluate(cells, ref)
                per.append((ex_u - v, ex_g - g, cells, ref))

            def jump(vals):
                return vals[0] - vals[1] if fq.interior else vals[0]

            ju = jump([e for e, *_ in per])
            s.u_pen += np.sum(w / hf * np.sum(ju**2, -1))
            if fq.interior and params.chi is not None:
                c, _ = sample(params.chi, fq.cells0, fq.ref0, X, derivatives=False)
                cn = np.abs(np.einsum("fqi,fi->fq", c, fq.normals))
                s.upw += np.sum(cn * w * np.sum(ju**2, -1))
            if params.theta is not None:
                th = [sample(params.theta, c_, r_, X) for _, _, c_, r_ in per]
                j1 = jump([np.cross(t[0], e) for t, (e, *_) in zip(th, per)])
                s.cip1 += np.sum(w * np.sum(j1**2, -1))
                if fq.interior:
                    thh = [sample(th_h, c_, r_, X) for _, _, c_, r_ in per]
                    j2 = jump([curl_cross(e, g, t[0], t[1]) for t, (e, g, *_) in zip(thh, per)])
                    s.cip2 += np.sum(hf**2 * w * np.sum(j2**2, -1))
                    j2t = jump([curl_cross(e, g, t[0], t[1]) for t, (e, g, *_) in zip(th, per)])
                    s.cip2_total += np.sum(hf**2 * w * np.sum(j2t**2, -1))
    return s


def compute_errors(
    case: ManufacturedCase,
    disc: Discretization,
    params: ProblemParams,
    u_h: np.ndarray,
    p_h: np.ndarray,
    B_h: np.ndarray,
    theta_h: PiecewiseField | None = None,
    degree: int | None = None,
) -> ErrorReport:
    s = norm_components(disc, params, u_h, B_h, p_h, case, theta_h, degree)
    return report_from_sums(s, disc, params)


def report_from_sums(s: _Sums, disc: Discretization, params: ProblemParams) -> ErrorReport:
    h = disc.mesh.h
    gamma = max(h, params.nu_M)
    S2 = params.sigma_S * s.u_L2 + params.nu_S * s.u_eps + params.nu_S * params.mu_a * s.u_pen
    upw2 = params.mu_c * s.upw
    cip2 = params.mu_J1 * s.cip1 + params.mu_J2 * s.cip2
    curl2 = s.curl / gamma
    total = (
        params.sigma_S * math.sqrt(s.u_L2) + params.nu_S * math.sqrt(s.u_H1)
        + params.sigma_M * math.sqrt(s.B_L2) + params.nu_M * math.sqrt(s.B_curl)
        + params.mu_J1 * s.cip1 + params.mu_J2 * s.cip2_total
    )
    V, Q, W = disc.V, disc.Q, disc.W
    rep = ErrorReport(
        h=h,
        dofs_u=V.num_dofs - len(V.dofmap.constrained),
        dofs_p=Q.num_dofs,
        dofs_B=W.num_dofs,
        err_u_L2=math.sqrt(s.u_L2),
        err_u_H1=math.sqrt(s.u_H1),
        err_u_S=math.sqrt(S2),
        err_u_upw=math.sqrt(upw2),
        err_u_cip=math.sqrt(cip2),
        err_u_curl=math.sqrt(curl2),
        err_u_stab=math.sqrt(S2 + upw2 + cip2 + curl2),
        err_p_L2=math.sqrt(s.p_L2),
        err_B_L2=math.sqrt(s.B_L2),
        err_B_curl=math.sqrt(s.B_curl),
        err_B_M=math.sqrt(params.sigma_M * s.B_L2 + params.nu_M * s.B_curl),
        err_total=total,
    )
    bad = [k for k, v in rep.as_dict().items() if not (np.isfinite(v) and v >= 0)]
    if bad:
        raise FloatingPointError(f"non-finite or negative error entries: {bad}")
    return rep


def stab_norm(disc: Discretization, params: ProblemParams, u_h: np.ndarray, theta_h: PiecewiseField | None = None) -> float:
    """Stability norm of a discrete velocity."""
    zero_B = np.zeros(disc.W.num_dofs)
    return report_from_sums(norm_components(disc, params, u_h, zero_B, theta_h=theta_h), disc, params).err_u_stab


def magnetic_norm(disc: Discretization, params: ProblemParams, B_h: np.ndarray) -> float:
    zero_u = np.zeros(disc.V.num_dofs)
    return report_from_sums(norm_components(disc, params, zero_u, B_h), disc, params).err_B_M


@dataclass(frozen=True)
class RateTable:
    columns: tuple[str, ...]
    rates: np.ndarray  # (levels - 1, columns)
    undefined: np.ndarray  # True where an error entry was zero

    def column(self, name: str) -> np.ndarray:
        return self.rates[:, self.columns.index(name)]

    def finest(self, name: str) -> float:
        return float(self.column(name)[-1])


ERROR_COLUMNS = ("err_u_L2", "err_u_H1", "err_p_L2", "err_B_L2", "err_B_curl", "err_total")


def convergence_rates(reports, columns=ERROR_COLUMNS) -> RateTable:
    """rate_i = log(e_i / e_{i+1}) / log(h_i / h_{i+1}) for consecutive reports."""
    if len(reports) < 2:
        raise ValueError("need at least two reports")
    hs = np.array([r.h for r in reports])
    if np.any(np.diff(hs) >= 0):
        raise ValueError("reports must have strictly decreasing h")
    E = np.array([[getattr(r, c) for c in columns] for r in reports], dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.log(E[:-1] / E[1:]) / np.log(hs[:-1] / hs[1:])[:, None]
    undefined = (E[:-1] == 0) | (E[1:] == 0)
    rates[undefined] = np.nan
    return RateTable(tuple(columns), rates, undefined)
