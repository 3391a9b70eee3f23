"""Manufactured solutions: smooth cube case, singular L-shape case, polynomial patch cases."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .elements import curl_from_grad
from .integration import AnalyticField, constant_field

Array = np.ndarray
PI = np.pi


class CaseError(ValueError):
    pass


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact fields with first derivatives plus the second-order terms the loads need.

    Gradients follow ``grad[..., i, j] = d v_i / d x_j``; the pressure gradient is ``(..., 3)``.
    """

    name: str
    domain: str
    u: AnalyticField
    p: Callable[[Array], Array]
    grad_p: Callable[[Array], Array]
    B: AnalyticField
    chi: AnalyticField
    theta: AnalyticField
    div_eps_u: Callable[[Array], Array]
    curl_curl_B: Callable[[Array], Array]
    rhs_degree_boost: int = 0
    polynomial_degree: int | None = None

    def curl_B(self, x: Array) -> Array:
        return curl_from_grad(self.B.grad(x))

    def load_f(self, x: Array, sigma: float, nu: float) -> Array:
        gu = self.u.grad(x)
        conv = np.einsum("...ij,...j->...i", gu, self.chi(x))
        lorentz = np.cross(self.theta(x), self.curl_B(x))
        return sigma * self.u(x) - nu * self.div_eps_u(x) + conv + lorentz - self.grad_p(x)

    def load_G(self, x: Array, sigma: float, nu: float) -> Array:
        return sigma * self.B(x) + nu * self.curl_curl_B(x) - curl_cross(self.u(x), self.u.grad(x), self.theta(x), self.theta.grad(x))

    def sample_points(self, n: int, rng: np.random.Generator) -> Array:
        if self.domain == "cube":
            return rng.uniform(0.02, 0.98, size=(n, 3))
        out = np.empty((0, 3))
        while len(out) < n:
            x = rng.uniform(-0.98, 0.98, size=(4 * n, 3))
            keep = ~((x[:, 0] < 0.02) & (x[:, 1] < 0.02)) & (np.hypot(x[:, 0], x[:, 1]) > 0.05)
            out = np.vstack([out, x[keep]])
        return out[:n]


def curl_cross(u: Array, gu: Array, th: Array, gth: Array) -> Array:
    """curl(u x Theta) = (div Theta) u - (div u) Theta + (grad u) Theta - (grad Theta) u."""
    div_th = np.trace(gth, axis1=-2, axis2=-1)[..., None]
    div_u = np.trace(gu, axis1=-2, axis2=-1)[..., None]
    return (
        div_th * u
        - div_u * th
        + np.einsum("...ij,...j->...i", gu, th)
        - np.einsum("...ij,...j->...i", gth, u)
    )


def _stack(*cols):
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


def _mat(rows):
    return np.stack([_stack(*r) for r in rows], axis=-2)


# ---------------------------------------------------------------- smooth cube case

def _sc(x):
    s = np.sin(PI * x)
    c = np.cos(PI * x)
    return s[..., 0], s[..., 1], s[..., 2], c[..., 0], c[..., 1], c[..., 2]


def _t1_u(x):
    sx, sy, sz, cx, cy, cz = _sc(x)
    return _stack(sx * cy * cz, cx * sy * cz, -2 * cx * cy * sz)


def _t1_grad_u(x):
    sx, sy, sz, cx, cy, cz = _sc(x)
    return PI * _mat([
        (cx * cy * cz, -sx * sy * cz, -sx * cy * sz),
        (-sx * sy * cz, cx * cy * cz, -cx * sy * sz),
        (2 * sx * cy * sz, 2 * cx * sy * sz, -2 * cx * cy * cz),
    ])


def _t1_B(x):
    sx, sy, sz, *_ = _sc(x)
    return _stack(sy, sz, sx)


def _t1_grad_B(x):
    _, _, _, cx, cy, cz = _sc(x)
    z = np.zeros_like(cx)
    return PI * _mat([(z, cy, z), (z, z, cz), (cx, z, z)])


def test1_case() -> ManufacturedCase:
    u = AnalyticField(_t1_u, _t1_grad_u)
    B = AnalyticField(_t1_B, _t1_grad_B)
    return ManufacturedCase(
        name="test1",
        domain="cube",
        u=u,
        p=lambda x: np.sin(PI * x[..., 0]) + np.sin(PI * x[..., 1]) - 2 * np.sin(PI * x[..., 2]),
        grad_p=lambda x: PI * _stack(np.cos(PI * x[..., 0]), np.cos(PI * x[..., 1]), -2 * np.cos(PI * x[..., 2])),
        B=B,
        chi=u,
        theta=B,
        div_eps_u=lambda x: -1.5 * PI**2 * _t1_u(x),
        curl_curl_B=lambda x: PI**2 * _t1_B(x),
    )


# ---------------------------------------------------------------- singular L-shape case

ALPHA = 2.0 / 3.0


def _polar(x):
    rho = np.hypot(x[..., 0], x[..., 1])
    theta = np.arctan2(x[..., 1], x[..., 0])
    # the excluded quadrant is x<0, y<0, so angles below -pi/2 belong to the branch near +pi
    theta = np.where(theta < -0.5 * PI, theta + 2 * PI, theta)
    return rho, theta + 0.5 * PI


def singular_potential(x: Array) -> Array:
    rho, phi = _polar(x)
    return rho**ALPHA * np.sin(ALPHA * phi)


def _t2_B(x):
    # r = Im((i z)^alpha) with z = x + i y; grad r = (Im f', Re f')
    rho, phi = _polar(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = ALPHA * rho ** (ALPHA - 1)
        bx = c * np.cos((ALPHA - 1) * phi)
        by = -c * np.sin((ALPHA - 1) * phi)
    on_edge = rho == 0.0
    # tangential (z) component is exactly zero on the reentrant edge; use it as the limit
    bx = np.where(on_edge, 0.0, bx)
    by = np.where(on_edge, 0.0, by)
    return _stack(bx, by, np.zeros_like(bx))


def _t2_grad_B(x):
    rho, phi = _polar(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        c2 = -ALPHA * (ALPHA - 1) * rho ** (ALPHA - 2)
        rxx = c2 * np.sin((ALPHA - 2) * phi)
        rxy = c2 * np.cos((ALPHA - 2) * phi)
    z = np.zeros_like(rxx)
    return _mat([(rxx, rxy, z), (rxy, -rxx, z), (z, z, z)])


def _quad_u(x):
    return _stack(x[..., 1] ** 2, x[..., 2] ** 2, x[..., 0] ** 2)


def _quad_grad_u(x):
    z = np.zeros_like(x[..., 0])
    return _mat([(z, 2 * x[..., 1], z), (z, z, 2 * x[..., 2]), (2 * x[..., 0], z, z)])


def test2_case() -> ManufacturedCase:
    zero3 = lambda x: np.zeros(x.shape[:-1] + (3,))
    return ManufacturedCase(
        name="test2",
        domain="lshape",
        u=AnalyticField(_quad_u, _quad_grad_u),
        p=lambda x: np.zeros(x.shape[:-1]),
        grad_p=zero3,
        B=AnalyticField(_t2_B, _t2_grad_B),
        chi=constant_field([1.0, 2.0, -1.0]),
        theta=constant_field([1.0, -1.0, 2.0]),
        div_eps_u=lambda x: np.ones(x.shape[:-1] + (3,)),
        curl_curl_B=zero3,
        rhs_degree_boost=4,
    )


# ---------------------------------------------------------------- polynomial patch cases

_THETA_LIN = np.array([[0.0, 0.5, 0.0], [0.0, 0.0, 0.5], [0.5, 0.0, 0.0]])
_THETA_OFF = np.array([1.0, -1.0, 2.0])


def _linear_field(A, b) -> AnalyticField:
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    return AnalyticField(lambda x: x @ A.T + b, lambda x: np.broadcast_to(A, x.shape[:-1] + (3, 3)).copy())


def patch_case(k: int) -> ManufacturedCase:
    """Exact solution inside the discrete spaces of degree k (linear for k=1, quadratic for k=2)."""
    theta = _linear_field(_THETA_LIN, _THETA_OFF)
    chi = constant_field([1.0, 2.0, -1.0])
    zero3 = lambda x: np.zeros(x.shape[:-1] + (3,))
    if k == 1:
        u = _linear_field([[0, 1, 0], [0, 0, 1], [1, 0, 0]], [0.2, -0.1, 0.3])
        B = _linear_field([[0, 0, 1], [1, 0, 0], [0, 1, 0]], [0.5, 0.0, -0.5])
        return ManufacturedCase(
            name="patch", domain="cube", u=u,
            p=lambda x: np.zeros(x.shape[:-1]), grad_p=zero3,
            B=B, chi=chi, theta=theta, div_eps_u=zero3, curl_curl_B=zero3,
            polynomial_degree=1,
        )
    if k == 2:
        def B_val(x):
            return _stack(x[..., 1] * x[..., 2], x[..., 0] ** 2, x[..., 0] * x[..., 1] + x[..., 2])

        def B_grad(x):
            X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
            o, one = np.zeros_like(X), np.ones_like(X)
            return _mat([(o, Z, Y), (2 * X, o, o), (Y, X, one)])

        return ManufacturedCase(
            name="patch", domain="cube", u=AnalyticField(_quad_u, _quad_grad_u),
            p=lambda x: x[..., 0] - 0.5,
            grad_p=lambda x: np.broadcast_to([1.0, 0.0, 0.0], x.shape[:-1] + (3,)).copy(),
            B=AnalyticField(B_val, B_grad), chi=chi, theta=theta,
            div_eps_u=lambda x: np.ones(x.shape[:-1] + (3,)),
            curl_curl_B=lambda x: np.broadcast_to([0.0, -2.0, 0.0], x.shape[:-1] + (3,)).copy(),
            polynomial_degree=2,
        )
    raise CaseError(f"no patch case for k={k}")


CASES = ("test1", "test2", "patch")


def get_case(name: str, k: int = 1, check: bool = True) -> ManufacturedCase:
    if name == "test1":
        case = test1_case()
    elif name == "test2":
        case = test2_case()
    elif name == "patch":
        case = patch_case(k)
    else:
        raise CaseError(f"unknown case {name!r} (choose from {', '.join(CASES)})")
    if check:
        self_check(case)
    return case


# ---------------------------------------------------------------- finite-difference self-check

def _fd_grad(fn, x, h):
    cols = []
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        cols.append((fn(x + e) - fn(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def self_check(case: ManufacturedCase, n: int = 100, rtol: float = 1e-5, seed: int = 0) -> dict[str, float]:
    """Compare hand-derived derivatives and loads against centered differences.

    Raises CaseError on a mismatch; returns the relative discrepancies.
    """
    x = case.sample_points(n, np.random.default_rng(seed))
    h = 1e-5
    gu = _fd_grad(case.u, x, h)
    gB = _fd_grad(case.B, x, h)
    gp = _fd_grad(case.p, x, h)
    eps_fd = lambda y: 0.5 * (case.u.grad(y) + np.swapaxes(case.u.grad(y), -1, -2))
    div_eps = np.einsum("...ijj->...i", _fd_grad(eps_fd, x, h))
    curlcurl = curl_from_grad(_fd_grad(case.curl_B, x, h))
    res = {
        "grad_u": _rel(gu, case.u.grad(x)),
        "grad_p": _rel(gp, case.grad_p(x)),
        "grad_B": _rel(gB, case.B.grad(x)),
        "grad_chi": _rel(_fd_grad(case.chi, x, h), case.chi.grad(x)),
        "grad_theta": _rel(_fd_grad(case.theta, x, h), case.theta.grad(x)),
        "div_eps_u": _rel(div_eps, case.div_eps_u(x)),
        "curl_curl_B": _rel(curlcurl, case.curl_curl_B(x)),
    }
    sigma, nu = 1.0, 1.0
    f_fd = (
        sigma * case.u(x) - nu * div_eps + np.einsum("...ij,...j->...i", gu, case.chi(x))
        + np.cross(case.theta(x), curl_from_grad(gB)) - gp
    )
    G_fd = sigma * case.B(x) + nu * curlcurl - curl_from_grad(_fd_grad(lambda y: np.cross(case.u(y), case.theta(y)), x, h))
    res["f"] = _rel(f_fd, case.load_f(x, sigma, nu))
    res["G"] = _rel(G_fd, case.load_G(x, sigma, nu))
    bad = {k: v for k, v in res.items() if not v <= rtol}
    if bad:
        raise CaseError(f"case {case.name}: derivative mismatch {bad}")
    div_u = np.trace(case.u.grad(x), axis1=-2, axis2=-1)
    if np.max(np.abs(div_u)) > 1e-10:
        raise CaseError(f"case {case.name}: velocity is not divergence free")
    return res
