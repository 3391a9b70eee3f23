"""Direct sparse solve of the assembled saddle-point system."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import SparseSystem

REFINE_TOL = 1e-11
MAX_REFINE = 3
RESIDUAL_TOL = 1e-9


class SingularSystemError(RuntimeError):
    pass


@dataclass
class SolveReport:
    u: np.ndarray
    p: np.ndarray
    B: np.ndarray
    multiplier: float
    residual: float
    refinement_steps: int
    min_pivot: float
    max_pivot: float
    seconds: float


def _relative_residual(A, x, b) -> float:
    nb = np.linalg.norm(b)
    r = np.linalg.norm(b - A @ x)
    return r / nb if nb > 0 else r


def solve(system: SparseSystem, mean_weights: np.ndarray | None = None) -> SolveReport:
    """LU-factorize the reduced operator, solve, refine and expand to all unknowns.

    At least one step of iterative refinement is taken, then more (up to
    ``MAX_REFINE``) while the relative residual exceeds ``REFINE_TOL``.

    The pressure is shifted to exact zero mean afterwards using ``mean_weights``
    (the integrals of the pressure basis functions), defaulting to the assembled
    mean-constraint column.
    """
    t0 = time.perf_counter()
    A = system.matrix.tocsc()
    b = system.rhs
    try:
        lu = spla.splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularSystemError(f"factorization failed: {exc}") from exc
    diag = np.abs(lu.U.diagonal())
    imin = int(np.argmin(diag))
    if not diag[imin] > 1e-14 * max(diag.max(), 1e-300):
        col = int(lu.perm_c[imin]) if hasattr(lu, "perm_c") else imin
        raise SingularSystemError(
            f"near-singular pivot {diag[imin]:.3e} at elimination step {imin} (free unknown {col})"
        )
    x = lu.solve(b)
    res = _relative_residual(A, x, b)
    steps = 0
    # one step always: it removes the roundoff left in the small divergence rows
    while (res > REFINE_TOL or steps == 0) and steps < MAX_REFINE:
        x = x + lu.solve(b - A @ x)
        res = _relative_residual(A, x, b)
        steps += 1
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("solution contains non-finite values")
    if res > RESIDUAL_TOL:
        raise SingularSystemError(f"relative residual {res:.3e} exceeds {RESIDUAL_TOL:g}")
    full = system.expand(x)
    u, p, lam, B = system.split(full)
    p = p.copy()
    w = mean_weights if mean_weights is not None else system.blocks["mean"].toarray().ravel()
    if w.sum() > 0:
        p -= (w @ p) / w.sum()
    return SolveReport(
        u=u.copy(), p=p, B=B.copy(), multiplier=float(lam[0]), residual=res,
        refinement_steps=steps, min_pivot=float(diag.min()), max_pivot=float(diag.max()),
        seconds=time.perf_counter() - t0,
    )
