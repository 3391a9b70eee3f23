import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stabmhd.assembly import ProblemParams, assemble_system, make_discretization, mean_vector
from stabmhd.cases import get_case
from stabmhd.mesh import generate_cube_mesh
from stabmhd.norms import (
    ErrorReport,
    compute_errors,
    convergence_rates,
    norm_components,
    report_from_sums,
    stab_norm,
)
from stabmhd.solver import solve


def _report(h, **errs):
    base = {f: 1.0 for f in ErrorReport.__dataclass_fields__ if f.startswith("err_")}
    base.update(errs)
    return ErrorReport(h=h, dofs_u=1, dofs_p=1, dofs_B=1, **base)


@pytest.fixture(scope="module")
def setting():
    case = get_case("test1")
    disc = make_discretization(generate_cube_mesh(2), 1)
    return case, disc


def _params(case, nu=1.0, k=1):
    return ProblemParams(k=k, nu_S=nu, nu_M=nu, chi=case.chi, theta=case.theta)


def test_rate_of_halved_error_is_one():
    t = convergence_rates([_report(0.5, err_u_L2=0.1), _report(0.25, err_u_L2=0.05)], ("err_u_L2",))
    assert t.finest("err_u_L2") == pytest.approx(1.0, abs=1e-12)


def test_rate_of_quartered_error_is_two():
    t = convergence_rates([_report(0.5, err_u_L2=0.04), _report(0.25, err_u_L2=0.01)], ("err_u_L2",))
    assert t.finest("err_u_L2") == pytest.approx(2.0, abs=1e-12)


def test_zero_error_gives_undefined_rate():
    t = convergence_rates([_report(0.5, err_p_L2=0.0), _report(0.25, err_p_L2=0.0)], ("err_p_L2",))
    assert math.isnan(t.finest("err_p_L2")) and bool(t.undefined[0, 0])


def test_rates_need_decreasing_mesh_sizes():
    with pytest.raises(ValueError):
        convergence_rates([_report(0.25), _report(0.5)])
    with pytest.raises(ValueError):
        convergence_rates([_report(0.25)])


@given(e0=st.floats(1e-8, 1e3), ratio=st.floats(1.1, 64.0), q=st.floats(0.2, 4.0))
def test_rate_inverts_power_law(e0, ratio, q):
    h0 = 0.5
    t = convergence_rates([_report(h0, err_u_L2=e0), _report(h0 / ratio, err_u_L2=e0 * ratio**-q)], ("err_u_L2",))
    assert t.finest("err_u_L2") == pytest.approx(q, rel=1e-9)


def test_stability_norm_is_sum_of_components(setting):
    case, disc = setting
    rng = np.random.default_rng(3)
    params = _params(case)
    u = rng.standard_normal(disc.V.num_dofs)
    rep = report_from_sums(norm_components(disc, params, u, np.zeros(disc.W.num_dofs)), disc, params)
    total = rep.err_u_S**2 + rep.err_u_upw**2 + rep.err_u_cip**2 + rep.err_u_curl**2
    assert rep.err_u_stab**2 == pytest.approx(total, rel=1e-12)


def test_curl_weight_switches_with_magnetic_diffusion(setting):
    case, disc = setting
    rng = np.random.default_rng(4)
    u = rng.standard_normal(disc.V.num_dofs)
    curl = []
    for nu in (1.0, 1e-6):
        params = _params(case, nu)
        rep = report_from_sums(norm_components(disc, params, u, np.zeros(disc.W.num_dofs)), disc, params)
        curl.append(rep.err_u_curl**2)
    # gamma = max(h, nu_M): 1 for nu_M = 1 and h for nu_M = 1e-6
    assert curl[1] / curl[0] == pytest.approx(1.0 / disc.mesh.h, rel=1e-12)


def test_total_norm_formula(setting):
    case, disc = setting
    rng = np.random.default_rng(5)
    params = _params(case)
    u, B = rng.standard_normal(disc.V.num_dofs), rng.standard_normal(disc.W.num_dofs)
    s = norm_components(disc, params, u, B)
    rep = report_from_sums(s, disc, params)
    expected = (math.sqrt(s.u_L2) + math.sqrt(s.u_H1) + math.sqrt(s.B_L2) + math.sqrt(s.B_curl)
                + 0.05 * s.cip1 + 0.01 * s.cip2_total)
    assert rep.err_total == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("k", [1, 2])
def test_errors_vanish_for_reproduced_polynomials(k):
    case = get_case("patch", k)
    disc = make_discretization(generate_cube_mesh(2), k)
    params = _params(case, k=k)
    sol = solve(assemble_system(disc, params, case), mean_vector(disc.Q))
    rep = compute_errors(case, disc, params, sol.u, sol.p, sol.B)
    for name in ("err_u_L2", "err_u_H1", "err_u_stab", "err_p_L2", "err_B_L2", "err_B_curl"):
        assert getattr(rep, name) <= 1e-8, name


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_stability_norm_triangle_inequality_and_homogeneity(seed):
    case = get_case("test1")
    disc = _DISC
    params = _params(case)
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, disc.V.num_dofs))
    na, nb, nab = stab_norm(disc, params, a), stab_norm(disc, params, b), stab_norm(disc, params, a + b)
    assert nab <= na + nb + 1e-12
    assert stab_norm(disc, params, -2.5 * a) == pytest.approx(2.5 * na, rel=1e-12)


_DISC = make_discretization(generate_cube_mesh(1), 1)


def test_quadrature_degree_floor(setting):
    case, disc = setting
    with pytest.raises(ValueError):
        norm_components(disc, _params(case), np.zeros(disc.V.num_dofs), np.zeros(disc.W.num_dofs), degree=3)
