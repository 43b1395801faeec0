import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbilap.analysis import (
    DiagnosticError,
    EocTable,
    breakpoint_diagnostics_1d,
    callback_norm_lp,
    continuation_diagnostics,
    cosine_2d_case,
    cubic_1d_case,
    eoc,
    error_gradu_lp,
    error_w_lq,
    histogram_modes,
    laplacian_values,
    lp_norm,
    manufactured_sine,
    norm_lp,
    recovered_laplacian,
    stability_margin,
)
from pbilap.assembly import ProblemSpec, assemble_neumann_rhs, high_order_rule
from pbilap.mesh import criss_cross_mesh, refine_uniform, unit_interval_mesh
from pbilap.solver import solve_p_bilaplacian
from pbilap.space import FeFunction, build_space, interpolate

PI = math.pi


def fd_laplacian(f, pts, h=1e-4):
    """Nested central differences: d/dx(d/dx f) + d/dy(d/dy f)."""
    out = np.zeros(len(pts))
    for d in range(pts.shape[1]):
        e = np.zeros(pts.shape[1])
        e[d] = h

        def first(x):
            return (f(x + e) - f(x - e)) / (2 * h)

        out += (first(pts + e) - first(pts - e)) / (2 * h)
    return out


def fd_laplacian_richardson(f, pts, h=2e-4):
    """Fourth-order accurate: cancels the h^2 term of the nested stencil."""
    return (4 * fd_laplacian(f, pts, h / 2) - fd_laplacian(f, pts, h)) / 3


def fd_derivative(f, x, h=1e-5):
    return (f(x + h) - f(x - h)) / (2 * h)


# ------------------------------------------------------------------ cases


@pytest.mark.parametrize("p", [2.0, 3.0, 4.0, 7.5])
def test_manufactured_source_matches_finite_differences(p):
    case = manufactured_sine(p)
    c = 2 * PI**2
    rng = np.random.default_rng(int(10 * p))
    pts = rng.uniform(-1, 1, size=(400, 2))
    # central differences are only trustworthy where w = -c^(p-1)|s|^(p-2)s
    # is smooth on the scale of the stencil, i.e. away from the zero lines of s
    dist = np.min(np.abs(np.concatenate([pts, pts - 1, pts + 1], axis=1)), axis=1)
    pts = pts[dist > 0.05][:100]
    assert len(pts) == 100
    fd = fd_laplacian_richardson(case.exact_w, pts)
    exact = case.spec.source_f(pts)
    # f has interior zeros where its two terms cancel; compare against their sizes
    s = np.abs(case.exact_u(pts))
    grad2 = np.sum(case.exact_grad_u(pts) ** 2, axis=1)
    size = c ** (p - 1) * (p - 1) * (c * s ** (p - 1) + (p - 2) * s ** (p - 3) * grad2)
    assert np.max(np.abs(exact - fd) / size) <= 1e-5


def test_manufactured_w_is_power_of_laplacian():
    p = 3.5
    case = manufactured_sine(p)
    pts = np.random.default_rng(1).uniform(-1, 1, (50, 2))
    lap = fd_laplacian(case.exact_u, pts, 1e-4)
    np.testing.assert_allclose(case.exact_w(pts), np.abs(lap) ** (p - 2) * lap, rtol=1e-5, atol=1e-8)


def test_manufactured_examples():
    f2 = manufactured_sine(2.0).spec.source_f(np.array([[0.5, 0.5]]))[0]
    assert f2 == pytest.approx(4 * PI**4, rel=1e-14)
    f4 = manufactured_sine(4.0).spec.source_f(np.array([[0.5, 0.5], [0.5, -0.5]]))
    # at s = +-1 the gradient of s vanishes: f = -c^3 * 3 * (-c) s = 3 c^4 s
    np.testing.assert_allclose(f4, [3 * (2 * PI**2) ** 4, -3 * (2 * PI**2) ** 4], rtol=1e-14)
    fd = fd_laplacian(manufactured_sine(4.0).exact_w, np.array([[0.5, 0.5], [0.5, -0.5]]))
    np.testing.assert_allclose(f4, fd, rtol=1e-6)
    grid = np.array([[0.0, 0.3], [1.0, -0.2], [0.7, -1.0], [-1.0, 0.5]])
    for p in (2.0, 3.0, 6.0):
        np.testing.assert_allclose(manufactured_sine(p).exact_w(grid), 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        manufactured_sine(1.5)


def test_cubic_case():
    spec = cubic_1d_case()
    assert spec.source_f is None
    x = np.array([[0.25], [0.5], [0.75]])
    np.testing.assert_allclose(spec.g_value(x), 0.0, atol=1e-16)
    assert spec.g_value(np.array([[0.0]]))[0] == pytest.approx(-0.025, rel=1e-14)
    pts = np.linspace(0.05, 0.95, 19)
    g = lambda t: spec.g_value(t[:, None])
    gp = lambda t: spec.g_gradient(t[:, None])[:, 0]
    np.testing.assert_allclose(gp(pts), fd_derivative(g, pts), rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(spec.g_laplacian(pts[:, None]), fd_derivative(gp, pts), rtol=1e-8, atol=1e-10)
    # g'' is affine: (192 x - 96) / 120
    np.testing.assert_allclose(spec.g_laplacian(pts[:, None]), (192 * pts - 96) / 120, rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_cosine_case(m):
    spec = cosine_2d_case(m)
    assert spec.g_value(np.zeros((1, 2)))[0] == pytest.approx(1 / (20 * m))
    assert spec.g_laplacian(np.zeros((1, 2)))[0] == pytest.approx(-m * PI**2 / 10)
    pts = np.random.default_rng(m).uniform(-1, 1, (30, 2))
    np.testing.assert_allclose(spec.g_laplacian(pts), fd_laplacian(spec.g_value, pts), rtol=1e-5, atol=1e-9)
    for d in range(2):
        e = np.zeros(2)
        e[d] = 1e-6
        fd = (spec.g_value(pts + e) - spec.g_value(pts - e)) / 2e-6
        np.testing.assert_allclose(spec.g_gradient(pts)[:, d], fd, rtol=1e-6, atol=1e-9)
    # zero normal derivative on every edge, checked with facet quadrature
    space = build_space(criss_cross_mesh(4, 4, (-1, -1, 1, 1)), 2)
    assert np.max(np.abs(assemble_neumann_rhs(space, spec))) <= 1e-15


# ------------------------------------------------------------------ norms


def test_norm_of_sine():
    space = build_space(unit_interval_mesh(16), 2)
    val = callback_norm_lp(space, lambda x: np.sin(PI * x[:, 0]), 2.0)
    assert val == pytest.approx(1 / math.sqrt(2), abs=1e-12)


def test_zero_error_norms():
    case = manufactured_sine(2.0)
    space = build_space(criss_cross_mesh(2, 2, (-1, -1, 1, 1)), 1)
    zero = lambda x: np.zeros(len(x))
    assert error_w_lq(FeFunction(space), zero, 2.0) == 0.0
    assert error_gradu_lp(FeFunction(space), lambda x: np.zeros_like(x), 2.0) == 0.0


def test_interpolant_gradient_error_rate_one():
    case = manufactured_sine(2.0)
    mesh = criss_cross_mesh(4, 4, (-1, -1, 1, 1))
    errs = []
    for _ in range(3):
        space = build_space(mesh, 1)
        errs.append(error_gradu_lp(interpolate(space, case.exact_u), case.exact_grad_u, 2.0))
        mesh = refine_uniform(mesh)
    ratios = np.array(errs[1:]) / np.array(errs[:-1])
    np.testing.assert_allclose(ratios[-1], 0.5, atol=0.03)


def test_large_exponent_norm_no_overflow():
    jxw = np.full(1000, 1e-3)
    vals = np.full(1000, 1e3)
    assert lp_norm(vals, jxw, 202.0) == pytest.approx(1e3, rel=1e-12)
    vals = np.full(1000, 1e-3)
    assert lp_norm(vals, jxw, 202.0) == pytest.approx(1e-3, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(2.0, 200.0), st.integers(0, 10_000))
def test_norm_duality(p, seed):
    space = build_space(criss_cross_mesh(2, 2), 2)
    v = FeFunction(space, np.random.default_rng(seed).standard_normal(space.dof_count))
    q = p / (p - 1)
    rule = high_order_rule(2)
    vals = v.values_at(rule.points)
    jxw = space.jxw(rule)
    m = np.abs(vals).max()
    # |v|^(p-1) rescaled by m^(p-1) to stay representable at large p
    lhs = lp_norm((np.abs(vals) / m) ** (p - 1), jxw, q)
    rhs = (lp_norm(vals, jxw, p) / m) ** (p - 1)
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_holder_embedding():
    spec = cubic_1d_case(12.0)
    u, w, rep = solve_p_bilaplacian(unit_interval_mesh(64), 2, spec)
    assert rep.converged
    s, jxw = laplacian_values(w, spec.q)
    s_p = lp_norm(s, jxw, spec.p)
    for r in (1.0, 2.0, 4.0, 8.0):
        assert lp_norm(s, jxw, r) <= 1.0 ** (1 / r - 1 / spec.p) * s_p + 1e-8


# -------------------------------------------------------------------- eoc


def test_eoc_examples():
    assert eoc([0.1, 0.025], [0.2, 0.1]) == [pytest.approx(2.0)]
    assert eoc([0.1, 0.05], [0.2, 0.1]) == [pytest.approx(1.0)]
    assert eoc([0.3, 0.3, 0.3], [0.4, 0.2, 0.1]) == [0.0, 0.0]
    assert eoc([0.1, 0.0], [0.2, 0.1]) == [math.inf]


@pytest.mark.parametrize("errors, hs", [([0.1], [0.2]), ([0.1, 0.2], [0.1]), ([0.1, 0.2], [0.1, 0.2])])
def test_eoc_rejects_bad_input(errors, hs):
    with pytest.raises(ValueError):
        eoc(errors, hs)


def test_eoc_table_rows():
    t = EocTable(2.0, 2.0, 1)
    for i, (h, e) in enumerate([(0.4, 1.0), (0.2, 0.25), (0.1, 0.0625)]):
        t.add(h, 10 * (i + 1), e, 2 * e)
    rows = t.rows()
    assert len(rows) == len(t) == 3
    assert rows[0][4] is None and rows[0][5] is None
    assert rows[2][4] == pytest.approx(2.0)
    assert rows[2][5] == pytest.approx(2.0)


# ---------------------------------------------------- recovered Laplacian


def test_recovered_laplacian_identities():
    space = build_space(unit_interval_mesh(6), 2)
    w = FeFunction(space, np.random.default_rng(3).standard_normal(space.dof_count))
    ref = np.array([[0.1], [0.5], [0.8]])
    np.testing.assert_array_equal(recovered_laplacian(w, 2.0).values_at(ref), w.values_at(ref))
    c = FeFunction(space, np.full(space.dof_count, -2.0))
    q = 1.2
    np.testing.assert_allclose(recovered_laplacian(c, q).values_at(ref), -(2.0 ** (q - 1)))
    p = q / (q - 1)
    s = recovered_laplacian(w, q).values_at(ref)
    np.testing.assert_allclose(np.abs(s) ** (p - 2) * s, w.values_at(ref), rtol=1e-10)
    assert recovered_laplacian(w, q)(2, [0.5]) == pytest.approx(s[2, 1])


def test_recovered_laplacian_p2_benchmark_identity():
    case = manufactured_sine(2.0)
    _, w, _ = solve_p_bilaplacian(criss_cross_mesh(4, 4, (-1, -1, 1, 1)), 1, case.spec)
    rule = high_order_rule(2)
    np.testing.assert_array_equal(recovered_laplacian(w, 2.0).values_at(rule.points), w.values_at(rule.points))


# ------------------------------------------------------------ breakpoints


def test_breakpoint_step_function():
    x = np.linspace(0, 1, 401)
    s = np.where(x < 0.4, 0.7, -0.7)
    rep = breakpoint_diagnostics_1d(np.column_stack([x, s]), h=0.01)
    assert rep.num_sign_changes == 1
    assert rep.plateau_relative_stddev <= 1e-15
    np.testing.assert_allclose(sorted(rep.plateau_means), [-0.7, 0.7], rtol=1e-15)
    assert 0.3975 <= rep.break_location <= 0.4


def test_breakpoint_constant():
    x = np.linspace(0, 1, 100)
    rep = breakpoint_diagnostics_1d(np.column_stack([x, np.full(100, 2.0)]))
    assert rep.num_sign_changes == 0


def test_breakpoint_gibbs_wiggle_merged():
    x = np.linspace(0, 1, 1001)
    s = np.where(x < 0.5, 1.0, -1.0)
    # overshoot that recrosses zero right next to the jump
    s[(x > 0.501) & (x < 0.504)] = 0.2
    rep = breakpoint_diagnostics_1d(np.column_stack([x, s]), h=0.01)
    assert rep.num_sign_changes == 1


def test_breakpoint_too_few_samples():
    x = np.linspace(0, 1, 12)
    with pytest.raises(DiagnosticError):
        breakpoint_diagnostics_1d(np.column_stack([x, np.ones(12)]), h=0.1)


# --------------------------------------------------------------- stability


def test_stability_margin_zero_data():
    zero = lambda x: np.zeros(len(x))
    spec = ProblemSpec(3.0, zero, lambda x: np.zeros_like(x), zero)
    space = build_space(unit_interval_mesh(4), 1)
    assert stability_margin(FeFunction(space), spec) == 0.0


def test_stability_margin_rejects_source():
    case = manufactured_sine(3.0)
    space = build_space(criss_cross_mesh(2, 2, (-1, -1, 1, 1)), 1)
    with pytest.raises(ValueError):
        stability_margin(FeFunction(space), case.spec)


@pytest.mark.parametrize(
    "spec, mesh",
    [
        (cubic_1d_case(2.0), unit_interval_mesh(32)),
        (cosine_2d_case(1, 4.0), criss_cross_mesh(8, 8, (-1, -1, 1, 1))),
    ],
)
def test_stability_margin_after_solve(spec, mesh):
    _, w, rep = solve_p_bilaplacian(mesh, 1, spec)
    assert rep.converged
    assert stability_margin(w, spec) >= -1e-6


def test_histogram_modes_two_plateaus():
    rng = np.random.default_rng(0)
    v = np.concatenate([np.full(600, 1.0), np.full(400, -0.5), rng.uniform(-2, 2, 10)])
    out = histogram_modes(v)
    assert len(out["modes"]) == 2
    assert out["fraction"] >= 0.99 * 1000 / 1010


def test_continuation_diagnostics_keys():
    spec = cubic_1d_case(4.0)
    _, w, _ = solve_p_bilaplacian(unit_interval_mesh(16), 1, spec)
    d = continuation_diagnostics(w, spec)
    assert set(d) == {"p", "q", "s_linf", "s_lp", "lap_g_lp", "stability_margin"}
    assert d["lap_g_lp"] == pytest.approx(callback_norm_lp(w.space, spec.g_laplacian, 4.0))
    assert d["s_lp"] == pytest.approx(norm_lp(w, spec.q) ** (spec.q - 1), rel=1e-10)
