import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kahan_cdc import (CdcConfig, NewtonConfig, NodeGrid, NodeSolution, QuadraticSystem,
                       ValidationError, barycentric_weights, cdc_integrate, cdc_sweep,
                       integrate_fixed, interp_deriv, interp_eval, reference_solve)
from kahan_cdc.cdc import differentiation_matrix, expected_order, midpoint_basis, default_node_count
from kahan_cdc.models import LV1_U0


# ---------------------------------------------------------------- weights

def test_weights_two_nodes():
    assert np.array_equal(barycentric_weights([0.0, 1.0]), [-1.0, 1.0])


def test_weights_three_nodes_binomial_pattern():
    w = barycentric_weights([0.0, 0.5, 1.0])
    assert np.allclose(w / w[0], [1.0, -2.0, 1.0], rtol=0, atol=1e-15)


@pytest.mark.parametrize("n", range(2, 12))
def test_weights_uniform_are_signed_binomials(n):
    w = barycentric_weights(np.linspace(0.0, 1.0, n))
    oracle = np.array([(-1) ** k * math.comb(n - 1, k) for k in range(n)], dtype=float)
    ratio = w / oracle
    assert np.allclose(ratio, ratio[0], rtol=1e-12, atol=0)


def test_duplicate_nodes_rejected():
    with pytest.raises(ValidationError):
        barycentric_weights([0.0, 0.5, 0.5])


@given(alpha=st.floats(0.1, 10.0), t=st.floats(0.0, 1.0))
def test_scaling_leaves_interpolant_unchanged(alpha, t):
    base = NodeGrid(0.0, 1.0, 5)
    scaled = NodeGrid(0.0, alpha, 5)
    w0, w1 = base.bary_w, scaled.bary_w
    # weights scale by a common factor alpha^-(n-1)
    assert np.allclose(w1 / w0, alpha ** -4, rtol=1e-12, atol=0)
    vals = np.array([1.0, -2.0, 0.5, 3.0, 1.5])
    a = interp_eval(NodeSolution(base, vals), t)
    b = interp_eval(NodeSolution(scaled, vals), min(alpha * t, alpha))
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------- grid

def test_grid_endpoints_exact_and_uniform():
    g = NodeGrid(0.3, 0.55, 6)
    assert g.nodes[0] == 0.3 and g.nodes[-1] == 0.55
    assert np.allclose(np.diff(g.nodes), g.spacing, rtol=1e-12, atol=0)


@pytest.mark.parametrize("args", [(0.0, 1.0, 1), (1.0, 1.0, 3), (1.0, 0.0, 3), (0.0, 1.0, 2.5)])
def test_grid_rejects_bad_input(args):
    with pytest.raises(ValidationError):
        NodeGrid(*args)


def test_node_solution_validates():
    g = NodeGrid(0.0, 1.0, 3)
    with pytest.raises(ValidationError):
        NodeSolution(g, np.zeros((4, 3)))
    with pytest.raises(ValidationError):
        NodeSolution(g, [0.0, np.nan, 1.0])


# ---------------------------------------------------------------- interpolation

def _poly_solution(n, coeffs, t0=0.0, width=1.0):
    g = NodeGrid(t0, t0 + width, n)
    return NodeSolution(g, np.polyval(coeffs, g.nodes))


def test_constant_reproduced():
    g = NodeGrid(0.0, 1.0, 4)
    ns = NodeSolution(g, np.tile([2.0, -1.0, 0.5], (4, 1)))
    for t in (0.1, 0.37, 0.999):
        assert np.allclose(interp_eval(ns, t), [2.0, -1.0, 0.5], rtol=0, atol=1e-15)
        assert np.allclose(interp_deriv(ns, t), 0.0, atol=1e-13)
    assert np.all(interp_deriv(ns, g.nodes[2]) == 0.0)


def test_square_on_three_nodes():
    ns = _poly_solution(3, [1.0, 0.0, 0.0])
    assert interp_eval(ns, 0.25)[0] == pytest.approx(0.0625, abs=1e-16)
    assert interp_deriv(ns, 0.3)[0] == pytest.approx(0.6, abs=1e-14)


def test_linear_derivative():
    ns = _poly_solution(5, [2.0, 0.0])
    for t in (0.0, 0.13, 0.5, 0.77, 1.0):
        assert interp_deriv(ns, t)[0] == pytest.approx(2.0, abs=1e-13)


def test_node_hits_bit_exact():
    g = NodeGrid(0.2, 0.45, 7)
    vals = np.random.default_rng(3).normal(size=(7, 3))
    ns = NodeSolution(g, vals)
    for k, t in enumerate(g.nodes):
        assert np.array_equal(interp_eval(ns, t), vals[k])


@pytest.mark.parametrize("t", [-1e-12, 1.0 + 1e-12, 2.0])
def test_outside_interval_rejected(t):
    ns = _poly_solution(3, [1.0, 0.0])
    with pytest.raises(ValidationError):
        interp_eval(ns, t)
    with pytest.raises(ValidationError):
        interp_deriv(ns, t)


@pytest.mark.parametrize("n", range(2, 12))
def test_polynomial_reproduction_width_quarter(n):
    # polynomial of degree n - 1 in the local variable t - t0, O(1) coefficients
    rng = np.random.default_rng(n)
    coeffs = rng.uniform(-1.0, 1.0, size=n)
    dcoeffs = np.polyder(coeffs)
    t0 = 1.7
    g = NodeGrid(t0, t0 + 0.25, n)
    ns = NodeSolution(g, np.polyval(coeffs, g.nodes - t0))
    ts = np.concatenate([np.linspace(t0, t0 + 0.25, 41), g.nodes, g.nodes[:-1] + 1e-300])
    for t in ts:
        assert abs(interp_eval(ns, t)[0] - np.polyval(coeffs, t - t0)) <= 1e-12
        assert abs(interp_deriv(ns, t)[0] - np.polyval(dcoeffs, t - t0)) <= 1e-12


def test_differentiation_matrix_matches_analytic():
    g = NodeGrid(0.0, 1.0, 6)
    D = differentiation_matrix(g.nodes)
    f = g.nodes ** 5
    assert np.allclose(D @ f, 5 * g.nodes ** 4, rtol=0, atol=1e-11)
    assert np.allclose(D @ np.ones(6), 0.0, rtol=0, atol=1e-12)


@pytest.mark.parametrize("n", [2, 3, 5, 8, 11])
def test_midpoint_basis_matches_barycentric(n):
    vals, ders = midpoint_basis(n)
    g = NodeGrid(0.0, n - 1.0, n)
    eye = np.eye(n)
    for i in range(n - 1):
        ns = NodeSolution(g, eye)
        t = i + 0.5
        assert np.allclose(vals[i], interp_eval(ns, t), rtol=0, atol=1e-12)
        assert np.allclose(ders[i], interp_deriv(ns, t), rtol=0, atol=1e-11)
    assert np.allclose(vals.sum(axis=1), 1.0, atol=1e-13)
    assert np.allclose(ders.sum(axis=1), 0.0, atol=1e-12)


# ---------------------------------------------------------------- config

def test_config_defaults_follow_node_rule():
    cfg = CdcConfig(dt=0.01, t_end=1.0, corrections=2)
    assert cfg.n == 7 == default_node_count(2)
    assert cfg.intervals == 100
    assert cfg.expected_order == 6 == expected_order(2, 7)
    assert expected_order(4, 7) == 6


@pytest.mark.parametrize("kw", [
    dict(dt=0.3, t_end=1.0),
    dict(dt=0.0, t_end=1.0),
    dict(dt=0.1, t_end=-1.0),
    dict(dt=0.1, t_end=1.0, corrections=-1),
    dict(dt=0.1, t_end=1.0, nodes_per_interval=1),
    dict(dt=0.1, t_end=1.0, node_kind="gauss"),
    dict(dt=2.0, t_end=1.0),
])
def test_config_rejects(kw):
    with pytest.raises(ValidationError):
        CdcConfig(**kw)


def test_config_tolerates_rounding_in_interval_count():
    assert CdcConfig(dt=100 / 667, t_end=100.0).intervals == 667


# ---------------------------------------------------------------- sweeps

def _polynomial_system():
    """u1' = 0, u2' = u1^2, u3' = u1 u2: the solution is a polynomial of degree 2 in t."""
    q = np.zeros((3, 3, 3))
    q[1, 0, 0] = 1.0
    q[2, 0, 1] = q[2, 1, 0] = 0.5
    return QuadraticSystem(q, np.zeros((3, 3)))


def _polynomial_exact(t, u0):
    a, b, c = u0
    return np.stack([np.full_like(t, a), b + a * a * t, c + a * b * t + 0.5 * a ** 3 * t * t], -1)


def test_sweep_fixed_point_on_polynomial_solution():
    sys = _polynomial_system()
    u0 = np.array([0.7, -0.2, 1.1])
    g = NodeGrid(0.0, 0.5, 5)
    exact = NodeSolution(g, _polynomial_exact(g.nodes, u0))
    cfg = CdcConfig(dt=0.5, t_end=0.5, corrections=1, nodes_per_interval=5)
    swept = cdc_sweep(sys, exact, cfg)
    assert np.allclose(swept.values, exact.values, rtol=0, atol=1e-14)


def test_sweep_zero_field_keeps_constant():
    sys = QuadraticSystem(np.zeros((3, 3, 3)), np.zeros((3, 3)))
    g = NodeGrid(0.0, 0.1, 4)
    prev = NodeSolution(g, np.tile([1.0, 2.0, 3.0], (4, 1)))
    out = cdc_sweep(sys, prev, CdcConfig(dt=0.1, t_end=0.1, nodes_per_interval=4))
    assert np.array_equal(out.values, prev.values)


def test_polynomial_solution_recovered_by_cdc(lv1):
    sys = _polynomial_system()
    u0 = np.array([0.7, -0.2, 1.1])
    traj = cdc_integrate(sys, u0, CdcConfig(dt=0.25, t_end=2.0, corrections=1))
    assert np.allclose(traj.states, _polynomial_exact(traj.times, u0), rtol=0, atol=1e-13)


@pytest.mark.parametrize("n", [2, 5, 7])
def test_zero_corrections_is_plain_kahan_at_node_spacing(lv1, n):
    dt, T = 0.2, 10.0
    cdc = cdc_integrate(lv1.system, LV1_U0, CdcConfig(dt, T, 0, n))
    steps = round(T / dt) * (n - 1)
    plain = integrate_fixed(lv1.system, LV1_U0, dt / (n - 1), steps)
    assert np.array_equal(cdc.states, plain.states[:: n - 1])
    assert cdc.method == "kahan"


@pytest.mark.parametrize("S,n", [(0, 3), (1, 5), (2, 7), (3, 9)])
def test_python_engine_matches_compiled(model, S, n):
    u0 = (1.0, 1.9, 0.5) if model.name == "lv1" else (0.3, 0.3, 0.4)
    cfg = CdcConfig(dt=0.1, t_end=1.0, corrections=S, nodes_per_interval=n)
    a = cdc_integrate(model.system, u0, cfg, keep_nodes=True)
    b = cdc_integrate(model.system, u0, cfg, keep_nodes=True, engine="python")
    # the engines sum the interpolant in different orders; rounding grows with n
    assert np.allclose(a.states, b.states, rtol=0, atol=1e-12)
    assert np.allclose(a.extra["nodes"], b.extra["nodes"], rtol=0, atol=1e-12)


def test_unknown_engine(lv1):
    with pytest.raises(ValidationError):
        cdc_integrate(lv1.system, LV1_U0, CdcConfig(0.1, 1.0), engine="fortran")


@given(S=st.integers(0, 4), extra=st.integers(-2, 2), dt=st.sampled_from([0.05, 0.1, 0.25]))
@settings(max_examples=20, deadline=None)
def test_endpoint_consistency(lv1, S, extra, dt):
    n = max(2, 2 * S + 3 + extra)
    traj = cdc_integrate(lv1.system, LV1_U0, CdcConfig(dt, 5.0, S, n), keep_nodes=True)
    nodes = traj.extra["nodes"]
    assert nodes.shape == (traj.states.shape[0] - 1, n, 3)
    assert np.array_equal(traj.states[1:], nodes[:, -1])
    assert np.array_equal(traj.states[:-1], nodes[:, 0])
    assert np.array_equal(traj.states[0], LV1_U0)


def test_trajectory_metadata(lv1):
    traj = cdc_integrate(lv1.system, LV1_U0, CdcConfig(0.5, 2.0, 2))
    assert traj.method == "cdc" and traj.corrections == 2 and traj.nodes == 7
    assert np.array_equal(traj.times, [0.0, 0.5, 1.0, 1.5, 2.0])
    assert "nodes" not in traj.extra


def test_newton_failure_reports_interval(lv1):
    cfg = CdcConfig(1.0, 2.0, 1, newton=NewtonConfig(abs_tol=1e-300, max_iters=1))
    from kahan_cdc import NewtonDivergence
    with pytest.raises(NewtonDivergence, match="interval 0"):
        cdc_integrate(lv1.system, LV1_U0, cfg)


# ---------------------------------------------------------------- LV behaviour

def _l2u(traj, ref, dt):
    d = traj.states[1:] - ref.states
    return math.sqrt(dt * float(np.sum(d * d)))


SWEEP_CASES = [("lv1", 5, 0.01), ("lv1", 7, 0.05), ("lv1", 9, 100 / 667), ("lv1", 11, 0.25),
               ("lv2", 5, 0.01), ("lv2", 7, 0.05), ("lv2", 9, 100 / 667), ("lv2", 11, 0.25)]


@pytest.mark.slow
@pytest.mark.parametrize("name,n,dt", SWEEP_CASES)
def test_sweeps_improve_until_saturation(request, name, n, dt):
    """Each sweep lowers the error until the sweep iteration reaches its fixed point.

    The saturation level is measured directly as the error after many more
    sweeps than the node count can use.
    """
    mb = request.getfixturevalue(name)
    u0 = LV1_U0 if name == "lv1" else (0.3, 0.3, 0.4)
    T = 100.0
    S_max = (n - 3) // 2
    times = np.linspace(0.0, T, round(T / dt) + 1)
    ref = reference_solve(mb.system, u0, times[1:], 1e-13)
    errs = [_l2u(cdc_integrate(mb.system, u0, CdcConfig(dt, T, S, n)), ref, dt)
            for S in range(S_max + 1)]
    e_inf = _l2u(cdc_integrate(mb.system, u0, CdcConfig(dt, T, S_max + 8, n)), ref, dt)
    for s in range(1, S_max + 1):
        assert errs[s] <= max(errs[s - 1], 1.01 * e_inf), (s, errs, e_inf)
    assert errs[-1] < errs[0] * 1e-3


def test_lv1_cdc_orbit_bounded_and_periodic(lv1):
    traj = cdc_integrate(lv1.system, LV1_U0, CdcConfig(0.01, 100.0, 1, 5))
    u = traj.states
    assert np.all(u > 0) and np.all(u < 10)
    for obs in lv1.invariants:
        drift = obs.along(u) - obs(u[0])
        assert np.max(np.abs(drift)) < 1e-8
    # the orbit keeps returning close to its starting point
    dist = np.linalg.norm(u - u[0], axis=1)
    returns = np.flatnonzero((dist[1:-1] < dist[:-2]) & (dist[1:-1] < dist[2:]) & (dist[1:-1] < 0.05))
    assert returns.size >= 3


@pytest.mark.slow
def test_lv1_high_order_cell_reaches_tiny_error(lv1):
    dt, T = 0.25, 100.0
    traj = cdc_integrate(lv1.system, LV1_U0, CdcConfig(dt, T, 4, 11))
    drift = lv1.h1.along(traj.states) - lv1.h1(traj.states[0])
    l2 = math.sqrt(dt * float(np.sum(drift[1:] ** 2)))
    assert l2 < 1e-9
