import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liouville.functional import (
    angle_defect_curvature,
    build_problem,
    curvature_check,
    functional,
    gradient,
    hessian_apply,
    log_integral,
    residual,
    sphere_defects,
    to_metric,
    weights,
)

from conftest import cylinder_with_cone, mesh, ops

_PROBLEMS = {}


def problem(key="cone", lam=4.8 * np.pi):
    if key not in _PROBLEMS:
        if key == "cone":
            m = cylinder_with_cone(3, 1.2, at=(np.pi, 0.5))
            _PROBLEMS[key] = build_problem(m, lam, 1.0, m.cones, ops=ops("cylinder", 3))
        else:
            _PROBLEMS[key] = build_problem(mesh("cylinder", 3), lam, ops=ops("cylinder", 3))
    return _PROBLEMS[key].with_lambda(lam)


def _rand(data, rng, scale=1.0):
    return data.ops.zero_mean(scale * rng.normal(size=data.ops.n))


def test_functional_at_zero():
    d = problem("plain", 3.0)
    assert functional(d, np.zeros(d.ops.n)) == pytest.approx(-3.0 * np.log(2 * d.ops.area), rel=1e-13)
    assert np.abs(gradient(d, np.zeros(d.ops.n))).max() < 1e-14


def test_lambda_zero_reduces_to_dirichlet(rng):
    d = problem("cone", 0.0)
    v = _rand(d, rng)
    w = _rand(d, rng)
    assert functional(d, v) == pytest.approx(d.ops.energy(v), rel=1e-14)
    assert np.allclose(gradient(d, v), d.ops.stiffness @ v)
    assert np.allclose(hessian_apply(d, v, w), d.ops.stiffness @ w)


def test_derivatives_match_finite_differences(rng):
    d = problem()
    eg = eh = 0.0
    h = 1e-5
    for _ in range(20):
        v, w = _rand(d, rng), _rand(d, rng)
        fd = (functional(d, v + h * w) - functional(d, v - h * w)) / (2 * h)
        an = gradient(d, v) @ w
        eg = max(eg, abs(fd - an) / abs(an))
        fdh = (gradient(d, v + h * w) - gradient(d, v - h * w)) / (2 * h)
        hw = hessian_apply(d, v, w)
        eh = max(eh, np.linalg.norm(fdh - hw) / np.linalg.norm(hw))
    assert eg <= 1e-6
    assert eh <= 1e-5


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(-20.0, 40.0))
def test_hessian_symmetric(seed, lam):
    d = problem("cone", lam)
    rng = np.random.default_rng(seed)
    v, w1, w2 = _rand(d, rng), _rand(d, rng), _rand(d, rng)
    a, b = hessian_apply(d, v, w1) @ w2, hessian_apply(d, v, w2) @ w1
    assert abs(a - b) <= 1e-10 * max(abs(a), abs(b), 1.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(-50, 50))
def test_constant_shift_invariance(seed, c):
    d = problem()
    v = _rand(d, np.random.default_rng(seed))
    assert functional(d, v + c) == pytest.approx(functional(d, v), rel=1e-12, abs=1e-12)
    assert np.allclose(gradient(d, d.ops.zero_mean(v + c)), gradient(d, v), atol=1e-12)
    assert np.allclose(weights(d, v + c), weights(d, v), atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.0, 30.0))
def test_gradient_is_a_dual_vector(seed, scale):
    d = problem()
    v = _rand(d, np.random.default_rng(seed), scale)
    g = gradient(d, v)
    assert abs(g.sum()) <= 1e-9 * (1 + np.abs(g).sum())
    assert np.isfinite(functional(d, v))


def test_log_integral_stable_for_large_fields():
    d = problem("plain", 1.0)
    v = np.zeros(d.ops.n)
    v[10] = 800.0
    assert log_integral(d, v) == pytest.approx(800.0 + np.log(d.weight.mass[10]), rel=1e-12)


def test_nan_rejected():
    d = problem("plain", 1.0)
    v = np.zeros(d.ops.n)
    v[0] = np.nan
    with pytest.raises(ValueError):
        functional(d, v)


def test_residual_positive_for_nonuniform_K():
    m = mesh("cylinder", 2)
    K = 1.0 + 0.5 * np.cos(m.param[:, 0])
    d = build_problem(m, 3.0, K)
    assert residual(d, np.zeros(m.n_vertices)) > 1e-3


def test_to_metric_normalisation_and_errors(rng):
    d = problem()
    v = _rand(d, rng, 0.3)
    met = to_metric(d, v)
    assert met.total_mass == pytest.approx(d.lam, rel=1e-12)
    assert np.allclose(met.conformal_factor, np.exp(met.u))
    neg = to_metric(d.with_lambda(-2.0), v)
    assert neg.curvature_sign == -1 and neg.total_mass == pytest.approx(2.0, rel=1e-12)
    with pytest.raises(ValueError):
        to_metric(d.with_lambda(0.0), v)
    with pytest.raises(ValueError):
        to_metric(d.with_lambda(-2.0), v, require_positive=True)


def test_to_metric_without_cones_is_shift(rng):
    d = problem("plain", 2 * np.pi)
    v = _rand(d, rng)
    met = to_metric(d, v)
    assert np.allclose(met.u, v + met.shift, atol=1e-14)


def _hemisphere(r):
    m, o = mesh("disk", r), ops("disk", r)
    u = np.log(4 / (1 + (m.param**2).sum(1)) ** 2)
    return m, o, u


def hemisphere_defects(r):
    """Interior L2 and boundary max defects of the stereographic half sphere."""
    m, o, u = _hemisphere(r)
    interior, boundary = sphere_defects(m, o, u, 1.0, h0=1.0, h=0.0)
    l2 = np.sqrt(np.sum(interior**2 * o.mass[~m.boundary_mask]))
    return l2, np.abs(boundary).max()


def test_hemisphere_defects_decrease():
    d3, d4, d5 = (hemisphere_defects(r) for r in (3, 4, 5))
    assert d3[0] / d4[0] >= 2 and d4[0] / d5[0] >= 2
    assert d3[1] / d4[1] >= 2 and d4[1] / d5[1] >= 2


def test_hemisphere_curvature():
    m, _, u = _hemisphere(4)
    rep = curvature_check(m, u, 1.0)
    assert rep.max_relative_error <= 0.05


def test_curvature_of_flat_and_scaled_metrics():
    m = mesh("cylinder", 3)
    flat = angle_defect_curvature(m, np.zeros(m.n_vertices))
    inner = ~m.boundary_mask
    assert np.abs(flat[inner]).max() < 1e-10
    assert np.all(np.isnan(flat[m.boundary_mask]))
    md, _, u = _hemisphere(3)
    k0 = angle_defect_curvature(md, u)
    k1 = angle_defect_curvature(md, u + 0.7)
    inner = ~md.boundary_mask
    assert np.allclose(k1[inner], np.exp(-0.7) * k0[inner], rtol=1e-10)


def test_curvature_check_skips_cone_rings():
    m = cylinder_with_cone(3, 0.5, at=(np.pi, 0.5))
    rep = curvature_check(m, np.zeros(m.n_vertices), 0.0 + 1e-300, rings=3)
    near = m.rings(list(m.cones.vertices), 3)
    assert not rep.compared[near].any()
