import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liouville.fem import (
    CompatibilityError,
    DegenerateTriangleError,
    assemble,
    geodesic_distance,
    solve_neumann_zero_mean,
    solve_weak,
)
from liouville.mesh import SurfaceMesh, parse_mesh

from conftest import mesh, ops


def _square_patch(n=6):
    xs = np.linspace(0, 1, n + 1)
    X, Y = np.meshgrid(xs, xs)
    V = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    T = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            T += [(a, a + 1, a + n + 2), (a, a + n + 2, a + n + 1)]
    return SurfaceMesh(V, np.array(T))


def test_linear_functions_have_exact_energy():
    m = _square_patch()
    o = assemble(m)
    v = 2.0 * m.vertices[:, 0] - 3.0 * m.vertices[:, 1] + 1.0
    assert o.energy(v) == pytest.approx(0.5 * (4 + 9), rel=1e-13)


@pytest.mark.parametrize("shape", ["disk", "cylinder", "pair_of_pants"])
def test_operator_invariants(shape):
    o = ops(shape, 3)
    L = o.stiffness
    assert abs(L - L.T).max() < 1e-12
    assert np.abs(L @ np.ones(o.n)).max() < 1e-12
    assert np.all(o.mass > 0)
    assert o.mass.sum() == pytest.approx(o.triangle_areas.sum(), rel=1e-14)


def test_cylinder_area():
    assert ops("cylinder", 3).area == pytest.approx(2 * np.pi, rel=0.01)


def test_degenerate_triangle_rejected():
    # vertex 3 sits on edge 0-1, so triangle (1, 3, 0) has zero area
    text = "VERTICES 4\n0 0 0\n1 0 0\n0 1 0\n0.5 0 0\nTRIANGLES 3\n0 3 2\n3 1 2\n1 3 0\n"
    with pytest.raises(DegenerateTriangleError):
        assemble(parse_mesh(text))


def test_rayleigh_quotients_on_cylinder():
    errs = []
    for r in (2, 3, 4):
        m, o = mesh("cylinder", r), ops("cylinder", r)
        v = np.cos(m.param[:, 0])
        # nodes on a regular polygon reproduce this mode exactly
        assert (v @ (o.stiffness @ v)) / (o.mass @ v**2) == pytest.approx(1.0, abs=1e-10)
        v = np.cos(2 * m.param[:, 0])
        errs.append(abs((v @ (o.stiffness @ v)) / (o.mass @ v**2) / 4 - 1))
    assert errs[2] < errs[1] < errs[0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_energy_nonnegative_and_kernel(seed):
    o = ops("pair_of_pants", 2)
    v = np.random.default_rng(seed).normal(size=o.n)
    assert o.energy(v) > 0
    assert abs(o.energy(np.full(o.n, v[0]))) < 1e-12


def test_neumann_solves():
    m, o = mesh("cylinder", 3), ops("cylinder", 3)
    assert np.array_equal(solve_neumann_zero_mean(o, np.zeros(o.n)), np.zeros(o.n))
    rhs = np.cos(m.param[:, 0]) + m.param[:, 1] - 0.5
    rhs = rhs - o.mean(rhs)
    v = solve_neumann_zero_mean(o, rhs)
    assert abs(o.integrate(v)) <= 1e-12 * o.area * np.abs(v).max()
    res = o.stiffness @ v - o.mass * rhs
    assert np.linalg.norm(res) <= 1e-10 * np.linalg.norm(o.mass * rhs)
    v_cg = solve_neumann_zero_mean(o, rhs, method="cg")
    assert np.abs(v - v_cg).max() < 1e-8 * np.abs(v).max()


def test_incompatible_rhs_rejected():
    o = ops("cylinder", 2)
    rhs = np.ones(o.n)
    with pytest.raises(CompatibilityError):
        solve_neumann_zero_mean(o, rhs)


def test_solve_weak_projects_constant_mode():
    o = ops("disk", 3)
    b = np.zeros(o.n)
    b[5], b[40] = 1.0, -1.0
    v1 = solve_weak(o, b)
    v2 = solve_weak(o, b + 1e-14 * o.mass)
    assert np.abs(v1 - v2).max() < 1e-10


def test_geodesic_distance_examples():
    m = mesh("cylinder", 3)
    q = m.nearest_vertex([0.0, 0.0])
    target = m.nearest_vertex([np.pi, 0.0])
    d = geodesic_distance(m, q, method="graph")
    assert d[q] == 0
    assert d[target] == pytest.approx(np.pi, rel=0.05)
    da = geodesic_distance(m, q, method="analytic")
    assert da[target] == pytest.approx(np.pi, rel=1e-12)


def test_geodesic_distance_properties(rng):
    m = mesh("pair_of_pants", 3)
    e = m.edges
    length = np.linalg.norm(m.vertices[e[:, 0]] - m.vertices[e[:, 1]], axis=1)
    for _ in range(5):
        a, b, c = rng.choice(m.n_vertices, 3, replace=False)
        da, db = geodesic_distance(m, int(a)), geodesic_distance(m, int(b))
        assert np.all(da >= 0) and da[a] == 0
        assert np.all(np.abs(da[e[:, 0]] - da[e[:, 1]]) <= length + 1e-12)
        assert da[c] <= (da[b] + db[c]) * 1.05 + 1e-9


def test_edge_point_distance():
    m = mesh("cylinder", 3)
    loop = m.boundary_loop(1)
    i, j = int(loop[0]), int(loop[1])
    d = geodesic_distance(m, (i, j, 0.5))
    half = 0.5 * np.linalg.norm(m.vertices[i] - m.vertices[j])
    assert d[i] == pytest.approx(half) and d[j] == pytest.approx(half)
