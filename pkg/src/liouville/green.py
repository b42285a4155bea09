"""Neumann Green's functions with poles at cone points and the desingularised
curvature weight ``K_alpha = 2 K exp(-4 pi sum_j alpha_j G_j)``."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .fem import Operators, geodesic_distance, solve_weak
from .mesh import ConeSet, MeshError, SurfaceMesh

SINGULAR_COEFFICIENT = -1.0 / (2.0 * np.pi)
CUTOFF_FACTOR = 5.0
QUAD_DEPTH = 3


def smoothstep_cutoff(d, radius: float) -> np.ndarray:
    """1 on [0, radius/2], 0 beyond ``radius``, cubic smoothstep in between."""
    t = np.clip((np.asarray(d, dtype=float) - 0.5 * radius) / (0.5 * radius), 0.0, 1.0)
    return 1.0 - t * t * (3.0 - 2.0 * t)


@dataclass(frozen=True, eq=False)
class GreenFunction:
    pole: int
    mode: str
    cutoff_radius: float
    values: np.ndarray
    regular_part: np.ndarray
    distance: np.ndarray = field(repr=False)
    cutoff: np.ndarray = field(repr=False)
    singular_coefficient: float = SINGULAR_COEFFICIENT

    def singular_part(self) -> np.ndarray:
        return self.values - self.regular_part

    def sidecar(self) -> dict:
        return {
            "pole": self.pole,
            "mode": self.mode,
            "cutoff_radius": self.cutoff_radius,
            "singular_coefficient": self.singular_coefficient,
        }


def pole_radius(ops: Operators, p: int) -> float:
    """Radius of the disk with the pole's lumped area; stands in for d = 0."""
    return float(np.sqrt(ops.mass[p] / np.pi))


def compute_green(
    mesh: SurfaceMesh,
    ops: Operators,
    p: int,
    mode: str = "split",
    cutoff_radius: float | None = None,
    distance: str = "auto",
) -> GreenFunction:
    """Zero-mean G with -Laplace G = delta_p - 1/|M| and natural boundary conditions.

    ``discrete_delta`` uses a unit point load at ``p``. ``split`` writes
    G = -(1/2pi) eta(d) log d + H and solves for the smooth remainder H.
    Its load is the Galerkin projection of the singular part's Laplacian,
    integrated exactly per triangle rather than read off sampled values.
    """
    p = int(p)
    if mesh.boundary_mask[p]:
        raise MeshError(f"Green's function pole {p} lies on the boundary")
    n = mesh.n_vertices
    A, area = ops.mass, ops.area
    if mode == "discrete_delta":
        b = -A / area
        b[p] += 1.0
        G = solve_weak(ops, b)
        zeros = np.zeros(n)
        return GreenFunction(p, mode, 0.0, G, G, zeros, zeros)
    if mode != "split":
        raise ValueError(f"unknown Green mode {mode!r}")

    R = CUTOFF_FACTOR * mesh.mean_edge_length() if cutoff_radius is None else float(cutoff_radius)
    d = geodesic_distance(mesh, p, method=distance)
    eta = smoothstep_cutoff(d, R)
    logd = np.log(np.where(d > 0, d, 1.0))
    logd[p] = np.log(pole_radius(ops, p))
    S = SINGULAR_COEFFICIENT * eta * logd

    b = -A / area - singular_load(mesh, p, d, R, distance)
    b[p] += 1.0
    H = solve_weak(ops, b)
    G = S + H
    shift = ops.mean(G)
    return GreenFunction(p, mode, R, G - shift, H - shift, d, eta)


_GL_X, _GL_W = roots_legendre(8)
_GL_X = (_GL_X + 1) / 2
_GL_W = _GL_W / 2


def _edge_rule(graded: bool, levels: int = 24):
    """Nodes/weights on [0, 1]; geometrically graded towards 0 when ``graded``."""
    if not graded:
        return _GL_X, _GL_W
    edges = np.concatenate([[0.0], 0.5 ** np.arange(levels, -1, -1)])
    lo, hi = edges[:-1], edges[1:]
    x = (lo[:, None] + (hi - lo)[:, None] * _GL_X[None]).ravel()
    w = ((hi - lo)[:, None] * _GL_W[None]).ravel()
    return x, w


def point_distance(mesh: SurfaceMesh, p: int, t: int, bary: np.ndarray, d: np.ndarray, method: str = "auto"):
    """Distance from vertex ``p`` to barycentric points of triangle ``t``."""
    from .fem import analytic_distance, has_analytic_distance

    tv = mesh.triangles[t]
    if method != "graph" and has_analytic_distance(mesh):
        P = mesh.param[tv].copy()
        if mesh.kind == "cylinder":
            P[:, 0] = P[0, 0] + (P[:, 0] - P[0, 0] + np.pi) % (2 * np.pi) - np.pi
        return analytic_distance(mesh.kind, bary @ P, mesh.param[p])
    X = bary @ mesh.vertices[tv]
    if p in tv:
        return np.linalg.norm(X - mesh.vertices[p], axis=1)
    # virtual planar source matching the three corner distances
    v0, v1, v2 = mesh.vertices[tv]
    e1, e2 = v1 - v0, v2 - v0
    u1 = e1 / np.linalg.norm(e1)
    nrm = np.cross(e1, e2)
    u2 = np.cross(nrm, u1)
    u2 /= np.linalg.norm(u2)
    c = np.array([[0.0, 0.0], [e1 @ u1, 0.0], [e2 @ u1, e2 @ u2]])
    dk = d[tv]
    M = 2 * np.array([c[1] - c[0], c[2] - c[0]])
    rhs = np.array([dk[0] ** 2 - dk[1] ** 2 + c[1] @ c[1], dk[0] ** 2 - dk[2] ** 2 + c[2] @ c[2]])
    try:
        src = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        return bary @ dk
    loc = np.column_stack([(X - v0) @ u1, (X - v0) @ u2])
    return np.linalg.norm(loc - src, axis=1)


def singular_load(mesh: SurfaceMesh, p: int, d: np.ndarray, R: float, method: str = "auto") -> np.ndarray:
    """Galerkin load ``int grad S . grad phi_i`` of S = -(1/2pi) eta(d) log d.

    Each triangle meeting the support contributes grad(phi_i) . int_T grad S,
    and int_T grad S is evaluated as the boundary integral of S n. The result
    sums to zero exactly.
    """
    V, T = mesh.vertices, mesh.triangles
    h = mesh.edge_lengths().max()
    near = np.flatnonzero(d[T].min(axis=1) < R + h)
    load = np.zeros(mesh.n_vertices)
    for t in near:
        tv = T[t]
        P = V[tv]
        N = np.cross(P[1] - P[0], P[2] - P[0])
        area2 = np.linalg.norm(N)
        N = N / area2
        integral = np.zeros(3)
        for k in range(3):
            a, b = k, (k + 1) % 3
            # orient each edge so a graded rule starts at the pole
            flip = tv[b] == p
            graded = flip or tv[a] == p
            x, w = _edge_rule(graded)
            if flip:
                x = 1.0 - x
            bary = np.zeros((len(x), 3))
            bary[:, a] = 1.0 - x
            bary[:, b] = x
            dist = point_distance(mesh, p, t, bary, d, method)
            S = SINGULAR_COEFFICIENT * smoothstep_cutoff(dist, R) * np.log(np.where(dist > 0, dist, 1.0))
            edge = P[b] - P[a]
            n_out = np.cross(edge, N)  # length |edge|, absorbs ds
            integral += n_out * float(w @ S)
        grads = np.cross(N[None], P[[2, 0, 1]] - P[[1, 2, 0]]) / area2
        load[tv] += grads @ integral
    return load


# ---------------------------------------------------------------- quadrature


def _leaf_triangles(depth: int) -> np.ndarray:
    """Barycentric corners (leaves x 3 x 3) of a ``depth``-fold 4-way subdivision."""
    tris = np.eye(3)[None]
    for _ in range(depth):
        a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
        ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
        tris = np.concatenate(
            [np.stack(t, axis=1) for t in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))]
        )
    return tris


# symmetric 6-point degree-4 rule on a triangle (barycentric, weights sum to 1)
_A1, _B1, _W1 = 0.445948490915965, 0.108103018168070, 0.223381589678011
_A2, _B2, _W2 = 0.091576213509771, 0.816847572980459, 0.109951743655322
_TRI_RULE = np.array(
    [[_A1, _A1, _B1], [_A1, _B1, _A1], [_B1, _A1, _A1], [_A2, _A2, _B2], [_A2, _B2, _A2], [_B2, _A2, _A2]]
)
_TRI_W = np.array([_W1] * 3 + [_W2] * 3)


def cone_quadrature(P: np.ndarray, alpha: float, depth: int = QUAD_DEPTH, order: int = 6):
    """Quadrature for integrands ``|x - P[0]|^(2 alpha) g(x)`` over triangle ``P``.

    Returns barycentric points and weights that already include the singular
    factor, so that the integral is ``sum(w * g(points))``. The triangle is
    subdivided ``depth`` times; the leaf at the cone corner uses a Duffy
    collapse with Gauss-Jacobi nodes in the radial variable.
    """
    e1, e2 = P[1] - P[0], P[2] - P[0]
    area = 0.5 * np.linalg.norm(np.cross(e1, e2))
    leaves = _leaf_triangles(depth)
    sing = leaves[:, :, 0].max(axis=1) == 1.0
    pts, wts = [], []

    reg = leaves[~sing]
    bary = np.einsum("qk,lkj->lqj", _TRI_RULE, reg).reshape(-1, 3)
    x = bary[:, 1:2] * e1 + bary[:, 2:3] * e2
    dist = np.linalg.norm(x, axis=1)
    w = np.tile(_TRI_W, len(reg)) * area / 4**depth
    pts.append(bary)
    wts.append(w * dist ** (2 * alpha))

    for leaf in leaves[sing]:
        corner = int(np.argmax(leaf[:, 0]))
        q0 = leaf[corner]
        q1, q2 = leaf[(corner + 1) % 3], leaf[(corner + 2) % 3]
        beta = 2 * alpha + 1
        xu, wu = roots_jacobi(order, 0.0, beta)
        u = (1 + xu) / 2
        wu = wu * 2.0 ** (-beta - 1)
        xv, wv = roots_legendre(order)
        v = (1 + xv) / 2
        wv = wv / 2
        U, Vv = np.meshgrid(u, v, indexing="ij")
        WU, WV = np.meshgrid(wu, wv, indexing="ij")
        U, Vv, WU, WV = U.ravel(), Vv.ravel(), WU.ravel(), WV.ravel()
        dirs = (q1 - q0)[None] + Vv[:, None] * (q2 - q1)[None]
        b = q0[None] + U[:, None] * dirs
        rho = np.linalg.norm(dirs[:, 1:2] * e1 + dirs[:, 2:3] * e2, axis=1)
        # Jacobian of (u, v) -> leaf is 2 |leaf| u; u^(2 alpha + 1) lives in the Jacobi weight
        pts.append(b)
        wts.append(WU * WV * rho ** (2 * alpha) * 2 * area / 4**depth)
    return np.concatenate(pts), np.concatenate(wts)


# ---------------------------------------------------------------- weight


@dataclass(frozen=True, eq=False)
class SingularWeight:
    """Per-vertex weight and the lumped integration masses for ``int K_alpha e^v``.

    ``values`` are pointwise samples away from cones; at a cone vertex the
    value is the cell average implied by ``mass``. ``corner_mass[t, k]`` is
    the share of triangle ``t`` attributed to its corner ``k``.
    """

    values: np.ndarray
    mass: np.ndarray
    corner_mass: np.ndarray = field(repr=False)
    mode: str = "split"
    cone_vertices: tuple[int, ...] = ()

    @property
    def log_mass(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.mass)


def singular_weight(
    mesh: SurfaceMesh,
    ops: Operators,
    K,
    cones: ConeSet,
    greens,
    depth: int = QUAD_DEPTH,
) -> SingularWeight:
    n = mesh.n_vertices
    K = np.broadcast_to(np.asarray(K, dtype=float), (n,)).copy()
    if not np.all(np.isfinite(K)) or np.any(K <= 0):
        raise ValueError("curvature K must be positive at every vertex")
    greens = list(greens)
    by_pole = {g.pole: g for g in greens}
    for v, _ in cones:
        if v not in by_pole:
            raise ValueError(f"missing Green's function for cone at vertex {v}")
    modes = {by_pole[v].mode for v, _ in cones}
    if len(modes) > 1:
        raise ValueError("mixed Green's function modes")
    mode = modes.pop() if modes else "split"

    expo = np.zeros(n)
    for v, a in cones:
        expo -= 4 * np.pi * a * by_pole[v].values
    values = 2 * K * np.exp(expo)
    T = mesh.triangles
    corner_mass = np.repeat(ops.triangle_areas[:, None] / 3.0, 3, axis=1) * values[T]

    if mode == "split" and len(cones):
        cone_set = {v for v, _ in cones}
        # smooth exponent: everything except the cone's own log singularity
        for v, a in cones:
            g = by_pole[v]
            smooth = np.log(2 * K) + expo + 4 * np.pi * a * g.singular_part()
            for t in np.flatnonzero((T == v).any(axis=1)):
                tv = list(T[t])
                k0 = tv.index(v)
                order_ = [k0, (k0 + 1) % 3, (k0 + 2) % 3]
                corners = [tv[k] for k in order_]
                P = mesh.vertices[corners]
                bary, w = cone_quadrature(P, a, depth)
                x = bary @ P
                dist = np.linalg.norm(x - P[0], axis=1)
                eta = smoothstep_cutoff(dist, g.cutoff_radius)
                s = bary @ smooth[corners]
                # cutoff is one on cone-incident triangles; keep the exact factor anyway
                f = np.exp(s + 2 * a * (eta - 1.0) * np.log(np.where(dist > 0, dist, 1.0)))
                if len(cone_set.intersection(corners)) > 1:
                    raise MeshError("two cones share a triangle; refine the mesh")
                for j, k in enumerate(order_):
                    corner_mass[t, k] = float(np.sum(w * f * bary[:, j]))
    mass = np.bincount(T.ravel(), weights=corner_mass.ravel(), minlength=n)
    for v, _ in cones:
        values[v] = mass[v] / ops.mass[v]
    return SingularWeight(values, mass, corner_mass, mode, tuple(v for v, _ in cones))
