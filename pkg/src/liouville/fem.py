"""P1 finite elements on surface meshes: cotangent stiffness, lumped mass,
compatible Neumann solves and approximate geodesic distances."""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import MeshError, SurfaceMesh

TOL_COMPAT = 1e-8
DIRECT_LIMIT = 20_000


class DegenerateTriangleError(MeshError):
    pass


class CompatibilityError(ValueError):
    """Right-hand side of a Neumann problem does not integrate to zero."""


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Operators:
    stiffness: sp.csr_matrix
    mass: np.ndarray
    area: float
    triangle_areas: np.ndarray = field(repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.mass)

    def integrate(self, f) -> float:
        return float(self.mass @ np.asarray(f, dtype=float))

    def mean(self, f) -> float:
        return self.integrate(f) / self.area

    def zero_mean(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        return f - self.mean(f)

    def energy(self, v) -> float:
        """Dirichlet energy 1/2 int |grad v|^2."""
        v = np.asarray(v, dtype=float)
        return 0.5 * float(v @ (self.stiffness @ v))


def triangle_geometry(mesh: SurfaceMesh):
    """Per-triangle areas and the cotangents of the three corner angles."""
    V, T = mesh.vertices, mesh.triangles
    p0, p1, p2 = V[T[:, 0]], V[T[:, 1]], V[T[:, 2]]
    e0, e1, e2 = p2 - p1, p0 - p2, p1 - p0  # edge opposite each corner
    cr = np.cross(e1, e2)
    dbl = np.linalg.norm(cr, axis=1)
    areas = 0.5 * dbl
    with np.errstate(divide="ignore", invalid="ignore"):
        cot0 = -np.einsum("ij,ij->i", e1, e2) / dbl
        cot1 = -np.einsum("ij,ij->i", e2, e0) / dbl
        cot2 = -np.einsum("ij,ij->i", e0, e1) / dbl
    return areas, np.column_stack([cot0, cot1, cot2])


def assemble(mesh: SurfaceMesh) -> Operators:
    areas, cot = triangle_geometry(mesh)
    if np.any(areas < 1e-14 * areas.mean()):
        bad = int(np.argmin(areas))
        raise DegenerateTriangleError(f"degenerate triangle {bad} (area {areas[bad]:.3e})")
    T = mesh.triangles
    n = mesh.n_vertices
    # edge opposite corner k joins the other two corners
    I = np.concatenate([T[:, 1], T[:, 2], T[:, 0]])
    J = np.concatenate([T[:, 2], T[:, 0], T[:, 1]])
    w = 0.5 * np.concatenate([cot[:, 0], cot[:, 1], cot[:, 2]])
    off = sp.coo_matrix((-w, (I, J)), shape=(n, n))
    off = off + off.T
    diag = -np.asarray(off.sum(axis=1)).ravel()
    L = (off + sp.diags(diag)).tocsr()
    L.sum_duplicates()
    mass = np.bincount(T.ravel(), weights=np.repeat(areas / 3.0, 3), minlength=n)
    return Operators(L, mass, float(areas.sum()), areas)


def _bordered_lu(ops: Operators):
    lu = ops._cache.get("bordered")
    if lu is None:
        A = sp.csr_matrix(ops.mass[None, :])
        K = sp.bmat([[ops.stiffness, A.T], [A, None]], format="csc")
        lu = spla.splu(K)
        ops._cache["bordered"] = lu
    return lu


def _norm1(ops: Operators) -> float:
    nrm = ops._cache.get("norm1")
    if nrm is None:
        nrm = ops._cache["norm1"] = float(abs(ops.stiffness).sum(axis=0).max())
    return nrm


def solve_weak(ops: Operators, b, method: str = "auto") -> np.ndarray:
    """Solve L v = b for a load vector with sum(b) = 0, returning the zero-mean solution.

    Whatever part of ``b`` lies along the constant mode (round-off in sums
    of large terms) is projected out; screening genuinely incompatible loads
    is left to :func:`solve_neumann_zero_mean`.
    """
    b = np.asarray(b, dtype=float)
    b = b - ops.mass * (b.sum() / ops.area)
    n = ops.n
    if method == "auto":
        method = "direct" if n < DIRECT_LIMIT else "cg"
    if method == "direct":
        lu = _bordered_lu(ops)
        rhs = np.concatenate([b, [0.0]])
        x = lu.solve(rhs)
        # one step of iterative refinement against cancellation in spiky loads
        r = rhs - np.concatenate([ops.stiffness @ x[:n] + ops.mass * x[n], [ops.mass @ x[:n]]])
        x += lu.solve(r)
        v = x[:n]
    elif method == "cg":
        A = ops.mass
        c = 1.0 / ops.area
        L = ops.stiffness
        op = spla.LinearOperator((n, n), matvec=lambda x: L @ x + c * A * (A @ x), dtype=float)
        pre = 1.0 / (L.diagonal() + c * A * A)
        M = spla.LinearOperator((n, n), matvec=lambda x: pre * x, dtype=float)
        v, info = spla.cg(op, b, rtol=1e-12, atol=0.0, maxiter=20 * n, M=M)
        if info != 0:
            raise SolverError(f"conjugate gradient did not converge (info={info})")
    else:
        raise ValueError(f"unknown method {method!r}")
    v = ops.zero_mean(v)
    # normwise backward error, so round-off in L v does not count against tiny loads
    scale = np.linalg.norm(b) + _norm1(ops) * np.linalg.norm(v)
    if scale > 0:
        rel = np.linalg.norm(ops.stiffness @ v - b) / scale
        if rel > 1e-10:
            raise SolverError(f"Neumann solve relative residual {rel:.2e} exceeds 1e-10")
    return v


def solve_neumann_zero_mean(ops: Operators, rhs, tol_compat: float = TOL_COMPAT, method: str = "auto") -> np.ndarray:
    """Zero-mean v with -Laplace v = rhs weakly and natural boundary conditions.

    ``rhs`` is a per-vertex density; its integral must vanish up to
    ``tol_compat`` times its L1 norm.
    """
    rhs = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(rhs)):
        raise ValueError("non-finite right-hand side")
    b = ops.mass * rhs
    norm = np.abs(b).sum()
    if abs(b.sum()) > tol_compat * norm:
        raise CompatibilityError(
            f"incompatible right-hand side: integral {b.sum():.3e} vs norm {norm:.3e}"
        )
    if norm == 0:
        return np.zeros(ops.n)
    return solve_weak(ops, b - ops.mass * (b.sum() / ops.area), method=method)


# ---------------------------------------------------------------- distances


def edge_graph(mesh: SurfaceMesh) -> sp.csr_matrix:
    e = mesh.edges
    w = mesh.edge_lengths()
    n = mesh.n_vertices
    G = sp.coo_matrix((w, (e[:, 0], e[:, 1])), shape=(n, n))
    return (G + G.T).tocsr()


def _seeds(mesh: SurfaceMesh, q):
    """Initial distances for a vertex or a point ``(i, j, t)`` on an edge."""
    if isinstance(q, (int, np.integer)):
        if not 0 <= q < mesh.n_vertices:
            raise MeshError(f"vertex {q} out of range")
        return {int(q): 0.0}
    i, j, t = q
    i, j, t = int(i), int(j), float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError("edge parameter must lie in [0, 1]")
    length = float(np.linalg.norm(mesh.vertices[i] - mesh.vertices[j]))
    return {i: t * length, j: (1 - t) * length}


def location_param(mesh: SurfaceMesh, q) -> np.ndarray:
    """Parametric coordinates of a vertex or edge point."""
    if isinstance(q, (int, np.integer)):
        return np.asarray(mesh.param[int(q)], dtype=float)
    i, j, t = q
    pi, pj = mesh.param[int(i)], mesh.param[int(j)]
    if mesh.kind == "cylinder":
        dx = (pj[0] - pi[0] + np.pi) % (2 * np.pi) - np.pi
        return np.array([pi[0] + t * dx, pi[1] + t * (pj[1] - pi[1])])
    return (1 - t) * pi + t * pj


def analytic_distance(kind: str, points: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Exact intrinsic distance on the generated flat shapes, in parametric coordinates."""
    points = np.atleast_2d(points)
    d = points - q
    if kind == "cylinder":
        dx = np.abs(d[:, 0]) % (2 * np.pi)
        dx = np.minimum(dx, 2 * np.pi - dx)
        return np.hypot(dx, d[:, 1])
    if kind == "disk":
        return np.hypot(d[:, 0], d[:, 1])
    raise ValueError(f"no analytic distance for shape {kind!r}")


def has_analytic_distance(mesh: SurfaceMesh) -> bool:
    return mesh.param is not None and mesh.kind in ("cylinder", "disk")


def _relax(mesh: SurfaceMesh, dist: np.ndarray, G: sp.csr_matrix) -> np.ndarray:
    dist = dist.copy()
    heap = [(d, i) for i, d in enumerate(dist) if np.isfinite(d)]
    heapq.heapify(heap)
    indptr, indices, data = G.indptr, G.indices, G.data
    while heap:
        d, i = heapq.heappop(heap)
        if d > dist[i]:
            continue
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            nd = d + data[k]
            if nd < dist[j]:
                dist[j] = nd
                heapq.heappush(heap, (nd, j))
    return dist


def _unfold(lab, lac, lbc, da, db):
    """Distance to corner c through edge ab from a virtual planar source.

    Returns inf when the straight path from the source would not cross ab.
    """
    cx = (lab * lab + lac * lac - lbc * lbc) / (2 * lab)
    cy2 = lac * lac - cx * cx
    sx = (lab * lab + da * da - db * db) / (2 * lab)
    h2 = da * da - sx * sx
    if h2 <= 0 or cy2 <= 0:
        return np.inf
    cy, sy = cy2**0.5, -(h2**0.5)
    x0 = sx + (cx - sx) * (-sy) / (cy - sy)
    if x0 < 0 or x0 > lab:
        return np.inf
    return ((cx - sx) ** 2 + (cy - sy) ** 2) ** 0.5


def _march(mesh: SurfaceMesh, seeds: dict) -> np.ndarray:
    """Dijkstra whose accepted vertices also update across triangles by unfolding."""
    V, T = mesh.vertices, mesh.triangles
    n = mesh.n_vertices
    G = edge_graph(mesh)
    indptr, indices, data = G.indptr, G.indices, G.data
    # corner-opposite edge lengths per triangle
    L = np.stack([np.linalg.norm(V[T[:, (k + 2) % 3]] - V[T[:, (k + 1) % 3]], axis=1) for k in range(3)], axis=1)
    order = np.argsort(T.ravel(), kind="stable")
    starts = np.searchsorted(T.ravel()[order], np.arange(n + 1))
    tri_of = order // 3
    Tl, Ll = T.tolist(), L.tolist()

    dist = np.full(n, np.inf)
    done = np.zeros(n, dtype=bool)
    heap = []
    for i, d in seeds.items():
        dist[i] = d
        heap.append((d, i))
    heapq.heapify(heap)
    while heap:
        d, i = heapq.heappop(heap)
        if done[i] or d > dist[i]:
            continue
        done[i] = True
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            nd = d + data[k]
            if nd < dist[j]:
                dist[j] = nd
                heapq.heappush(heap, (nd, j))
        for t in tri_of[starts[i]:starts[i + 1]]:
            tv, tl = Tl[t], Ll[t]
            ci = tv.index(i)
            for cj, ck in (((ci + 1) % 3, (ci + 2) % 3), ((ci + 2) % 3, (ci + 1) % 3)):
                j, c = tv[cj], tv[ck]
                if not done[j] or done[c]:
                    continue
                # edge i-j is opposite ck, i-c opposite cj, j-c opposite ci
                nd = _unfold(tl[ck], tl[cj], tl[ci], d, dist[j])
                if nd < dist[c]:
                    dist[c] = nd
                    heapq.heappush(heap, (nd, c))
    return dist


def geodesic_distance(mesh: SurfaceMesh, q, method: str = "graph") -> np.ndarray:
    """Per-vertex distance from ``q`` (a vertex or ``(i, j, t)`` on an edge).

    ``graph``: Dijkstra on edges where every accepted vertex also updates its
    triangles by planar unfolding, followed by an edge relaxation so the
    result stays 1-Lipschitz along edges.
    ``analytic``: exact flat distance on generated cylinders and disks.
    ``auto``: analytic when available.
    """
    if method == "auto":
        method = "analytic" if has_analytic_distance(mesh) else "graph"
    if method == "analytic":
        if not has_analytic_distance(mesh):
            raise ValueError("analytic distance requires a generated disk or cylinder")
        return analytic_distance(mesh.kind, mesh.param, location_param(mesh, q))
    if method != "graph":
        raise ValueError(f"unknown method {method!r}")
    seeds = _seeds(mesh, q)
    dist = _march(mesh, seeds)
    return _relax(mesh, dist, edge_graph(mesh))
