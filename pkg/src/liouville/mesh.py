"""Triangulated surfaces with boundary loops and cone markers.

A :class:`SurfaceMesh` is validated once at construction and is immutable
afterwards. Generated shapes additionally carry parametric coordinates, which
the distance routines use for an analytic override.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Base class for invalid meshes."""


class MeshFormatError(MeshError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NonManifoldError(MeshError):
    pass


class OrientationError(MeshError):
    pass


class ConeError(MeshError):
    pass


@dataclass(frozen=True)
class ConeSet:
    """Conical points as ``(vertex, order)`` pairs.

    An order ``alpha`` corresponds to the cone angle ``2*pi*(1 + alpha)``.
    """

    entries: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        entries = tuple((int(v), float(a)) for v, a in self.entries)
        object.__setattr__(self, "entries", entries)
        seen = set()
        for v, a in entries:
            if not math.isfinite(a) or a <= -1.0:
                raise ConeError(f"cone order {a} at vertex {v} must be > -1")
            if v in seen:
                raise ConeError(f"duplicate cone vertex {v}")
            seen.add(v)

    @classmethod
    def from_pairs(cls, pairs) -> "ConeSet":
        return cls(tuple(pairs))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def vertices(self) -> tuple[int, ...]:
        return tuple(v for v, _ in self.entries)

    @property
    def orders(self) -> np.ndarray:
        return np.array([a for _, a in self.entries], dtype=float)

    @property
    def orders_at_least_minus_half(self) -> bool:
        """Order hypothesis of the existence theorem (all alpha >= -1/2)."""
        return all(a >= -0.5 for _, a in self.entries)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    cones: ConeSet = ConeSet()
    param: np.ndarray | None = None
    kind: str | None = None
    boundary_loops: tuple[np.ndarray, ...] = field(init=False)
    edges: np.ndarray = field(init=False, repr=False)
    boundary_edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float)
        T = np.asarray(self.triangles)
        if V.ndim != 2 or V.shape[1] != 3:
            raise MeshError("vertices must be an (n, 3) array")
        if T.ndim != 2 or T.shape[1] != 3:
            raise MeshError("triangles must be an (m, 3) array")
        if not np.all(np.isfinite(V)):
            raise MeshError("non-finite vertex coordinates")
        T = T.astype(np.int64)
        if T.size and (T.min() < 0 or T.max() >= len(V)):
            raise MeshError("triangle index out of range")
        if np.any((T[:, 0] == T[:, 1]) | (T[:, 1] == T[:, 2]) | (T[:, 0] == T[:, 2])):
            raise MeshError("triangle with repeated vertex")
        used = np.zeros(len(V), dtype=bool)
        used[T.ravel()] = True
        if not used.all():
            raise MeshError(f"isolated vertex {int(np.flatnonzero(~used)[0])}")

        edges, bedges = _check_edges(T)
        loops = _boundary_loops(bedges)
        on_boundary = np.zeros(len(V), dtype=bool)
        for loop in loops:
            on_boundary[loop] = True
        for v, _ in self.cones:
            if not 0 <= v < len(V):
                raise ConeError(f"cone vertex {v} out of range")
            if on_boundary[v]:
                raise ConeError(f"cone at vertex {v} lies on the boundary")

        object.__setattr__(self, "vertices", _readonly(V))
        object.__setattr__(self, "triangles", _readonly(T))
        object.__setattr__(self, "edges", _readonly(edges))
        object.__setattr__(self, "boundary_edges", _readonly(bedges))
        object.__setattr__(self, "boundary_loops", tuple(_readonly(l) for l in loops))
        if self.param is not None:
            object.__setattr__(self, "param", _readonly(np.asarray(self.param, dtype=float)))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def cone_markers(self) -> tuple[int, ...]:
        return self.cones.vertices

    @property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        for loop in self.boundary_loops:
            mask[loop] = True
        return mask

    def boundary_loop(self, label: int) -> np.ndarray:
        """Vertices of boundary loop ``label`` (labels start at 1)."""
        if not 1 <= label <= len(self.boundary_loops):
            raise MeshError(f"no boundary component with label {label}")
        return self.boundary_loops[label - 1]

    def with_cones(self, cones: ConeSet) -> "SurfaceMesh":
        return SurfaceMesh(self.vertices, self.triangles, cones, self.param, self.kind)

    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    def mean_edge_length(self) -> float:
        return float(self.edge_lengths().mean())

    def neighbors(self) -> list[np.ndarray]:
        nbrs = [[] for _ in range(self.n_vertices)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return [np.array(sorted(n), dtype=np.int64) for n in nbrs]

    def rings(self, seeds, depth: int) -> np.ndarray:
        """Boolean mask of vertices within ``depth`` edge hops of ``seeds``."""
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[list(seeds)] = True
        e = self.edges
        for _ in range(depth):
            grow = mask[e[:, 0]] | mask[e[:, 1]]
            mask[e[grow].ravel()] = True
        return mask

    def nearest_vertex(self, point) -> int:
        """Nearest vertex to a point given in parametric (2) or space (3) coordinates."""
        p = np.asarray(point, dtype=float)
        if p.shape == (2,):
            if self.param is None:
                raise MeshError("mesh has no parametric coordinates")
            diff = self.param - p
            if self.kind == "cylinder":
                dx = np.abs(diff[:, 0]) % (2 * np.pi)
                diff = np.column_stack([np.minimum(dx, 2 * np.pi - dx), diff[:, 1]])
        else:
            diff = self.vertices - p
        return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))

    def same_as(self, other: "SurfaceMesh") -> bool:
        return (
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.triangles, other.triangles)
            and self.cones == other.cones
        )


def _check_edges(T: np.ndarray):
    """Undirected edge list plus the directed boundary edges.

    Raises on edges shared by more than two triangles and on interior edges
    traversed in the same direction by both incident triangles.
    """
    directed = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    key = np.sort(directed, axis=1)
    uniq, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        bad = uniq[np.argmax(counts > 2)]
        raise NonManifoldError(f"edge ({bad[0]}, {bad[1]}) belongs to {counts.max()} triangles")
    dup = np.unique(directed, axis=0, return_counts=True)[1]
    if np.any(dup > 1):
        raise OrientationError("inconsistent triangle orientation")
    boundary = directed[counts[inverse] == 1]
    return uniq, boundary


def _boundary_loops(bedges: np.ndarray) -> list[np.ndarray]:
    nxt: dict[int, int] = {}
    for a, b in bedges:
        a, b = int(a), int(b)
        if a in nxt:
            raise NonManifoldError(f"boundary pinched at vertex {a}")
        nxt[a] = b
    loops = []
    remaining = set(nxt)
    while remaining:
        start = min(remaining)
        loop = [start]
        remaining.discard(start)
        cur = nxt[start]
        while cur != start:
            if cur not in remaining:
                raise NonManifoldError(f"boundary pinched at vertex {cur}")
            loop.append(cur)
            remaining.discard(cur)
            cur = nxt[cur]
        loops.append(np.array(loop, dtype=np.int64))
    loops.sort(key=lambda l: int(l.min()))
    return loops


def euler_characteristic(mesh: SurfaceMesh) -> int:
    return mesh.n_vertices - len(mesh.edges) + mesh.n_triangles


# ---------------------------------------------------------------- file i/o


def _strip(line: str) -> str:
    return line.split("#", 1)[0].strip()


def parse_mesh(text: str) -> SurfaceMesh:
    rows = [(n, _strip(l)) for n, l in enumerate(text.splitlines(), start=1)]
    rows = [(n, l) for n, l in rows if l]
    pos = 0

    def header(name, required=True):
        nonlocal pos
        if pos >= len(rows):
            if required:
                raise MeshFormatError(f"missing {name} section", rows[-1][0] if rows else 1)
            return None
        n, line = rows[pos]
        parts = line.split()
        if parts[0] != name:
            if required:
                raise MeshFormatError(f"expected '{name} <count>', got {line!r}", n)
            raise MeshFormatError(f"unexpected content {line!r}", n)
        if len(parts) != 2 or not parts[1].isdigit():
            raise MeshFormatError(f"bad {name} header {line!r}", n)
        pos += 1
        return int(parts[1])

    def block(count, width, conv, name):
        nonlocal pos
        out = []
        for _ in range(count):
            if pos >= len(rows):
                raise MeshFormatError(f"{name} section ended early", rows[-1][0])
            n, line = rows[pos]
            parts = line.split()
            if len(parts) != width:
                raise MeshFormatError(f"expected {width} values, got {len(parts)}", n)
            try:
                out.append(tuple(c(p) for c, p in zip(conv, parts)))
            except ValueError as exc:
                raise MeshFormatError(str(exc), n) from None
            pos += 1
        return out

    nv = header("VERTICES")
    verts = block(nv, 3, (float,) * 3, "VERTICES")
    nt = header("TRIANGLES")
    tris = block(nt, 3, (int,) * 3, "TRIANGLES")
    cones = []
    if pos < len(rows):
        nc = header("CONES", required=False)
        cones = block(nc, 2, (int, float), "CONES")
    if pos < len(rows):
        raise MeshFormatError(f"unexpected content {rows[pos][1]!r}", rows[pos][0])
    V = np.array(verts, dtype=float).reshape(-1, 3)
    T = np.array(tris, dtype=np.int64).reshape(-1, 3)
    return SurfaceMesh(V, T, ConeSet(tuple(cones)))


def load_mesh(path) -> SurfaceMesh:
    return parse_mesh(Path(path).read_text(encoding="utf-8"))


def format_mesh(mesh: SurfaceMesh) -> str:
    lines = [f"VERTICES {mesh.n_vertices}"]
    lines += [" ".join(format(float(x), ".17g") for x in row) for row in mesh.vertices]
    lines.append(f"TRIANGLES {mesh.n_triangles}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    if len(mesh.cones):
        lines.append(f"CONES {len(mesh.cones)}")
        lines += [f"{v} {format(a, '.17g')}" for v, a in mesh.cones]
    return "\n".join(lines) + "\n"


def write_mesh(mesh: SurfaceMesh, path) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, format_mesh(mesh))


# ---------------------------------------------------------------- generators


def generate(shape: str, refinement: int) -> SurfaceMesh:
    """Mesh of a named test surface.

    ``disk`` is the unit disk, ``cylinder`` the flat strip [0, 2pi] x [0, 1]
    with periodic first coordinate embedded as a unit-radius cylinder, and
    ``pair_of_pants`` a planar disk with two holes. Each refinement level
    quadruples the triangle count.
    """
    if refinement < 0:
        raise ValueError("refinement must be >= 0")
    try:
        builder = _GENERATORS[shape]
    except KeyError:
        raise ValueError(f"unknown shape {shape!r}; expected one of {sorted(_GENERATORS)}") from None
    return builder(refinement)


def _cylinder(refinement: int) -> SurfaceMesh:
    na = 8 * 2**refinement
    nh = 2**refinement
    x = 2 * np.pi * np.arange(na) / na
    y = np.arange(nh + 1) / nh
    X, Y = np.meshgrid(x, y)
    param = np.column_stack([X.ravel(), Y.ravel()])
    verts = np.column_stack([np.cos(param[:, 0]), np.sin(param[:, 0]), param[:, 1]])
    tris = []
    for j in range(nh):
        for i in range(na):
            a = j * na + i
            b = j * na + (i + 1) % na
            c = (j + 1) * na + (i + 1) % na
            d = (j + 1) * na + i
            tris.append((a, b, c))
            tris.append((a, c, d))
    return SurfaceMesh(verts, np.array(tris), param=param, kind="cylinder")


_HEX_C = None


def _hex_map(w):
    """Conformal map from the unit disk onto the regular hexagon with corners at the sixth roots of unity."""
    from scipy.special import gamma, hyp2f1

    global _HEX_C
    if _HEX_C is None:
        _HEX_C = gamma(5 / 6) / (gamma(7 / 6) * gamma(2 / 3))
    return _HEX_C * w * hyp2f1(1 / 3, 1 / 6, 7 / 6, w**6)


def _hex_map_inverse(z: np.ndarray) -> np.ndarray:
    from scipy.optimize import brentq

    z = np.asarray(z, dtype=complex)
    w = np.zeros_like(z)
    ang = np.angle(z)
    # hexagon gauge: support function along the six apothem directions
    hexnorm = np.max(
        [np.real(z * np.exp(-1j * (np.pi / 6 + k * np.pi / 3))) for k in range(6)], axis=0
    ) / np.cos(np.pi / 6)
    on_bd = hexnorm > 1 - 1e-12
    inner = ~on_bd

    # boundary points: solve on the arc for the matching side position
    c0, c1 = 1.0 + 0j, np.exp(1j * np.pi / 3)
    side = c1 - c0
    for idx in np.flatnonzero(on_bd):
        k = int(np.floor((ang[idx] % (2 * np.pi)) / (np.pi / 3) + 1e-12)) % 6
        rot = np.exp(-1j * k * np.pi / 3)
        s = np.real((z[idx] * rot - c0) * np.conj(side)) / abs(side) ** 2
        s = min(max(s, 0.0), 1.0)
        if s < 1e-14:
            theta = 0.0
        elif s > 1 - 1e-14:
            theta = np.pi / 3
        else:
            f = lambda t: np.real((_hex_map(np.exp(1j * t)) - c0) * np.conj(side)) / abs(side) ** 2 - s
            theta = brentq(f, 0.0, np.pi / 3, xtol=1e-15, rtol=1e-15)
        w[idx] = np.exp(1j * (theta + k * np.pi / 3))

    from scipy.special import gamma

    C = gamma(5 / 6) / (gamma(7 / 6) * gamma(2 / 3))
    zi = z[inner]
    wi = zi.copy()
    for _ in range(100):
        r = _hex_map(wi) - zi
        if np.abs(r).max(initial=0.0) < 1e-15:
            break
        step = r / (C * (1 - wi**6) ** (-1 / 3))
        wn = wi - step
        bad = np.abs(wn) >= 1
        while bad.any():
            step[bad] *= 0.5
            wn = wi - step
            bad = np.abs(wn) >= 1
        wi = wn
    w[inner] = wi
    return w


def _disk(refinement: int) -> SurfaceMesh:
    n = 2**refinement
    a = np.array([1.0, 0.0])
    b = np.array([0.5, np.sqrt(3) / 2])
    index = {}
    pts = []
    # centre first so the pole of radial tests is vertex 0
    order = sorted(
        ((i, j) for i in range(-n, n + 1) for j in range(-n, n + 1) if abs(i + j) <= n),
        key=lambda ij: (max(abs(ij[0]), abs(ij[1]), abs(ij[0] + ij[1])), ij),
    )
    for ij in order:
        index[ij] = len(pts)
        pts.append((ij[0] * a + ij[1] * b) / n)
    tris = []
    for i in range(-n - 1, n + 1):
        for j in range(-n - 1, n + 1):
            # two lattice triangles anchored at (i, j), counterclockwise
            for t in (((i, j), (i + 1, j), (i, j + 1)), ((i + 1, j), (i + 1, j + 1), (i, j + 1))):
                if all(v in index for v in t):
                    tris.append(tuple(index[v] for v in t))
    P = np.array(pts)
    w = _hex_map_inverse(P[:, 0] + 1j * P[:, 1])
    param = np.column_stack([w.real, w.imag])
    verts = np.column_stack([param, np.zeros(len(param))])
    return SurfaceMesh(verts, np.array(tris), param=param, kind="disk")


def subdivide(vertices: np.ndarray, triangles: np.ndarray):
    """Midpoint 1:4 subdivision. Returns new arrays and the edge -> midpoint map."""
    V = [tuple(v) for v in vertices]
    mid: dict[tuple[int, int], int] = {}

    def m(a, b):
        key = (min(a, b), max(a, b))
        if key not in mid:
            mid[key] = len(V)
            V.append(tuple((np.asarray(V[a]) + np.asarray(V[b])) / 2))
        return mid[key]

    out = []
    for a, b, c in triangles:
        ab, bc, ca = m(a, b), m(b, c), m(c, a)
        out += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    return np.array(V), np.array(out), mid


# pair of pants: outer circle radius 2, holes of radius 0.5 at (+-0.9, 0)
_PANTS_CIRCLES = ((np.array([0.0, 0.0]), 2.0), (np.array([-0.9, 0.0]), 0.5), (np.array([0.9, 0.0]), 0.5))


def _pants(refinement: int) -> SurfaceMesh:
    from scipy.spatial import Delaunay

    pts = []
    circle_of = []
    for ci, (c, r) in enumerate(_PANTS_CIRCLES):
        n = 30 if ci == 0 else 10
        t = 2 * np.pi * np.arange(n) / n
        pts += list(c + r * np.column_stack([np.cos(t), np.sin(t)]))
        circle_of += [ci] * n
    # interior fill: rings around each hole and an intermediate ring
    fill = []
    for c, r in _PANTS_CIRCLES[1:]:
        t = 2 * np.pi * (np.arange(12) + 0.5) / 12
        fill += list(c + 0.85 * np.column_stack([np.cos(t), np.sin(t)]))
    t = 2 * np.pi * (np.arange(20) + 0.5) / 20
    fill += list(1.55 * np.column_stack([np.cos(t), np.sin(t)]))
    fill += [np.array([0.0, 0.55]), np.array([0.0, -0.55]), np.array([0.0, 0.0])]
    fill = [p for p in fill if all(np.linalg.norm(p - c) > r + 0.2 for c, r in _PANTS_CIRCLES[1:])]
    pts += fill
    circle_of += [-1] * len(fill)
    P = np.array(pts)
    tri = Delaunay(P).simplices
    cent = P[tri].mean(axis=1)
    keep = np.ones(len(tri), dtype=bool)
    for c, r in _PANTS_CIRCLES[1:]:
        keep &= np.linalg.norm(cent - c, axis=1) > r
    tri = tri[keep]
    # counterclockwise in the plane
    d1 = P[tri[:, 1]] - P[tri[:, 0]]
    d2 = P[tri[:, 2]] - P[tri[:, 0]]
    flip = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    circle_of = np.array(circle_of)
    for _ in range(refinement):
        _, bedges = _check_edges(tri)
        bkeys = {(min(a, b), max(a, b)) for a, b in bedges}
        P, tri, mid = subdivide(P, tri)
        new_circle = np.full(len(P), -1)
        new_circle[: len(circle_of)] = circle_of
        for key in bkeys:
            m = mid[key]
            ci = circle_of[key[0]]
            c, r = _PANTS_CIRCLES[ci]
            d = P[m] - c
            P[m] = c + r * d / np.linalg.norm(d)
            new_circle[m] = ci
        circle_of = new_circle
    verts = np.column_stack([P, np.zeros(len(P))])
    return SurfaceMesh(verts, tri, param=P.copy(), kind="pair_of_pants")


_GENERATORS = {"disk": _disk, "cylinder": _cylinder, "pair_of_pants": _pants}
