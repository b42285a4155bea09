"""The mean-field functional J_lambda on the zero-mean space and metric recovery.

With lumped weights m_i (the integration masses of K_alpha) and
q = softmax(log m + v), the discrete functional and its derivatives are

    J(v)   = 1/2 v.Lv - lambda log sum_i m_i e^{v_i}
    dJ     = Lv - lambda (q - A/|M|)
    d2J w  = Lw - lambda (q w - q (q.w))

The uniform term in dJ is the derivative of the zero-mean constraint; it makes
every dual vector sum to zero, so constants never enter.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .fem import Operators, assemble
from .green import GreenFunction, SingularWeight, compute_green, singular_weight
from .mesh import ConeSet, SurfaceMesh


@dataclass(frozen=True, eq=False)
class ProblemData:
    mesh: SurfaceMesh
    ops: Operators
    weight: SingularWeight
    lam: float
    cones: ConeSet = field(default_factory=ConeSet)
    greens: tuple[GreenFunction, ...] = ()

    def __post_init__(self):
        if not np.isfinite(self.lam):
            raise ValueError("lambda must be finite")

    def with_lambda(self, lam: float) -> "ProblemData":
        return ProblemData(self.mesh, self.ops, self.weight, float(lam), self.cones, self.greens)

    @property
    def log_mass(self) -> np.ndarray:
        return self.weight.log_mass


def build_problem(
    mesh: SurfaceMesh,
    lam: float,
    K=1.0,
    cones: ConeSet | None = None,
    green_mode: str = "split",
    ops: Operators | None = None,
) -> ProblemData:
    """Assemble operators, one Green's function per cone and the weight."""
    cones = mesh.cones if cones is None else cones
    ops = assemble(mesh) if ops is None else ops
    greens = tuple(compute_green(mesh, ops, v, mode=green_mode) for v, _ in cones)
    weight = singular_weight(mesh, ops, K, cones, greens)
    return ProblemData(mesh, ops, weight, float(lam), cones, greens)


def _checked(data: ProblemData, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (data.mesh.n_vertices,):
        raise ValueError(f"field has shape {v.shape}, expected ({data.mesh.n_vertices},)")
    if not np.all(np.isfinite(v)):
        raise ValueError("field contains NaN or infinite values")
    return v


def log_integral(data: ProblemData, v) -> float:
    """log int K_alpha e^v with lumped quadrature (max-shifted)."""
    return float(logsumexp(data.log_mass + _checked(data, v)))


def weights(data: ProblemData, v) -> np.ndarray:
    """Normalised lumped masses q_i of K_alpha e^v; they sum to one."""
    z = data.log_mass + _checked(data, v)
    q = np.exp(z - logsumexp(z))
    return q


def density(data: ProblemData, v) -> np.ndarray:
    """Nodal probability density rho_v = K_alpha e^v / int K_alpha e^v."""
    return weights(data, v) / data.ops.mass


def functional(data: ProblemData, v) -> float:
    v = data.ops.zero_mean(_checked(data, v))
    return 0.5 * float(v @ (data.ops.stiffness @ v)) - data.lam * log_integral(data, v)


def gradient(data: ProblemData, v) -> np.ndarray:
    v = _checked(data, v)
    g = data.ops.stiffness @ v
    if data.lam != 0.0:
        g -= data.lam * (weights(data, v) - data.ops.mass / data.ops.area)
    return g


def hessian_apply(data: ProblemData, v, w, q: np.ndarray | None = None) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    out = data.ops.stiffness @ w
    if data.lam != 0.0:
        q = weights(data, v) if q is None else q
        out -= data.lam * (q * w - q * (q @ w))
    return out


def residual(data: ProblemData, v) -> float:
    """Mass-weighted L2 norm of the nodal defect of -Lap v + lambda/|M| - lambda rho_v."""
    g = gradient(data, v)
    return float(np.sqrt(np.sum(g * g / data.ops.mass)))


# ---------------------------------------------------------------- metrics


@dataclass(frozen=True, eq=False)
class Metric:
    """Conformal factor e^u of a solution.

    ``shift`` is the constant c with int K_alpha e^{v + c} = |lambda|.
    ``curvature_sign`` is -1 when lambda < 0, in which case the realised
    metric carries curvature -K.
    """

    u: np.ndarray
    conformal_factor: np.ndarray
    shift: float
    curvature_sign: int
    total_mass: float


def to_metric(data: ProblemData, v, require_positive: bool = False) -> Metric:
    lam = data.lam
    if lam == 0.0 or (require_positive and lam < 0):
        raise ValueError(f"lambda = {lam} cannot carry a positive total curvature mass")
    v = _checked(data, v)
    c = np.log(abs(lam)) - log_integral(data, v)
    vhat = v + c
    u = vhat.copy()
    by_pole = {g.pole: g for g in data.greens}
    for p, a in data.cones:
        u -= 4 * np.pi * a * by_pole[p].values
    total = float(np.exp(logsumexp(data.log_mass + vhat)))
    return Metric(u, np.exp(u), float(c), 1 if lam > 0 else -1, total)


@dataclass(frozen=True, eq=False)
class CurvatureReport:
    curvature: np.ndarray
    compared: np.ndarray
    max_error: float
    max_relative_error: float


def angle_defect_curvature(mesh: SurfaceMesh, u=None) -> np.ndarray:
    """Angle defect over barycentric area of the metric e^u g_0 at interior vertices.

    Edges are rescaled by exp((u_i + u_j) / 4). Boundary vertices get NaN.
    """
    V, T = mesh.vertices, mesh.triangles
    n = mesh.n_vertices
    u = np.zeros(n) if u is None else np.asarray(u, dtype=float)
    # side k is opposite corner k
    a = np.linalg.norm(V[T[:, 1]] - V[T[:, 2]], axis=1) * np.exp((u[T[:, 1]] + u[T[:, 2]]) / 4)
    b = np.linalg.norm(V[T[:, 2]] - V[T[:, 0]], axis=1) * np.exp((u[T[:, 2]] + u[T[:, 0]]) / 4)
    c = np.linalg.norm(V[T[:, 0]] - V[T[:, 1]], axis=1) * np.exp((u[T[:, 0]] + u[T[:, 1]]) / 4)
    sides = np.column_stack([a, b, c])
    angles = np.empty_like(sides)
    for k in range(3):
        x, y, z = sides[:, k], sides[:, (k + 1) % 3], sides[:, (k + 2) % 3]
        angles[:, k] = np.arccos(np.clip((y * y + z * z - x * x) / (2 * y * z), -1.0, 1.0))
    s = sides.sum(axis=1) / 2
    area = np.sqrt(np.maximum(s * (s - a) * (s - b) * (s - c), 0.0))
    angle_sum = np.bincount(T.ravel(), weights=angles.ravel(), minlength=n)
    cell = np.bincount(T.ravel(), weights=np.repeat(area / 3, 3), minlength=n)
    K = (2 * np.pi - angle_sum) / cell
    K[mesh.boundary_mask] = np.nan
    return K


def curvature_check(mesh: SurfaceMesh, u, K=1.0, cones: ConeSet | None = None, rings: int = 3) -> CurvatureReport:
    """Compare the discrete curvature of e^u g_0 with the prescribed K.

    Vertices within ``rings`` of a cone and the first ring off the boundary
    are excluded from the comparison.
    """
    cones = mesh.cones if cones is None else cones
    curv = angle_defect_curvature(mesh, u)
    K = np.broadcast_to(np.asarray(K, dtype=float), curv.shape)
    mask = ~mesh.boundary_mask
    mask[mesh.rings(np.flatnonzero(mesh.boundary_mask), 1)] = False
    if len(cones):
        mask[mesh.rings(list(cones.vertices), rings)] = False
    if not mask.any():
        return CurvatureReport(curv, mask, float("nan"), float("nan"))
    err = np.abs(curv[mask] - K[mask])
    return CurvatureReport(curv, mask, float(err.max()), float((err / np.abs(K[mask])).max()))


def sphere_defects(mesh: SurfaceMesh, ops: Operators, u, K=1.0, h0: float = 1.0, h: float = 0.0):
    """Nodal defects of -Lap u + 2 K_0 = 2 K e^u (with K_0 = 0) and of du/dn + 2 h0 = 2 h e^{u/2}.

    Interior rows use (Lu)_i / A_i. Boundary rows subtract the lumped bulk term
    and divide by the boundary length carried by the vertex. Returns the
    interior and boundary defect arrays.
    """
    u = np.asarray(u, dtype=float)
    K = np.broadcast_to(np.asarray(K, dtype=float), u.shape)
    Lu = ops.stiffness @ u
    bulk = 2 * K * np.exp(u)
    bd = mesh.boundary_mask
    interior = Lu[~bd] / ops.mass[~bd] - bulk[~bd]
    E = mesh.boundary_edges
    ell = np.linalg.norm(mesh.vertices[E[:, 0]] - mesh.vertices[E[:, 1]], axis=1)
    share = np.bincount(E.ravel(), weights=np.repeat(ell / 2, 2), minlength=mesh.n_vertices)
    flux = (Lu[bd] - ops.mass[bd] * bulk[bd]) / share[bd]
    boundary = flux + 2 * h0 - 2 * h * np.exp(u[bd] / 2)
    return interior, boundary
