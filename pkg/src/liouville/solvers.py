"""Critical points of J_lambda: minimisation, deflated Newton from bubble
grids, and lambda-continuation with blow-up detection."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bubbles import BarycenterConfig, bubble_field, mass_spectrum
from .fem import geodesic_distance, solve_weak
from .functional import ProblemData, functional, gradient, hessian_apply, residual, weights
from .spectrum import GUARD_BAND, nearest_critical

BLOWUP_MAX_V = 25.0
BLOWUP_FRACTION = 0.9
NONCOERCIVE_J = -1e8
DISTINCT_TOL = 1e-3
DEFAULT_GRID_LAMS = (10.0, 1e2, 1e3)
DEFAULT_GRID_SIGMAS = 8
COMPETITOR_SCALE = 3.0
DENSE_EIG_LIMIT = 800


class PreconditionError(ValueError):
    """A solver was called outside its admissible parameter range."""


@dataclass
class SolveReport:
    lam: float
    solution: np.ndarray = field(repr=False)
    J_value: float
    residual: float
    iterations: int
    strategy: str
    converged: bool
    trace: list = field(default_factory=list, repr=False)
    mass_summary: list = field(default_factory=list)
    status: str = ""
    start: dict | None = None

    @property
    def max_v(self) -> float:
        return float(np.max(self.solution))

    def to_json(self) -> dict:
        out = {
            "lambda": self.lam,
            "lambda_over_pi": self.lam / np.pi,
            "strategy": self.strategy,
            "converged": self.converged,
            "status": self.status,
            "J_value": self.J_value,
            "residual": self.residual,
            "iterations": self.iterations,
            "max_v": self.max_v,
            "mass_summary": self.mass_summary,
            "trace": self.trace,
        }
        if self.start is not None:
            out["start"] = self.start
        return out


def _report(data, v, it, strategy, converged, trace, status, r_mass=None, start=None):
    peaks = []
    if r_mass is not None:
        peaks = [p.to_json() for p in mass_spectrum(data, v, r_mass)]
    return SolveReport(
        data.lam, v, functional(data, v), residual(data, v), it, strategy, converged, trace, peaks, status, start
    )


def default_mass_radius(data: ProblemData) -> float:
    return 5.0 * data.mesh.mean_edge_length()


def _check_zero_mean(data: ProblemData, v: np.ndarray) -> None:
    ops = data.ops
    if abs(ops.integrate(v)) > 1e-12 * ops.area * (1.0 + np.abs(v).max()):
        raise AssertionError("iterate left the zero-mean subspace")


# ---------------------------------------------------------------- linear algebra


def _newton_matrix(data: ProblemData, q: np.ndarray, mu: float) -> sp.csc_matrix:
    """Bordered Hessian: the rank-one part and the zero-mean constraint as extra rows."""
    A = data.ops.mass
    lam = data.lam
    top = data.ops.stiffness - sp.diags(lam * q - mu * A)
    col_q = sp.csr_matrix((lam * q)[:, None])
    col_a = sp.csr_matrix(A[:, None])
    return sp.bmat(
        [
            [top, col_q, col_a],
            [sp.csr_matrix(q[None]), sp.csr_matrix([[-1.0]]), None],
            [sp.csr_matrix(A[None]), None, None],
        ],
        format="csc",
    )


def newton_direction(data: ProblemData, v, g=None, mu: float = 0.0) -> np.ndarray:
    """Zero-mean solution of (Hessian + mu A) d = -g."""
    q = weights(data, v)
    g = gradient(data, v) if g is None else g
    n = data.mesh.n_vertices
    lu = spla.splu(_newton_matrix(data, q, mu))
    x = lu.solve(np.concatenate([-g, [0.0, 0.0]]))
    d = x[:n]
    return d - data.ops.mean(d)


def lowest_modes(data: ProblemData, v, k: int = 1):
    """Smallest generalised eigenpairs of the Hessian on the zero-mean space.

    Solves H w = theta A w with the constant mode removed. Returns
    (eigenvalues, A-orthonormal eigenvectors as columns).
    """
    A = data.ops.mass
    area = data.ops.area
    q = weights(data, v)
    n = len(A)
    lam = data.lam
    # constants sit in the kernel; lift them far above the spectrum
    Ldiag = data.ops.stiffness.diagonal()
    beta = 10.0 * float(np.max(Ldiag / A)) + 10.0 * abs(lam) / area + 1.0
    if n <= DENSE_EIG_LIMIT:
        H = data.ops.stiffness.toarray() - lam * np.diag(q) + lam * np.outer(q, q)
        H += beta * np.outer(A, A) / area
        vals, vecs = sla.eigh(H, np.diag(A), subset_by_index=[0, min(k, n) - 1])
        return vals, vecs
    # shift-invert around a value below the spectrum, rank-two Woodbury update
    sigma = -abs(lam) * float(np.max(q / A)) - 1.0
    S = (data.ops.stiffness - sp.diags(lam * q + sigma * A)).tocsc()
    lu = spla.splu(S)
    U = np.column_stack([q, A])
    C = np.diag([lam, beta / area])
    SU = np.column_stack([lu.solve(U[:, 0]), lu.solve(U[:, 1])])
    small = np.linalg.inv(np.linalg.inv(C) + U.T @ SU)

    def solve(x):
        y = lu.solve(x)
        return y - SU @ (small @ (U.T @ y))

    op = spla.LinearOperator((n, n), matvec=solve, dtype=float)
    Hop = spla.LinearOperator(
        (n, n), matvec=lambda w: hessian_apply(data, v, w, q) + beta * A * (A @ w) / area, dtype=float
    )
    theta, vecs = spla.eigsh(Hop, k=k, M=sp.diags(A).tocsc(), sigma=sigma, which="LM", OPinv=op)
    order = np.argsort(theta)
    return theta[order], vecs[:, order]


# ---------------------------------------------------------------- Newton


@dataclass
class Deflation:
    """Multiplicative deflation m(v) = prod_k (||v - v_k||^-2 + shift), mass-weighted RMS norm."""

    known: list = field(default_factory=list)
    power: float = 2.0
    shift: float = 1.0

    def _norm2(self, data, w):
        return float(data.ops.mass @ (w * w)) / data.ops.area

    def factor(self, data, v) -> float:
        m = 1.0
        for u in self.known:
            m *= self._norm2(data, v - u) ** (-self.power / 2) + self.shift
        return m

    def grad_log(self, data, v) -> np.ndarray:
        g = np.zeros_like(v)
        p = self.power
        for u in self.known:
            w = v - u
            n2 = self._norm2(data, w)
            if n2 == 0:
                return np.full_like(v, np.inf)
            t = n2 ** (-p / 2)
            # d/dv of log(n2^(-p/2) + shift)
            g += (-p / 2) * t / n2 * (2 * data.ops.mass * w / data.ops.area) / (t + self.shift)
        return g


def newton(
    data: ProblemData,
    v0,
    tol: float = 1e-8,
    max_iter: int = 60,
    deflation: Deflation | None = None,
    mass_radius: float | None = None,
    strategy: str = "newton",
) -> SolveReport:
    """Damped, optionally deflated Newton iteration for the critical point equation.

    The step minimises the (deflated) residual along the Newton direction by
    backtracking. When no step length works the Hessian is shifted by mu A,
    a trust-region style regularisation that also handles saddles.
    """
    v = data.ops.zero_mean(np.asarray(v0, dtype=float))
    defl = deflation if deflation is not None and deflation.known else None
    trace = []
    mu = 0.0
    mu0 = 1.0
    r = residual(data, v)

    def merit(v, r):
        return (defl.factor(data, v) * r) if defl else r

    status = "max_iter"
    it = 0
    for it in range(1, max_iter + 1):
        if not np.isfinite(r):
            status = "diverged"
            break
        if r <= tol:
            status = "converged"
            it -= 1
            break
        g = gradient(data, v)
        try:
            d = newton_direction(data, v, g, mu)
        except RuntimeError:
            mu = max(mu0, 10 * mu)
            trace.append({"iter": it, "residual": r, "step": 0.0, "mu": mu})
            continue
        if defl:
            s = float(defl.grad_log(data, v) @ d)
            tau = 1.0 / (1.0 - s) if s != 1.0 else 1.0
            d = tau * d
        m0 = merit(v, r)
        step = 1.0
        accepted = False
        while step >= 2.0**-12:
            w = data.ops.zero_mean(v + step * d)
            if np.all(np.isfinite(w)) and np.max(w) < 700:
                rw = residual(data, w)
                if merit(w, rw) < (1 - 1e-4 * step) * m0:
                    accepted = True
                    break
            step *= 0.5
        if accepted:
            v, r = w, rw
            _check_zero_mean(data, v)
            trace.append({"iter": it, "residual": r, "step": step, "mu": mu})
            mu = 0.0 if mu < 1e-3 * mu0 else mu / 10
        else:
            if mu >= 1e8:
                status = "stalled"
                break
            mu = max(mu0, 10 * mu)
            trace.append({"iter": it, "residual": r, "step": 0.0, "mu": mu})
    else:
        if r <= tol:
            status = "converged"
    if status != "converged" and r <= tol:
        status = "converged"
    return _report(data, v, it, strategy, status == "converged", trace, status, mass_radius)


# ---------------------------------------------------------------- minimisation


def coercivity_bound(data: ProblemData) -> float:
    """Largest lambda for which J_lambda stays bounded below (boundary or cone bubbles)."""
    amin = min([a for _, a in data.cones] + [0.0])
    bound = 8 * np.pi * (1 + amin)
    if len(data.mesh.boundary_loops):
        bound = min(bound, 4 * np.pi)
    return bound


def minimize(
    data: ProblemData,
    init=None,
    tol: float = 1e-8,
    max_iter: int = 5000,
    newton_switch: float = 1e-3,
    mass_radius: float | None = None,
    stability_check: bool = True,
) -> SolveReport:
    """Preconditioned gradient descent with Armijo steps, then Newton.

    The descent direction is the H^1 Riesz representative of the gradient.
    After convergence a negative Hessian direction, if present, is used to
    leave the saddle and the descent resumes.
    """
    ops = data.ops
    v = np.zeros(ops.n) if init is None else ops.zero_mean(np.asarray(init, dtype=float))
    trace = []
    J = functional(data, v)
    step = 1.0
    it = 0
    escapes = 0
    status = "max_iter"
    while it < max_iter:
        it += 1
        g = gradient(data, v)
        r = float(np.sqrt(np.sum(g * g / ops.mass)))
        try:
            d = newton_direction(data, v, g) if r < newton_switch else None
            saddle = r <= tol or (d is not None and g @ d >= 0)
            if saddle and stability_check and data.lam > 0 and escapes < 3:
                theta, W = lowest_modes(data, v, 1)
                if theta[0] < -1e-8:
                    w = W[:, 0] / np.sqrt(ops.mass @ W[:, 0] ** 2 / ops.area)
                    cands = [ops.zero_mean(v + s * 0.1 * w) for s in (1, -1)]
                    v = min(cands, key=lambda c: functional(data, c))
                    J = functional(data, v)
                    escapes += 1
                    trace.append({"iter": it, "J": J, "residual": r, "event": "escape", "theta": float(theta[0])})
                    continue
            if r <= tol:
                status = "converged"
                break
            if d is None or g @ d >= 0:
                d = -solve_weak(ops, g)
        except RuntimeError:
            # the iterate has degenerated, typically a runaway spike
            status = "non_coercive" if data.lam >= coercivity_bound(data) else "breakdown"
            break
        slope = float(g @ d)
        newton_regime = r < newton_switch
        noise = 1e-12 * (1.0 + abs(J))
        t = 1.0 if newton_regime else min(1.0, 2 * step)
        while t > 1e-14:
            w = ops.zero_mean(v + t * d)
            Jw = functional(data, w) if np.max(w) < 700 else np.inf
            if newton_regime and Jw <= J + noise and residual(data, w) <= (1 - 1e-4 * t) * r:
                # near the solution J moves at round-off level, the residual is the honest merit
                break
            if Jw <= J + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            status = "line_search_failed"
            break
        v, J, step = w, Jw, t
        _check_zero_mean(data, v)
        trace.append({"iter": it, "J": J, "residual": r, "step": t})
        if J < NONCOERCIVE_J:
            status = "non_coercive"
            break
    rep = _report(data, v, it, "min", False, trace, status, mass_radius)
    rep.converged = status == "converged" and rep.residual <= tol
    if status == "line_search_failed" and rep.residual <= tol:
        rep.converged, rep.status = True, "converged"
    return rep


# ---------------------------------------------------------------- min-max


@dataclass
class MinmaxResult:
    solutions: list
    starts: list
    k: int
    lam: float

    @property
    def ok(self) -> bool:
        return bool(self.solutions)

    def to_json(self) -> dict:
        return {
            "lambda": self.lam,
            "lambda_over_pi": self.lam / np.pi,
            "k": self.k,
            "ok": self.ok,
            "solutions": [s.to_json() for s in self.solutions],
            "starts": self.starts,
        }


def check_window(data: ProblemData, k: int | None = None) -> int:
    lam = data.lam
    kk = int(math.floor(lam / (4 * np.pi))) if k is None else int(k)
    if not (4 * kk * np.pi < lam < 4 * (kk + 1) * np.pi):
        raise PreconditionError(f"lambda/pi = {lam / np.pi!r} is not inside (4k, 4k+4) for k = {kk}")
    entry, dist = nearest_critical(data.cones, lam)
    if dist < GUARD_BAND:
        raise PreconditionError(
            f"lambda/pi = {lam / np.pi!r} is within {GUARD_BAND} of the critical value "
            f"{entry.value_over_pi!r} pi"
        )
    return kk


def bubble_grid(data: ProblemData, k: int, sigmas: int = DEFAULT_GRID_SIGMAS, lams=DEFAULT_GRID_LAMS, component: int = 1):
    """Grid starts in deterministic order: Lam outermost, then atom positions."""
    loop = data.mesh.boundary_loop(component)
    pos = [int(loop[(i * len(loop)) // sigmas]) for i in range(sigmas)]
    out = []
    for Lam in lams:
        for combo in itertools.combinations(range(sigmas), k):
            pts = [pos[i] for i in combo]
            out.append((BarycenterConfig.from_atoms([1.0] * k, pts), float(Lam), list(combo)))
    return out


def solve_minmax(
    data: ProblemData,
    k: int | None = None,
    sigmas: int = DEFAULT_GRID_SIGMAS,
    lams=DEFAULT_GRID_LAMS,
    tol: float = 1e-6,
    component: int = 1,
    max_iter: int = 80,
    mass_radius: float | None = None,
    stop_after: int | None = None,
) -> MinmaxResult:
    """Deflated Newton from bubble states concentrated on boundary component ``component``."""
    k = check_window(data, k)
    grid = bubble_grid(data, max(k, 1), sigmas, lams, component)
    defl = Deflation()
    found, starts = [], []
    for idx, (sigma, Lam, combo) in enumerate(grid):
        v0 = bubble_field(data, sigma, Lam)
        rep = newton(data, v0, tol=tol, max_iter=max_iter, deflation=defl, mass_radius=mass_radius, strategy="minmax")
        entry = {
            "index": idx,
            "Lambda": Lam,
            "sigma": sigma.to_json(),
            "positions": combo,
            "converged": rep.converged,
            "status": rep.status,
            "residual": rep.residual,
            "iterations": rep.iterations,
            "solution": None,
        }
        if rep.converged:
            dist = [_relative_distance(data, rep.solution, s.solution) for s in found]
            if all(d > DISTINCT_TOL for d in dist):
                rep.start = {"index": idx, "Lambda": Lam, "positions": combo}
                found.append(rep)
                defl.known.append(rep.solution.copy())
                entry["solution"] = len(found) - 1
            else:
                entry["solution"] = int(np.argmin(dist))
                entry["status"] = "duplicate"
        starts.append(entry)
        if stop_after is not None and len(found) >= stop_after:
            break
    return MinmaxResult(found, starts, k, data.lam)


def _relative_distance(data, v, w) -> float:
    A = data.ops.mass
    den = math.sqrt(float(A @ (w * w))) or 1.0
    return math.sqrt(float(A @ ((v - w) ** 2))) / den


# ---------------------------------------------------------------- continuation


@dataclass(frozen=True)
class StepPolicy:
    initial: float = 0.1 * np.pi
    minimum: float = 1e-5
    maximum: float = 0.25 * np.pi
    growth: float = 1.5


@dataclass
class ContinuationResult:
    reports: list
    status: str
    lam_end: float

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "lambda_end": self.lam_end,
            "steps": [r.to_json() for r in self.reports],
        }


def _blown_up(rep: SolveReport) -> bool:
    if rep.max_v > BLOWUP_MAX_V:
        return True
    return any(p["mass_over_pi"] * np.pi > BLOWUP_FRACTION * rep.lam for p in rep.mass_summary)


def _stabilise(data, v, tol, mass_radius):
    """Minimiser branch: descend along a negative mode if the Hessian has one."""
    if data.lam >= coercivity_bound(data):
        return None
    theta, W = lowest_modes(data, v, 1)
    if theta[0] >= -1e-8:
        return None
    ops = data.ops
    w = W[:, 0] / np.sqrt(ops.mass @ W[:, 0] ** 2 / ops.area)
    best = None
    for s in (1.0, -1.0):
        rep = minimize(data, ops.zero_mean(v + 0.1 * s * w), tol=tol, mass_radius=mass_radius)
        if rep.converged and (best is None or rep.J_value < best.J_value):
            best = rep
    return best


def _competitor(data, v, tol, mass_radius):
    """Lowest-J critical point reached by Newton from boundary bubbles.

    One bubble per boundary loop, placed at the loop vertex nearest to the
    current density maximum, at a scale a few mesh sizes across.
    """
    mesh = data.mesh
    peak = int(np.argmax(weights(data, v) / data.ops.mass))
    dist = geodesic_distance(mesh, peak, method="auto")
    Lam = COMPETITOR_SCALE / mesh.mean_edge_length()
    best = None
    for label in range(1, len(mesh.boundary_loops) + 1):
        loop = np.sort(mesh.boundary_loop(label))
        seed = int(loop[np.argmin(dist[loop])])
        v0 = bubble_field(data, BarycenterConfig((1.0,), (seed,), 1), Lam)
        rep = newton(data, v0, tol=tol, mass_radius=mass_radius, strategy="continue")
        if rep.converged and (best is None or rep.J_value < best.J_value):
            best = rep
    return best


def continuation(
    data: ProblemData,
    lam_start: float,
    lam_end: float,
    policy: StepPolicy = StepPolicy(),
    tol: float = 1e-8,
    init=None,
    mass_radius: float | None = None,
    track_minimizers: bool = True,
) -> ContinuationResult:
    """Predictor-corrector continuation in lambda.

    The predictor follows the tangent dv/dlam = H^-1 (q - A/|M|); Newton
    corrects. Failed corrections halve the step down to ``policy.minimum``.
    While J stays coercive and ``track_minimizers`` is set, the branch follows
    the lowest critical point found: a solution that has lost stability is
    replaced by the minimiser along its negative mode. It is also compared
    with the state Newton reaches from a boundary bubble. Near the boundary
    threshold such concentrated states undercut the smooth branch on any
    fixed mesh.
    """
    r_mass = default_mass_radius(data) if mass_radius is None else mass_radius
    d0 = data.with_lambda(lam_start)
    if lam_start < coercivity_bound(d0):
        first = minimize(d0, init, tol=tol, mass_radius=r_mass)
    else:
        first = newton(d0, np.zeros(d0.ops.n) if init is None else init, tol=tol, mass_radius=r_mass)
        if not first.converged:
            res = solve_minmax(d0, tol=tol, mass_radius=r_mass, stop_after=1)
            first = res.solutions[0] if res.ok else first
    first.strategy = "continue"
    reports = [first]
    if not first.converged:
        return ContinuationResult(reports, "start_failed", lam_start)
    if _blown_up(first):
        return ContinuationResult(reports, "blow_up", lam_start)
    lam, v = float(lam_start), first.solution
    direction = 1.0 if lam_end >= lam_start else -1.0
    step = policy.initial
    while direction * (lam_end - lam) > 1e-15:
        h = min(step, abs(lam_end - lam))
        lam_new = lam_end if h == abs(lam_end - lam) else lam + direction * h
        cur = data.with_lambda(lam)
        q = weights(cur, v)
        rhs = q - cur.ops.mass / cur.ops.area
        try:
            dv = newton_direction(cur, v, -rhs)
        except RuntimeError:
            dv = np.zeros_like(v)
        nxt = data.with_lambda(lam_new)
        rep = newton(nxt, v + (lam_new - lam) * dv, tol=tol, mass_radius=r_mass, strategy="continue")
        if not rep.converged:
            rep = newton(nxt, v, tol=tol, mass_radius=r_mass, strategy="continue")
        if not rep.converged:
            step = h / 2
            if step < policy.minimum:
                return ContinuationResult(reports, "step_floor", lam)
            continue
        if track_minimizers and lam_new < coercivity_bound(nxt):
            better = _stabilise(nxt, rep.solution, tol, r_mass)
            if better is not None:
                rep = better
            rival = _competitor(nxt, rep.solution, tol, r_mass)
            if rival is not None and rival.J_value < rep.J_value - 1e-9 * (1 + abs(rep.J_value)):
                rep = _stabilise(nxt, rival.solution, tol, r_mass) or rival
            rep.strategy = "continue"
        reports.append(rep)
        lam, v = lam_new, rep.solution
        if _blown_up(rep):
            return ContinuationResult(reports, "blow_up", lam)
        step = min(policy.maximum, h * policy.growth)
    return ContinuationResult(reports, "completed", lam)
