"""Singular Euler characteristic, Trudinger constant and the critical set.

The critical set collects 4 pi n + 8 pi sum_{j in J} (1 + alpha_j) over
n >= 0 and subsets J of the cones. Values are handled in units of pi so that
cone-free entries are exact integers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mesh import ConeSet, SurfaceMesh, euler_characteristic

MAX_CONES = 24
DEDUP_TOL = 1e-12
CLASS_TOL = 1e-12
GUARD_BAND = 1e-6


def trudinger_constant(cones: ConeSet) -> float:
    orders = [a for _, a in cones]
    return 1.0 + min(min(orders, default=0.0), 0.0)


def singular_euler(mesh: SurfaceMesh, cones: ConeSet | None = None) -> float:
    cones = mesh.cones if cones is None else cones
    return euler_characteristic(mesh) + math.fsum(a for _, a in cones)


def geometric_lambda(mesh: SurfaceMesh, cones: ConeSet | None = None) -> float:
    return 4 * np.pi * singular_euler(mesh, cones)


def classify(mesh: SurfaceMesh, cones: ConeSet | None = None) -> str:
    chi = singular_euler(mesh, cones)
    tau = trudinger_constant(mesh.cones if cones is None else cones)
    if abs(chi - tau) <= CLASS_TOL:
        return "critical"
    return "subcritical" if chi < tau else "supercritical"


def value_over_pi(n: int, J, orders) -> float:
    """4 n + 8 sum_{j in J} (1 + alpha_j), summed in a fixed order."""
    return 4.0 * n + 8.0 * math.fsum(1.0 + orders[j] for j in sorted(J))


@dataclass(frozen=True)
class CriticalValue:
    value_over_pi: float
    provenance: tuple[tuple[int, tuple[int, ...]], ...]

    @property
    def value(self) -> float:
        return self.value_over_pi * np.pi


@dataclass(frozen=True)
class CriticalSpectrum:
    entries: tuple[CriticalValue, ...]
    lam_max: float

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.entries])

    @property
    def values_over_pi(self) -> np.ndarray:
        return np.array([e.value_over_pi for e in self.entries])

    def nearest(self, lam: float) -> tuple[CriticalValue, float]:
        """Closest entry to ``lam`` and the distance to it (ties go to the lower value)."""
        gaps = np.abs(self.values - lam)
        i = int(np.argmin(gaps))
        return self.entries[i], float(gaps[i])

    def to_json(self) -> list:
        # J is reported with 0-based cone indices
        return [
            {
                "value_over_pi": e.value_over_pi,
                "provenance": [{"n": n, "J": list(J)} for n, J in e.provenance],
            }
            for e in self.entries
        ]


def _subsets(steps: np.ndarray, limit: float):
    """Subsets of indices whose step sum stays within ``limit`` (steps > 0)."""
    order = np.argsort(steps, kind="stable")
    out = []

    def dfs(start, chosen, total):
        out.append(tuple(sorted(chosen)))
        for pos in range(start, len(order)):
            j = int(order[pos])
            s = total + steps[j]
            if s > limit:
                break  # steps are sorted, later ones only grow
            chosen.append(j)
            dfs(pos + 1, chosen, s)
            chosen.pop()

    dfs(0, [], 0.0)
    return out


def critical_values(cones: ConeSet, lam_max: float) -> CriticalSpectrum:
    if lam_max < 0:
        raise ValueError("lam_max must be non-negative")
    orders = [a for _, a in cones]
    if len(orders) > MAX_CONES:
        raise ValueError(f"{len(orders)} cones exceed the enumeration limit of {MAX_CONES}")
    top = lam_max / np.pi
    steps = 8.0 * (1.0 + np.asarray(orders, dtype=float))
    found = []
    for J in _subsets(steps, top + 1e-9):
        n = 0
        while (x := value_over_pi(n, J, orders)) <= top + DEDUP_TOL:
            found.append((x, len(J), n, J))
            n += 1
    found.sort()
    entries, group = [], []
    for item in found:
        if group and item[0] - group[-1][0] > DEDUP_TOL:
            entries.append(_entry(group))
            group = []
        group.append(item)
    if group:
        entries.append(_entry(group))
    return CriticalSpectrum(tuple(entries), float(lam_max))


def _entry(group) -> CriticalValue:
    prov = sorted(((n, J) for _, _, n, J in group), key=lambda p: (len(p[1]), p[1], p[0]))
    return CriticalValue(group[0][0], tuple(prov))


@dataclass(frozen=True)
class Applicability:
    orders_at_least_minus_half: bool
    boundary_components: int
    enough_boundary: bool
    classification: str
    supercritical: bool
    lam: float
    nearest_critical_over_pi: float
    distance_over_pi: float
    outside_spectrum: bool

    @property
    def applicable(self) -> bool:
        return (
            self.orders_at_least_minus_half and self.enough_boundary and self.supercritical and self.outside_spectrum
        )

    def to_json(self) -> dict:
        return {
            "orders_at_least_minus_half": self.orders_at_least_minus_half,
            "boundary_components": self.boundary_components,
            "at_least_two_boundary_components": self.enough_boundary,
            "classification": self.classification,
            "supercritical": self.supercritical,
            "lambda_over_pi": self.lam / np.pi,
            "nearest_critical_over_pi": self.nearest_critical_over_pi,
            "distance_over_pi": self.distance_over_pi,
            "outside_spectrum": self.outside_spectrum,
            "applicable": self.applicable,
        }


def nearest_critical(cones: ConeSet, lam: float) -> tuple[CriticalValue, float]:
    # consecutive values are at most 4 pi apart, so this range holds the nearest
    spec = critical_values(cones, max(lam, 0.0) + 4 * np.pi)
    return spec.nearest(lam)


def theorem_applicability(mesh: SurfaceMesh, cones: ConeSet | None, lam: float) -> Applicability:
    cones = mesh.cones if cones is None else cones
    entry, dist = nearest_critical(cones, lam)
    cls = classify(mesh, cones)
    b = len(mesh.boundary_loops)
    return Applicability(
        orders_at_least_minus_half=cones.orders_at_least_minus_half,
        boundary_components=b,
        enough_boundary=b >= 2,
        classification=cls,
        supercritical=cls == "supercritical",
        lam=float(lam),
        nearest_critical_over_pi=entry.value_over_pi,
        distance_over_pi=dist / np.pi,
        outside_spectrum=dist > GUARD_BAND,
    )
