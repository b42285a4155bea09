import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liouville.mesh import ConeSet
from liouville.spectrum import (
    GUARD_BAND,
    MAX_CONES,
    classify,
    critical_values,
    geometric_lambda,
    nearest_critical,
    singular_euler,
    theorem_applicability,
    trudinger_constant,
)

from conftest import mesh


def brute_force(orders, lam_max_over_pi):
    """Independent enumeration: every n and every subset, plain summation."""
    vals = []
    for size in range(len(orders) + 1):
        for J in itertools.combinations(range(len(orders)), size):
            base = 8.0 * sum(1.0 + orders[j] for j in J)
            for n in range(int(lam_max_over_pi // 4) + 2):
                x = 4.0 * n + base
                if x <= lam_max_over_pi + 1e-12:
                    vals.append((x, n, J))
    return vals


def dedup(vals, tol=1e-12):
    xs = sorted(x for x, _, _ in vals)
    out = []
    for x in xs:
        if not out or x - out[-1] > tol:
            out.append(x)
    return out


def cones_of(orders, start=10):
    return ConeSet(tuple((start + i, a) for i, a in enumerate(orders)))


def spectrum_matches_brute_force(orders, lam_max_over_pi=40.0):
    spec = critical_values(cones_of(orders), lam_max_over_pi * np.pi)
    ref = brute_force(orders, lam_max_over_pi)
    got = spec.values_over_pi
    want = np.array(dedup(ref))
    if got.shape != want.shape or np.abs(got - want).max(initial=0) > 1e-12:
        return False
    # every recorded provenance reproduces its value and every (n, J) is recorded
    seen = set()
    for e in spec.entries:
        for n, J in e.provenance:
            x = 4.0 * n + 8.0 * sum(1.0 + orders[j] for j in J)
            if abs(x - e.value_over_pi) > 1e-12:
                return False
            seen.add((n, tuple(J)))
    return seen == {(n, tuple(J)) for _, n, J in ref}


def test_random_cone_sets_match_brute_force():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        N = int(rng.integers(0, 11))
        orders = list(rng.uniform(-0.95, 3.0, size=N))
        assert spectrum_matches_brute_force(orders)


def test_degenerate_half_order():
    spec = critical_values(cones_of([-0.5]), 40 * np.pi)
    assert spec.values_over_pi.tolist() == [4.0 * n for n in range(11)]
    four = spec.entries[1]
    assert four.provenance == ((1, ()), (0, (0,)))


@pytest.mark.parametrize(
    "orders, top, expected",
    [([], 13, [0, 4, 8, 12]), ([0.25], 11, [0, 4, 8, 10]), ([-0.5], 9, [0, 4, 8])],
)
def test_spectrum_examples(orders, top, expected):
    assert critical_values(cones_of(orders), top * np.pi).values_over_pi.tolist() == expected


def test_spectrum_json_and_limits():
    spec = critical_values(cones_of([0.25]), 11 * np.pi)
    assert spec.to_json()[3] == {"value_over_pi": 10.0, "provenance": [{"n": 0, "J": [0]}]}
    with pytest.raises(ValueError):
        critical_values(cones_of([0.1] * (MAX_CONES + 1)), np.pi)
    with pytest.raises(ValueError):
        critical_values(ConeSet(), -1.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.99, 4.0), max_size=6), st.floats(0, 30), st.floats(0, 20))
def test_monotone_in_lam_max(orders, a, b):
    small = set(critical_values(cones_of(orders), a * np.pi).values_over_pi.tolist())
    big = set(critical_values(cones_of(orders), (a + b) * np.pi).values_over_pi.tolist())
    assert small <= big


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.99, 4.0), max_size=6))
def test_zero_order_cone_adds_no_values(orders):
    a = critical_values(cones_of(orders), 30 * np.pi).values_over_pi
    b = critical_values(cones_of(orders + [0.0]), 30 * np.pi).values_over_pi
    assert a.shape == b.shape and np.allclose(a, b, atol=1e-12, rtol=0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-0.99, 5.0).map(lambda a: 0.0 if abs(a) < 1e-9 else a), max_size=8))
def test_trudinger_constant_properties(orders):
    # orders within round-off of zero are snapped, since 1 + a rounds to 1 there
    tau = trudinger_constant(cones_of(orders))
    assert tau <= 1
    assert (tau == 1) == all(a >= 0 for a in orders)


def test_trudinger_examples():
    assert trudinger_constant(ConeSet()) == 1
    assert trudinger_constant(cones_of([0.5])) == 1
    assert trudinger_constant(cones_of([-0.25, 0.5])) == 0.75


def _interior(m, k):
    inner = np.flatnonzero(~m.boundary_mask)
    return [int(inner[i]) for i in np.linspace(0, len(inner) - 1, k).astype(int)]


def with_orders(shape, orders):
    m = mesh(shape, 2)
    return m.with_cones(ConeSet(tuple(zip(_interior(m, len(orders)), orders))))


def test_singular_euler_and_classification():
    assert singular_euler(with_orders("cylinder", [1.2])) == pytest.approx(1.2)
    assert singular_euler(with_orders("disk", [])) == 1
    assert singular_euler(with_orders("pair_of_pants", [0.5, 0.5])) == 0
    assert classify(with_orders("disk", [])) == "critical"
    assert classify(with_orders("cylinder", [1.2])) == "supercritical"
    assert classify(with_orders("cylinder", [-0.3])) == "subcritical"
    assert geometric_lambda(with_orders("cylinder", [1.2])) == pytest.approx(4.8 * np.pi)


# (shape, orders, lambda/pi, expected verdict, which flag decides), worked by hand
APPLICABILITY = [
    ("cylinder", [1.2], 4.8, True, None),
    ("disk", [1.2], 4.8, False, "at_least_two_boundary_components"),
    ("cylinder", [-0.6], 4.8, False, "orders_at_least_minus_half"),
    ("cylinder", [], 2.0, False, "supercritical"),
    ("pair_of_pants", [1.5, 1.5], 8.0, False, "outside_spectrum"),
    ("pair_of_pants", [1.5, 1.0], 6.0, True, None),
    ("cylinder", [0.5], 2.0, False, "supercritical"),
    ("cylinder", [1.0], 4.0, False, "supercritical"),
    ("cylinder", [1.2, -0.5], 2.8, True, None),
    ("cylinder", [1.5], 4.0 + 1e-9 / np.pi, False, "outside_spectrum"),
]


@pytest.mark.parametrize("shape, orders, lam, verdict, flag", APPLICABILITY)
def test_theorem_applicability_cases(shape, orders, lam, verdict, flag):
    m = with_orders(shape, orders)
    rep = theorem_applicability(m, None, lam * np.pi).to_json()
    assert rep["applicable"] is verdict
    if flag is not None:
        assert rep[flag] is False


def test_showcase_applicability_numbers():
    rep = theorem_applicability(with_orders("cylinder", [1.2]), None, 4.8 * np.pi)
    assert rep.nearest_critical_over_pi == 4.0
    assert rep.distance_over_pi == pytest.approx(0.8, abs=1e-12)
    entry, dist = nearest_critical(cones_of([1.2]), 4 * np.pi + 1e-9)
    assert entry.value_over_pi == 4.0 and dist < GUARD_BAND
