import functools

import numpy as np
import pytest

from liouville.fem import assemble
from liouville.mesh import ConeSet, generate


@functools.lru_cache(maxsize=None)
def mesh(shape, r):
    return generate(shape, r)


@functools.lru_cache(maxsize=None)
def ops(shape, r):
    return assemble(mesh(shape, r))


def cylinder_with_cone(r, alpha, at=(0.5, 0.5)):
    m = mesh("cylinder", r)
    return m.with_cones(ConeSet(((m.nearest_vertex(at), alpha),)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
