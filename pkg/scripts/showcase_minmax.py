"""Deflated Newton from the bubble grid on the cylinder with one cone.

    python scripts/showcase_minmax.py --alpha 1.2 --lam 4.8pi
"""
import argparse
import time

import numpy as np

from liouville.config import parse_real
from liouville.functional import build_problem
from liouville.mesh import ConeSet, generate
from liouville.solvers import solve_minmax
from liouville.spectrum import theorem_applicability


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--alpha", type=float, default=1.2)
    ap.add_argument("--lam", default="4.8pi")
    ap.add_argument("--refinement", type=int, default=3)
    ap.add_argument("--tol", type=float, default=1e-6)
    args = ap.parse_args()

    m = generate("cylinder", args.refinement)
    m = m.with_cones(ConeSet(((m.nearest_vertex((0.5, 0.5)), args.alpha),)))
    lam = parse_real(args.lam)
    app = theorem_applicability(m, None, lam)
    print(f"applicable: {app.applicable}  nearest critical {app.nearest_critical_over_pi:g} pi")

    t0 = time.perf_counter()
    res = solve_minmax(build_problem(m, lam), tol=args.tol)
    print(f"{len(res.solutions)} distinct solutions from {len(res.starts)} starts in {time.perf_counter() - t0:.1f} s")
    for i, s in enumerate(res.solutions):
        print(f"  #{i}: start {s.start['index']:3d}  Lambda {s.start['Lambda']:7g}  J {s.J_value:12.5f}  "
              f"max v {s.max_v:8.3f}  residual {s.residual:.1e}")


if __name__ == "__main__":
    main()
