"""Continuation in lambda towards the boundary threshold and the blow-up mass.

    python scripts/continuation_blowup.py --refinement 4 --path 2pi:4pi-0.1
"""
import argparse

import numpy as np

from liouville.config import parse_real
from liouville.functional import build_problem
from liouville.mesh import generate
from liouville.solvers import continuation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--refinement", type=int, default=4)
    ap.add_argument("--path", default="2pi:4pi-0.1")
    args = ap.parse_args()

    a, b = (parse_real(x) for x in args.path.split(":"))
    data = build_problem(generate("cylinder", args.refinement), a)
    res = continuation(data, a, b)
    print(f"{'lambda/pi':>10} {'max v':>9} {'J':>12} {'residual':>9}")
    for r in res.reports:
        print(f"{r.lam / np.pi:10.4f} {r.max_v:9.3f} {r.J_value:12.5f} {r.residual:9.1e}")
    print(f"status: {res.status} at {res.lam_end / np.pi:.4f} pi")
    for p in res.reports[-1].mass_summary:
        print(f"peak at vertex {p['location']} ({p['class']}): mass {p['mass_over_pi']:.4f} pi, "
              f"reference {p['reference_over_pi']:g} pi, gap {p['relative_gap']:.3f}")


if __name__ == "__main__":
    main()
