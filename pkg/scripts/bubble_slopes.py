"""Energy, log-mass and J slopes of boundary bubbles against log Lambda.

    python scripts/bubble_slopes.py --k 2 --lam 10pi
"""
import argparse

import numpy as np

from liouville.bubbles import BarycenterConfig, bubble_energy_report
from liouville.config import parse_real
from liouville.functional import build_problem
from liouville.mesh import generate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, default=1)
    ap.add_argument("--lam", default="6pi")
    ap.add_argument("--refinement", type=int, default=3)
    ap.add_argument("--Lambdas", default="1e2,1e3,1e4")
    ap.add_argument("--quadrature", default="auto", choices=["auto", "graded", "nodal"])
    args = ap.parse_args()

    m = generate("cylinder", args.refinement)
    data = build_problem(m, parse_real(args.lam))
    loop = m.boundary_loop(1)
    pts = [int(loop[(i * len(loop)) // args.k]) for i in range(args.k)]
    sigma = BarycenterConfig.from_atoms([1.0] * args.k, pts)
    lams = [float(x) for x in args.Lambdas.split(",")]
    rep = bubble_energy_report(data, sigma, lams, component=1, quadrature=args.quadrature)

    print(f"k = {rep.k}, lambda = {data.lam / np.pi:g} pi, quadrature = {rep.quadrature}")
    print(f"{'Lambda':>10} {'dirichlet':>12} {'log-mass':>10} {'J':>12}")
    for row in zip(rep.lams, rep.dirichlet, rep.log_mass, rep.functional):
        print("{:10.0e} {:12.4f} {:10.4f} {:12.4f}".format(*row))
    for key, ratio in rep.ratios().items():
        print(f"{key:>10}: slope {rep.slopes[key]:10.4f}  expected {rep.expected[key]:10.4f}  ratio {ratio:.4f}")


if __name__ == "__main__":
    main()
