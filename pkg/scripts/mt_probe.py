"""Local Moser-Trudinger probe: maxima of the localized functional under refinement.

    python scripts/mt_probe.py --levels 5 6
"""
import argparse

import numpy as np

from liouville.bubbles import mt_probe
from liouville.functional import build_problem
from liouville.mesh import generate

REGIONS = {
    "boundary": lambda m: m.param[:, 1] <= 0.3,
    "interior": lambda m: np.abs(m.param[:, 1] - 0.5) <= 0.2,
}
# sharp constants: 4 pi at the boundary, 8 pi inside
SHARP = {"boundary": 4 * np.pi, "interior": 8 * np.pi}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, nargs="+", default=[5, 6])
    ap.add_argument("--factors", type=float, nargs="+", default=[0.9, 1.5])
    ap.add_argument("--eps", type=float, default=0.05)
    args = ap.parse_args()

    cache = {}

    def builder(level):
        if level not in cache:
            cache[level] = build_problem(generate("cylinder", level), 1.0)
        return cache[level]

    for name, region in REGIONS.items():
        for f in args.factors:
            rep = mt_probe(builder, region, f * SHARP[name], args.levels, eps=args.eps)
            maxima = "  ".join(f"r{l.level}: {l.maximum:9.3f}" for l in rep.levels)
            print(f"{name:>8} c = {f:g} x sharp: {maxima}  slope {rep.slope:8.3f}  -> {rep.growth}")


if __name__ == "__main__":
    main()
