"""Compare the 2-D solver against the lattice, LSMC and European oracles at one point.

Usage: python scripts/oracle_triangle.py [config.ini]   (defaults to configs/case3.ini)
"""

import os
import sys

from stockloan.cli import load_config, run_oracles, solve_surface
from stockloan.properties import check_oracle_agreement

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def main(argv):
    path = argv[0] if argv else os.path.join(ROOT, "configs", "case3.ini")
    cfg = load_config(path)
    mc = cfg.mc
    surface = solve_surface(cfg)
    v = surface.at(mc.x0, mc.pi0, 0)
    print(f"vi2d      u({mc.x0:g}, {mc.pi0:g}, 0) = {v:.4f}")
    estimates = run_oracles(cfg)
    for e in estimates:
        extra = f" (refinement error {e.error_estimate:.2e})" if e.method == "lattice" else ""
        print(f"{e.method:9s} {e.estimate:.4f} +- {e.stderr:.4f}{extra}")
    rep = check_oracle_agreement(surface, estimates, (mc.x0, mc.pi0, 0.0))
    print(f"agreement: {'pass' if rep.passed else 'FAIL'} (worst {rep.worst:.4f}, band {rep.tol:.4f})")
    return 0 if rep.passed else 3


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
