"""Write boundary t-section CSVs for every regime config into one directory.

Usage: python scripts/emit_figures.py [out_dir] [--grid.nx 100 ...]
"""

import os
import sys

from stockloan.cli import run

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CASES = ("case0", "case1", "case2", "case3", "case4")


def main(argv):
    out = argv[0] if argv and not argv[0].startswith("--") else "figures"
    extra = argv[1:] if argv and not argv[0].startswith("--") else argv
    worst = 0
    for name in CASES:
        cfg = os.path.join(ROOT, "configs", f"{name}.ini")
        print(f"[{name}]")
        worst = max(worst, run(["emit-figure", "-c", cfg, "--out-dir", out, *extra]))
    return worst


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
