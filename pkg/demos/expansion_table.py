"""Extract the field spaces of the free scalar and compare them with Wick monomials.

Usage: python3 demos/expansion_table.py [config] [gamma_max]
"""

import sys

from pointfield.cli import expansion_rows
from pointfield.models import CFG_A, ModelConfig
from pointfield.phasespace import assemble, extract, scaling_analysis


def main(argv):
    cfg = ModelConfig.load(argv[0]) if argv else CFG_A
    gamma_max = float(argv[1]) if len(argv) > 1 else cfg.gamma_max
    tensor = assemble(cfg, cache_dir=".pointfield-cache")

    report = scaling_analysis(tensor)
    print("leading scaling exponents:", " ".join(f"{t:.3f}" for t in report.exponents[:12]))
    for g in range(int(gamma_max) + 1):
        n = extract(tensor, g)[0]
        print(f"gamma={g}  N={n}")

    print(f"\n{'mu':<28}{'theta':>7}{'order':>7}{'angle[deg]':>12}")
    for mu, th, order, _, _, angle in expansion_rows(cfg, gamma_max, tensor):
        print(f"{mu:<28}{th:>7.1f}{order:>7d}{angle:>12.2e}")


if __name__ == "__main__":
    main(sys.argv[1:])
