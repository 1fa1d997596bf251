#!/usr/bin/env python3
"""Admissible epsilon of the 1-DoF benchmark (A = 1, U = 2 q^2) against damping.

For this system the Schur condition alone gives ``eps < 4 d / (d^2 + 16)``
and the sandwich condition ``k1 > 0`` gives ``eps < 1/16``. The table shows
which one binds as the damping d grows.
"""
import argparse

import numpy as np

from phstab.certify import max_feasible_epsilon
from phstab.plvcc import CanonicalPHSystem
from phstab.region import Region


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--damping", type=float, nargs="+", default=[0.25, 0.5, 1, 2, 4, 10, 30, 100])
    args = ap.parse_args()
    box = Region.uniform(1, 1.0, 1.0)
    print(f"{'d':>8} {'schur-only':>12} {'closed form':>12} {'eps*':>10}  binding")
    for d in args.damping:
        csys = CanonicalPHSystem.quadratic(1.0, d, 4.0)
        schur = max_feasible_epsilon(csys, box, enforce_k1=False)
        eps = max_feasible_epsilon(csys, box)
        closed = 4 * d / (d * d + 16)
        binding = "k1 > 0" if np.isclose(eps, 1 / 16) else "Schur"
        print(f"{d:8.3g} {schur:12.6g} {closed:12.6g} {eps:10.6g}  {binding}")


if __name__ == "__main__":
    main()
