#!/usr/bin/env python3
"""Certify the PERA gain sets and show how the ordering depends on epsilon.

Prints, for each set, the certificate at its own admissible epsilon and at
the common (smallest) epsilon. Since the admissible epsilon shrinks roughly
like 1 / beta_max^2, the per-set rates favour the softer gains while the
common-epsilon rates favour larger K_I.
"""
import argparse

from phstab.pera import build_pera, pera_scenarios
from phstab.region import Region
from phstab.tune import predict_ordering


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--qr", type=float, default=0.3)
    ap.add_argument("--pr", type=float, default=0.5)
    ap.add_argument("--grid", type=int, default=7, help="grid points per axis (capped)")
    args = ap.parse_args()

    sys_ = build_pera()
    sets, _ = pera_scenarios()
    region = Region.uniform(3, args.qr, args.pr, grid_points_per_axis=args.grid)
    print(region.describe())
    for common in (False, True):
        order, report = predict_ordering(sys_, sets, region, common_epsilon=common)
        print(f"\n{'common' if common else 'per-set'} epsilon")
        for e in report.entries:
            if e.certified:
                print(f"  {e.label}: eps {e.epsilon:.4g}, mu {e.mu:.4g}, |A| {e.normA:.4g}, "
                      f"beta_max {e.beta_max:g}, rate_paper {e.rate_paper:.6g}, rate_sound {e.rate_sound:.4g}")
            else:
                print(f"  {e.label}: not certified ({e.reason})")
        print(f"  ordering: {' > '.join(order)}")


if __name__ == "__main__":
    main()
