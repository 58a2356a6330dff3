"""sup_xi K(xi) per scale for a builtin curve, next to eps(l) and the
largest ratio of K to the case-split envelope."""

import argparse

from awflab.experiments import multiplier_decay


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--curve", default="circle-arc")
    ap.add_argument("--kmin", type=int, default=3)
    ap.add_argument("--kmax", type=int, default=8)
    ap.add_argument("--per-decade", type=int, default=6)
    ap.add_argument("--angles", type=int, default=16)
    args = ap.parse_args()
    scales = [2.0**-k for k in range(args.kmin, args.kmax + 1)]
    r = multiplier_decay(args.curve, scales, per_decade=args.per_decade, angles=args.angles)
    print(f"{'ell':>10} {'sup K':>12} {'eps':>12} {'K/envelope':>11} {'n_xi':>6}")
    for row in r["rows"]:
        print(f"{row['ell']:10.6f} {row['sup_K']:12.5e} {row['eps']:12.5e} "
              f"{row['max_envelope_ratio']:11.3f} {row['n_xi']:6d}")
    for k, v in r["checks"].items():
        print(f"{'PASS' if v else 'FAIL'} {k}")
    print(f"{r['seconds']:.1f} s")


if __name__ == "__main__":
    main()
