"""Sampled BMO_gamma estimates against a lower estimate of the l^p norm of
the discretised commutator [b, H_gamma], for the built-in symbols."""

import argparse

from awflab.experiments import bmo_lower_bound


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--beta", type=float, default=2.0)
    ap.add_argument("--p", type=float, default=2.0)
    ap.add_argument("--levels", type=int, default=5)
    ap.add_argument("--per-scale", type=int, default=64)
    ap.add_argument("--grid", type=int, default=48)
    args = ap.parse_args()
    r = bmo_lower_bound(args.beta, args.p, args.levels, args.per_scale, (args.grid, args.grid))
    print(f"{'symbol':>14} {'bmo est':>10} {'comm norm':>10} {'ratio':>8}")
    for name, row in r["rows"].items():
        print(f"{name:>14} {row['bmo_est']:10.4f} {row['comm_norm_est']:10.4f} {row['ratio']:8.4f}")
    print(f"{r['seconds']:.1f} s")


if __name__ == "__main__":
    main()
