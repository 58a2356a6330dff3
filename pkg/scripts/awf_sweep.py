"""Two-stage factorisation sweep over beta and A1; prints one line per run
and writes every record plus the chain and size summaries to JSON."""

import argparse
import json

from awflab.experiments import awf_record, chain_summary, size_constants


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--betas", default="1.5,2,3")
    ap.add_argument("--a1", default="50,100,200,400")
    ap.add_argument("--out", default="awf_sweep.json")
    args = ap.parse_args()
    betas = [float(b) for b in args.betas.split(",")]
    A1s = [float(a) for a in args.a1.split(",")]
    recs = []
    for be in betas:
        for A1 in A1s:
            r = awf_record(be, A1)
            recs.append(r)
            print(f"beta={be:g} A1={A1:g} eps_P={r['eps_P']:.4e} chain_C={r['chain_C']:.3f} "
                  f"C_h_Q={r['C_h_Q']:.3f} C_h_W1={r['C_h_W1']:.2f} C_z={r['C_z_scaled']:.1f} "
                  f"({r['seconds']:.0f} s)", flush=True)
    summary = {"records": recs, "chain": chain_summary(recs, A1s, betas),
               "sizes": size_constants(recs)}
    with open(args.out, "w") as fh:
        json.dump(summary, fh, indent=2, default=float)
    for k, v in {**summary["chain"]["checks"], **summary["sizes"]["checks"]}.items():
        print(f"{'PASS' if v else 'FAIL'} {k}")


if __name__ == "__main__":
    main()
