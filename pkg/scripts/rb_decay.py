"""Randomized benchmarking at the coherence limit and without decoherence;
compares the fitted error per Clifford with n_sx (Gamma1 + Gamma_phi) tau / 3."""

import argparse
import math
import warnings

from presto_emu.experiments.rb import DESK_LENGTHS, coherence_limit, rb_device, run_rb


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--realizations", type=int, default=20)
    ap.add_argument("--shots", type=int, default=200)
    ap.add_argument("--T1", type=float, default=34e-6)
    ap.add_argument("--T2", type=float, default=34e-6)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    warnings.simplefilter("ignore")
    for label, dev in (("coherence-limited", rb_device(args.T1, args.T2)), ("ideal", rb_device(math.inf, math.inf))):
        r = run_rb(DESK_LENGTHS, args.realizations, args.shots, dev, seed=args.seed, jobs=args.jobs)
        print(f"{label}: alpha {r.fit.alpha:.7f}  EPC {r.epc:.3e}  ({r.fit.message or 'B free'})")
        for m, (q25, med, q75) in zip(r.lengths, r.quartiles()):
            print(f"  m={m:5d}  median {med:.4f}  IQR [{q25:.4f}, {q75:.4f}]")
    pred = 2 * coherence_limit(args.T1, args.T2)
    print(f"predicted EPC (2 SX per Clifford): {pred:.3e}")


if __name__ == "__main__":
    main()
