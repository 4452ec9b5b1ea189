"""Coupler-driven exchange scan: resonant swap time, fit residual and the
chevron contrast against g_eff^2 / (g_eff^2 + delta^2)."""

import argparse
import warnings

import numpy as np

from presto_emu.experiments.iswap import run_iswap_scan


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--shots", type=int, default=512)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    warnings.simplefilter("ignore")
    scan = run_iswap_scan(shots=args.shots, seed=args.seed, jobs=args.jobs)
    cut = scan.resonant()
    print(f"swap time {cut.swap_time * 1e9:.1f} ns, rms fit residual {cut.residual:.4f}")
    for d, c, p in zip(scan.detunings, scan.contrasts(), scan.predicted_contrasts()):
        print(f"  detuning {d / 1e6:+5.2f} MHz  contrast {c:.3f}  predicted {p:.3f}")
    k = int(np.argmin(np.abs(np.asarray(scan.durations) - 300e-9)))
    print(f"P(target) at 300 ns: {scan.p_target[int(np.argmin(np.abs(scan.detunings))), k]:.3f}")


if __name__ == "__main__":
    main()
