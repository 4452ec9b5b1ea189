"""Monte-Carlo wrong-assignment rate of the fixed-point matched filter versus
[1 - erf(x)]/2 for a few values of x."""

import argparse
import math

import numpy as np

from presto_emu.acquisition import MatchUnit, signal_codes, template_norm
from presto_emu.calibration import error_from_x
from presto_emu.device import TWO_PI, noise_for_overlap
from presto_emu.siggen import Template


def wrong_rate(x, shots, rng, length=16, chunk=250_000):
    tau_g = Template(0.1 * np.exp(1j * rng.uniform(0, TWO_PI, length)))
    tau_e = Template(0.1 * np.exp(1j * rng.uniform(0, TWO_PI, length)))
    sigma = noise_for_overlap(tau_g.samples, tau_e.samples, float(error_from_x(x)))
    w = MatchUnit(0, tau_e).weights - MatchUnit(1, tau_g).weights
    twice_theta = template_norm(tau_e) - template_norm(tau_g)
    k = 0
    for start in range(0, shots, chunk):
        n = min(chunk, shots - start)
        noise = sigma * (rng.standard_normal((n, length)) + 1j * rng.standard_normal((n, length)))
        codes = signal_codes((tau_g.samples + noise).ravel()).reshape(n, 2 * length)
        k += int(np.sum(2 * (codes @ w) - twice_theta >= 0))
    return k / shots


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--x", type=float, nargs="+", default=[1.5, 2.0, 2.5, 3.0])
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    for x in args.x:
        eps = float(error_from_x(x))
        shots = int(min(max(200 / eps, 100_000), 5_000_000))
        p = wrong_rate(x, shots, rng)
        sd = math.sqrt(eps * (1 - eps) / shots)
        print(f"x={x:.2f}  predicted {eps:.3e}  measured {p:.3e}  ({(p - eps) / sd:+.2f} sd, {shots} shots)")


if __name__ == "__main__":
    main()
