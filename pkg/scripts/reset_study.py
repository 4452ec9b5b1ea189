"""Active reset to g and to e on the thermal qubit, with the noise tuned to
the target overlap error. Prints populations and effective temperatures."""

import argparse
import json

from presto_emu.experiments.readout import run_reset_study
from presto_emu.persist import _plain


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--shots", type=int, default=100_000)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    st = run_reset_study(shots=args.shots, seed=args.seed, tune_shots=args.shots, jobs=args.jobs)
    print(json.dumps(_plain(st.summary()), indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
