"""Null distribution of validation CCC between unrelated synthetic trajectories.

A model trained on the zero-signal control can at best output something
trajectory-like that is independent of the validation labels. This script
draws pairs of independent trajectories for a validation set of the default
size, concatenates them the way ``evaluate`` does, and reports how often
|CCC| exceeds a threshold. It is how the default frequency band was chosen.

    python scripts/control_null_distribution.py --trials 2000
    python scripts/control_null_distribution.py --min-freq 0.03 --max-freq 0.25
"""

import argparse

import numpy as np

from vaest.objectives import ccc
from vaest.synthetic import SynthSpec, _Trajectory


def main():
    defaults = SynthSpec()
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--trials", type=int, default=2000)
    parser.add_argument("--videos", type=int, default=defaults.n_val_videos)
    parser.add_argument("--frames", type=int, default=defaults.frames)
    parser.add_argument("--fps", type=float, default=defaults.fps)
    parser.add_argument("--min-freq", type=float, default=defaults.min_freq_hz)
    parser.add_argument("--max-freq", type=float, default=defaults.max_freq_hz)
    parser.add_argument("--threshold", type=float, default=0.2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    t = np.arange(args.frames) / args.fps
    values = []
    for _ in range(args.trials):
        pred = np.concatenate([_Trajectory(rng, args.min_freq, args.max_freq)(t) for _ in range(args.videos)])
        label = np.concatenate([_Trajectory(rng, args.min_freq, args.max_freq)(t) for _ in range(args.videos)])
        values.extend(ccc(pred[:, c], label[:, c]) for c in range(2))
    values = np.abs(np.array(values))
    print(f"band {args.min_freq}-{args.max_freq} Hz, {args.videos} videos x {args.frames} frames, "
          f"{len(values)} channel draws")
    print(f"P(|CCC| > {args.threshold}) = {np.mean(values > args.threshold):.3f}")
    print(f"|CCC| quantiles: p50 {np.quantile(values, 0.5):.3f}  p95 {np.quantile(values, 0.95):.3f}  "
          f"p99 {np.quantile(values, 0.99):.3f}")


if __name__ == "__main__":
    main()
