"""Check that synthetic labels are linearly recoverable from the visual features.

Fits one least-squares map from valid visual rows to (valence, arousal) over
the training videos and scores it on the validation videos. With the signal
this should sit far above the learned-model targets; with ``--control`` it
should sit near zero.

    python scripts/least_squares_oracle.py --noise 0.0
    python scripts/least_squares_oracle.py --control
"""

import argparse

import numpy as np

from vaest.objectives import ccc
from vaest.synthetic import SynthSpec, generate_videos


def design(videos):
    x = np.concatenate([v.visual[v.valid] for v in videos])
    y = np.concatenate([np.stack([v.valence, v.arousal], axis=1)[v.valid] for v in videos])
    return np.hstack([x, np.ones((len(x), 1))]), y


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--noise", type=float, default=SynthSpec.noise_sigma)
    parser.add_argument("--control", action="store_true", help="labels independent of the features")
    args = parser.parse_args()

    videos = generate_videos(SynthSpec(seed=args.seed, noise_sigma=args.noise, signal=not args.control))
    train = [v for v in videos if v.split == "train"]
    val = [v for v in videos if v.split == "val"]
    a_train, y_train = design(train)
    coef, *_ = np.linalg.lstsq(a_train, y_train, rcond=None)
    for name, (a, y) in (("train", (a_train, y_train)), ("val", design(val))):
        fit = a @ coef
        print(f"{name}: ccc_valence={ccc(fit[:, 0], y[:, 0]):.4f} ccc_arousal={ccc(fit[:, 1], y[:, 1]):.4f}")


if __name__ == "__main__":
    main()
