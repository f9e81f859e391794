"""Train the reduced transformer on synthetic signal and zero-signal control data.

Prints the validation CCC after every epoch for both datasets and the scores
of the retained checkpoints, optionally with a seed ensemble.

    python scripts/synthetic_experiment.py
    python scripts/synthetic_experiment.py --seeds 1 2 3 --epochs 30 --out /tmp/synth
"""

import argparse
import logging
import tempfile
import time
from pathlib import Path

import torch

from vaest.ingestion import load_dataset
from vaest.network import predict_video
from vaest.objectives import evaluate
from vaest.postprocess import ensemble_average
from vaest.synthetic import SynthSpec, generate
from vaest.training import fit, preset


def run(root: Path, signal: bool, seeds, epochs: int, data_seed: int):
    name = "signal" if signal else "control"
    generate(SynthSpec(seed=data_seed, signal=signal), root / name)
    train = load_dataset(root / name, split="train")
    val = load_dataset(root / name, split="val")
    labels = [r.labels for r in val]
    config = preset("TRM-v1", d_model=32, encoder_layers=2, attention_heads=2, d_ff=64, epochs=epochs)
    members = []
    for seed in seeds:
        start = time.perf_counter()
        result = fit(train, val, config, seed=seed)
        for log in result.history:
            print(f"{name} seed {seed} epoch {log.epoch:2d} loss {log.train_loss:.4f} "
                  f"val {log.report.ccc_valence:+.4f}/{log.report.ccc_arousal:+.4f}")
        preds = [predict_video(r, result.model) for r in val]
        members.append(preds)
        report = evaluate(preds, labels)
        print(f"{name} seed {seed}: retained epoch {result.best.epoch}, "
              f"CCC {report.ccc_valence:.4f}/{report.ccc_arousal:.4f}, {time.perf_counter() - start:.1f}s")
    if len(members) > 1:
        ens = evaluate([ensemble_average(list(tracks)) for tracks in zip(*members)], labels)
        print(f"{name} ensemble of {len(members)}: CCC {ens.ccc_valence:.4f}/{ens.ccc_arousal:.4f}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[1])
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--data-seed", type=int, default=0)
    parser.add_argument("--out", type=Path, default=None, help="keep the generated datasets here")
    parser.add_argument("--skip-control", action="store_true")
    args = parser.parse_args()
    logging.basicConfig(level=logging.WARNING)
    torch.set_num_threads(1)

    with tempfile.TemporaryDirectory() as tmp:
        root = args.out or Path(tmp)
        run(root, True, args.seeds, args.epochs, args.data_seed)
        if not args.skip_control:
            run(root, False, args.seeds, args.epochs, args.data_seed)


if __name__ == "__main__":
    main()
