"""Command line entry point: ``vaest {synth,train,predict,postprocess,ensemble,eval}``.

Every option can also come from a ``--config`` file of ``key = value`` lines
(``#`` starts a comment); command-line flags win. Recognised keys:

    data, out, preset, seeds, features, split, train_split, val_split,
    checkpoint, inputs, order,
    segment_length, stride, d_model, encoder_layers, attention_heads, d_ff,
    regression_hidden, dropout, learning_rate, batch_size, epochs,
    w_valence, w_arousal, clip_low, clip_high,
    n_videos, n_val_videos, frames, fps, d_visual, d_audio, hop_seconds,
    noise_sigma, invalid_fraction, synth_seed, signal

Failures exit non-zero with one ``error: <Kind>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import torch

from vaest.core_types import FeatureLayout, PipelineError, Stage, ValidationError
from vaest.ingestion import load_dataset
from vaest.network import predict_video
from vaest.objectives import EvalReport, evaluate
from vaest.postprocess import (
    PostprocessConfig,
    clip_track,
    ensemble_average,
    postprocess_track,
    read_prediction_dir,
    write_prediction_dir,
)
from vaest.synthetic import SynthSpec, generate
from vaest.training import fit, load_checkpoint, preset, save_checkpoint

log = logging.getLogger("vaest")

COMMANDS = ("synth", "train", "predict", "postprocess", "ensemble", "eval")

_MODEL_KEYS = {
    "segment_length": int, "stride": int, "d_model": int, "encoder_layers": int,
    "attention_heads": int, "d_ff": int, "dropout": float, "learning_rate": float,
    "batch_size": int, "epochs": int,
    "regression_hidden": lambda s: tuple(int(x) for x in s.split(",") if x.strip()),
}
_POST_KEYS = {"w_valence": int, "w_arousal": int, "clip_low": float, "clip_high": float}
_SYNTH_KEYS = {
    "n_videos": int, "n_val_videos": int, "frames": int, "fps": float, "d_visual": int,
    "d_audio": int, "hop_seconds": float, "noise_sigma": float, "invalid_fraction": float,
    "synth_seed": int, "signal": lambda s: s.strip().lower() in ("1", "true", "yes"),
}
_PLAIN_KEYS = {"data", "out", "preset", "seeds", "features", "split", "train_split",
               "val_split", "checkpoint", "inputs", "order"}


def _csv_list(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


@dataclass
class RunConfig:
    data: Optional[Path] = None
    out: Optional[Path] = None
    preset: str = "TRM-v1"
    seeds: tuple[int, ...] = (1,)
    features: Optional[tuple[str, ...]] = None
    split: Optional[str] = None
    train_split: str = "train"
    val_split: str = "val"
    checkpoint: Optional[Path] = None
    inputs: tuple[Path, ...] = ()
    order: str = "before"
    model_overrides: dict = field(default_factory=dict)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)

    @classmethod
    def from_mapping(cls, values: dict[str, str]) -> "RunConfig":
        known = _PLAIN_KEYS | _MODEL_KEYS.keys() | _POST_KEYS.keys() | _SYNTH_KEYS.keys()
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        try:
            model = {k: conv(values[k]) for k, conv in _MODEL_KEYS.items() if k in values}
            post = {k: conv(values[k]) for k, conv in _POST_KEYS.items() if k in values}
            synth = {k: conv(values[k]) for k, conv in _SYNTH_KEYS.items() if k in values}
            seeds = tuple(int(s) for s in _csv_list(values["seeds"])) if "seeds" in values else (1,)
        except ValueError as exc:
            raise ValidationError(f"bad config value: {exc}") from None
        if "synth_seed" in synth:
            synth["seed"] = synth.pop("synth_seed")
        order = values.get("order", "before")
        if order not in ("before", "after", "none"):
            raise ValidationError(f"order must be before, after or none; got {order!r}")
        path = lambda k: Path(values[k]) if values.get(k) else None  # noqa: E731
        return cls(
            data=path("data"),
            out=path("out"),
            preset=values.get("preset", "TRM-v1"),
            seeds=seeds,
            features=tuple(_csv_list(values["features"])) if values.get("features") else None,
            split=values.get("split") or None,
            train_split=values.get("train_split", "train"),
            val_split=values.get("val_split", "val"),
            checkpoint=path("checkpoint"),
            inputs=tuple(Path(p) for p in _csv_list(values.get("inputs", ""))),
            order=order,
            model_overrides=model,
            postprocess=PostprocessConfig(**post),
            synth=SynthSpec(**synth),
        )


def read_config_file(path: Path) -> dict[str, str]:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"error: UsageError: {message}\n")
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vaest", description="Multimodal valence/arousal estimation pipeline")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, help="key = value run configuration file")
    parser.add_argument("--preset", help="LSTM, TRM-v1 or TRM-v2")
    parser.add_argument("--seeds", help="comma-separated training seeds")
    parser.add_argument("--features", help="comma-separated feature-set names to fuse")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--data", help="dataset directory (manifest.csv, features/, labels/)")
    parser.add_argument("--split", help="restrict predict/eval to one manifest split")
    parser.add_argument("--checkpoint", help="checkpoint file for predict")
    parser.add_argument("--inputs", help="comma-separated prediction directories")
    parser.add_argument("--order", help="ensemble: postprocess members before, after averaging, or none")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="any config key, repeatable")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    for key in ("preset", "seeds", "features", "out", "data", "split", "checkpoint", "inputs", "order"):
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    return RunConfig.from_mapping(values)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("VA_NUM_WORKERS", "1")))
    except ValueError:
        raise ValidationError("VA_NUM_WORKERS must be an integer") from None


def _predict_all(records, model):
    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        return list(pool.map(lambda r: predict_video(r, model), records))


def _require(value, name):
    if value is None:
        raise ValidationError(f"missing required setting {name!r}")
    return value


def _write_report_rows(path: Path, rows: Sequence[tuple[str, EvalReport]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["run," + EvalReport.HEADER] + [f"{name},{rep.to_csv_row()}" for name, rep in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_synth(cfg: RunConfig) -> None:
    out = _require(cfg.out, "out")
    entries = generate(cfg.synth, out)
    print(f"wrote {len(entries)} videos to {out}")


def cmd_train(cfg: RunConfig) -> None:
    data, out = _require(cfg.data, "data"), _require(cfg.out, "out")
    model_cfg = preset(cfg.preset, **cfg.model_overrides)
    train = load_dataset(data, cfg.features, cfg.train_split)
    val = load_dataset(data, cfg.features, cfg.val_split)
    if not train:
        raise ValidationError(f"no videos in split {cfg.train_split!r}")
    layout = FeatureLayout.from_record(train[0], cfg.features)
    rows = []
    for seed in cfg.seeds:
        result = fit(train, val, model_cfg, seed, layout)
        run_dir = out / f"seed_{seed}"
        save_checkpoint(result.best, run_dir / "model.ckpt")
        if val:
            preds = _predict_all(val, result.model)
            write_prediction_dir(run_dir / "predictions", preds)
            report = evaluate(preds, [r.labels for r in val])
            report.write_csv(run_dir / "report.csv")
            rows.append((f"seed_{seed}", report))
            print(f"seed {seed}: {report.to_csv_row()}")
    if rows:
        mean = EvalReport.mean([r for _, r in rows])
        rows.append(("mean", mean))
        print(f"mean: {mean.to_csv_row()}")
    _write_report_rows(out / "reports.csv", rows)


def cmd_predict(cfg: RunConfig) -> None:
    data, out = _require(cfg.data, "data"), _require(cfg.out, "out")
    ckpt = load_checkpoint(_require(cfg.checkpoint, "checkpoint"))
    model = ckpt.build_model()
    records = load_dataset(data, model.layout.names, cfg.split)
    preds = _predict_all(records, model)
    write_prediction_dir(out, preds)
    print(f"wrote {len(preds)} raw prediction tracks to {out}")


def cmd_postprocess(cfg: RunConfig) -> None:
    if len(cfg.inputs) != 1:
        raise ValidationError("postprocess takes exactly one --inputs directory")
    out = _require(cfg.out, "out")
    tracks = [postprocess_track(t, cfg.postprocess) for t in read_prediction_dir(cfg.inputs[0])]
    write_prediction_dir(out, tracks)
    print(f"wrote {len(tracks)} smoothed tracks to {out}")


def _maybe_eval(cfg: RunConfig, preds, out: Optional[Path]) -> Optional[EvalReport]:
    if cfg.data is None:
        return None
    records = load_dataset(cfg.data, [], cfg.split) if cfg.split else load_dataset(cfg.data, [])
    ids = {p.video_id for p in preds}
    labels = [r.labels for r in records if r.labels is not None and (cfg.split or r.video_id in ids)]
    report = evaluate(preds, labels)
    if out is not None:
        report.write_csv(out / "report.csv")
    print(report.to_csv_row())
    return report


def cmd_ensemble(cfg: RunConfig) -> None:
    if len(cfg.inputs) < 1:
        raise ValidationError("ensemble needs --inputs with at least one prediction directory")
    out = _require(cfg.out, "out")
    members = [{t.video_id: t for t in read_prediction_dir(d)} for d in cfg.inputs]
    ids = set(members[0])
    for d, m in zip(cfg.inputs[1:], members[1:]):
        if set(m) != ids:
            diff = sorted(ids ^ set(m))
            raise ValidationError(f"{d}: video set differs from {cfg.inputs[0]} on {','.join(diff)}")
    pp = cfg.postprocess
    tracks = []
    for vid in sorted(ids):
        group = [m[vid] for m in members]
        if cfg.order == "before":
            group = [postprocess_track(t, pp) for t in group]
        merged = ensemble_average(group)
        if cfg.order == "after":
            merged = postprocess_track(merged, pp)
        if cfg.order != "none":
            merged = replace(clip_track(merged, pp.clip_low, pp.clip_high), stage=Stage.ENSEMBLED)
        tracks.append(merged)
    write_prediction_dir(out, tracks)
    print(f"wrote {len(tracks)} ensembled tracks to {out}")
    _maybe_eval(cfg, tracks, out)


def cmd_eval(cfg: RunConfig) -> None:
    if len(cfg.inputs) != 1:
        raise ValidationError("eval takes exactly one --inputs prediction directory")
    _require(cfg.data, "data")
    preds = read_prediction_dir(cfg.inputs[0])
    records = load_dataset(cfg.data, [], cfg.split)
    report = evaluate(preds, [r.labels for r in records if r.labels is not None])
    if cfg.out is not None:
        report.write_csv(cfg.out / "report.csv")
    print(EvalReport.HEADER)
    print(report.to_csv_row())


HANDLERS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "postprocess": cmd_postprocess,
    "ensemble": cmd_ensemble,
    "eval": cmd_eval,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        # kernel results depend on the intra-op thread count; parallelism is per video instead
        torch.set_num_threads(1)
        HANDLERS[args.command](resolve_config(args))
    except (PipelineError, OSError) as exc:
        msg = " ".join(str(exc).split())
        sys.stderr.write(f"error: {type(exc).__name__}: {msg}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
