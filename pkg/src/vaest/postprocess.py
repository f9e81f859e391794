"""Clipping, temporal smoothing and ensemble averaging of prediction tracks."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from vaest.core_types import LengthMismatchError, PredictionTrack, Stage, ValidationError
from vaest.ingestion import _read_table, _parse_matrix, write_matrix_csv


@dataclass(frozen=True)
class PostprocessConfig:
    clip_low: float = -1.0
    clip_high: float = 1.0
    w_valence: int = 20
    w_arousal: int = 50

    def __post_init__(self):
        if not self.clip_low < self.clip_high:
            raise ValidationError("clip_low must be below clip_high")
        if min(self.w_valence, self.w_arousal) < 1:
            raise ValidationError("smoothing windows must be >= 1")


def clip_track(track: PredictionTrack, low: float = -1.0, high: float = 1.0) -> PredictionTrack:
    return PredictionTrack(
        track.video_id,
        np.clip(track.valence, low, high),
        np.clip(track.arousal, low, high),
        Stage.CLIPPED,
    )


def smooth_values(x: np.ndarray, w: int) -> np.ndarray:
    """Centred moving average over ``j - w//2 .. j + w//2``, shrunk at the track ends."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValidationError("cannot smooth an empty track")
    half = int(w) // 2
    if half == 0:
        return x.copy()
    padded = np.concatenate([np.zeros(half), x, np.zeros(half)])
    ones = np.concatenate([np.zeros(half), np.ones(x.size), np.zeros(half)])
    sums = sliding_window_view(padded, 2 * half + 1).sum(axis=1)
    counts = sliding_window_view(ones, 2 * half + 1).sum(axis=1)
    # rounding can push a mean past its operands; the exact mean never leaves [min, max]
    return np.clip(sums / counts, x.min(), x.max())


def smooth_track(track: PredictionTrack, w_valence: int, w_arousal: int | None = None) -> PredictionTrack:
    """Smooth each channel with its own window (``w_arousal`` defaults to ``w_valence``)."""
    w_arousal = w_valence if w_arousal is None else w_arousal
    return PredictionTrack(
        track.video_id,
        smooth_values(track.valence, w_valence),
        smooth_values(track.arousal, w_arousal),
        Stage.SMOOTHED if track.stage is not Stage.RAW else Stage.RAW,
    )


def ensemble_average(tracks: Sequence[PredictionTrack]) -> PredictionTrack:
    """Per-frame mean over ensemble members."""
    if not tracks:
        raise ValidationError("ensemble needs at least one track")
    first = tracks[0]
    for t in tracks[1:]:
        if t.video_id != first.video_id:
            raise ValidationError(f"ensemble members disagree on video: {first.video_id} vs {t.video_id}")
        if t.n_frames != first.n_frames:
            raise LengthMismatchError(
                f"{first.video_id}: ensemble members have {first.n_frames} and {t.n_frames} frames"
            )
    stack = np.stack([t.as_matrix() for t in tracks])
    # summing in sorted order makes the result independent of member order
    mean = np.sort(stack, axis=0).sum(axis=0) / len(tracks)
    stage = Stage.ENSEMBLED
    if any(t.stage is Stage.RAW for t in tracks):
        stage = Stage.RAW
    return PredictionTrack.from_matrix(first.video_id, mean, stage)


def postprocess_track(track: PredictionTrack, config: PostprocessConfig = PostprocessConfig()) -> PredictionTrack:
    """Clip, then smooth; smoothing cannot leave the clipped range."""
    clipped = clip_track(track, config.clip_low, config.clip_high)
    return smooth_track(clipped, config.w_valence, config.w_arousal)


def ensemble_postprocessed(members: Sequence[PredictionTrack], config: PostprocessConfig = PostprocessConfig()):
    """Default order: per-member clip and smooth, average, final clip."""
    averaged = ensemble_average([postprocess_track(t, config) for t in members])
    final = clip_track(averaged, config.clip_low, config.clip_high)
    return replace(final, stage=Stage.ENSEMBLED)


# --- prediction CSVs ----------------------------------------------------------

def write_prediction_csv(path: Union[str, Path], track: PredictionTrack) -> None:
    write_matrix_csv(path, ["frame", "valence", "arousal"], track.as_matrix())


def read_prediction_csv(path: Union[str, Path], stage: Stage = Stage.RAW) -> PredictionTrack:
    path = Path(path)
    header, body = _read_table(path, ["frame", "valence", "arousal"])
    _, values = _parse_matrix(path, header, body)
    return PredictionTrack.from_matrix(path.stem, values, stage)


def write_prediction_dir(out_dir: Union[str, Path], tracks: Sequence[PredictionTrack]) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for t in tracks:
        write_prediction_csv(out_dir / f"{t.video_id}.csv", t)


def read_prediction_dir(in_dir: Union[str, Path]) -> list[PredictionTrack]:
    in_dir = Path(in_dir)
    if not in_dir.is_dir():
        raise ValidationError(f"{in_dir}: not a directory")
    return [read_prediction_csv(p) for p in sorted(in_dir.glob("*.csv"))]
