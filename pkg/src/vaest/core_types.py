"""Domain types shared across the pipeline.

Frame numbers are 1-based wherever segment arithmetic is involved and 0-based
in every file format. The helpers ``to_file_index``/``from_file_index`` are
the only place the two meet.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class PipelineError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PipelineError, ValueError):
    pass


class LengthMismatchError(ValidationError):
    pass


class LabelRangeError(ValidationError):
    pass


class ParseError(PipelineError, ValueError):
    pass


class UnusableVideoError(PipelineError, ValueError):
    pass


class NumericFailureError(PipelineError, ArithmeticError):
    pass


class DegenerateBatchError(PipelineError, ValueError):
    pass


class CheckpointError(PipelineError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class Modality(str, enum.Enum):
    VISUAL = "visual"
    AUDIO = "audio"


class Stage(str, enum.Enum):
    RAW = "raw"
    CLIPPED = "clipped"
    SMOOTHED = "smoothed"
    ENSEMBLED = "ensembled"


class EncoderKind(str, enum.Enum):
    LSTM = "lstm"
    TRM = "trm"


def to_file_index(frame: int) -> int:
    return frame - 1


def from_file_index(index: int) -> int:
    return index + 1


@dataclass(frozen=True)
class FrameTrack:
    video_id: str
    fps: float
    n_frames: int
    valid: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "valid", np.asarray(self.valid, dtype=bool))

    @classmethod
    def all_valid(cls, video_id: str, fps: float, n_frames: int) -> "FrameTrack":
        return cls(video_id, fps, n_frames, np.ones(n_frames, dtype=bool))

    def check(self) -> None:
        if self.n_frames < 1:
            raise ValidationError(f"{self.video_id}: n_frames must be >= 1, got {self.n_frames}")
        if not self.fps > 0:
            raise ValidationError(f"{self.video_id}: fps must be positive, got {self.fps}")
        if self.valid.shape != (self.n_frames,):
            raise LengthMismatchError(
                f"{self.video_id}: validity flags expected {self.n_frames} entries, got {self.valid.shape[0]}"
            )


@dataclass(frozen=True)
class FeatureTrack:
    video_id: str
    modality: Modality
    name: str
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "modality", Modality(self.modality))
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    def check(self) -> None:
        if self.values.ndim != 2 or self.dim < 1:
            raise ValidationError(f"{self.video_id}/{self.name}: feature matrix must be n x d with d >= 1")
        if not np.all(np.isfinite(self.values)):
            row = int(np.argwhere(~np.isfinite(self.values))[0, 0])
            raise ValidationError(f"{self.video_id}/{self.name}: non-finite value in frame index {row}")


@dataclass(frozen=True)
class LabelTrack:
    video_id: str
    valence: np.ndarray
    arousal: np.ndarray
    label_valid: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "valence", np.asarray(self.valence, dtype=np.float64))
        object.__setattr__(self, "arousal", np.asarray(self.arousal, dtype=np.float64))
        object.__setattr__(self, "label_valid", np.asarray(self.label_valid, dtype=bool))

    @property
    def n_frames(self) -> int:
        return self.valence.shape[0]

    def as_matrix(self) -> np.ndarray:
        return np.stack([self.valence, self.arousal], axis=1)

    def check(self) -> None:
        n = self.n_frames
        for name, arr in (("arousal", self.arousal), ("label_valid", self.label_valid)):
            if arr.shape != (n,):
                raise LengthMismatchError(
                    f"{self.video_id}: labels.{name} expected {n} entries, got {arr.shape[0]}"
                )
        v = self.label_valid
        for name, arr in (("valence", self.valence), ("arousal", self.arousal)):
            vals = arr[v]
            bad = ~np.isfinite(vals) | (np.abs(vals) > 1.0)
            if bad.any():
                idx = int(np.flatnonzero(v)[np.argmax(bad)])
                raise LabelRangeError(
                    f"{self.video_id}: {name}={arr[idx]} at frame index {idx} is flagged valid but outside [-1, 1]"
                )


@dataclass(frozen=True)
class Segment:
    """A window of at most ``length`` real frames; frames are 1-based and inclusive."""

    video_id: str
    index: int
    start_frame: int
    end_frame: int
    length: int

    def __post_init__(self):
        if self.index < 1:
            raise ValidationError("segment index is 1-based")
        if not 1 <= self.start_frame <= self.end_frame:
            raise ValidationError(f"bad span [{self.start_frame}, {self.end_frame}]")
        if self.n_real > self.length:
            raise ValidationError(f"span of {self.n_real} frames exceeds segment length {self.length}")

    @property
    def n_real(self) -> int:
        return self.end_frame - self.start_frame + 1

    @property
    def mask(self) -> np.ndarray:
        mask = np.zeros(self.length, dtype=bool)
        mask[: self.n_real] = True
        return mask

    def file_slice(self) -> slice:
        return slice(to_file_index(self.start_frame), to_file_index(self.end_frame) + 1)


@dataclass(frozen=True)
class PredictionTrack:
    video_id: str
    valence: np.ndarray
    arousal: np.ndarray
    stage: Stage = Stage.RAW

    def __post_init__(self):
        object.__setattr__(self, "valence", np.asarray(self.valence, dtype=np.float64))
        object.__setattr__(self, "arousal", np.asarray(self.arousal, dtype=np.float64))
        object.__setattr__(self, "stage", Stage(self.stage))
        if self.valence.shape != self.arousal.shape or self.valence.ndim != 1:
            raise LengthMismatchError(
                f"{self.video_id}: valence {self.valence.shape} and arousal {self.arousal.shape} differ"
            )
        if self.stage is not Stage.RAW:
            for arr in (self.valence, self.arousal):
                if arr.size and (arr.min() < -1.0 or arr.max() > 1.0):
                    raise ValidationError(f"{self.video_id}: {self.stage.value} track leaves [-1, 1]")

    @property
    def n_frames(self) -> int:
        return self.valence.shape[0]

    def as_matrix(self) -> np.ndarray:
        return np.stack([self.valence, self.arousal], axis=1)

    @classmethod
    def from_matrix(cls, video_id: str, values: np.ndarray, stage: Stage = Stage.RAW) -> "PredictionTrack":
        values = np.asarray(values, dtype=np.float64)
        return cls(video_id, values[:, 0], values[:, 1], stage)


@dataclass(frozen=True)
class ModelConfig:
    encoder_kind: EncoderKind
    d_model: int
    segment_length: int
    stride: int
    encoder_layers: int = 1
    attention_heads: int = 1
    d_ff: int = 0
    regression_hidden: tuple[int, ...] = ()
    dropout: float = 0.3
    learning_rate: float = 3e-4
    batch_size: int = 16
    epochs: int = 30
    smoothing: tuple[int, int] = (20, 50)

    def __post_init__(self):
        object.__setattr__(self, "encoder_kind", EncoderKind(self.encoder_kind))
        object.__setattr__(self, "regression_hidden", tuple(int(h) for h in self.regression_hidden))
        object.__setattr__(self, "smoothing", tuple(int(w) for w in self.smoothing))
        if min(self.d_model, self.segment_length, self.stride, self.encoder_layers, self.batch_size) < 1:
            raise ValidationError("d_model, segment_length, stride, encoder_layers and batch_size must be >= 1")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not self.learning_rate >= 0.0:
            raise ValidationError("learning_rate must be non-negative")
        if self.encoder_kind is EncoderKind.LSTM and self.stride != self.segment_length:
            raise ValidationError(
                f"lstm segments may not overlap: stride {self.stride} != segment_length {self.segment_length}"
            )
        if self.encoder_kind is EncoderKind.TRM:
            if self.stride > self.segment_length:
                raise ValidationError(f"stride {self.stride} exceeds segment_length {self.segment_length}")
            if self.d_ff < 1 or self.attention_heads < 1 or self.d_model % self.attention_heads:
                raise ValidationError("trm needs d_ff >= 1 and d_model divisible by attention_heads")
        if min(self.smoothing) < 1 or len(self.smoothing) != 2:
            raise ValidationError("smoothing windows must be two integers >= 1")


@dataclass(frozen=True)
class VideoRecord:
    """Everything known about one video: frame validity, feature tracks, optional labels."""

    frames: FrameTrack
    features: tuple[FeatureTrack, ...]
    labels: Optional[LabelTrack] = None

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))

    @property
    def video_id(self) -> str:
        return self.frames.video_id

    @property
    def n_frames(self) -> int:
        return self.frames.n_frames

    def feature(self, name: str) -> FeatureTrack:
        for track in self.features:
            if track.name == name:
                return track
        raise ValidationError(f"{self.video_id}: no feature track named {name!r}")


def validate_record(
    frames: FrameTrack,
    feats: Sequence[FeatureTrack],
    labels: Optional[LabelTrack] = None,
) -> VideoRecord:
    """Check every cross-track invariant and bundle the tracks into a record.

    Raises a ``ValidationError`` subclass naming the offending track on the
    first violation. Validating an already validated record's tracks returns
    an equal record.
    """
    frames.check()
    n, vid = frames.n_frames, frames.video_id
    names = set()
    for track in feats:
        if track.video_id != vid:
            raise ValidationError(f"feature track {track.name!r} belongs to {track.video_id!r}, not {vid!r}")
        if track.name in names:
            raise ValidationError(f"{vid}: duplicate feature track {track.name!r}")
        names.add(track.name)
        track.check()
        if track.n_frames != n:
            raise LengthMismatchError(
                f"{vid}: feature track {track.name!r} has {track.n_frames} rows, expected {n}"
            )
    if labels is not None:
        if labels.video_id != vid:
            raise ValidationError(f"labels belong to {labels.video_id!r}, not {vid!r}")
        if labels.n_frames != n:
            raise LengthMismatchError(f"{vid}: label track has {labels.n_frames} rows, expected {n}")
        labels.check()
    return VideoRecord(frames, tuple(feats), labels)


@dataclass(frozen=True)
class FeatureLayout:
    """Which feature tracks feed the fusion layer, in concatenation order."""

    visual: tuple[tuple[str, int], ...] = ()
    audio: tuple[tuple[str, int], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "visual", tuple((str(n), int(d)) for n, d in self.visual))
        object.__setattr__(self, "audio", tuple((str(n), int(d)) for n, d in self.audio))
        if not self.visual and not self.audio:
            raise ValidationError("feature layout selects no tracks")

    @property
    def d_visual(self) -> int:
        return sum(d for _, d in self.visual)

    @property
    def d_audio(self) -> int:
        return sum(d for _, d in self.audio)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.visual] + [n for n, _ in self.audio]

    @classmethod
    def from_record(cls, record: VideoRecord, names: Optional[Sequence[str]] = None) -> "FeatureLayout":
        tracks = record.features if names is None else [record.feature(n) for n in names]
        return cls(
            visual=tuple((t.name, t.dim) for t in tracks if t.modality is Modality.VISUAL),
            audio=tuple((t.name, t.dim) for t in tracks if t.modality is Modality.AUDIO),
        )
