"""Feature and label CSV ingestion plus audio-to-frame alignment.

Dataset directory layout used by ``load_dataset`` and written by the synthetic
generator::

    manifest.csv            video_id,fps,n_frames,split
    feature_sets.csv        name,modality,hop_seconds   (hop empty for frame-rate tracks)
    features/<name>/<video_id>.csv
    labels/<video_id>.csv
    validity/<video_id>.csv (optional)
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from vaest.core_types import (
    FeatureTrack,
    FrameTrack,
    LabelTrack,
    Modality,
    ParseError,
    ValidationError,
    VideoRecord,
    validate_record,
)

DEFAULT_HOP_SECONDS = 0.02


@dataclass(frozen=True)
class AudioFeatureFile:
    """Audio features sampled on their own clock: row k sits at ``k * hop_seconds``."""

    values: np.ndarray
    hop_seconds: float = DEFAULT_HOP_SECONDS
    name: str = ""
    video_id: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "values", values)
        if not self.hop_seconds > 0:
            raise ValidationError(f"hop_seconds must be positive, got {self.hop_seconds}")
        if values.shape[0] < 1:
            raise ValidationError("audio feature file has no rows")

    @property
    def timestamps(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) * self.hop_seconds


def _read_table(path: Union[str, Path], expected: Optional[Sequence[str]] = None):
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise ParseError(f"{path}: file not found") from None
    if not rows:
        raise ParseError(f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    if expected is not None and header != list(expected):
        raise ParseError(f"{path}: expected header {','.join(expected)}, got {','.join(header)}")
    body = [r for r in rows[1:] if r]
    return header, body


def _parse_matrix(path, header, body) -> tuple[np.ndarray, np.ndarray]:
    """Returns (frame indices, values) with row/column-located parse errors."""
    width = len(header)
    frames = np.empty(len(body), dtype=np.int64)
    values = np.empty((len(body), width - 1), dtype=np.float64)
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != width:
            raise ParseError(f"{path}: line {line} has {len(row)} columns, header has {width}")
        try:
            frames[i] = int(row[0])
        except ValueError:
            raise ParseError(f"{path}: line {line}, column {header[0]!r}: bad frame index {row[0]!r}") from None
        for j in range(1, width):
            try:
                x = float(row[j])
            except ValueError:
                raise ParseError(f"{path}: line {line}, column {header[j]!r}: not a number {row[j]!r}") from None
            if not math.isfinite(x):
                raise ParseError(f"{path}: line {line}, column {header[j]!r}: non-finite value {row[j]!r}")
            values[i, j - 1] = x
    if len(body) and not np.array_equal(frames, np.arange(len(body))):
        bad = int(np.argmax(frames != np.arange(len(body))))
        raise ParseError(f"{path}: line {bad + 2}: frame indices must run 0,1,2,... got {frames[bad]}")
    return frames, values


def load_feature_csv(
    path: Union[str, Path],
    *,
    video_id: Optional[str] = None,
    name: Optional[str] = None,
    modality: Union[Modality, str] = Modality.VISUAL,
    hop_seconds: Optional[float] = None,
) -> Union[FeatureTrack, AudioFeatureFile]:
    """Parse a ``frame,f0,...,f{d-1}`` file.

    Returns an ``AudioFeatureFile`` when ``hop_seconds`` is given (the frame
    column then counts hops), otherwise a frame-rate ``FeatureTrack``.
    """
    path = Path(path)
    header, body = _read_table(path)
    if len(header) < 2 or header[0] != "frame":
        raise ParseError(f"{path}: header must be frame,f0,...; got {','.join(header)}")
    expected = [f"f{k}" for k in range(len(header) - 1)]
    if header[1:] != expected:
        raise ParseError(f"{path}: feature columns must be named f0..f{len(header) - 2}, got {','.join(header[1:])}")
    if not body:
        raise ParseError(f"{path}: no frames")
    _, values = _parse_matrix(path, header, body)
    video_id = video_id if video_id is not None else path.stem
    name = name if name is not None else path.parent.name
    if hop_seconds is not None:
        return AudioFeatureFile(values, hop_seconds, name=name, video_id=video_id)
    return FeatureTrack(video_id, modality, name, values)


def load_labels_csv(path: Union[str, Path], *, video_id: Optional[str] = None) -> LabelTrack:
    """Parse ``frame,valence,arousal``; values outside [-1, 1] (e.g. -5) become invalid frames."""
    path = Path(path)
    header, body = _read_table(path)
    if header != ["frame", "valence", "arousal"]:
        raise ParseError(f"{path}: label header must be frame,valence,arousal; got {','.join(header)}")
    if not body:
        raise ParseError(f"{path}: no frames")
    _, values = _parse_matrix(path, header, body)
    valid = np.all(np.abs(values) <= 1.0, axis=1)
    return LabelTrack(video_id if video_id is not None else path.stem, values[:, 0], values[:, 1], valid)


def load_validity_csv(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    header, body = _read_table(path, ["frame", "valid"])
    if not body:
        raise ParseError(f"{path}: no frames")
    _, values = _parse_matrix(path, header, body)
    flags = values[:, 0]
    if not np.all((flags == 0) | (flags == 1)):
        raise ParseError(f"{path}: line {int(np.argmax((flags != 0) & (flags != 1))) + 2}: valid must be 0 or 1")
    return flags.astype(bool)


def align_audio_to_frames(
    audio: AudioFeatureFile,
    fps: float,
    n: int,
    *,
    video_id: Optional[str] = None,
    name: Optional[str] = None,
) -> FeatureTrack:
    """Resample hop-clocked audio features onto video frames.

    Frame j (1-based) sits at ``(j - 1) / fps``; it receives the mean of the
    two audio rows whose timestamps are nearest, the earlier row winning exact
    ties.
    """
    values = audio.values
    m = values.shape[0]
    if m < 2:
        raise ValidationError(f"audio alignment needs at least 2 rows, got {m}")
    if not fps > 0 or n < 1:
        raise ValidationError(f"need fps > 0 and n >= 1, got fps={fps}, n={n}")
    hop = audio.hop_seconds
    # positions in hop units; rounding absorbs representation error so that
    # exact ties (e.g. fps=50 on a 20 ms hop) are recognised as ties
    pos = np.arange(n) / (fps * hop)
    centre = np.clip(np.floor(pos).astype(np.int64), 0, m - 1)
    cand = centre[:, None] + np.arange(-1, 3)[None, :]
    in_range = (cand >= 0) & (cand < m)
    dist = np.round(np.abs(cand - pos[:, None]), 9)
    dist = np.where(in_range, dist, np.inf)
    # lexsort: primary distance, secondary timestamp (earlier first)
    order = np.lexsort((cand, dist), axis=1)[:, :2]
    picks = np.take_along_axis(cand, order, axis=1)
    out = 0.5 * (values[picks[:, 0]] + values[picks[:, 1]])
    return FeatureTrack(
        video_id if video_id is not None else audio.video_id,
        Modality.AUDIO,
        name if name is not None else audio.name,
        out,
    )


# --- writers ---------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def write_matrix_csv(path: Union[str, Path], header: Sequence[str], values: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.asarray(values)
    lines = [",".join(header)]
    for i, row in enumerate(values):
        lines.append(",".join([str(i)] + [_fmt(x) for x in row]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_feature_csv(path, values: np.ndarray) -> None:
    values = np.asarray(values)
    write_matrix_csv(path, ["frame"] + [f"f{k}" for k in range(values.shape[1])], values)


def write_labels_csv(path, valence, arousal) -> None:
    write_matrix_csv(path, ["frame", "valence", "arousal"], np.stack([valence, arousal], axis=1))


def write_validity_csv(path, valid) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["frame,valid"] + [f"{i},{int(v)}" for i, v in enumerate(valid)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- dataset directories ----------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    fps: float
    n_frames: int
    split: str = "train"


@dataclass(frozen=True)
class FeatureSetInfo:
    name: str
    modality: Modality
    hop_seconds: Optional[float] = None


def read_manifest(root: Union[str, Path]) -> list[ManifestEntry]:
    path = Path(root) / "manifest.csv"
    header, body = _read_table(path, ["video_id", "fps", "n_frames", "split"])
    entries = []
    for i, row in enumerate(body):
        try:
            entries.append(ManifestEntry(row[0], float(row[1]), int(row[2]), row[3]))
        except (ValueError, IndexError):
            raise ParseError(f"{path}: line {i + 2}: malformed manifest row {row!r}") from None
    return entries


def write_manifest(root: Union[str, Path], entries: Iterable[ManifestEntry]) -> None:
    path = Path(root) / "manifest.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["video_id,fps,n_frames,split"]
    lines += [f"{e.video_id},{_fmt(e.fps)},{e.n_frames},{e.split}" for e in entries]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_feature_sets(root: Union[str, Path]) -> list[FeatureSetInfo]:
    path = Path(root) / "feature_sets.csv"
    _, body = _read_table(path, ["name", "modality", "hop_seconds"])
    out = []
    for i, row in enumerate(body):
        try:
            hop = float(row[2]) if row[2].strip() else None
            out.append(FeatureSetInfo(row[0], Modality(row[1]), hop))
        except (ValueError, IndexError):
            raise ParseError(f"{path}: line {i + 2}: malformed feature-set row {row!r}") from None
    return out


def write_feature_sets(root: Union[str, Path], infos: Iterable[FeatureSetInfo]) -> None:
    path = Path(root) / "feature_sets.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["name,modality,hop_seconds"]
    lines += [f"{f.name},{f.modality.value},{'' if f.hop_seconds is None else _fmt(f.hop_seconds)}" for f in infos]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_video(root: Union[str, Path], entry: ManifestEntry, feature_sets: Sequence[FeatureSetInfo]) -> VideoRecord:
    root = Path(root)
    vid, n = entry.video_id, entry.n_frames
    tracks = []
    for fs in feature_sets:
        path = root / "features" / fs.name / f"{vid}.csv"
        loaded = load_feature_csv(path, video_id=vid, name=fs.name, modality=fs.modality, hop_seconds=fs.hop_seconds)
        if isinstance(loaded, AudioFeatureFile):
            loaded = align_audio_to_frames(loaded, entry.fps, n, video_id=vid, name=fs.name)
        tracks.append(loaded)
    validity_path = root / "validity" / f"{vid}.csv"
    valid = load_validity_csv(validity_path) if validity_path.exists() else np.ones(n, dtype=bool)
    frames = FrameTrack(vid, entry.fps, n, valid)
    label_path = root / "labels" / f"{vid}.csv"
    labels = load_labels_csv(label_path, video_id=vid) if label_path.exists() else None
    return validate_record(frames, tracks, labels)


def load_dataset(
    root: Union[str, Path],
    feature_names: Optional[Sequence[str]] = None,
    split: Optional[str] = None,
) -> list[VideoRecord]:
    """Load every manifest video (optionally one split) with the named feature tracks."""
    root = Path(root)
    infos = read_feature_sets(root)
    if feature_names is not None:
        known = {f.name: f for f in infos}
        missing = [n for n in feature_names if n not in known]
        if missing:
            raise ValidationError(f"unknown feature sets: {','.join(missing)}")
        infos = [known[n] for n in feature_names]
    entries = [e for e in read_manifest(root) if split is None or e.split == split]
    return [load_video(root, e, infos) for e in entries]
