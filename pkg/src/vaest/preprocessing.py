"""Invalid-frame filling and segmentation of videos into fixed-length windows."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from vaest.core_types import FeatureTrack, Segment, UnusableVideoError, ValidationError


@dataclass(frozen=True)
class SegmentationPlan:
    n_frames: int
    segment_length: int
    stride: int
    segments: tuple[Segment, ...]

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def coverage(self) -> np.ndarray:
        """How many segments cover each frame (0-based array over frames 1..n)."""
        counts = np.zeros(self.n_frames, dtype=np.int64)
        for seg in self.segments:
            counts[seg.file_slice()] += 1
        return counts


def nearest_valid_source(valid: np.ndarray) -> np.ndarray:
    """0-based index of the valid frame each frame should copy (itself if valid).

    Equidistant ties go to the preceding valid frame.
    """
    valid = np.asarray(valid, dtype=bool)
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        raise UnusableVideoError("no valid frame to fill from")
    frames = np.arange(valid.size)
    right = np.searchsorted(idx, frames, side="left")
    left = right - 1
    right_c = np.minimum(right, idx.size - 1)
    left_c = np.maximum(left, 0)
    d_left = np.where(left >= 0, frames - idx[left_c], np.iinfo(np.int64).max)
    d_right = np.where(right < idx.size, idx[right_c] - frames, np.iinfo(np.int64).max)
    return np.where(d_left <= d_right, idx[left_c], idx[right_c])


def fill_invalid_frames(track: FeatureTrack, valid) -> FeatureTrack:
    """Replace each invalid frame's row with the nearest valid frame's row."""
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != (track.n_frames,):
        raise ValidationError(
            f"{track.video_id}/{track.name}: {valid.size} validity flags for {track.n_frames} frames"
        )
    if valid.all():
        return track
    try:
        source = nearest_valid_source(valid)
    except UnusableVideoError:
        raise UnusableVideoError(f"{track.video_id}: every frame is invalid") from None
    return replace(track, values=track.values[source])


def plan_segments(n: int, l: int, p: int, video_id: str = "") -> SegmentationPlan:
    """Cut frames 1..n into windows of length ``l`` starting every ``p`` frames.

    There are ``n // p + 1`` candidate starts ``(i - 1) * p + 1``; candidates
    starting past frame n hold no frames and are dropped, so the kept count is
    ``ceil(n / p)``. Windows running past frame n are padded later.
    """
    if n < 1:
        raise ValidationError(f"need at least one frame, got n={n}")
    if not 1 <= p <= l:
        raise ValidationError(f"need 1 <= stride <= segment length, got p={p}, l={l}")
    segments = []
    for i in range(1, n // p + 2):
        start = (i - 1) * p + 1
        if start > n:
            continue
        segments.append(Segment(video_id, len(segments) + 1, start, min(start + l - 1, n), l))
    return SegmentationPlan(n, l, p, tuple(segments))


def pad_segment(rows: np.ndarray, l: int) -> tuple[np.ndarray, np.ndarray]:
    """Extend ``k`` rows to ``l`` by repeating the last row; returns (rows, real-frame mask)."""
    rows = np.asarray(rows)
    k = rows.shape[0]
    if k == 0:
        raise ValidationError("cannot pad an empty segment")
    if k > l:
        raise ValidationError(f"segment has {k} rows, more than target length {l}")
    mask = np.zeros(l, dtype=bool)
    mask[:k] = True
    if k == l:
        return rows, mask
    tail = np.repeat(rows[-1:], l - k, axis=0)
    return np.concatenate([rows, tail], axis=0), mask
