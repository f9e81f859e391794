"""Desk-scale synthetic datasets with linearly recoverable valence/arousal.

Each video has a latent (valence, arousal) trajectory built from a few slow
sinusoids. Visual features are a fixed random linear map of the latent and of
the latent ``history_seconds`` earlier, sampled at frame times; audio features
use a different map sampled on the audio hop clock. Both get Gaussian noise.
With ``signal=False`` the labels come from an independent trajectory, which
gives a control where nothing is learnable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from vaest.core_types import Modality, ValidationError
from vaest.ingestion import (
    FeatureSetInfo,
    ManifestEntry,
    write_feature_csv,
    write_feature_sets,
    write_labels_csv,
    write_manifest,
    write_validity_csv,
)

VISUAL_NAME = "synth_face"
AUDIO_NAME = "synth_voice"


@dataclass(frozen=True)
class SynthSpec:
    n_videos: int = 20
    n_val_videos: int = 5
    frames: int = 500
    fps: float = 30.0
    d_visual: int = 16
    d_audio: int = 8
    hop_seconds: float = 0.02
    noise_sigma: float = 0.1
    invalid_fraction: float = 0.1
    seed: int = 0
    signal: bool = True
    history_seconds: float = 0.5
    min_freq_hz: float = 0.1
    max_freq_hz: float = 0.6

    def __post_init__(self):
        if min(self.n_videos, self.frames, self.d_visual, self.d_audio) < 1 or self.n_val_videos < 0:
            raise ValidationError("synthetic counts must be positive")
        if not (self.fps > 0 and self.hop_seconds > 0):
            raise ValidationError("fps and hop_seconds must be positive")
        if not 0.0 <= self.invalid_fraction <= 0.5:
            raise ValidationError("invalid_fraction must lie in [0, 0.5]")
        if not 0 < self.min_freq_hz <= self.max_freq_hz:
            raise ValidationError("need 0 < min_freq_hz <= max_freq_hz")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be non-negative")


@dataclass
class SynthVideo:
    video_id: str
    split: str
    visual: np.ndarray  # frames x d_visual
    audio: np.ndarray  # hops x d_audio
    valence: np.ndarray
    arousal: np.ndarray
    valid: np.ndarray
    latent: np.ndarray = field(repr=False)  # frames x 2, the trajectory features were built from


class _Trajectory:
    """Valence and arousal as sums of 2-4 sinusoids, callable at arbitrary times."""

    def __init__(self, rng: np.random.Generator, min_freq: float, max_freq: float):
        self.channels = []
        for _ in range(2):
            k = int(rng.integers(2, 5))
            freqs = rng.uniform(min_freq, max_freq, size=k)
            phases = rng.uniform(0.0, 2 * np.pi, size=k)
            amps = rng.dirichlet(np.ones(k)) * rng.uniform(0.5, 0.8)
            offset = rng.uniform(-0.2, 0.2)
            self.channels.append((freqs, phases, amps, offset))

    def __call__(self, t: np.ndarray) -> np.ndarray:
        cols = []
        for freqs, phases, amps, offset in self.channels:
            wave = np.sin(2 * np.pi * freqs[None, :] * t[:, None] + phases[None, :]) @ amps
            cols.append(np.clip(wave + offset, -1.0, 1.0))
        return np.stack(cols, axis=1)


def _design(traj: _Trajectory, t: np.ndarray, lag: float) -> np.ndarray:
    return np.concatenate([traj(t), traj(t - lag)], axis=1)


def generate_videos(spec: SynthSpec) -> list[SynthVideo]:
    root = np.random.SeedSequence(spec.seed)
    maps_seq, videos_seq = root.spawn(2)
    maps_rng = np.random.default_rng(maps_seq)
    w_visual = maps_rng.normal(size=(4, spec.d_visual))
    b_visual = maps_rng.normal(scale=0.1, size=spec.d_visual)
    w_audio = maps_rng.normal(size=(4, spec.d_audio))
    b_audio = maps_rng.normal(scale=0.1, size=spec.d_audio)

    n = spec.frames
    frame_t = np.arange(n) / spec.fps
    n_hops = int(np.ceil((n - 1) / spec.fps / spec.hop_seconds)) + 2
    hop_t = np.arange(n_hops) * spec.hop_seconds
    n_invalid = int(round(spec.invalid_fraction * n))

    splits = ["train"] * spec.n_videos + ["val"] * spec.n_val_videos
    counters = {"train": 0, "val": 0}
    videos = []
    for split, seq in zip(splits, videos_seq.spawn(len(splits))):
        feature_seq, control_seq = seq.spawn(2)
        rng = np.random.default_rng(feature_seq)
        traj = _Trajectory(rng, spec.min_freq_hz, spec.max_freq_hz)
        label_traj = traj
        if not spec.signal:
            label_traj = _Trajectory(np.random.default_rng(control_seq), spec.min_freq_hz, spec.max_freq_hz)
        visual = _design(traj, frame_t, spec.history_seconds) @ w_visual + b_visual
        visual += rng.normal(scale=spec.noise_sigma, size=visual.shape) if spec.noise_sigma else 0.0
        audio = _design(traj, hop_t, spec.history_seconds) @ w_audio + b_audio
        audio += rng.normal(scale=spec.noise_sigma, size=audio.shape) if spec.noise_sigma else 0.0
        valid = np.ones(n, dtype=bool)
        if n_invalid:
            valid[rng.choice(n, size=n_invalid, replace=False)] = False
            # a failed face detection leaves nothing meaningful in the visual row
            visual[~valid] = rng.normal(size=(n_invalid, spec.d_visual))
        labels = label_traj(frame_t)
        vid = f"{split}_{counters[split]:03d}"
        counters[split] += 1
        videos.append(SynthVideo(vid, split, visual, audio, labels[:, 0], labels[:, 1], valid, traj(frame_t)))
    return videos


def generate(spec: SynthSpec, out_dir: Union[str, Path]) -> list[ManifestEntry]:
    """Write a complete dataset directory in the ingestion formats; returns the manifest."""
    out_dir = Path(out_dir)
    videos = generate_videos(spec)
    entries = [ManifestEntry(v.video_id, spec.fps, spec.frames, v.split) for v in videos]
    write_manifest(out_dir, entries)
    write_feature_sets(out_dir, [
        FeatureSetInfo(VISUAL_NAME, Modality.VISUAL, None),
        FeatureSetInfo(AUDIO_NAME, Modality.AUDIO, spec.hop_seconds),
    ])
    for v in videos:
        write_feature_csv(out_dir / "features" / VISUAL_NAME / f"{v.video_id}.csv", v.visual)
        write_feature_csv(out_dir / "features" / AUDIO_NAME / f"{v.video_id}.csv", v.audio)
        write_labels_csv(out_dir / "labels" / f"{v.video_id}.csv", v.valence, v.arousal)
        write_validity_csv(out_dir / "validity" / f"{v.video_id}.csv", v.valid)
    return entries
