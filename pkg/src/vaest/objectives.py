"""Concordance correlation coefficient: metric, training loss and evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import torch

from vaest.core_types import (
    DegenerateBatchError,
    LabelTrack,
    LengthMismatchError,
    PredictionTrack,
    ValidationError,
)

CCC_EPS = 1e-8


def ccc(x, y, eps: float = CCC_EPS) -> float:
    """Lin's concordance correlation coefficient with population moments.

    ``2 cov(x, y) / (var x + var y + (mean x - mean y)^2 + eps)``
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise LengthMismatchError(f"ccc inputs differ in length: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValidationError(f"ccc needs at least 2 values, got {x.size}")
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    cov = np.mean(dx * dy)
    denom = np.mean(dx * dx) + np.mean(dy * dy) + (mx - my) ** 2 + eps
    return float(2.0 * cov / denom)


def ccc_torch(x: torch.Tensor, y: torch.Tensor, eps: float = CCC_EPS) -> torch.Tensor:
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    cov = (dx * dy).mean()
    return 2.0 * cov / ((dx * dx).mean() + (dy * dy).mean() + (mx - my) ** 2 + eps)


def ccc_loss(pred: torch.Tensor, target: torch.Tensor, frame_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Sum over valence and arousal of ``1 - CCC`` on the masked frames of a batch.

    ``pred`` and ``target`` are ``(..., 2)``; ``frame_mask`` has the leading
    shape and is False for padding and label-invalid frames. Excluded frames
    get exactly zero gradient.
    """
    if pred.shape != target.shape or pred.shape[-1] != 2:
        raise LengthMismatchError(f"pred {tuple(pred.shape)} and target {tuple(target.shape)} must match (..., 2)")
    pred = pred.reshape(-1, 2)
    target = target.reshape(-1, 2).to(pred.dtype)
    if frame_mask is not None:
        keep = frame_mask.reshape(-1).to(torch.bool)
        pred, target = pred[keep], target[keep]
    if pred.shape[0] < 2:
        raise DegenerateBatchError(f"batch has {pred.shape[0]} scorable frames, need at least 2")
    return (1.0 - ccc_torch(pred[:, 0], target[:, 0])) + (1.0 - ccc_torch(pred[:, 1], target[:, 1]))


@dataclass(frozen=True)
class EvalReport:
    ccc_valence: float
    ccc_arousal: float
    frames_scored: int

    HEADER = "ccc_valence,ccc_arousal,frames_scored"

    @property
    def total(self) -> float:
        return self.ccc_valence + self.ccc_arousal

    def to_csv_row(self) -> str:
        return f"{self.ccc_valence:.6f},{self.ccc_arousal:.6f},{self.frames_scored}"

    def write_csv(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(f"{self.HEADER}\n{self.to_csv_row()}\n", encoding="utf-8")

    @classmethod
    def mean(cls, reports: Sequence["EvalReport"]) -> "EvalReport":
        return cls(
            float(np.mean([r.ccc_valence for r in reports])),
            float(np.mean([r.ccc_arousal for r in reports])),
            int(round(np.mean([r.frames_scored for r in reports]))),
        )


def evaluate(preds: Sequence[PredictionTrack], labels: Sequence[LabelTrack]) -> EvalReport:
    """Per-channel CCC over the concatenation of all label-valid frames of all videos."""
    by_id = {p.video_id: p for p in preds}
    label_ids = {lab.video_id for lab in labels}
    missing_pred = sorted(label_ids - by_id.keys())
    missing_label = sorted(by_id.keys() - label_ids)
    if missing_pred or missing_label:
        parts = []
        if missing_pred:
            parts.append(f"no predictions for {','.join(missing_pred)}")
        if missing_label:
            parts.append(f"no labels for {','.join(missing_label)}")
        raise ValidationError("mismatched video sets: " + "; ".join(parts))
    p_all, y_all = [], []
    for lab in sorted(labels, key=lambda t: t.video_id):
        pred = by_id[lab.video_id]
        if pred.n_frames != lab.n_frames:
            raise LengthMismatchError(
                f"{lab.video_id}: {pred.n_frames} predicted frames vs {lab.n_frames} labelled"
            )
        keep = lab.label_valid
        p_all.append(pred.as_matrix()[keep])
        y_all.append(lab.as_matrix()[keep])
    p = np.concatenate(p_all) if p_all else np.empty((0, 2))
    y = np.concatenate(y_all) if y_all else np.empty((0, 2))
    if p.shape[0] < 2:
        raise ValidationError(f"only {p.shape[0]} label-valid frames to score")
    return EvalReport(ccc(p[:, 0], y[:, 0]), ccc(p[:, 1], y[:, 1]), int(p.shape[0]))
