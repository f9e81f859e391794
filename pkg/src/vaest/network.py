"""Fusion, temporal encoders, regression head and whole-video prediction.

Shapes follow the ``batch_first`` convention: ``(B, l, d)``. The functional
wrappers (``fuse``, ``encode_lstm``, ``encode_trm``, ``regress``) also accept
a single unbatched ``(l, d)`` segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from vaest.core_types import (
    EncoderKind,
    FeatureLayout,
    LengthMismatchError,
    ModelConfig,
    NumericFailureError,
    PredictionTrack,
    Stage,
    VideoRecord,
)
from vaest.preprocessing import SegmentationPlan, fill_invalid_frames, pad_segment, plan_segments


@dataclass
class EncoderState:
    """Recurrent memory carried between consecutive segments of one video."""

    hidden: torch.Tensor  # (layers, B, d_model)
    cell: torch.Tensor

    @classmethod
    def zeros(cls, layers: int, batch: int, d_model: int, dtype=torch.float32) -> "EncoderState":
        z = torch.zeros(layers, batch, d_model, dtype=dtype)
        return cls(z, z.clone())

    def detach(self) -> "EncoderState":
        return EncoderState(self.hidden.detach(), self.cell.detach())

    def select(self, index) -> "EncoderState":
        return EncoderState(self.hidden[:, index], self.cell[:, index])


def _batched(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.dim() == 2:
        return x.unsqueeze(0), True
    return x, False


def _check_finite(x: torch.Tensor, what: str) -> None:
    if not torch.isfinite(x).all():
        raise NumericFailureError(f"{what} produced non-finite values")


class SinusoidalPosition(nn.Module):
    def __init__(self, d_model: int, max_len: int = 512):
        super().__init__()
        self.d_model = d_model
        self.register_buffer("table", self._build(max_len), persistent=False)

    def _build(self, length: int) -> torch.Tensor:
        position = torch.arange(length, dtype=torch.float64).unsqueeze(1)
        div = torch.exp(torch.arange(0, self.d_model, 2, dtype=torch.float64) * (-math.log(10000.0) / self.d_model))
        table = torch.zeros(length, self.d_model, dtype=torch.float64)
        table[:, 0::2] = torch.sin(position * div)
        table[:, 1::2] = torch.cos(position * div)[:, : self.d_model // 2]
        return table

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        length = x.shape[1]
        if length > self.table.shape[0]:
            self.table = self._build(length)
        return x + self.table[:length].to(x.dtype)


class LSTMEncoder(nn.Module):
    def __init__(self, d_model: int, layers: int = 1, dropout: float = 0.0):
        super().__init__()
        self.layers = layers
        self.d_model = d_model
        self.lstm = nn.LSTM(d_model, d_model, num_layers=layers, batch_first=True,
                            dropout=dropout if layers > 1 else 0.0)
        self.dropout = nn.Dropout(dropout)

    def forward(self, fused: torch.Tensor, mask: Optional[torch.Tensor], state: Optional[EncoderState]):
        B, l, _ = fused.shape
        if state is None:
            state = EncoderState.zeros(self.layers, B, self.d_model, fused.dtype)
        lengths = torch.full((B,), l, dtype=torch.int64) if mask is None else mask.sum(dim=1).cpu()
        packed = pack_padded_sequence(fused, lengths, batch_first=True, enforce_sorted=False)
        out, (h, c) = self.lstm(packed, (state.hidden, state.cell))
        g, _ = pad_packed_sequence(out, batch_first=True, total_length=l)
        return self.dropout(g), EncoderState(h, c)


class TransformerTemporalEncoder(nn.Module):
    def __init__(self, d_model: int, layers: int, heads: int, d_ff: int, dropout: float = 0.0):
        super().__init__()
        self.position = SinusoidalPosition(d_model)
        layer = nn.TransformerEncoderLayer(d_model, heads, d_ff, dropout=dropout, batch_first=True)
        # nested tensors would zero padded rows and change numerics between train and eval
        self.encoder = nn.TransformerEncoder(layer, layers, enable_nested_tensor=False)

    def forward(self, fused: torch.Tensor, mask: Optional[torch.Tensor]) -> torch.Tensor:
        padding = None if mask is None else ~mask.to(torch.bool)
        return self.encoder(self.position(fused), src_key_padding_mask=padding)


class RegressionHead(nn.Module):
    """Affine maps with ReLU between them; the last map outputs (valence, arousal)."""

    def __init__(self, d_in: int, hidden: tuple[int, ...] = ()):
        super().__init__()
        widths = [d_in, *hidden, 2]
        layers: list[nn.Module] = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            if i:
                layers.append(nn.ReLU())
            layers.append(nn.Linear(a, b))
        self.net = nn.Sequential(*layers)

    @property
    def output(self) -> nn.Linear:
        return self.net[-1]

    def forward(self, g: torch.Tensor) -> torch.Tensor:
        return self.net(g)


class VAModel(nn.Module):
    """Fusion -> temporal encoder -> regression for one feature layout."""

    def __init__(self, config: ModelConfig, layout: FeatureLayout):
        super().__init__()
        self.config = config
        self.layout = layout
        self.fusion = nn.Linear(layout.d_visual + layout.d_audio, config.d_model)
        self.fusion_dropout = nn.Dropout(config.dropout)
        if config.encoder_kind is EncoderKind.LSTM:
            self.encoder = LSTMEncoder(config.d_model, config.encoder_layers, config.dropout)
        else:
            self.encoder = TransformerTemporalEncoder(
                config.d_model, config.encoder_layers, config.attention_heads, config.d_ff, config.dropout
            )
        self.head = RegressionHead(config.d_model, config.regression_hidden)

    @property
    def is_recurrent(self) -> bool:
        return self.config.encoder_kind is EncoderKind.LSTM

    def forward(self, visual, audio, mask=None, state: Optional[EncoderState] = None):
        """Returns ``(predictions (B, l, 2), state_out)``; state_out is None for the transformer."""
        fused = self.fusion_dropout(fuse(visual, audio, self.fusion))
        if self.is_recurrent:
            g, state = encode_lstm(fused, state, self.encoder, mask)
        else:
            g, state = encode_trm(fused, mask, self.encoder), None
        return regress(g, self.head), state


def fuse(visual: torch.Tensor, audio: torch.Tensor, fusion: nn.Linear) -> torch.Tensor:
    """``W_f [visual; audio] + b_f`` per frame, no nonlinearity."""
    if visual.shape[:-1] != audio.shape[:-1]:
        raise LengthMismatchError(f"visual rows {tuple(visual.shape)} and audio rows {tuple(audio.shape)} differ")
    x = torch.cat([visual, audio], dim=-1)
    if x.shape[-1] != fusion.in_features:
        raise LengthMismatchError(f"fusion expects {fusion.in_features} input features, got {x.shape[-1]}")
    return fusion(x)


def encode_lstm(fused: torch.Tensor, state_in: Optional[EncoderState], encoder: LSTMEncoder,
                mask: Optional[torch.Tensor] = None) -> tuple[torch.Tensor, EncoderState]:
    """Run one segment through the LSTM starting from ``state_in``.

    The returned state is taken after each sequence's last real frame, so a
    padded final segment leaves no trace of its padding in the state.
    """
    x, single = _batched(fused)
    if single:
        mask = None if mask is None else mask.unsqueeze(0)
        if state_in is not None and state_in.hidden.dim() == 2:
            state_in = EncoderState(state_in.hidden.unsqueeze(1), state_in.cell.unsqueeze(1))
    g, state = encoder(x, mask, state_in)
    _check_finite(g, "lstm encoder")
    return (g[0] if single else g), state


def encode_trm(fused: torch.Tensor, mask: Optional[torch.Tensor], encoder: TransformerTemporalEncoder) -> torch.Tensor:
    """Self-attention over one segment; padded positions are hidden from every query."""
    x, single = _batched(fused)
    if single and mask is not None:
        mask = mask.unsqueeze(0)
    g = encoder(x, mask)
    _check_finite(g, "transformer encoder")
    return g[0] if single else g


def regress(g: torch.Tensor, head: RegressionHead) -> torch.Tensor:
    first = head.net[0]
    if g.shape[-1] != first.in_features:
        raise LengthMismatchError(f"regression head expects width {first.in_features}, got {g.shape[-1]}")
    return head(g)


# --- whole-video prediction -------------------------------------------------

def assemble_inputs(record: VideoRecord, layout: FeatureLayout) -> tuple[np.ndarray, np.ndarray]:
    """Filled, concatenated visual and audio matrices (n x d_v, n x d_a) for one video."""
    valid = record.frames.valid

    def stack(entries):
        mats = []
        for name, dim in entries:
            track = record.feature(name)
            if track.dim != dim:
                raise LengthMismatchError(f"{record.video_id}/{name}: dimension {track.dim}, model expects {dim}")
            mats.append(fill_invalid_frames(track, valid).values)
        if not mats:
            return np.zeros((record.n_frames, 0))
        return np.concatenate(mats, axis=1)

    return stack(layout.visual), stack(layout.audio)


def segment_tensors(visual: np.ndarray, audio: np.ndarray, plan: SegmentationPlan, dtype=torch.float32):
    """Stack every planned segment into (S, l, d) tensors plus the (S, l) real-frame mask."""
    vs, as_, ms = [], [], []
    for seg in plan:
        v, m = pad_segment(visual[seg.file_slice()], plan.segment_length)
        a, _ = pad_segment(audio[seg.file_slice()], plan.segment_length)
        vs.append(v)
        as_.append(a)
        ms.append(m)
    return (
        torch.as_tensor(np.stack(vs), dtype=dtype),
        torch.as_tensor(np.stack(as_), dtype=dtype),
        torch.as_tensor(np.stack(ms)),
    )


def stitch(plan: SegmentationPlan, segment_preds: np.ndarray) -> np.ndarray:
    """Average each frame over every segment covering it; padding rows are dropped."""
    total = np.zeros((plan.n_frames, segment_preds.shape[-1]), dtype=np.float64)
    for seg, pred in zip(plan, segment_preds):
        total[seg.file_slice()] += pred[: seg.n_real]
    return total / plan.coverage()[:, None]


def model_dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


@torch.no_grad()
def predict_segments(model: VAModel, visual: np.ndarray, audio: np.ndarray, plan: SegmentationPlan) -> np.ndarray:
    """Raw per-segment outputs (S, l, 2); LSTM segments run in order with carried state."""
    v, a, m = segment_tensors(visual, audio, plan, model_dtype(model))
    if model.is_recurrent:
        state, outs = None, []
        for s in range(v.shape[0]):
            y, state = model(v[s : s + 1], a[s : s + 1], m[s : s + 1], state)
            outs.append(y[0])
        y = torch.stack(outs)
    else:
        y, _ = model(v, a, m)
    return y.double().numpy()


def predict_video(record: VideoRecord, model: VAModel) -> PredictionTrack:
    """Fill, segment, run the model and stitch the segments back into one raw track."""
    cfg = model.config
    was_training = model.training
    model.eval()
    try:
        visual, audio = assemble_inputs(record, model.layout)
        plan = plan_segments(record.n_frames, cfg.segment_length, cfg.stride, record.video_id)
        per_frame = stitch(plan, predict_segments(model, visual, audio, plan))
    finally:
        model.train(was_training)
    return PredictionTrack.from_matrix(record.video_id, per_frame, Stage.RAW)
