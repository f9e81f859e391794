"""Presets, batch assembly, the optimisation loop and checkpoint files."""

from __future__ import annotations

import copy
import io
import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np
import torch

from vaest.core_types import (
    CheckpointVersionError,
    CorruptCheckpointError,
    DegenerateBatchError,
    EncoderKind,
    FeatureLayout,
    ModelConfig,
    NumericFailureError,
    ValidationError,
    VideoRecord,
)
from vaest.network import EncoderState, VAModel, assemble_inputs, predict_video, segment_tensors
from vaest.objectives import EvalReport, ccc_loss, evaluate
from vaest.preprocessing import SegmentationPlan, plan_segments

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

PRESETS: dict[str, ModelConfig] = {
    "LSTM": ModelConfig(
        encoder_kind=EncoderKind.LSTM, d_model=512, segment_length=100, stride=100,
        encoder_layers=1, regression_hidden=(512, 256), dropout=0.3,
        learning_rate=3e-4, batch_size=16, epochs=30,
    ),
    "TRM-v1": ModelConfig(
        encoder_kind=EncoderKind.TRM, d_model=256, segment_length=250, stride=250,
        encoder_layers=4, attention_heads=4, d_ff=1024, regression_hidden=(256, 256),
        dropout=0.3, learning_rate=2e-4, batch_size=16, epochs=30,
    ),
    "TRM-v2": ModelConfig(
        encoder_kind=EncoderKind.TRM, d_model=512, segment_length=250, stride=100,
        encoder_layers=4, attention_heads=4, d_ff=512, regression_hidden=(512, 256),
        dropout=0.3, learning_rate=3e-4, batch_size=16, epochs=30,
    ),
}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return replace(base, **overrides) if overrides else base


def config_to_dict(config: ModelConfig) -> dict:
    d = asdict(config)
    d["encoder_kind"] = config.encoder_kind.value
    d["regression_hidden"] = list(config.regression_hidden)
    d["smoothing"] = list(config.smoothing)
    return d


def config_from_dict(d: dict) -> ModelConfig:
    known = {f.name for f in fields(ModelConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValidationError(f"unknown model config keys: {', '.join(sorted(unknown))}")
    return ModelConfig(**d)


# --- batches -------------------------------------------------------------------

@dataclass
class PreparedVideo:
    """A video turned into padded segment tensors, ready for batching."""

    video_id: str
    plan: SegmentationPlan
    visual: torch.Tensor  # (S, l, d_v)
    audio: torch.Tensor
    mask: torch.Tensor  # (S, l) real frames
    target: torch.Tensor  # (S, l, 2)
    label_mask: torch.Tensor  # (S, l) real and label-valid

    @property
    def n_segments(self) -> int:
        return len(self.plan)


@dataclass
class Batch:
    visual: torch.Tensor
    audio: torch.Tensor
    mask: torch.Tensor
    target: torch.Tensor
    score_mask: torch.Tensor
    video_ids: tuple[str, ...]
    segment_indices: tuple[int, ...]  # 1-based

    def __len__(self) -> int:
        return len(self.video_ids)


def prepare(records: Sequence[VideoRecord], layout: FeatureLayout, config: ModelConfig,
            dtype=torch.float32) -> list[PreparedVideo]:
    out = []
    for rec in records:
        if rec.labels is None:
            raise ValidationError(f"{rec.video_id}: training needs labels")
        visual, audio = assemble_inputs(rec, layout)
        plan = plan_segments(rec.n_frames, config.segment_length, config.stride, rec.video_id)
        v, a, m = segment_tensors(visual, audio, plan, dtype)
        labels = np.concatenate([rec.labels.as_matrix(), rec.labels.label_valid[:, None]], axis=1)
        lab, _, _ = segment_tensors(labels, labels[:, :0], plan, torch.float64)
        target = lab[..., :2].to(dtype)
        label_mask = m & (lab[..., 2] > 0.5)
        out.append(PreparedVideo(rec.video_id, plan, v, a, m, target, label_mask))
    return out


def _collate(items: Sequence[tuple[PreparedVideo, int]]) -> Batch:
    """``items`` are (video, 0-based segment position)."""
    return Batch(
        visual=torch.stack([v.visual[s] for v, s in items]),
        audio=torch.stack([v.audio[s] for v, s in items]),
        mask=torch.stack([v.mask[s] for v, s in items]),
        target=torch.stack([v.target[s] for v, s in items]),
        score_mask=torch.stack([v.label_mask[s] for v, s in items]),
        video_ids=tuple(v.video_id for v, _ in items),
        segment_indices=tuple(s + 1 for _, s in items),
    )


def make_batches(videos: Sequence[PreparedVideo], config: ModelConfig, seed) -> Iterator[Batch]:
    """Yield training batches in a seed-determined order.

    Transformer: all segments of all videos are pooled, shuffled and cut into
    batches. LSTM: videos are shuffled and grouped into ``batch_size`` slots;
    step k of a group holds segment k of every slot video that has one, so
    each video's segments are seen strictly in order.
    """
    if not videos or sum(v.n_segments for v in videos) == 0:
        raise ValidationError("no training segments")
    rng = np.random.default_rng(seed)
    B = config.batch_size
    if config.encoder_kind is EncoderKind.TRM:
        pool = [(v, s) for v in videos for s in range(v.n_segments)]
        order = rng.permutation(len(pool))
        for start in range(0, len(pool), B):
            yield _collate([pool[i] for i in order[start : start + B]])
        return
    order = rng.permutation(len(videos))
    for start in range(0, len(videos), B):
        group = [videos[i] for i in order[start : start + B]]
        for k in range(max(v.n_segments for v in group)):
            yield _collate([(v, k) for v in group if v.n_segments > k])


# --- optimisation ------------------------------------------------------------------

def make_optimizer(model: VAModel, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=lr, betas=ADAM_BETAS, eps=ADAM_EPS)


def batch_loss(model: VAModel, batch: Batch, state: Optional[EncoderState] = None):
    pred, state_out = model(batch.visual, batch.audio, batch.mask, state)
    return ccc_loss(pred, batch.target, batch.score_mask), state_out


def train_step(model: VAModel, optimizer, batch: Batch, state: Optional[EncoderState] = None):
    """One forward/backward/update. Returns (loss or None if degenerate, detached state)."""
    pred, state_out = model(batch.visual, batch.audio, batch.mask, state)
    if state_out is not None:
        # truncated backprop: state crosses segments as values only
        state_out = state_out.detach()
    try:
        loss = ccc_loss(pred, batch.target, batch.score_mask)
    except DegenerateBatchError as exc:
        log.warning("skipping batch %s: %s", list(zip(batch.video_ids, batch.segment_indices)), exc)
        return None, state_out
    if not torch.isfinite(loss):
        raise NumericFailureError(
            f"non-finite loss {loss.item()} on segments {list(zip(batch.video_ids, batch.segment_indices))}"
        )
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.item()), state_out


class _StateBank:
    """Carried LSTM state per video, reset whenever a video's first segment comes round."""

    def __init__(self, model: VAModel):
        enc = model.encoder
        self.layers, self.d_model = enc.layers, enc.d_model
        self.dtype = next(model.parameters()).dtype
        self.states: dict[str, EncoderState] = {}

    def gather(self, batch: Batch) -> EncoderState:
        hs, cs = [], []
        for vid, idx in zip(batch.video_ids, batch.segment_indices):
            st = self.states.get(vid) if idx > 1 else None
            if st is None:
                st = EncoderState.zeros(self.layers, 1, self.d_model, self.dtype)
            hs.append(st.hidden)
            cs.append(st.cell)
        return EncoderState(torch.cat(hs, dim=1), torch.cat(cs, dim=1))

    def scatter(self, batch: Batch, state: EncoderState) -> None:
        for i, vid in enumerate(batch.video_ids):
            self.states[vid] = state.select(slice(i, i + 1))


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    steps: int
    skipped: int
    report: Optional[EvalReport]


@dataclass
class Checkpoint:
    config: ModelConfig
    layout: FeatureLayout
    model_state: dict
    optimizer_state: dict = field(default_factory=dict)
    epoch: int = 0
    seed: int = 0
    report: Optional[EvalReport] = None

    def build_model(self) -> VAModel:
        model = VAModel(self.config, self.layout)
        model.load_state_dict(self.model_state)
        model.eval()
        return model


@dataclass
class FitResult:
    best: Checkpoint
    history: list[EpochLog]
    model: VAModel  # best weights loaded, evaluation mode


def _snapshot(model, optimizer, config, layout, epoch, seed, report) -> Checkpoint:
    return Checkpoint(
        config, layout,
        copy.deepcopy(model.state_dict()),
        copy.deepcopy(optimizer.state_dict()),
        epoch, seed, report,
    )


def fit(
    train: Sequence[VideoRecord],
    val: Sequence[VideoRecord],
    config: ModelConfig,
    seed: int,
    layout: Optional[FeatureLayout] = None,
) -> FitResult:
    """Train with Adam on CCC loss; keep the epoch with the best validation CCC sum.

    Without validation videos the last epoch is kept.
    """
    if not train:
        raise ValidationError("fit needs at least one training video")
    layout = layout or FeatureLayout.from_record(train[0])
    torch.manual_seed(seed)
    model = VAModel(config, layout)
    optimizer = make_optimizer(model, config.learning_rate)
    videos = prepare(train, layout, config)
    if sum(int(v.label_mask.sum()) for v in videos) < 2:
        raise ValidationError("training data has fewer than 2 scorable frames")

    def validate():
        if not val:
            return None
        return evaluate([predict_video(r, model) for r in val], [r.labels for r in val])

    best = _snapshot(model, optimizer, config, layout, 0, seed, validate())
    history: list[EpochLog] = []
    for epoch in range(1, config.epochs + 1):
        model.train()
        bank = _StateBank(model) if model.is_recurrent else None
        losses, skipped = [], 0
        for batch in make_batches(videos, config, [seed, epoch]):
            state = bank.gather(batch) if bank else None
            loss, state = train_step(model, optimizer, batch, state)
            if bank:
                bank.scatter(batch, state)
            if loss is None:
                skipped += 1
            else:
                losses.append(loss)
        report = validate()
        mean_loss = float(np.mean(losses)) if losses else math.nan
        history.append(EpochLog(epoch, mean_loss, len(losses), skipped, report))
        log.info("epoch %d loss %.4f val %s", epoch, mean_loss, report)
        if report is None or best.report is None or report.total > best.report.total:
            best = _snapshot(model, optimizer, config, layout, epoch, seed, report)
    model.load_state_dict(best.model_state)
    model.eval()
    return FitResult(best, history, model)


# --- checkpoint files ---------------------------------------------------------

CHECKPOINT_FORMAT = "vaest-checkpoint"
CHECKPOINT_VERSION = 1
_ZIP_DATE = (2020, 1, 1, 0, 0, 0)


def _config_text(ckpt: Checkpoint) -> str:
    lines = [f"{k}={v}" for k, v in config_to_dict(ckpt.config).items()]
    lines.append("visual=" + ",".join(f"{n}:{d}" for n, d in ckpt.layout.visual))
    lines.append("audio=" + ",".join(f"{n}:{d}" for n, d in ckpt.layout.audio))
    lines += [f"epoch={ckpt.epoch}", f"seed={ckpt.seed}"]
    if ckpt.report is not None:
        lines.append(f"val_ccc_valence={ckpt.report.ccc_valence}")
        lines.append(f"val_ccc_arousal={ckpt.report.ccc_arousal}")
    return "\n".join(lines) + "\n"


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path], version: int = CHECKPOINT_VERSION) -> None:
    """Write a zip container: FORMAT, plain-text config.txt, meta.json and tensor state."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": version,
        "config": config_to_dict(ckpt.config),
        "layout": {"visual": ckpt.layout.visual, "audio": ckpt.layout.audio},
        "epoch": ckpt.epoch,
        "seed": ckpt.seed,
        "report": None if ckpt.report is None else asdict(ckpt.report),
    }
    buf = io.BytesIO()
    torch.save({"model": ckpt.model_state, "optimizer": ckpt.optimizer_state}, buf)
    entries = [
        ("FORMAT", f"{CHECKPOINT_FORMAT}\n{version}\n".encode()),
        ("config.txt", _config_text(ckpt).encode()),
        ("meta.json", json.dumps(meta, indent=1, sort_keys=True).encode()),
        ("state.pt", buf.getvalue()),
    ]
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, data in entries:
            zf.writestr(zipfile.ZipInfo(name, date_time=_ZIP_DATE), data)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            fmt = zf.read("FORMAT").decode().split()
            meta = json.loads(zf.read("meta.json"))
            state_bytes = zf.read("state.pt")
    except FileNotFoundError:
        raise CorruptCheckpointError(f"{path}: no such checkpoint") from None
    except (zipfile.BadZipFile, KeyError, ValueError, EOFError, OSError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    if len(fmt) != 2 or fmt[0] != CHECKPOINT_FORMAT:
        raise CorruptCheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    found = int(fmt[1]) if fmt[1].isdigit() else fmt[1]
    if found != CHECKPOINT_VERSION or meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {found}, this build reads {CHECKPOINT_VERSION}")
    try:
        state = torch.load(io.BytesIO(state_bytes), weights_only=True)
    except Exception as exc:  # torch raises assorted types for damaged payloads
        raise CorruptCheckpointError(f"{path}: damaged tensor payload ({exc})") from None
    report = meta.get("report")
    return Checkpoint(
        config=config_from_dict(meta["config"]),
        layout=FeatureLayout(visual=meta["layout"]["visual"], audio=meta["layout"]["audio"]),
        model_state=state["model"],
        optimizer_state=state["optimizer"],
        epoch=meta["epoch"],
        seed=meta["seed"],
        report=None if report is None else EvalReport(**report),
    )
