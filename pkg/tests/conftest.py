import numpy as np
import pytest
import torch
from hypothesis import settings

from vaest.core_types import (
    EncoderKind,
    FeatureLayout,
    FeatureTrack,
    FrameTrack,
    LabelTrack,
    ModelConfig,
    Modality,
    validate_record,
)
from vaest.network import VAModel

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def make_record(n=40, d_v=3, d_a=2, seed=0, valid=None, labels=True, video_id="vid"):
    rng = np.random.default_rng(seed)
    frames = FrameTrack(video_id, 30.0, n, np.ones(n, bool) if valid is None else valid)
    feats = [
        FeatureTrack(video_id, Modality.VISUAL, "vis", rng.normal(size=(n, d_v))),
        FeatureTrack(video_id, Modality.AUDIO, "aud", rng.normal(size=(n, d_a))),
    ]
    lab = None
    if labels:
        y = np.clip(rng.normal(scale=0.4, size=(n, 2)), -1, 1)
        lab = LabelTrack(video_id, y[:, 0], y[:, 1], np.ones(n, bool))
    return validate_record(frames, feats, lab)


def tiny_config(kind="trm", l=8, p=None, **kw):
    p = l if p is None else p
    base = dict(encoder_kind=EncoderKind(kind), d_model=4, segment_length=l, stride=p,
                encoder_layers=1, attention_heads=1, d_ff=8, regression_hidden=(4,),
                dropout=0.0, learning_rate=1e-3, batch_size=4, epochs=1)
    base.update(kw)
    return ModelConfig(**base)


def tiny_model(kind="trm", l=8, p=None, seed=0, d_v=3, d_a=2, dtype=torch.float32, **kw):
    torch.manual_seed(seed)
    layout = FeatureLayout(visual=(("vis", d_v),), audio=(("aud", d_a),))
    model = VAModel(tiny_config(kind, l, p, **kw), layout).to(dtype)
    model.eval()
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance report ---------------------------------------------------------

_ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
    _ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    for report in terminalreporter.stats.get("failed", []):
        name = report.nodeid.rsplit("::", 1)[-1]
        if name.startswith("test_criterion_"):
            number = int(name.split("_")[2])
            _ACCEPTANCE.setdefault(number, f"[FAIL] criterion {number}: raised before reporting ({name})")
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
