import numpy as np
import pytest
import torch
from torch import nn

from conftest import make_record, tiny_model
from vaest.network import (
    EncoderState,
    LSTMEncoder,
    RegressionHead,
    TransformerTemporalEncoder,
    encode_lstm,
    encode_trm,
    fuse,
    predict_segments,
    predict_video,
    regress,
    assemble_inputs,
)
from vaest.preprocessing import plan_segments


def zero_(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


def test_fuse_zero_weights_gives_bias():
    lin = nn.Linear(3, 4)
    with torch.no_grad():
        lin.weight.zero_()
        lin.bias.copy_(torch.tensor([1.0, -2.0, 0.5, 3.0]))
    out = fuse(torch.randn(5, 2), torch.randn(5, 1), lin)
    assert torch.equal(out, lin.bias.expand(5, 4))


def test_fuse_identity_concatenates():
    lin = nn.Linear(3, 3)
    with torch.no_grad():
        lin.weight.copy_(torch.eye(3))
        lin.bias.zero_()
    v, a = torch.randn(4, 2), torch.randn(4, 1)
    assert torch.equal(fuse(v, a, lin), torch.cat([v, a], dim=1))


def test_fuse_matches_affine_oracle(rng):
    lin = nn.Linear(5, 3).double()
    v, a = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
    out = fuse(torch.tensor(v), torch.tensor(a), lin).detach().numpy()
    W, b = lin.weight.detach().numpy(), lin.bias.detach().numpy()
    for i in range(4):
        expected = W @ np.concatenate([v[i], a[i]]) + b
        np.testing.assert_allclose(out[i], expected, atol=1e-6)


def test_fuse_shape_errors():
    with pytest.raises(ValueError):
        fuse(torch.randn(4, 2), torch.randn(3, 1), nn.Linear(3, 2))
    with pytest.raises(ValueError):
        fuse(torch.randn(4, 2), torch.randn(4, 2), nn.Linear(3, 2))


def test_lstm_zero_weights():
    enc = LSTMEncoder(4)
    zero_(enc)
    g, state = encode_lstm(torch.randn(6, 4), None, enc)
    assert torch.equal(g, torch.zeros(6, 4))
    assert torch.equal(state.hidden, torch.zeros(1, 1, 4))
    assert torch.equal(state.cell, torch.zeros(1, 1, 4))


def test_lstm_split_equals_single_pass():
    torch.manual_seed(0)
    enc = LSTMEncoder(4).eval()
    x = torch.randn(8, 4)
    full, _ = encode_lstm(x, None, enc)
    a, state = encode_lstm(x[:4], None, enc)
    b, _ = encode_lstm(x[4:], state, enc)
    assert (torch.cat([a, b]) - full).abs().max().item() < 1e-6


def test_lstm_state_matters():
    torch.manual_seed(0)
    enc = LSTMEncoder(4).eval()
    x = torch.randn(8, 4)
    _, state = encode_lstm(x[:4], None, enc)
    with_ctx, _ = encode_lstm(x[4:], state, enc)
    without, _ = encode_lstm(x[4:], EncoderState.zeros(1, 1, 4), enc)
    assert not torch.allclose(with_ctx, without)


def test_lstm_padded_state_stops_at_last_real_frame():
    torch.manual_seed(1)
    enc = LSTMEncoder(4, layers=2).eval()
    x = torch.randn(5, 4)
    padded = torch.cat([x, x[-1:].expand(3, 4)])
    mask = torch.tensor([True] * 5 + [False] * 3)
    g_pad, st_pad = encode_lstm(padded, None, enc, mask)
    g, st = encode_lstm(x, None, enc)
    assert torch.allclose(g_pad[:5], g, atol=1e-7)
    assert torch.allclose(st_pad.hidden, st.hidden, atol=1e-7)
    assert torch.allclose(st_pad.cell, st.cell, atol=1e-7)


def trm(seed=0):
    torch.manual_seed(seed)
    return TransformerTemporalEncoder(8, 2, 2, 16, dropout=0.3).eval()


def test_trm_deterministic_in_eval():
    enc, x = trm(), torch.randn(4, 8)
    assert torch.equal(encode_trm(x, None, enc), encode_trm(x, None, enc))


def test_trm_position_signal_active():
    enc, x = trm(), torch.randn(4, 8)
    perm = torch.tensor([2, 0, 3, 1])
    out = encode_trm(x, None, enc)
    out_perm = encode_trm(x[perm], None, enc)
    # without positions, attention is permutation-equivariant and these would match
    assert not torch.allclose(out[perm], out_perm, atol=1e-5)


def test_trm_padding_hidden_from_real_rows():
    enc, x = trm(), torch.randn(4, 8)
    mask = torch.tensor([True, True, False, False])
    other = x.clone()
    other[2:] = torch.randn(2, 8) * 100
    a = encode_trm(x, mask, enc)
    b = encode_trm(other, mask, enc)
    assert torch.allclose(a[:2], b[:2], atol=1e-6)


def test_regress_bias_only_head():
    head = RegressionHead(4)
    with torch.no_grad():
        head.output.weight.zero_()
        head.output.bias.copy_(torch.tensor([0.3, -0.1]))
    out = regress(torch.randn(5, 4), head)
    assert torch.allclose(out, torch.tensor([0.3, -0.1]).expand(5, 2))


def test_regress_matches_matrix_oracle(rng):
    head = RegressionHead(3, (4,)).double()
    g = rng.normal(size=(6, 3))
    W1, b1 = head.net[0].weight.detach().numpy(), head.net[0].bias.detach().numpy()
    W2, b2 = head.net[2].weight.detach().numpy(), head.net[2].bias.detach().numpy()
    expected = np.maximum(g @ W1.T + b1, 0) @ W2.T + b2
    out = regress(torch.tensor(g), head).detach().numpy()
    np.testing.assert_allclose(out, expected, atol=1e-6)


def test_regress_output_not_squashed():
    head = RegressionHead(2)
    with torch.no_grad():
        head.output.weight.fill_(50.0)
    out = regress(torch.ones(3, 2), head)
    assert out.abs().max() > 1.0


def test_regress_width_mismatch():
    with pytest.raises(ValueError):
        regress(torch.randn(3, 5), RegressionHead(4))


def test_predict_video_lstm_partition():
    rec = make_record(n=250)
    model = tiny_model("lstm", l=100)
    pred = predict_video(rec, model)
    assert pred.n_frames == 250
    visual, audio = assemble_inputs(rec, model.layout)
    plan = plan_segments(250, 100, 100)
    assert (plan.coverage() == 1).all()
    segs = predict_segments(model, visual, audio, plan)
    np.testing.assert_array_equal(pred.as_matrix()[:100], segs[0])
    np.testing.assert_array_equal(pred.as_matrix()[200:], segs[2][:50])


def test_predict_video_trm_overlap_average():
    rec = make_record(n=6)
    model = tiny_model("trm", l=4, p=2)
    visual, audio = assemble_inputs(rec, model.layout)
    plan = plan_segments(6, 4, 2)
    segs = predict_segments(model, visual, audio, plan)
    covering = {j: [] for j in range(1, 7)}
    for seg, out in zip(plan, segs):
        for pos, frame in enumerate(range(seg.start_frame, seg.end_frame + 1)):
            covering[frame].append(out[pos])
    assert [len(covering[j]) for j in range(1, 7)] == [1, 1, 2, 2, 2, 2]
    expected = np.array([np.mean(covering[j], axis=0) for j in range(1, 7)])
    np.testing.assert_allclose(predict_video(rec, model).as_matrix(), expected, atol=1e-12)


@pytest.mark.parametrize("kind,l,p", [("lstm", 5, 5), ("trm", 5, 2)])
def test_constant_model_predicts_bias(kind, l, p):
    model = tiny_model(kind, l=l, p=p)
    zero_(model)
    with torch.no_grad():
        model.head.output.bias.copy_(torch.tensor([0.25, -0.5]))
    pred = predict_video(make_record(n=13), model)
    np.testing.assert_allclose(pred.valence, 0.25, atol=1e-7)
    np.testing.assert_allclose(pred.arousal, -0.5, atol=1e-7)


def test_predict_uses_filled_frames():
    valid = np.ones(12, bool)
    valid[5] = False
    rec = make_record(n=12, valid=valid)
    model = tiny_model("trm", l=12)
    base = predict_video(rec, model)
    garbage = [t if t.name != "vis" else type(t)(t.video_id, t.modality, t.name, t.values.copy()) for t in rec.features]
    garbage[0].values[5] = 1e6
    rec2 = type(rec)(rec.frames, tuple(garbage), rec.labels)
    np.testing.assert_array_equal(predict_video(rec2, model).as_matrix(), base.as_matrix())


def test_predict_video_deterministic_with_dropout_configured():
    model = tiny_model("trm", l=7, p=3, dropout=0.5)
    model.train()
    rec = make_record(n=20)
    a = predict_video(rec, model)
    b = predict_video(rec, model)
    assert np.array_equal(a.as_matrix(), b.as_matrix())
    assert model.training
