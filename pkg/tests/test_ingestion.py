from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vaest.core_types import Modality, ParseError
from vaest.ingestion import (
    AudioFeatureFile,
    align_audio_to_frames,
    load_dataset,
    load_feature_csv,
    load_labels_csv,
    load_validity_csv,
    write_feature_csv,
)


def nearest_two_oracle(m, hop, fps, j):
    """Brute force over every audio row with exact rational arithmetic."""
    t = Fraction(j - 1) / Fraction(fps)
    hop = Fraction(str(hop))
    ranked = sorted(range(m), key=lambda k: (abs(k * hop - t), k))
    return ranked[0], ranked[1]


def write(path, text):
    path.write_text(text)
    return path


def test_load_feature_csv(tmp_path):
    p = write(tmp_path / "v1.csv", "frame,f0,f1\n0,1,2\n1,3,4\n2,5,6\n")
    track = load_feature_csv(p, name="densenet")
    assert track.n_frames == 3 and track.dim == 2
    assert track.video_id == "v1" and track.modality is Modality.VISUAL
    np.testing.assert_array_equal(track.values[2], [5, 6])


def test_nan_row_named(tmp_path):
    p = write(tmp_path / "v.csv", "frame,f0\n0,1\n1,nan\n")
    with pytest.raises(ParseError, match="line 3.*non-finite"):
        load_feature_csv(p)


def test_header_only_rejected(tmp_path):
    p = write(tmp_path / "v.csv", "frame,f0,f1\n")
    with pytest.raises(ParseError, match="no frames"):
        load_feature_csv(p)


def test_ragged_row_rejected(tmp_path):
    p = write(tmp_path / "v.csv", "frame,f0,f1\n0,1,2\n1,3\n")
    with pytest.raises(ParseError, match="line 3 has 2 columns"):
        load_feature_csv(p)


def test_audio_file_returned_with_hop(tmp_path):
    p = write(tmp_path / "v.csv", "frame,f0\n0,1\n1,2\n")
    audio = load_feature_csv(p, hop_seconds=0.02)
    assert isinstance(audio, AudioFeatureFile)
    np.testing.assert_allclose(audio.timestamps, [0.0, 0.02])


def test_labels(tmp_path):
    p = write(tmp_path / "v.csv", "frame,valence,arousal\n0,0.5,-0.2\n1,-5,-5\n")
    lab = load_labels_csv(p)
    assert lab.label_valid.tolist() == [True, False]
    assert lab.valence[0] == 0.5 and lab.arousal[0] == -0.2


def test_labels_missing_arousal(tmp_path):
    p = write(tmp_path / "v.csv", "frame,valence\n0,0.5\n")
    with pytest.raises(ParseError, match="frame,valence,arousal"):
        load_labels_csv(p)


def test_validity(tmp_path):
    p = write(tmp_path / "v.csv", "frame,valid\n0,1\n1,0\n")
    assert load_validity_csv(p).tolist() == [True, False]
    with pytest.raises(ParseError):
        load_validity_csv(write(tmp_path / "w.csv", "frame,valid\n0,2\n"))


def audio_rows(m, d=3):
    return np.arange(m * d, dtype=float).reshape(m, d) ** 1.5


def test_align_fps30_frame2():
    values = audio_rows(10)
    out = align_audio_to_frames(AudioFeatureFile(values, 0.02), fps=30, n=3)
    assert nearest_two_oracle(10, 0.02, 30, 2) == (2, 1)
    np.testing.assert_allclose(out.values[1], (values[1] + values[2]) / 2)


def test_align_fps50_tie_prefers_earlier():
    values = audio_rows(10)
    out = align_audio_to_frames(AudioFeatureFile(values, 0.02), fps=50, n=3)
    assert nearest_two_oracle(10, 0.02, 50, 2) == (1, 0)
    np.testing.assert_allclose(out.values[1], (values[0] + values[1]) / 2)


def test_align_constant():
    c = np.array([0.3, -1.0])
    out = align_audio_to_frames(AudioFeatureFile(np.tile(c, (7, 1)), 0.02), fps=25, n=11)
    np.testing.assert_array_equal(out.values, np.tile(c, (11, 1)))


@given(
    m=st.integers(2, 40),
    n=st.integers(1, 60),
    fps=st.sampled_from([24, 25, 29.97, 30, 50, 60, 7.5]),
    hop=st.sampled_from([0.01, 0.02, 0.04, 0.1]),
)
def test_align_matches_brute_force(m, n, fps, hop):
    values = audio_rows(m)
    out = align_audio_to_frames(AudioFeatureFile(values, hop), fps, n)
    assert out.n_frames == n
    for j in range(1, n + 1):
        a, b = nearest_two_oracle(m, hop, Fraction(str(fps)), j)
        np.testing.assert_allclose(out.values[j - 1], (values[a] + values[b]) / 2, rtol=0, atol=1e-12)
    assert np.all(out.values >= values.min(axis=0) - 1e-12)
    assert np.all(out.values <= values.max(axis=0) + 1e-12)


def test_align_needs_two_rows():
    with pytest.raises(ValueError):
        align_audio_to_frames(AudioFeatureFile(np.zeros((1, 2))), 30, 5)


def test_load_dataset_aligns_audio(tmp_path):
    (tmp_path / "manifest.csv").write_text("video_id,fps,n_frames,split\nv,50,4,train\n")
    (tmp_path / "feature_sets.csv").write_text("name,modality,hop_seconds\nface,visual,\nvoice,audio,0.02\n")
    write_feature_csv(tmp_path / "features/face/v.csv", np.ones((4, 2)))
    write_feature_csv(tmp_path / "features/voice/v.csv", np.arange(6.0)[:, None])
    (tmp_path / "labels").mkdir()
    (tmp_path / "labels/v.csv").write_text("frame,valence,arousal\n0,0,0\n1,0.1,0.1\n2,-5,-5\n3,0,0\n")
    (rec,) = load_dataset(tmp_path)
    assert rec.feature("voice").values[:, 0].tolist() == [0.5, 0.5, 1.5, 2.5]
    assert rec.labels.label_valid.tolist() == [True, True, False, True]
    assert rec.frames.valid.all()
    (only,) = load_dataset(tmp_path, ["voice"], split="train")
    assert [t.name for t in only.features] == ["voice"]
