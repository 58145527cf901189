import logging
import math
import os

import numpy as np
import pytest
import scipy.io.wavfile
import scipy.signal
from hypothesis import given, settings, strategies as st

from cortinv.errors import DataError
from cortinv.signal_io import (
    TV_CSV_HEADER, TV_NAMES, TV_RANGES, AudioBuffer, DatasetManifest, ManifestEntry, SynthSpec,
    TvTrajectory, align_frames, load_tv_csv, load_wav, make_splits, read_manifest, resample,
    synth_audio, synth_dataset, write_manifest, write_tv_csv, write_wav, _speaker_params,
)


def _rms_db(x):
    return 20 * np.log10(np.sqrt(np.mean(x ** 2)))


# ---------------------------------------------------------------- wav


def test_load_wav_pcm16_one_second(tmp_path):
    p = tmp_path / "a.wav"
    scipy.io.wavfile.write(p, 16000, (np.arange(16000) % 200 - 100).astype(np.int16))
    a = load_wav(str(p))
    assert len(a) == 16000 and a.sample_rate == 16000
    assert a.id == "a"
    assert np.max(np.abs(a.samples)) <= 1.0


def test_load_wav_zeros_is_valid(tmp_path):
    p = tmp_path / "z.wav"
    scipy.io.wavfile.write(p, 16000, np.zeros(1600, np.int16))
    assert not load_wav(str(p)).samples.any()


def test_load_wav_rejects_stereo(tmp_path):
    p = tmp_path / "s.wav"
    scipy.io.wavfile.write(p, 16000, np.zeros((1600, 2), np.int16))
    with pytest.raises(DataError, match="multichannel unsupported"):
        load_wav(str(p))


def test_load_wav_rejects_other_encodings(tmp_path):
    p = tmp_path / "i32.wav"
    scipy.io.wavfile.write(p, 16000, np.zeros(1600, np.int32))
    with pytest.raises(DataError, match="unsupported"):
        load_wav(str(p))


def test_load_wav_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_wav(str(tmp_path / "nope.wav"))


@pytest.mark.parametrize("encoding", ["pcm16", "float32"])
def test_wav_round_trip(tmp_path, encoding):
    x = 0.5 * np.sin(2 * np.pi * 300 * np.arange(1600) / 16000)
    p = str(tmp_path / "r.wav")
    write_wav(p, AudioBuffer(x, 16000, "r"), encoding)
    y = load_wav(p).samples
    tol = 1 / 32767 if encoding == "pcm16" else 1e-7
    np.testing.assert_allclose(y, x, atol=tol)


def test_audio_buffer_rejects_bad_input():
    with pytest.raises(DataError):
        AudioBuffer(np.array([0.0, np.nan]), 16000)
    with pytest.raises(DataError):
        AudioBuffer(np.zeros(10), 0)
    with pytest.raises(DataError):
        AudioBuffer(np.zeros((10, 2)), 16000)


# ---------------------------------------------------------------- resample


def test_resample_identity_path():
    a = AudioBuffer(np.random.default_rng(0).standard_normal(1600) * 0.1, 16000)
    assert resample(a, 16000) is a


def test_resample_tone_44k1_to_16k_keeps_level():
    fs = 44100
    x = 0.5 * np.sin(2 * np.pi * 440 * np.arange(fs) / fs)
    y = resample(AudioBuffer(x, fs), 16000)
    assert len(y) == 16000 and y.sample_rate == 16000
    # compare with the analytic RMS of a sine, away from the filter edges
    core = y.samples[800:-800]
    assert abs(_rms_db(core) - 20 * np.log10(0.5 / math.sqrt(2))) < 0.5


def test_resample_8k_to_16k_length():
    y = resample(AudioBuffer(np.zeros(8000), 8000), 16000)
    assert len(y) == 16000


def test_resample_rejects_bad_rate():
    with pytest.raises(ValueError):
        resample(AudioBuffer(np.zeros(100), 16000), 0)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([8000, 11025, 22050, 32000, 44100, 48000]),
       st.sampled_from([8000, 16000, 22050, 44100]),
       st.integers(200, 3000))
def test_resample_length_is_rounded_ratio(src, dst, n):
    y = resample(AudioBuffer(np.zeros(n), src), dst)
    assert len(y) == round(n * dst / src)


# ---------------------------------------------------------------- TV csv


def _tv_file(path, rows, header=TV_CSV_HEADER, step=0.01):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i, r in enumerate(rows):
            fh.write(",".join([f"{i * step:.3f}"] + [str(v) for v in r]) + "\n")


def test_load_tv_csv_three_rows(tmp_path):
    p = tmp_path / "t.csv"
    _tv_file(p, np.arange(18).reshape(3, 6))
    tv = load_tv_csv(str(p))
    assert tv.n_frames == 3 and tv.frame_period == 0.010
    assert tv.channels == TV_NAMES
    np.testing.assert_array_equal(tv.values[1], np.arange(6, 12))


def test_load_tv_csv_missing_column(tmp_path):
    p = tmp_path / "t.csv"
    _tv_file(p, np.zeros((3, 5)), header=TV_CSV_HEADER[:-1])
    with pytest.raises(DataError, match="schema mismatch"):
        load_tv_csv(str(p))


def test_load_tv_csv_wrong_step(tmp_path):
    p = tmp_path / "t.csv"
    _tv_file(p, np.zeros((3, 6)), step=0.02)
    with pytest.raises(DataError, match="frame period mismatch"):
        load_tv_csv(str(p))


def test_load_tv_csv_nan(tmp_path):
    p = tmp_path / "t.csv"
    rows = np.zeros((3, 6))
    rows[1, 2] = np.nan
    _tv_file(p, rows)
    with pytest.raises(DataError, match="NaN"):
        load_tv_csv(str(p))


def test_tv_csv_round_trip_bit_exact(tmp_path):
    v = np.random.default_rng(1).standard_normal((50, 6)) * 10
    p = str(tmp_path / "t.csv")
    write_tv_csv(p, TvTrajectory(v))
    np.testing.assert_array_equal(load_tv_csv(p).values, v)
    with open(p, "rb") as fh:
        assert b"\r\n" not in fh.read()


def test_tv_trajectory_contract():
    with pytest.raises(DataError):
        TvTrajectory(np.zeros((3, 5)))
    with pytest.raises(DataError):
        TvTrajectory(np.full((3, 6), np.inf))
    with pytest.raises(DataError):
        TvTrajectory(np.zeros((3, 6)), channels=TV_NAMES[::-1])


# ---------------------------------------------------------------- alignment


def _tv(n):
    return TvTrajectory(np.zeros((n, 6)))


def test_align_frames_equal(caplog):
    with caplog.at_level(logging.WARNING):
        assert align_frames(300, _tv(300)) == 300
    assert not caplog.records


def test_align_frames_small_gap_no_warning(caplog):
    with caplog.at_level(logging.WARNING):
        assert align_frames(300, _tv(298)) == 298
    assert not caplog.records


def test_align_frames_large_gap_warns(caplog):
    with caplog.at_level(logging.WARNING):
        assert align_frames(300, _tv(290)) == 290
    assert any("mismatch" in r.message for r in caplog.records)


def test_align_frames_zero_overlap():
    with pytest.raises(DataError):
        align_frames(0, _tv(10))


@given(st.integers(1, 500), st.integers(1, 500))
def test_align_then_truncate_gives_equal_counts(n_spec, n_tv):
    n = align_frames(n_spec, _tv(n_tv))
    feats = np.zeros((n_spec, 3))[:n]
    assert len(feats) == _tv(n_tv).truncate(n).n_frames == n


# ---------------------------------------------------------------- manifests and splits


def _manifest(n_speakers, per_speaker=2):
    return DatasetManifest([
        ManifestEntry(f"s{s}_u{u}", f"s{s}", f"w/{s}_{u}.wav", f"t/{s}_{u}.csv")
        for s in range(n_speakers) for u in range(per_speaker)
    ])


def test_split_46_speakers_like_36_5_5():
    m = make_splits(_manifest(46), "by_speaker", (36 / 46, 5 / 46, 5 / 46), seed=3)
    assert [len(m.speakers(s)) for s in ("train", "dev", "test")] == [36, 5, 5]
    assert m.is_speaker_disjoint()


def test_split_same_seed_same_assignment():
    a = make_splits(_manifest(20), seed=11)
    b = make_splits(_manifest(20), seed=11)
    assert [e.split for e in a] == [e.split for e in b]


def test_split_too_few_speakers():
    with pytest.raises(DataError):
        make_splits(_manifest(2), "by_speaker", (0.5, 0.25, 0.25))


def test_split_rejects_bad_fractions():
    with pytest.raises(ValueError):
        make_splits(_manifest(10), fractions=(0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        make_splits(_manifest(10), mode="by_phase")


def test_by_utterance_split_can_mix_speakers():
    m = make_splits(_manifest(4, 25), "by_utterance", (0.6, 0.2, 0.2), seed=0)
    assert [len(m.subset(s)) for s in ("train", "dev", "test")] == [60, 20, 20]
    assert not m.is_speaker_disjoint()


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 60), st.integers(0, 2 ** 32 - 1),
       st.floats(0.05, 0.3), st.floats(0.05, 0.3))
def test_by_speaker_split_is_disjoint_and_proportional(n_spk, seed, f_dev, f_test):
    fr = (1 - f_dev - f_test, f_dev, f_test)
    m = make_splits(_manifest(n_spk, 3), "by_speaker", fr, seed)
    assert m.is_speaker_disjoint()
    counts = [len(m.speakers(s)) for s in ("train", "dev", "test")]
    assert sum(counts) == n_spk
    for c, f in zip(counts[1:], fr[1:]):
        assert c >= 1 and (abs(c - f * n_spk) <= 1 or c == 1)


def test_manifest_rejects_duplicate_ids():
    e = ManifestEntry("u", "s", "a.wav", "a.csv")
    with pytest.raises(DataError, match="duplicate"):
        DatasetManifest([e, e])


def test_manifest_round_trip_and_file_check(tmp_path):
    m = make_splits(_manifest(6), seed=0)
    p = str(tmp_path / "manifest.csv")
    write_manifest(p, m)
    back = read_manifest(p)
    assert [(e.utt_id, e.split) for e in back] == [(e.utt_id, e.split) for e in m]
    with pytest.raises(DataError, match="missing file"):
        back.check_files()


# ---------------------------------------------------------------- synthetic corpus


def test_synth_counts_for_default_spec():
    spec = SynthSpec()
    assert (spec.n_speakers, spec.utterances_per_speaker, spec.duration, spec.seed) == (12, 16, 3.0, 7)
    small = synth_dataset(SynthSpec(n_speakers=2, utterances_per_speaker=2, duration=3.0))
    assert len(small) == 4
    assert all(u.tv.n_frames == 300 and len(u.audio) == 48000 for u in small)
    assert [u.audio.id for u in small] == ["spk00_utt00", "spk00_utt01", "spk01_utt00", "spk01_utt01"]


def test_synth_is_bit_identical_for_same_seed():
    spec = SynthSpec(n_speakers=2, utterances_per_speaker=1, duration=0.5, seed=5)
    a, b = synth_dataset(spec), synth_dataset(spec)
    for x, y in zip(a, b):
        assert x.audio.samples.tobytes() == y.audio.samples.tobytes()
        assert x.tv.values.tobytes() == y.tv.values.tobytes()


def test_synth_different_seed_differs():
    a = synth_dataset(SynthSpec(1, 1, 0.5, seed=1))[0]
    b = synth_dataset(SynthSpec(1, 1, 0.5, seed=2))[0]
    assert not np.array_equal(a.audio.samples, b.audio.samples)


def test_synth_values_within_ranges():
    for u in synth_dataset(SynthSpec(3, 2, 2.0, seed=9)):
        lo = np.array([r[0] for r in TV_RANGES])
        hi = np.array([r[1] for r in TV_RANGES])
        assert np.all(u.tv.values >= lo) and np.all(u.tv.values <= hi)
        assert np.all(np.abs(u.audio.samples) <= 1.0)


def test_synth_trajectories_are_band_limited():
    u = synth_dataset(SynthSpec(1, 1, 20.0, seed=4, trajectory_bandwidth=8.0))[0]
    f, p = scipy.signal.welch(u.tv.values - u.tv.values.mean(0), fs=100.0, axis=0, nperseg=256)
    assert p[f > 20].sum() < 0.01 * p.sum()


def test_synth_spec_contract():
    with pytest.raises(ValueError):
        SynthSpec(n_speakers=0)
    with pytest.raises(ValueError):
        SynthSpec(trajectory_bandwidth=50.0)


def test_shuffling_tv_frames_changes_audio():
    u = synth_dataset(SynthSpec(1, 1, 1.0, seed=3))[0]
    speaker = _speaker_params(3, 0)
    perm = np.random.default_rng(0).permutation(u.tv.n_frames)
    shuffled = TvTrajectory(u.tv.values[perm])
    a = synth_audio(u.tv, speaker, np.random.default_rng(1))
    b = synth_audio(shuffled, speaker, np.random.default_rng(1))
    assert not np.allclose(a, b)


def test_la_controls_level():
    speaker = _speaker_params(0, 0)
    lo = TvTrajectory(np.tile([2.0, 10, 100, 10, 55, 7], (100, 1)))
    hi = TvTrajectory(np.tile([18.0, 10, 100, 10, 55, 7], (100, 1)))
    a = synth_audio(lo, speaker, np.random.default_rng(0))
    b = synth_audio(hi, speaker, np.random.default_rng(0))
    assert _rms_db(b) - _rms_db(a) > 10
