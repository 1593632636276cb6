from __future__ import annotations

import numpy as np
import pytest
from scipy.io import wavfile

from seqshot.core import audio, codec
from seqshot.core.audio import LOG_FLOOR, SAMPLE_RATE, LogMel, Waveform
from seqshot.core.errors import (
    EmptyInputError,
    ParameterError,
    SeqshotError,
    ShapeError,
    UnsupportedEncodingError,
    WavFormatError,
)

from conftest import tone


def _peak_hz(x: np.ndarray, sr: int = SAMPLE_RATE) -> float:
    spec = np.abs(np.fft.rfft(x))
    return float(np.argmax(spec) * sr / x.size)


def test_load_wav_silence(tmp_path):
    p = tmp_path / "zeros.wav"
    wavfile.write(str(p), 16000, np.zeros(16000, dtype=np.int16))
    w = audio.load_wav(p)
    assert len(w) == 16000
    assert w.sample_rate == 16000
    assert np.all(w.samples == 0.0)


def test_load_wav_resamples_32k_to_16k(tmp_path):
    p = tmp_path / "hi.wav"
    wavfile.write(str(p), 32000, np.zeros(32000, dtype=np.int16))
    assert len(audio.load_wav(p)) == 16000


def test_load_wav_resampled_tone_keeps_its_frequency(tmp_path):
    t = np.arange(48000) / 48000
    p = tmp_path / "tone48k.wav"
    wavfile.write(str(p), 48000, (0.5 * 32767 * np.sin(2 * np.pi * 440 * t)).astype(np.int16))
    w = audio.load_wav(p)
    assert abs(_peak_hz(w.samples) - 440.0) <= 1.0


def test_load_wav_stereo_is_averaged(tmp_path):
    p = tmp_path / "stereo.wav"
    data = np.stack([np.full(800, 1000, np.int16), np.full(800, 3000, np.int16)], axis=1)
    wavfile.write(str(p), 16000, data)
    w = audio.load_wav(p)
    assert np.allclose(w.samples, 2000 / 32768.0)


def test_load_wav_rejects_float_encoding(tmp_path):
    p = tmp_path / "float.wav"
    wavfile.write(str(p), 16000, np.zeros(100, dtype=np.float32))
    with pytest.raises(UnsupportedEncodingError):
        audio.load_wav(p)


def test_load_wav_rejects_garbage(tmp_path):
    p = tmp_path / "junk.wav"
    p.write_bytes(b"RIFF\x00\x00\x00\x00JUNKJUNK")
    with pytest.raises(WavFormatError) as ei:
        audio.load_wav(p)
    assert str(ei.value).startswith("[dsp_frontend]")


def test_write_then_load_wav(tmp_path):
    w = tone(1000, 0.1)
    p = tmp_path / "t.wav"
    audio.write_wav(p, w)
    back = audio.load_wav(p)
    assert len(back) == len(w)
    assert np.max(np.abs(back.samples - w.samples)) < 1e-4


def test_waveform_invariants():
    with pytest.raises(ShapeError):
        Waveform(np.zeros(0))
    with pytest.raises(ParameterError):
        Waveform(np.array([0.0, np.nan]))
    w = Waveform(np.zeros(10))
    with pytest.raises(ValueError):
        w.samples[0] = 1.0


def test_logmel_frame_count_and_silence():
    m = audio.logmel(Waveform(np.zeros(16000)))
    assert m.frames.shape == (98, 64)
    assert np.allclose(m.frames, np.log(LOG_FLOOR))
    assert audio.n_logmel_frames(16000) == 98


def test_logmel_too_short():
    with pytest.raises(EmptyInputError):
        audio.logmel(Waveform(np.zeros(399)))


def test_logmel_band_32_tone():
    f = audio.mel_band_centers()[32]
    m = audio.logmel(tone(f, 1.0))
    assert int(np.argmax(m.frames.mean(axis=0))) == 32


def test_logmel_shift_equivariance(rng):
    x = rng.standard_normal(8000) * 0.1
    k = 3
    shifted = Waveform(np.r_[np.zeros(k * 160), x])
    a = audio.logmel(Waveform(x)).frames
    b = audio.logmel(shifted).frames
    n = a.shape[0]
    assert np.allclose(b[k:k + n], a, atol=1e-9)


def test_logmel_monotone_in_power(rng):
    x = rng.standard_normal(4000) * 0.05
    a = audio.logmel(Waveform(x)).frames
    b = audio.logmel(Waveform(2.0 * x)).frames
    assert np.all(b >= a)


def test_logmel_rejects_wrong_band_count():
    with pytest.raises(ShapeError):
        LogMel(np.zeros((3, 32)))


def test_gain():
    w = Waveform(np.full(100, 0.1))
    assert audio.augment_gain(w, 0.0) is w
    assert np.allclose(audio.augment_gain(w, 20.0).samples, 1.0)
    assert np.allclose(audio.augment_gain(Waveform(np.full(100, 0.5)), 20.0).samples, 1.0)
    with pytest.raises(ParameterError):
        audio.augment_gain(w, 21.0)


def test_gain_inverse_without_clipping(rng):
    w = Waveform(rng.uniform(-0.05, 0.05, 500))
    back = audio.augment_gain(audio.augment_gain(w, 6.0), -6.0)
    assert np.allclose(back.samples, w.samples)


def test_resample_length_and_pitch():
    w = tone(440, 1.0)
    assert audio.augment_resample(w, 1.0) is w
    fast = audio.augment_resample(w, 1.1)
    assert len(fast) == round(16000 / 1.1)
    assert fast.sample_rate == SAMPLE_RATE
    assert abs(_peak_hz(fast.samples) - 484.0) <= 16000 / len(fast) + 1e-9
    with pytest.raises(ParameterError):
        audio.augment_resample(w, 1.2)


def test_spec_augment(rng):
    m = audio.logmel(tone(1000, 0.5))
    assert audio.spec_augment(m, rng, 0, 0, 5, 5) is m
    before = np.array(m.frames, copy=True)
    a = audio.spec_augment(m, np.random.default_rng(3), 2, 2, 10, 8)
    b = audio.spec_augment(m, np.random.default_rng(3), 2, 2, 10, 8)
    assert np.array_equal(a.frames, b.frames)
    assert np.array_equal(m.frames, before)
    with pytest.raises(ParameterError):
        audio.spec_augment(m, rng, 1, 0, m.n_frames, 4)


def test_spec_augment_single_freq_mask_extent(rng):
    m = LogMel(rng.standard_normal((20, 64)))
    out = audio.spec_augment(m, np.random.default_rng(0), 0, 1, 5, 4)
    changed = np.any(out.frames != m.frames, axis=0)
    band_runs = np.flatnonzero(changed)
    assert 1 <= band_runs.size <= 4
    assert np.all(np.diff(band_runs) == 1)
    fill = m.frames.mean()
    assert np.allclose(out.frames[:, band_runs], fill)


def test_mixup():
    a = LogMel(np.zeros((2, 64)))
    b = LogMel(np.ones((2, 64)))
    la, lb = np.array([0, 1, 0]), np.array([0, 0, 1])
    same, labels = audio.mixup(a, b, la, lb, 1.0)
    assert same is a and np.array_equal(labels, la)
    mixed, labels = audio.mixup(a, b, la, lb, 0.5)
    assert np.allclose(mixed.frames, 0.5)
    assert np.allclose(labels, [0, 0.5, 0.5])
    with pytest.raises(ShapeError):
        audio.mixup(a, LogMel(np.zeros((3, 64))), la, lb, 0.5)


def test_mixup_lambda_in_unit_interval(rng):
    lams = [audio.sample_mixup_lambda(rng) for _ in range(200)]
    assert all(0.0 <= v <= 1.0 for v in lams)


def test_convolve_rir_identity_and_shift(rng):
    w = Waveform(rng.uniform(-0.5, 0.5, 2000))
    imp = np.zeros(300)
    imp[0] = 1.0
    assert np.allclose(audio.convolve_rir(w, Waveform(imp)).samples, w.samples)
    delayed = np.zeros(300)
    delayed[160] = 1.0
    y = audio.convolve_rir(w, Waveform(delayed)).samples
    peak_ratio = np.max(np.abs(w.samples)) / np.max(np.abs(w.samples[:-160]))
    assert np.allclose(y[160:], w.samples[:-160] * peak_ratio)


@pytest.mark.parametrize("n,m", [(64, 7), (500, 100), (4096, 333)])
def test_convolve_rir_matches_direct_convolution(n, m):
    r = np.random.default_rng(n + m)
    x = r.uniform(-0.5, 0.5, n)
    h = r.standard_normal(m)
    direct = np.array([sum(x[i - j] * h[j] for j in range(min(i + 1, m))) for i in range(n)])
    direct *= np.max(np.abs(x)) / np.max(np.abs(direct))
    got = audio.convolve_rir(Waveform(x), Waveform(h)).samples
    assert np.max(np.abs(got - direct)) < 1e-9


def test_convolve_rir_requires_shorter_rir():
    with pytest.raises(ParameterError):
        audio.convolve_rir(Waveform(np.ones(10)), Waveform(np.ones(10)))


def test_logmel_codec(tmp_path):
    m = audio.logmel(tone(700, 0.3))
    codec.write_logmel(tmp_path / "m.sqlm", m.frames)
    raw = (tmp_path / "m.sqlm").read_bytes()
    assert raw[:4] == b"SQLM"
    back = codec.read_logmel(tmp_path / "m.sqlm")
    assert back.shape == m.frames.shape
    assert np.allclose(back, m.frames.astype(np.float32))


def test_codec_rejects_wrong_magic():
    data = codec.encode_pseudo_labels(np.zeros((2, 3), dtype=np.uint8))
    with pytest.raises(SeqshotError):
        codec.decode_logmel(data)
