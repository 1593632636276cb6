"""Audio I/O, logmel extraction and signal-domain augmentations.

Everything here is a pure function of its inputs: randomness comes in through
an explicit ``numpy.random.Generator`` and inputs are never modified in place.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import gcd
from pathlib import Path
from typing import Tuple

import numpy as np
from scipy import signal
from scipy.io import wavfile

from seqshot.core.errors import (
    EmptyInputError,
    ParameterError,
    ShapeError,
    UnsupportedEncodingError,
    WavFormatError,
)

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16_000
N_MELS = 64
WIN_LENGTH = 400  # 25 ms
HOP_LENGTH = 160  # 10 ms
N_FFT = 512
F_MIN = 0.0
F_MAX = 8000.0
LOG_FLOOR = 1e-6

# Windowed-sinc resampler: zero crossings per side and Kaiser beta.
_RESAMPLE_HALF_TAPS = 8
_RESAMPLE_BETA = 5.0


@dataclass(frozen=True)
class FrontendConfig:
    """The logmel front end is fixed; the run config echoes these values and rejects others."""

    sample_rate: int = SAMPLE_RATE
    n_mels: int = N_MELS
    win_length: int = WIN_LENGTH
    hop_length: int = HOP_LENGTH
    n_fft: int = N_FFT
    f_min: float = F_MIN
    f_max: float = F_MAX


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self) -> None:
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size < 1:
            raise ShapeError("waveform must be a non-empty 1-d array", module="dsp_frontend")
        if not np.all(np.isfinite(s)):
            raise ParameterError("waveform contains non-finite samples", module="dsp_frontend")
        object.__setattr__(self, "samples", _freeze(s))

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def slice(self, start_s: float, end_s: float) -> "Waveform":
        a = max(0, int(round(start_s * self.sample_rate)))
        b = min(len(self), int(round(end_s * self.sample_rate)))
        return Waveform(self.samples[a:b], self.sample_rate)


@dataclass(frozen=True)
class LogMel:
    frames: np.ndarray
    frame_hop_s: float = field(default=HOP_LENGTH / SAMPLE_RATE)
    frame_len_s: float = field(default=WIN_LENGTH / SAMPLE_RATE)

    def __post_init__(self) -> None:
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 2 or f.shape[1] != N_MELS:
            raise ShapeError(f"logmel must be T x {N_MELS}, got {f.shape}", module="dsp_frontend")
        if not np.all(np.isfinite(f)):
            raise ParameterError("logmel contains non-finite entries", module="dsp_frontend")
        object.__setattr__(self, "frames", _freeze(f))

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])


def n_logmel_frames(n_samples: int) -> int:
    if n_samples < WIN_LENGTH:
        return 0
    return 1 + (n_samples - WIN_LENGTH) // HOP_LENGTH


# ---------------------------------------------------------------------------
# I/O


def _resample_filter(up: int, down: int) -> np.ndarray:
    max_rate = max(up, down)
    n = 2 * _RESAMPLE_HALF_TAPS * max_rate + 1
    return signal.firwin(n, 1.0 / max_rate, window=("kaiser", _RESAMPLE_BETA))


def _resample_ratio(x: np.ndarray, up: int, down: int) -> np.ndarray:
    g = gcd(up, down)
    up, down = up // g, down // g
    if up == down:
        return np.array(x, dtype=np.float64, copy=True)
    return signal.resample_poly(x, up, down, window=_resample_filter(up, down))


def load_wav(path: Path) -> Waveform:
    """Read a PCM16 RIFF/WAVE file as a mono 16 kHz waveform in [-1, 1]."""
    path = Path(path)
    try:
        rate, data = wavfile.read(str(path))
    except ValueError as ex:
        raise WavFormatError(f"{path}: malformed WAV: {ex}") from ex
    if data.dtype != np.int16:
        raise UnsupportedEncodingError(f"{path}: expected PCM16, found {data.dtype}")
    x = data.astype(np.float64) / 32768.0
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise WavFormatError(f"{path}: no samples")
    if rate != SAMPLE_RATE:
        logger.debug("resampling %s from %d Hz", path.name, rate)
        x = _resample_ratio(x, SAMPLE_RATE, int(rate))
    return Waveform(np.clip(x, -1.0, 1.0), SAMPLE_RATE)


def write_wav(path: Path, w: Waveform) -> None:
    """Write a mono PCM16 little-endian WAV file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    wavfile.write(str(path), int(w.sample_rate), pcm)


# ---------------------------------------------------------------------------
# logmel


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_centers() -> np.ndarray:
    """Center frequency (Hz) of each of the 64 HTK mel bands."""
    pts = mel_to_hz(np.linspace(hz_to_mel(F_MIN), hz_to_mel(F_MAX), N_MELS + 2))
    return pts[1:-1]


@lru_cache(maxsize=1)
def mel_filterbank() -> np.ndarray:
    """[n_mels, n_fft//2+1] triangular filters with unit peak."""
    freqs = np.arange(N_FFT // 2 + 1) * SAMPLE_RATE / N_FFT
    pts = mel_to_hz(np.linspace(hz_to_mel(F_MIN), hz_to_mel(F_MAX), N_MELS + 2))
    fb = np.zeros((N_MELS, freqs.size))
    for m in range(N_MELS):
        lo, ctr, hi = pts[m], pts[m + 1], pts[m + 2]
        up = (freqs - lo) / (ctr - lo)
        down = (hi - freqs) / (hi - ctr)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


@lru_cache(maxsize=1)
def _hann() -> np.ndarray:
    return signal.get_window("hann", WIN_LENGTH)


def logmel(w: Waveform) -> LogMel:
    x = w.samples
    if x.size < WIN_LENGTH:
        raise EmptyInputError(f"need at least {WIN_LENGTH} samples for one frame, got {x.size}")
    frames = np.lib.stride_tricks.sliding_window_view(x, WIN_LENGTH)[::HOP_LENGTH]
    spec = np.fft.rfft(frames * _hann(), n=N_FFT, axis=1)
    power = spec.real**2 + spec.imag**2
    mel = power @ mel_filterbank().T
    return LogMel(np.log(mel + LOG_FLOOR))


# ---------------------------------------------------------------------------
# augmentations


def augment_gain(w: Waveform, gain_db: float) -> Waveform:
    if not -20.0 <= gain_db <= 20.0:
        raise ParameterError(f"gain_db {gain_db} outside [-20, 20]", module="dsp_frontend")
    if gain_db == 0.0:
        return w
    y = np.clip(w.samples * 10.0 ** (gain_db / 20.0), -1.0, 1.0)
    return Waveform(y, w.sample_rate)


def augment_resample(w: Waveform, rate_factor: float) -> Waveform:
    """Playback-speed change; output length is round(N / rate_factor)."""
    if not 0.9 <= rate_factor <= 1.1:
        raise ParameterError(f"rate_factor {rate_factor} outside [0.9, 1.1]", module="dsp_frontend")
    if rate_factor == 1.0:
        return w
    frac = Fraction(rate_factor).limit_denominator(1000)
    y = _resample_ratio(w.samples, frac.denominator, frac.numerator)
    n_out = max(1, int(round(len(w) / rate_factor)))
    if y.size >= n_out:
        y = y[:n_out]
    else:
        y = np.pad(y, (0, n_out - y.size))
    return Waveform(np.clip(y, -1.0, 1.0), w.sample_rate)


def spec_augment(
    m: LogMel,
    rng: np.random.Generator,
    time_masks: int,
    freq_masks: int,
    max_t: int,
    max_f: int,
) -> LogMel:
    """Mask random time/frequency zones with the matrix mean.

    Mask widths are drawn uniformly from [1, max]."""
    T = m.n_frames
    if time_masks and not 0 < max_t < T:
        raise ParameterError(f"max_t {max_t} must be in (0, {T})", module="dsp_frontend")
    if freq_masks and not 0 < max_f < N_MELS:
        raise ParameterError(f"max_f {max_f} must be in (0, {N_MELS})", module="dsp_frontend")
    if not time_masks and not freq_masks:
        return m
    out = np.array(m.frames, copy=True)
    fill = float(m.frames.mean())
    for _ in range(time_masks):
        width = int(rng.integers(1, max_t + 1))
        start = int(rng.integers(0, T - width + 1))
        out[start:start + width, :] = fill
    for _ in range(freq_masks):
        width = int(rng.integers(1, max_f + 1))
        start = int(rng.integers(0, N_MELS - width + 1))
        out[:, start:start + width] = fill
    return LogMel(out)


def sample_mixup_lambda(rng: np.random.Generator, alpha: float = 0.3) -> float:
    return float(rng.beta(alpha, alpha))


def mixup(
    a: LogMel,
    b: LogMel,
    labels_a: np.ndarray,
    labels_b: np.ndarray,
    lam: float,
) -> Tuple[LogMel, np.ndarray]:
    la = np.asarray(labels_a, dtype=np.float64)
    lb = np.asarray(labels_b, dtype=np.float64)
    if a.frames.shape != b.frames.shape:
        raise ShapeError(f"mixup shape mismatch {a.frames.shape} vs {b.frames.shape}", module="dsp_frontend")
    if la.shape != lb.shape:
        raise ShapeError(f"mixup label shape mismatch {la.shape} vs {lb.shape}", module="dsp_frontend")
    if not 0.0 <= lam <= 1.0:
        raise ParameterError(f"mixup lambda {lam} outside [0, 1]", module="dsp_frontend")
    if lam == 1.0:
        return a, la
    feats = lam * a.frames + (1.0 - lam) * b.frames
    return LogMel(feats), lam * la + (1.0 - lam) * lb


def convolve_rir(w: Waveform, rir: Waveform) -> Waveform:
    """Linear convolution with an RIR, truncated to len(w), peak-normalized to w."""
    if len(rir) >= len(w):
        raise ParameterError("rir must be shorter than the signal", module="dsp_frontend")
    y = signal.fftconvolve(w.samples, rir.samples, mode="full")[: len(w)]
    peak_in = float(np.max(np.abs(w.samples)))
    peak_out = float(np.max(np.abs(y)))
    if peak_in > 0.0 and peak_out > 0.0:
        y = y * (peak_in / peak_out)
    return Waveform(y, w.sample_rate)
