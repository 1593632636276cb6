from __future__ import annotations

import numpy as np
import pytest

from seqshot.core.audio import SAMPLE_RATE, Waveform
from seqshot.core.pretrain import ModelSpec, StrongModel, WeakModel, build_strong_graph, build_weak_graph


def tone(freq_hz: float, duration_s: float, amp: float = 0.5, sr: int = SAMPLE_RATE) -> Waveform:
    t = np.arange(int(round(duration_s * sr))) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq_hz * t), sr)


def place(background: np.ndarray, event: np.ndarray, start_s: float, sr: int = SAMPLE_RATE) -> Waveform:
    out = np.array(background, dtype=np.float64, copy=True)
    a = int(round(start_s * sr))
    out[a:a + event.size] += event
    return Waveform(out, sr)


def melody(freqs, note_s: float = 0.25, amp: float = 0.5) -> np.ndarray:
    return np.concatenate([tone(f, note_s, amp).samples for f in freqs])


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_spec() -> ModelSpec:
    return ModelSpec(widths=(2, 3, 4, 4, 4), hidden=5, n_classes=3)


@pytest.fixture
def tiny_weak(tiny_spec) -> WeakModel:
    return WeakModel(build_weak_graph(tiny_spec, seed=0))


@pytest.fixture
def tiny_strong(tiny_spec) -> StrongModel:
    return StrongModel(build_strong_graph(tiny_spec, seed=0))
