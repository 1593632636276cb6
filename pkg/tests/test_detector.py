from __future__ import annotations

import numpy as np
import pytest

from seqshot.core import audio
from seqshot.core.audio import Waveform
from seqshot.core.augment import (
    NONTARGET,
    TARGET,
    AugmentConfig,
    DeltaEncoder,
    EmbeddingSequence,
    TrainSet,
    build_train_set,
    synth_negative_mask,
    synth_negative_shuffle,
)
from seqshot.core.curation import Segment
from seqshot.core.detector import (
    DetectorConfig,
    DetectorNet,
    MarginConfig,
    clip_score,
    detect_frames,
    detect_stream,
    detector_loss,
    margin_distance,
    pad_to_window,
    score,
    train_detector,
)
from seqshot.core.errors import DetectorError, SingleClassError, TooShortError
from seqshot.nn import Graph

from conftest import melody, place, tone

SMALL = DetectorConfig(proj_dim=6, n_layers=2, kernel=2, epochs=100, lr=0.01, batch_size=0, seed=3)


def _easy_set(rng, n: int = 6, t: int = 4, e: int = 3):
    items = []
    for k in range(n):
        items.append(EmbeddingSequence(1.0 + 0.1 * rng.standard_normal((t, e)), TARGET))
        items.append(EmbeddingSequence(-1.0 + 0.1 * rng.standard_normal((t, e)), NONTARGET))
    return items


def _float64(net: DetectorNet) -> Graph:
    g = Graph.from_architecture(net.graph.architecture(), dtype=np.float64)
    g.params = {k: v.astype(np.float64) for k, v in net.graph.params.items()}
    return g


def test_margin_config_validation():
    with pytest.raises(DetectorError):
        MarginConfig(eps=0.0)
    with pytest.raises(DetectorError):
        MarginConfig(layer_reduce="max")


def test_build_layout():
    net = DetectorNet.build(5, DetectorConfig(proj_dim=4, n_layers=3), window_frames=7)
    assert net.conv_layers() == ["conv0", "conv1", "conv2"]
    assert [net.graph.layer(n).dilation for n in net.conv_layers()] == [1, 2, 4]
    assert net.window_frames == 7
    assert 0.0 < score(net, np.zeros((7, 5))) < 1.0


def test_margin_is_antisymmetric(rng):
    net = DetectorNet.build(3, SMALL)
    x = rng.standard_normal((5, 3))
    for layer in ("input", "conv0", "conv1"):
        assert margin_distance(net, x, 0, layer) == pytest.approx(-margin_distance(net, x, 1, layer), rel=1e-6)
    with pytest.raises(DetectorError):
        margin_distance(net, x, 2)
    with pytest.raises(DetectorError):
        margin_distance(net, x, 0, "nope")


@pytest.mark.parametrize("reduce", ["sum", "mean"])
def test_loss_gradient_with_frozen_denominators(rng, reduce):
    net = DetectorNet.build(3, SMALL)
    g = _float64(net)
    batch = _easy_set(rng, n=2)
    cfg = MarginConfig(gamma=100.0, bce_weight=0.3, layer_reduce=reduce)
    res = detector_loss(g, batch, cfg)
    h = 1e-6
    for key in ("proj.weight", "conv1.weight", "head.bias"):
        p = g.params[key]
        idx = tuple(rng.integers(0, s) for s in p.shape)
        orig = p[idx]
        p[idx] = orig + h
        up = detector_loss(g, batch, cfg, denominators=res.denominators).loss
        p[idx] = orig - h
        down = detector_loss(g, batch, cfg, denominators=res.denominators).loss
        p[idx] = orig
        assert (up - down) / (2 * h) == pytest.approx(res.grads[key][idx], rel=1e-4, abs=1e-9)


def test_loss_reports_margins_per_layer(rng):
    net = DetectorNet.build(3, SMALL)
    res = detector_loss(net, _easy_set(rng, n=1), MarginConfig(layers=("input", "conv1")))
    assert len(res.margins) == 2
    assert set(res.margins[0]) == {"input", "conv1"}
    with pytest.raises(DetectorError):
        detector_loss(net, [])


def test_train_detector_separates_an_easy_set(rng):
    items = _easy_set(rng)
    net = train_detector(TrainSet(items, 4), SMALL)
    assert net.train_accuracy == 1.0
    assert len(net.loss_curve) == SMALL.epochs
    assert net.loss_curve[-1] < net.loss_curve[0]
    assert net.window_frames == 4


def test_train_detector_needs_both_classes(rng):
    with pytest.raises(SingleClassError):
        train_detector([s for s in _easy_set(rng) if s.label == TARGET], SMALL)
    with pytest.raises(SingleClassError):
        train_detector([], SMALL)


def test_detect_frames_windows(rng):
    net = DetectorNet.build(3, SMALL, window_frames=4)
    frames = rng.standard_normal((10, 3))
    assert detect_frames(net, frames).shape == (7,)
    assert detect_frames(net, frames, hop_frames=2).shape == (4,)
    assert detect_frames(net, frames, window_frames=10).shape == (1,)
    with pytest.raises(TooShortError):
        detect_frames(net, frames[:3])
    with pytest.raises(DetectorError):
        detect_frames(DetectorNet.build(3, SMALL), frames)


def test_pad_to_window():
    w = Waveform(np.ones(3200))
    padded = pad_to_window(w, 4)
    assert len(padded) == 400 + (4 * 32 - 1) * 160
    assert np.all(padded.samples[:3200] == 1.0) and np.all(padded.samples[3200:] == 0.0)
    long = Waveform(np.zeros(48000))
    assert pad_to_window(long, 4) is long


def test_detect_stream(tiny_strong):
    net = DetectorNet.build(tiny_strong.embed_dim, SMALL, window_frames=2)
    stream = detect_stream(net, tiny_strong, tone(600, 1.5))
    # 1.5 s -> 148 logmel frames -> 4 strong frames -> 3 windows of 2
    assert [t for t, _ in stream] == [0.0, 0.32, 0.64]
    assert clip_score(stream) == max(s for _, s in stream)
    short = tone(600, 0.2)
    with pytest.raises(TooShortError):
        detect_stream(net, tiny_strong, short)
    assert len(detect_stream(net, tiny_strong, short, pad=True)) == 1


def test_detector_save_load(tmp_path, rng):
    net = train_detector(_easy_set(rng, n=2), DetectorConfig(proj_dim=4, n_layers=1, epochs=2, seed=1))
    net.save(tmp_path / "det.sqck")
    back = DetectorNet.load(tmp_path / "det.sqck")
    x = rng.standard_normal((4, 3))
    assert score(back, x) == pytest.approx(score(net, x))
    assert back.window_frames == 4


# ---------------------------------------------------------------------------
# trained on a three-shot episode

MELODY = (523.0, 659.0, 784.0, 988.0, 880.0, 698.0)  # 6 x 0.25 s


def _chunk_logmel(w: Waveform) -> np.ndarray:
    """Logmel averaged over 32-frame chunks: one row per 320 ms, like the strong model."""
    f = audio.logmel(w).frames
    n = f.shape[0] // 32
    return f[: n * 32].reshape(n, 32, f.shape[1]).mean(axis=1) / 10.0


def _background(r, seconds: float) -> np.ndarray:
    return r.standard_normal(int(seconds * audio.SAMPLE_RATE)) * 0.003


@pytest.fixture(scope="module")
def three_shot_detector():
    r = np.random.default_rng(11)
    target = melody(MELODY, amp=0.4)
    curated = []
    for k, onset in enumerate((0.6, 1.5, 1.1)):
        shot = place(_background(r, 3.5), target * float(r.uniform(0.8, 1.2)), onset)
        curated.append((shot, Segment(k, onset, onset + 1.5)))
    clean = curated[0][0]
    degraded = Waveform(clean.samples + _background(r, 3.5) * 5)
    donors = [(EmbeddingSequence(_chunk_logmel(clean)), EmbeddingSequence(_chunk_logmel(degraded)))]
    ts = build_train_set(curated, _chunk_logmel, AugmentConfig(), delta=DeltaEncoder.build(64), donors=donors)
    return ts, train_detector(ts, DetectorConfig())


@pytest.mark.slow
def test_detector_fits_the_default_train_set(three_shot_detector):
    ts, net = three_shot_detector
    assert len(ts.items) == 99 and ts.n_positive == 51
    assert net.train_accuracy >= 0.95
    positives = [s for s in ts.items if s.label == TARGET]
    assert np.mean([score(net, s) for s in positives]) > 0.9


@pytest.mark.slow
def test_synthesized_negatives_score_below_their_source(three_shot_detector):
    ts, net = three_shot_detector
    r = np.random.default_rng(5)
    below = []
    for s in ts.items:
        if s.label != TARGET:
            continue
        ref = score(net, s)
        below.append(score(net, synth_negative_mask(s, r)) < ref)
        below.append(score(net, synth_negative_shuffle(s, r)) < ref)
    assert np.mean(below) >= 0.9


@pytest.mark.slow
def test_planted_target_is_found_in_a_long_clip(three_shot_detector):
    ts, net = three_shot_detector
    r = np.random.default_rng(12)
    clip = place(_background(r, 10.0), melody(MELODY, amp=0.4), 3.0)
    scores = detect_frames(net, _chunk_logmel(clip))
    assert scores.shape == (31 - ts.window_frames + 1,)
    start = int(np.argmax(scores)) * 0.32
    assert abs(start - 3.0) <= 0.64
