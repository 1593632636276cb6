from __future__ import annotations

import numpy as np
import pytest

from seqshot.core import audio
from seqshot.core.audio import LogMel, Waveform
from seqshot.core.curation import (
    FRAME_S,
    CurationConfig,
    LoudnessModel,
    Segment,
    align_to_exemplar,
    curate,
    fit_loudness,
    loud_segments,
    match_across_shots,
    ncc,
)
from seqshot.core.curation import _percentile_frames
from seqshot.core.errors import CurationError, DegenerateInputError

from conftest import place, tone


def _spectrum_embedder(w: Waveform) -> np.ndarray:
    spec = np.abs(np.fft.rfft(w.samples, n=8000))
    return np.add.reduceat(spec, np.arange(0, spec.size, 100))


def _noise(rng, seconds: float, std: float = 0.003) -> np.ndarray:
    return rng.standard_normal(int(seconds * audio.SAMPLE_RATE)) * std


def test_segment_iou_and_validation():
    a = Segment(0, 1.0, 2.0)
    assert a.iou(Segment(0, 1.5, 2.5)) == pytest.approx(0.5 / 1.5)
    assert a.iou(Segment(0, 3.0, 4.0)) == 0.0
    assert a.iou(a) == 1.0
    with pytest.raises(CurationError):
        Segment(0, 2.0, 2.0)
    with pytest.raises(CurationError):
        Segment(0, -0.1, 1.0)


def test_fit_loudness_rejects_degenerate_input():
    with pytest.raises(DegenerateInputError):
        fit_loudness([LogMel(np.zeros((100, 64)))])
    with pytest.raises(DegenerateInputError):
        fit_loudness([LogMel(np.random.default_rng(0).standard_normal((10, 64)))])
    with pytest.raises(DegenerateInputError):
        fit_loudness([])


def test_loud_segments_merge_and_drop():
    frames = -np.ones((100, 64))
    frames[10:30] = 1.0
    frames[40:60] = 1.0  # 0.1 s gap: merged with the run before
    frames[80:85] = 1.0  # 0.05 s: too short
    model = LoudnessModel(weights=np.ones(64), bias=0.0)
    segs = loud_segments(model, LogMel(frames), shot_id=3)
    assert len(segs) == 1
    assert segs[0].shot_id == 3
    assert segs[0].onset_s == pytest.approx(0.10)
    assert segs[0].offset_s == pytest.approx(0.60)


def test_fitted_loudness_finds_a_tone(rng):
    w = place(_noise(rng, 2.0), tone(1000, 0.5).samples, 0.8)
    m = audio.logmel(w)
    model = fit_loudness([m])
    assert model.train_accuracy == 1.0
    segs = loud_segments(model, m)
    assert len(segs) == 1
    assert segs[0].iou(Segment(0, 0.8, 1.3)) > 0.85


def test_percentile_selection_takes_five_each_of_a_hundred():
    energy = np.random.default_rng(3).permutation(100).astype(np.float64)
    frames = energy[:, None] + np.zeros((100, 64))
    loud, quiet = _percentile_frames(frames, CurationConfig())
    assert len(loud) == 5 and len(quiet) == 5
    assert sorted(loud[:, 0]) == [95.0, 96.0, 97.0, 98.0, 99.0]
    assert sorted(quiet[:, 0]) == [0.0, 1.0, 2.0, 3.0, 4.0]
    loud2, quiet2 = _percentile_frames(np.concatenate([frames, frames]), CurationConfig())
    assert sorted(loud2[:, 0]) == sorted(2 * list(loud[:, 0]))
    assert sorted(quiet2[:, 0]) == sorted(2 * list(quiet[:, 0]))


def _tone_shots(seed: int):
    r = np.random.default_rng(seed)
    shots = []
    for _ in range(3):
        dur = float(r.uniform(1.2, 2.4))
        onset = float(r.uniform(0.1, dur - 0.6))
        x = place(_noise(r, dur, std=float(r.uniform(0.002, 0.02))), tone(float(r.uniform(500, 3000)), 0.5).samples, onset)
        shots.append(audio.logmel(x))
    return shots


@pytest.mark.parametrize("seed", range(12))
def test_fit_loudness_ignores_duplication_and_shot_order(seed):
    mels = _tone_shots(seed)
    frames = np.concatenate([m.frames for m in mels])
    once = fit_loudness(mels).decide(frames)
    assert np.array_equal(fit_loudness(mels + mels).decide(frames), once)
    assert np.array_equal(fit_loudness(mels[::-1]).decide(frames), once)


def test_ncc():
    a = np.arange(12.0).reshape(3, 4)
    assert ncc(a, 2 * a + 3) == pytest.approx(1.0)
    assert ncc(a, -a) == pytest.approx(-1.0)
    assert ncc(a, np.ones_like(a)) == 0.0


def test_align_to_exemplar_recovers_the_offset(rng):
    base = rng.standard_normal((60, 64))
    other = rng.standard_normal((60, 64))
    other[33:43] = base[10:20]
    segs = [Segment(0, 0.10, 0.20), Segment(1, 0.25, 0.50)]
    aligned = align_to_exemplar(segs, [LogMel(base), LogMel(other)])
    assert aligned[0].onset_s == pytest.approx(0.10)
    assert aligned[1].onset_s == pytest.approx(0.33)
    assert aligned[1].duration == pytest.approx(0.10)


def _brute_force_onset(frames: np.ndarray, start: int, end: int, exemplar: np.ndarray) -> int:
    e = exemplar.ravel() - exemplar.mean()
    scores = []
    for s in range(start, end - len(exemplar) + 1):
        w = frames[s : s + len(exemplar)].ravel()
        w = w - w.mean()
        scores.append(float(w @ e) / (np.linalg.norm(w) * np.linalg.norm(e)))
    scores = np.asarray(scores)
    return start + int(np.flatnonzero(scores >= scores.max() - 1e-9)[0])


def test_align_matches_exhaustive_search():
    r = np.random.default_rng(77)
    for case in range(200):
        length = int(r.integers(3, 10))
        n_shots = int(r.integers(2, 5))
        shots, spans = [], []
        for i in range(n_shots):
            span_len = length if i == 0 else int(r.integers(length + 1, 3 * length + 2))
            n = span_len + int(r.integers(2, 30))
            frames = r.standard_normal((n, 64))
            start = int(r.integers(0, n - span_len + 1))
            shots.append(frames)
            spans.append((start, start + span_len))
        exemplar = shots[0][spans[0][0] : spans[0][1]].copy()
        tie = None
        if case % 4 == 0 and spans[1][1] - spans[1][0] >= 2 * length:
            # two exact copies of the exemplar: the earlier one has to win
            a = spans[1][0] + int(r.integers(0, spans[1][1] - spans[1][0] - 2 * length + 1))
            b = a + length + int(r.integers(0, spans[1][1] - a - 2 * length + 1))
            shots[1][a : a + length] = exemplar
            shots[1][b : b + length] = exemplar
            tie = a
        segs = [Segment(i, s * FRAME_S, e * FRAME_S) for i, (s, e) in enumerate(spans)]
        aligned = align_to_exemplar(segs, [LogMel(f) for f in shots])
        assert aligned[0] == segs[0]
        for i in range(1, n_shots):
            want = _brute_force_onset(shots[i], *spans[i], exemplar)
            assert aligned[i].onset_s == pytest.approx(want * FRAME_S, abs=1e-9), case
            assert aligned[i].duration == pytest.approx(length * FRAME_S, abs=1e-9)
        if tie is not None:
            assert aligned[1].onset_s == pytest.approx(tie * FRAME_S, abs=1e-9)


def test_align_keeps_equal_length_segments(rng):
    shots = [LogMel(rng.standard_normal((50, 64))) for _ in range(3)]
    segs = [Segment(i, 0.1 * (i + 1), 0.1 * (i + 1) + 0.2) for i in range(3)]
    aligned = align_to_exemplar(segs, shots)
    for got, seg in zip(aligned, segs):
        assert got.onset_s == pytest.approx(seg.onset_s)
        assert got.offset_s == pytest.approx(seg.offset_s)


def test_align_needs_one_segment_per_shot():
    with pytest.raises(CurationError):
        align_to_exemplar([Segment(0, 0.0, 0.1)], [])


def _shots_with_distractors(rng):
    layout = [(0.4, 300.0, 1.6), (1.9, 2500.0, 0.3), (1.2, 4000.0, 2.2)]
    shots, candidates, targets = [], [], []
    for i, (t_on, d_freq, d_on) in enumerate(layout):
        x = _noise(rng, 3.0)
        x = place(x, tone(1000, 0.6).samples, t_on).samples
        x = place(x, tone(d_freq, 0.6).samples, d_on).samples
        shots.append(Waveform(x))
        target = Segment(i, t_on, t_on + 0.6)
        candidates.append([Segment(i, d_on, d_on + 0.6), target])
        targets.append(target)
    return shots, candidates, targets


def test_match_keeps_the_shared_sound(rng):
    shots, candidates, targets = _shots_with_distractors(rng)
    got = match_across_shots(candidates, shots, _spectrum_embedder)
    assert got == targets


def test_match_spans_first_onset_to_last_offset(rng):
    first = place(_noise(rng, 3.0), tone(1000, 0.5).samples, 1.0).samples
    first = place(first, tone(1000, 0.6).samples, 2.0)
    second = place(_noise(rng, 3.0), tone(1000, 0.6).samples, 0.5)
    candidates = [[Segment(0, 1.0, 1.5), Segment(0, 2.0, 2.6)], [Segment(1, 0.5, 1.1)]]
    got = match_across_shots(candidates, [first, second], _spectrum_embedder)
    assert got == [Segment(0, 1.0, 2.6), Segment(1, 0.5, 1.1)]


def test_single_candidates_are_kept_whatever_tau(rng):
    shots = [place(_noise(rng, 2.0), tone(f, 0.6).samples, 0.5) for f in (800.0, 2500.0, 5000.0)]
    candidates = [[Segment(i, 0.5, 1.1)] for i in range(3)]
    got = match_across_shots(candidates, shots, _spectrum_embedder, CurationConfig(tau=0.0))
    assert got == [c[0] for c in candidates]


def test_match_falls_back_to_longest_candidate(rng):
    shots, candidates, _ = _shots_with_distractors(rng)
    odd = Waveform(place(place(_noise(rng, 3.0), tone(5000, 0.5).samples, 0.2).samples, tone(6000, 0.8).samples, 1.5).samples)
    shots.append(odd)
    candidates.append([Segment(3, 0.2, 0.7), Segment(3, 1.5, 2.3)])
    got = match_across_shots(candidates, shots, _spectrum_embedder)
    assert got[3] == Segment(3, 1.5, 2.3)


def test_match_requires_candidates(rng):
    shots, candidates, _ = _shots_with_distractors(rng)
    candidates[1] = []
    with pytest.raises(CurationError):
        match_across_shots(candidates, shots, _spectrum_embedder)


def test_curate_end_to_end(rng):
    onsets = [0.5, 1.7, 1.1]
    shots = [place(_noise(rng, 3.0), tone(1000, 0.6).samples, t) for t in onsets]
    truth = [Segment(i, t, t + 0.6) for i, t in enumerate(onsets)]
    report = curate(shots, _spectrum_embedder, CurationConfig(), truth=truth)
    assert len(report.segments) == 3
    assert min(report.iou) > 0.7
    assert not any(report.fallback)
    lengths = {round(s.duration, 6) for s in report.segments}
    assert len(lengths) == 1
    doc = report.to_dict()
    assert doc["mean_iou"] == pytest.approx(float(np.mean(report.iou)), abs=1e-6)
    assert set(doc["shots"][0]) >= {"candidates", "matched_span", "aligned_span", "correlation", "iou"}


def test_curate_without_truth_has_no_iou(rng):
    shots = [place(_noise(rng, 2.0), tone(1000, 0.6).samples, 0.6) for _ in range(2)]
    report = curate(shots, _spectrum_embedder, truth=[None, None])
    assert report.iou is None
    assert "mean_iou" not in report.to_dict()
    with pytest.raises(CurationError):
        curate([], _spectrum_embedder)
