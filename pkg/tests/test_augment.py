from __future__ import annotations

import numpy as np
import pytest

from seqshot.core.audio import Waveform
from seqshot.core.augment import (
    NONTARGET,
    TARGET,
    AugmentConfig,
    DeltaConfig,
    DeltaEncoder,
    EmbeddingSequence,
    Provenance,
    TrainSet,
    build_train_set,
    delta_augment,
    embed_segment,
    read_donor_pairs,
    read_train_set,
    shuffle_blocks,
    synth_negative_mask,
    synth_negative_shuffle,
    time_shift_augment,
    train_delta,
    widen,
    write_donor_pairs,
    write_train_set,
)
from seqshot.core.curation import Segment
from seqshot.core.errors import AugmentError

from conftest import place, tone


def _chunk_embedder(w: Waveform) -> np.ndarray:
    """Two features per 320 ms chunk, at least two chunks."""
    n = max(2, len(w) // 5120)
    return np.array([[c.mean(), c.std()] for c in np.array_split(w.samples, n)])


def _seq(rng, t: int = 10, e: int = 3) -> EmbeddingSequence:
    return EmbeddingSequence(rng.standard_normal((t, e)))


def test_embedding_sequence_invariants(rng):
    with pytest.raises(AugmentError):
        EmbeddingSequence(np.zeros((1, 3)))
    with pytest.raises(AugmentError):
        EmbeddingSequence(np.array([[0.0, np.inf], [0.0, 0.0]]))
    s = _seq(rng)
    with pytest.raises(ValueError):
        s.frames[0, 0] = 1.0
    assert s.label == TARGET
    assert s.provenance is Provenance.CURATED


def test_widen():
    shot = Waveform(np.zeros(48000))
    seg = widen(Segment(0, 1.0, 1.5), shot, 1.3)
    assert seg.duration == pytest.approx(1.3)
    assert seg.onset_s == pytest.approx(0.6)
    edge = widen(Segment(0, 2.8, 3.0), shot, 1.3)
    assert edge.offset_s == pytest.approx(3.0)
    assert edge.onset_s == pytest.approx(1.7)
    long_enough = Segment(0, 0.0, 2.0)
    assert widen(long_enough, shot, 1.3) is long_enough
    short_shot = Waveform(np.zeros(8000))
    s = Segment(0, 0.1, 0.3)
    assert widen(s, short_shot, 1.3) is s


def test_time_shift_augment(rng):
    shot = place(np.zeros(48000), tone(800, 1.3).samples, 1.0)
    seg = Segment(2, 1.0, 2.3)
    out = time_shift_augment(shot, seg, 5, rng, _chunk_embedder)
    assert len(out) == 5
    assert all(s.provenance is Provenance.TIME_SHIFT and s.label == TARGET for s in out)
    assert all(s.source == 2 for s in out)
    assert {s.n_frames for s in out} == {4}
    base = embed_segment(shot, seg, _chunk_embedder)
    assert base.provenance is Provenance.CURATED
    with pytest.raises(AugmentError):
        time_shift_augment(Waveform(np.zeros(8000)), Segment(0, 0.0, 1.0), 1, rng, _chunk_embedder)


def test_mask_negative(rng):
    s = EmbeddingSequence(np.arange(40.0).reshape(20, 2))
    neg = synth_negative_mask(s, rng, (0.25, 0.5))
    assert neg.label == NONTARGET
    assert neg.provenance is Provenance.MASKED
    changed = np.flatnonzero(np.any(neg.frames != s.frames, axis=1))
    assert 5 <= changed.size <= 10
    assert np.all(np.diff(changed) == 1)
    assert np.allclose(neg.frames[changed], s.frames.mean(axis=0))
    with pytest.raises(AugmentError):
        synth_negative_mask(EmbeddingSequence(np.zeros((3, 2))), rng)


@pytest.mark.parametrize(
    "t,expected",
    [
        (10, [(0, 5), (5, 10)]),
        (12, [(0, 6), (6, 12)]),
        (23, [(0, 4), (4, 8), (8, 12), (12, 16), (16, 23)]),
        (4, [(0, 2), (2, 4)]),
    ],
)
def test_shuffle_blocks(t, expected):
    assert shuffle_blocks(t, 5.0) == expected


def test_shuffle_negative_permutes_blocks(rng):
    s = EmbeddingSequence(np.arange(20.0).reshape(10, 2))
    neg = synth_negative_shuffle(s, rng)
    assert neg.label == NONTARGET and neg.provenance is Provenance.SHUFFLED
    assert not np.array_equal(neg.frames, s.frames)
    assert sorted(map(tuple, neg.frames)) == sorted(map(tuple, s.frames))
    with pytest.raises(AugmentError):
        synth_negative_shuffle(EmbeddingSequence(np.zeros((3, 2))), rng)


def test_untrained_delta_is_identity(rng):
    model = DeltaEncoder.build(3, DeltaConfig(hidden=8, z_dim=2))
    target = _seq(rng, 6)
    donor = (_seq(rng, 4), _seq(rng, 4))
    out = delta_augment(model, target, donor, 3, rng)
    assert len(out) == 3
    for s in out:
        assert s.provenance is Provenance.DELTA
        assert np.allclose(s.frames, target.frames)
    with pytest.raises(AugmentError):
        delta_augment(model, _seq(rng, 6, 5), donor, 1, rng)
    with pytest.raises(AugmentError):
        delta_augment(model, target, (_seq(rng, 4), _seq(rng, 5)), 1, rng)


def test_train_delta_learns_an_offset(rng):
    pairs = []
    for _ in range(10):
        clean = rng.standard_normal((5, 4))
        pairs.append((EmbeddingSequence(clean), EmbeddingSequence(clean + 0.5)))
    model = train_delta(pairs, DeltaConfig(hidden=16, z_dim=2, epochs=200, lr=0.01, seed=1))
    assert model.baseline_l1 == pytest.approx(0.5)
    assert model.held_out_l1 < 0.5 * model.baseline_l1
    assert len(model.loss_curve) == 200


def test_train_delta_input_errors(rng):
    with pytest.raises(AugmentError):
        train_delta([])
    with pytest.raises(AugmentError):
        train_delta([(_seq(rng, 4), _seq(rng, 5))])


def test_delta_save_load(tmp_path, rng):
    model = DeltaEncoder.build(3, DeltaConfig(hidden=8, z_dim=2))
    model.decoder.set_params({k: rng.standard_normal(v.shape).astype(np.float32) for k, v in model.decoder.params.items()})
    model.save(tmp_path)
    back = DeltaEncoder.load(tmp_path)
    c, d = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    assert back.z_dim == 2 and back.dim == 3
    assert np.allclose(back.decode(c, back.encode(c, d)), model.decode(c, model.encode(c, d)))


def _curated():
    out = []
    for k, onset in enumerate([0.5, 1.4]):
        shot = place(np.zeros(48000), tone(900, 0.6).samples, onset)
        out.append((shot, Segment(k, onset, onset + 0.6)))
    return out


def test_build_train_set_without_delta():
    cfg = AugmentConfig(n_time_shift=3, n_delta=0, n_masked=2, n_shuffled=1)
    ts = build_train_set(_curated(), _chunk_embedder, cfg)
    assert ts.window_frames == 4
    assert ts.counts() == {"curated": 2, "time_shift": 6, "delta": 0, "masked": 4, "shuffled": 2}
    assert ts.n_positive == 8 and ts.n_negative == 6


def test_build_train_set_refuses_to_drop_delta_positives(rng):
    cfg = AugmentConfig(n_time_shift=3, n_delta=2, n_masked=2, n_shuffled=1)
    with pytest.raises(AugmentError, match="n_delta=2"):
        build_train_set(_curated(), _chunk_embedder, cfg)
    with pytest.raises(AugmentError):
        build_train_set(_curated(), _chunk_embedder, cfg, delta=DeltaEncoder.build(2, DeltaConfig(hidden=4, z_dim=2)))
    with pytest.raises(AugmentError):
        build_train_set(_curated(), _chunk_embedder, cfg, donors=[(_seq(rng, 4, 2), _seq(rng, 4, 2))])


def test_default_composition_for_three_shots(rng):
    curated = _curated()
    curated.append((place(np.zeros(48000), tone(900, 0.6).samples, 0.9), Segment(2, 0.9, 1.5)))
    model = DeltaEncoder.build(2, DeltaConfig(hidden=4, z_dim=2))
    donors = [(_seq(rng, 4, 2), _seq(rng, 4, 2))]
    ts = build_train_set(curated, _chunk_embedder, AugmentConfig(), delta=model, donors=donors)
    assert len(ts.items) == 99
    assert ts.n_positive == 51 and ts.n_negative == 48
    assert ts.counts() == {"curated": 3, "time_shift": 24, "delta": 24, "masked": 24, "shuffled": 24}


def test_build_train_set_with_delta(rng):
    cfg = AugmentConfig(n_time_shift=1, n_delta=2, n_masked=1, n_shuffled=1)
    model = DeltaEncoder.build(2, DeltaConfig(hidden=4, z_dim=2))
    donors = [(_seq(rng, 4, 2), _seq(rng, 4, 2))]
    ts = build_train_set(_curated(), _chunk_embedder, cfg, delta=model, donors=donors)
    assert ts.counts()["delta"] == 4
    again = build_train_set(_curated(), _chunk_embedder, cfg, delta=model, donors=donors)
    assert all(np.array_equal(a.frames, b.frames) for a, b in zip(ts.items, again.items))
    with pytest.raises(AugmentError):
        build_train_set([], _chunk_embedder, cfg)


def test_train_set_write_read(tmp_path):
    ts = build_train_set(_curated(), _chunk_embedder, AugmentConfig(n_time_shift=1, n_delta=0, n_masked=1, n_shuffled=1))
    write_train_set(tmp_path / "ts", ts)
    back = read_train_set(tmp_path / "ts")
    assert back.window_frames == ts.window_frames
    assert back.counts() == ts.counts()
    for a, b in zip(ts.items, back.items):
        assert a.label == b.label and a.source == b.source
        assert np.allclose(a.frames, b.frames, atol=1e-6)


def test_donor_pairs_write_read(tmp_path, rng):
    pairs = [(_seq(rng, 4), _seq(rng, 4)), (_seq(rng, 6), _seq(rng, 6))]
    write_donor_pairs(tmp_path / "donors", pairs)
    back = read_donor_pairs(tmp_path / "donors")
    assert len(back) == 2
    assert back[1][0].n_frames == 6
    write_train_set(tmp_path / "odd", TrainSet([pairs[0][0]], 4))
    with pytest.raises(AugmentError):
        read_donor_pairs(tmp_path / "odd")
