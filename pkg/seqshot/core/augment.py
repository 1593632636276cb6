"""Expand curated enrollment segments into a detector training set.

Positives come from the curated segments themselves, from time-shifted
windows around them and from Delta-encoder deformations learned on
(clean, degraded) embedding pairs. Negatives are synthesized from the
positives by masking or block-shuffling frames, so no non-target audio is
ever read.
"""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from seqshot.core import codec
from seqshot.core.audio import Waveform
from seqshot.core.curation import Segment
from seqshot.core.errors import AugmentError
from seqshot.core.utils import derive_rng, safe_write_bytes, safe_write_text
from seqshot.nn import AdamState, Graph, Linear, ReLU, adamw_step, backward, forward, load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

FRAME_HOP_S = 0.32
TARGET, NONTARGET = 1, 0

SequenceEmbedder = Callable[[Waveform], np.ndarray]


class Provenance(enum.IntEnum):
    CURATED = 0
    TIME_SHIFT = 1
    DELTA = 2
    MASKED = 3
    SHUFFLED = 4


@dataclass(frozen=True)
class EmbeddingSequence:
    frames: np.ndarray  # (T, E)
    label: int = TARGET
    provenance: Provenance = Provenance.CURATED
    source: int = -1  # curated shot the sequence derives from
    frame_hop_s: float = FRAME_HOP_S

    def __post_init__(self) -> None:
        f = np.array(self.frames, dtype=np.float64, copy=True)
        if f.ndim != 2 or f.shape[0] < 2:
            raise AugmentError(f"embedding sequence needs shape (T >= 2, E), got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise AugmentError("embedding sequence has non-finite entries")
        f.setflags(write=False)
        object.__setattr__(self, "frames", f)
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def dim(self) -> int:
        return int(self.frames.shape[1])

    def derive(self, frames: np.ndarray, label: int, provenance: Provenance) -> "EmbeddingSequence":
        return EmbeddingSequence(frames, label, provenance, self.source, self.frame_hop_s)


@dataclass(frozen=True)
class AugmentConfig:
    n_time_shift: int = 8
    n_delta: int = 8
    n_masked: int = 8
    n_shuffled: int = 8
    enlarge_s: float = 0.5
    min_window_s: float = 1.3  # 4 strong frames
    mask_min: float = 0.25
    mask_max: float = 0.5
    block_div: float = 5.0
    seed: int = 0


@dataclass(frozen=True)
class DeltaConfig:
    hidden: int = 128
    z_dim: int = 16
    epochs: int = 200
    batch_size: int = 64
    lr: float = 0.001
    weight_decay: float = 0.0
    holdout_frac: float = 0.2
    per_sequence: bool = False
    seed: int = 0


# ---------------------------------------------------------------------------
# time-domain target augmentation


def _window(shot: Waveform, start_s: float, n_samples: int) -> Waveform:
    a = int(round(start_s * shot.sample_rate))
    a = min(max(a, 0), len(shot) - n_samples)
    return Waveform(shot.samples[a : a + n_samples], shot.sample_rate)


def widen(seg: Segment, shot: Waveform, min_s: float) -> Segment:
    """Grow a segment symmetrically to at least ``min_s`` within the shot."""
    if seg.duration >= min_s or shot.duration <= min_s:
        return seg
    mid = 0.5 * (seg.onset_s + seg.offset_s)
    onset = min(max(0.0, mid - min_s / 2), shot.duration - min_s)
    return Segment(seg.shot_id, onset, onset + min_s)


def time_shift_augment(
    shot: Waveform,
    seg: Segment,
    n: int,
    rng: np.random.Generator,
    embedder: SequenceEmbedder,
    enlarge_s: float = 0.5,
) -> List[EmbeddingSequence]:
    """n windows of the segment's duration at random offsets within its enlarged bounds."""
    if seg.duration > shot.duration + 1e-9:
        raise AugmentError(f"segment of {seg.duration:.3f} s is longer than its {shot.duration:.3f} s shot")
    n_samples = min(len(shot), int(round(seg.duration * shot.sample_rate)))
    dur = n_samples / shot.sample_rate
    lo = max(0.0, seg.onset_s - enlarge_s / 2)
    hi = min(shot.duration, seg.offset_s + enlarge_s / 2)
    out = []
    for _ in range(n):
        start = float(rng.uniform(lo, max(lo, hi - dur)))
        frames = embedder(_window(shot, start, n_samples))
        out.append(EmbeddingSequence(frames, TARGET, Provenance.TIME_SHIFT, seg.shot_id))
    return out


def embed_segment(shot: Waveform, seg: Segment, embedder: SequenceEmbedder) -> EmbeddingSequence:
    n_samples = min(len(shot), int(round(seg.duration * shot.sample_rate)))
    return EmbeddingSequence(embedder(_window(shot, seg.onset_s, n_samples)), TARGET, Provenance.CURATED, seg.shot_id)


# ---------------------------------------------------------------------------
# Delta-encoder


@dataclass
class DeltaEncoder:
    """z = Enc(clean || degraded); degraded ~ clean + Dec(clean || z).

    The decoder's output layer starts at zero, so an untrained model is the
    identity deformation.
    """

    encoder: Graph
    decoder: Graph
    held_out_l1: float = float("nan")
    baseline_l1: float = float("nan")
    loss_curve: List[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return int(self.decoder.meta["dim"])

    @property
    def z_dim(self) -> int:
        return int(self.encoder.meta["z_dim"])

    @classmethod
    def build(cls, dim: int, cfg: DeltaConfig = DeltaConfig()) -> "DeltaEncoder":
        meta = {"dim": dim, "z_dim": cfg.z_dim, "hidden": cfg.hidden}
        enc = Graph(
            [Linear("enc_in", 2 * dim, cfg.hidden), ReLU("enc_relu"), Linear("enc_out", cfg.hidden, cfg.z_dim)],
            kind="delta", seed=cfg.seed, meta={**meta, "role": "encoder"},
        )
        dec = Graph(
            [Linear("dec_in", dim + cfg.z_dim, cfg.hidden), ReLU("dec_relu"), Linear("dec_out", cfg.hidden, dim)],
            kind="delta", seed=cfg.seed + 1, meta={**meta, "role": "decoder"},
        )
        dec.set_params({k: np.zeros_like(v) for k, v in dec.params.items() if k.startswith("dec_out.")})
        return cls(enc, dec)

    def encode(self, clean: np.ndarray, degraded: np.ndarray) -> np.ndarray:
        z, _ = forward(self.encoder, np.concatenate([clean, degraded], axis=-1), keep=False)
        return np.asarray(z, dtype=np.float64)

    def decode(self, clean: np.ndarray, z: np.ndarray) -> np.ndarray:
        r, _ = forward(self.decoder, np.concatenate([clean, z], axis=-1), keep=False)
        return clean + np.asarray(r, dtype=np.float64)

    def save(self, directory: Path) -> None:
        save_checkpoint(self.encoder, Path(directory) / "delta_encoder.sqck")
        save_checkpoint(self.decoder, Path(directory) / "delta_decoder.sqck")

    @classmethod
    def load(cls, directory: Path) -> "DeltaEncoder":
        return cls(
            load_checkpoint(Path(directory) / "delta_encoder.sqck", expected_kind="delta"),
            load_checkpoint(Path(directory) / "delta_decoder.sqck", expected_kind="delta"),
        )


def _l1(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.abs(a - b)))


def train_delta(
    pairs: Sequence[Tuple[EmbeddingSequence, EmbeddingSequence]],
    cfg: DeltaConfig = DeltaConfig(),
) -> DeltaEncoder:
    """Per-frame L1 reconstruction of degraded frames; keeps the best held-out epoch."""
    if not pairs:
        raise AugmentError("no (clean, degraded) pairs")
    for i, (c, d) in enumerate(pairs):
        if c.frames.shape != d.frames.shape:
            raise AugmentError(f"pair {i}: clean {c.frames.shape} and degraded {d.frames.shape} are not aligned")
    rng = derive_rng(cfg.seed, "delta")
    order = rng.permutation(len(pairs))
    n_hold = int(round(cfg.holdout_frac * len(pairs))) if len(pairs) > 1 else 0
    n_hold = min(n_hold, len(pairs) - 1)
    hold_idx, train_idx = order[:n_hold], order[n_hold:]
    if n_hold == 0:
        hold_idx = train_idx

    def stack(idx):
        return (
            np.concatenate([pairs[i][0].frames for i in idx]),
            np.concatenate([pairs[i][1].frames for i in idx]),
        )

    xc, xd = stack(train_idx)
    hc, hd = stack(hold_idx)
    dim = xc.shape[1]
    model = DeltaEncoder.build(dim, cfg)
    enc_state, dec_state = AdamState(), AdamState()

    def held_out() -> float:
        return _l1(model.decode(hc, model.encode(hc, hd)), hd)

    best = (held_out(), dict(model.encoder.params), dict(model.decoder.params))
    for epoch in range(cfg.epochs):
        perm = derive_rng(cfg.seed, "delta", epoch).permutation(len(xc))
        total = 0.0
        for b in range(0, len(xc), cfg.batch_size):
            idx = perm[b : b + cfg.batch_size]
            c, d = xc[idx], xd[idx]
            z, enc_cache = forward(model.encoder, np.concatenate([c, d], axis=-1))
            r, dec_cache = forward(model.decoder, np.concatenate([c, z], axis=-1))
            err = c + r - d
            total += float(np.abs(err).mean()) * len(idx)
            g_dec = backward(model.decoder, dec_cache, np.sign(err) / err.size)
            g_enc = backward(model.encoder, enc_cache, g_dec.dx[:, dim:])
            p, enc_state = adamw_step(model.encoder.params, g_enc.params, enc_state, cfg.lr, cfg.weight_decay)
            model.encoder.set_params(p)
            p, dec_state = adamw_step(model.decoder.params, g_dec.params, dec_state, cfg.lr, cfg.weight_decay)
            model.decoder.set_params(p)
        model.loss_curve.append(total / len(xc))
        h = held_out()
        if h < best[0]:
            best = (h, dict(model.encoder.params), dict(model.decoder.params))
        if (epoch + 1) % 20 == 0 or epoch + 1 == cfg.epochs:
            logger.info("delta epoch %d/%d train L1 %.5f held-out L1 %.5f", epoch + 1, cfg.epochs, model.loss_curve[-1], h)
    model.encoder.set_params(best[1])
    model.decoder.set_params(best[2])
    model.held_out_l1 = best[0]
    model.baseline_l1 = _l1(hc, hd)
    logger.info("delta held-out L1 %.5f (identity baseline %.5f)", model.held_out_l1, model.baseline_l1)
    return model


def delta_augment(
    model: DeltaEncoder,
    target: EmbeddingSequence,
    donor_pair: Tuple[EmbeddingSequence, EmbeddingSequence],
    n: int,
    rng: np.random.Generator,
    per_sequence: bool = False,
) -> List[EmbeddingSequence]:
    """Apply donor deformations to the target; donor frame = (t + offset) mod donor length."""
    clean, degraded = donor_pair
    if clean.frames.shape != degraded.frames.shape:
        raise AugmentError("donor pair is not time-aligned")
    if clean.dim != target.dim:
        raise AugmentError(f"donor dim {clean.dim} != target dim {target.dim}")
    z_all = model.encode(clean.frames, degraded.frames)
    t = np.arange(target.n_frames)
    out = []
    for _ in range(n):
        offset = int(rng.integers(0, clean.n_frames))
        idx = np.full_like(t, offset) if per_sequence else (t + offset) % clean.n_frames
        frames = model.decode(target.frames, z_all[idx])
        out.append(target.derive(frames, TARGET, Provenance.DELTA))
    return out


# ---------------------------------------------------------------------------
# negative synthesis


def synth_negative_mask(
    target: EmbeddingSequence, rng: np.random.Generator, rho_range: Tuple[float, float] = (0.25, 0.5)
) -> EmbeddingSequence:
    T = target.n_frames
    if T < 4:
        raise AugmentError(f"masking needs at least 4 frames, got {T}")
    rho = float(rng.uniform(*rho_range))
    length = min(T, max(1, int(np.floor(rho * T + 0.5))))
    start = int(rng.integers(0, T - length + 1))
    frames = np.array(target.frames, copy=True)
    frames[start : start + length] = target.frames.mean(axis=0)
    return target.derive(frames, NONTARGET, Provenance.MASKED)


def shuffle_blocks(T: int, block_div: float = 5.0) -> List[Tuple[int, int]]:
    """Block boundaries: max(2, round(T / block_div)) equal blocks, remainder in the last."""
    n_blocks = max(2, int(np.floor(T / block_div + 0.5)))
    size = T // n_blocks
    bounds = [(b * size, (b + 1) * size) for b in range(n_blocks)]
    bounds[-1] = (bounds[-1][0], T)
    return bounds


def synth_negative_shuffle(
    target: EmbeddingSequence, rng: np.random.Generator, block_div: float = 5.0
) -> EmbeddingSequence:
    T = target.n_frames
    if T < 4:
        raise AugmentError(f"shuffling needs at least 4 frames, got {T}")
    blocks = shuffle_blocks(T, block_div)
    perm = rng.permutation(len(blocks))
    while np.all(perm == np.arange(len(blocks))):
        perm = rng.permutation(len(blocks))
    frames = np.concatenate([target.frames[slice(*blocks[p])] for p in perm])
    return target.derive(frames, NONTARGET, Provenance.SHUFFLED)


# ---------------------------------------------------------------------------
# training set


@dataclass
class TrainSet:
    items: List[EmbeddingSequence]
    window_frames: int

    @property
    def n_positive(self) -> int:
        return sum(1 for s in self.items if s.label == TARGET)

    @property
    def n_negative(self) -> int:
        return len(self.items) - self.n_positive

    def counts(self) -> Dict[str, int]:
        out = {p.name.lower(): 0 for p in Provenance}
        for s in self.items:
            out[s.provenance.name.lower()] += 1
        return out


def build_train_set(
    curated: Sequence[Tuple[Waveform, Segment]],
    embedder: SequenceEmbedder,
    cfg: AugmentConfig = AugmentConfig(),
    delta: Optional[DeltaEncoder] = None,
    donors: Sequence[Tuple[EmbeddingSequence, EmbeddingSequence]] = (),
    per_sequence: bool = False,
) -> TrainSet:
    """Curated positives plus time-shift, delta, masked and shuffled sequences per shot."""
    if not curated:
        raise AugmentError("no curated segments")
    if cfg.n_delta and (delta is None or not donors):
        raise AugmentError(
            f"n_delta={cfg.n_delta} needs a delta encoder and donor pairs; set augment.n_delta=0 to train without them"
        )
    items: List[EmbeddingSequence] = []
    window_frames = 0
    for k, (shot, seg) in enumerate(curated):
        rng = derive_rng(cfg.seed, "shot", k)
        seg = widen(seg, shot, cfg.min_window_s)
        base = embed_segment(shot, seg, embedder)
        window_frames = max(window_frames, base.n_frames)
        positives = [base]
        positives += time_shift_augment(shot, seg, cfg.n_time_shift, rng, embedder, cfg.enlarge_s)
        for _ in range(cfg.n_delta):
            donor = donors[int(rng.integers(0, len(donors)))]
            positives += delta_augment(delta, base, donor, 1, rng, per_sequence)
        sources = positives[: 1 + cfg.n_time_shift]
        negatives = [
            synth_negative_mask(sources[int(rng.integers(0, len(sources)))], rng, (cfg.mask_min, cfg.mask_max))
            for _ in range(cfg.n_masked)
        ]
        negatives += [
            synth_negative_shuffle(sources[int(rng.integers(0, len(sources)))], rng, cfg.block_div)
            for _ in range(cfg.n_shuffled)
        ]
        items += positives + negatives
    ts = TrainSet(items, window_frames)
    logger.info("train set: %d positives, %d negatives (%s)", ts.n_positive, ts.n_negative, ts.counts())
    return ts


def write_train_set(directory: Path, ts: TrainSet) -> None:
    directory = Path(directory)
    records = []
    for i, s in enumerate(ts.items):
        name = f"seq_{i:05d}.sqes"
        safe_write_bytes(directory / name, codec.encode_sequence(s.frames, s.label, int(s.provenance)))
        records.append({"file": name, "label": s.label, "provenance": s.provenance.name.lower(),
                        "source": s.source, "frames": s.n_frames, "dim": s.dim})
    manifest = {"version": 1, "window_frames": ts.window_frames, "items": records}
    safe_write_text(directory / "manifest.json", json.dumps(manifest, indent=2) + "\n")


def read_train_set(directory: Path) -> TrainSet:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    items = []
    for rec in manifest["items"]:
        frames, label, prov = codec.decode_sequence((directory / rec["file"]).read_bytes())
        items.append(EmbeddingSequence(frames, label, Provenance(prov), int(rec.get("source", -1))))
    return TrainSet(items, int(manifest["window_frames"]))


def write_donor_pairs(directory: Path, pairs: Sequence[Tuple[EmbeddingSequence, EmbeddingSequence]]) -> None:
    """Store (clean, degraded) pairs as an interleaved sequence directory."""
    items = [s for pair in pairs for s in pair]
    write_train_set(directory, TrainSet(items, max((s.n_frames for s in items), default=0)))


def read_donor_pairs(directory: Path) -> List[Tuple[EmbeddingSequence, EmbeddingSequence]]:
    items = read_train_set(directory).items
    if len(items) % 2:
        raise AugmentError(f"{directory}: odd number of sequences in a donor-pair directory")
    return list(zip(items[0::2], items[1::2]))


def embed_pairs(
    pairs: Sequence[Tuple[Waveform, Waveform]], embedder: SequenceEmbedder
) -> List[Tuple[EmbeddingSequence, EmbeddingSequence]]:
    out = []
    for k, (clean, degraded) in enumerate(pairs):
        c = EmbeddingSequence(embedder(clean), TARGET, Provenance.CURATED, k)
        d = EmbeddingSequence(embedder(degraded), TARGET, Provenance.DELTA, k)
        out.append((c, d))
    return out
