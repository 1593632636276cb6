"""Deterministic synthetic corpora of note-sequence motifs.

A motif family shares an 8-note vocabulary; its members differ only in note
order, so they are alike at the coarse level and distinct at the fine level.
Pretraining data labels clips with coarse (family or noise) classes;
episodes pit one family member against the other members.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import signal

from seqshot.core import audio
from seqshot.core.audio import SAMPLE_RATE, Waveform
from seqshot.core.curation import Segment
from seqshot.core.episode import NONTARGET_LABEL, TARGET_LABEL, AudioRef, Episode, EvalItem
from seqshot.core.errors import CorpusError
from seqshot.core.utils import derive_rng, derive_seed, safe_write_text

logger = logging.getLogger(__name__)

RAMP_S = 0.010
VOCAB_SIZE = 8
BACKGROUNDS = ("silence", "pink", "babble")
FIELDS = ("near", "far")
FAR_SNR_DROP_DB = 6.0
PEAK_LIMIT = 0.9


@dataclass(frozen=True)
class CorpusConfig:
    n_classes: int = 12
    n_noise_classes: int = 2
    clips_per_class: int = 40
    clip_s: float = 10.0
    second_event_prob: float = 0.3
    family_size: int = 10
    notes_per_motif: int = 6
    min_edit_distance: int = 3
    pretrain_length_s: Tuple[float, float] = (1.0, 4.0)
    episode_length_s: Tuple[float, float] = (1.0, 8.0)
    snr_db: Tuple[float, float] = (5.0, 20.0)
    rt60_s: Tuple[float, float] = (0.3, 0.8)
    k_shots: int = 3
    eval_pos: int = 3
    eval_neg_per_motif: int = 20
    shot_pad_s: Tuple[float, float] = (1.0, 3.0)
    eval_pad_s: Tuple[float, float] = (0.5, 1.5)
    n_delta_pairs: int = 40
    n_episodes: int = 12
    heldout_per_class: int = 10
    seed: int = 0


@dataclass(frozen=True)
class Note:
    freq_hz: float
    dur_s: float
    amp: float


@dataclass(frozen=True)
class Motif:
    notes: Tuple[Note, ...]
    order: Tuple[int, ...]  # indices into the vocabulary
    vocabulary: Tuple[float, ...]
    class_id: int
    family_id: int

    def __post_init__(self) -> None:
        if len(self.notes) < 3:
            raise CorpusError(f"motif needs at least 3 notes, got {len(self.notes)}")

    @property
    def duration(self) -> float:
        return float(sum(n.dur_s for n in self.notes))

    def render(self, rng: Optional[np.random.Generator] = None, sr: int = SAMPLE_RATE) -> np.ndarray:
        parts = []
        for note in self.notes:
            n = int(round(note.dur_s * sr))
            t = np.arange(n) / sr
            x = note.amp * np.sin(2 * np.pi * note.freq_hz * t)
            parts.append(x * _ramp(n, sr))
        return np.concatenate(parts)


@dataclass(frozen=True)
class NoiseBurst:
    """Band-limited noise event, the non-motif pretraining classes."""

    band_hz: Tuple[float, float]
    dur_s: float
    class_id: int
    amp: float = 0.5

    @property
    def duration(self) -> float:
        return self.dur_s

    def render(self, rng: Optional[np.random.Generator] = None, sr: int = SAMPLE_RATE) -> np.ndarray:
        rng = rng if rng is not None else np.random.default_rng(0)
        n = int(round(self.dur_s * sr))
        sos = signal.butter(4, self.band_hz, btype="bandpass", fs=sr, output="sos")
        x = signal.sosfilt(sos, rng.standard_normal(n))
        x = self.amp * x / max(np.max(np.abs(x)), 1e-12)
        return x * _ramp(n, sr)


Source = Union[Motif, NoiseBurst]


@dataclass(frozen=True)
class SceneSpec:
    duration_s: float
    insert_s: float
    background: str = "silence"
    snr_db: float = float("inf")
    field: str = "near"
    rt60_s: float = 0.5

    def check(self, source: Source) -> None:
        if self.background not in BACKGROUNDS:
            raise CorpusError(f"unknown background '{self.background}'")
        if self.field not in FIELDS:
            raise CorpusError(f"unknown field '{self.field}'")
        if self.insert_s < 0 or self.insert_s + source.duration > self.duration_s + 1e-9:
            raise CorpusError(
                f"event [{self.insert_s:.3f}, {self.insert_s + source.duration:.3f}] s "
                f"does not fit a {self.duration_s:.3f} s scene"
            )


@dataclass
class Scene:
    waveform: Waveform
    events: List[Tuple[int, float, float]]
    labels: List[int] = field(default_factory=list)


def _ramp(n: int, sr: int) -> np.ndarray:
    r = min(int(round(RAMP_S * sr)), n // 2)
    env = np.ones(n)
    if r > 0:
        up = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        env[:r] = up
        env[n - r:] = up[::-1]
    return env


def edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


# ---------------------------------------------------------------------------
# motifs


def gen_motif_family(
    family_seed: int,
    n_sequences: int = 10,
    length_s: Tuple[float, float] = (1.0, 4.0),
    notes_per_motif: int = 6,
    min_distance: int = 3,
    family_id: int = 0,
    max_tries: int = 20000,
) -> List[Motif]:
    """Members share vocabulary, note count and total length; they differ in order."""
    if n_sequences < 2:
        raise CorpusError(f"a family needs at least 2 sequences, got {n_sequences}")
    if notes_per_motif < 3:
        raise CorpusError("motifs need at least 3 notes")
    rng = derive_rng(family_seed, "family")
    vocab = np.sort(np.exp(rng.uniform(np.log(300.0), np.log(3000.0), size=VOCAB_SIZE)))
    # keep notes at least a semitone apart
    while np.min(np.diff(np.log2(vocab))) < 1 / 12:
        vocab = np.sort(np.exp(rng.uniform(np.log(300.0), np.log(3000.0), size=VOCAB_SIZE)))
    total = float(rng.uniform(*length_s))
    note_s = round(total / notes_per_motif, 3)
    amps = rng.uniform(0.4, 0.8, size=notes_per_motif)
    orders: List[Tuple[int, ...]] = []
    tries = 0
    while len(orders) < n_sequences:
        tries += 1
        if tries > max_tries:
            raise CorpusError(
                f"could not find {n_sequences} orders with edit distance >= {min_distance} "
                f"over {notes_per_motif} notes"
            )
        cand = tuple(int(v) for v in rng.integers(0, VOCAB_SIZE, size=notes_per_motif))
        if all(edit_distance(cand, o) >= min_distance for o in orders):
            orders.append(cand)
    vocabulary = tuple(float(round(v, 3)) for v in vocab)
    return [
        Motif(
            notes=tuple(Note(vocabulary[i], note_s, float(round(a, 3))) for i, a in zip(order, amps)),
            order=order,
            vocabulary=vocabulary,
            class_id=k,
            family_id=family_id,
        )
        for k, order in enumerate(orders)
    ]


# ---------------------------------------------------------------------------
# scenes


def synthetic_rir(rt60_s: float, rng: np.random.Generator, sr: int = SAMPLE_RATE) -> Waveform:
    """Direct path plus exponentially decaying white noise (60 dB down at rt60)."""
    n = max(2, int(round(rt60_s * sr)))
    t = np.arange(n) / sr
    h = rng.standard_normal(n) * np.exp(-6.9078 * t / rt60_s) * 0.3
    h[0] = 1.0
    return Waveform(h, sr)


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(spec.size)
    spec[1:] /= np.sqrt(f[1:])
    spec[0] = 0.0
    x = np.fft.irfft(spec, n)
    return x / max(np.std(x), 1e-12)


def babble(n: int, rng: np.random.Generator, sr: int = SAMPLE_RATE, voices: int = 6) -> np.ndarray:
    t = np.arange(n) / sr
    x = np.zeros(n)
    for _ in range(voices):
        f0 = rng.uniform(200.0, 2000.0)
        am = 0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(2.0, 6.0) * t + rng.uniform(0, 2 * np.pi))
        x += am * np.sin(2 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi))
    return x / max(np.std(x), 1e-12)


def _background(kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "pink":
        return pink_noise(n, rng)
    if kind == "babble":
        return babble(n, rng)
    return np.zeros(n)


def render_scene(source: Source, spec: SceneSpec, rng: np.random.Generator) -> Scene:
    """Place one event in a scene; far field adds an RIR and 6 dB less SNR."""
    spec.check(source)
    n = int(round(spec.duration_s * SAMPLE_RATE))
    x = np.zeros(n)
    ev = source.render(rng)
    start = int(round(spec.insert_s * SAMPLE_RATE))
    ev = ev[: n - start]
    x[start : start + ev.size] = ev
    snr = spec.snr_db
    if spec.field == "far":
        x = audio.convolve_rir(Waveform(x), synthetic_rir(spec.rt60_s, rng)).samples
        snr = snr - FAR_SNR_DROP_DB
    if spec.background != "silence" and np.isfinite(snr):
        p_sig = float(np.mean(ev ** 2))
        bg = _background(spec.background, n, rng)
        x = x + bg * np.sqrt(p_sig / 10.0 ** (snr / 10.0))
    peak = float(np.max(np.abs(x)))
    if peak > PEAK_LIMIT:
        x = x * (PEAK_LIMIT / peak)
    onset = start / SAMPLE_RATE
    event = (source.class_id, round(onset, 6), round(onset + ev.size / SAMPLE_RATE, 6))
    return Scene(Waveform(x), [event], [source.class_id])


def _mix_events(sources: Sequence[Source], inserts: Sequence[float], spec: SceneSpec, rng: np.random.Generator) -> Scene:
    """Several non-overlapping events in one scene (pretraining clips)."""
    total = np.zeros(int(round(spec.duration_s * SAMPLE_RATE)))
    events: List[Tuple[int, float, float]] = []
    for src, ins in zip(sources, inserts):
        sub = SceneSpec(spec.duration_s, ins, "silence", float("inf"), spec.field, spec.rt60_s)
        scene = render_scene(src, sub, rng)
        total += scene.waveform.samples
        events += scene.events
    if spec.background != "silence" and np.isfinite(spec.snr_db):
        mask = np.zeros(total.size, dtype=bool)
        for _, on, off in events:
            mask[int(round(on * SAMPLE_RATE)) : int(round(off * SAMPLE_RATE))] = True
        p_sig = float(np.mean(total[mask] ** 2))
        snr = spec.snr_db - (FAR_SNR_DROP_DB if spec.field == "far" else 0.0)
        total = total + _background(spec.background, total.size, rng) * np.sqrt(p_sig / 10.0 ** (snr / 10.0))
    peak = float(np.max(np.abs(total)))
    if peak > PEAK_LIMIT:
        total = total * (PEAK_LIMIT / peak)
    events.sort(key=lambda e: e[1])
    return Scene(Waveform(total), events, sorted({e[0] for e in events}))


def _random_spec(cfg: CorpusConfig, rng: np.random.Generator, duration_s: float, insert_s: float, field_: str) -> SceneSpec:
    return SceneSpec(
        duration_s=duration_s,
        insert_s=insert_s,
        background=BACKGROUNDS[int(rng.integers(0, len(BACKGROUNDS)))],
        snr_db=float(rng.uniform(*cfg.snr_db)),
        field=field_,
        rt60_s=float(rng.uniform(*cfg.rt60_s)),
    )


# ---------------------------------------------------------------------------
# pretraining set


def pretrain_sources(cfg: CorpusConfig) -> List[List[Source]]:
    """Per coarse class, the pool of event sources clips draw from."""
    n_fam = cfg.n_classes - cfg.n_noise_classes
    if n_fam < 1 or cfg.n_noise_classes < 0:
        raise CorpusError(f"invalid class split: {cfg.n_classes} classes, {cfg.n_noise_classes} noise")
    pools: List[List[Source]] = []
    for f in range(n_fam):
        fam = gen_motif_family(
            derive_seed(cfg.seed, "pretrain-family", f), cfg.family_size, cfg.pretrain_length_s,
            cfg.notes_per_motif, cfg.min_edit_distance, family_id=f,
        )
        pools.append([Motif(m.notes, m.order, m.vocabulary, f, f) for m in fam])
    edges = np.geomspace(150.0, 7000.0, cfg.n_noise_classes + 1)
    for j in range(cfg.n_noise_classes):
        band = (float(round(edges[j], 1)), float(round(edges[j + 1], 1)))
        pools.append([NoiseBurst(band, d, n_fam + j) for d in (0.5, 1.0, 2.0)])
    return pools


def gen_pretrain_dataset(
    cfg: CorpusConfig, out_dir: Path, split: str = "train", clips_per_class: Optional[int] = None
) -> Dict[str, Any]:
    """10 s clips with weak labels (manifest.jsonl) and strong events (strong.jsonl).

    Splits share the class sources and differ only in their per-clip streams.
    """
    out_dir = Path(out_dir)
    pools = pretrain_sources(cfg)
    per_class = cfg.clips_per_class if clips_per_class is None else clips_per_class
    weak_lines, strong_lines = [], []
    idx = 0
    for c in range(cfg.n_classes):
        for j in range(per_class):
            rng = derive_rng(cfg.seed, "clip", c, j) if split == "train" else derive_rng(cfg.seed, "clip", split, c, j)
            sources: List[Source] = [pools[c][int(rng.integers(0, len(pools[c])))]]
            if rng.random() < cfg.second_event_prob:
                other = int(rng.integers(0, cfg.n_classes - 1))
                other += other >= c
                sources.append(pools[other][int(rng.integers(0, len(pools[other])))])
            inserts = _place(sources, cfg.clip_s, rng)
            if inserts is None:
                sources, inserts = sources[:1], _place(sources[:1], cfg.clip_s, rng)
            spec = _random_spec(cfg, rng, cfg.clip_s, inserts[0], FIELDS[int(rng.integers(0, 2))])
            scene = _mix_events(sources, inserts, spec, rng)
            name = f"clips/clip_{idx:05d}.wav"
            audio.write_wav(out_dir / name, scene.waveform)
            weak_lines.append(json.dumps({"wav": name, "labels": scene.labels}))
            strong_lines.append(json.dumps({"wav": name, "labels": scene.labels,
                                            "events": [list(e) for e in scene.events]}))
            idx += 1
    safe_write_text(out_dir / "manifest.jsonl", "\n".join(weak_lines) + "\n")
    safe_write_text(out_dir / "strong.jsonl", "\n".join(strong_lines) + "\n")
    logger.info("wrote %d %s clips over %d classes to %s", idx, split, cfg.n_classes, out_dir)
    return {"split": split, "clips": idx, "classes": cfg.n_classes, "manifest": "manifest.jsonl", "strong": "strong.jsonl"}


def _place(sources: Sequence[Source], clip_s: float, rng: np.random.Generator) -> Optional[List[float]]:
    """Non-overlapping random insert times in order, or None if they cannot fit."""
    gap = 0.2
    need = sum(s.duration for s in sources) + gap * (len(sources) - 1)
    slack = clip_s - need
    if slack < 0:
        return None
    cuts = np.sort(rng.uniform(0.0, slack, size=len(sources)))
    inserts, t = [], 0.0
    for s, c in zip(sources, np.diff(np.r_[0.0, cuts])):
        t += c
        inserts.append(round(float(t), 3))
        t += s.duration + gap
    return inserts


# ---------------------------------------------------------------------------
# episodes


def _fields(n: int, rng: np.random.Generator) -> List[str]:
    out = [FIELDS[i % 2] for i in range(n)]
    rng.shuffle(out)
    return out


def gen_episode(
    family_seed: int,
    out_dir: Path,
    cfg: CorpusConfig = CorpusConfig(),
    name: Optional[str] = None,
    distinct_negatives: bool = False,
    near_only: bool = False,
) -> Episode:
    """Target = motif 0; K shots, fresh positives and negatives from the other members.

    ``distinct_negatives`` draws negatives from unrelated families (an easy,
    coarse-grained episode); ``near_only`` disables far-field renderings.
    """
    out_dir = Path(out_dir)
    name = name or f"episode_{family_seed}"
    family = gen_motif_family(
        family_seed, cfg.family_size, cfg.episode_length_s, cfg.notes_per_motif, cfg.min_edit_distance
    )
    if len(family) < 10 and not distinct_negatives:
        raise CorpusError(f"episode family needs at least 10 motifs, got {len(family)}")
    target = family[0]
    if distinct_negatives:
        non_targets = [
            gen_motif_family(derive_seed(family_seed, "distinct", k), 2, cfg.episode_length_s,
                             cfg.notes_per_motif, cfg.min_edit_distance, family_id=k + 1)[0]
            for k in range(len(family) - 1)
        ]
        non_targets = [Motif(m.notes, m.order, m.vocabulary, k + 1, m.family_id) for k, m in enumerate(non_targets)]
    else:
        non_targets = family[1:]
    rng = derive_rng(family_seed, "episode")

    enrollment, truth = [], []
    shot_fields = ["near"] * cfg.k_shots if near_only else _fields(cfg.k_shots, rng)
    backgrounds = list(rng.permutation(len(BACKGROUNDS)))
    for k in range(cfg.k_shots):
        pad = rng.uniform(*cfg.shot_pad_s, size=2)
        dur = round(float(target.duration + pad.sum()), 3)
        spec = SceneSpec(dur, round(float(pad[0]), 3), BACKGROUNDS[backgrounds[k % len(BACKGROUNDS)]],
                         float(rng.uniform(*cfg.snr_db)), shot_fields[k], float(rng.uniform(*cfg.rt60_s)))
        scene = render_scene(target, spec, rng)
        path = out_dir / "enroll" / f"shot_{k}.wav"
        audio.write_wav(path, scene.waveform)
        enrollment.append(AudioRef(path=path))
        _, on, off = scene.events[0]
        truth.append(Segment(k, on, off))

    items: List[EvalItem] = []

    def add(src: Motif, label: str, field_: str, tag: str) -> None:
        pad = rng.uniform(*cfg.eval_pad_s, size=2)
        dur = round(float(src.duration + pad.sum()), 3)
        spec = _random_spec(cfg, rng, dur, round(float(pad[0]), 3), field_)
        scene = render_scene(src, spec, rng)
        path = out_dir / "eval" / f"{tag}.wav"
        audio.write_wav(path, scene.waveform)
        items.append(EvalItem(AudioRef(path=path), label, field_, src.class_id))

    pos_fields = ["near"] * cfg.eval_pos if near_only else _fields(cfg.eval_pos, rng)
    for j, f in enumerate(pos_fields):
        add(target, TARGET_LABEL, f, f"pos_{j:03d}")
    for m in non_targets:
        neg_fields = ["near"] * cfg.eval_neg_per_motif if near_only else _fields(cfg.eval_neg_per_motif, rng)
        for j, f in enumerate(neg_fields):
            add(m, NONTARGET_LABEL, f, f"neg_{m.class_id:02d}_{j:03d}")

    ep = Episode(
        enrollment, items, truth, name=name, target_duration_s=target.duration,
        meta={"family_seed": family_seed, "target_order": list(target.order),
              "distinct_negatives": distinct_negatives, "near_only": near_only},
    )
    ep.save(out_dir / "episode.json")
    logger.info("episode %s: %d shots, %d eval items, target %.2f s", name, ep.k_shots, len(items), target.duration)
    return ep


def gen_episodes(cfg: CorpusConfig, out_dir: Path) -> List[Episode]:
    """``cfg.n_episodes`` episodes whose target lengths tile ``cfg.episode_length_s`` evenly.

    Episode i draws its family from the i-th equal slice of the length range,
    so every duration bin of the report gets episodes.
    """
    if cfg.n_episodes < 1:
        raise CorpusError(f"n_episodes must be >= 1, got {cfg.n_episodes}")
    lo, hi = cfg.episode_length_s
    edges = np.linspace(lo, hi, cfg.n_episodes + 1)
    episodes = []
    for i in range(cfg.n_episodes):
        sub = replace(cfg, episode_length_s=(float(edges[i]), float(edges[i + 1])))
        name = f"episode_{i:03d}"
        episodes.append(gen_episode(derive_seed(cfg.seed, "episode", i), Path(out_dir) / name, sub, name=name))
    return episodes


# ---------------------------------------------------------------------------
# Delta-encoder pairs


def gen_delta_pairs(cfg: CorpusConfig, n_pairs: Optional[int] = None) -> List[Tuple[Waveform, Waveform]]:
    """Time-aligned (clean near-field, degraded far-field) renderings of pretraining motifs."""
    pools = pretrain_sources(cfg)
    motif_pools = pools[: cfg.n_classes - cfg.n_noise_classes]
    pairs = []
    for i in range(cfg.n_delta_pairs if n_pairs is None else n_pairs):
        rng = derive_rng(cfg.seed, "delta-pair", i)
        pool = motif_pools[int(rng.integers(0, len(motif_pools)))]
        m = pool[int(rng.integers(0, len(pool)))]
        pad = rng.uniform(0.5, 1.0, size=2)
        dur = round(float(m.duration + pad.sum()), 3)
        ins = round(float(pad[0]), 3)
        clean = render_scene(m, SceneSpec(dur, ins), derive_rng(cfg.seed, "delta-clean", i)).waveform
        spec = SceneSpec(dur, ins, BACKGROUNDS[1 + int(rng.integers(0, 2))], float(rng.uniform(*cfg.snr_db)),
                         "far", float(rng.uniform(*cfg.rt60_s)))
        degraded = render_scene(m, spec, derive_rng(cfg.seed, "delta-far", i)).waveform
        pairs.append((clean, degraded))
    return pairs
