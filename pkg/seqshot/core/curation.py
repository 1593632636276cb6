"""Few-shot audio curation: find one target instance per unsegmented shot.

Three steps, each usable on its own:

1. ``fit_loudness`` / ``loud_segments``: a logistic regression trained on the
   loudest and quietest frames of all shots marks candidate regions.
2. ``match_across_shots``: pooled embeddings of the candidates are grouped by
   cosine distance so only the sound shared by all shots survives.
3. ``align_to_exemplar``: every span is cut to the shortest one's length at
   the offset of highest normalized cross-correlation.

``curate`` chains the three and returns a report that the ``enroll``
command writes as JSON.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import medfilt
from scipy.special import expit, log_expit

from seqshot.core import audio
from seqshot.core.audio import LogMel, Waveform
from seqshot.core.errors import CurationError, DegenerateInputError

logger = logging.getLogger(__name__)

FRAME_S = audio.HOP_LENGTH / audio.SAMPLE_RATE  # 10 ms

Embedder = Callable[[Waveform], np.ndarray]


@dataclass(frozen=True)
class CurationConfig:
    percentile: float = 5.0
    min_frames: int = 40
    lr: float = 0.5
    max_iter: int = 5000
    tol: float = 1e-8
    median_frames: int = 5
    merge_gap_s: float = 0.2
    min_duration_s: float = 0.1
    tau: float = 0.35
    min_embed_s: float = 0.5


@dataclass(frozen=True)
class Segment:
    shot_id: int
    onset_s: float
    offset_s: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.onset_s < self.offset_s:
            raise CurationError(f"invalid segment ({self.onset_s}, {self.offset_s}) on shot {self.shot_id}")

    @property
    def duration(self) -> float:
        return self.offset_s - self.onset_s

    def iou(self, other: "Segment") -> float:
        inter = max(0.0, min(self.offset_s, other.offset_s) - max(self.onset_s, other.onset_s))
        union = max(self.offset_s, other.offset_s) - min(self.onset_s, other.onset_s)
        return inter / union if union > 0 else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {"shot_id": self.shot_id, "onset_s": round(self.onset_s, 6), "offset_s": round(self.offset_s, 6)}


@dataclass(frozen=True)
class LoudnessModel:
    weights: np.ndarray  # (64,)
    bias: float
    train_accuracy: float = 1.0

    def prob(self, frames: np.ndarray) -> np.ndarray:
        return expit(np.asarray(frames, dtype=np.float64) @ self.weights + self.bias)

    def decide(self, frames: np.ndarray) -> np.ndarray:
        return self.prob(frames) > 0.5


# ---------------------------------------------------------------------------
# step 1


def _percentile_frames(frames: np.ndarray, cfg: CurationConfig) -> Tuple[np.ndarray, np.ndarray]:
    # thresholds from the empirical CDF, so repeating the pool repeats the selection
    energy = frames.mean(axis=1)
    lo = np.percentile(energy, cfg.percentile, method="inverted_cdf")
    hi = -np.percentile(-energy, cfg.percentile, method="inverted_cdf")
    quiet, loud = energy <= lo, energy >= hi
    if not loud.any() or not quiet.any() or energy[loud].min() <= energy[quiet].max():
        raise DegenerateInputError(
            "loud and quiet percentiles overlap; frame energy is (nearly) constant"
        )
    return frames[loud], frames[quiet]


def fit_loudness(shots: Sequence[LogMel], cfg: CurationConfig = CurationConfig()) -> LoudnessModel:
    """Logistic regression separating the top and bottom energy percentiles."""
    if not shots:
        raise DegenerateInputError("no shots given")
    frames = np.concatenate([s.frames for s in shots], axis=0).astype(np.float64)
    if frames.shape[0] < cfg.min_frames:
        raise DegenerateInputError(f"{frames.shape[0]} pooled frames, need at least {cfg.min_frames}")
    loud, quiet = _percentile_frames(frames, cfg)
    x = np.concatenate([loud, quiet])
    y = np.r_[np.ones(len(loud)), np.zeros(len(quiet))]

    # fit on standardized features, fold the scaling back in at the end
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd < 1e-6] = 1.0
    xs = (x - mu) / sd
    sign = 2.0 * y - 1.0
    w = np.zeros(x.shape[1])
    b = 0.0
    prev = np.inf
    for it in range(cfg.max_iter):
        z = xs @ w + b
        loss = -float(np.mean(log_expit(sign * z)))
        if abs(prev - loss) < cfg.tol:
            break
        prev = loss
        r = (expit(z) - y) / len(y)
        w -= cfg.lr * (xs.T @ r)
        b -= cfg.lr * float(r.sum())
    weights = w / sd
    bias = b - float(np.dot(weights, mu))
    acc = float(np.mean((expit(x @ weights + bias) > 0.5) == y.astype(bool)))
    logger.debug("loudness model: %d iterations, loss %.3g, accuracy %.3f", it + 1, prev, acc)
    return LoudnessModel(weights=weights, bias=bias, train_accuracy=acc)


def _runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    """Maximal [start, end) runs of True."""
    d = np.diff(np.r_[0, mask.astype(np.int8), 0])
    return list(zip(np.flatnonzero(d == 1).tolist(), np.flatnonzero(d == -1).tolist()))


def loud_segments(
    model: LoudnessModel, shot: LogMel, shot_id: int = 0, cfg: CurationConfig = CurationConfig()
) -> List[Segment]:
    decisions = model.decide(shot.frames).astype(np.float64)
    if cfg.median_frames > 1 and decisions.size:
        decisions = medfilt(decisions, kernel_size=cfg.median_frames)
    runs = _runs(decisions > 0.5)
    merged: List[Tuple[int, int]] = []
    for start, end in runs:
        if merged and (start - merged[-1][1]) * FRAME_S < cfg.merge_gap_s - 1e-9:
            merged[-1] = (merged[-1][0], end)
        else:
            merged.append((start, end))
    return [
        Segment(shot_id, start * FRAME_S, end * FRAME_S)
        for start, end in merged
        if (end - start) * FRAME_S >= cfg.min_duration_s - 1e-9
    ]


# ---------------------------------------------------------------------------
# step 2


def _embed_window(shot: Waveform, seg: Segment, embedder: Embedder, min_s: float) -> np.ndarray:
    """Embed a candidate, widening it symmetrically when shorter than ``min_s``."""
    onset, offset = seg.onset_s, seg.offset_s
    if offset - onset < min_s:
        mid = 0.5 * (onset + offset)
        onset = max(0.0, mid - min_s / 2)
        offset = min(shot.duration, onset + min_s)
        onset = max(0.0, offset - min_s)
    return np.asarray(embedder(shot.slice(onset, offset)), dtype=np.float64)


def _cosine_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    an = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)
    bn = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-12)
    return 1.0 - an @ bn.T


@dataclass
class ShotMatch:
    segment: Segment
    matched: List[Segment]
    distances: List[float]
    fallback: bool


def _group(
    candidates: Sequence[Sequence[Segment]],
    shots: Sequence[Waveform],
    embedder: Embedder,
    cfg: CurationConfig,
) -> List[ShotMatch]:
    for i, cands in enumerate(candidates):
        if not cands:
            raise CurationError(f"shot {i} has no loud candidate segment")
    if len(candidates) != len(shots):
        raise CurationError(f"{len(candidates)} candidate lists for {len(shots)} shots")
    emb = [
        np.stack([_embed_window(shots[i], c, embedder, cfg.min_embed_s) for c in cands])
        for i, cands in enumerate(candidates)
    ]
    # seed: candidate with the smallest summed nearest-neighbour distance to the other shots
    best: Tuple[float, int, int] = (np.inf, -1, -1)
    for i, e in enumerate(emb):
        cost = np.zeros(len(e))
        for j, f in enumerate(emb):
            if j != i:
                cost += _cosine_distance(e, f).min(axis=1)
        c = int(np.argmin(cost))
        if cost[c] < best[0]:
            best = (float(cost[c]), i, c)
    _, si, sc = best
    seed = emb[si][sc : sc + 1]

    out: List[ShotMatch] = []
    for i, cands in enumerate(candidates):
        d = _cosine_distance(seed, emb[i])[0]
        hits = [k for k in range(len(cands)) if d[k] <= cfg.tau or (i == si and k == sc)]
        if hits:
            matched = [cands[k] for k in hits]
            seg = Segment(i, min(m.onset_s for m in matched), max(m.offset_s for m in matched))
            out.append(ShotMatch(seg, matched, [float(d[k]) for k in hits], False))
        else:
            longest = max(cands, key=lambda s: s.duration)
            logger.warning("shot %d: no candidate within tau=%.3f of the seed; using its longest candidate", i, cfg.tau)
            out.append(ShotMatch(Segment(i, longest.onset_s, longest.offset_s), [], [], True))
    return out


def match_across_shots(
    candidates: Sequence[Sequence[Segment]],
    shots: Sequence[Waveform],
    embedder: Embedder,
    cfg: CurationConfig = CurationConfig(),
) -> List[Segment]:
    """One span per shot: first matched onset to last matched offset."""
    return [m.segment for m in _group(candidates, shots, embedder, cfg)]


# ---------------------------------------------------------------------------
# step 3


def _frame_span(seg: Segment, n_frames: int) -> Tuple[int, int]:
    start = int(np.ceil(seg.onset_s / FRAME_S - 1e-6))
    end = min(int(np.floor(seg.offset_s / FRAME_S + 1e-6)), n_frames)
    if end <= start:
        raise CurationError(f"segment {seg} covers no complete logmel frame")
    return start, end


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Zero-mean normalized correlation of two equally shaped arrays."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / denom) if denom > 0 else 0.0


def _align(segments: Sequence[Segment], shots: Sequence[LogMel]) -> Tuple[List[Segment], List[float]]:
    if len(segments) != len(shots):
        raise CurationError(f"{len(segments)} segments for {len(shots)} shots")
    spans = [_frame_span(s, m.n_frames) for s, m in zip(segments, shots)]
    lengths = [e - s for s, e in spans]
    ex = int(np.argmin(lengths))
    length = lengths[ex]
    ex_start = spans[ex][0]
    exemplar = shots[ex].frames[ex_start : ex_start + length]
    out: List[Segment] = []
    scores: List[float] = []
    for seg, (start, end), m in zip(segments, spans, shots):
        best_s, best = start, -np.inf
        for s in range(start, end - length + 1):
            c = ncc(m.frames[s : s + length], exemplar)
            if c > best:  # strict: earliest offset wins ties
                best_s, best = s, c
        out.append(Segment(seg.shot_id, best_s * FRAME_S, (best_s + length) * FRAME_S))
        scores.append(float(best))
    return out, scores


def align_to_exemplar(segments: Sequence[Segment], shots: Sequence[LogMel]) -> List[Segment]:
    """Cut every segment to the shortest one's frame length at its best-correlating offset."""
    return _align(segments, shots)[0]


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class CurationReport:
    segments: List[Segment]
    candidates: List[List[Segment]]
    matched: List[Segment]
    fallback: List[bool]
    scores: List[float]
    iou: Optional[List[float]] = None
    loudness_accuracy: float = 1.0
    extras: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        shots = []
        for i, seg in enumerate(self.segments):
            entry: Dict[str, Any] = {
                "shot_id": i,
                "candidates": [c.to_dict() for c in self.candidates[i]],
                "matched_span": self.matched[i].to_dict(),
                "fallback": self.fallback[i],
                "aligned_span": seg.to_dict(),
                "correlation": round(self.scores[i], 6),
            }
            if self.iou is not None:
                entry["iou"] = round(self.iou[i], 6)
            shots.append(entry)
        out: Dict[str, Any] = {"shots": shots, "loudness_train_accuracy": self.loudness_accuracy}
        if self.iou is not None:
            out["mean_iou"] = round(float(np.mean(self.iou)), 6)
        out.update(self.extras)
        return out


def curate(
    shots: Sequence[Waveform],
    embedder: Embedder,
    cfg: CurationConfig = CurationConfig(),
    truth: Optional[Sequence[Segment]] = None,
) -> CurationReport:
    """Run the three curation steps on K shots."""
    if not shots:
        raise CurationError("no enrollment shots")
    mels = [audio.logmel(w) for w in shots]
    model = fit_loudness(mels, cfg)
    candidates = [loud_segments(model, m, i, cfg) for i, m in enumerate(mels)]
    matches = _group(candidates, shots, embedder, cfg)
    matched = [m.segment for m in matches]
    aligned, scores = _align(matched, mels)
    iou = None
    if truth is not None and all(t is not None for t in truth):
        iou = [seg.iou(t) for seg, t in zip(aligned, truth)]
        logger.info("curation IoU per shot: %s", ", ".join(f"{v:.2f}" for v in iou))
    return CurationReport(
        segments=aligned,
        candidates=[list(c) for c in candidates],
        matched=matched,
        fallback=[m.fallback for m in matches],
        scores=scores,
        iou=iou,
        loudness_accuracy=model.train_accuracy,
    )
