"""Weak-label, distilled and strong-label embedding extractors.

Three training entry points share one loop (``_fit``): plain weak-label BCE
(``train_weak``), teacher-student distillation (``distill``) and frame-level
training from pseudo-strong labels (``train_strong``). All three apply the
same augmentation chain: random resampling, random gain, SpecAugment, mixup,
and class-imbalance-aware sampling.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from seqshot.core import audio
from seqshot.core.audio import Waveform
from seqshot.core.errors import DatasetError, DistillationError, TooShortError
from seqshot.core.metrics import map_and_dprime
from seqshot.core.utils import derive_rng
from seqshot.nn import (
    AdamState,
    Conv1D,
    Conv2D,
    FreqPool,
    GlobalPool,
    Graph,
    Linear,
    ReLU,
    adamw_step,
    backward,
    forward,
    load_checkpoint,
    one_cycle_lr,
    save_checkpoint,
)
from seqshot.nn.losses import bce_with_logits, binary_kl_with_logits

logger = logging.getLogger(__name__)

FRAME_STRIDE = 32  # logmel frames per strong-model output frame (320 ms)
MIN_EMBED_S = 0.5


# ---------------------------------------------------------------------------
# configs


@dataclass(frozen=True)
class ModelSpec:
    """Backbone/head sizes. Each backbone stage halves time and frequency."""

    widths: Tuple[int, ...] = (8, 16, 32, 64, 64)
    hidden: int = 64
    n_classes: int = 12

    @property
    def embed_dim(self) -> int:
        return self.widths[-1]

    def widened(self, multiplier: float, last: Optional[int] = None) -> "ModelSpec":
        widths = [max(1, int(round(w * multiplier))) for w in self.widths]
        if last is not None:
            widths[-1] = int(last)
        return replace(self, widths=tuple(widths), hidden=max(1, int(round(self.hidden * multiplier))))


@dataclass(frozen=True)
class WeakTrainConfig:
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    peak_lr: float = 0.01
    final_lr: float = 0.0001
    warmup_frac: float = 0.1
    weight_decay: float = 0.01
    clip_s: float = 10.0
    augment: bool = True
    resample_range: float = 0.1
    gain_db: float = 20.0
    time_masks: int = 2
    freq_masks: int = 2
    max_t: int = 20
    max_f: int = 8
    mixup: bool = True
    mixup_alpha: float = 0.3


@dataclass(frozen=True)
class DistillConfig:
    temperature: float = 2.0
    kd_weight: float = 0.5


@dataclass(frozen=True)
class PseudoLabelConfig:
    window_s: float = 0.5
    hop_s: float = 0.1
    threshold: float = 0.5


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class Clip:
    """One training clip: multi-hot weak labels plus optional strong events."""

    labels: Tuple[int, ...]
    events: Tuple[Tuple[int, float, float], ...] = ()
    path: Optional[Path] = None
    waveform: Optional[Waveform] = None

    def load(self) -> Waveform:
        if self.waveform is not None:
            return self.waveform
        if self.path is None:
            raise DatasetError("clip has neither a waveform nor a path")
        return audio.load_wav(self.path)


def multi_hot(labels: Sequence[int], n_classes: int) -> np.ndarray:
    y = np.zeros(n_classes, dtype=np.float64)
    for c in labels:
        if not 0 <= c < n_classes:
            raise DatasetError(f"class id {c} outside [0, {n_classes})")
        y[c] = 1.0
    return y


def load_manifest(path: Path) -> List[Clip]:
    """Read a JSON-lines dataset manifest; wav paths are relative to the manifest."""
    path = Path(path)
    clips: List[Clip] = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as ex:
            raise DatasetError(f"{path}:{i}: invalid JSON: {ex}") from ex
        events = tuple((int(c), float(a), float(b)) for c, a, b in rec.get("events", []))
        clips.append(Clip(labels=tuple(int(c) for c in rec["labels"]), events=events, path=path.parent / rec["wav"]))
    return clips


def sampling_weights(clips: Sequence[Clip], n_classes: int) -> np.ndarray:
    """Per-clip draw probability, proportional to 1/sqrt(class frequency).

    Multi-label clips take the weight of their rarest class."""
    freq = np.zeros(n_classes)
    for c in clips:
        for k in c.labels:
            freq[k] += 1
    floor = 1.0 / np.sqrt(max(freq.max(), 1.0))  # unlabeled clips weigh like the commonest class
    w = np.array([max([1.0 / np.sqrt(freq[k]) for k in c.labels], default=floor) for c in clips])
    return w / w.sum()


# ---------------------------------------------------------------------------
# models


def _backbone(widths: Sequence[int]) -> list:
    layers: list = []
    c_in = 1
    for i, w in enumerate(widths):
        # Padding (1, 0) with kernel 3 / stride 2 gives floor(n / 2) outputs.
        layers.append(Conv2D(f"conv{i}", c_in, w, (3, 3), (2, 2), ((1, 0), (1, 0))))
        layers.append(ReLU(f"relu{i}"))
        c_in = w
    return layers


def build_weak_graph(spec: ModelSpec, seed: int = 0) -> Graph:
    layers = _backbone(spec.widths) + [
        GlobalPool("pool"),
        Linear("fc1", spec.embed_dim, spec.hidden),
        ReLU("fc_relu"),
        Linear("fc2", spec.hidden, spec.n_classes),
    ]
    meta = {"spec": {"widths": list(spec.widths), "hidden": spec.hidden, "n_classes": spec.n_classes},
            "embed_layer": "pool", "input_mean": 0.0, "input_std": 1.0}
    return Graph(layers, kind="weak", seed=seed, meta=meta)


def build_strong_graph(spec: ModelSpec, seed: int = 0, embed_layer: str = "pool") -> Graph:
    layers = _backbone(spec.widths) + [
        FreqPool("pool"),
        Conv1D("classifier", spec.embed_dim, spec.n_classes, kernel=1),
    ]
    meta = {"spec": {"widths": list(spec.widths), "hidden": spec.hidden, "n_classes": spec.n_classes},
            "embed_layer": embed_layer, "input_mean": 0.0, "input_std": 1.0}
    return Graph(layers, kind="strong", seed=seed, meta=meta)


def spec_of(g: Graph) -> ModelSpec:
    s = g.meta["spec"]
    return ModelSpec(widths=tuple(s["widths"]), hidden=int(s["hidden"]), n_classes=int(s["n_classes"]))


@dataclass
class WeakModel:
    graph: Graph
    loss_curve: List[float] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return int(self.graph.meta["spec"]["n_classes"])

    @property
    def embed_dim(self) -> int:
        return spec_of(self.graph).embed_dim

    def save(self, path: Path) -> None:
        save_checkpoint(self.graph, path)

    @classmethod
    def load(cls, path: Path) -> "WeakModel":
        return cls(load_checkpoint(path, expected_kind="weak"))


@dataclass
class StrongModel:
    graph: Graph
    loss_curve: List[float] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return int(self.graph.meta["spec"]["n_classes"])

    @property
    def embed_dim(self) -> int:
        return spec_of(self.graph).embed_dim

    def save(self, path: Path) -> None:
        save_checkpoint(self.graph, path)

    @classmethod
    def load(cls, path: Path) -> "StrongModel":
        return cls(load_checkpoint(path, expected_kind="strong"))


@dataclass(frozen=True)
class PseudoStrongLabels:
    labels: np.ndarray  # (windows, classes) in {0, 1}
    window_hop_s: float = 0.1
    window_len_s: float = 0.5
    threshold: float = 0.5

    @property
    def n_windows(self) -> int:
        return int(self.labels.shape[0])


# ---------------------------------------------------------------------------
# features


def _model_input(g: Graph, frames: np.ndarray) -> np.ndarray:
    """(T, 64) or (N, T, 64) logmel -> normalized (N, 1, T, 64)."""
    f = np.asarray(frames, dtype=np.float64)
    if f.ndim == 2:
        f = f[None]
    return ((f - g.meta["input_mean"]) / g.meta["input_std"])[:, None, :, :]


def _fixed_length(frames: np.ndarray, n: int) -> np.ndarray:
    if frames.shape[0] >= n:
        return frames[:n]
    pad = np.full((n - frames.shape[0], frames.shape[1]), np.log(audio.LOG_FLOOR))
    return np.concatenate([frames, pad], axis=0)


def _augmented_frames(
    w: Waveform, cfg: WeakTrainConfig, rng: np.random.Generator, n_frames: int
) -> Tuple[np.ndarray, float]:
    rate = 1.0
    if cfg.augment:
        rate = float(rng.uniform(1.0 - cfg.resample_range, 1.0 + cfg.resample_range))
        w = audio.augment_resample(w, rate)
        w = audio.augment_gain(w, float(rng.uniform(-cfg.gain_db, cfg.gain_db)))
    m = audio.logmel(w)
    if cfg.augment and (cfg.time_masks or cfg.freq_masks):
        max_t = max(1, min(cfg.max_t, m.n_frames - 1))
        m = audio.spec_augment(m, rng, cfg.time_masks if m.n_frames > 1 else 0, cfg.freq_masks, max_t, cfg.max_f)
    return _fixed_length(m.frames, n_frames), rate


def _input_stats(clips: Sequence[Clip]) -> Tuple[float, float]:
    total, sq, n = 0.0, 0.0, 0
    for c in clips:
        f = audio.logmel(c.load()).frames
        total += float(f.sum())
        sq += float((f * f).sum())
        n += f.size
    mean = total / n
    std = float(np.sqrt(max(sq / n - mean * mean, 1e-12)))
    return mean, std


def _check_dataset(clips: Sequence[Clip], n_classes: int) -> None:
    if not clips:
        raise DatasetError("empty dataset")
    for i, c in enumerate(clips):
        for k in c.labels:
            if not 0 <= k < n_classes:
                raise DatasetError(f"clip {i}: class {k} does not exist in a {n_classes}-class model")


# ---------------------------------------------------------------------------
# shared training loop

LossFn = Callable[[np.ndarray, List[int], np.ndarray, List[float], float, np.ndarray], Tuple[float, np.ndarray]]


def _fit(
    g: Graph,
    clips: Sequence[Clip],
    cfg: WeakTrainConfig,
    loss_fn: LossFn,
    tag: str,
    stream: Optional[str] = None,
) -> List[float]:
    """Mini-batch AdamW with the one-cycle schedule.

    ``loss_fn(logits, idx, x, rates, lam, perm)`` returns (loss, dL/dlogits)
    where idx are the dataset indices, rates the per-item resample factors and
    (lam, perm) the mixup pairing (item i mixed with item perm[i]).
    Batches, augmentation and mixup draw from ``stream`` (default ``tag``);
    ``tag`` only labels the log lines.
    """
    n = len(clips)
    n_classes = int(g.meta["spec"]["n_classes"])
    n_frames = audio.n_logmel_frames(int(round(cfg.clip_s * audio.SAMPLE_RATE)))
    probs = sampling_weights(clips, n_classes)
    batches_per_epoch = max(1, int(np.ceil(n / cfg.batch_size)))
    total = cfg.epochs * batches_per_epoch
    stream = stream or tag
    state = AdamState()
    curve: List[float] = []
    step = 0
    for epoch in range(cfg.epochs):
        erng = derive_rng(cfg.seed, stream, "epoch", epoch)
        order = erng.choice(n, size=batches_per_epoch * cfg.batch_size, replace=True, p=probs)
        epoch_loss = 0.0
        for b in range(batches_per_epoch):
            idx = [int(i) for i in order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            feats, rates = [], []
            for slot, i in enumerate(idx):
                frames, rate = _augmented_frames(clips[i].load(), cfg, derive_rng(cfg.seed, stream, epoch, b, slot), n_frames)
                feats.append(frames)
                rates.append(rate)
            x = np.stack(feats)
            lam, perm = 1.0, np.arange(len(idx))
            if cfg.augment and cfg.mixup and len(idx) > 1:
                brng = derive_rng(cfg.seed, stream, "mixup", epoch, b)
                lam = audio.sample_mixup_lambda(brng, cfg.mixup_alpha)
                perm = brng.permutation(len(idx))
                x = lam * x + (1.0 - lam) * x[perm]
            logits, cache = forward(g, _model_input(g, x), keep=False)
            loss, dlogits = loss_fn(logits, idx, x, rates, lam, perm)
            grads = backward(g, cache, dlogits)
            lr = one_cycle_lr(step + 1, total, cfg.peak_lr, cfg.final_lr, cfg.warmup_frac)
            new_params, state = adamw_step(g.params, grads.params, state, lr, cfg.weight_decay)
            g.set_params(new_params)
            epoch_loss += loss
            step += 1
        curve.append(epoch_loss / batches_per_epoch)
        logger.info("%s epoch %d/%d loss %.5f", tag, epoch + 1, cfg.epochs, curve[-1])
    return curve


def _weak_targets(clips: Sequence[Clip], idx: List[int], n_classes: int, lam: float, perm: np.ndarray) -> np.ndarray:
    y = np.stack([multi_hot(clips[i].labels, n_classes) for i in idx])
    return lam * y + (1.0 - lam) * y[perm]


def train_weak(
    clips: Sequence[Clip],
    cfg: WeakTrainConfig,
    spec: ModelSpec,
) -> WeakModel:
    """Weak-label multi-label classifier trained with per-class BCE."""
    _check_dataset(clips, spec.n_classes)
    g = build_weak_graph(spec, seed=cfg.seed)
    g.meta["input_mean"], g.meta["input_std"] = _input_stats(clips)

    def loss_fn(logits, idx, x, rates, lam, perm):
        return bce_with_logits(logits, _weak_targets(clips, idx, spec.n_classes, lam, perm))

    curve = _fit(g, clips, cfg, loss_fn, "weak")
    model = WeakModel(g, curve)
    if cfg.epochs:
        m_ap, dprime = evaluate_weak(model, clips)
        logger.info("weak training mAP %.4f d-prime %.3f", m_ap, dprime)
    return model


def distill_loss(
    student_logits: np.ndarray,
    teacher_logits: np.ndarray,
    targets: np.ndarray,
    temperature: float,
    kd_weight: float,
) -> Tuple[float, np.ndarray]:
    """kd_weight * binary-KL(teacher || student) * T^2 + (1 - kd_weight) * BCE."""
    kd, dkd = binary_kl_with_logits(student_logits, teacher_logits, temperature)
    ce, dce = bce_with_logits(student_logits, targets)
    return kd_weight * kd + (1.0 - kd_weight) * ce, kd_weight * dkd + (1.0 - kd_weight) * dce


def distill(
    teacher: WeakModel,
    student_spec: ModelSpec,
    clips: Sequence[Clip],
    cfg: WeakTrainConfig,
    dcfg: DistillConfig = DistillConfig(),
    init: Optional[Graph] = None,
) -> WeakModel:
    """Train a student against teacher logits plus the weak labels."""
    if teacher.n_classes != student_spec.n_classes:
        raise DistillationError(
            f"teacher has {teacher.n_classes} classes, student {student_spec.n_classes}"
        )
    _check_dataset(clips, student_spec.n_classes)
    if init is not None:
        g = init.copy()
    else:
        g = build_weak_graph(student_spec, seed=cfg.seed)
        g.meta["input_mean"] = teacher.graph.meta["input_mean"]
        g.meta["input_std"] = teacher.graph.meta["input_std"]
    t_graph = teacher.graph

    def loss_fn(logits, idx, x, rates, lam, perm):
        t_logits, _ = forward(t_graph, _model_input(t_graph, x), keep=False)
        y = _weak_targets(clips, idx, student_spec.n_classes, lam, perm)
        return distill_loss(logits, t_logits, y, dcfg.temperature, dcfg.kd_weight)

    # same batch stream as train_weak: with kd_weight=0 the two runs coincide
    curve = _fit(g, clips, cfg, loss_fn, "distill", stream="weak")
    return WeakModel(g, curve)


# ---------------------------------------------------------------------------
# inference


def weak_logits(model: WeakModel, w: Waveform) -> np.ndarray:
    if w.duration < MIN_EMBED_S:
        raise TooShortError(f"input of {w.duration:.3f} s is shorter than {MIN_EMBED_S} s")
    y, _ = forward(model.graph, _model_input(model.graph, audio.logmel(w).frames), keep=False)
    return y[0].astype(np.float64)


def evaluate_weak(model: WeakModel, clips: Sequence[Clip]) -> Tuple[float, float]:
    scores = np.stack([weak_logits(model, c.load()) for c in clips])
    labels = np.stack([multi_hot(c.labels, model.n_classes) for c in clips])
    return map_and_dprime(scores, labels)


def embed_pooled(model: WeakModel, w: Waveform) -> np.ndarray:
    """Post-pooling embedding (fixed length, independent of duration)."""
    if w.duration < MIN_EMBED_S:
        raise TooShortError(f"input of {w.duration:.3f} s is shorter than {MIN_EMBED_S} s")
    g = model.graph
    h, _ = forward(g, _model_input(g, audio.logmel(w).frames), stop_at=g.meta["embed_layer"], keep=False)
    return h[0].astype(np.float64)


def embed_frames(model: StrongModel, w: Waveform) -> np.ndarray:
    """Per-frame features at the configured tap, one row per 320 ms."""
    if w.duration < MIN_EMBED_S:
        raise TooShortError(f"input of {w.duration:.3f} s is shorter than {MIN_EMBED_S} s")
    g = model.graph
    h, _ = forward(g, _model_input(g, audio.logmel(w).frames), stop_at=g.meta["embed_layer"], keep=False)
    if h.ndim == 4:  # backbone tap: (N, C, T, F) -> (T, C)
        h = h.mean(axis=3, dtype=np.float64).transpose(0, 2, 1)
    return np.asarray(h[0], dtype=np.float64)


def strong_logits(model: StrongModel, w: Waveform) -> np.ndarray:
    if w.duration < MIN_EMBED_S:
        raise TooShortError(f"input of {w.duration:.3f} s is shorter than {MIN_EMBED_S} s")
    y, _ = forward(model.graph, _model_input(model.graph, audio.logmel(w).frames), keep=False)
    return y[0].astype(np.float64)


def n_pseudo_windows(n_samples: int, cfg: PseudoLabelConfig = PseudoLabelConfig()) -> int:
    win = int(round(cfg.window_s * audio.SAMPLE_RATE))
    hop = int(round(cfg.hop_s * audio.SAMPLE_RATE))
    if n_samples < win:
        return 0
    return (n_samples - win) // hop + 1


def pseudo_label(model: WeakModel, w: Waveform, cfg: PseudoLabelConfig = PseudoLabelConfig()) -> PseudoStrongLabels:
    """Slide the weak classifier over short windows and threshold (strict >)."""
    n_win = n_pseudo_windows(len(w), cfg)
    if n_win < 1:
        raise TooShortError(f"input of {w.duration:.3f} s is shorter than the {cfg.window_s} s window")
    hop_frames = int(round(cfg.hop_s * audio.SAMPLE_RATE)) // audio.HOP_LENGTH
    win_frames = audio.n_logmel_frames(int(round(cfg.window_s * audio.SAMPLE_RATE)))
    frames = audio.logmel(w).frames
    windows = np.stack([frames[k * hop_frames:k * hop_frames + win_frames] for k in range(n_win)])
    g = model.graph
    logits, _ = forward(g, _model_input(g, windows), keep=False)
    probs = expit(np.asarray(logits, dtype=np.float64))
    labels = (probs > cfg.threshold).astype(np.uint8)
    return PseudoStrongLabels(labels, cfg.hop_s, cfg.window_s, cfg.threshold)


def strong_frame_targets(
    pseudo: PseudoStrongLabels, n_out: int, rate: float = 1.0
) -> np.ndarray:
    """Pseudo label of the window whose center is nearest each output frame center.

    ``rate`` is the resample factor applied to the audio: augmented time t
    corresponds to original time t * rate.
    """
    frame_s = FRAME_STRIDE * audio.HOP_LENGTH / audio.SAMPLE_RATE
    centers = (np.arange(n_out) + 0.5) * frame_s * rate
    idx = np.rint((centers - pseudo.window_len_s / 2.0) / pseudo.window_hop_s).astype(int)
    idx = np.clip(idx, 0, pseudo.n_windows - 1)
    return pseudo.labels[idx].astype(np.float64)


def train_strong(
    init: WeakModel,
    clips: Sequence[Clip],
    pseudo: Sequence[Optional[PseudoStrongLabels]],
    cfg: WeakTrainConfig,
    embed_layer: str = "pool",
) -> StrongModel:
    """Frame-level model initialized from the weak model's convolutional weights."""
    if len(pseudo) != len(clips) or any(p is None for p in pseudo):
        raise DatasetError("pseudo-strong labels are missing for some clips")
    spec = spec_of(init.graph)
    _check_dataset(clips, spec.n_classes)
    g = build_strong_graph(spec, seed=cfg.seed, embed_layer=embed_layer)
    g.meta["input_mean"] = init.graph.meta["input_mean"]
    g.meta["input_std"] = init.graph.meta["input_std"]
    g.set_params({k: v.copy() for k, v in init.graph.params.items() if k.startswith("conv")})

    def loss_fn(logits, idx, x, rates, lam, perm):
        n_out = logits.shape[1]
        y = np.stack([strong_frame_targets(pseudo[i], n_out, r) for i, r in zip(idx, rates)])
        y = lam * y + (1.0 - lam) * y[perm]
        return bce_with_logits(logits, y)

    curve = _fit(g, clips, cfg, loss_fn, "strong")
    return StrongModel(g, curve)


def window_truth(
    events: Sequence[Tuple[int, float, float]],
    n_windows: int,
    n_classes: int,
    cfg: PseudoLabelConfig = PseudoLabelConfig(),
) -> np.ndarray:
    """Ground-truth window labels: an event marks a window it covers by more than half."""
    out = np.zeros((n_windows, n_classes), dtype=np.uint8)
    starts = np.arange(n_windows) * cfg.hop_s
    for c, on, off in events:
        overlap = np.clip(np.minimum(starts + cfg.window_s, off) - np.maximum(starts, on), 0.0, None)
        out[overlap > 0.5 * cfg.window_s, int(c)] = 1
    return out
