"""Binary detector over embedding sequences with a large-margin objective.

Network: linear projection -> L dilated causal conv1d layers (ReLU) ->
mean over time -> two logits (target, nontarget).

The margin of a sample at feature map h is

    d = (f_i - f_other) / (||grad_h (f_i - f_other)||_F + eps)

and the loss is ``margin_weight * mean(sum_layers max(0, gamma - d)) +
bce_weight * mean(BCE(sigmoid(f_target - f_nontarget)))``. Denominators are
held constant when differentiating, so every term is a scalar multiple of
grad_theta (f_i - f_other) and one backward pass per sample is enough.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, log_expit

from seqshot.core import audio
from seqshot.core.audio import Waveform
from seqshot.core.augment import TARGET, EmbeddingSequence, TrainSet
from seqshot.core.errors import DetectorError, SingleClassError, TooShortError
from seqshot.core.pretrain import FRAME_STRIDE, MIN_EMBED_S, StrongModel, embed_frames
from seqshot.core.utils import derive_rng
from seqshot.nn import (
    AdamState,
    Conv1D,
    Graph,
    Linear,
    ReLU,
    TimePool,
    adamw_step,
    backward,
    forward,
    load_checkpoint,
    save_checkpoint,
)

logger = logging.getLogger(__name__)

INPUT = "input"
Sample = Union[EmbeddingSequence, np.ndarray]


@dataclass(frozen=True)
class MarginConfig:
    gamma: float = 1.0
    eps: float = 1e-6
    layers: Optional[Tuple[str, ...]] = None  # None: input plus every conv output
    bce_weight: float = 0.1
    margin_weight: float = 1.0
    layer_reduce: str = "sum"

    def __post_init__(self) -> None:
        if self.eps <= 0 or self.gamma <= 0 or self.bce_weight < 0:
            raise DetectorError(f"invalid margin config {self}")
        if self.layer_reduce not in ("sum", "mean"):
            raise DetectorError(f"layer_reduce must be 'sum' or 'mean', got {self.layer_reduce!r}")


@dataclass(frozen=True)
class DetectorConfig:
    proj_dim: int = 32
    n_layers: int = 3
    kernel: int = 3
    epochs: int = 200
    lr: float = 0.001
    weight_decay: float = 0.01
    batch_size: int = 16  # 0: full batch
    seed: int = 0


@dataclass
class DetectorNet:
    graph: Graph
    loss_curve: List[float] = field(default_factory=list)
    train_accuracy: float = float("nan")

    @classmethod
    def build(cls, embed_dim: int, cfg: DetectorConfig = DetectorConfig(), window_frames: int = 0) -> "DetectorNet":
        layers: list = [Linear("proj", embed_dim, cfg.proj_dim)]
        for i in range(cfg.n_layers):
            layers.append(Conv1D(f"conv{i}", cfg.proj_dim, cfg.proj_dim, cfg.kernel, dilation=2 ** i, causal=True))
            layers.append(ReLU(f"relu{i}"))
        layers += [TimePool("pool"), Linear("head", cfg.proj_dim, 2)]
        meta = {"embed_dim": embed_dim, "window_frames": window_frames}
        return cls(Graph(layers, kind="detector", seed=cfg.seed, meta=meta))

    @property
    def window_frames(self) -> int:
        return int(self.graph.meta.get("window_frames", 0))

    def conv_layers(self) -> List[str]:
        return [ly.name for ly in self.graph.layers if isinstance(ly, Conv1D)]

    def save(self, path: Path) -> None:
        save_checkpoint(self.graph, path)

    @classmethod
    def load(cls, path: Path) -> "DetectorNet":
        return cls(load_checkpoint(path, expected_kind="detector"))


def _graph(net: Union[DetectorNet, Graph]) -> Graph:
    return net.graph if isinstance(net, DetectorNet) else net


def _batch1(x: Sample) -> np.ndarray:
    f = x.frames if isinstance(x, EmbeddingSequence) else np.asarray(x, dtype=np.float64)
    return f[None]


def _layer_set(g: Graph, cfg: MarginConfig) -> Tuple[str, ...]:
    if cfg.layers is not None:
        return cfg.layers
    return (INPUT,) + tuple(ly.name for ly in g.layers if isinstance(ly, Conv1D))


def logit_index(label: int) -> int:
    """Logit position of a class: 0 for target, 1 for nontarget."""
    return 0 if label == TARGET else 1


@dataclass
class _Pass:
    u: float  # f_i - f_other
    v: float  # f_target - f_nontarget
    norms: Dict[str, float]
    grads: Dict[str, np.ndarray]


def _margin_pass(g: Graph, x: Sample, true_class: int, layers: Sequence[str]) -> _Pass:
    if true_class not in (0, 1):
        raise DetectorError(f"true_class must be 0 or 1, got {true_class}")
    names = set(g.layer_names())
    for name in layers:
        if name != INPUT and name not in names:
            raise DetectorError(f"unknown layer '{name}'")
    y, cache = forward(g, _batch1(x))
    f = np.asarray(y, dtype=np.float64).reshape(-1)
    dy = np.zeros((1, 2))
    dy[0, true_class], dy[0, 1 - true_class] = 1.0, -1.0
    gr = backward(g, cache, dy)
    norms = {}
    for name in layers:
        h = gr.dx if name == INPUT else gr.features[name]
        norms[name] = float(np.linalg.norm(np.asarray(h, dtype=np.float64)))
    return _Pass(float(f[true_class] - f[1 - true_class]), float(f[0] - f[1]), norms, gr.params)


def margin_distance(net: Union[DetectorNet, Graph], x: Sample, true_class: int, layer: str = INPUT, eps: float = 1e-6) -> float:
    """Logit difference over the gradient norm at ``layer`` ("input" or a layer name)."""
    p = _margin_pass(_graph(net), x, true_class, (layer,))
    return p.u / (p.norms[layer] + eps)


@dataclass
class LossResult:
    loss: float
    grads: Dict[str, np.ndarray]
    denominators: List[Dict[str, float]]
    margins: List[Dict[str, float]]


def detector_loss(
    net: Union[DetectorNet, Graph],
    batch: Sequence[EmbeddingSequence],
    cfg: MarginConfig = MarginConfig(),
    denominators: Optional[Sequence[Dict[str, float]]] = None,
) -> LossResult:
    """Multi-layer hinge on margin distances plus a small BCE term.

    ``denominators`` (per sample, per layer; eps included) replaces the
    freshly computed ones, which lets callers evaluate the loss with the
    denominators frozen at another parameter point.
    """
    if not batch:
        raise DetectorError("empty batch")
    g = _graph(net)
    layers = _layer_set(g, cfg)
    n = len(batch)
    scale = 1.0 if cfg.layer_reduce == "sum" else 1.0 / len(layers)
    total = 0.0
    grads: Dict[str, np.ndarray] = {}
    dens: List[Dict[str, float]] = []
    margins: List[Dict[str, float]] = []
    for k, item in enumerate(batch):
        i = logit_index(item.label)
        p = _margin_pass(g, item, i, layers)
        den = dict(denominators[k]) if denominators is not None else {l: p.norms[l] + cfg.eps for l in layers}
        d = {l: p.u / den[l] for l in layers}
        hinge = sum(max(0.0, cfg.gamma - d[l]) for l in layers) * scale
        y = 1.0 if item.label == TARGET else 0.0
        bce = -(y * float(log_expit(p.v)) + (1.0 - y) * float(log_expit(-p.v)))
        total += (cfg.margin_weight * hinge + cfg.bce_weight * bce) / n
        s = 1.0 if i == 0 else -1.0  # dv/du
        dmargin = -sum(1.0 / den[l] for l in layers if cfg.gamma - d[l] > 0) * scale
        coeff = (cfg.margin_weight * dmargin + cfg.bce_weight * (float(expit(p.v)) - y) * s) / n
        for name, gp in p.grads.items():
            grads[name] = grads.get(name, 0.0) + coeff * gp
        dens.append(den)
        margins.append(d)
    return LossResult(total, grads, dens, margins)


def score(net: Union[DetectorNet, Graph], x: Sample) -> float:
    """sigmoid(f_target - f_nontarget)."""
    y, _ = forward(_graph(net), _batch1(x), keep=False)
    f = np.asarray(y, dtype=np.float64).reshape(-1)
    return float(expit(f[0] - f[1]))


def score_batch(net: Union[DetectorNet, Graph], frames: np.ndarray) -> np.ndarray:
    y, _ = forward(_graph(net), frames, keep=False)
    f = np.asarray(y, dtype=np.float64)
    return expit(f[:, 0] - f[:, 1])


def train_detector(
    data: Union[TrainSet, Sequence[EmbeddingSequence]],
    cfg: DetectorConfig = DetectorConfig(),
    margin: MarginConfig = MarginConfig(),
) -> DetectorNet:
    """AdamW at a fixed learning rate on the margin objective."""
    items = list(data.items if isinstance(data, TrainSet) else data)
    if not items:
        raise SingleClassError("empty training set")
    labels = {s.label for s in items}
    if len(labels) < 2:
        raise SingleClassError(f"training set has a single class {labels}")
    window = data.window_frames if isinstance(data, TrainSet) else max(s.n_frames for s in items)
    net = DetectorNet.build(items[0].dim, cfg, window)
    g = net.graph
    state = AdamState()
    bs = cfg.batch_size or len(items)
    for epoch in range(cfg.epochs):
        order = derive_rng(cfg.seed, "detector", epoch).permutation(len(items))
        epoch_loss = 0.0
        n_batches = 0
        for b in range(0, len(items), bs):
            res = detector_loss(net, [items[i] for i in order[b : b + bs]], margin)
            new, state = adamw_step(g.params, res.grads, state, cfg.lr, cfg.weight_decay)
            g.set_params(new)
            epoch_loss += res.loss
            n_batches += 1
        net.loss_curve.append(epoch_loss / n_batches)
        if (epoch + 1) % 20 == 0 or epoch + 1 == cfg.epochs:
            logger.info("detector epoch %d/%d loss %.5f", epoch + 1, cfg.epochs, net.loss_curve[-1])
    net.train_accuracy = accuracy(net, items)
    logger.info("detector training accuracy %.4f", net.train_accuracy)
    return net


def accuracy(net: DetectorNet, items: Sequence[EmbeddingSequence]) -> float:
    hits = [(score(net, s) > 0.5) == (s.label == TARGET) for s in items]
    return float(np.mean(hits))


def detect_frames(net: DetectorNet, frames: np.ndarray, window_frames: Optional[int] = None, hop_frames: int = 1) -> np.ndarray:
    """Window scores over a precomputed (T, E) embedding sequence."""
    w = int(window_frames or net.window_frames)
    if w < 1:
        raise DetectorError("window length unknown; pass window_frames")
    if frames.shape[0] < w:
        raise TooShortError(f"{frames.shape[0]} embedding frames, window needs {w}", module="fewshot_classifier")
    starts = np.arange(0, frames.shape[0] - w + 1, hop_frames)
    windows = np.stack([frames[s : s + w] for s in starts])
    return score_batch(net, windows)


def pad_to_window(w: Waveform, window_frames: int) -> Waveform:
    """Append silence so ``w`` yields at least ``window_frames`` embedding frames."""
    n_min = audio.WIN_LENGTH + (max(window_frames, 1) * FRAME_STRIDE - 1) * audio.HOP_LENGTH
    n_min = max(n_min, int(MIN_EMBED_S * audio.SAMPLE_RATE))
    if len(w) >= n_min:
        return w
    return Waveform(np.pad(w.samples, (0, n_min - len(w))), w.sample_rate)


def detect_stream(
    net: DetectorNet,
    strong_model: StrongModel,
    w: Waveform,
    window_frames: Optional[int] = None,
    hop_frames: int = 1,
    pad: bool = False,
) -> List[Tuple[float, float]]:
    """(window start in seconds, score) for every window of the enrollment length.

    With ``pad`` a clip shorter than one window is padded with silence
    instead of raising TooShortError.
    """
    if pad:
        w = pad_to_window(w, int(window_frames or net.window_frames))
    frames = embed_frames(strong_model, w)
    scores = detect_frames(net, frames, window_frames, hop_frames)
    frame_s = FRAME_STRIDE * audio.HOP_LENGTH / audio.SAMPLE_RATE
    return [(round(k * hop_frames * frame_s, 6), float(s)) for k, s in enumerate(scores)]


def clip_score(stream: Sequence[Tuple[float, float]]) -> float:
    return max(s for _, s in stream)
