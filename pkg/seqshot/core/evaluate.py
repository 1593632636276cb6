"""Episode evaluation and pretraining benchmarks."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from seqshot.core.audio import Waveform
from seqshot.core.curation import CurationReport, curate
from seqshot.core.engines import get_engine
from seqshot.core.episode import Episode
from seqshot.core.errors import EpisodeError, SeqshotError
from seqshot.core.metrics import auprc, map_and_dprime
from seqshot.core.pretrain import Clip, StrongModel, WeakModel, embed_pooled, multi_hot, strong_logits, weak_logits
from seqshot.core.utils import derive_seed
from seqshot.engines.base import ModelBundle, SystemConfig
from seqshot.nn import Graph, load_checkpoint

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalConfig:
    reps: int = 10
    seed: int = 0


@dataclass
class EpisodeResult:
    name: str
    auprc: float
    per_rep: List[float]
    wl_auprc: float
    wl_per_rep: List[float]
    difficulty: float
    target_duration_s: float
    curation_iou: Optional[float] = None
    audit: Dict[str, int] = field(default_factory=dict)

    @property
    def relative_improvement(self) -> float:
        if self.wl_auprc == 0:
            return float("nan")
        return (self.auprc - self.wl_auprc) / self.wl_auprc

    def to_dict(self) -> Dict[str, Any]:
        return {
            "episode": self.name,
            "target_duration_s": round(self.target_duration_s, 6),
            "difficulty": round(self.difficulty, 6),
            "psl_auprc": round(self.auprc, 6),
            "psl_per_rep": [round(v, 6) for v in self.per_rep],
            "wl_auprc": round(self.wl_auprc, 6),
            "wl_per_rep": [round(v, 6) for v in self.wl_per_rep],
            "relative_improvement": round(self.relative_improvement, 6),
            "curation_iou": None if self.curation_iou is None else round(self.curation_iou, 6),
            "audit": dict(self.audit),
        }


def _unit(v: np.ndarray) -> np.ndarray:
    return v / max(float(np.linalg.norm(v)), 1e-12)


def difficulty_index(
    target_embeddings: Sequence[np.ndarray],
    negative_embeddings: Sequence[np.ndarray],
) -> float:
    """1 - mean cosine distance from the target centroid to each negative (higher = harder)."""
    if not target_embeddings or not negative_embeddings:
        raise EpisodeError("difficulty needs target and negative embeddings")
    centroid = _unit(np.mean([_unit(np.asarray(e, dtype=np.float64)) for e in target_embeddings], axis=0))
    dist = [1.0 - float(_unit(np.asarray(n, dtype=np.float64)) @ centroid) for n in negative_embeddings]
    return 1.0 - float(np.mean(dist))


def episode_difficulty(
    episode: Episode,
    shots: Sequence[Waveform],
    clips: Sequence[Waveform],
    report: CurationReport,
    embedder: Callable[[Waveform], np.ndarray],
) -> float:
    targets = [embedder(w.slice(s.onset_s, s.offset_s)) for w, s in zip(shots, report.segments)]
    negatives = [embedder(w) for w, it in zip(clips, episode.items) if not it.is_target]
    return difficulty_index(targets, negatives)


def run_episode(
    episode: Episode,
    models: ModelBundle,
    cfg: EvalConfig = EvalConfig(),
    system_cfg: SystemConfig = SystemConfig(),
) -> EpisodeResult:
    """Curate once, then per rep enroll the PSL system with a fresh seed and score every eval clip.

    The WL baseline has no random state, so it is enrolled once and its
    single AUPRC is repeated across reps.
    """
    if cfg.reps < 1:
        raise EpisodeError(f"reps must be >= 1, got {cfg.reps}")
    pooled = partial(embed_pooled, models.weak)
    labels = episode.labels()
    try:
        with episode.audit.forbid_eval():
            shots = episode.enrollment_audio()
            report = curate(shots, pooled, system_cfg.curation, truth=episode.truth or None)
            wl = get_engine("wl", models, system_cfg)
            wl.enroll(shots, report.segments)
        clips = [episode.eval_audio(i) for i in range(len(episode.items))]
        wl_scores = [wl.score(w) for w in clips]
        wl_ap = auprc(wl_scores, labels)

        per_rep: List[float] = []
        cached: Optional[List[np.ndarray]] = None
        for rep in range(cfg.reps):
            seed = derive_seed(cfg.seed, episode.name, rep)
            psl = get_engine("psl", models, replace(system_cfg, seed=seed))
            with episode.audit.forbid_eval():
                psl.enroll(shots, report.segments)
            if cached is None:
                cached = [psl.embed(w) for w in clips]
            scores = [psl.score_embedded(e) for e in cached]
            per_rep.append(auprc(scores, labels))
            logger.info("%s rep %d/%d: PSL AUPRC %.4f (WL %.4f)", episode.name, rep + 1, cfg.reps, per_rep[-1], wl_ap)
        difficulty = episode_difficulty(episode, shots, clips, report, pooled)
    except EpisodeError:
        raise
    except SeqshotError as ex:
        raise EpisodeError(f"{episode.name}: {ex}") from ex

    iou = None if report.iou is None else float(np.mean(report.iou))
    return EpisodeResult(
        name=episode.name,
        auprc=float(np.median(per_rep)),
        per_rep=per_rep,
        wl_auprc=wl_ap,
        wl_per_rep=[wl_ap] * cfg.reps,
        difficulty=difficulty,
        target_duration_s=episode.target_duration_s,
        curation_iou=iou,
        audit=dict(episode.audit.reads),
    )


# ---------------------------------------------------------------------------
# pretraining benchmark


def _clip_scores(g: Graph, w: Waveform) -> np.ndarray:
    if g.kind == "weak":
        return weak_logits(WeakModel(g), w)
    return strong_logits(StrongModel(g), w).max(axis=0)


def benchmark(models_dir: Path, clips: Sequence[Clip]) -> List[Dict[str, Any]]:
    """Parameter count, mAP and d' of every weak/strong checkpoint in a directory.

    The strong model's clip score for a class is its maximum over output frames.
    """
    rows = []
    waves = [c.load() for c in clips]
    for path in sorted(Path(models_dir).glob("*.sqck")):
        g = load_checkpoint(path)
        if g.kind not in ("weak", "strong"):
            continue
        n_classes = int(g.meta["spec"]["n_classes"])
        scores = np.stack([_clip_scores(g, w) for w in waves])
        labels = np.stack([multi_hot(c.labels, n_classes) for c in clips])
        m_ap, dprime = map_and_dprime(scores, labels)
        rows.append({"model": path.stem, "kind": g.kind, "params": g.n_params(),
                     "mAP": round(m_ap, 6), "d_prime": round(dprime, 6)})
        logger.info("%s: %d params, mAP %.4f, d' %.3f", path.stem, g.n_params(), m_ap, dprime)
    return rows
