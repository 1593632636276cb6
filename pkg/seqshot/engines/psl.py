from __future__ import annotations

from dataclasses import replace
from functools import partial
from typing import Sequence

import numpy as np

from seqshot.core.audio import Waveform
from seqshot.core.augment import build_train_set
from seqshot.core.curation import Segment
from seqshot.core.detector import DetectorNet, detect_frames, pad_to_window, train_detector
from seqshot.core.errors import EpisodeError
from seqshot.core.pretrain import embed_frames
from seqshot.engines.base import FewShotSystem


class PSLSystem(FewShotSystem):
    """Frame-sequence system: strong embeddings, synthesized negatives, margin detector."""

    name = "psl"
    net: DetectorNet

    def enroll(self, shots: Sequence[Waveform], segments: Sequence[Segment]) -> None:
        cfg = self.config
        embedder = partial(embed_frames, self.models.strong)
        ts = build_train_set(
            list(zip(shots, segments)),
            embedder,
            replace(cfg.augment, seed=cfg.seed),
            delta=self.models.delta,
            donors=self.models.donors,
            per_sequence=cfg.per_sequence_delta,
        )
        self.train_set = ts
        self.net = train_detector(ts, replace(cfg.detector, seed=cfg.seed), cfg.margin)
        self.info = {
            "train_set": ts.counts(),
            "window_frames": ts.window_frames,
            "train_accuracy": self.net.train_accuracy,
        }

    def embed(self, w: Waveform) -> np.ndarray:
        net = getattr(self, "net", None)
        return embed_frames(self.models.strong, pad_to_window(w, net.window_frames if net is not None else 1))

    def score_embedded(self, e: np.ndarray) -> float:
        if not hasattr(self, "net"):
            raise EpisodeError("psl system scored before enrollment")
        return float(np.max(detect_frames(self.net, e)))
