from __future__ import annotations

from typing import Sequence

import numpy as np

from seqshot.core import audio
from seqshot.core.audio import Waveform
from seqshot.core.curation import Segment
from seqshot.core.errors import EpisodeError
from seqshot.core.pretrain import MIN_EMBED_S, embed_pooled
from seqshot.engines.base import FewShotSystem


def _unit(v: np.ndarray) -> np.ndarray:
    return v / max(float(np.linalg.norm(v)), 1e-12)


class WLSystem(FewShotSystem):
    """Pooled-embedding baseline: cosine similarity to the centroid of the curated shots."""

    name = "wl"
    centroid: np.ndarray

    def enroll(self, shots: Sequence[Waveform], segments: Sequence[Segment]) -> None:
        vecs = [_unit(self.embed(w.slice(s.onset_s, s.offset_s))) for w, s in zip(shots, segments)]
        self.centroid = _unit(np.mean(vecs, axis=0))
        self.info = {"shots": len(vecs)}

    def embed(self, w: Waveform) -> np.ndarray:
        n_min = int(MIN_EMBED_S * audio.SAMPLE_RATE)
        if len(w) < n_min:
            w = Waveform(np.pad(w.samples, (0, n_min - len(w))), w.sample_rate)
        return embed_pooled(self.models.weak, w)

    def score_embedded(self, e: np.ndarray) -> float:
        if not hasattr(self, "centroid"):
            raise EpisodeError("wl system scored before enrollment")
        return float(_unit(e) @ self.centroid)
