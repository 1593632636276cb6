from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from seqshot.core.audio import Waveform
from seqshot.core.augment import AugmentConfig, DeltaEncoder, EmbeddingSequence, read_donor_pairs
from seqshot.core.curation import CurationConfig, Segment
from seqshot.core.detector import DetectorConfig, MarginConfig
from seqshot.core.errors import EpisodeError
from seqshot.core.pretrain import StrongModel, WeakModel

logger = logging.getLogger(__name__)

WEAK_FILE = "weak.sqck"
STRONG_FILE = "strong.sqck"
DONOR_DIR = "donors"


@dataclass(frozen=True)
class SystemConfig:
    """Everything a system needs to enroll, apart from the audio.

    ``seed`` drives augmentation and detector initialization; each
    evaluation rep passes a different one.
    """

    seed: int = 0
    curation: CurationConfig = CurationConfig()
    augment: AugmentConfig = AugmentConfig()
    detector: DetectorConfig = DetectorConfig()
    margin: MarginConfig = MarginConfig()
    per_sequence_delta: bool = False


@dataclass
class ModelBundle:
    """Pretrained artifacts shared by all systems."""

    weak: WeakModel
    strong: StrongModel
    delta: Optional[DeltaEncoder] = None
    donors: List[Tuple[EmbeddingSequence, EmbeddingSequence]] = field(default_factory=list)

    @classmethod
    def load(cls, models_dir: Path) -> "ModelBundle":
        models_dir = Path(models_dir)
        for name in (WEAK_FILE, STRONG_FILE):
            if not (models_dir / name).is_file():
                raise EpisodeError(f"{models_dir}: missing {name}")
        delta = None
        if (models_dir / "delta_encoder.sqck").is_file():
            delta = DeltaEncoder.load(models_dir)
        donors: List[Tuple[EmbeddingSequence, EmbeddingSequence]] = []
        if (models_dir / DONOR_DIR / "manifest.json").is_file():
            donors = read_donor_pairs(models_dir / DONOR_DIR)
        return cls(WeakModel.load(models_dir / WEAK_FILE), StrongModel.load(models_dir / STRONG_FILE), delta, donors)


class FewShotSystem:
    """Enroll from shots (plus curated segments), then score clips.

    ``embed`` and ``score_embedded`` split scoring so callers can embed each
    evaluation clip once and score it under several enrollments.
    """

    name: str

    def __init__(self, models: ModelBundle, config: SystemConfig) -> None:
        self.models = models
        self.config = config
        self.info: Dict[str, Any] = {}

    def enroll(self, shots: Sequence[Waveform], segments: Sequence[Segment]) -> None:
        raise NotImplementedError

    def embed(self, w: Waveform) -> np.ndarray:
        raise NotImplementedError

    def score_embedded(self, e: np.ndarray) -> float:
        raise NotImplementedError

    def score(self, w: Waveform) -> float:
        return self.score_embedded(self.embed(w))
