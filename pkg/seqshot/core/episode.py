"""Episode descriptors and the access audit guarding evaluation audio."""
from __future__ import annotations

import contextlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

from seqshot.core import audio
from seqshot.core.audio import Waveform
from seqshot.core.curation import Segment
from seqshot.core.errors import EpisodeError
from seqshot.core.schemas import load_schema, schema_errors
from seqshot.core.utils import safe_write_text

DESCRIPTOR_VERSION = 1
TARGET_LABEL, NONTARGET_LABEL = "target", "nontarget"


@dataclass
class AccessAudit:
    """Counts audio reads per role; eval reads can be forbidden for a block."""

    reads: Dict[str, int] = field(default_factory=lambda: {"enrollment": 0, "eval": 0})
    _eval_forbidden: bool = False

    def record(self, role: str) -> None:
        if role == "eval" and self._eval_forbidden:
            raise EpisodeError("evaluation audio read while building the detector")
        self.reads[role] = self.reads.get(role, 0) + 1

    @contextlib.contextmanager
    def forbid_eval(self) -> Iterator["AccessAudit"]:
        before = self.reads.get("eval", 0)
        self._eval_forbidden = True
        try:
            yield self
        finally:
            self._eval_forbidden = False
        if self.reads.get("eval", 0) != before:
            raise EpisodeError("evaluation audio was read inside a forbidden block")


@dataclass
class AudioRef:
    path: Optional[Path] = None
    waveform: Optional[Waveform] = None

    def load(self) -> Waveform:
        if self.waveform is not None:
            return self.waveform
        if self.path is None:
            raise EpisodeError("audio reference has neither a path nor a waveform")
        return audio.load_wav(self.path)


@dataclass
class EvalItem:
    ref: AudioRef
    label: str
    field: str = "near"
    motif: int = -1

    @property
    def is_target(self) -> bool:
        return self.label == TARGET_LABEL


@dataclass
class Episode:
    enrollment: List[AudioRef]
    items: List[EvalItem]
    truth: List[Optional[Segment]] = field(default_factory=list)
    name: str = "episode"
    target_duration_s: float = 0.0
    meta: Dict[str, Any] = field(default_factory=dict)
    audit: AccessAudit = field(default_factory=AccessAudit)

    def __post_init__(self) -> None:
        if not self.enrollment:
            raise EpisodeError(f"{self.name}: no enrollment shots")
        labels = {it.label for it in self.items}
        if self.items and labels != {TARGET_LABEL, NONTARGET_LABEL}:
            raise EpisodeError(f"{self.name}: eval labels must include target and nontarget, got {sorted(labels)}")

    @property
    def k_shots(self) -> int:
        return len(self.enrollment)

    def enrollment_audio(self) -> List[Waveform]:
        out = []
        for ref in self.enrollment:
            self.audit.record("enrollment")
            out.append(ref.load())
        return out

    def eval_audio(self, i: int) -> Waveform:
        self.audit.record("eval")
        return self.items[i].ref.load()

    def labels(self) -> List[int]:
        return [1 if it.is_target else 0 for it in self.items]

    # -- descriptor ---------------------------------------------------------

    def to_descriptor(self, base: Path) -> Dict[str, Any]:
        def rel(ref: AudioRef) -> str:
            if ref.path is None:
                raise EpisodeError(f"{self.name}: in-memory audio cannot be described")
            return Path(ref.path).relative_to(base).as_posix()

        return {
            "version": DESCRIPTOR_VERSION,
            "name": self.name,
            "target_duration_s": round(self.target_duration_s, 6),
            "meta": self.meta,
            "enrollment": [
                {"wav": rel(r), "truth": None if t is None else [round(t.onset_s, 6), round(t.offset_s, 6)]}
                for r, t in zip(self.enrollment, self.truth or [None] * len(self.enrollment))
            ],
            "eval": [
                {"wav": rel(it.ref), "label": it.label, "field": it.field, "motif": it.motif}
                for it in self.items
            ],
        }

    def save(self, path: Path) -> None:
        path = Path(path)
        safe_write_text(path, json.dumps(self.to_descriptor(path.parent), indent=2) + "\n")

    @classmethod
    def from_descriptor(cls, doc: Dict[str, Any], base: Path) -> "Episode":
        if doc.get("version") != DESCRIPTOR_VERSION:
            raise EpisodeError(f"unsupported episode descriptor version {doc.get('version')}")
        enrollment = [AudioRef(path=base / e["wav"]) for e in doc["enrollment"]]
        truth = [
            None if e.get("truth") is None else Segment(i, float(e["truth"][0]), float(e["truth"][1]))
            for i, e in enumerate(doc["enrollment"])
        ]
        items = [
            EvalItem(AudioRef(path=base / it["wav"]), it["label"], it.get("field", "near"), int(it.get("motif", -1)))
            for it in doc["eval"]
        ]
        return cls(
            enrollment, items, truth,
            name=doc.get("name", "episode"),
            target_duration_s=float(doc.get("target_duration_s", 0.0)),
            meta=dict(doc.get("meta", {})),
        )

    @classmethod
    def load(cls, path: Path) -> "Episode":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as ex:
            raise EpisodeError(f"{path}: cannot read episode descriptor: {ex}") from ex
        errors = schema_errors(doc, load_schema("episode.schema.json"), str(path))
        if errors:
            raise EpisodeError("invalid episode descriptor:\n  " + "\n  ".join(errors))
        return cls.from_descriptor(doc, path.parent)
