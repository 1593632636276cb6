from __future__ import annotations

from typing import Dict

from seqshot.core.errors import UnknownEngineError
from seqshot.engines.base import FewShotSystem, ModelBundle, SystemConfig


def get_engine(name: str, models: ModelBundle, config: SystemConfig) -> FewShotSystem:
    name = (name or "").strip().lower()
    if name == "psl":
        from seqshot.engines.psl import PSLSystem

        return PSLSystem(models, config)
    if name == "wl":
        from seqshot.engines.wl import WLSystem

        return WLSystem(models, config)
    raise UnknownEngineError(f"Unsupported engine: {name!r} (known: {', '.join(sorted(list_engines()))})")


def list_engines() -> Dict[str, str]:
    return {
        "psl": "Strong frame-sequence embeddings + synthesized negatives + margin-loss detector",
        "wl": "Pooled weak embeddings scored by cosine similarity to the enrollment centroid",
    }
