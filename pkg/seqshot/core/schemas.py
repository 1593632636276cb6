from __future__ import annotations

import json
from functools import lru_cache
from typing import Any, Dict, List

from jsonschema import Draft202012Validator

from seqshot.core.resources import read_text as read_resource_text


@lru_cache(maxsize=None)
def _load_schema_text(name: str) -> str:
    return read_resource_text(f"schemas/{name}", encoding="utf-8")


def load_schema(name: str) -> Dict[str, Any]:
    """Load a packaged JSON schema, e.g. ``"run-config.schema.json"``."""
    return json.loads(_load_schema_text(name))


def schema_errors(instance: Any, schema: Dict[str, Any], label: str) -> List[str]:
    v = Draft202012Validator(schema)
    out: List[str] = []
    for e in sorted(v.iter_errors(instance), key=lambda x: list(map(str, x.path))):
        path = "/".join([str(x) for x in e.path])
        out.append(f"{label}: {path}: {e.message}")
    return out
