from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, List

import yaml

from seqshot.core.config import config_errors, deep_merge, load_defaults
from seqshot.core.schemas import load_schema, schema_errors


@dataclass
class ValidationResult:
    ok: bool
    errors: List[str]
    warnings: List[str]


def _load_json(p: Path) -> Any:
    return json.loads(p.read_text(encoding="utf-8"))


def _load_yaml(p: Path) -> Any:
    return yaml.safe_load(p.read_text(encoding="utf-8"))


def validate_config(path: Path) -> ValidationResult:
    """A run config file is valid when it merges over the defaults into a schema-valid document."""
    errors: List[str] = []
    warnings: List[str] = []
    try:
        user = _load_yaml(path) or {}
    except yaml.YAMLError as ex:
        return ValidationResult(False, [f"config: not valid YAML: {ex}"], warnings)
    if not isinstance(user, dict):
        return ValidationResult(False, ["config: top level must be a mapping"], warnings)
    errors.extend(config_errors(deep_merge(load_defaults(), user)))
    if "seed" not in user:
        warnings.append("config: no seed given; the default seed 0 applies")
    return ValidationResult(ok=not errors, errors=errors, warnings=warnings)


def validate_manifest(path: Path) -> ValidationResult:
    """Check every JSON-lines record and that the referenced WAV files exist."""
    errors: List[str] = []
    warnings: List[str] = []
    schema = load_schema("manifest-record.schema.json")
    n = 0
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        n += 1
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as ex:
            errors.append(f"line {i}: not valid JSON: {ex}")
            continue
        errs = schema_errors(rec, schema, f"line {i}")
        errors.extend(errs)
        if errs:
            continue
        if not (path.parent / rec["wav"]).is_file():
            errors.append(f"line {i}: missing audio file {rec['wav']}")
        for c, on, off in rec.get("events", []):
            if off <= on:
                errors.append(f"line {i}: event ({c}, {on}, {off}) has offset <= onset")
            if c not in rec["labels"]:
                errors.append(f"line {i}: event class {c} missing from weak labels")
    if n == 0:
        errors.append("manifest has no records")
    return ValidationResult(ok=not errors, errors=errors, warnings=warnings)


def validate_episode(path: Path) -> ValidationResult:
    errors: List[str] = []
    warnings: List[str] = []
    try:
        doc = _load_json(path)
    except json.JSONDecodeError as ex:
        return ValidationResult(False, [f"episode: not valid JSON: {ex}"], warnings)
    errors.extend(schema_errors(doc, load_schema("episode.schema.json"), "episode"))
    if errors:
        return ValidationResult(False, errors, warnings)

    labels = {it["label"] for it in doc["eval"]}
    for want in ("target", "nontarget"):
        if want not in labels:
            errors.append(f"episode: eval has no '{want}' item")
    for rec in doc["enrollment"] + doc["eval"]:
        if not (path.parent / rec["wav"]).is_file():
            errors.append(f"episode: missing audio file {rec['wav']}")
    if any(e.get("truth") is None for e in doc["enrollment"]):
        warnings.append("episode: some shots carry no ground-truth segment; curation IoU will be skipped")
    return ValidationResult(ok=not errors, errors=errors, warnings=warnings)


def validate_path(path: Path) -> ValidationResult:
    """Dispatch on the file type: ``.yaml``/``.yml`` config, ``.jsonl`` manifest, ``.json`` episode."""
    path = Path(path)
    if path.is_dir() and (path / "episode.json").is_file():
        path = path / "episode.json"
    if not path.is_file():
        return ValidationResult(False, [f"not a file: {path}"], [])
    suffix = path.suffix.lower()
    if suffix in {".yaml", ".yml"}:
        return validate_config(path)
    if suffix == ".jsonl":
        return validate_manifest(path)
    if suffix == ".json":
        return validate_episode(path)
    return ValidationResult(False, [f"unsupported file type: {path.name}"], [])
