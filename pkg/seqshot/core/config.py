"""Run configuration: packaged defaults, user file, seed and dotted overrides.

The merged document is validated against ``run-config.schema.json`` before any
work starts. Every block maps onto the frozen config dataclass of the module
that consumes it; the builders below do that mapping.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import yaml

from seqshot.core.audio import FrontendConfig
from seqshot.core.augment import AugmentConfig, DeltaConfig
from seqshot.core.corpus import CorpusConfig
from seqshot.core.curation import CurationConfig
from seqshot.core.detector import DetectorConfig, MarginConfig
from seqshot.core.errors import ConfigError
from seqshot.core.evaluate import EvalConfig
from seqshot.core.pretrain import DistillConfig, ModelSpec, PseudoLabelConfig, WeakTrainConfig
from seqshot.core.resources import read_text as read_resource_text
from seqshot.core.schemas import load_schema, schema_errors
from seqshot.core.utils import safe_write_text
from seqshot.engines.base import SystemConfig

logger = logging.getLogger(__name__)

DEFAULTS_RESOURCE = "config/defaults.yaml"
SCHEMA_NAME = "run-config.schema.json"


def load_defaults() -> Dict[str, Any]:
    return yaml.safe_load(read_resource_text(DEFAULTS_RESOURCE))


def deep_merge(base: Dict[str, Any], over: Dict[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; ``over`` wins, lists are replaced whole."""
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_overrides(tokens: Sequence[str]) -> Dict[str, Any]:
    """``["--curation.tau", "0.3", "--detector.margin.gamma=2"]`` -> nested dict.

    Values are parsed as YAML scalars, so ``true``, ``null``, ``[1, 2]`` and
    numbers come through typed.
    """
    out: Dict[str, Any] = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"unrecognized argument: {tok}")
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"override {tok} is missing a value")
            raw = tokens[i + 1]
            i += 2
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as ex:
            raise ConfigError(f"override {tok}: cannot parse {raw!r}: {ex}") from ex
        parts = key.split(".")
        if any(not p for p in parts):
            raise ConfigError(f"malformed override key: {key}")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key} conflicts with an earlier scalar override")
        node[parts[-1]] = value
    return out


def config_errors(doc: Any) -> List[str]:
    return schema_errors(doc, load_schema(SCHEMA_NAME), "config")


def _semantic_errors(doc: Dict[str, Any]) -> List[str]:
    errors: List[str] = []
    aug = doc.get("augment", {})
    if aug.get("mask_min", 0) > aug.get("mask_max", 1):
        errors.append("config: augment: mask_min exceeds mask_max")
    corpus = doc.get("corpus", {})
    for key in ("pretrain_length_s", "episode_length_s", "snr_db", "rt60_s", "shot_pad_s", "eval_pad_s"):
        lo_hi = corpus.get(key)
        if isinstance(lo_hi, list) and len(lo_hi) == 2 and lo_hi[0] > lo_hi[1]:
            errors.append(f"config: corpus/{key}: lower bound exceeds upper bound")
    if corpus.get("n_noise_classes", 0) >= corpus.get("n_classes", 2):
        errors.append("config: corpus: n_noise_classes must leave at least one motif class")
    if doc.get("student", {}).get("n_classes") != corpus.get("n_classes"):
        errors.append("config: student/n_classes must equal corpus/n_classes")
    return errors


@dataclass(frozen=True)
class RunConfig:
    """A validated, merged run configuration."""

    data: Dict[str, Any]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def block(self, name: str) -> Dict[str, Any]:
        return copy.deepcopy(self.data[name])

    def path(self, name: str) -> Path:
        return Path(self.data["paths"][name])

    def dump(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=False)

    def echo(self, out_dir: Path) -> Path:
        p = Path(out_dir) / "config.yaml"
        safe_write_text(p, self.dump())
        return p

    # builders ------------------------------------------------------------

    def frontend(self) -> FrontendConfig:
        return FrontendConfig(**self.block("frontend"))

    def weak_train(self) -> WeakTrainConfig:
        return WeakTrainConfig(seed=self.seed, **self.block("weak"))

    def strong_train(self) -> WeakTrainConfig:
        b = self.block("strong")
        b.pop("embed_layer", None)
        return replace(self.weak_train(), **b)

    def strong_embed_layer(self) -> str:
        return str(self.data["strong"].get("embed_layer", "pool"))

    def student_spec(self) -> ModelSpec:
        b = self.block("student")
        b["widths"] = tuple(b["widths"])
        return ModelSpec(**b)

    def teacher_spec(self) -> ModelSpec:
        t = self.block("teacher")
        return self.student_spec().widened(float(t["width_multiplier"]), t.get("last_width"))

    def distill(self) -> DistillConfig:
        b = self.block("distill")
        b.pop("init_from_student", None)
        return DistillConfig(**b)

    def distill_from_student(self) -> bool:
        return bool(self.data["distill"].get("init_from_student", False))

    def pseudo(self) -> PseudoLabelConfig:
        return PseudoLabelConfig(**self.block("pseudo"))

    def curation(self) -> CurationConfig:
        return CurationConfig(**self.block("curation"))

    def augment(self) -> AugmentConfig:
        return AugmentConfig(seed=self.seed, **self.block("augment"))

    def delta(self) -> DeltaConfig:
        return DeltaConfig(seed=self.seed, **self.block("delta"))

    def detector(self) -> DetectorConfig:
        b = self.block("detector")
        b.pop("margin", None)
        b.pop("hop_frames", None)
        return DetectorConfig(seed=self.seed, **b)

    def hop_frames(self) -> int:
        return int(self.data["detector"].get("hop_frames", 1))

    def margin(self) -> MarginConfig:
        b = self.block("detector").get("margin", {})
        if b.get("layers") is not None:
            b["layers"] = tuple(b["layers"])
        return MarginConfig(**b)

    def corpus(self) -> CorpusConfig:
        b = self.block("corpus")
        for k, v in list(b.items()):
            if isinstance(v, list):
                b[k] = tuple(float(x) for x in v)
        return CorpusConfig(seed=self.seed, **b)

    def evaluate(self) -> EvalConfig:
        return EvalConfig(seed=self.seed, **self.block("evaluate"))

    def system(self) -> SystemConfig:
        return SystemConfig(
            seed=self.seed,
            curation=self.curation(),
            augment=self.augment(),
            detector=self.detector(),
            margin=self.margin(),
            per_sequence_delta=self.delta().per_sequence,
        )


def load_run_config(
    path: Optional[Path] = None,
    *,
    seed: Optional[int] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """Defaults < file < seed < overrides; raises ConfigError listing every problem."""
    doc = load_defaults()
    if path is not None:
        path = Path(path)
        try:
            user = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as ex:
            raise ConfigError(f"cannot read config {path}: {ex}") from ex
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        doc = deep_merge(doc, user)
    if seed is not None:
        doc["seed"] = int(seed)
    if overrides:
        doc = deep_merge(doc, overrides)
    errors = config_errors(doc)
    if not errors:
        errors = _semantic_errors(doc)
    if errors:
        raise ConfigError("invalid run config:\n  " + "\n  ".join(errors))
    logger.debug("run config loaded (seed %d)", doc["seed"])
    return RunConfig(doc)
