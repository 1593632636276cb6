"""Module-tagged error hierarchy.

Every error raised on purpose by seqshot derives from SeqshotError and names
the module that raised it, so the CLI can report ``[module] message``.
Concrete classes also derive from the builtin that best describes them.
"""
from __future__ import annotations


class SeqshotError(Exception):
    module = "seqshot"

    def __init__(self, message: str, *, module: str | None = None) -> None:
        super().__init__(message)
        if module is not None:
            self.module = module

    def __str__(self) -> str:
        return f"[{self.module}] {super().__str__()}"


# dsp_frontend
class WavFormatError(SeqshotError, ValueError):
    module = "dsp_frontend"


class UnsupportedEncodingError(SeqshotError, ValueError):
    module = "dsp_frontend"


class EmptyInputError(SeqshotError, ValueError):
    module = "dsp_frontend"


class CodecError(SeqshotError, ValueError):
    module = "dsp_frontend"


# nn_core
class ShapeError(SeqshotError, ValueError):
    module = "nn_core"


class StaleCacheError(SeqshotError, RuntimeError):
    module = "nn_core"


class CheckpointFormatError(SeqshotError, ValueError):
    module = "nn_core"


class CheckpointVersionError(SeqshotError, ValueError):
    module = "nn_core"


class CheckpointTruncatedError(SeqshotError, ValueError):
    module = "nn_core"


class UnknownTensorError(SeqshotError, KeyError):
    module = "nn_core"

    def __str__(self) -> str:  # KeyError would repr() the message
        return SeqshotError.__str__(self)


class UnknownModelKindError(SeqshotError, ValueError):
    module = "nn_core"


# pretrain
class DatasetError(SeqshotError, ValueError):
    module = "pretrain"


class TooShortError(SeqshotError, ValueError):
    module = "pretrain"


class DistillationError(SeqshotError, ValueError):
    module = "pretrain"


# curation
class DegenerateInputError(SeqshotError, ValueError):
    module = "curation"


class CurationError(SeqshotError, ValueError):
    module = "curation"


# fewshot_augment
class AugmentError(SeqshotError, ValueError):
    module = "fewshot_augment"


# fewshot_classifier
class SingleClassError(SeqshotError, ValueError):
    module = "fewshot_classifier"


class DetectorError(SeqshotError, ValueError):
    module = "fewshot_classifier"


# synth_corpus
class CorpusError(SeqshotError, ValueError):
    module = "synth_corpus"


# eval_harness
class MetricError(SeqshotError, ValueError):
    module = "eval_harness"


class EpisodeError(SeqshotError, RuntimeError):
    module = "eval_harness"


# cli / config
class ConfigError(SeqshotError, ValueError):
    module = "cli"


class UnknownEngineError(ConfigError):
    module = "eval_harness"


class ParameterError(SeqshotError, ValueError):
    """Argument outside its documented range; raised with an explicit module tag."""


class NonFiniteError(SeqshotError, FloatingPointError):
    module = "nn_core"
