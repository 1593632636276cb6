#!/usr/bin/env python3
"""CLI entrypoint for seqshot.

Subcommands cover the whole few-shot acoustic sequence pipeline:
- synth-corpus: synthetic pretraining clips and evaluation episodes
- pretrain: teacher, student baseline, distilled student, pseudo labels, strong model, delta encoder
- distill / pseudolabel / train-strong: the pretraining stages one at a time
- enroll: curate K unsegmented shots and train a detector for them
- detect: sliding-window scores for audio files
- evaluate / benchmark: episode AUPRC reports and checkpoint mAP / d'
- validate: check a run config, dataset manifest or episode descriptor

Every command accepts ``--config``, ``--seed``, ``--out`` and dotted
overrides such as ``--curation.tau 0.3``. The JSON summary goes to stdout;
logs go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from seqshot import __version__
from seqshot.core import pipeline
from seqshot.core.config import RunConfig, load_run_config, parse_overrides
from seqshot.core.errors import ConfigError, SeqshotError
from seqshot.core.validate import validate_path

logger = logging.getLogger("seqshot.cli")


def _p(s: str) -> Path:
    return Path(s).expanduser().resolve()


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="Run config YAML (merged over the packaged defaults)")
    p.add_argument("--seed", type=int, default=None, help="Master seed (overrides the config)")
    p.add_argument("--out", required=out_required, help="Output directory")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seqshot", description="Few-shot acoustic sequence detection")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="cmd", required=True)

    p_synth = sub.add_parser("synth-corpus", help="Generate the synthetic pretraining set and episodes")
    _common(p_synth)

    p_pre = sub.add_parser("pretrain", help="Run the full pretraining chain")
    _common(p_pre)
    p_pre.add_argument("--data", help="Pretraining manifest or its directory (default: <paths.corpus>/pretrain)")

    p_dist = sub.add_parser("distill", help="Distill a student from a trained teacher")
    _common(p_dist)
    p_dist.add_argument("--teacher", required=True, help="Teacher checkpoint (.sqck)")
    p_dist.add_argument("--init", help="Optional student checkpoint to start from")
    p_dist.add_argument("--data", help="Pretraining manifest or its directory")

    p_pl = sub.add_parser("pseudolabel", help="Pseudo-strong labels from a weak model")
    _common(p_pl)
    p_pl.add_argument("--weak", required=True, help="Weak model checkpoint (.sqck)")
    p_pl.add_argument("--data", help="Pretraining manifest or its directory")

    p_ts = sub.add_parser("train-strong", help="Train the strong model and the delta encoder")
    _common(p_ts)
    p_ts.add_argument("--weak", required=True, help="Weak model checkpoint used for initialization")
    p_ts.add_argument("--pseudo", required=True, help="Directory written by 'pseudolabel' (pseudo/)")
    p_ts.add_argument("--data", help="Pretraining manifest or its directory")

    p_en = sub.add_parser("enroll", help="Curate K shots and train a detector")
    _common(p_en)
    p_en.add_argument("shots", nargs="*", help="Enrollment WAV files (unsegmented)")
    p_en.add_argument("--episode", help="Episode descriptor; enrolls its shots and reports curation IoU")
    p_en.add_argument("--models", help="Models directory (default: <paths.models>)")

    p_det = sub.add_parser("detect", help="Score audio files with an enrolled detector")
    _common(p_det)
    p_det.add_argument("wavs", nargs="+", help="WAV files to score")
    p_det.add_argument("--detector", required=True, help="Detector checkpoint written by 'enroll'")
    p_det.add_argument("--models", help="Models directory (default: <paths.models>)")

    p_ev = sub.add_parser("evaluate", help="Run episodes and write the PSL vs WL report")
    _common(p_ev)
    p_ev.add_argument("--episodes", help="Episode directory or episode.json (default: <paths.corpus>/episodes)")
    p_ev.add_argument("--models", help="Models directory (default: <paths.models>)")
    p_ev.add_argument("--reps", type=int, default=None, help="Enrollment reps per episode")

    p_bm = sub.add_parser("benchmark", help="Parameter count, mAP and d' of every checkpoint")
    _common(p_bm)
    p_bm.add_argument("--models", help="Models directory (default: <paths.models>)")
    p_bm.add_argument("--data", help="Held-out manifest or its directory (default: <paths.corpus>/heldout)")

    p_val = sub.add_parser("validate", help="Validate a run config, dataset manifest or episode descriptor")
    p_val.add_argument("path", help="config .yaml, manifest .jsonl, episode .json or episode directory")

    return p


def _setup_logging(level: str) -> None:
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level),
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )


def _emit(doc: Dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=False, allow_nan=True) + "\n")


def _or(value: Optional[str], default: Path) -> Path:
    return _p(value) if value else default.expanduser().resolve()


def _stage(args: argparse.Namespace, rc: RunConfig) -> Callable[[Path], pipeline.StageResult]:
    corpus = rc.path("corpus")
    models = _or(getattr(args, "models", None), rc.path("models"))
    cmd = args.cmd
    if cmd == "synth-corpus":
        return lambda out: pipeline.run_synth_corpus(rc, out)
    if cmd == "pretrain":
        data = _or(args.data, corpus / "pretrain")
        return lambda out: pipeline.run_pretrain(rc, data, out)
    if cmd == "distill":
        data = _or(args.data, corpus / "pretrain")
        init = _p(args.init) if args.init else None
        return lambda out: pipeline.run_distill(rc, _p(args.teacher), data, out, init_path=init)
    if cmd == "pseudolabel":
        data = _or(args.data, corpus / "pretrain")
        return lambda out: pipeline.run_pseudolabel(rc, _p(args.weak), data, out)
    if cmd == "train-strong":
        data = _or(args.data, corpus / "pretrain")
        return lambda out: pipeline.run_train_strong(rc, _p(args.weak), _p(args.pseudo), data, out)
    if cmd == "enroll":
        shots = [_p(s) for s in args.shots]
        episode = _p(args.episode) if args.episode else None
        if episode is not None and episode.is_dir():
            episode = episode / "episode.json"
        return lambda out: pipeline.run_enroll(rc, models, out, shots=shots, episode=episode)
    if cmd == "detect":
        wavs = [_p(w) for w in args.wavs]
        return lambda out: pipeline.run_detect(rc, _p(args.detector), models, wavs, out)
    if cmd == "evaluate":
        episodes = _or(args.episodes, corpus / "episodes")
        return lambda out: pipeline.run_evaluate(rc, episodes, models, out)
    if cmd == "benchmark":
        data = _or(args.data, corpus / "heldout")
        return lambda out: pipeline.run_benchmark(rc, models, data, out)
    raise ConfigError(f"unknown command: {cmd}")


def _validate(path: Path) -> int:
    result = validate_path(path)
    if result.ok:
        print("OK")
        if result.warnings:
            print("Warnings:")
            for w in result.warnings:
                print(f"- {w}")
        return 0

    print("FAILED")
    for e in result.errors:
        print(f"- {e}")
    if result.warnings:
        print("Warnings:")
        for w in result.warnings:
            print(f"- {w}")
    return 1


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as ex:
        return int(ex.code or 0)
    _setup_logging(args.log_level)

    if args.cmd == "validate":
        if extra:
            parser.print_usage(sys.stderr)
            print(f"seqshot: error: unrecognized arguments: {' '.join(extra)}", file=sys.stderr)
            return 2
        return _validate(_p(args.path))

    if args.cmd == "enroll" and not args.shots and not args.episode:
        parser.print_usage(sys.stderr)
        print("seqshot: error: enroll needs at least one shot or --episode", file=sys.stderr)
        return 2
    if args.cmd == "enroll" and args.shots and args.episode:
        print("seqshot: error: pass shots or --episode, not both", file=sys.stderr)
        return 2

    try:
        overrides = parse_overrides(extra)
        if getattr(args, "reps", None) is not None:
            overrides = {**overrides, "evaluate": {**overrides.get("evaluate", {}), "reps": args.reps}}
        rc = load_run_config(_p(args.config) if args.config else None, seed=args.seed, overrides=overrides)
        run = _stage(args, rc)
    except ConfigError as ex:
        print(f"seqshot: error: {ex}", file=sys.stderr)
        return 2

    out = _p(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        rc.echo(out)
        result = run(out)
        pipeline.write_run_manifest(out, args.cmd, rc.seed, result)
    except ConfigError as ex:
        print(f"seqshot: error: {ex}", file=sys.stderr)
        return 2
    except SeqshotError as ex:
        logger.error("%s", ex)
        return 1
    except OSError as ex:
        logger.error("[cli] %s", ex)
        return 1

    _emit({"command": args.cmd, "seed": rc.seed, "out": str(out), **result.summary})
    return 0
