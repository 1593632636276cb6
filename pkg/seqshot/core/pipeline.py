"""Pipeline stages behind the CLI subcommands.

Each stage reads its inputs, writes its artifacts under ``out_dir`` and
returns a ``StageResult``: a JSON-able summary plus the input and output files
that go into ``<out>/run/manifest.json``.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from seqshot import __version__
from seqshot.core import audio, codec
from seqshot.core.augment import embed_pairs, train_delta, write_donor_pairs, write_train_set
from seqshot.core.config import RunConfig
from seqshot.core.corpus import gen_delta_pairs, gen_episodes, gen_pretrain_dataset
from seqshot.core.curation import curate
from seqshot.core.detector import DetectorNet, clip_score, detect_stream
from seqshot.core.engines import get_engine
from seqshot.core.episode import Episode
from seqshot.core.errors import DatasetError, EpisodeError
from seqshot.core.evaluate import EpisodeResult, benchmark, run_episode
from seqshot.core.metrics import precision_recall_f1
from seqshot.core.pretrain import (
    Clip,
    PseudoStrongLabels,
    StrongModel,
    WeakModel,
    distill,
    embed_frames,
    embed_pooled,
    evaluate_weak,
    load_manifest,
    pseudo_label,
    train_strong,
    train_weak,
    window_truth,
)
from seqshot.core.report import report
from seqshot.core.utils import safe_write_text, sha256_file
from seqshot.engines.base import DONOR_DIR, STRONG_FILE, WEAK_FILE, ModelBundle

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
TEACHER_FILE = "teacher.sqck"
BASELINE_FILE = "student_baseline.sqck"
PSEUDO_DIR = "pseudo"
DETECTOR_FILE = "detector.sqck"


@dataclass
class StageResult:
    summary: Dict[str, Any]
    inputs: List[Path] = field(default_factory=list)
    outputs: List[Path] = field(default_factory=list)


def _files(p: Path) -> List[Path]:
    p = Path(p)
    if p.is_dir():
        return sorted(x for x in p.rglob("*") if x.is_file())
    return [p] if p.is_file() else []


def _entries(paths: Sequence[Path], out_dir: Path) -> List[Dict[str, str]]:
    files = sorted({f.resolve() for p in paths for f in _files(p)})
    base = Path(out_dir).resolve()
    return [{"path": Path(os.path.relpath(f, base)).as_posix(), "sha256": sha256_file(f)} for f in files]


def write_run_manifest(out_dir: Path, command: str, seed: int, result: StageResult) -> Path:
    """``<out>/run/manifest.json`` with out-relative paths and content hashes."""
    out_dir = Path(out_dir)
    manifest = {
        "version": MANIFEST_VERSION,
        "seqshot_version": __version__,
        "command": command,
        "seed": seed,
        "inputs": _entries(result.inputs, out_dir),
        "outputs": _entries(result.outputs, out_dir),
    }
    path = out_dir / "run" / "manifest.json"
    safe_write_text(path, json.dumps(manifest, indent=2) + "\n")
    return path


def _manifest_path(data: Path) -> Path:
    data = Path(data)
    p = data / "manifest.jsonl" if data.is_dir() else data
    if not p.is_file():
        raise DatasetError(f"no dataset manifest at {p}")
    return p


def _strong_path(data: Path) -> Optional[Path]:
    p = _manifest_path(data).parent / "strong.jsonl"
    return p if p.is_file() else None


# ---------------------------------------------------------------------------
# corpus


def run_synth_corpus(rc: RunConfig, out_dir: Path) -> StageResult:
    cfg = rc.corpus()
    out_dir = Path(out_dir)
    train = gen_pretrain_dataset(cfg, out_dir / "pretrain")
    summary: Dict[str, Any] = {"pretrain": train}
    outputs = [out_dir / "pretrain"]
    if cfg.heldout_per_class:
        summary["heldout"] = gen_pretrain_dataset(
            cfg, out_dir / "heldout", split="heldout", clips_per_class=cfg.heldout_per_class
        )
        outputs.append(out_dir / "heldout")
    episodes = gen_episodes(cfg, out_dir / "episodes")
    summary["episodes"] = [{"name": e.name, "target_duration_s": round(e.target_duration_s, 6),
                            "eval_items": len(e.items)} for e in episodes]
    outputs.append(out_dir / "episodes")
    return StageResult(summary, [], outputs)


# ---------------------------------------------------------------------------
# pretraining


def run_pretrain_weak(rc: RunConfig, data: Path, out_dir: Path) -> StageResult:
    """Teacher (widened) and student baseline, both trained on weak labels alone."""
    manifest = _manifest_path(data)
    clips = load_manifest(manifest)
    wcfg = rc.weak_train()
    out_dir = Path(out_dir)
    teacher = train_weak(clips, wcfg, rc.teacher_spec())
    teacher.save(out_dir / TEACHER_FILE)
    baseline = train_weak(clips, wcfg, rc.student_spec())
    baseline.save(out_dir / BASELINE_FILE)
    summary = {
        "teacher": {"params": teacher.graph.n_params(), "final_loss": teacher.loss_curve[-1]},
        "student_baseline": {"params": baseline.graph.n_params(), "final_loss": baseline.loss_curve[-1]},
    }
    return StageResult(summary, [manifest], [out_dir / TEACHER_FILE, out_dir / BASELINE_FILE])


def run_distill(
    rc: RunConfig, teacher_path: Path, data: Path, out_dir: Path, init_path: Optional[Path] = None
) -> StageResult:
    manifest = _manifest_path(data)
    clips = load_manifest(manifest)
    teacher = WeakModel.load(teacher_path)
    inputs = [manifest, Path(teacher_path)]
    init = None
    if init_path is not None:
        init = WeakModel.load(init_path).graph
        inputs.append(Path(init_path))
    student = distill(teacher, rc.student_spec(), clips, rc.weak_train(), rc.distill(), init=init)
    out = Path(out_dir) / WEAK_FILE
    student.save(out)
    summary = {"student": {"params": student.graph.n_params(), "final_loss": student.loss_curve[-1],
                           "teacher_params": teacher.graph.n_params()}}
    return StageResult(summary, inputs, [out])


def _pseudo_name(i: int) -> str:
    return f"clip_{i:05d}.sqpl"


def run_pseudolabel(rc: RunConfig, weak_path: Path, data: Path, out_dir: Path) -> StageResult:
    """Pseudo-strong labels for every manifest clip, plus window F1 where strong events exist."""
    manifest = _manifest_path(data)
    clips = load_manifest(manifest)
    model = WeakModel.load(weak_path)
    pcfg = rc.pseudo()
    pdir = Path(out_dir) / PSEUDO_DIR
    index = []
    labelled: List[PseudoStrongLabels] = []
    for i, c in enumerate(clips):
        p = pseudo_label(model, c.load(), pcfg)
        codec.write_pseudo_labels(pdir / _pseudo_name(i), p.labels)
        index.append({"wav": Path(os.path.relpath(c.path, manifest.parent)).as_posix(), "labels": _pseudo_name(i)})
        labelled.append(p)
    safe_write_text(pdir / "index.json", json.dumps(
        {"version": 1, "window_s": pcfg.window_s, "hop_s": pcfg.hop_s, "threshold": pcfg.threshold,
         "clips": index}, indent=2) + "\n")
    positive = int(sum(int(p.labels.sum()) for p in labelled))
    summary: Dict[str, Any] = {"clips": len(clips), "positive_windows": positive}
    inputs = [manifest, Path(weak_path)]
    strong = _strong_path(data)
    if strong is not None:
        truth_clips = load_manifest(strong)
        if len(truth_clips) != len(clips):
            raise DatasetError(f"{strong} has {len(truth_clips)} records, manifest has {len(clips)}")
        preds, truths = [], []
        for c, p in zip(truth_clips, labelled):
            preds.append(p.labels)
            truths.append(window_truth(c.events, p.n_windows, model.n_classes, pcfg))
        fidelity = precision_recall_f1(np.concatenate(preds), np.concatenate(truths))
        summary["fidelity"] = {k: round(float(v), 6) if isinstance(v, float) else v for k, v in fidelity.items()}
        safe_write_text(Path(out_dir) / "pseudo_report.json", json.dumps(summary["fidelity"], indent=2) + "\n")
        inputs.append(strong)
        logger.info("pseudo-label fidelity: P %.3f R %.3f F1 %.3f",
                    fidelity["precision"], fidelity["recall"], fidelity["f1"])
    outputs = [pdir] + ([Path(out_dir) / "pseudo_report.json"] if strong is not None else [])
    return StageResult(summary, inputs, outputs)


def read_pseudo_dir(pdir: Path, clips: Sequence[Clip], manifest: Path) -> List[PseudoStrongLabels]:
    pdir = Path(pdir)
    doc = json.loads((pdir / "index.json").read_text(encoding="utf-8"))
    by_wav = {rec["wav"]: rec["labels"] for rec in doc["clips"]}
    out = []
    for c in clips:
        key = Path(os.path.relpath(c.path, manifest.parent)).as_posix()
        if key not in by_wav:
            raise DatasetError(f"{pdir}: no pseudo labels for {key}")
        labels = codec.read_pseudo_labels(pdir / by_wav[key])
        out.append(PseudoStrongLabels(labels, float(doc["hop_s"]), float(doc["window_s"]), float(doc["threshold"])))
    return out


def run_train_strong(rc: RunConfig, weak_path: Path, pseudo_dir: Path, data: Path, out_dir: Path) -> StageResult:
    """Strong model from pseudo labels, then the delta encoder and donor pairs on its embeddings."""
    manifest = _manifest_path(data)
    clips = load_manifest(manifest)
    init = WeakModel.load(weak_path)
    pseudo = read_pseudo_dir(pseudo_dir, clips, manifest)
    strong = train_strong(init, clips, pseudo, rc.strong_train(), rc.strong_embed_layer())
    out_dir = Path(out_dir)
    strong.save(out_dir / STRONG_FILE)
    outputs = [out_dir / STRONG_FILE]
    summary: Dict[str, Any] = {"strong": {"params": strong.graph.n_params(), "final_loss": strong.loss_curve[-1],
                                          "embed_dim": strong.embed_dim}}
    wave_pairs = gen_delta_pairs(rc.corpus())
    if wave_pairs:
        pairs = embed_pairs(wave_pairs, partial(embed_frames, strong))
        enc = train_delta(pairs, rc.delta())
        enc.save(out_dir)
        write_donor_pairs(out_dir / DONOR_DIR, pairs)
        outputs += [out_dir / "delta_encoder.sqck", out_dir / "delta_decoder.sqck", out_dir / DONOR_DIR]
        summary["delta"] = {"pairs": len(pairs), "held_out_l1": round(enc.held_out_l1, 6),
                            "identity_l1": round(enc.baseline_l1, 6)}
    return StageResult(summary, [manifest, Path(weak_path), Path(pseudo_dir)], outputs)


def run_pretrain(rc: RunConfig, data: Path, out_dir: Path) -> StageResult:
    """Teacher, student baseline, distilled student, pseudo labels, strong model, delta encoder."""
    out_dir = Path(out_dir)
    parts = [run_pretrain_weak(rc, data, out_dir)]
    init = out_dir / BASELINE_FILE if rc.distill_from_student() else None
    parts.append(run_distill(rc, out_dir / TEACHER_FILE, data, out_dir, init_path=init))
    parts.append(run_pseudolabel(rc, out_dir / WEAK_FILE, data, out_dir))
    parts.append(run_train_strong(rc, out_dir / WEAK_FILE, out_dir / PSEUDO_DIR, data, out_dir))
    summary: Dict[str, Any] = {}
    for p in parts:
        summary.update(p.summary)
    heldout = _manifest_path(data).parent.parent / "heldout" / "manifest.jsonl"
    inputs = [_manifest_path(data)]
    if heldout.is_file():
        clips = load_manifest(heldout)
        for name in (TEACHER_FILE, BASELINE_FILE, WEAK_FILE):
            m_ap, d = evaluate_weak(WeakModel.load(out_dir / name), clips)
            summary.setdefault("heldout", {})[Path(name).stem] = {"mAP": round(m_ap, 6), "d_prime": round(d, 6)}
        inputs.append(heldout)
    outputs = sorted({o for p in parts for o in p.outputs})
    return StageResult(summary, inputs, outputs)


# ---------------------------------------------------------------------------
# few-shot


def _enrollment(shots: Sequence[Path], episode_path: Optional[Path]) -> tuple:
    if episode_path is not None:
        ep = Episode.load(Path(episode_path))
        return ep.enrollment_audio(), [r.path for r in ep.enrollment], ep.truth
    if not shots:
        raise EpisodeError("no enrollment shots given")
    return [audio.load_wav(Path(p)) for p in shots], [Path(p) for p in shots], None


def run_enroll(
    rc: RunConfig, models_dir: Path, out_dir: Path, shots: Sequence[Path] = (), episode: Optional[Path] = None
) -> StageResult:
    """Curate the shots, build the synthetic training set and fit the detector."""
    models = ModelBundle.load(models_dir)
    waves, paths, truth = _enrollment(shots, episode)
    syscfg = rc.system()
    report_ = curate(waves, partial(embed_pooled, models.weak), syscfg.curation,
                     truth=truth if truth and all(t is not None for t in truth) else None)
    psl = get_engine("psl", models, syscfg)
    psl.enroll(waves, report_.segments)
    out_dir = Path(out_dir)
    psl.net.save(out_dir / DETECTOR_FILE)
    write_train_set(out_dir / "train_set", psl.train_set)
    curation_doc = report_.to_dict()
    curation_doc["shots_wav"] = [Path(os.path.relpath(p, out_dir)).as_posix() for p in paths]
    safe_write_text(out_dir / "curation.json", json.dumps(curation_doc, indent=2) + "\n")
    summary = {"shots": len(waves), "segments": [s.to_dict() for s in report_.segments], **psl.info}
    if report_.iou is not None:
        summary["mean_iou"] = round(float(np.mean(report_.iou)), 6)
    inputs = list(paths) + ([Path(episode)] if episode is not None else [])
    inputs += [Path(models_dir) / WEAK_FILE, Path(models_dir) / STRONG_FILE]
    return StageResult(summary, inputs, [out_dir / DETECTOR_FILE, out_dir / "train_set", out_dir / "curation.json"])


def run_detect(
    rc: RunConfig, detector_path: Path, models_dir: Path, wavs: Sequence[Path], out_dir: Path
) -> StageResult:
    """Sliding-window scores per file, written as JSON lines."""
    net = DetectorNet.load(detector_path)
    strong = StrongModel.load(Path(models_dir) / STRONG_FILE)
    hop = rc.hop_frames()
    lines, scores = [], {}
    out_dir = Path(out_dir)
    for p in wavs:
        stream = detect_stream(net, strong, audio.load_wav(Path(p)), hop_frames=hop, pad=True)
        rel = Path(os.path.relpath(Path(p), out_dir)).as_posix()
        scores[rel] = round(clip_score(stream), 6)
        lines.append(json.dumps({"wav": rel, "clip_score": scores[rel],
                                 "windows": [[t, round(s, 6)] for t, s in stream]}))
    out = out_dir / "detections.jsonl"
    safe_write_text(out, "".join(line + "\n" for line in lines))
    return StageResult({"files": len(lines), "clip_scores": scores},
                       [Path(detector_path), Path(models_dir) / STRONG_FILE, *map(Path, wavs)], [out])


def _episode_files(episodes: Path) -> List[Path]:
    episodes = Path(episodes)
    if episodes.is_file():
        return [episodes]
    found = sorted(episodes.glob("*/episode.json"))
    if (episodes / "episode.json").is_file():
        found.insert(0, episodes / "episode.json")
    if not found:
        raise EpisodeError(f"no episode.json under {episodes}")
    return found


def run_evaluate(rc: RunConfig, episodes: Path, models_dir: Path, out_dir: Path) -> StageResult:
    models = ModelBundle.load(models_dir)
    ecfg = rc.evaluate()
    syscfg = rc.system()
    results: List[EpisodeResult] = []
    files = _episode_files(episodes)
    for path in files:
        results.append(run_episode(Episode.load(path), models, ecfg, syscfg))
    out_dir = Path(out_dir)
    safe_write_text(out_dir / "results.jsonl", "".join(json.dumps(r.to_dict()) + "\n" for r in results))
    paths = report(results, out_dir)
    summary = {"episodes": len(results), "reps": ecfg.reps,
               "results": [{"episode": r.name, "psl_auprc": round(r.auprc, 6), "wl_auprc": round(r.wl_auprc, 6)}
                           for r in results]}
    return StageResult(summary, files + [Path(models_dir) / WEAK_FILE, Path(models_dir) / STRONG_FILE],
                       [out_dir / "results.jsonl", *paths.values()])


def run_benchmark(rc: RunConfig, models_dir: Path, data: Path, out_dir: Path) -> StageResult:
    manifest = _manifest_path(data)
    rows = benchmark(models_dir, load_manifest(manifest))
    out = Path(out_dir) / "benchmark.json"
    safe_write_text(out, json.dumps({"version": 1, "models": rows}, indent=2) + "\n")
    return StageResult({"models": rows}, [manifest, *sorted(Path(models_dir).glob("*.sqck"))], [out])
