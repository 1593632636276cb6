"""CSV reports over episode results (plot-ready, no rendering)."""
from __future__ import annotations

import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from scipy.stats import spearmanr

from seqshot.core.evaluate import EpisodeResult
from seqshot.core.utils import safe_write_text

logger = logging.getLogger(__name__)

REPORT_VERSION = 1
COLUMNS = ("episode", "duration_s", "difficulty", "psl_auprc", "wl_auprc", "relative_improvement")
DURATION_BINS: Tuple[Tuple[str, float, float], ...] = (
    ("<3s", 0.0, 3.0),
    ("3-5s", 3.0, 5.0),
    (">=5s", 5.0, float("inf")),
)


def _fmt(v: float) -> str:
    return "nan" if not np.isfinite(v) else f"{v:.6f}"


def _csv(header: Sequence[str], rows: List[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def duration_bin(duration_s: float) -> str:
    for name, lo, hi in DURATION_BINS:
        if lo <= duration_s < hi:
            return name
    return DURATION_BINS[-1][0]


def summarize(results: Sequence[EpisodeResult]) -> Dict[str, Any]:
    """Per duration bin medians, plus Spearman(difficulty, relative improvement)."""
    bins: Dict[str, Dict[str, Any]] = {}
    for name, _, _ in DURATION_BINS:
        members = [r for r in results if duration_bin(r.target_duration_s) == name]
        bins[name] = {
            "episodes": len(members),
            "psl_median": float(np.median([r.auprc for r in members])) if members else float("nan"),
            "wl_median": float(np.median([r.wl_auprc for r in members])) if members else float("nan"),
            "relative_improvement_median": (
                float(np.median([r.relative_improvement for r in members])) if members else float("nan")
            ),
        }
    rho = float("nan")
    if len(results) >= 3:
        rho = float(spearmanr([r.difficulty for r in results], [r.relative_improvement for r in results])[0])
    return {"version": REPORT_VERSION, "bins": bins, "spearman_difficulty_improvement": rho}


def report(results: Sequence[EpisodeResult], out_dir: Path) -> Dict[str, Path]:
    """Write episodes.csv, summary.csv and summary.json; returns their paths."""
    out_dir = Path(out_dir)
    rows = [
        (r.name, _fmt(r.target_duration_s), _fmt(r.difficulty), _fmt(r.auprc), _fmt(r.wl_auprc),
         _fmt(r.relative_improvement))
        for r in results
    ]
    paths = {
        "episodes": out_dir / "episodes.csv",
        "summary": out_dir / "summary.csv",
        "summary_json": out_dir / "summary.json",
    }
    safe_write_text(paths["episodes"], _csv(COLUMNS, rows))
    summary = summarize(results)
    bin_rows = [
        (name, b["episodes"], _fmt(b["psl_median"]), _fmt(b["wl_median"]), _fmt(b["relative_improvement_median"]))
        for name, b in summary["bins"].items()
    ]
    safe_write_text(
        paths["summary"],
        _csv(("duration_bin", "episodes", "psl_median", "wl_median", "relative_improvement_median"), bin_rows),
    )
    safe_write_text(paths["summary_json"], json.dumps(summary, indent=2, allow_nan=True) + "\n")
    logger.info("report: %d episodes, spearman %.3f", len(results), summary["spearman_difficulty_improvement"])
    return paths
