from __future__ import annotations

import csv
import json
import math

import pytest

from seqshot.core.evaluate import EpisodeResult
from seqshot.core.report import COLUMNS, duration_bin, report, summarize


def _result(name: str, duration: float, difficulty: float, psl: float, wl: float) -> EpisodeResult:
    return EpisodeResult(name, psl, [psl], wl, [wl], difficulty, duration)


@pytest.mark.parametrize("d,expected", [(0.5, "<3s"), (2.999, "<3s"), (3.0, "3-5s"), (4.9, "3-5s"), (5.0, ">=5s"), (12.0, ">=5s")])
def test_duration_bin(d, expected):
    assert duration_bin(d) == expected


def test_empty_report_is_header_only(tmp_path):
    paths = report([], tmp_path)
    assert paths["episodes"].read_text() == ",".join(COLUMNS) + "\n"
    summary = json.loads(paths["summary_json"].read_text())
    assert all(b["episodes"] == 0 for b in summary["bins"].values())
    assert summary["spearman_difficulty_improvement"] is None or math.isnan(summary["spearman_difficulty_improvement"])


def test_report_rows_and_bins(tmp_path):
    results = [
        _result("a", 1.5, 0.2, 0.6, 0.5),
        _result("b", 2.5, 0.5, 0.8, 0.5),
        _result("c", 4.0, 0.9, 0.9, 0.3),
    ]
    paths = report(results, tmp_path)
    with paths["episodes"].open(newline="") as f:
        rows = list(csv.DictReader(f))
    assert [r["episode"] for r in rows] == ["a", "b", "c"]
    assert float(rows[1]["relative_improvement"]) == pytest.approx(0.6)
    with paths["summary"].open(newline="") as f:
        bins = {r["duration_bin"]: r for r in csv.DictReader(f)}
    assert bins["<3s"]["episodes"] == "2"
    assert float(bins["<3s"]["psl_median"]) == pytest.approx(0.7)
    assert bins[">=5s"]["psl_median"] == "nan"


def test_spearman_needs_three_episodes():
    two = [_result("a", 1.0, 0.1, 0.5, 0.5), _result("b", 1.0, 0.2, 0.6, 0.5)]
    assert math.isnan(summarize(two)["spearman_difficulty_improvement"])
    three = two + [_result("c", 1.0, 0.3, 0.9, 0.5)]
    assert summarize(three)["spearman_difficulty_improvement"] == pytest.approx(1.0)
