from __future__ import annotations

import json

from seqshot.core import audio
from seqshot.core.validate import validate_config, validate_manifest, validate_path

from conftest import tone


def _wav(path):
    path.parent.mkdir(parents=True, exist_ok=True)
    audio.write_wav(path, tone(440, 0.5))
    return path


def _episode_doc(**over):
    doc = {
        "version": 1,
        "name": "ep",
        "enrollment": [{"wav": "shot0.wav", "truth": [0.1, 0.4]}],
        "eval": [{"wav": "pos.wav", "label": "target"}, {"wav": "neg.wav", "label": "nontarget", "motif": 2}],
    }
    doc.update(over)
    return doc


def test_config_ok_and_failed(tmp_path):
    good = tmp_path / "good.yaml"
    good.write_text("seed: 3\ncuration:\n  tau: 0.3\n", encoding="utf-8")
    res = validate_config(good)
    assert res.ok and res.errors == [] and res.warnings == []

    no_seed = tmp_path / "noseed.yaml"
    no_seed.write_text("curation:\n  tau: 0.3\n", encoding="utf-8")
    res = validate_config(no_seed)
    assert res.ok and len(res.warnings) == 1

    bad = tmp_path / "bad.yaml"
    bad.write_text("curation:\n  tau: 5\n", encoding="utf-8")
    res = validate_config(bad)
    assert not res.ok
    assert res.errors[0].startswith("config: curation/tau:")

    listy = tmp_path / "list.yaml"
    listy.write_text("- 1\n", encoding="utf-8")
    assert not validate_config(listy).ok


def test_manifest_checks(tmp_path):
    _wav(tmp_path / "clips" / "a.wav")
    recs = [
        {"wav": "clips/a.wav", "labels": [0], "events": [[0, 0.1, 0.4]]},
        {"wav": "clips/missing.wav", "labels": [1]},
        {"wav": "clips/a.wav", "labels": [0], "events": [[0, 0.4, 0.1], [2, 0.0, 0.2]]},
        {"wav": "clips/a.wav"},
    ]
    p = tmp_path / "manifest.jsonl"
    p.write_text("\n".join(json.dumps(r) for r in recs) + "\nnot json\n", encoding="utf-8")
    res = validate_manifest(p)
    assert not res.ok
    joined = "\n".join(res.errors)
    assert "line 1" not in joined
    assert "line 2: missing audio file clips/missing.wav" in joined
    assert "line 3: event (0, 0.4, 0.1) has offset <= onset" in joined
    assert "line 3: event class 2 missing from weak labels" in joined
    assert "line 4: " in joined
    assert "line 5: not valid JSON" in joined

    ok = tmp_path / "ok.jsonl"
    ok.write_text(json.dumps(recs[0]) + "\n", encoding="utf-8")
    assert validate_manifest(ok).ok

    empty = tmp_path / "empty.jsonl"
    empty.write_text("\n", encoding="utf-8")
    assert validate_manifest(empty).errors == ["manifest has no records"]


def test_episode_checks(tmp_path):
    for name in ("shot0.wav", "pos.wav", "neg.wav"):
        _wav(tmp_path / name)
    p = tmp_path / "episode.json"
    p.write_text(json.dumps(_episode_doc()), encoding="utf-8")
    res = validate_path(tmp_path)
    assert res.ok and res.warnings == []

    p.write_text(json.dumps(_episode_doc(enrollment=[{"wav": "shot0.wav"}])), encoding="utf-8")
    res = validate_path(p)
    assert res.ok and len(res.warnings) == 1

    only_pos = _episode_doc(eval=[{"wav": "pos.wav", "label": "target"}, {"wav": "gone.wav", "label": "target"}])
    p.write_text(json.dumps(only_pos), encoding="utf-8")
    res = validate_path(p)
    assert not res.ok
    assert "episode: eval has no 'nontarget' item" in res.errors
    assert "episode: missing audio file gone.wav" in res.errors

    p.write_text(json.dumps(_episode_doc(version=2)), encoding="utf-8")
    assert not validate_path(p).ok


def test_dispatch(tmp_path):
    assert validate_path(tmp_path / "nothing.yaml").errors == [f"not a file: {tmp_path / 'nothing.yaml'}"]
    other = tmp_path / "notes.txt"
    other.write_text("hi", encoding="utf-8")
    assert validate_path(other).errors == ["unsupported file type: notes.txt"]
    cfg = tmp_path / "run.YML"
    cfg.write_text("seed: 1\n", encoding="utf-8")
    assert validate_path(cfg).ok
