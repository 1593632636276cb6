from __future__ import annotations

import pytest
import yaml

from seqshot.core.config import deep_merge, load_defaults, load_run_config, parse_overrides
from seqshot.core.errors import ConfigError


def _write(tmp_path, doc) -> object:
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump(doc), encoding="utf-8")
    return p


def test_defaults_are_valid():
    rc = load_run_config()
    assert rc.seed == 0
    assert rc.data == load_defaults()


def test_deep_merge_replaces_lists_whole():
    base = {"a": {"b": 1, "c": [1, 2]}, "d": 4}
    out = deep_merge(base, {"a": {"c": [9]}})
    assert out == {"a": {"b": 1, "c": [9]}, "d": 4}
    assert base["a"]["c"] == [1, 2]


def test_parse_overrides_forms():
    out = parse_overrides(["--curation.tau", "0.3", "--detector.margin.gamma=2", "--weak.mixup=false",
                           "--corpus.snr_db", "[1, 2]", "--detector.margin.layers", "null"])
    assert out == {
        "curation": {"tau": 0.3},
        "detector": {"margin": {"gamma": 2, "layers": None}},
        "weak": {"mixup": False},
        "corpus": {"snr_db": [1, 2]},
    }


@pytest.mark.parametrize(
    "tokens",
    [["--tau", "0.3"], ["curation.tau", "0.3"], ["--curation.tau"], ["--curation..tau=1"],
     ["--a.b=1", "--a.b.c=2"], ["--a.b=[1,"]],
)
def test_parse_overrides_errors(tokens):
    with pytest.raises(ConfigError):
        parse_overrides(tokens)


def test_precedence(tmp_path):
    path = _write(tmp_path, {"seed": 5, "curation": {"tau": 0.2, "percentile": 10.0}})
    rc = load_run_config(path)
    assert rc.seed == 5 and rc.curation().tau == 0.2
    rc = load_run_config(path, seed=7, overrides={"curation": {"tau": 0.3}})
    assert rc.seed == 7
    assert rc.curation().tau == 0.3
    assert rc.curation().percentile == 10.0
    assert rc.data["augment"] == load_defaults()["augment"]


@pytest.mark.parametrize(
    "doc",
    [
        {"curation": {"tua": 0.3}},
        {"frontend": {"n_mels": 32}},
        {"detector": {"margin": {"layer_reduce": "max"}}},
        {"augment": {"mask_min": 0.6, "mask_max": 0.5}},
        {"student": {"n_classes": 5}},
        {"corpus": {"snr_db": [20.0, 5.0]}},
        {"seed": -1},
    ],
)
def test_invalid_configs_are_rejected(tmp_path, doc):
    with pytest.raises(ConfigError, match="invalid run config"):
        load_run_config(_write(tmp_path, doc))


def test_unreadable_config(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("- just\n- a list\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(p)
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.yaml")


def test_echo_round_trips(tmp_path):
    rc = load_run_config(seed=3, overrides={"curation": {"tau": 0.4}})
    p = rc.echo(tmp_path / "out")
    assert p.name == "config.yaml"
    again = load_run_config(p)
    assert again.data == rc.data


def test_builders():
    rc = load_run_config(seed=9, overrides={"detector": {"margin": {"layers": ["input", "conv0"]}}})
    assert rc.student_spec().widths == (8, 16, 32, 64, 64)
    teacher = rc.teacher_spec()
    assert teacher.widths == (16, 32, 64, 128, 128) and teacher.hidden == 128
    assert rc.weak_train().seed == 9
    strong = rc.strong_train()
    assert strong.epochs == 20 and strong.peak_lr == 0.005 and strong.clip_s == rc.weak_train().clip_s
    assert rc.strong_embed_layer() == "pool"
    assert rc.margin().layers == ("input", "conv0")
    corpus = rc.corpus()
    assert corpus.snr_db == (5.0, 20.0) and corpus.seed == 9
    system = rc.system()
    assert system.seed == 9
    assert system.detector.proj_dim == 32
    assert system.per_sequence_delta is False
    assert rc.hop_frames() == 1
    assert rc.distill_from_student() is False
