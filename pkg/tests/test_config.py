"""Run-configuration parsing: sections, dotted keys, validation."""

from __future__ import annotations

import pytest

from fewvox.config import EvalSection, RunConfig, load_config, override, parse_config_text
from fewvox.errors import ValidationError


def test_defaults():
    cfg = parse_config_text("")
    assert cfg == RunConfig()
    assert cfg.schemes == ("lookup",)
    assert cfg.tts.steps == 1200
    assert cfg.features.n_mels == 80
    assert cfg.eval.k_values == (100, 5)


def test_full_parse():
    text = """
    # few-shot cloning run
    schemes = gst, vc            # sorted on load
    seed = 7
    k = 3
    out_dir = runs/demo

    corpus.n_speakers = 5
    corpus.utts_per_speaker = 10
    corpus.f0_min = 110.5
    features.n_mels = 40
    pretrain.steps = 50
    vc.content_dim = 8
    tts.hidden = 64
    tts.lr_decay = constant
    eval.k_values = 10, 2
    eval.configs = dvec;lookup
    """
    cfg = parse_config_text(text)
    assert cfg.schemes == ("gst", "vc")
    assert cfg.seed == 7 and cfg.k == 3 and cfg.out_dir == "runs/demo"
    assert cfg.corpus.n_speakers == 5
    assert cfg.corpus.f0_min == pytest.approx(110.5)
    assert cfg.features.n_mels == 40
    assert cfg.pretrain.steps == 50
    assert cfg.vc.content_dim == 8
    assert cfg.tts.hidden == 64 and cfg.tts.lr_decay == "constant"
    assert cfg.eval.k_values == (10, 2)
    assert cfg.eval.rows() == [("dvec",), ("lookup",)]


def test_unknown_keys_rejected():
    with pytest.raises(ValidationError, match="unknown key 'turbo'"):
        parse_config_text("turbo = 9")
    with pytest.raises(ValidationError, match="unknown section 'nope'"):
        parse_config_text("nope.steps = 9")
    with pytest.raises(ValidationError, match="unknown key 'tts.warp'"):
        parse_config_text("tts.warp = 9")
    with pytest.raises(ValidationError, match="expected 'key = value'"):
        parse_config_text("just some words")


def test_line_numbers_in_errors():
    with pytest.raises(ValidationError, match=":3:"):
        parse_config_text("seed = 1\n\nbogus = 2")


def test_scheme_validation():
    with pytest.raises(ValidationError, match="unknown scheme"):
        parse_config_text("schemes = dvec, warble")
    with pytest.raises(ValidationError, match="non-empty"):
        parse_config_text("schemes = ")


def test_eval_rows():
    rows = EvalSection().rows()
    assert rows == [
        ("dvec",), ("xvec",), ("vc",), ("lookup",), ("gst",), ("lookup", "vc"),
    ]
    with pytest.raises(ValidationError, match="unknown scheme"):
        EvalSection(configs="dvec;warble").rows()
    with pytest.raises(ValidationError, match="empty scheme set"):
        EvalSection(configs="dvec;;vc").rows()


def test_load_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 42\ntts.steps = 9\n")
    cfg = load_config(path)
    assert cfg.seed == 42 and cfg.tts.steps == 9
    with pytest.raises(ValidationError, match="not found"):
        load_config(tmp_path / "missing.cfg")


def test_override():
    cfg = RunConfig()
    assert override(cfg).seed == cfg.seed
    changed = override(cfg, seed=9, out_dir="elsewhere")
    assert changed.seed == 9 and changed.out_dir == "elsewhere"
    assert cfg.seed == 0  # original untouched


def test_run_config_validation():
    with pytest.raises(ValidationError, match="k must be"):
        RunConfig(k=0)
    with pytest.raises(ValidationError, match="unknown scheme"):
        RunConfig(schemes=("totem",))
