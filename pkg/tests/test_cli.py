"""End-to-end CLI pipeline on a miniature configuration."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from fewvox.cli import main
from fewvox.training import load_tts

CONFIG_TEMPLATE = """
schemes = dvec, vc, lookup
seed = 0
k = 2
out_dir = {out}

corpus.n_speakers = 3
corpus.utts_per_speaker = 4

pretrain.steps = 60
pretrain.hidden = 64
pretrain.batch_size = 8
vc.steps = 60
vc.hidden = 32

tts.steps = 150
tts.batch_size = 8
tts.hidden = 32
tts.enc_layers = 1
tts.dec_layers = 1
tts.ffn_dim = 64
tts.var_filter = 16
tts.gst_tokens = 4
tts.gst_heads = 2

eval.configs = lookup;dvec
eval.k_values = 3, 2
eval.fewshot_per_track = 1
eval.synth_per_speaker = 2
eval.encoder_speakers = 3
eval.encoder_utts = 4
eval.encoder_steps = 60
"""


def write_config(dir_: Path, out: Path, **extra) -> Path:
    text = CONFIG_TEMPLATE.format(out=out)
    for key, value in extra.items():
        text += f"{key.replace('__', '.')} = {value}\n"
    path = dir_ / "run.cfg"
    path.write_text(text)
    return path


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One pretrained + trained run directory shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    out = root / "run1"
    cfg = write_config(root, out)
    assert main(["pretrain", "--config", str(cfg)]) == 0
    assert main(["train", "--config", str(cfg)]) == 0
    return cfg, out


def test_pretrain_artifacts(pipeline):
    _, out = pipeline
    enc_dir = out / "encoders"
    assert sorted(p.name for p in enc_dir.iterdir()) == ["dvec.fvox", "vc.fvox"]
    assert (out / "corpus" / "corpus.manifest").exists()


def test_pretrain_rerun_identical(pipeline):
    cfg, out = pipeline
    before = {p.name: p.read_bytes() for p in (out / "encoders").iterdir()}
    assert main(["pretrain", "--config", str(cfg)]) == 0
    after = {p.name: p.read_bytes() for p in (out / "encoders").iterdir()}
    assert before == after


def test_pretrain_joint_only_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, tmp_path / "runx", schemes="lookup")
    assert main(["pretrain", "--config", str(cfg)]) == 1
    assert "error: lookup is not pretrained" in capsys.readouterr().err


def test_train_artifacts(pipeline):
    _, out = pipeline
    ckpt = out / "tts.fvox"
    assert ckpt.exists()
    model = load_tts(ckpt)
    assert model.config.active_schemes == ("dvec", "lookup", "vc")
    lines = (out / "loss_log.txt").read_text().splitlines()
    assert lines[0].startswith("step\t")
    first = float(lines[1].split("\t")[-1])
    last = float(lines[-1].split("\t")[-1])
    assert last < first


def test_train_missing_encoder(tmp_path, capsys):
    cfg = write_config(tmp_path, tmp_path / "runy")
    assert main(["train", "--config", str(cfg)]) == 1
    assert "missing encoder checkpoint" in capsys.readouterr().err


def test_synthesize(pipeline, tmp_path):
    cfg, out = pipeline
    phoneme_file = tmp_path / "lines.txt"
    phoneme_file.write_text(
        "sil aa eh sil\n"
        "# a comment line\n"
        "sil iy s sil\n"
        "\n"
        "sil uw f sil\n"
    )
    args = ["synthesize", "--config", str(cfg), "--phonemes", str(phoneme_file), "--speaker", "spk01"]
    assert main(args) == 0
    synth = out / "synth"
    mels = sorted(p.name for p in synth.glob("*.mel.fvox"))
    wavs = sorted(p.name for p in synth.glob("*.wav"))
    assert mels == ["line001.mel.fvox", "line002.mel.fvox", "line003.mel.fvox"]
    assert wavs == ["line001.wav", "line002.wav", "line003.wav"]
    snapshot = {p.name: p.read_bytes() for p in synth.iterdir()}
    assert main(args) == 0
    assert {p.name: p.read_bytes() for p in synth.iterdir()} == snapshot


def test_synthesize_unknown_phoneme(pipeline, tmp_path, capsys):
    cfg, _ = pipeline
    bad = tmp_path / "bad.txt"
    bad.write_text("sil xx sil\n")
    assert main(["synthesize", "--config", str(cfg), "--phonemes", str(bad), "--speaker", "spk01"]) == 1
    err = capsys.readouterr().err
    assert "unknown phoneme 'xx'" in err and ":1:" in err


def test_synthesize_unknown_speaker(pipeline, tmp_path, capsys):
    cfg, _ = pipeline
    lines = tmp_path / "ok.txt"
    lines.write_text("sil aa sil\n")
    assert main(["synthesize", "--config", str(cfg), "--phonemes", str(lines), "--speaker", "spk99"]) == 1
    assert "unknown speaker: spk99" in capsys.readouterr().err


def test_synthesize_requires_checkpoint(tmp_path, capsys):
    cfg = write_config(tmp_path, tmp_path / "runz")
    lines = tmp_path / "ok.txt"
    lines.write_text("sil aa sil\n")
    assert main(["synthesize", "--config", str(cfg), "--phonemes", str(lines), "--speaker", "spk00"]) == 1
    assert "missing TTS checkpoint" in capsys.readouterr().err


def test_evaluate(pipeline):
    cfg, out = pipeline
    assert main(["evaluate", "--config", str(cfg)]) == 0
    results = out / "eval" / "results.txt"
    lines = results.read_text().splitlines()
    assert lines[0].startswith("# evaluation encoder EER on real data: ")
    assert lines[1] == "config\tk=3\tk=2"
    assert len(lines) == 4  # header comment + column row + 2 config rows
    assert lines[2].startswith("dvec\t")
    assert lines[3].startswith("lookup\t")
    for row in lines[2:]:
        for cell in row.split("\t")[1:]:
            assert 0.0 <= float(cell) <= 1.0
    records = [json.loads(l) for l in (out / "eval" / "results.jsonl").read_text().splitlines()]
    assert records[0]["record"] == "eer"
    assert sum(1 for r in records if r["record"] == "accuracy") == 4
    assert (out / "eval" / "tts_lookup.fvox").exists()
    assert (out / "eval" / "tts_dvec.fvox").exists()


def test_visualize(pipeline):
    cfg, out = pipeline
    assert main(["visualize", "--config", str(cfg)]) == 0
    viz = out / "viz"
    for scheme in ("dvec", "vc", "lookup"):
        assert (viz / f"{scheme}.png").exists()
        assert (viz / f"{scheme}.tsv").exists()
    spread = (viz / "spread.txt").read_text().splitlines()
    assert spread[0] == "scheme\tspread"
    assert [line.split("\t")[0] for line in spread[1:]] == ["dvec", "lookup", "vc"]
    snapshot = (viz / "dvec.png").read_bytes()
    assert main(["visualize", "--config", str(cfg)]) == 0
    assert (viz / "dvec.png").read_bytes() == snapshot


def test_visualize_without_artifacts(tmp_path, capsys):
    cfg = write_config(tmp_path, tmp_path / "runv")
    assert main(["visualize", "--config", str(cfg)]) == 1
    assert "nothing to visualize" in capsys.readouterr().err


def test_bad_config_path(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.cfg")]) == 1
    assert "config file not found" in capsys.readouterr().err


def test_invalid_config_content(tmp_path, capsys):
    cfg = tmp_path / "broken.cfg"
    cfg.write_text("tts.warp = 9\n")
    assert main(["train", "--config", str(cfg)]) == 1
    assert "unknown key" in capsys.readouterr().err


def test_seed_and_out_overrides(tmp_path):
    out_a = tmp_path / "a"
    cfg = write_config(tmp_path, out_a)
    # --out redirects everything; --seed changes the artifacts
    assert main(["pretrain", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "1"]) == 0
    assert not out_a.exists()
    assert (tmp_path / "b" / "encoders" / "dvec.fvox").exists()
