"""Command-line pipeline: pretrain | train | synthesize | evaluate | visualize.

Wires the full workflow: build or load a corpus, pretrain speaker encoders,
train the acoustic model, synthesize mel + WAV from phoneme files, run the
speaker-verification evaluation grid, and export embedding-space plots.
All commands are deterministic given (config, seed): reruns produce
byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .acoustic import AcousticConfig, AcousticModel
from .audio import griffin_lim, save_wav  # noqa: F401  (griffin_lim is part of the CLI surface)
from .config import EvalSection, RunConfig, load_config, override
from .corpus import Corpus, SyntheticSpec, Utterance, generate_synthetic, load_manifest, split_fewshot
from .encoders import (
    PRETRAINED_SCHEMES,
    PretrainConfig,
    SpeakerEncoder,
    VCConfig,
    corpus_mels,
    embed_many,
    load_encoder,
    pretrain_classifier,
    pretrain_vc,
    save_encoder,
)
from .errors import ValidationError
from .features import FeatureCache, MelSpectrogram, save_mel
from .joint import gst_forward
from .sveval import (
    SVResult,
    compute_eer,
    enrollment_embedding,
    score_real_corpus,
    sv_accuracy,
    write_results,
)
from .training import TrainConfig, enrollment_reps, load_tts, save_tts, train_tts, write_loss_log
from .viz import cluster_spread, pca_2d, scatter_export


# ---------------------------------------------------------------------------
# shared plumbing


def _out(config: RunConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cache(config: RunConfig) -> FeatureCache:
    return FeatureCache(_out(config) / "cache")


def ensure_corpus(config: RunConfig) -> Corpus:
    """Load the configured manifest, or generate (once) into the run directory."""
    if config.corpus.manifest:
        return load_manifest(Path(config.corpus.manifest), config.features)
    manifest = _out(config) / "corpus" / "corpus.manifest"
    if manifest.exists():
        return load_manifest(manifest, config.features)
    spec = SyntheticSpec(
        n_speakers=config.corpus.n_speakers,
        utts_per_speaker=config.corpus.utts_per_speaker,
        seed=config.corpus.seed,
        sample_rate=config.features.sample_rate,
        hop_length=config.features.hop_length,
        f0_range=(config.corpus.f0_min, config.corpus.f0_max),
    )
    return generate_synthetic(spec, manifest.parent)


def _encoder_path(config: RunConfig, scheme: str) -> Path:
    return _out(config) / "encoders" / f"{scheme}.fvox"


def _load_encoders(config: RunConfig, schemes: tuple[str, ...]) -> dict[str, SpeakerEncoder]:
    encoders: dict[str, SpeakerEncoder] = {}
    for scheme in schemes:
        if scheme not in PRETRAINED_SCHEMES:
            continue
        path = _encoder_path(config, scheme)
        if not path.exists():
            raise ValidationError(
                f"missing encoder checkpoint for scheme '{scheme}': {path} (run pretrain first)"
            )
        encoders[scheme] = load_encoder(path)
    return encoders


def _acoustic_config(config: RunConfig, corpus: Corpus, schemes: tuple[str, ...]) -> AcousticConfig:
    t = config.tts
    return AcousticConfig(
        vocab_size=len(corpus.phoneme_vocab),
        speakers=corpus.speakers,
        active_schemes=schemes,
        n_mels=config.features.n_mels,
        hidden=t.hidden,
        enc_layers=t.enc_layers,
        dec_layers=t.dec_layers,
        heads=t.heads,
        ffn_dim=t.ffn_dim,
        ffn_kernel=t.ffn_kernel,
        var_filter=t.var_filter,
        var_kernel=t.var_kernel,
        dropout=t.dropout,
        gst_tokens=t.gst_tokens,
        gst_heads=t.gst_heads,
        sample_rate=config.features.sample_rate,
        hop_length=config.features.hop_length,
    )


def _mels_for(corpus: Corpus, config: RunConfig) -> dict[str, MelSpectrogram]:
    return corpus_mels(corpus, config.features, _cache(config))


def _read_phoneme_file(path: Path, corpus: Corpus) -> list[list[int]]:
    if not path.exists():
        raise ValidationError(f"phoneme file not found: {path}")
    index = {name: i for i, name in enumerate(corpus.phoneme_vocab)}
    lines: list[list[int]] = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        ids = []
        for tok in tokens:
            if tok not in index:
                raise ValidationError(f"{path}:{lineno}: unknown phoneme '{tok}'")
            ids.append(index[tok])
        lines.append(ids)
    if not lines:
        raise ValidationError(f"{path}: no phoneme lines")
    return lines


def _select_refs(corpus: Corpus, speaker: str, k: int, seed: int) -> list[Utterance]:
    by_speaker = corpus.by_speaker()
    if speaker not in by_speaker:
        raise ValidationError(f"unknown speaker: {speaker}")
    utts = sorted(by_speaker[speaker], key=lambda u: u.id)
    if len(utts) < k:
        raise ValidationError(
            f"speaker '{speaker}' has {len(utts)} utterances, need k={k} references"
        )
    order = np.random.default_rng(seed).permutation(len(utts))
    return [utts[i] for i in sorted(order[:k])]


# ---------------------------------------------------------------------------
# commands


def cmd_pretrain(config: RunConfig) -> list[Path]:
    """Train one frozen encoder checkpoint per active pretrained scheme."""
    requested = config.schemes
    pretrained = [s for s in requested if s in PRETRAINED_SCHEMES]
    if not pretrained:
        joint = [s for s in requested if s not in PRETRAINED_SCHEMES]
        raise ValidationError(f"{joint[0]} is not pretrained")
    corpus = ensure_corpus(config)
    mels = _mels_for(corpus, config)
    paths: list[Path] = []
    for scheme in sorted(pretrained):
        if scheme in ("dvec", "xvec"):
            cfg = PretrainConfig(
                steps=config.pretrain.steps,
                batch_size=config.pretrain.batch_size,
                lr=config.pretrain.lr,
                seed=config.seed,
                pooling="mean" if scheme == "dvec" else "mean_std",
                hidden=config.pretrain.hidden,
                crop_frames=config.pretrain.crop_frames,
            )
            encoder, losses, accuracy = pretrain_classifier(corpus, cfg, config.features, mels)
            print(f"{scheme}: final loss {losses[-1]:.4f}, training accuracy {accuracy:.3f}")
        else:  # vc
            cfg = VCConfig(
                steps=config.vc.steps,
                batch_size=config.vc.batch_size,
                lr=config.vc.lr,
                seed=config.seed,
                content_dim=config.vc.content_dim,
                hidden=config.vc.hidden,
                crop_frames=config.vc.crop_frames,
            )
            encoder, losses = pretrain_vc(corpus, cfg, config.features, mels)
            print(f"vc: final reconstruction loss {losses[-1]:.4f}")
        path = _encoder_path(config, scheme)
        save_encoder(path, encoder)
        print(f"wrote {path}")
        paths.append(path)
    return paths


def cmd_train(config: RunConfig) -> Path:
    """Train the acoustic model with the configured representation schemes."""
    corpus = ensure_corpus(config)
    encoders = _load_encoders(config, config.schemes)
    acoustic_cfg = _acoustic_config(config, corpus, config.schemes)
    train_cfg = TrainConfig(
        steps=config.tts.steps,
        batch_size=config.tts.batch_size,
        lr=config.tts.lr,
        lr_decay=config.tts.lr_decay,
        seed=config.seed,
        grad_clip=config.tts.grad_clip,
    )
    model, log = train_tts(corpus, acoustic_cfg, train_cfg, encoders, config.features, _cache(config))
    out = _out(config)
    ckpt = out / "tts.fvox"
    save_tts(ckpt, model)
    write_loss_log(out / "loss_log.txt", log)
    print(f"final loss {log[-1]['total']:.4f} (step 0: {log[0]['total']:.4f})")
    print(f"wrote {ckpt}")
    return ckpt


def cmd_synthesize(config: RunConfig, phoneme_file: Path, speaker: str) -> list[Path]:
    """Synthesize one mel + WAV per phoneme line, enrolled from k references."""
    corpus = ensure_corpus(config)
    ckpt = _out(config) / "tts.fvox"
    if not ckpt.exists():
        raise ValidationError(f"missing TTS checkpoint: {ckpt} (run train first)")
    model = load_tts(ckpt)
    encoders = _load_encoders(config, model.config.active_schemes)
    refs = _select_refs(corpus, speaker, config.k, config.seed)
    ref_corpus = corpus.subset({u.id for u in refs})
    mels = corpus_mels(ref_corpus, config.features, _cache(config))
    ref_mels = [mels[u.id] for u in refs]
    reps = enrollment_reps(model, encoders, ref_mels, speaker_id=speaker)
    lines = _read_phoneme_file(phoneme_file, corpus)
    synth_dir = _out(config) / "synth"
    synth_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for i, ids in enumerate(lines, start=1):
        mel = model.synthesize(ids, reps)
        mel_path = synth_dir / f"line{i:03d}.mel.fvox"
        save_mel(mel_path, mel)
        wav_path = synth_dir / f"line{i:03d}.wav"
        save_wav(wav_path, griffin_lim(mel, config.features), config.features.sample_rate)
        print(f"wrote {mel_path} and {wav_path}")
        written.extend([mel_path, wav_path])
    return written


def _evaluation_encoder(config: RunConfig) -> SpeakerEncoder:
    """d-vector encoder pretrained on a disjoint synthetic corpus (own seed)."""
    e = config.eval
    enc_dir = _out(config) / "eval" / "encoder_corpus"
    manifest = enc_dir / "corpus.manifest"
    if manifest.exists():
        enc_corpus = load_manifest(manifest, config.features)
    else:
        spec = SyntheticSpec(
            n_speakers=e.encoder_speakers,
            utts_per_speaker=e.encoder_utts,
            seed=e.encoder_seed,
            sample_rate=config.features.sample_rate,
            hop_length=config.features.hop_length,
            f0_range=(config.corpus.f0_min, config.corpus.f0_max),
        )
        enc_corpus = generate_synthetic(spec, enc_dir)
    cfg = PretrainConfig(
        steps=e.encoder_steps,
        batch_size=config.pretrain.batch_size,
        lr=config.pretrain.lr,
        seed=e.encoder_seed,
        pooling="mean",
        hidden=config.pretrain.hidden,
        crop_frames=config.pretrain.crop_frames,
    )
    encoder, _, accuracy = pretrain_classifier(enc_corpus, cfg, config.features)
    print(f"evaluation encoder trained (classification accuracy {accuracy:.3f})")
    return encoder


def _track_speakers(corpus: Corpus, eval_cfg: EvalSection) -> list[tuple[int, list[str]]]:
    """Assign the last speakers of the corpus to few-shot tracks, one per k."""
    m = eval_cfg.fewshot_per_track
    if m < 1:
        raise ValidationError("eval.fewshot_per_track must be >= 1")
    speakers = list(corpus.speakers)
    needed = m * len(eval_cfg.k_values)
    if needed >= len(speakers):
        raise ValidationError(
            f"corpus has {len(speakers)} speakers; few-shot tracks need {needed} "
            "plus at least one seen speaker"
        )
    tracks: list[tuple[int, list[str]]] = []
    tail = speakers[len(speakers) - needed :]
    for i, k in enumerate(eval_cfg.k_values):
        tracks.append((k, tail[i * m : (i + 1) * m]))
    return tracks


def cmd_evaluate(config: RunConfig) -> Path:
    """Run the representation-scheme grid and report SV accuracies + EER."""
    corpus = ensure_corpus(config)
    rows = config.eval.rows()
    union_pretrained = tuple(
        sorted({s for row in rows for s in row if s in PRETRAINED_SCHEMES})
    )
    encoders = _load_encoders(config, union_pretrained)

    tracks = _track_speakers(corpus, config.eval)
    refs_by_speaker: dict[str, list[Utterance]] = {}
    holdout_by_speaker: dict[str, list[Utterance]] = {}
    train_ids: set[str] = {u.id for u in corpus.utterances}
    for k, group in tracks:
        train_part, refs, holdout = split_fewshot(corpus, set(group), k, seed=config.seed)
        train_ids &= {u.id for u in train_part.utterances}
        refs_by_speaker.update(refs)
        for utt in holdout.utterances:
            holdout_by_speaker.setdefault(utt.speaker_id, []).append(utt)
    train_corpus = corpus.subset(train_ids)

    # Threshold and EER come from real utterances only.
    eval_encoder = _evaluation_encoder(config)
    cache = _cache(config)
    real_mels = corpus_mels(corpus, config.features, cache)
    mels_by_speaker: dict[str, list[MelSpectrogram]] = {}
    for utt in corpus.utterances:
        mels_by_speaker.setdefault(utt.speaker_id, []).append(real_mels[utt.id])
    scores = score_real_corpus(eval_encoder, mels_by_speaker)
    eer, threshold = compute_eer(scores)
    print(f"evaluation encoder EER on real data: {eer:.4f} (threshold {threshold:.4f})")
    enrollments = {
        spk: enrollment_embedding(eval_encoder, mels) for spk, mels in mels_by_speaker.items()
    }

    eval_dir = _out(config) / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    accuracy_per_model: dict[str, dict[str, float]] = {}
    budgets = [f"k={k}" for k, _ in tracks]
    for schemes in rows:
        label = ",".join(schemes)
        acoustic_cfg = _acoustic_config(config, train_corpus, schemes)
        train_cfg = TrainConfig(
            steps=config.tts.steps,
            batch_size=config.tts.batch_size,
            lr=config.tts.lr,
            lr_decay=config.tts.lr_decay,
            seed=config.seed,
            grad_clip=config.tts.grad_clip,
        )
        row_encoders = {s: encoders[s] for s in schemes if s in PRETRAINED_SCHEMES}
        model, log = train_tts(
            train_corpus, acoustic_cfg, train_cfg, row_encoders, config.features, cache
        )
        save_tts(eval_dir / f"tts_{'-'.join(schemes)}.fvox", model)
        accuracy_per_model[label] = {}
        for k, group in tracks:
            accs = []
            for spk in group:
                ref_mels = [real_mels[u.id] for u in refs_by_speaker[spk]]
                reps = enrollment_reps(model, encoders, ref_mels, speaker_id=spk)
                holdout = sorted(holdout_by_speaker[spk], key=lambda u: u.id)
                synth_mels = []
                for j in range(config.eval.synth_per_speaker):
                    phonemes = list(holdout[j % len(holdout)].phonemes)
                    synth_mels.append(model.synthesize(phonemes, reps))
                accs.append(sv_accuracy(synth_mels, enrollments[spk], threshold, eval_encoder))
            accuracy_per_model[label][f"k={k}"] = float(np.mean(accs))
        row = accuracy_per_model[label]
        print(f"{label}: " + "  ".join(f"{b} acc={row[b]:.3f}" for b in budgets) +
              f"  (final loss {log[-1]['total']:.4f})")

    result = SVResult(eer=eer, threshold=threshold, accuracy_per_model=accuracy_per_model)
    results_path = eval_dir / "results.txt"
    write_results(results_path, result, budgets)
    print(f"wrote {results_path}")
    return results_path


def cmd_visualize(config: RunConfig) -> list[Path]:
    """PCA scatter per active scheme plus a cluster-compactness report."""
    corpus = ensure_corpus(config)
    cache = _cache(config)
    mels = corpus_mels(corpus, config.features, cache)
    labels = [utt.speaker_id for utt in corpus.utterances]
    mel_list = [mels[utt.id] for utt in corpus.utterances]

    embeddings: dict[str, np.ndarray] = {}
    for scheme in config.schemes:
        if scheme in PRETRAINED_SCHEMES:
            path = _encoder_path(config, scheme)
            if not path.exists():
                continue
            embeddings[scheme] = embed_many(load_encoder(path), mel_list)
    joint_active = [s for s in config.schemes if s not in PRETRAINED_SCHEMES]
    ckpt = _out(config) / "tts.fvox"
    if joint_active and ckpt.exists():
        model = load_tts(ckpt)
        if "lookup" in model.config.active_schemes and "lookup" in joint_active:
            embeddings["lookup"] = np.stack(
                [model.speaker_table.lookup(utt.speaker_id).vector for utt in corpus.utterances]
            )
        if "gst" in model.config.active_schemes and "gst" in joint_active:
            embeddings["gst"] = np.stack([gst_forward(model.gst, m).vector for m in mel_list])
    if not embeddings:
        raise ValidationError(
            "nothing to visualize: no encoder or TTS checkpoints found for the active schemes"
        )

    viz_dir = _out(config) / "viz"
    viz_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    spread_lines = ["scheme\tspread"]
    for scheme in sorted(embeddings):
        projected = pca_2d(embeddings[scheme], labels)
        png = viz_dir / f"{scheme}.png"
        scatter_export(projected, png, title=scheme)
        spread = cluster_spread(embeddings[scheme], labels)
        spread_lines.append(f"{scheme}\t{spread:.6f}")
        print(f"wrote {png} (cluster spread {spread:.4f})")
        written.extend([png, png.with_suffix(".tsv")])
    spread_path = viz_dir / "spread.txt"
    spread_path.write_text("\n".join(spread_lines) + "\n", encoding="utf-8")
    written.append(spread_path)
    return written


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewvox",
        description="Few-shot multi-speaker TTS: pretrain, train, synthesize, evaluate, visualize.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
        ("pretrain", "train speaker-encoder checkpoints for the active pretrained schemes"),
        ("train", "train the acoustic model"),
        ("synthesize", "synthesize mel + WAV files from a phoneme file"),
        ("evaluate", "run the representation grid and SV evaluation"),
        ("visualize", "export PCA scatter plots of speaker embeddings"),
    ):
        sp = sub.add_parser(name, help=desc)
        sp.add_argument("--config", required=True, help="key=value run configuration file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="override the output directory")
        if name == "synthesize":
            sp.add_argument("--phonemes", required=True, help="file of space-separated phonemes")
            sp.add_argument("--speaker", required=True, help="target speaker id")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = override(load_config(args.config), args.seed, args.out)
        if args.command == "pretrain":
            cmd_pretrain(config)
        elif args.command == "train":
            cmd_train(config)
        elif args.command == "synthesize":
            cmd_synthesize(config, Path(args.phonemes), args.speaker)
        elif args.command == "evaluate":
            cmd_evaluate(config)
        else:
            cmd_visualize(config)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
