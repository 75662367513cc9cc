"""TTS training: feature preparation, deterministic batching, optimization,
and checkpoint persistence."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .acoustic import AcousticConfig, AcousticModel, TrainingBatch
from .corpus import Corpus, Utterance
from .encoders import (
    PRETRAINED_SCHEMES,
    SpeakerEncoder,
    SpeakerRep,
    corpus_mels,
    embed,
    enroll,
    state_checksum,
)
from .errors import ValidationError
from .features import FeatureCache, FeatureConfig, MelSpectrogram, prosody_targets
from .joint import gst_enroll
from .serial import expect_kind, load_blob, save_blob


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    batch_size: int = 16
    lr: float = 1e-3
    lr_decay: str = "cosine"  # "cosine" anneals to 0 over the budget; "constant" holds lr
    seed: int = 0
    grad_clip: float = 1.0
    log_every: int = 50

    def __post_init__(self) -> None:
        if self.steps <= 0 or self.batch_size <= 0:
            raise ValidationError("steps and batch_size must be positive")
        if self.lr <= 0:
            raise ValidationError("lr must be positive")
        if self.lr_decay not in ("cosine", "constant"):
            raise ValidationError("lr_decay must be 'cosine' or 'constant'")

    def lr_at(self, step: int) -> float:
        """Learning rate for the given 0-based step."""
        if self.lr_decay == "constant":
            return self.lr
        return self.lr * 0.5 * (1.0 + math.cos(math.pi * step / self.steps))


@dataclass(frozen=True)
class PreparedUtterance:
    mel: np.ndarray     # [T, n_mels] float32
    pitch: np.ndarray   # [L] phoneme-level Hz
    energy: np.ndarray  # [L] phoneme-level energy


def prepare_utterances(
    corpus: Corpus,
    config: FeatureConfig,
    cache: FeatureCache | None = None,
) -> dict[str, PreparedUtterance]:
    """Mel + phoneme-averaged prosody targets for every utterance."""
    out: dict[str, PreparedUtterance] = {}
    for utt in corpus.utterances:
        arrays = None
        if cache is not None:
            arrays = tuple(cache.get(utt.id, name) for name in ("mel", "pitch_ph", "energy_ph"))
            if any(a is None for a in arrays):
                arrays = None
        if arrays is None:
            mel = compute_mel_cached(utt, config, cache)
            targets = prosody_targets(utt.waveform, np.asarray(utt.durations), config)
            pitch_ph = targets.pitch.astype(np.float32)
            energy_ph = targets.energy.astype(np.float32)
            if cache is not None:
                cache.put(utt.id, pitch_ph, "pitch_ph")
                cache.put(utt.id, energy_ph, "energy_ph")
            out[utt.id] = PreparedUtterance(mel.values, pitch_ph, energy_ph)
        else:
            out[utt.id] = PreparedUtterance(arrays[0], arrays[1], arrays[2])
    return out


def compute_mel_cached(utt: Utterance, config: FeatureConfig, cache: FeatureCache | None) -> MelSpectrogram:
    if cache is not None:
        cached = cache.get(utt.id, "mel")
        if cached is not None:
            return MelSpectrogram(cached, config.hop_length, config.sample_rate)
    from .features import compute_mel

    mel = compute_mel(utt.waveform, config)
    if cache is not None:
        cache.put(utt.id, mel.values, "mel")
    return mel


def precompute_reps(
    corpus: Corpus,
    encoders: dict[str, SpeakerEncoder],
    mels: dict[str, MelSpectrogram],
) -> dict[str, dict[str, np.ndarray]]:
    """Frozen-encoder embeddings per utterance for each pretrained scheme."""
    out: dict[str, dict[str, np.ndarray]] = {}
    for scheme, encoder in encoders.items():
        if scheme not in PRETRAINED_SCHEMES:
            raise ValidationError(f"'{scheme}' is not a pretrained scheme")
        out[scheme] = {utt.id: embed(encoder, mels[utt.id]).vector for utt in corpus.utterances}
    return out


def _collate(
    utts: list[Utterance],
    prepared: dict[str, PreparedUtterance],
    reps: dict[str, dict[str, np.ndarray]],
) -> TrainingBatch:
    max_ph = max(len(u.phonemes) for u in utts)
    max_fr = max(u.n_frames for u in utts)
    b = len(utts)
    phonemes = torch.zeros(b, max_ph, dtype=torch.long)
    ph_mask = torch.zeros(b, max_ph, dtype=torch.bool)
    pitch = torch.zeros(b, max_ph)
    energy = torch.zeros(b, max_ph)
    durations = torch.zeros(b, max_ph, dtype=torch.long)
    n_mels = prepared[utts[0].id].mel.shape[1]
    mels = torch.zeros(b, max_fr, n_mels)
    fr_mask = torch.zeros(b, max_fr, dtype=torch.bool)
    for i, utt in enumerate(utts):
        l, t = len(utt.phonemes), utt.n_frames
        p = prepared[utt.id]
        phonemes[i, :l] = torch.tensor(utt.phonemes, dtype=torch.long)
        ph_mask[i, :l] = True
        pitch[i, :l] = torch.from_numpy(p.pitch)
        energy[i, :l] = torch.from_numpy(p.energy)
        durations[i, :l] = torch.tensor(utt.durations, dtype=torch.long)
        mels[i, :t] = torch.from_numpy(p.mel)
        fr_mask[i, :t] = True
    rep_tensors = {
        scheme: torch.from_numpy(np.stack([table[u.id] for u in utts]).astype(np.float32))
        for scheme, table in reps.items()
    }
    return TrainingBatch(
        phonemes, ph_mask, pitch, energy, durations, mels, fr_mask,
        [u.speaker_id for u in utts], rep_tensors,
    )


def prosody_statistics(prepared: dict[str, PreparedUtterance]) -> tuple[float, float, float, float]:
    pitch = np.concatenate([p.pitch for p in prepared.values()])
    energy = np.concatenate([p.energy for p in prepared.values()])
    return (
        float(pitch.mean()),
        float(max(pitch.std(), 1e-6)),
        float(energy.mean()),
        float(max(energy.std(), 1e-6)),
    )


def train_tts(
    corpus: Corpus,
    acoustic_cfg: AcousticConfig,
    train_cfg: TrainConfig,
    encoders: dict[str, SpeakerEncoder] | None = None,
    features_cfg: FeatureConfig | None = None,
    cache: FeatureCache | None = None,
) -> tuple[AcousticModel, list[dict[str, float]]]:
    """Train the acoustic model jointly with its lookup/GST representations.

    Pretrained encoders are used only to precompute per-utterance vectors;
    their parameters are untouched (checksum-verified).
    """
    features_cfg = features_cfg or FeatureConfig()
    encoders = encoders or {}
    needed = [s for s in acoustic_cfg.active_schemes if s in PRETRAINED_SCHEMES]
    missing = [s for s in needed if s not in encoders]
    if missing:
        raise ValidationError(f"missing pretrained encoder(s) for scheme(s): {missing}")
    for scheme in needed:
        if not encoders[scheme].frozen:
            raise ValidationError(f"encoder for '{scheme}' must be frozen")
    checksums = {s: state_checksum(encoders[s].module) for s in needed}

    torch.set_num_threads(1)
    prepared = prepare_utterances(corpus, features_cfg, cache)
    mels = {uid: MelSpectrogram(p.mel, features_cfg.hop_length, features_cfg.sample_rate)
            for uid, p in prepared.items()}
    reps = precompute_reps(corpus, {s: encoders[s] for s in needed}, mels)

    torch.manual_seed(train_cfg.seed)
    model = AcousticModel(acoustic_cfg)
    model.set_prosody_stats(*prosody_statistics(prepared))
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.lr)
    rng = np.random.default_rng(train_cfg.seed)
    utts = list(corpus.utterances)
    order: list[int] = []
    log: list[dict[str, float]] = []
    model.train()
    for step in range(train_cfg.steps):
        while len(order) < train_cfg.batch_size:
            order.extend(rng.permutation(len(utts)).tolist())
        idx, order = order[: train_cfg.batch_size], order[train_cfg.batch_size :]
        batch = _collate([utts[i] for i in idx], prepared, reps)
        lr = train_cfg.lr_at(step)
        for group in opt.param_groups:
            group["lr"] = lr
        opt.zero_grad()
        _, _, losses = model.forward_train(batch)
        losses["total"].backward()
        if train_cfg.grad_clip > 0:
            nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
        opt.step()
        log.append({"step": float(step), **{k: float(v.detach()) for k, v in losses.items()}})
    model.eval()
    for scheme in needed:
        if state_checksum(encoders[scheme].module) != checksums[scheme]:
            raise ValidationError(f"frozen encoder '{scheme}' was mutated during training")
    return model, log


def evaluate_losses(
    model: AcousticModel,
    corpus: Corpus,
    encoders: dict[str, SpeakerEncoder] | None = None,
    features_cfg: FeatureConfig | None = None,
    cache: FeatureCache | None = None,
    chunk_size: int = 32,
) -> dict[str, float]:
    """Teacher-forced loss components over a whole corpus (no optimization).

    Chunked so large corpora stay within memory; aggregation reproduces the
    per-batch normalization exactly (frame-weighted mel, phoneme-weighted
    prosody terms).
    """
    features_cfg = features_cfg or FeatureConfig()
    encoders = encoders or {}
    needed = [s for s in model.config.active_schemes if s in PRETRAINED_SCHEMES]
    missing = [s for s in needed if s not in encoders]
    if missing:
        raise ValidationError(f"missing pretrained encoder(s) for scheme(s): {missing}")
    prepared = prepare_utterances(corpus, features_cfg, cache)
    mels = {uid: MelSpectrogram(p.mel, features_cfg.hop_length, features_cfg.sample_rate)
            for uid, p in prepared.items()}
    reps = precompute_reps(corpus, {s: encoders[s] for s in needed}, mels)
    utts = list(corpus.utterances)
    was_training = model.training
    model.eval()
    sums = {"mel": 0.0, "pitch": 0.0, "energy": 0.0, "duration": 0.0}
    frame_total = 0.0
    ph_total = 0.0
    try:
        with torch.no_grad():
            for start in range(0, len(utts), chunk_size):
                chunk = utts[start : start + chunk_size]
                batch = _collate(chunk, prepared, reps)
                _, _, losses = model.forward_train(batch)
                frames = float(batch.frame_mask.sum())
                phs = float(batch.phoneme_mask.sum())
                sums["mel"] += float(losses["mel"]) * frames
                for key in ("pitch", "energy", "duration"):
                    sums[key] += float(losses[key]) * phs
                frame_total += frames
                ph_total += phs
    finally:
        if was_training:
            model.train()
    out = {
        "mel": sums["mel"] / frame_total,
        "pitch": sums["pitch"] / ph_total,
        "energy": sums["energy"] / ph_total,
        "duration": sums["duration"] / ph_total,
    }
    out["total"] = sum(out.values())
    return out


def write_loss_log(path: Path | str, log: list[dict[str, float]]) -> None:
    lines = ["step\tmel\tpitch\tenergy\tduration\ttotal"]
    for row in log:
        lines.append(
            f"{int(row['step'])}\t{row['mel']:.6f}\t{row['pitch']:.6f}"
            f"\t{row['energy']:.6f}\t{row['duration']:.6f}\t{row['total']:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_tts(path: Path | str, model: AcousticModel) -> None:
    header = {"config": model.config.to_dict()}
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    save_blob(path, "tts", header, arrays)


def load_tts(path: Path | str) -> AcousticModel:
    kind, header, arrays = load_blob(path)
    expect_kind(path, "tts", kind)
    model = AcousticModel(AcousticConfig.from_dict(header["config"]))
    model.load_state_dict({k: torch.from_numpy(v) for k, v in arrays.items()})
    model.eval()
    return model


def enrollment_reps(
    model: AcousticModel,
    encoders: dict[str, SpeakerEncoder],
    ref_mels: list[MelSpectrogram],
    speaker_id: str | None = None,
) -> list[SpeakerRep]:
    """Per-scheme enrolled representations for one target speaker.

    Pretrained schemes and GST average per-utterance vectors over the
    references; lookup reads the trained table row (known speakers only).
    """
    if not ref_mels:
        raise ValidationError("enrollment needs at least one reference utterance")
    reps: list[SpeakerRep] = []
    for scheme in model.config.active_schemes:
        if scheme in PRETRAINED_SCHEMES:
            if scheme not in encoders:
                raise ValidationError(f"missing pretrained encoder for scheme '{scheme}'")
            reps.append(enroll(encoders[scheme], ref_mels))
        elif scheme == "gst":
            reps.append(gst_enroll(model.gst, ref_mels))
        else:  # lookup
            if speaker_id is None:
                raise ValidationError("lookup scheme requires a speaker id")
            reps.append(model.speaker_table.lookup(speaker_id))
    return reps
