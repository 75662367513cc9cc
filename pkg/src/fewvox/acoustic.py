"""Acoustic model: phoneme encoder, speaker injection, variance adaptor, decoder.

Pipeline: transformer encoder over phonemes → per-scheme speaker projections
added to every time step → variance adaptor that predicts and conditions on
phoneme-level pitch and energy BEFORE duration expansion → length regulator →
transformer decoder → 80-band mel head.  Training teacher-forces ground-truth
prosody and durations; inference uses predictions with a 1-frame duration
floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import torch
from torch import nn

from .encoders import PRETRAINED_SCHEMES, REP_DIM, SCHEMES, SpeakerRep
from .errors import ValidationError
from .features import MelSpectrogram
from .joint import EmbeddingTable, GSTModule


@dataclass(frozen=True)
class AcousticConfig:
    vocab_size: int
    speakers: tuple[str, ...] = ()
    active_schemes: tuple[str, ...] = ("lookup",)
    n_mels: int = 80
    hidden: int = 256
    enc_layers: int = 4
    dec_layers: int = 4
    heads: int = 2
    ffn_dim: int = 1024
    ffn_kernel: int = 3
    var_filter: int = 256
    var_kernel: int = 3
    dropout: float = 0.0
    gst_tokens: int = 10
    gst_heads: int = 4
    sample_rate: int = 22050
    hop_length: int = 256

    def __post_init__(self) -> None:
        if self.vocab_size < 1:
            raise ValidationError("vocab_size must be >= 1")
        schemes = tuple(sorted(set(self.active_schemes)))
        object.__setattr__(self, "active_schemes", schemes)
        if not schemes:
            raise ValidationError("active_schemes must be non-empty")
        unknown = [s for s in schemes if s not in SCHEMES]
        if unknown:
            raise ValidationError(f"unknown schemes: {unknown}")
        if "lookup" in schemes and not self.speakers:
            raise ValidationError("lookup scheme requires the training speaker list")
        if self.hidden % self.heads != 0:
            raise ValidationError("hidden must be divisible by heads")

    def to_dict(self) -> dict[str, Any]:
        return {
            "vocab_size": self.vocab_size,
            "speakers": list(self.speakers),
            "active_schemes": list(self.active_schemes),
            "n_mels": self.n_mels,
            "hidden": self.hidden,
            "enc_layers": self.enc_layers,
            "dec_layers": self.dec_layers,
            "heads": self.heads,
            "ffn_dim": self.ffn_dim,
            "ffn_kernel": self.ffn_kernel,
            "var_filter": self.var_filter,
            "var_kernel": self.var_kernel,
            "dropout": self.dropout,
            "gst_tokens": self.gst_tokens,
            "gst_heads": self.gst_heads,
            "sample_rate": self.sample_rate,
            "hop_length": self.hop_length,
        }

    @staticmethod
    def from_dict(d: dict[str, Any]) -> "AcousticConfig":
        d = dict(d)
        d["speakers"] = tuple(d.get("speakers", ()))
        d["active_schemes"] = tuple(d.get("active_schemes", ()))
        return AcousticConfig(**d)


def sinusoidal_pe(length: int, dim: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=dtype).unsqueeze(1)
    idx = torch.arange(0, dim, 2, dtype=dtype)
    div = torch.exp(-math.log(10000.0) * idx / dim)
    pe = torch.zeros(length, dim, dtype=dtype)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)
    return pe


class FFTBlock(nn.Module):
    """Self-attention + conv feed-forward, both masked so padding stays inert."""

    def __init__(self, hidden: int, heads: int, ffn_dim: int, kernel: int, dropout: float) -> None:
        super().__init__()
        self.attn = nn.MultiheadAttention(hidden, heads, dropout=dropout, batch_first=True)
        self.norm1 = nn.LayerNorm(hidden)
        self.conv1 = nn.Conv1d(hidden, ffn_dim, kernel, padding=kernel // 2)
        self.conv2 = nn.Conv1d(ffn_dim, hidden, kernel, padding=kernel // 2)
        self.norm2 = nn.LayerNorm(hidden)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        m = mask.unsqueeze(-1).to(x.dtype)
        att, _ = self.attn(x, x, x, key_padding_mask=~mask, need_weights=False)
        x = self.norm1(x + self.drop(att)) * m
        # Re-mask between the convs: conv1's first padded output is nonzero
        # (its kernel sees the last valid frame) and conv2 would leak it back.
        h = torch.relu(self.conv1(x.transpose(1, 2))).transpose(1, 2) * m
        h = self.conv2(h.transpose(1, 2)).transpose(1, 2)
        return self.norm2(x + self.drop(h)) * m


class VariancePredictor(nn.Module):
    """Per-position scalar predictor (pitch, energy, or log-duration)."""

    def __init__(self, hidden: int, filt: int, kernel: int, dropout: float) -> None:
        super().__init__()
        self.conv1 = nn.Conv1d(hidden, filt, kernel, padding=kernel // 2)
        self.norm1 = nn.LayerNorm(filt)
        self.conv2 = nn.Conv1d(filt, filt, kernel, padding=kernel // 2)
        self.norm2 = nn.LayerNorm(filt)
        self.out = nn.Linear(filt, 1)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        m = mask.unsqueeze(-1).to(x.dtype)
        h = torch.relu(self.conv1((x * m).transpose(1, 2))).transpose(1, 2)
        h = self.drop(self.norm1(h)) * m
        h = torch.relu(self.conv2(h.transpose(1, 2))).transpose(1, 2)
        h = self.drop(self.norm2(h)) * m
        return (self.out(h).squeeze(-1)) * mask.to(x.dtype)


def length_regulate(x: torch.Tensor, durations: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Repeat each phoneme's features duration-many times.

    Returns (frames [B, T, H], frame_mask [B, T], frame_lengths [B]) with
    T == max frame length and exactly sum(durations[b]) valid frames per item.
    """
    if durations.lt(0).any():
        raise ValidationError("durations must be non-negative")
    lengths = durations.sum(dim=1)
    total = int(lengths.max().item()) if lengths.numel() else 0
    if total == 0:
        raise ValidationError("expansion produced no frames")
    b, _, h = x.shape
    out = x.new_zeros(b, total, h)
    for i in range(b):
        expanded = torch.repeat_interleave(x[i], durations[i], dim=0)
        out[i, : expanded.shape[0]] = expanded
    mask = torch.arange(total, device=x.device).unsqueeze(0) < lengths.unsqueeze(1)
    return out, mask, lengths


@dataclass
class TrainingBatch:
    phonemes: torch.Tensor      # [B, L] long, zero-padded
    phoneme_mask: torch.Tensor  # [B, L] bool
    pitch: torch.Tensor         # [B, L] phoneme-level Hz targets
    energy: torch.Tensor        # [B, L] phoneme-level energy targets
    durations: torch.Tensor     # [B, L] long frame counts
    mels: torch.Tensor          # [B, T, n_mels] zero-padded targets
    frame_mask: torch.Tensor    # [B, T] bool
    speaker_ids: list[str] = field(default_factory=list)
    reps: dict[str, torch.Tensor] = field(default_factory=dict)  # scheme -> [B, 128]

    def __post_init__(self) -> None:
        b, l = self.phonemes.shape
        for name, t, shape in [
            ("phoneme_mask", self.phoneme_mask, (b, l)),
            ("pitch", self.pitch, (b, l)),
            ("energy", self.energy, (b, l)),
            ("durations", self.durations, (b, l)),
        ]:
            if tuple(t.shape) != shape:
                raise ValidationError(f"batch field {name} has shape {tuple(t.shape)}, want {shape}")
        if self.mels.shape[0] != b or self.frame_mask.shape != self.mels.shape[:2]:
            raise ValidationError("mel/frame_mask shapes inconsistent")
        frame_lengths = self.frame_mask.sum(dim=1)
        dur_sums = (self.durations * self.phoneme_mask).sum(dim=1)
        if not torch.equal(frame_lengths, dur_sums):
            raise ValidationError("durations do not sum to mel frame lengths")


class AcousticModel(nn.Module):
    def __init__(self, config: AcousticConfig) -> None:
        super().__init__()
        self.config = config
        c = config
        self.phoneme_embed = nn.Embedding(c.vocab_size, c.hidden)
        self.enc_blocks = nn.ModuleList(
            FFTBlock(c.hidden, c.heads, c.ffn_dim, c.ffn_kernel, c.dropout) for _ in range(c.enc_layers)
        )
        self.projections = nn.ModuleDict(
            {
                scheme: nn.Sequential(
                    nn.Linear(REP_DIM, c.hidden), nn.ReLU(), nn.Linear(c.hidden, c.hidden)
                )
                for scheme in c.active_schemes
            }
        )
        self.pitch_predictor = VariancePredictor(c.hidden, c.var_filter, c.var_kernel, c.dropout)
        self.energy_predictor = VariancePredictor(c.hidden, c.var_filter, c.var_kernel, c.dropout)
        self.duration_predictor = VariancePredictor(c.hidden, c.var_filter, c.var_kernel, c.dropout)
        self.pitch_proj = nn.Linear(1, c.hidden)
        self.energy_proj = nn.Linear(1, c.hidden)
        self.dec_blocks = nn.ModuleList(
            FFTBlock(c.hidden, c.heads, c.ffn_dim, c.ffn_kernel, c.dropout) for _ in range(c.dec_layers)
        )
        self.mel_head = nn.Linear(c.hidden, c.n_mels)
        if "lookup" in c.active_schemes:
            self.speaker_table = EmbeddingTable(c.speakers)
        if "gst" in c.active_schemes:
            self.gst = GSTModule(c.n_mels, c.gst_tokens, c.gst_heads)
        # Global prosody normalization stats, set from the training corpus.
        self.register_buffer("pitch_mean", torch.tensor(0.0))
        self.register_buffer("pitch_std", torch.tensor(1.0))
        self.register_buffer("energy_mean", torch.tensor(0.0))
        self.register_buffer("energy_std", torch.tensor(1.0))

    # ---- prosody normalization -------------------------------------------------
    def set_prosody_stats(self, pitch_mean: float, pitch_std: float, energy_mean: float, energy_std: float) -> None:
        self.pitch_mean.fill_(pitch_mean)
        self.pitch_std.fill_(max(pitch_std, 1e-6))
        self.energy_mean.fill_(energy_mean)
        self.energy_std.fill_(max(energy_std, 1e-6))

    def norm_pitch(self, pitch: torch.Tensor) -> torch.Tensor:
        return (pitch - self.pitch_mean) / self.pitch_std

    def norm_energy(self, energy: torch.Tensor) -> torch.Tensor:
        return (energy - self.energy_mean) / self.energy_std

    # ---- pipeline stages ---------------------------------------------------------
    def encode(self, phonemes: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if phonemes.numel() == 0 or phonemes.shape[1] == 0:
            raise ValidationError("cannot encode an empty phoneme sequence")
        if int(phonemes.max()) >= self.config.vocab_size or int(phonemes.min()) < 0:
            raise ValidationError("phoneme id outside vocabulary")
        x = self.phoneme_embed(phonemes)
        x = x + sinusoidal_pe(x.shape[1], x.shape[2], x.dtype).unsqueeze(0)
        x = x * mask.unsqueeze(-1).to(x.dtype)
        for block in self.enc_blocks:
            x = block(x, mask)
        return x

    def inject(self, hidden: torch.Tensor, reps: dict[str, torch.Tensor], mask: torch.Tensor | None = None) -> torch.Tensor:
        """Add the per-scheme projected representation at every time step."""
        out = hidden
        for scheme in sorted(reps):
            if scheme not in self.projections:
                raise ValidationError(f"no projection registered for scheme '{scheme}'")
            out = out + self.projections[scheme](reps[scheme]).unsqueeze(1)
        if mask is not None:
            out = out * mask.unsqueeze(-1).to(out.dtype)
        return out

    def variance_adapt(
        self,
        hidden: torch.Tensor,
        mask: torch.Tensor,
        targets: tuple[torch.Tensor, torch.Tensor, torch.Tensor] | None = None,
    ):
        """Phoneme-level prosody prediction and conditioning, then expansion.

        ``targets`` = (normalized pitch, normalized energy, integer durations)
        enables teacher forcing; otherwise predictions drive both the
        conditioning and the expansion (duration floor 1 frame).
        """
        fmask = mask.to(hidden.dtype).unsqueeze(-1)
        pitch_hat = self.pitch_predictor(hidden, mask)
        pitch_used = targets[0] if targets is not None else pitch_hat
        hidden = (hidden + self.pitch_proj(pitch_used.unsqueeze(-1))) * fmask
        energy_hat = self.energy_predictor(hidden, mask)
        energy_used = targets[1] if targets is not None else energy_hat
        hidden = (hidden + self.energy_proj(energy_used.unsqueeze(-1))) * fmask
        log_dur_hat = self.duration_predictor(hidden, mask)
        if targets is not None:
            durations = targets[2]
        else:
            durations = torch.clamp(torch.round(torch.exp(log_dur_hat)), min=1.0).long()
            durations = durations * mask.long()
        expanded, frame_mask, frame_lengths = length_regulate(hidden, durations)
        preds = {"pitch": pitch_hat, "energy": energy_hat, "log_duration": log_dur_hat}
        return expanded, frame_mask, frame_lengths, preds

    def decode(self, frames: torch.Tensor, frame_mask: torch.Tensor) -> torch.Tensor:
        if frames.shape[1] == 0:
            raise ValidationError("cannot decode an empty frame sequence")
        x = frames + sinusoidal_pe(frames.shape[1], frames.shape[2], frames.dtype).unsqueeze(0)
        x = x * frame_mask.unsqueeze(-1).to(x.dtype)
        for block in self.dec_blocks:
            x = block(x, frame_mask)
        return self.mel_head(x)

    # ---- training & inference entry points --------------------------------------
    def _rep_tensors(self, batch: TrainingBatch) -> dict[str, torch.Tensor]:
        reps: dict[str, torch.Tensor] = {}
        for scheme in self.config.active_schemes:
            if scheme == "lookup":
                reps[scheme] = self.speaker_table(batch.speaker_ids)
            elif scheme == "gst":
                reps[scheme] = self.gst(batch.mels, batch.frame_mask.sum(dim=1))
            else:
                if scheme not in batch.reps:
                    raise ValidationError(f"batch is missing representations for scheme '{scheme}'")
                reps[scheme] = batch.reps[scheme]
        return reps

    def forward_train(self, batch: TrainingBatch):
        mask = batch.phoneme_mask
        hidden = self.encode(batch.phonemes, mask)
        hidden = self.inject(hidden, self._rep_tensors(batch), mask)
        pitch_t = self.norm_pitch(batch.pitch) * mask.to(hidden.dtype)
        energy_t = self.norm_energy(batch.energy) * mask.to(hidden.dtype)
        durs = batch.durations * mask.long()
        expanded, frame_mask, _, preds = self.variance_adapt(hidden, mask, (pitch_t, energy_t, durs))
        mel_pred = self.decode(expanded, frame_mask)
        if mel_pred.shape[1] < batch.mels.shape[1]:
            # The target tensor may carry extra all-padding frames beyond the
            # teacher-forced expansion; align with masked (zero) rows.
            pad = batch.mels.shape[1] - mel_pred.shape[1]
            mel_pred = torch.nn.functional.pad(mel_pred, (0, 0, 0, pad))
        losses = self.loss(mel_pred, preds, batch)
        return mel_pred, preds, losses

    def loss(self, mel_pred: torch.Tensor, preds: dict[str, torch.Tensor], batch: TrainingBatch) -> dict[str, torch.Tensor]:
        if mel_pred.shape != batch.mels.shape:
            raise ValidationError(
                f"predicted mel shape {tuple(mel_pred.shape)} != target {tuple(batch.mels.shape)}"
            )
        fmask = batch.frame_mask.to(mel_pred.dtype).unsqueeze(-1)
        n_frames = fmask.sum() * mel_pred.shape[-1]
        mel_loss = (torch.abs(mel_pred - batch.mels) * fmask).sum() / n_frames
        pmask = batch.phoneme_mask.to(mel_pred.dtype)
        n_ph = pmask.sum()
        pitch_t = self.norm_pitch(batch.pitch) * pmask
        energy_t = self.norm_energy(batch.energy) * pmask
        dur_t = torch.log(torch.clamp(batch.durations.to(mel_pred.dtype), min=1.0)) * pmask
        pitch_loss = (((preds["pitch"] - pitch_t) ** 2) * pmask).sum() / n_ph
        energy_loss = (((preds["energy"] - energy_t) ** 2) * pmask).sum() / n_ph
        duration_loss = (((preds["log_duration"] - dur_t) ** 2) * pmask).sum() / n_ph
        total = mel_loss + pitch_loss + energy_loss + duration_loss
        return {
            "mel": mel_loss,
            "pitch": pitch_loss,
            "energy": energy_loss,
            "duration": duration_loss,
            "total": total,
        }

    def synthesize(self, phonemes: list[int] | np.ndarray, reps: list[SpeakerRep]) -> MelSpectrogram:
        """Inference: encode → inject enrolled representations → predict
        prosody and durations → decode.  Deterministic."""
        schemes = [r.scheme for r in reps]
        if len(set(schemes)) != len(schemes):
            raise ValidationError("duplicate scheme in representation list")
        missing = [s for s in self.config.active_schemes if s not in schemes]
        if missing:
            raise ValidationError(f"missing representation for active scheme(s): {missing}")
        extra = [s for s in schemes if s not in self.config.active_schemes]
        if extra:
            raise ValidationError(f"representation for inactive scheme(s): {extra}")
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                ph = torch.tensor([list(phonemes)], dtype=torch.long)
                mask = torch.ones_like(ph, dtype=torch.bool)
                hidden = self.encode(ph, mask)
                rep_tensors = {
                    r.scheme: torch.from_numpy(np.asarray(r.vector, dtype=np.float32)).unsqueeze(0)
                    for r in reps
                }
                hidden = self.inject(hidden, rep_tensors, mask)
                expanded, frame_mask, _, _ = self.variance_adapt(hidden, mask, targets=None)
                mel = self.decode(expanded, frame_mask)[0].numpy().astype(np.float32)
        finally:
            self.train(was_training)
        return MelSpectrogram(mel, self.config.hop_length, self.config.sample_rate)


def inject_speaker(model: AcousticModel, hidden: torch.Tensor, reps: list[SpeakerRep]) -> torch.Tensor:
    """List-of-representations front end to :meth:`AcousticModel.inject`."""
    schemes = [r.scheme for r in reps]
    if len(set(schemes)) != len(schemes):
        raise ValidationError("duplicate scheme in representation list")
    tensors = {
        r.scheme: torch.from_numpy(np.asarray(r.vector, dtype=np.float32))
        .to(hidden.dtype)
        .unsqueeze(0)
        .expand(hidden.shape[0], REP_DIM)
        for r in reps
    }
    return model.inject(hidden, tensors)
