"""Jointly-optimized speaker representations: lookup table and global style tokens.

Both live inside the TTS model and receive gradients from the mel loss alone;
neither introduces an auxiliary loss term.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .encoders import REP_DIM, SpeakerRep, mean_embedding
from .errors import ValidationError
from .features import MelSpectrogram


class EmbeddingTable(nn.Module):
    """Trainable per-speaker embedding, usable only for training speakers."""

    def __init__(self, speakers: tuple[str, ...], dim: int = REP_DIM) -> None:
        super().__init__()
        if not speakers:
            raise ValidationError("embedding table needs at least one speaker")
        self.speakers = tuple(speakers)
        self.index = {s: i for i, s in enumerate(self.speakers)}
        self.table = nn.Embedding(len(self.speakers), dim)

    def indices(self, speaker_ids: list[str]) -> torch.Tensor:
        try:
            return torch.tensor([self.index[s] for s in speaker_ids], dtype=torch.long)
        except KeyError as exc:
            raise ValidationError(f"unknown speaker: {exc.args[0]}") from exc

    def forward(self, speaker_ids: list[str]) -> torch.Tensor:
        return self.table(self.indices(speaker_ids))

    def lookup(self, speaker_id: str) -> SpeakerRep:
        if speaker_id not in self.index:
            raise ValidationError(f"unknown speaker: {speaker_id}")
        with torch.no_grad():
            row = self.table.weight[self.index[speaker_id]].numpy().copy()
        return SpeakerRep(row, "lookup")


class GSTModule(nn.Module):
    """Reference encoder + style-token attention.

    The reference encoder is a strided conv stack over the mel followed by a
    GRU whose state at the last valid step is the query; multi-head attention
    over a tanh-squashed token bank yields the 128-d style vector.  Conv
    layers carry no bias and activations are re-masked to each item's
    downsampled length after every layer, so appended zero padding cannot
    perturb valid positions (masking invariance) and a batched pass matches
    the single-utterance pass exactly.
    """

    _CHANNELS = (16, 32, 32, 64)

    def __init__(
        self,
        n_mels: int = 80,
        n_tokens: int = 10,
        n_heads: int = 4,
        ref_dim: int = REP_DIM,
    ) -> None:
        super().__init__()
        if REP_DIM % n_heads != 0:
            raise ValidationError(f"n_heads must divide {REP_DIM}")
        if n_tokens < 1:
            raise ValidationError("n_tokens must be >= 1")
        self.n_tokens = n_tokens
        self.n_heads = n_heads
        self.head_dim = REP_DIM // n_heads
        convs = []
        c_in = 1
        for c_out in self._CHANNELS:
            convs.append(nn.Conv2d(c_in, c_out, kernel_size=3, stride=2, padding=1, bias=False))
            c_in = c_out
        self.convs = nn.ModuleList(convs)
        freq_out = n_mels
        for _ in self._CHANNELS:
            freq_out = (freq_out + 1) // 2
        self.gru = nn.GRU(self._CHANNELS[-1] * freq_out, ref_dim, batch_first=True)
        self.tokens = nn.Parameter(torch.randn(n_tokens, self.head_dim) * 0.5)
        self.query_proj = nn.Linear(ref_dim, REP_DIM)
        self.key_proj = nn.Linear(self.head_dim, REP_DIM)
        self.value_proj = nn.Linear(self.head_dim, REP_DIM)

    def _downsampled_lengths(self, lengths: torch.Tensor) -> torch.Tensor:
        out = lengths
        for _ in self._CHANNELS:
            out = (out + 1) // 2
        return out

    def forward(
        self,
        mels: torch.Tensor,
        lengths: torch.Tensor,
        return_weights: bool = False,
    ) -> torch.Tensor | tuple[torch.Tensor, torch.Tensor]:
        # mels: [B, T, n_mels] zero-padded, lengths: [B]
        if mels.dim() != 3 or mels.shape[1] == 0:
            raise ValidationError("GST input must be a non-empty [B, T, n_mels] batch")
        b = mels.shape[0]
        h = mels.unsqueeze(1)  # [B, 1, T, F]
        lens = lengths
        for conv in self.convs:
            h = torch.relu(conv(h))
            lens = (lens + 1) // 2
            tmask = torch.arange(h.shape[2], device=h.device).unsqueeze(0) < lens.unsqueeze(1)
            h = h * tmask[:, None, :, None].to(h.dtype)
        h = h.permute(0, 2, 1, 3).reshape(b, h.shape[2], -1)
        out, _ = self.gru(h)
        idx = (self._downsampled_lengths(lengths) - 1).clamp(min=0)
        ref = out[torch.arange(b), idx]  # [B, ref_dim]
        squashed = torch.tanh(self.tokens)  # [n_tokens, head_dim]
        q = self.query_proj(ref).view(b, self.n_heads, self.head_dim)
        k = self.key_proj(squashed).view(self.n_tokens, self.n_heads, self.head_dim)
        v = self.value_proj(squashed).view(self.n_tokens, self.n_heads, self.head_dim)
        scores = torch.einsum("bhd,thd->bht", q, k) / (self.head_dim**0.5)
        weights = torch.softmax(scores, dim=-1)  # [B, heads, n_tokens]
        style = torch.einsum("bht,thd->bhd", weights, v).reshape(b, REP_DIM)
        if return_weights:
            return style, weights
        return style

    def value_basis(self) -> torch.Tensor:
        """Per-head value vectors embedded at their output slots: the style
        vector is always a combination of these [n_heads * n_tokens, 128]."""
        with torch.no_grad():
            v = self.value_proj(torch.tanh(self.tokens)).view(self.n_tokens, self.n_heads, self.head_dim)
        basis = torch.zeros(self.n_heads * self.n_tokens, REP_DIM)
        for h in range(self.n_heads):
            for t in range(self.n_tokens):
                basis[h * self.n_tokens + t, h * self.head_dim : (h + 1) * self.head_dim] = v[t, h]
        return basis


def gst_forward(gst: GSTModule, mel: MelSpectrogram, return_weights: bool = False):
    """Single-utterance style extraction returning a SpeakerRep."""
    if mel.n_frames == 0:
        raise ValidationError("cannot extract style from an empty mel")
    x = torch.from_numpy(np.ascontiguousarray(mel.values, dtype=np.float32)).unsqueeze(0)
    lengths = torch.tensor([mel.n_frames])
    with torch.no_grad():
        if return_weights:
            style, weights = gst(x, lengths, return_weights=True)
            return SpeakerRep(style[0].numpy().copy(), "gst"), weights[0].numpy().copy()
        style = gst(x, lengths)
    return SpeakerRep(style[0].numpy().copy(), "gst")


def gst_enroll(gst: GSTModule, mels: list[MelSpectrogram]) -> SpeakerRep:
    """Enrollment for GST mirrors pretrained-encoder enrollment: the mean of
    per-utterance style vectors."""
    if not mels:
        raise ValidationError("enrollment needs at least one utterance")
    vecs = np.stack([gst_forward(gst, m).vector for m in mels])
    return SpeakerRep(mean_embedding(vecs), "gst")
