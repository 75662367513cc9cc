"""Pretrained speaker encoders and enrollment.

Two encoder families share the 128-d representation interface: classifier
encoders trained on speaker identification (mean pooling = d-vector variant,
mean+std statistics pooling = x-vector variant) and the target-speaker
encoder of a small voice-conversion autoencoder.  Pretrained encoders are
frozen before use; they are never finetuned with the TTS model.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .corpus import Corpus, Utterance
from .errors import ValidationError
from .features import FeatureCache, FeatureConfig, MelSpectrogram, compute_mel
from .serial import expect_kind, load_blob, save_blob

REP_DIM = 128
SCHEMES = ("dvec", "xvec", "vc", "lookup", "gst")
PRETRAINED_SCHEMES = ("dvec", "xvec", "vc")
JOINT_SCHEMES = ("lookup", "gst")
_POOLINGS = ("mean", "mean_std")


@dataclass(frozen=True)
class SpeakerRep:
    vector: np.ndarray
    scheme: str

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValidationError(f"unknown scheme: {self.scheme}")
        vec = np.asarray(self.vector)
        if vec.shape != (REP_DIM,):
            raise ValidationError(f"speaker representation must be {REP_DIM}-d, got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise ValidationError("speaker representation has non-finite entries")


def mel_to_tensor(mel: MelSpectrogram) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(mel.values, dtype=np.float32))


def masked_pool(x: torch.Tensor, mask: torch.Tensor, pooling: str) -> torch.Tensor:
    """Pool [B, T, C] over time under a [B, T] validity mask.

    Statistics use the population std so that duplicating the frame axis
    leaves the pooled vector unchanged.
    """
    m = mask.unsqueeze(-1).to(x.dtype)
    denom = m.sum(dim=1).clamp(min=1.0)
    mean = (x * m).sum(dim=1) / denom
    if pooling == "mean":
        return mean
    sq = (x * x * m).sum(dim=1) / denom
    var = (sq - mean * mean).clamp(min=0.0)
    return torch.cat([mean, torch.sqrt(var + 1e-8)], dim=-1)


class MelPoolEncoder(nn.Module):
    """Frame-local MLP + temporal pooling + linear projection to 128.

    Keeping the pre-pooling network frame-local (no temporal mixing) makes
    the embedding exactly invariant to repeating the mel along time.
    """

    def __init__(self, n_mels: int = 80, hidden: int = 256, pooling: str = "mean") -> None:
        super().__init__()
        if pooling not in _POOLINGS:
            raise ValidationError(f"pooling must be one of {_POOLINGS}")
        self.pooling = pooling
        self.frame_net = nn.Sequential(
            nn.LayerNorm(n_mels),
            nn.Linear(n_mels, hidden),
            nn.ReLU(),
            nn.Linear(hidden, hidden),
            nn.ReLU(),
        )
        pooled = hidden * (2 if pooling == "mean_std" else 1)
        self.proj = nn.Linear(pooled, REP_DIM)

    def forward(self, mels: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        # mels: [B, T, n_mels], mask: [B, T] bool
        h = self.frame_net(mels)
        return self.proj(masked_pool(h, mask, self.pooling))


class _ClassifierNet(nn.Module):
    def __init__(self, n_mels: int, hidden: int, pooling: str, n_speakers: int) -> None:
        super().__init__()
        self.encoder = MelPoolEncoder(n_mels, hidden, pooling)
        self.head = nn.Linear(REP_DIM, n_speakers)

    def forward(self, mels: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder(mels, mask))


@dataclass
class SpeakerEncoder:
    scheme: str
    pooling: str
    module: nn.Module
    arch: dict
    frozen: bool = False

    def freeze(self) -> "SpeakerEncoder":
        self.module.eval()
        for p in self.module.parameters():
            p.requires_grad_(False)
        self.frozen = True
        return self


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 400
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    pooling: str = "mean"
    hidden: int = 256
    crop_frames: int = 96

    def __post_init__(self) -> None:
        if self.steps <= 0 or self.batch_size <= 0 or self.crop_frames <= 0:
            raise ValidationError("steps, batch_size, and crop_frames must be positive")
        if self.pooling not in _POOLINGS:
            raise ValidationError(f"pooling must be one of {_POOLINGS}")


def corpus_mels(
    corpus: Corpus,
    config: FeatureConfig,
    cache: FeatureCache | None = None,
) -> dict[str, MelSpectrogram]:
    """Mel-spectrograms for every utterance, optionally disk-cached."""
    out: dict[str, MelSpectrogram] = {}
    for utt in corpus.utterances:
        if cache is not None:
            cached = cache.get(utt.id, "mel")
            if cached is not None:
                out[utt.id] = MelSpectrogram(cached, config.hop_length, config.sample_rate)
                continue
        mel = compute_mel(utt.waveform, config)
        if cache is not None:
            cache.put(utt.id, mel.values, "mel")
        out[utt.id] = mel
    return out


def _crop(values: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """Random fixed-length crop; shorter inputs are tiled."""
    if len(values) < length:
        reps = -(-length // len(values))
        values = np.concatenate([values] * reps, axis=0)
    start = int(rng.integers(0, len(values) - length + 1))
    return values[start : start + length]


def _batch_tensor(mels: list[np.ndarray]) -> tuple[torch.Tensor, torch.Tensor]:
    arr = np.stack(mels).astype(np.float32)
    x = torch.from_numpy(arr)
    mask = torch.ones(x.shape[:2], dtype=torch.bool)
    return x, mask


def pretrain_classifier(
    corpus: Corpus,
    cfg: PretrainConfig,
    features_cfg: FeatureConfig | None = None,
    mels: dict[str, MelSpectrogram] | None = None,
) -> tuple[SpeakerEncoder, list[float], float]:
    """Train a speaker-classification encoder.

    Returns the frozen encoder, the loss curve, and the final full-utterance
    training accuracy.
    """
    features_cfg = features_cfg or FeatureConfig()
    speakers = corpus.speakers
    if len(speakers) < 2:
        raise ValidationError("classifier pretraining needs at least 2 speakers")
    spk_index = {s: i for i, s in enumerate(speakers)}
    mels = mels or corpus_mels(corpus, features_cfg)
    utts = list(corpus.utterances)
    torch.manual_seed(cfg.seed)
    net = _ClassifierNet(features_cfg.n_mels, cfg.hidden, cfg.pooling, len(speakers))
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    losses: list[float] = []
    for _ in range(cfg.steps):
        idx = rng.integers(0, len(utts), size=cfg.batch_size)
        crops = [_crop(mels[utts[i].id].values, cfg.crop_frames, rng) for i in idx]
        x, mask = _batch_tensor(crops)
        y = torch.tensor([spk_index[utts[i].speaker_id] for i in idx])
        opt.zero_grad()
        loss = nn.functional.cross_entropy(net(x, mask), y)
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    net.eval()
    correct = 0
    with torch.no_grad():
        for utt in utts:
            x = mel_to_tensor(mels[utt.id]).unsqueeze(0)
            mask = torch.ones(x.shape[:2], dtype=torch.bool)
            correct += int(net(x, mask).argmax(dim=-1).item() == spk_index[utt.speaker_id])
    accuracy = correct / len(utts)
    scheme = "dvec" if cfg.pooling == "mean" else "xvec"
    arch = {"n_mels": features_cfg.n_mels, "hidden": cfg.hidden, "pooling": cfg.pooling}
    return SpeakerEncoder(scheme, cfg.pooling, net.encoder, arch).freeze(), losses, accuracy


class AdaIN(nn.Module):
    """Adaptive instance normalization: per-channel whitening, then an
    affine transform predicted from the speaker vector."""

    def __init__(self, channels: int, rep_dim: int = REP_DIM) -> None:
        super().__init__()
        self.gamma = nn.Linear(rep_dim, channels)
        self.beta = nn.Linear(rep_dim, channels)
        nn.init.zeros_(self.gamma.weight)
        nn.init.ones_(self.gamma.bias)
        nn.init.zeros_(self.beta.weight)
        nn.init.zeros_(self.beta.bias)

    def forward(self, x: torch.Tensor, spk: torch.Tensor) -> torch.Tensor:
        # x: [B, C, T], spk: [B, rep_dim]
        mean = x.mean(dim=2, keepdim=True)
        std = torch.sqrt(x.var(dim=2, keepdim=True, unbiased=False) + 1e-5)
        xhat = (x - mean) / std
        return self.gamma(spk).unsqueeze(-1) * xhat + self.beta(spk).unsqueeze(-1)


class VCModel(nn.Module):
    """Small AdaIN voice-conversion autoencoder.

    The content encoder squeezes the mel through an instance-normalized
    bottleneck (speaker statistics removed); the decoder re-injects speaker
    identity from the 128-d speaker branch via AdaIN, so reconstruction
    forces that branch to carry the speaker.
    """

    def __init__(self, n_mels: int = 80, content_dim: int = 4, hidden: int = 128) -> None:
        super().__init__()
        self.content_dim = content_dim
        self.content_encoder = nn.Sequential(
            nn.Conv1d(n_mels, hidden, 5, padding=2),
            nn.ReLU(),
            nn.InstanceNorm1d(hidden, affine=False),
            nn.Conv1d(hidden, hidden, 5, padding=2),
            nn.ReLU(),
            nn.InstanceNorm1d(hidden, affine=False),
            nn.Conv1d(hidden, content_dim, 5, padding=2),
            nn.InstanceNorm1d(content_dim, affine=False),
        )
        self.speaker_encoder = MelPoolEncoder(n_mels, hidden, pooling="mean")
        self.dec_in = nn.Conv1d(content_dim, hidden, 5, padding=2)
        self.ada1 = AdaIN(hidden)
        self.dec_mid = nn.Conv1d(hidden, hidden, 5, padding=2)
        self.ada2 = AdaIN(hidden)
        self.dec_out = nn.Conv1d(hidden, n_mels, 5, padding=2)

    def encode_content(self, mels: torch.Tensor) -> torch.Tensor:
        return self.content_encoder(mels.transpose(1, 2))

    def encode_speaker(self, mels: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return self.speaker_encoder(mels, mask)

    def decode(self, content: torch.Tensor, spk: torch.Tensor) -> torch.Tensor:
        h = torch.relu(self.ada1(self.dec_in(content), spk))
        h = torch.relu(self.ada2(self.dec_mid(h), spk))
        return self.dec_out(h).transpose(1, 2)  # [B, T, n_mels]

    def forward(self, mels: torch.Tensor, spk_mels: torch.Tensor, spk_mask: torch.Tensor) -> torch.Tensor:
        spk = self.encode_speaker(spk_mels, spk_mask)
        return self.decode(self.encode_content(mels), spk)


@dataclass(frozen=True)
class VCConfig:
    steps: int = 600
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    content_dim: int = 4
    hidden: int = 128
    crop_frames: int = 96

    def __post_init__(self) -> None:
        if self.steps <= 0 or self.batch_size <= 0:
            raise ValidationError("steps and batch_size must be positive")


def train_vc_model(
    corpus: Corpus,
    cfg: VCConfig,
    features_cfg: FeatureConfig | None = None,
    mels: dict[str, MelSpectrogram] | None = None,
) -> tuple[VCModel, list[float]]:
    """Self-reconstruction training.  The speaker branch sees a different
    utterance of the same speaker, so it cannot shortcut through content."""
    features_cfg = features_cfg or FeatureConfig()
    if len(corpus.speakers) < 2:
        raise ValidationError("VC pretraining needs at least 2 speakers")
    mels = mels or corpus_mels(corpus, features_cfg)
    by_speaker = corpus.by_speaker()
    utts = list(corpus.utterances)
    torch.manual_seed(cfg.seed)
    model = VCModel(features_cfg.n_mels, cfg.content_dim, cfg.hidden)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    losses: list[float] = []
    for _ in range(cfg.steps):
        idx = rng.integers(0, len(utts), size=cfg.batch_size)
        targets, spk_refs = [], []
        for i in idx:
            utt = utts[i]
            targets.append(_crop(mels[utt.id].values, cfg.crop_frames, rng))
            peers = by_speaker[utt.speaker_id]
            other = peers[int(rng.integers(0, len(peers)))]
            spk_refs.append(_crop(mels[other.id].values, cfg.crop_frames, rng))
        x, _ = _batch_tensor(targets)
        s, smask = _batch_tensor(spk_refs)
        opt.zero_grad()
        recon = model(x, s, smask)
        loss = torch.mean(torch.abs(recon - x))
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    return model, losses


def pretrain_vc(
    corpus: Corpus,
    cfg: VCConfig,
    features_cfg: FeatureConfig | None = None,
    mels: dict[str, MelSpectrogram] | None = None,
) -> tuple[SpeakerEncoder, list[float]]:
    """Train the VC autoencoder and return its frozen target-speaker encoder."""
    features_cfg = features_cfg or FeatureConfig()
    model, losses = train_vc_model(corpus, cfg, features_cfg, mels)
    arch = {"n_mels": features_cfg.n_mels, "hidden": cfg.hidden, "pooling": "mean"}
    return SpeakerEncoder("vc", "mean", model.speaker_encoder, arch).freeze(), losses


def embed(encoder: SpeakerEncoder, mel: MelSpectrogram) -> SpeakerRep:
    """128-d representation of one utterance."""
    if not encoder.frozen:
        raise ValidationError("encoder must be frozen before embedding")
    if mel.n_frames == 0:
        raise ValidationError("cannot embed an empty mel")
    with torch.no_grad():
        x = mel_to_tensor(mel).unsqueeze(0)
        mask = torch.ones(x.shape[:2], dtype=torch.bool)
        vec = encoder.module(x, mask)[0].numpy().copy()
    return SpeakerRep(vec, encoder.scheme)


def embed_many(encoder: SpeakerEncoder, mels: list[MelSpectrogram]) -> np.ndarray:
    """Batch embedding extraction (for evaluation and visualization)."""
    return np.stack([embed(encoder, m).vector for m in mels])


def mean_embedding(vectors: np.ndarray) -> np.ndarray:
    """Order-canonical mean over embedding rows.

    Rows are sorted lexicographically before summing so enrollment treats its
    references as a set: permuting them yields bit-identical results.
    """
    if vectors.ndim != 2:
        raise ValidationError("expected a [n, dim] embedding matrix")
    order = np.lexsort(vectors.T[::-1])
    return vectors[order].mean(axis=0)


def enroll(encoder: SpeakerEncoder, mels: list[MelSpectrogram]) -> SpeakerRep:
    """Enrollment: arithmetic mean of per-utterance embeddings (no renorm)."""
    if not mels:
        raise ValidationError("enrollment needs at least one utterance")
    return SpeakerRep(mean_embedding(embed_many(encoder, mels)), encoder.scheme)


def state_checksum(module: nn.Module) -> str:
    """SHA-256 over the parameter/buffer bytes, in state-dict order."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def save_encoder(path: Path | str, encoder: SpeakerEncoder) -> None:
    if not encoder.frozen:
        raise ValidationError("refusing to checkpoint an unfrozen encoder")
    header = {
        "scheme": encoder.scheme,
        "dim": REP_DIM,
        "pooling": encoder.pooling,
        "arch": encoder.arch,
    }
    arrays = {k: v.detach().cpu().numpy() for k, v in encoder.module.state_dict().items()}
    save_blob(path, "speaker-encoder", header, arrays)


def load_encoder(path: Path | str) -> SpeakerEncoder:
    kind, header, arrays = load_blob(path)
    expect_kind(path, "speaker-encoder", kind)
    if header.get("dim") != REP_DIM:
        raise ValidationError(f"{path}: encoder dim {header.get('dim')} != {REP_DIM}")
    arch = header["arch"]
    module = MelPoolEncoder(arch["n_mels"], arch["hidden"], arch["pooling"])
    state = {k: torch.from_numpy(v) for k, v in arrays.items()}
    module.load_state_dict(state)
    return SpeakerEncoder(header["scheme"], header["pooling"], module, arch).freeze()
