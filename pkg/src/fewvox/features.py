"""Acoustic feature extraction: log-mel spectrograms, frame-level F0 and
energy, and phoneme-level prosody targets.

Every operation shares one framing convention: the signal is zero-padded by
``win_length // 2`` on each side and sliced into ``ceil(n_samples / hop)``
frames of ``win_length`` samples starting at multiples of ``hop``.  Mel,
F0 and energy therefore always agree on the frame count.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .kernels import ncc_matrix


@dataclass(frozen=True)
class FeatureConfig:
    """Shared analysis parameters.

    ``fmax`` of ``None`` means Nyquist.  ``log_floor`` clips mel magnitudes
    before the log so silence maps to ``log(log_floor)`` exactly.
    """

    sample_rate: int = 22050
    n_fft: int = 1024
    win_length: int = 1024
    hop_length: int = 256
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-5
    f0_min: float = 60.0
    f0_max: float = 500.0
    voicing_threshold: float = 0.3

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValidationError("sample_rate must be positive")
        if not (0 < self.hop_length <= self.win_length <= self.n_fft):
            raise ValidationError(
                f"invalid framing config: need 0 < hop ({self.hop_length}) <= "
                f"win ({self.win_length}) <= n_fft ({self.n_fft})"
            )
        if self.n_mels < 1:
            raise ValidationError("n_mels must be >= 1")
        if not (0 < self.f0_min < self.f0_max):
            raise ValidationError("need 0 < f0_min < f0_max")

    @property
    def mel_fmax(self) -> float:
        return self.sample_rate / 2.0 if self.fmax is None else self.fmax

    def n_frames(self, n_samples: int) -> int:
        """ceil(n_samples / hop) under center-padded framing."""
        return -(-n_samples // self.hop_length)


@dataclass
class MelSpectrogram:
    """Log-magnitude mel energies, [frames, n_mels]."""

    values: np.ndarray
    hop_length: int
    sample_rate: int

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise ValidationError("mel values must be a non-empty [frames, n_mels] matrix")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("mel values must be finite")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]


@dataclass
class FrameProsody:
    """Frame-level pitch (Hz, 0 = unvoiced) and non-negative energy."""

    f0: np.ndarray
    energy: np.ndarray

    def __post_init__(self):
        if len(self.f0) != len(self.energy):
            raise ValidationError("f0 and energy must have equal frame counts")
        if np.any(self.f0 < 0) or np.any(self.energy < 0):
            raise ValidationError("f0 and energy must be non-negative")


@dataclass
class ProsodyTargets:
    """Per-phoneme pitch, energy and duration."""

    pitch: np.ndarray
    energy: np.ndarray
    duration: np.ndarray

    def __post_init__(self):
        if not (len(self.pitch) == len(self.energy) == len(self.duration)):
            raise ValidationError("prosody target sequences must have equal lengths")
        if np.any(self.pitch < 0) or np.any(self.energy < 0):
            raise ValidationError("pitch and energy targets must be non-negative")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: FeatureConfig) -> np.ndarray:
    """Triangular mel filterbank, [n_mels, n_fft // 2 + 1], peak 1."""
    n_bins = config.n_fft // 2 + 1
    fft_freqs = np.linspace(0.0, config.sample_rate / 2.0, n_bins)
    mel_points = np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.mel_fmax), config.n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bank = np.zeros((config.n_mels, n_bins))
    for m in range(config.n_mels):
        lo, center, hi = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        rising = (fft_freqs - lo) / max(center - lo, 1e-10)
        falling = (hi - fft_freqs) / max(hi - center, 1e-10)
        bank[m] = np.maximum(0.0, np.minimum(rising, falling))
    return bank


def _frame_signal(waveform: np.ndarray, config: FeatureConfig) -> np.ndarray:
    """Center-padded framing: [ceil(n / hop), win_length] float64."""
    wave = np.asarray(waveform, dtype=np.float64).reshape(-1)
    if wave.size == 0:
        raise ValidationError("empty waveform")
    win, hop = config.win_length, config.hop_length
    n_frames = config.n_frames(wave.size)
    pad_left = win // 2
    needed = (n_frames - 1) * hop + win
    pad_right = max(0, needed - (wave.size + pad_left))
    padded = np.pad(wave, (pad_left, pad_right))
    idx = np.arange(n_frames)[:, None] * hop + np.arange(win)[None, :]
    return padded[idx]


def _hann(win: int) -> np.ndarray:
    # periodic Hann window
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)


def stft_magnitude(waveform: np.ndarray, config: FeatureConfig) -> np.ndarray:
    """Magnitude STFT, [frames, n_fft // 2 + 1]."""
    frames = _frame_signal(waveform, config) * _hann(config.win_length)
    return np.abs(np.fft.rfft(frames, n=config.n_fft, axis=1))


def compute_mel(waveform: np.ndarray, config: FeatureConfig = FeatureConfig()) -> MelSpectrogram:
    """80-band log-mel spectrogram of a mono waveform."""
    mag = stft_magnitude(waveform, config)
    mel = mag @ mel_filterbank(config).T
    values = np.log(np.maximum(mel, config.log_floor)).astype(np.float32)
    return MelSpectrogram(values=values, hop_length=config.hop_length, sample_rate=config.sample_rate)


def compute_energy(waveform: np.ndarray, config: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Per-frame energy: the L2 norm of each magnitude-STFT column."""
    mag = stft_magnitude(waveform, config)
    return np.sqrt(np.einsum("ij,ij->i", mag, mag))


def extract_f0(waveform: np.ndarray, config: FeatureConfig = FeatureConfig(), use_numba: bool | None = None) -> np.ndarray:
    """Per-frame fundamental frequency in Hz; unvoiced frames are exactly 0.

    Normalized autocorrelation over the lag range implied by
    ``[f0_min, f0_max]``; a frame is voiced when its best peak exceeds
    ``voicing_threshold``.  Among near-equal peaks (>= 0.9 of the maximum)
    the smallest lag wins, which suppresses octave-down errors, and the
    winning lag is refined by parabolic interpolation.
    """
    sr = config.sample_rate
    if sr < 2 * config.f0_max:
        raise ValidationError(f"sample_rate {sr} violates Nyquist for f0_max {config.f0_max}")
    lag_min = int(np.ceil(sr / config.f0_max))
    lag_max = int(np.floor(sr / config.f0_min))
    if lag_max + 2 > config.win_length:
        raise ValidationError("win_length too short for the requested f0_min")
    frames = _frame_signal(waveform, config)
    frames = frames - frames.mean(axis=1, keepdims=True)
    ncc = ncc_matrix(frames, lag_min, lag_max, use_numba=use_numba)

    n_frames, n_lags = ncc.shape
    rows = np.arange(n_frames)
    best = ncc.max(axis=1)
    voiced = best > config.voicing_threshold
    # candidates: local maxima reaching at least 90% of the frame's peak
    # (smallest qualifying lag wins); the global argmax is always admitted
    candidate = ncc >= np.maximum(config.voicing_threshold, 0.9 * best)[:, None]
    local_max = np.zeros_like(candidate)
    local_max[:, 1:-1] = (ncc[:, 1:-1] >= ncc[:, :-2]) & (ncc[:, 1:-1] >= ncc[:, 2:])
    local_max[rows, ncc.argmax(axis=1)] = True
    candidate &= local_max
    best_idx = candidate.argmax(axis=1)

    idx = np.clip(best_idx, 1, n_lags - 2)
    y0, y1, y2 = ncc[rows, idx - 1], ncc[rows, idx], ncc[rows, idx + 1]
    denom = y0 - 2.0 * y1 + y2
    safe = np.where(np.abs(denom) > 1e-12, denom, 1.0)
    shift = np.where(np.abs(denom) > 1e-12, 0.5 * (y0 - y2) / safe, 0.0)
    shift = np.clip(shift, -0.5, 0.5)
    # interior peaks get the refined lag, boundary peaks keep the integer lag
    lag = np.where(idx == best_idx, idx + shift, best_idx) + lag_min
    f0 = np.clip(sr / lag, config.f0_min, config.f0_max)
    return np.where(voiced, f0, 0.0)


def frame_prosody(waveform: np.ndarray, config: FeatureConfig = FeatureConfig()) -> FrameProsody:
    return FrameProsody(f0=extract_f0(waveform, config), energy=compute_energy(waveform, config))


def phoneme_average(frame_values: np.ndarray, durations: np.ndarray, voiced_only: bool = False) -> np.ndarray:
    """Duration-weighted segmentation of frame values into per-phoneme means.

    With ``voiced_only`` the mean is taken over strictly positive frames
    (the pitch convention); a phoneme with no voiced frame maps to 0, as
    does a phoneme of duration 0.
    """
    values = np.asarray(frame_values, dtype=np.float64).reshape(-1)
    durs = np.asarray(durations, dtype=np.int64).reshape(-1)
    if np.any(durs < 0):
        raise ValidationError("durations must be non-negative")
    if durs.sum() != values.size:
        raise ValidationError(
            f"durations sum to {durs.sum()} but there are {values.size} frames"
        )
    out = np.zeros(durs.size)
    start = 0
    for i, d in enumerate(durs):
        seg = values[start : start + d]
        start += d
        if d == 0:
            continue
        if voiced_only:
            seg = seg[seg > 0]
            if seg.size == 0:
                continue
        out[i] = seg.mean()
    return out


def prosody_targets(
    waveform: np.ndarray, durations: np.ndarray, config: FeatureConfig = FeatureConfig()
) -> ProsodyTargets:
    """Per-phoneme pitch/energy/duration targets for acoustic-model training."""
    prosody = frame_prosody(waveform, config)
    durs = np.asarray(durations, dtype=np.int64)
    return ProsodyTargets(
        pitch=phoneme_average(prosody.f0, durs, voiced_only=True),
        energy=phoneme_average(prosody.energy, durs),
        duration=durs,
    )


class FeatureCache:
    """Optional on-disk feature store: one binary record per utterance.

    Record layout: magic ``FVFC``, uint32 ndim, uint32 dims, then the
    float32 little-endian payload.  Paths derive from the utterance id.
    """

    MAGIC = b"FVFC"

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, utt_id: str, name: str = "mel") -> Path:
        return self.root / f"{utt_id}.{name}.feat"

    def put(self, utt_id: str, array: np.ndarray, name: str = "mel") -> Path:
        arr = np.ascontiguousarray(array, dtype=np.float32)
        path = self.path(utt_id, name)
        with open(path, "wb") as f:
            f.write(self.MAGIC)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f4").tobytes())
        return path

    def get(self, utt_id: str, name: str = "mel") -> np.ndarray | None:
        path = self.path(utt_id, name)
        if not path.exists():
            return None
        return read_feature_record(path)


def read_feature_record(path: Path | str) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FeatureCache.MAGIC:
            raise ValidationError(f"{path}: not a feature record")
        (ndim,) = struct.unpack("<I", f.read(4))
        shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
        payload = f.read()
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()


def save_mel(path: Path | str, mel: MelSpectrogram) -> None:
    """Persist a mel-spectrogram with its framing header."""
    from .serial import save_blob

    header = {"hop_length": mel.hop_length, "sample_rate": mel.sample_rate}
    save_blob(path, "mel", header, {"values": mel.values.astype(np.float32)})


def load_mel(path: Path | str) -> MelSpectrogram:
    from .serial import expect_kind, load_blob

    kind, header, arrays = load_blob(path)
    expect_kind(path, "mel", kind)
    return MelSpectrogram(arrays["values"], header["hop_length"], header["sample_rate"])
