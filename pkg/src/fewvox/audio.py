"""Waveform plumbing: mono PCM WAV files and Griffin-Lim mel inversion."""

from __future__ import annotations

import wave as wave_module
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .features import FeatureConfig, MelSpectrogram, _frame_signal, _hann, mel_filterbank


def save_wav(path: Path | str, waveform: np.ndarray, sample_rate: int) -> None:
    """Write a mono 16-bit PCM WAV."""
    samples = np.asarray(waveform, dtype=np.float64).reshape(-1)
    pcm = np.round(np.clip(samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave_module.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(sample_rate)
        f.writeframes(pcm.tobytes())


def load_wav(path: Path | str) -> tuple[np.ndarray, int]:
    """Read a mono 16-bit PCM WAV into float64 samples in [-1, 1]."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"audio file not found: {path}")
    with wave_module.open(str(path), "rb") as f:
        if f.getnchannels() != 1 or f.getsampwidth() != 2:
            raise ValidationError(f"{path}: expected mono 16-bit PCM")
        sr = f.getframerate()
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return samples, sr


def _istft(spec: np.ndarray, config: FeatureConfig, out_len: int) -> np.ndarray:
    """Invert a complex STFT produced under the package framing convention.

    Overlap-add with the analysis Hann window and window-square
    normalization, then the center padding is stripped.
    """
    win, hop = config.win_length, config.hop_length
    window = _hann(win)
    frames = np.fft.irfft(spec, n=config.n_fft, axis=1)[:, :win]
    n_frames = spec.shape[0]
    total = (n_frames - 1) * hop + win
    signal = np.zeros(total)
    weight = np.zeros(total)
    wsq = window * window
    for t in range(n_frames):
        start = t * hop
        signal[start : start + win] += frames[t] * window
        weight[start : start + win] += wsq
    signal = np.where(weight > 1e-10, signal / np.maximum(weight, 1e-10), 0.0)
    pad_left = win // 2
    return signal[pad_left : pad_left + out_len]


def _stft_complex(waveform: np.ndarray, config: FeatureConfig) -> np.ndarray:
    frames = _frame_signal(waveform, config) * _hann(config.win_length)
    return np.fft.rfft(frames, n=config.n_fft, axis=1)


def mel_to_linear(mel: MelSpectrogram, config: FeatureConfig) -> np.ndarray:
    """Approximate linear magnitude spectrogram via filterbank pseudo-inverse."""
    mel_mag = np.exp(mel.values.astype(np.float64))
    inv = np.linalg.pinv(mel_filterbank(config))  # [n_bins, n_mels]
    return np.maximum(mel_mag @ inv.T, 0.0)


def griffin_lim(mel: MelSpectrogram, config: FeatureConfig, n_iters: int = 60) -> np.ndarray:
    """Reconstruct a waveform from a log-mel spectrogram.

    Zero-phase initialization, so the result is deterministic.  ``n_iters=0``
    returns the plain zero-phase inversion.
    """
    if mel.hop_length != config.hop_length or mel.sample_rate != config.sample_rate:
        raise ValidationError(
            f"mel header (hop={mel.hop_length}, sr={mel.sample_rate}) does not match "
            f"config (hop={config.hop_length}, sr={config.sample_rate})"
        )
    if mel.n_mels != config.n_mels:
        raise ValidationError(f"mel has {mel.n_mels} bands, config expects {config.n_mels}")
    if n_iters < 0:
        raise ValidationError("n_iters must be >= 0")
    magnitude = mel_to_linear(mel, config)  # [T, n_bins]
    out_len = mel.n_frames * config.hop_length
    spec = magnitude.astype(np.complex128)  # zero phase
    waveform = _istft(spec, config, out_len)
    for _ in range(n_iters):
        rebuilt = _stft_complex(waveform, config)
        mag = np.abs(rebuilt)
        phase = np.where(mag > 1e-12, rebuilt / np.maximum(mag, 1e-12), 1.0 + 0.0j)
        waveform = _istft(magnitude * phase, config, out_len)
    peak = np.abs(waveform).max()
    if peak > 1.0:
        waveform = waveform / peak
    return waveform
