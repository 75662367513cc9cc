"""Dataset plumbing: manifests, few-shot splits, and a synthetic mini-corpus.

The synthetic generator replaces proprietary recordings with parametric
harmonic voices.  Each speaker gets a base F0 (evenly spaced over a
configured range), a spectral tilt, a formant-shift factor, and a
breathiness level, so speaker classification and F0 estimation are both
nontrivial and verifiable against known ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import load_wav, save_wav
from .errors import ValidationError
from .features import FeatureConfig

# Phoneme inventory for synthetic corpora.  Voiced phonemes are harmonic,
# unvoiced ones are shaped noise, "sil" is digital silence.
VOCAB: tuple[str, ...] = ("sil", "aa", "eh", "iy", "ow", "uw", "m", "s", "sh", "f")
_VOICED = ("aa", "eh", "iy", "ow", "uw", "m")
_UNVOICED = ("s", "sh", "f")

# (F1, F2) centre frequencies in Hz, scaled per speaker by a formant shift.
_FORMANTS = {
    "aa": (730.0, 1090.0),
    "eh": (530.0, 1840.0),
    "iy": (270.0, 2290.0),
    "ow": (570.0, 840.0),
    "uw": (300.0, 870.0),
    "m": (250.0, 1200.0),
}
_N_HARMONICS = 12
_FADE_SECONDS = 0.005


@dataclass(frozen=True)
class Utterance:
    id: str
    speaker_id: str
    waveform: np.ndarray  # [n_samples] float in [-1, 1]
    sample_rate: int
    phonemes: tuple[int, ...]
    durations: tuple[int, ...]  # frames per phoneme
    audio_path: Path

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ValidationError(f"{self.id}: sample_rate must be positive")
        if len(self.phonemes) != len(self.durations):
            raise ValidationError(
                f"{self.id}: {len(self.phonemes)} phonemes vs {len(self.durations)} durations"
            )
        if any(d < 0 for d in self.durations):
            raise ValidationError(f"{self.id}: negative duration")

    @property
    def n_frames(self) -> int:
        return int(sum(self.durations))


@dataclass(frozen=True)
class Corpus:
    utterances: tuple[Utterance, ...]
    phoneme_vocab: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.utterances:
            raise ValidationError("empty corpus")
        seen_ids = set()
        for utt in self.utterances:
            if utt.id in seen_ids:
                raise ValidationError(f"duplicate utterance id: {utt.id}")
            seen_ids.add(utt.id)
            if any(not 0 <= p < len(self.phoneme_vocab) for p in utt.phonemes):
                raise ValidationError(f"{utt.id}: phoneme id outside vocabulary")

    @property
    def speakers(self) -> tuple[str, ...]:
        return tuple(sorted({u.speaker_id for u in self.utterances}))

    def by_speaker(self) -> dict[str, list[Utterance]]:
        out: dict[str, list[Utterance]] = {s: [] for s in self.speakers}
        for utt in self.utterances:
            out[utt.speaker_id].append(utt)
        return out

    def subset(self, utt_ids: set[str]) -> "Corpus":
        kept = tuple(u for u in self.utterances if u.id in utt_ids)
        return Corpus(kept, self.phoneme_vocab)


def _vocab_path(manifest_path: Path) -> Path:
    return manifest_path.with_suffix(".vocab")


def load_manifest(path: Path | str, config: FeatureConfig | None = None) -> Corpus:
    """Load a corpus from a manifest file and its vocabulary sidecar.

    Every row is validated against the duration/frame invariant using the
    configured hop size (default feature config when none is given).
    """
    config = config or FeatureConfig()
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"manifest not found: {path}")
    vocab_file = _vocab_path(path)
    if not vocab_file.exists():
        raise ValidationError(f"vocabulary sidecar not found: {vocab_file}")
    vocab = tuple(
        line.strip() for line in vocab_file.read_text(encoding="utf-8").splitlines() if line.strip()
    )
    utterances: list[Utterance] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split("|")
        if len(parts) != 5:
            raise ValidationError(f"{path}:{lineno}: malformed row (expected 5 fields)")
        utt_id, speaker_id, audio_rel, phoneme_str, duration_str = parts
        try:
            phonemes = tuple(int(p) for p in phoneme_str.split())
            durations = tuple(int(d) for d in duration_str.split())
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: malformed row ({exc})") from exc
        audio_path = (path.parent / audio_rel).resolve()
        waveform, sr = load_wav(audio_path)
        utt = Utterance(utt_id, speaker_id, waveform, sr, phonemes, durations, audio_path)
        n_frames = config.n_frames(len(waveform))
        if utt.n_frames != n_frames:
            raise ValidationError(
                f"{utt_id}: durations sum to {utt.n_frames} but audio spans "
                f"{n_frames} frames at hop {config.hop_length}"
            )
        utterances.append(utt)
    if not utterances:
        raise ValidationError(f"{path}: empty corpus")
    utterances.sort(key=lambda u: u.id)
    return Corpus(tuple(utterances), vocab)


def save_manifest(corpus: Corpus, path: Path | str) -> None:
    """Write manifest + vocabulary sidecar.  Audio paths are stored relative
    to the manifest's directory when possible."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for utt in sorted(corpus.utterances, key=lambda u: u.id):
        try:
            rel = utt.audio_path.relative_to(path.parent.resolve())
        except ValueError:
            rel = utt.audio_path
        rows.append(
            "|".join(
                [
                    utt.id,
                    utt.speaker_id,
                    rel.as_posix(),
                    " ".join(str(p) for p in utt.phonemes),
                    " ".join(str(d) for d in utt.durations),
                ]
            )
        )
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    _vocab_path(path).write_text("\n".join(corpus.phoneme_vocab) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class SyntheticSpec:
    n_speakers: int
    utts_per_speaker: int
    seed: int = 0
    sample_rate: int = 22050
    hop_length: int = 256
    f0_range: tuple[float, float] = (100.0, 280.0)
    parallel: bool = False  # share phoneme/duration plans across speakers

    def __post_init__(self) -> None:
        if self.n_speakers < 2:
            raise ValidationError("n_speakers must be >= 2")
        if self.utts_per_speaker < 2:
            raise ValidationError("utts_per_speaker must be >= 2")
        if self.sample_rate <= 0 or self.hop_length <= 0:
            raise ValidationError("sample_rate and hop must be positive")
        lo, hi = self.f0_range
        if not 0 < lo < hi:
            raise ValidationError("f0_range must be an increasing positive pair")

    @property
    def f0_separation(self) -> float:
        """Base-F0 gap between adjacent synthetic speakers."""
        lo, hi = self.f0_range
        return (hi - lo) / max(self.n_speakers - 1, 1)


def synthetic_speaker_f0(spec: SyntheticSpec) -> np.ndarray:
    """Ground-truth base F0 per speaker: evenly spaced over ``f0_range``."""
    lo, hi = spec.f0_range
    return np.linspace(lo, hi, spec.n_speakers)


@dataclass(frozen=True)
class _Voice:
    base_f0: float
    tilt: float            # per-harmonic amplitude decay
    formant_shift: float   # scales F1/F2 targets
    breathiness: float     # noise floor mixed into voiced phonemes


def _speaker_voice(spec: SyntheticSpec, index: int) -> _Voice:
    rng = np.random.default_rng([spec.seed, 1000 + index])
    return _Voice(
        base_f0=float(synthetic_speaker_f0(spec)[index]),
        tilt=float(rng.uniform(0.72, 0.92)),
        formant_shift=float(rng.uniform(0.88, 1.12)),
        breathiness=float(rng.uniform(0.005, 0.03)),
    )


def _formant_gain(freq: np.ndarray, symbol: str, shift: float) -> np.ndarray:
    f1, f2 = _FORMANTS[symbol]
    f1, f2 = f1 * shift, f2 * shift
    gain = 0.15
    gain = gain + 1.0 * np.exp(-(((freq - f1) / 130.0) ** 2))
    gain = gain + 0.7 * np.exp(-(((freq - f2) / 220.0) ** 2))
    return gain


def _fade(segment: np.ndarray, sr: int) -> np.ndarray:
    n = min(int(_FADE_SECONDS * sr), len(segment) // 2)
    if n > 0:
        ramp = np.linspace(0.0, 1.0, n)
        segment[:n] *= ramp
        segment[-n:] *= ramp[::-1]
    return segment


def _voiced_segment(
    n: int, symbol: str, voice: _Voice, spec: SyntheticSpec, rng: np.random.Generator
) -> np.ndarray:
    sr = spec.sample_rate
    t = np.arange(n) / sr
    intonation = 2.0 ** rng.uniform(-0.06, 0.06)
    wobble = 1.0 + 0.03 * np.sin(2.0 * np.pi * rng.uniform(1.5, 4.0) * t + rng.uniform(0, 2 * np.pi))
    f0 = voice.base_f0 * intonation * wobble
    phase = 2.0 * np.pi * np.cumsum(f0) / sr
    mean_f0 = float(f0.mean())
    harmonics = np.arange(1, _N_HARMONICS + 1)
    amps = voice.tilt ** (harmonics - 1.0)
    amps = amps * _formant_gain(harmonics * mean_f0, symbol, voice.formant_shift)
    segment = np.zeros(n)
    for h, amp in zip(harmonics, amps):
        segment += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    segment /= np.abs(segment).max() + 1e-9
    if symbol == "m":
        segment *= 0.5
    segment += voice.breathiness * rng.standard_normal(n)
    return _fade(segment, sr)


def _unvoiced_segment(n: int, symbol: str, spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    noise = rng.standard_normal(n + 8)
    if symbol == "s":
        noise = np.diff(noise)  # first difference: high-frequency emphasis
    elif symbol == "sh":
        noise = np.convolve(np.diff(noise), np.ones(3) / 3.0, mode="same")
    else:  # "f": gentle low-pass
        noise = np.convolve(noise, np.ones(5) / 5.0, mode="same")
    segment = 0.28 * noise[:n] / (np.abs(noise[:n]).max() + 1e-9)
    return _fade(segment, spec.sample_rate)


@dataclass(frozen=True)
class _Plan:
    symbols: tuple[str, ...]
    frames: tuple[int, ...]


def _draw_plan(rng: np.random.Generator) -> _Plan:
    """Phoneme sequence and per-phoneme frame counts for one utterance."""
    n_core = int(rng.integers(6, 13))
    symbols = ["sil"]
    for _ in range(n_core):
        pool = _VOICED if rng.random() < 0.7 else _UNVOICED
        symbols.append(pool[int(rng.integers(len(pool)))])
    symbols.append("sil")
    frames = []
    for symbol in symbols:
        if symbol == "sil":
            frames.append(int(rng.integers(2, 6)))
        elif symbol in _VOICED:
            frames.append(int(rng.integers(5, 15)))
        else:
            frames.append(int(rng.integers(3, 9)))
    return _Plan(tuple(symbols), tuple(frames))


def _gen_utterance(
    spec: SyntheticSpec,
    voice: _Voice,
    rng: np.random.Generator,
    plan: _Plan | None = None,
) -> tuple[np.ndarray, tuple[int, ...], tuple[int, ...]]:
    if plan is None:
        plan = _draw_plan(rng)
    chunks = []
    for symbol, frames in zip(plan.symbols, plan.frames):
        n = frames * spec.hop_length
        if symbol == "sil":
            chunk = np.zeros(n)
        elif symbol in _VOICED:
            chunk = _voiced_segment(n, symbol, voice, spec, rng)
        else:
            chunk = _unvoiced_segment(n, symbol, spec, rng)
        chunks.append(chunk)
    wave = np.concatenate(chunks)
    wave *= 0.45 / (np.abs(wave).max() + 1e-9)
    # Quantize to the int16 grid so a WAV round trip is exact.
    wave = np.round(np.clip(wave, -1.0, 1.0) * 32767.0) / 32767.0
    phonemes = tuple(VOCAB.index(s) for s in plan.symbols)
    return wave, phonemes, plan.frames


def generate_synthetic(spec: SyntheticSpec, out_dir: Path | str) -> Corpus:
    """Generate a deterministic synthetic corpus under ``out_dir``.

    Writes WAVs, a manifest (``corpus.manifest``) and its vocabulary sidecar,
    and returns the loaded corpus.  Pure function of ``spec``.
    """
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    utterances: list[Utterance] = []
    for si in range(spec.n_speakers):
        voice = _speaker_voice(spec, si)
        speaker_id = f"spk{si:02d}"
        for ui in range(spec.utts_per_speaker):
            rng = np.random.default_rng([spec.seed, si, ui])
            plan = None
            if spec.parallel:
                # Same text for every speaker: draw the plan from a
                # speaker-independent stream.
                plan = _draw_plan(np.random.default_rng([spec.seed, 999999, ui]))
            wave, phonemes, durations = _gen_utterance(spec, voice, rng, plan)
            utt_id = f"{speaker_id}_utt{ui:03d}"
            wav_path = audio_dir / f"{utt_id}.wav"
            save_wav(wav_path, wave, spec.sample_rate)
            utterances.append(
                Utterance(
                    utt_id, speaker_id, wave, spec.sample_rate, phonemes, durations,
                    wav_path.resolve(),
                )
            )
    corpus = Corpus(tuple(utterances), VOCAB)
    save_manifest(corpus, out_dir / "corpus.manifest")
    return corpus


def split_fewshot(
    corpus: Corpus,
    fewshot_ids: set[str] | frozenset[str],
    k: int,
    seed: int = 0,
    include_refs_in_train: bool = True,
) -> tuple[Corpus, dict[str, list[Utterance]], Corpus]:
    """Partition ``corpus`` into (train, refs, holdout) around few-shot speakers.

    ``refs`` holds exactly ``k`` reference utterances per few-shot speaker;
    ``holdout`` the remainder of their data.  Train keeps all seen-speaker
    data and, by default, also the few-shot references (training uses all
    available recordings, including the few-shot speakers' references).
    """
    if k <= 0:
        raise ValidationError("k must be positive")
    unknown = set(fewshot_ids) - set(corpus.speakers)
    if unknown:
        raise ValidationError(f"unknown few-shot speakers: {sorted(unknown)}")
    by_speaker = corpus.by_speaker()
    refs: dict[str, list[Utterance]] = {}
    holdout_ids: set[str] = set()
    rng = np.random.default_rng(seed)
    for speaker in sorted(fewshot_ids):
        utts = sorted(by_speaker[speaker], key=lambda u: u.id)
        if len(utts) < k + 1:
            raise ValidationError(
                f"insufficient utterances for speaker {speaker}: "
                f"{len(utts)} available, need > {k}"
            )
        order = rng.permutation(len(utts))
        chosen = sorted(order[:k])
        refs[speaker] = [utts[i] for i in chosen]
        holdout_ids.update(utts[i].id for i in order[k:])
    ref_ids = {u.id for group in refs.values() for u in group}
    train_ids = {
        u.id
        for u in corpus.utterances
        if u.speaker_id not in fewshot_ids or (include_refs_in_train and u.id in ref_ids)
    }
    train = corpus.subset(train_ids)
    holdout = corpus.subset(holdout_ids)
    return train, refs, holdout
