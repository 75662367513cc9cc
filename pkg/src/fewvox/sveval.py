"""Speaker-verification evaluation: cosine scoring, EER thresholding, and the
pass/fail accuracy harness.

The evaluation encoder is always a separately pretrained classifier encoder
(trained on a disjoint synthetic corpus), never one of the TTS conditioning
encoders, so the evaluator stays independent of the system under test.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import SpeakerEncoder, embed, mean_embedding
from .errors import ValidationError
from .features import MelSpectrogram


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine similarity of a zero vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass(frozen=True)
class SVScoreSet:
    genuine: tuple[float, ...]
    impostor: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.genuine or not self.impostor:
            raise ValidationError("EER needs non-empty genuine and impostor score lists")
        for name, scores in (("genuine", self.genuine), ("impostor", self.impostor)):
            arr = np.asarray(scores, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} scores contain non-finite values")
            if np.any(arr < -1.0) or np.any(arr > 1.0):
                raise ValidationError(f"{name} scores outside [-1, 1]")


def _rates(genuine: np.ndarray, impostor: np.ndarray, thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """FAR(t) = P(impostor > t) (non-increasing); FRR(t) = P(genuine <= t)
    (non-decreasing), at each candidate threshold."""
    far = (impostor[None, :] > thresholds[:, None]).mean(axis=1)
    frr = (genuine[None, :] <= thresholds[:, None]).mean(axis=1)
    return far, frr


def eer_candidates(scores: SVScoreSet) -> np.ndarray:
    """Candidate thresholds: one below all scores, the midpoints between
    adjacent distinct scores, and one above all scores.  Every achievable
    (FAR, FRR) operating point appears at exactly one candidate."""
    pooled = np.unique(np.concatenate([scores.genuine, scores.impostor]))
    below = pooled[0] - 1.0
    above = pooled[-1] + 1.0
    mids = (pooled[:-1] + pooled[1:]) / 2.0 if len(pooled) > 1 else np.empty(0)
    return np.concatenate([[below], mids, [above]])


def compute_eer(scores: SVScoreSet) -> tuple[float, float]:
    """Equal error rate and its threshold.

    Sweeps the candidate thresholds; at the first point where FAR - FRR
    changes sign, returns the exact crossing if FAR == FRR there, otherwise
    linearly interpolates between the adjacent operating points (both the
    rate and the threshold).
    """
    genuine = np.asarray(scores.genuine, dtype=np.float64)
    impostor = np.asarray(scores.impostor, dtype=np.float64)
    thresholds = eer_candidates(scores)
    far, frr = _rates(genuine, impostor, thresholds)
    diff = far - frr  # starts >= 0 (FAR=1, FRR=0), ends <= 0 (FAR=0, FRR=1)
    k = int(np.argmax(diff <= 0.0))
    if diff[k] == 0.0:
        return float(far[k]), float(thresholds[k])
    # Crossing lies between candidates k-1 and k.
    x0, y0 = far[k - 1], frr[k - 1]
    x1, y1 = far[k], frr[k]
    s = (x0 - y0) / ((x0 - y0) - (x1 - y1))
    eer = x0 + s * (x1 - x0)
    threshold = thresholds[k - 1] + s * (thresholds[k] - thresholds[k - 1])
    return float(eer), float(threshold)


def enrollment_embedding(encoder: SpeakerEncoder, mels: list[MelSpectrogram]) -> np.ndarray:
    """Mean of the evaluation encoder's per-utterance embeddings."""
    if not mels:
        raise ValidationError("enrollment needs at least one utterance")
    vecs = np.stack([embed(encoder, m).vector.astype(np.float64) for m in mels])
    return mean_embedding(vecs)


def sv_accuracy(
    synth_mels: list[MelSpectrogram],
    enrollment: np.ndarray,
    threshold: float,
    encoder: SpeakerEncoder,
) -> float:
    """Fraction of utterances whose score strictly exceeds the threshold."""
    if not synth_mels:
        raise ValidationError("sv_accuracy needs at least one utterance")
    passed = sum(
        1 for m in synth_mels if cosine(embed(encoder, m).vector, enrollment) > threshold
    )
    return passed / len(synth_mels)


def score_real_corpus(
    encoder: SpeakerEncoder,
    mels_by_speaker: dict[str, list[MelSpectrogram]],
) -> SVScoreSet:
    """All-pairs trial set over real utterances.

    Each utterance is scored against every speaker's enrollment; own-speaker
    trials are genuine, all other pairs impostor.  Enrollments use every
    utterance of the speaker (the whole-dataset convention).
    """
    speakers = sorted(mels_by_speaker)
    if len(speakers) < 2:
        raise ValidationError("EER protocol needs at least 2 speakers")
    enrollments = {s: enrollment_embedding(encoder, mels_by_speaker[s]) for s in speakers}
    genuine: list[float] = []
    impostor: list[float] = []
    for spk in speakers:
        for mel in mels_by_speaker[spk]:
            vec = embed(encoder, mel).vector
            for other in speakers:
                score = cosine(vec, enrollments[other])
                (genuine if other == spk else impostor).append(score)
    return SVScoreSet(tuple(genuine), tuple(impostor))


@dataclass(frozen=True)
class SVResult:
    eer: float
    threshold: float
    accuracy_per_model: dict[str, dict[str, float]] = field(default_factory=dict)
    # accuracy_per_model: config label -> {budget label -> pass fraction}

    def __post_init__(self) -> None:
        if not 0.0 <= self.eer <= 1.0 + 1e-12:
            raise ValidationError(f"EER {self.eer} outside [0, 1]")
        for row in self.accuracy_per_model.values():
            for v in row.values():
                if not 0.0 <= v <= 1.0:
                    raise ValidationError("SV accuracy outside [0, 1]")


def format_results_table(result: SVResult, budgets: list[str]) -> str:
    """Delimited text report: rows = configurations, columns = budgets."""
    lines = [f"# evaluation encoder EER on real data: {result.eer:.4f} (threshold {result.threshold:.4f})"]
    lines.append("\t".join(["config"] + budgets))
    for config in sorted(result.accuracy_per_model):
        row = result.accuracy_per_model[config]
        lines.append("\t".join([config] + [f"{row.get(b, float('nan')):.3f}" for b in budgets]))
    return "\n".join(lines) + "\n"


def write_results(path: Path | str, result: SVResult, budgets: list[str]) -> None:
    """Text table + machine-readable JSONL records."""
    path = Path(path)
    path.write_text(format_results_table(result, budgets), encoding="utf-8")
    records = [{"record": "eer", "eer": result.eer, "threshold": result.threshold}]
    for config in sorted(result.accuracy_per_model):
        for budget in budgets:
            if budget in result.accuracy_per_model[config]:
                records.append(
                    {
                        "record": "accuracy",
                        "config": config,
                        "budget": budget,
                        "accuracy": result.accuracy_per_model[config][budget],
                    }
                )
    jsonl = "\n".join(json.dumps(r, sort_keys=True) for r in records) + "\n"
    path.with_suffix(".jsonl").write_text(jsonl, encoding="utf-8")
