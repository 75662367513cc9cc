"""Embedding-space analysis: PCA to 2-D, labeled scatter export, and a
cluster-compactness companion metric."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ProjectedSet:
    points: np.ndarray              # [N, 2]
    labels: tuple[str, ...]         # speaker id per point
    explained_variance: tuple[float, float]

    def __post_init__(self) -> None:
        pts = np.asarray(self.points)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValidationError("points must be N x 2")
        if len(self.labels) != pts.shape[0]:
            raise ValidationError("one label per point required")
        ev1, ev2 = self.explained_variance
        if not (0.0 <= ev2 <= ev1 <= 1.0 + 1e-9):
            raise ValidationError("explained variance fractions must be non-increasing in [0, 1]")


def pca_2d(embeddings: np.ndarray, labels: list[str] | None = None) -> ProjectedSet:
    """Mean-centered projection onto the top-2 principal directions.

    Component signs are fixed by making each direction's largest-magnitude
    loading positive, so results are deterministic.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError("embeddings must be a 2-D array")
    n = x.shape[0]
    if n < 3:
        raise ValidationError("PCA needs at least 3 points")
    labels = list(labels) if labels is not None else [""] * n
    if len(labels) != n:
        raise ValidationError("one label per embedding required")
    centered = x - x.mean(axis=0, keepdims=True)
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    variances = (svals**2) / (n - 1)
    total = float(variances.sum())
    if total <= 1e-12:
        raise ValidationError("zero variance: all embeddings identical")
    components = vt[:2]
    for i in range(2):
        j = int(np.argmax(np.abs(components[i])))
        if components[i, j] < 0:
            components[i] = -components[i]
    points = centered @ components.T
    explained = (float(variances[0] / total), float(variances[1] / total) if len(variances) > 1 else 0.0)
    return ProjectedSet(points, tuple(labels), explained)


def scatter_export(projected: ProjectedSet, path: Path | str, title: str = "") -> None:
    """Write a PNG scatter (one color per speaker) and a TSV of (x, y, speaker)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    speakers = sorted(set(projected.labels))
    cmap = plt.get_cmap("tab20")
    fig, ax = plt.subplots(figsize=(6, 6))
    for i, spk in enumerate(speakers):
        idx = [j for j, lab in enumerate(projected.labels) if lab == spk]
        pts = projected.points[idx]
        ax.scatter(pts[:, 0], pts[:, 1], s=12, color=cmap(i % 20), label=spk)
    ax.set_xlabel(f"PC1 ({projected.explained_variance[0]:.1%})")
    ax.set_ylabel(f"PC2 ({projected.explained_variance[1]:.1%})")
    if title:
        ax.set_title(title)
    if len(speakers) <= 20:
        ax.legend(fontsize=6, markerscale=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": "fewvox"})
    plt.close(fig)
    rows = ["x\ty\tspeaker"]
    for (xv, yv), lab in zip(projected.points, projected.labels):
        rows.append(f"{xv:.8f}\t{yv:.8f}\t{lab}")
    path.with_suffix(".tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")


def load_scatter_data(path: Path | str) -> ProjectedSet:
    """Read back the TSV written by scatter_export (round-trip check)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    pts, labels = [], []
    for line in lines[1:]:
        xv, yv, lab = line.split("\t")
        pts.append((float(xv), float(yv)))
        labels.append(lab)
    points = np.asarray(pts)
    if len(points) < 1:
        raise ValidationError(f"{path}: empty scatter data")
    # Explained variance is not stored in the TSV; recompute a consistent pair.
    var = points.var(axis=0, ddof=1) if len(points) > 2 else np.array([1.0, 0.0])
    total = float(var.sum()) or 1.0
    ev = sorted((float(var[0] / total), float(var[1] / total)), reverse=True)
    return ProjectedSet(points, tuple(labels), (ev[0], ev[1]))


def cluster_spread(embeddings: np.ndarray, labels: list[str]) -> float:
    """Mean intra-speaker spread divided by mean nearest-other-centroid
    distance; lower = tighter, better-separated clusters."""
    x = np.asarray(embeddings, dtype=np.float64)
    labs = np.asarray(labels)
    speakers = sorted(set(labels))
    if len(speakers) < 2:
        raise ValidationError("cluster_spread needs at least 2 speakers")
    centroids = {s: x[labs == s].mean(axis=0) for s in speakers}
    spreads, nearest = [], []
    for s in speakers:
        pts = x[labs == s]
        spreads.append(float(np.linalg.norm(pts - centroids[s], axis=1).mean()))
        others = [np.linalg.norm(centroids[s] - centroids[t]) for t in speakers if t != s]
        nearest.append(float(min(others)))
    denom = float(np.mean(nearest))
    if denom <= 1e-12:
        raise ValidationError("speaker centroids coincide")
    return float(np.mean(spreads)) / denom
