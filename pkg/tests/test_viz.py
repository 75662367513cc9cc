"""PCA projection, scatter export, and cluster-compactness metric."""

from __future__ import annotations

import numpy as np
import pytest

from fewvox.errors import ValidationError
from fewvox.viz import ProjectedSet, cluster_spread, load_scatter_data, pca_2d, scatter_export


def test_pca_matches_eigendecomposition(rng):
    x = rng.normal(size=(40, 12)) @ rng.normal(size=(12, 12))
    projected = pca_2d(x)
    centered = x - x.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / (len(x) - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    for i in range(2):
        v = evecs[:, i]
        j = int(np.argmax(np.abs(v)))
        if v[j] < 0:
            v = -v
        ref = centered @ v
        assert np.abs(projected.points[:, i] - ref).max() < 1e-6
    total = evals.sum()
    assert projected.explained_variance[0] == pytest.approx(evals[0] / total, abs=1e-9)
    assert projected.explained_variance[1] == pytest.approx(evals[1] / total, abs=1e-9)
    assert projected.explained_variance[0] >= projected.explained_variance[1]


def test_pca_mean_shift_invariance(rng):
    x = rng.normal(size=(25, 6))
    shifted = x + rng.normal(size=(1, 6)) * 100.0
    a = pca_2d(x)
    b = pca_2d(shifted)
    assert np.abs(a.points - b.points).max() < 1e-8


def test_pca_recovers_planted_2d_subspace(rng):
    """Points on a 2-D plane in 10-D: the projection preserves all pairwise
    structure (correlation of pairwise distances ~ 1) and explains ~100%."""
    basis = np.linalg.qr(rng.normal(size=(10, 2)))[0]
    coords = rng.normal(size=(60, 2)) * np.array([3.0, 1.0])
    x = coords @ basis.T
    projected = pca_2d(x)
    assert sum(projected.explained_variance) > 0.999
    d_orig = np.linalg.norm(x[:, None] - x[None, :], axis=-1).ravel()
    d_proj = np.linalg.norm(
        projected.points[:, None] - projected.points[None, :], axis=-1
    ).ravel()
    r = np.corrcoef(d_orig, d_proj)[0, 1]
    assert r > 0.999


def test_pca_isotropic_variance_split(rng):
    x = rng.normal(size=(4000, 5))
    projected = pca_2d(x)
    # isotropic cloud: each direction explains ~1/5 of the variance
    assert abs(projected.explained_variance[0] - 0.2) < 0.02
    assert abs(projected.explained_variance[1] - 0.2) < 0.02


def test_pca_sign_convention(rng):
    x = rng.normal(size=(30, 4))
    p1 = pca_2d(x)
    p2 = pca_2d(x.copy())
    assert np.array_equal(p1.points, p2.points)


def test_pca_errors(rng):
    with pytest.raises(ValidationError, match="at least 3"):
        pca_2d(rng.normal(size=(2, 5)))
    with pytest.raises(ValidationError, match="zero variance"):
        pca_2d(np.ones((5, 4)))
    with pytest.raises(ValidationError, match="2-D"):
        pca_2d(rng.normal(size=(5,)))
    with pytest.raises(ValidationError, match="one label per"):
        pca_2d(rng.normal(size=(5, 4)), labels=["a"])


def test_projected_set_validation(rng):
    pts = rng.normal(size=(4, 2))
    ProjectedSet(pts, ("a", "b", "c", "d"), (0.6, 0.3))
    with pytest.raises(ValidationError, match="N x 2"):
        ProjectedSet(rng.normal(size=(4, 3)), ("a",) * 4, (0.6, 0.3))
    with pytest.raises(ValidationError, match="label"):
        ProjectedSet(pts, ("a",), (0.6, 0.3))
    with pytest.raises(ValidationError, match="non-increasing"):
        ProjectedSet(pts, ("a",) * 4, (0.3, 0.6))


def test_scatter_export_roundtrip(tmp_path, rng):
    n_speakers, per = 20, 100
    emb = rng.normal(size=(n_speakers * per, 8))
    labels = [f"spk{i:02d}" for i in range(n_speakers) for _ in range(per)]
    projected = pca_2d(emb, labels)
    png = tmp_path / "proj.png"
    scatter_export(projected, png, title="demo")
    assert png.exists() and png.stat().st_size > 0
    tsv = png.with_suffix(".tsv")
    lines = tsv.read_text().splitlines()
    assert lines[0] == "x\ty\tspeaker"
    assert len(lines) == 1 + n_speakers * per
    back = load_scatter_data(tsv)
    assert back.labels == projected.labels
    assert np.abs(back.points - projected.points).max() < 1e-7  # 8-decimal TSV


def test_scatter_export_png_deterministic(tmp_path, rng):
    emb = rng.normal(size=(30, 6))
    labels = ["a"] * 10 + ["b"] * 10 + ["c"] * 10
    projected = pca_2d(emb, labels)
    scatter_export(projected, tmp_path / "one.png")
    scatter_export(projected, tmp_path / "two.png")
    assert (tmp_path / "one.png").read_bytes() == (tmp_path / "two.png").read_bytes()


def test_scatter_single_speaker(tmp_path, rng):
    emb = rng.normal(size=(5, 4))
    projected = pca_2d(emb, ["only"] * 5)
    scatter_export(projected, tmp_path / "solo.png")
    back = load_scatter_data(tmp_path / "solo.tsv")
    assert set(back.labels) == {"only"}


def test_cluster_spread_oracle():
    # two tight clusters distance 10 apart, each point 1 from its centroid
    a = np.array([[0.0, 1.0], [0.0, -1.0]])
    b = a + np.array([10.0, 0.0])
    emb = np.vstack([a, b])
    labels = ["a", "a", "b", "b"]
    # intra spread = 1 for both; nearest-centroid distance = 10
    assert cluster_spread(emb, labels) == pytest.approx(0.1, abs=1e-12)


def test_cluster_spread_separation_sensitivity(rng):
    tight = np.vstack([rng.normal(scale=0.1, size=(20, 4)) + off for off in (0.0, 8.0)])
    loose = np.vstack([rng.normal(scale=2.0, size=(20, 4)) + off for off in (0.0, 8.0)])
    labels = ["a"] * 20 + ["b"] * 20
    assert cluster_spread(tight, labels) < cluster_spread(loose, labels)


def test_cluster_spread_errors(rng):
    with pytest.raises(ValidationError, match="2 speakers"):
        cluster_spread(rng.normal(size=(4, 3)), ["a"] * 4)
    x = np.ones((4, 3))
    with pytest.raises(ValidationError, match="coincide"):
        cluster_spread(x, ["a", "a", "b", "b"])
