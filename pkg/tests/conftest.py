"""Shared fixtures: one synthetic corpus and pretrained encoders per session."""

from __future__ import annotations

import numpy as np
import pytest

from fewvox.corpus import SyntheticSpec, generate_synthetic
from fewvox.encoders import (
    PretrainConfig,
    SpeakerEncoder,
    VCConfig,
    corpus_mels,
    pretrain_classifier,
    train_vc_model,
)
from fewvox.features import FeatureConfig


@pytest.fixture(scope="session")
def features_cfg() -> FeatureConfig:
    return FeatureConfig()


@pytest.fixture(scope="session")
def corpus4x8(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus4x8")
    return generate_synthetic(SyntheticSpec(n_speakers=4, utts_per_speaker=8, seed=0), root)


@pytest.fixture(scope="session")
def mels4x8(corpus4x8, features_cfg):
    return corpus_mels(corpus4x8, features_cfg)


@pytest.fixture(scope="session")
def dvec_encoder(corpus4x8, features_cfg, mels4x8):
    cfg = PretrainConfig(steps=300, seed=0, pooling="mean")
    encoder, losses, accuracy = pretrain_classifier(corpus4x8, cfg, features_cfg, mels4x8)
    return encoder, losses, accuracy


@pytest.fixture(scope="session")
def xvec_encoder(corpus4x8, features_cfg, mels4x8):
    cfg = PretrainConfig(steps=300, seed=0, pooling="mean_std")
    encoder, losses, accuracy = pretrain_classifier(corpus4x8, cfg, features_cfg, mels4x8)
    return encoder, losses, accuracy


@pytest.fixture(scope="session")
def vc_bundle(corpus4x8, features_cfg, mels4x8):
    """Full VC autoencoder plus its loss curve (the encoder tests need both)."""
    cfg = VCConfig(steps=600, seed=2)
    model, losses = train_vc_model(corpus4x8, cfg, features_cfg, mels4x8)
    return model, losses


@pytest.fixture(scope="session")
def vc_encoder(vc_bundle, features_cfg):
    model, losses = vc_bundle
    arch = {"n_mels": features_cfg.n_mels, "hidden": 128, "pooling": "mean"}
    encoder = SpeakerEncoder("vc", "mean", model.speaker_encoder, arch).freeze()
    return encoder, losses


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
