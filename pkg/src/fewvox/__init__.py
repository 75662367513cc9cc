"""fewvox: few-shot multi-speaker TTS with comparable speaker representations.

A desk-scale study harness: synthetic voice corpora, pretrained and jointly
optimized 128-d speaker representations, a variance-adaptor acoustic model,
speaker-verification evaluation, and embedding-space visualization.
"""

from .acoustic import AcousticConfig, AcousticModel, length_regulate
from .audio import griffin_lim, load_wav, save_wav
from .config import RunConfig, load_config, parse_config_text
from .corpus import (
    VOCAB,
    Corpus,
    SyntheticSpec,
    Utterance,
    generate_synthetic,
    load_manifest,
    save_manifest,
    split_fewshot,
)
from .encoders import (
    JOINT_SCHEMES,
    PRETRAINED_SCHEMES,
    REP_DIM,
    SCHEMES,
    PretrainConfig,
    SpeakerEncoder,
    SpeakerRep,
    VCConfig,
    embed,
    enroll,
    load_encoder,
    pretrain_classifier,
    pretrain_vc,
    save_encoder,
)
from .errors import FewvoxError, ValidationError
from .features import (
    FeatureCache,
    FeatureConfig,
    MelSpectrogram,
    ProsodyTargets,
    compute_mel,
    extract_f0,
    phoneme_average,
    prosody_targets,
)
from .joint import EmbeddingTable, GSTModule, gst_enroll, gst_forward
from .sveval import SVResult, SVScoreSet, compute_eer, cosine, score_real_corpus, sv_accuracy
from .training import TrainConfig, enrollment_reps, load_tts, save_tts, train_tts
from .viz import ProjectedSet, cluster_spread, pca_2d, scatter_export

__version__ = "0.1.0"

__all__ = [
    "AcousticConfig",
    "AcousticModel",
    "Corpus",
    "EmbeddingTable",
    "FeatureCache",
    "FeatureConfig",
    "FewvoxError",
    "GSTModule",
    "JOINT_SCHEMES",
    "MelSpectrogram",
    "PRETRAINED_SCHEMES",
    "PretrainConfig",
    "ProjectedSet",
    "ProsodyTargets",
    "REP_DIM",
    "RunConfig",
    "SCHEMES",
    "SVResult",
    "SVScoreSet",
    "SpeakerEncoder",
    "SpeakerRep",
    "SyntheticSpec",
    "TrainConfig",
    "Utterance",
    "VCConfig",
    "VOCAB",
    "ValidationError",
    "cluster_spread",
    "compute_eer",
    "compute_mel",
    "cosine",
    "embed",
    "enroll",
    "enrollment_reps",
    "extract_f0",
    "generate_synthetic",
    "griffin_lim",
    "gst_enroll",
    "gst_forward",
    "length_regulate",
    "load_config",
    "load_encoder",
    "load_manifest",
    "load_tts",
    "load_wav",
    "parse_config_text",
    "pca_2d",
    "phoneme_average",
    "pretrain_classifier",
    "pretrain_vc",
    "prosody_targets",
    "save_encoder",
    "save_manifest",
    "save_tts",
    "save_wav",
    "scatter_export",
    "score_real_corpus",
    "split_fewshot",
    "sv_accuracy",
    "train_tts",
]
