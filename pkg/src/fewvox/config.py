"""Run configuration: a small human-readable key=value file.

Lines are `key = value`; `#` starts a comment.  Dotted keys select sections
(`tts.hidden = 256`).  Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .encoders import PRETRAINED_SCHEMES, SCHEMES
from .errors import ValidationError
from .features import FeatureConfig


@dataclass(frozen=True)
class CorpusSection:
    manifest: str = ""            # if set, load this manifest instead of generating
    n_speakers: int = 4
    utts_per_speaker: int = 8
    seed: int = 0
    f0_min: float = 100.0
    f0_max: float = 280.0


@dataclass(frozen=True)
class PretrainSection:
    steps: int = 400
    batch_size: int = 16
    lr: float = 1e-3
    hidden: int = 256
    crop_frames: int = 96


@dataclass(frozen=True)
class VCSection:
    steps: int = 600
    batch_size: int = 16
    lr: float = 1e-3
    content_dim: int = 4
    hidden: int = 128
    crop_frames: int = 96


@dataclass(frozen=True)
class TTSSection:
    steps: int = 1200
    batch_size: int = 16
    lr: float = 1e-3
    lr_decay: str = "cosine"
    grad_clip: float = 1.0
    hidden: int = 256
    enc_layers: int = 4
    dec_layers: int = 4
    heads: int = 2
    ffn_dim: int = 1024
    ffn_kernel: int = 3
    var_filter: int = 256
    var_kernel: int = 3
    dropout: float = 0.0
    gst_tokens: int = 10
    gst_heads: int = 4


@dataclass(frozen=True)
class EvalSection:
    # Grid rows: semicolon-separated scheme sets, e.g. "dvec;vc;vc,lookup".
    configs: str = "dvec;xvec;vc;lookup;gst;vc,lookup"
    k_values: tuple[int, ...] = (100, 5)
    fewshot_per_track: int = 2
    synth_per_speaker: int = 6
    encoder_seed: int = 900  # disjoint corpus seed for the evaluation encoder
    encoder_steps: int = 400
    encoder_speakers: int = 8
    encoder_utts: int = 12

    def rows(self) -> list[tuple[str, ...]]:
        out: list[tuple[str, ...]] = []
        for chunk in self.configs.split(";"):
            schemes = tuple(sorted(s.strip() for s in chunk.split(",") if s.strip()))
            if not schemes:
                raise ValidationError("empty scheme set in eval.configs")
            for s in schemes:
                if s not in SCHEMES:
                    raise ValidationError(f"unknown scheme in eval.configs: {s}")
            out.append(schemes)
        if not out:
            raise ValidationError("eval.configs lists no configurations")
        return out


@dataclass(frozen=True)
class RunConfig:
    schemes: tuple[str, ...] = ("lookup",)
    seed: int = 0
    k: int = 5
    out_dir: str = "runs/default"
    corpus: CorpusSection = field(default_factory=CorpusSection)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    vc: VCSection = field(default_factory=VCSection)
    tts: TTSSection = field(default_factory=TTSSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def __post_init__(self) -> None:
        if not self.schemes:
            raise ValidationError("schemes must be non-empty")
        unknown = [s for s in self.schemes if s not in SCHEMES]
        if unknown:
            raise ValidationError(f"unknown scheme(s): {unknown}")
        if self.k < 1:
            raise ValidationError("k must be >= 1")


_SECTION_TYPES = {
    "corpus": CorpusSection,
    "features": FeatureConfig,
    "pretrain": PretrainSection,
    "vc": VCSection,
    "tts": TTSSection,
    "eval": EvalSection,
}
_TOP_KEYS = {"schemes", "seed", "k", "out_dir"}


def _coerce(raw: str, target_type, key: str):
    raw = raw.strip()
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is str:
        return raw
    if target_type == tuple[int, ...]:
        return tuple(int(v.strip()) for v in raw.split(",") if v.strip())
    if target_type == tuple[str, ...]:
        return tuple(v.strip() for v in raw.split(",") if v.strip())
    if target_type == float | None or str(target_type) in ("float | None", "typing.Optional[float]"):
        return None if raw.lower() in ("", "none") else float(raw)
    raise ValidationError(f"unsupported config value type for key '{key}'")


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    sections: dict[str, dict] = {name: {} for name in _SECTION_TYPES}
    top: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if "." in key:
            section, _, sub = key.partition(".")
            if section not in _SECTION_TYPES:
                raise ValidationError(f"{source}:{lineno}: unknown section '{section}'")
            cls = _SECTION_TYPES[section]
            known = {f.name: f.type for f in fields(cls)}
            if sub not in known:
                raise ValidationError(f"{source}:{lineno}: unknown key '{key}'")
            resolved = _resolve_type(cls, sub)
            sections[section][sub] = _coerce(raw, resolved, key)
        else:
            if key not in _TOP_KEYS:
                raise ValidationError(f"{source}:{lineno}: unknown key '{key}'")
            if key == "schemes":
                top[key] = tuple(sorted(v.strip() for v in raw.split(",") if v.strip()))
            elif key in ("seed", "k"):
                top[key] = int(raw)
            else:
                top[key] = raw.strip()
    built = {name: cls(**sections[name]) for name, cls in _SECTION_TYPES.items()}
    return RunConfig(**top, **built)


def _resolve_type(cls, field_name: str):
    import typing

    hints = typing.get_type_hints(cls)
    return hints[field_name]


def load_config(path: Path | str) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def override(config: RunConfig, seed: int | None = None, out_dir: str | None = None) -> RunConfig:
    if seed is not None:
        config = replace(config, seed=seed)
    if out_dir is not None:
        config = replace(config, out_dir=out_dir)
    return config
