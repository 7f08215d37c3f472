"""Training configuration, YAML round-trip and ablation presets."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Iterable

import yaml

from .errors import BatchCompositionError, ConfigError, ReIDIOError
from .losses import LossWeights

FACE_VARIANTS = ("student_plain", "student_distilled", "teacher")


@dataclass
class TrainConfig:
    seed: int = 0
    data_root: str = "data"
    teacher_checkpoint: str | None = None

    optimizer: str = "adam"
    lr: float = 1e-3
    weight_decay: float = 0.0
    steps: int = 2000
    teacher_steps: int = 2000
    P: int = 4
    K: int = 4

    lambda_att: float = 7.0
    alpha: float = 0.7
    temperature: float = 5.0
    triplet_margin: float = 0.3
    epsilon: float = 0.1
    mask_resize: str = "area"

    use_global_stream: bool = True
    use_cam: bool = True
    use_att_loss: bool = True
    use_face_stream: bool = True
    face_variant: str = "student_distilled"

    channels: int = 32
    head_channels: int = 64
    embed_dim: int = 64

    protocol: str = "cross_clothes"
    normalize_streams: bool = False

    def validate(self) -> None:
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.lr <= 0 or self.steps < 0 or self.teacher_steps < 0:
            raise ConfigError("lr must be > 0 and step counts >= 0")
        if self.P < 2 or self.K < 2:
            raise BatchCompositionError(f"P and K must both be >= 2, got P={self.P}, K={self.K}")
        if self.face_variant not in FACE_VARIANTS:
            raise ConfigError(f"face_variant must be one of {FACE_VARIANTS}, got {self.face_variant!r}")
        if self.mask_resize not in ("area", "nearest"):
            raise ConfigError("mask_resize must be area or nearest")
        if not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must lie in (0, 1)")
        if not (self.use_global_stream or self.use_face_stream):
            raise ConfigError("at least one of use_global_stream / use_face_stream must be on")
        if self.use_att_loss and not self.use_cam:
            raise ConfigError("use_att_loss requires use_cam")
        if (self.use_cam or self.use_att_loss) and not self.use_global_stream:
            raise ConfigError("use_cam / use_att_loss require the global stream")
        self.loss_weights().validate()

    def loss_weights(self) -> LossWeights:
        # a student trained without distillation is the alpha = 0 case
        alpha = 0.0 if self.face_variant == "student_plain" else self.alpha
        return LossWeights(lambda_att=self.lambda_att if self.use_att_loss else 0.0, alpha=alpha,
                           temperature=self.temperature, triplet_margin=self.triplet_margin)

    @property
    def needs_teacher(self) -> bool:
        return self.use_face_stream and self.face_variant != "student_plain"

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key: str, value: Any) -> Any:
    kind = _FIELD_TYPES[key]
    if value is None or (isinstance(value, str) and value.lower() in ("none", "null")):
        if "None" in kind:
            return None
        raise ConfigError(f"{key} cannot be null")
    if isinstance(value, str):
        value = yaml.safe_load(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{key} expects true/false, got {value!r}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} expects an integer, got {value!r}")
        return value
    if kind == "float":
        if isinstance(value, str):
            try:
                value = float(value)  # yaml 1.1 leaves "5e-4" as a string
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {value!r}")
        return float(value)
    return str(value)


def from_mapping(raw: dict[str, Any], base: TrainConfig | None = None) -> TrainConfig:
    unknown = set(raw) - set(_FIELD_TYPES)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return replace(base or TrainConfig(), **{k: _coerce(k, v) for k, v in raw.items()})


def load_config(path: str | os.PathLike | None, overrides: Iterable[str] = (), seed: int | None = None) -> TrainConfig:
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ReIDIOError(f"cannot read config {path}: {exc}") from exc
        raw = yaml.safe_load(text) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a key-value document")
    cfg = from_mapping(raw)
    cfg = apply_overrides(cfg, overrides)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def apply_overrides(cfg: TrainConfig, overrides: Iterable[str]) -> TrainConfig:
    parsed = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        parsed[key.strip()] = value
    return from_mapping(parsed, cfg) if parsed else cfg


_BODY_OFF = dict(use_global_stream=False, use_cam=False, use_att_loss=False)
_BODY_FULL = dict(use_global_stream=True, use_cam=True, use_att_loss=True)

PRESETS: dict[str, dict[str, Any]] = {
    "1": dict(use_global_stream=True, use_cam=False, use_att_loss=False, use_face_stream=False),
    "2": dict(use_global_stream=True, use_cam=True, use_att_loss=False, use_face_stream=False),
    "3": dict(_BODY_FULL, use_face_stream=False),
    "4": dict(_BODY_OFF, use_face_stream=True, face_variant="student_plain"),
    "5": dict(_BODY_OFF, use_face_stream=True, face_variant="student_distilled"),
    "6": dict(_BODY_OFF, use_face_stream=True, face_variant="teacher"),
    "7": dict(_BODY_FULL, use_face_stream=True, face_variant="student_plain"),
    "deskpro": dict(_BODY_FULL, use_face_stream=True, face_variant="student_distilled"),
    "deskpro+": dict(_BODY_FULL, use_face_stream=True, face_variant="teacher"),
}


def preset(cfg: TrainConfig, name: str) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {list(PRESETS)}")
    return replace(cfg, **PRESETS[name])
