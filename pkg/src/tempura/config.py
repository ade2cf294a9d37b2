"""Run configuration and the flat ``key = value`` config file format.

Precedence is CLI flag > config file > built-in default. Lines starting with
``#`` are comments; booleans accept true/false/on/off/yes/no/1/0; ``none``
leaves an optional field unset.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, fields
from pathlib import Path

from .model import TASK_GMM_K, TASK_LAMBDA, TASKS, ModelConfig


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class RunConfig:
    task: str = "predcls"
    epochs: int = 10
    lr: float = 1e-5
    weight_decay: float = 1e-4
    lam: float | None = None
    gmm_k: int | None = None
    eta: int = 2
    stride: int | None = None
    seed: int = 0
    d_v: int = 32
    d_u: int = 32
    d_s: int = 16
    heads: int = 8
    ffn_dim: int = 128
    spa_layers: int = 1
    tem_layers: int = 1
    ospu_heads: int = 8
    ospu_layers: int = 1
    ospu_ffn: int = 128
    ospu_cls_hidden: int = 64
    mdu: bool = True
    gmm_head: bool = True
    ospu: bool = True
    l_intra: bool = True
    plateau_patience: int = 2
    plateau_delta: float = 1e-4
    plateau_factor: float = 0.5
    iou_threshold: float = 0.5
    pooling: str = "pooled"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError("task", f"must be one of {', '.join(TASKS)}, got {self.task!r}")
        if self.epochs < 1:
            raise ConfigError("epochs", f"must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            raise ConfigError("lr", f"must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay", "must be >= 0")
        if self.lam is not None and not 0.0 < self.lam <= 1.0:
            raise ConfigError("lam", f"must lie in (0, 1], got {self.lam}")
        if self.gmm_k is not None and self.gmm_k < 1:
            raise ConfigError("gmm_k", f"must be >= 1, got {self.gmm_k}")
        if self.eta < 1:
            raise ConfigError("eta", f"must be >= 1, got {self.eta}")
        if self.stride is not None and not 1 <= self.stride <= self.eta:
            raise ConfigError("stride", f"must lie in [1, eta={self.eta}] so every frame is covered")
        rel = 2 * self.d_v + self.d_u + 2 * self.d_s
        if rel % self.heads:
            raise ConfigError("heads", f"relation dim {rel} is not divisible by {self.heads} heads")
        if self.pooling not in ("pooled", "per_frame"):
            raise ConfigError("pooling", "must be 'pooled' or 'per_frame'")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ConfigError("iou_threshold", "must lie in (0, 1]")
        if not 0.0 < self.plateau_factor <= 1.0:
            raise ConfigError("plateau_factor", "must lie in (0, 1]")

    @property
    def resolved_lam(self) -> float:
        return TASK_LAMBDA[self.task] if self.lam is None else self.lam

    @property
    def resolved_k(self) -> int:
        return TASK_GMM_K[self.task] if self.gmm_k is None else self.gmm_k

    def model_config(self, n_obj_classes: int, n_pred_classes: int, feat_dim: int) -> ModelConfig:
        return ModelConfig(
            task=self.task, n_obj_classes=n_obj_classes, n_pred_classes=n_pred_classes, feat_dim=feat_dim,
            d_v=self.d_v, d_u=self.d_u, d_s=self.d_s, heads=self.heads, ffn_dim=self.ffn_dim,
            spa_layers=self.spa_layers, tem_layers=self.tem_layers, eta=self.eta, stride=self.stride,
            ospu_heads=self.ospu_heads, ospu_layers=self.ospu_layers, ospu_ffn=self.ospu_ffn,
            ospu_cls_hidden=self.ospu_cls_hidden, gmm_k=self.resolved_k, lam=self.resolved_lam,
            use_mdu=self.mdu, use_gmm=self.gmm_head, use_ospu=self.ospu, use_intra=self.l_intra,
            seed=self.seed,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return build(cls, d)


_TRUE = {"true", "on", "yes", "1"}
_FALSE = {"false", "off", "no", "0"}


def _coerce(name: str, typ, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    args = [a for a in typing.get_args(typ) if a is not type(None)]
    optional = len(args) < len(typing.get_args(typ))
    base = args[0] if args else typ
    if optional and text.lower() == "none":
        return None
    try:
        if base is bool:
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if base is int:
            return int(text)
        if base is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(name, f"cannot parse {text!r} as {getattr(base, '__name__', base)}") from None


def build(cls, values: dict):
    """Instantiate dataclass ``cls`` from string or typed values, naming bad fields."""
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(key, "unknown field")
        kwargs[key] = _coerce(key, hints[key], raw)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(cls.__name__, str(exc)) from None


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}", "expected key = value")
        key, val = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if not key:
            raise ConfigError(f"{source}:{lineno}", "empty key")
        out[key] = val.strip()
    return out


def read_kv(path) -> dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config file ({exc.strerror})") from None
    return parse_kv(text, str(path))


def format_kv(values: dict) -> str:
    return "".join(f"{k} = {'none' if v is None else str(v).lower() if isinstance(v, bool) else v}\n"
                   for k, v in values.items())


def merge(cls, file_values: dict | None = None, overrides: dict | None = None):
    """Defaults, then the config file, then explicit (non-None) CLI overrides."""
    values = dict(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build(cls, values)
