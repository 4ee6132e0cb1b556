"""Flat `key = value` run configuration.

One file drives a whole run: architecture, optimization, and paths.
Lines are `key = value` with `#` comments; unknown keys are rejected;
command-line flags override file values. The resolved config echoes
losslessly through ``format_config`` / ``parse_config_text``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig, Task
from .optim import TrainConfig


@dataclass
class RunConfig:
    # architecture
    task: str = "expr"
    feat_dim: int = 1280
    d_model: int = 512
    d_ff: int = 512
    n_layers: int = 4
    n_heads: int = 4
    dropout: float = 0.1
    head_hidden: int = 256
    seg_len: int = 64
    # optimization
    epochs: int = 20
    batch_size: int = 64
    lr: float = 0.001
    weight_decay: float = 0.015625
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 0.0
    class_weights: bool = True
    va_loss: str = "ccc"
    seed: int | None = None
    # data / artifacts
    manifest: str = ""
    val_manifest: str = ""
    synthetic_manifest: str = ""
    use_synthetic: bool = False
    out_dir: str = ""
    model_id: str = ""

    def model_config(self) -> ModelConfig:
        return ModelConfig(task=Task(self.task), feat_dim=self.feat_dim, d_model=self.d_model,
                           d_ff=self.d_ff, n_layers=self.n_layers, n_heads=self.n_heads,
                           dropout_p=self.dropout, head_hidden=self.head_hidden,
                           seg_len=self.seg_len)

    def train_config(self) -> TrainConfig:
        if self.seed is None:
            raise ConfigError("training requires an explicit seed (--seed or `seed =` in the config)")
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                           weight_decay=self.weight_decay, beta1=self.adam_beta1,
                           beta2=self.adam_beta2, eps=self.adam_eps, seed=self.seed,
                           grad_clip=self.grad_clip, class_weighting=self.class_weights,
                           va_loss=self.va_loss)

    def default_model_id(self) -> str:
        return self.model_id or f"n{self.n_layers}h{self.n_heads}"


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    f = _FIELDS[key]
    raw = raw.strip()
    if f.type in ("int", "int | None"):
        return int(raw)
    if f.type == "float":
        return float(raw)
    if f.type == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected true/false, got {raw!r}")
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{ln}: expected `key = value`, got {line!r}")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{ln}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{ln}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


def load_config_file(path) -> dict:
    path = Path(path)
    return parse_config_text(path.read_text(), str(path))


def resolve(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults <- config file <- CLI overrides (None means not given)."""
    merged = {}
    for src in (file_values or {}), {k: v for k, v in (overrides or {}).items() if v is not None}:
        merged.update(src)
    cfg = RunConfig(**merged)
    cfg.model_config()  # validate eagerly
    return cfg


def format_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if v is None:
            continue
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
