"""Per-frame sequence model: projection -> encoder stack -> task head.

One segment of frame features [seg_len, feat_dim] is projected into the
embedding space, a sinusoidal position table is added, the result runs
through N post-norm encoder layers (h-head self-attention + feed-forward
with residuals), and a one-hidden-layer head emits one output vector per
frame. Padded frames are removed from the attention keys with a -1e9
score bias; their own rows are computed but carry no meaning.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, DataError, DimensionError
from .rng import derive_rng
from .tensor import Tensor, astensor, dropout, layer_norm, matmul, relu, softmax, tanh

NEG_BIAS = -1e9


class Task(str, Enum):
    EXPR = "expr"   # 8-way expression classification
    AU = "au"       # 12-way multilabel action-unit detection
    VA = "va"       # valence/arousal regression in [-1, 1]

    @property
    def n_outputs(self) -> int:
        return {Task.EXPR: 8, Task.AU: 12, Task.VA: 2}[self]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults are the trained setting."""

    task: Task = Task.EXPR
    feat_dim: int = 1280
    d_model: int = 512
    d_ff: int = 512
    n_layers: int = 4
    n_heads: int = 4
    dropout_p: float = 0.1
    head_hidden: int = 256
    seg_len: int = 64

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        for name in ("feat_dim", "d_model", "d_ff", "n_layers", "n_heads", "head_hidden", "seg_len"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def n_outputs(self) -> int:
        return self.task.n_outputs


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple
    trainable: bool = True
    decay: bool = False


def param_specs(config: ModelConfig) -> list[ParamSpec]:
    """Declaration order of every tensor in the model; checkpoint order too."""
    f, d, ff = config.feat_dim, config.d_model, config.d_ff
    specs = [
        ParamSpec("proj.w", (f, d), True, True),
        ParamSpec("proj.b", (d,)),
        ParamSpec("pos", (config.seg_len, d), trainable=False),
    ]
    for i in range(config.n_layers):
        p = f"layer{i}."
        for nm in ("q", "k", "v", "o"):
            specs.append(ParamSpec(p + f"attn.w{nm}", (d, d), True, True))
            specs.append(ParamSpec(p + f"attn.b{nm}", (d,)))
        specs.append(ParamSpec(p + "ffn.w1", (d, ff), True, True))
        specs.append(ParamSpec(p + "ffn.b1", (ff,)))
        specs.append(ParamSpec(p + "ffn.w2", (ff, d), True, True))
        specs.append(ParamSpec(p + "ffn.b2", (d,)))
        specs.append(ParamSpec(p + "ln1.gamma", (d,)))
        specs.append(ParamSpec(p + "ln1.beta", (d,)))
        specs.append(ParamSpec(p + "ln2.gamma", (d,)))
        specs.append(ParamSpec(p + "ln2.beta", (d,)))
    h = config.head_hidden
    specs.append(ParamSpec("head.w1", (d, h), True, True))
    specs.append(ParamSpec("head.b1", (h,)))
    specs.append(ParamSpec("head.w2", (h, config.n_outputs), True, True))
    specs.append(ParamSpec("head.b2", (config.n_outputs,)))
    return specs


def param_count(config: ModelConfig) -> int:
    """Trainable scalar count (the fixed position table is excluded)."""
    return sum(int(np.prod(s.shape)) for s in param_specs(config) if s.trainable)


class ModelParams:
    """Named tensors in fixed declaration order."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.specs = param_specs(config)
        expected = {s.name: s.shape for s in self.specs}
        if set(tensors) != set(expected):
            missing = set(expected) - set(tensors)
            extra = set(tensors) - set(expected)
            raise ConfigError(f"parameter names mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for s in self.specs:
            if tensors[s.name].shape != s.shape:
                raise ConfigError(f"parameter {s.name}: shape {tensors[s.name].shape} != declared {s.shape}")
            tensors[s.name].requires_grad = s.trainable
        self._tensors = {s.name: tensors[s.name] for s in self.specs}
        n = sum(t.size for nm, t in self._tensors.items() if self[nm].requires_grad)
        assert n == param_count(config)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def items(self):
        return self._tensors.items()

    def trainable(self):
        return [(s.name, self._tensors[s.name]) for s in self.specs if s.trainable]

    def decayed_names(self) -> set:
        return {s.name for s in self.specs if s.decay}

    def zero_grads(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {n: Tensor(t.data, dtype=dtype) for n, t in self.items()})


def positional_encoding(seg_len: int, d_model: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal table: sin on even columns, cos on odd, geometric periods."""
    if seg_len < 1 or d_model < 1:
        raise ConfigError("positional_encoding needs positive extents")
    pos = np.arange(seg_len, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    table = np.zeros((seg_len, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return table.astype(dtype)


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> ModelParams:
    """Glorot-uniform weights, zero biases, unit layer-norm scales.

    Each tensor draws from its own rng child keyed by name, so the result
    is independent of declaration order and bit-reproducible per seed.
    """
    tensors = {}
    for s in param_specs(config):
        if s.name == "pos":
            data = positional_encoding(config.seg_len, config.d_model, dtype)
        elif s.decay:  # 2-d weight matrices
            fan_in, fan_out = s.shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            data = derive_rng(seed, "init", s.name).uniform(-bound, bound, s.shape).astype(dtype)
        elif s.name.endswith(".gamma"):
            data = np.ones(s.shape, dtype)
        else:
            data = np.zeros(s.shape, dtype)
        tensors[s.name] = Tensor(data, requires_grad=s.trainable, dtype=dtype)
    return ModelParams(config, tensors)


# ---------------------------------------------------------------------------
# forward pieces


def _key_bias(pad_mask: np.ndarray, dtype) -> Tensor:
    """[B,1,1,S] additive score bias: 0 at real keys, -1e9 at padding."""
    bias = np.where(pad_mask, 0.0, NEG_BIAS).astype(dtype)
    return Tensor(bias[:, None, None, :])


def multi_head_attention(x, pad_mask, layer_params: dict, n_heads: int, return_weights: bool = False):
    """Self-attention over one batch of segments.

    ``x`` is [B,S,D] (or [S,D]); ``pad_mask`` True marks real frames.
    Masked key columns get a -1e9 score bias before the softmax, which
    drives their attention weight to exactly zero.
    """
    x = astensor(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape((1,) + x.shape)
    b, s, d = x.shape
    if d % n_heads != 0:
        raise DimensionError(f"width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    mask = _normalize_mask(pad_mask, b, s)
    if (~mask).all(axis=1).any():
        raise DataError("attention received an all-padded segment")

    def proj(nm):
        y = matmul(x, layer_params[f"attn.w{nm}"]) + layer_params[f"attn.b{nm}"]
        return y.reshape((b, s, n_heads, dh)).transpose((0, 2, 1, 3))  # [B,h,S,dh]

    q, k, v = proj("q"), proj("k"), proj("v")
    scores = matmul(q, k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    scores = scores + _key_bias(mask, x.dtype)
    attn = softmax(scores)                                   # [B,h,S,S]
    ctx = matmul(attn, v).transpose((0, 2, 1, 3)).reshape((b, s, d))
    out = matmul(ctx, layer_params["attn.wo"]) + layer_params["attn.bo"]
    if squeeze:
        out = out.reshape((s, d))
    if return_weights:
        return out, attn.data.copy()
    return out


def _normalize_mask(pad_mask, b: int, s: int) -> np.ndarray:
    if pad_mask is None:
        return np.ones((b, s), dtype=bool)
    m = np.asarray(pad_mask, dtype=bool)
    if m.ndim == 1:
        m = m[None, :]
    if m.shape != (b, s):
        raise DimensionError(f"pad mask shape {m.shape} does not match batch ({b}, {s})")
    return m


def encoder_layer(x, pad_mask, layer_params: dict, n_heads: int, dropout_p: float = 0.0,
                  rngs=(None, None), training: bool = False):
    """Post-norm residual block: LN(x + Drop(MHA(x))), then LN(y + Drop(FFN(y)))."""
    a = multi_head_attention(x, pad_mask, layer_params, n_heads)
    y = layer_norm(x + dropout(a, dropout_p, rngs[0], training),
                   layer_params["ln1.gamma"], layer_params["ln1.beta"])
    f = matmul(relu(matmul(y, layer_params["ffn.w1"]) + layer_params["ffn.b1"]),
               layer_params["ffn.w2"]) + layer_params["ffn.b2"]
    return layer_norm(y + dropout(f, dropout_p, rngs[1], training),
                      layer_params["ln2.gamma"], layer_params["ln2.beta"])


def _layer_view(params: ModelParams, i: int) -> dict:
    prefix = f"layer{i}."
    return {name[len(prefix):]: t for name, t in params.items() if name.startswith(prefix)}


def forward(params: ModelParams, config: ModelConfig, features, pad_mask=None, *,
            training: bool = False, drop_seed: int = 0, step: int = 0) -> Tensor:
    """Per-frame outputs for one segment [S,F] or a batch [B,S,F].

    Output is [.., S, n_outputs]: raw logits for EXPR/AU, tanh-bounded
    values for VA. Frame count is preserved exactly; rows at padded
    positions are finite but meaningless.
    """
    x = astensor(features)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 3 or x.shape[-1] != config.feat_dim:
        raise DimensionError(
            f"features shape {features.shape if hasattr(features, 'shape') else '?'} "
            f"does not match feat_dim={config.feat_dim}")
    b, s, _ = x.shape
    if s > config.seg_len:
        raise DimensionError(f"segment length {s} exceeds configured {config.seg_len}")
    mask = _normalize_mask(pad_mask, b, s)

    e = matmul(x, params["proj.w"]) + params["proj.b"]
    e = e + Tensor(params["pos"].data[:s])
    for i in range(config.n_layers):
        rngs = (derive_rng(drop_seed, "drop", step, i, 0),
                derive_rng(drop_seed, "drop", step, i, 1)) if training and config.dropout_p > 0 else (None, None)
        e = encoder_layer(e, mask, _layer_view(params, i), config.n_heads,
                          config.dropout_p, rngs, training)
    h = relu(matmul(e, params["head.w1"]) + params["head.b1"])
    out = matmul(h, params["head.w2"]) + params["head.b2"]
    if config.task is Task.VA:
        out = tanh(out)
    if squeeze:
        out = out.reshape(out.shape[1:])
    return out
