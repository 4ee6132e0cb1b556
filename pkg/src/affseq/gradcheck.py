"""Finite-difference verification of the full differentiable path.

Runs every loss and a tiny two-layer encoder (per-parameter and
per-input coordinates) against central differences in float64. The
reported number per item is the max relative error over coordinates;
anything above the tolerance is a failure.
"""

from __future__ import annotations

import numpy as np

from . import losses
from .model import ModelConfig, ModelParams, Task, forward, init_params
from .rng import derive_rng
from .tensor import Tensor, finite_difference_check, gather_rows

TOLERANCE = 1e-3

TINY = dict(feat_dim=12, d_model=32, d_ff=32, n_layers=2, n_heads=2,
            head_hidden=16, seg_len=6, dropout_p=0.0)


def _replace_param(params: ModelParams, name: str, tensor: Tensor) -> ModelParams:
    tensors = {n: (tensor if n == name else t) for n, t in params.items()}
    return ModelParams(params.config, tensors)


def _composed_loss(config: ModelConfig, params: ModelParams, x, mask: np.ndarray,
                   labels, weights):
    """Forward -> gather scored frames -> task loss, all on the tape."""
    out = forward(params, config, x, mask)
    flat = out.reshape((out.shape[0] * out.shape[1], out.shape[2]))
    picked = gather_rows(flat, np.flatnonzero(mask.reshape(-1)))
    if config.task is Task.EXPR:
        return losses.weighted_cross_entropy(picked, labels, weights)
    if config.task is Task.AU:
        return losses.binary_cross_entropy_multilabel(picked, labels, weights)
    return losses.ccc_loss(picked, labels)


def check_losses(seed: int = 0) -> list[tuple[str, float]]:
    rng = derive_rng(seed, "gradcheck", "losses")
    out = []

    logits = Tensor(rng.normal(size=(6, 8)), dtype=np.float64)
    targets = rng.integers(0, 8, size=6)
    weights = rng.uniform(0.5, 3.0, size=8)
    out.append(("weighted_cross_entropy",
                finite_difference_check(
                    lambda z: losses.weighted_cross_entropy(z, targets, weights), logits)))

    z = Tensor(rng.normal(size=(5, 12)), dtype=np.float64)
    y = rng.integers(0, 2, size=(5, 12))
    pw = rng.uniform(1.0, 4.0, size=12)
    out.append(("binary_cross_entropy_multilabel",
                finite_difference_check(
                    lambda t: losses.binary_cross_entropy_multilabel(t, y, pw), z)))

    pred = Tensor(rng.uniform(-0.8, 0.8, size=(7, 2)), dtype=np.float64)
    target = rng.uniform(-0.9, 0.9, size=(7, 2))
    out.append(("ccc_loss",
                finite_difference_check(lambda p: losses.ccc_loss(p, target), pred)))

    out.append(("mse_loss",
                finite_difference_check(lambda p: losses.mse_loss(p, target), pred)))
    return out


def check_encoder(seed: int = 0, task: Task = Task.EXPR, h: float = 1e-4,
                  param_names=None) -> list[tuple[str, float]]:
    """FD-check the composed model+loss against the tape, coordinate by coordinate."""
    config = ModelConfig(task=task, **TINY)
    params = init_params(config, seed).astype(np.float64)
    rng = derive_rng(seed, "gradcheck", "encoder", task.value)
    b, s = 2, config.seg_len
    feats = rng.normal(size=(b, s, config.feat_dim))
    mask = np.ones((b, s), bool)
    mask[1, -2:] = False  # exercise key masking in the same pass
    n_scored = int(mask.sum())
    if task is Task.EXPR:
        labels = rng.integers(0, 8, size=n_scored)
        weights = rng.uniform(0.5, 2.0, size=8)
    elif task is Task.AU:
        labels = rng.integers(0, 2, size=(n_scored, 12))
        weights = None
    else:
        labels = rng.uniform(-0.9, 0.9, size=(n_scored, 2))
        weights = None

    results = [("input", finite_difference_check(
        lambda x: _composed_loss(config, params, x, mask, labels, weights),
        Tensor(feats, dtype=np.float64), h))]

    names = param_names if param_names is not None else [n for n, _ in params.trainable()]
    const_x = Tensor(feats, dtype=np.float64)
    for name in names:
        def f(w, _name=name):
            swapped = _replace_param(params, _name, w)
            return _composed_loss(config, swapped, const_x, mask, labels, weights)
        results.append((name, finite_difference_check(f, params[name], h)))
    return results


def run_suite(seed: int = 0, tolerance: float = TOLERANCE, log=print) -> bool:
    """Full gate: losses plus EXPR- and VA-headed tiny encoders."""
    items = check_losses(seed)
    items += [("expr." + n, e) for n, e in check_encoder(seed, Task.EXPR)]
    items += [("va." + n, e) for n, e in check_encoder(seed, Task.VA,
                                                       param_names=["proj.w", "head.w2", "head.b2"])]
    ok = True
    for name, err in items:
        passed = err <= tolerance
        ok &= passed
        if log is not None:
            log(f"{'PASS' if passed else 'FAIL'}  {name:<42} max rel err {err:.3e}")
    return ok
