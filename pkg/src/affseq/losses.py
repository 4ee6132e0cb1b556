"""Task losses over valid-frame logits.

All three are built from tape primitives, so their gradients fall out of
the same reverse pass the encoder uses and can be finite-difference
checked end to end. Callers pass only valid, real frames.
"""

from __future__ import annotations

import numpy as np

from .data import ClassWeights
from .errors import DataError, DimensionError
from .tensor import Tensor, astensor, gather_rows, log_softmax, mul, neg, softplus


def weighted_cross_entropy(logits, targets, weights) -> Tensor:
    """Weighted mean of -log softmax(logits)[target].

    Per-frame weight is the target class's weight; the sum is normalized
    by the total weight, so all-ones weights reduce to plain CE.
    """
    logits = astensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be [n, classes], got {logits.shape}")
    n, c = logits.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (n,):
        raise DimensionError(f"targets shape {targets.shape} does not match {n} frames")
    if n == 0:
        raise DataError("empty batch: no valid frames to score")
    if targets.min() < 0 or targets.max() >= c:
        raise DataError(f"targets outside [0, {c})")
    w = weights.weights if isinstance(weights, ClassWeights) else np.asarray(weights, np.float64)
    if w.shape != (c,):
        raise DimensionError(f"weights shape {w.shape} does not match {c} classes")
    picked = np.zeros((n, c))
    picked[np.arange(n), targets] = w[targets]
    total = float(w[targets].sum())
    return mul(mul(log_softmax(logits), Tensor(picked, dtype=logits.dtype)).sum(), -1.0 / total)


def binary_cross_entropy_multilabel(logits, targets, pos_weights=None) -> Tensor:
    """Mean over frames x labels of pos_w*y*softplus(-z) + (1-y)*softplus(z)."""
    logits = astensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be [n, labels], got {logits.shape}")
    n, a = logits.shape
    y = np.asarray(targets, np.float64)
    if y.shape != (n, a):
        raise DimensionError(f"targets shape {y.shape} does not match logits {logits.shape}")
    if not np.isin(y, (0.0, 1.0)).all():
        raise DataError("multilabel targets must be 0/1 on valid frames")
    pw = np.ones(a) if pos_weights is None else np.asarray(pos_weights, np.float64)
    if pw.shape != (a,):
        raise DimensionError(f"pos_weights shape {pw.shape} does not match {a} labels")
    pos = mul(softplus(neg(logits)), Tensor((pw * y), dtype=logits.dtype))
    negt = mul(softplus(logits), Tensor((1.0 - y), dtype=logits.dtype))
    return (pos + negt).mean()


def _ccc_1d(x, y_col: np.ndarray):
    """Concordance of one prediction column against a constant target column."""
    my = float(y_col.mean(dtype=np.float64))
    vy = float(y_col.var(dtype=np.float64))
    if vy == 0.0 and np.ptp(x.data) == 0.0:
        # both sides constant: concordance defined as zero
        return astensor(np.asarray(0.0, dtype=x.dtype))
    mx = x.mean()
    dx = x - mx
    cov = mul(dx, Tensor(y_col - my, dtype=x.dtype)).mean()
    varx = mul(dx, dx).mean()
    mdiff = mx - float(my)
    denom = varx + mul(mdiff, mdiff) + vy
    return mul(2.0, cov) / denom


def ccc_loss(pred, target) -> Tensor:
    """1 - mean concordance over the valence and arousal columns."""
    pred = astensor(pred)
    target = np.asarray(target, np.float64)
    if pred.ndim != 2 or pred.shape[1] != 2:
        raise DimensionError(f"predictions must be [n, 2], got {pred.shape}")
    if target.shape != pred.shape:
        raise DimensionError(f"target shape {target.shape} does not match {pred.shape}")
    if pred.shape[0] < 2:
        raise DataError("concordance needs at least 2 frames")
    cols = pred.transpose((1, 0))  # [2, n]
    c0 = _ccc_1d(gather_rows(cols, [0]), target[:, 0])
    c1 = _ccc_1d(gather_rows(cols, [1]), target[:, 1])
    return 1.0 - mul(c0 + c1, 0.5)


def mse_loss(pred, target) -> Tensor:
    """Plain mean squared error; alternative regression objective."""
    pred = astensor(pred)
    d = pred - Tensor(np.asarray(target), dtype=pred.dtype)
    return mul(d, d).mean()
