"""Challenge metrics: macro F1, per-label mean F1, mean concordance.

Pure float64 functions over already-filtered valid frames. Classes or
label columns with zero support score F1 = 0 rather than being excluded,
which penalizes degenerate predictors.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError


def confusion(preds, truths, n_classes: int) -> np.ndarray:
    """[n_classes, n_classes] counts; rows are truth, columns prediction."""
    preds = np.asarray(preds, np.int64)
    truths = np.asarray(truths, np.int64)
    if preds.shape != truths.shape or preds.ndim != 1:
        raise DimensionError(f"prediction/truth shapes differ: {preds.shape} vs {truths.shape}")
    if preds.size == 0:
        raise DataError("no frames to score")
    for name, a in (("prediction", preds), ("truth", truths)):
        if a.min() < 0 or a.max() >= n_classes:
            raise DataError(f"{name} ids outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), np.int64)
    np.add.at(cm, (truths, preds), 1)
    return cm


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(np.float64)
    fn = cm.sum(axis=1) - tp
    fp = cm.sum(axis=0) - tp
    denom = 2 * tp + fp + fn
    out = np.zeros(cm.shape[0])
    nz = denom > 0
    out[nz] = 2 * tp[nz] / denom[nz]
    return out


def macro_f1_from_confusion(cm: np.ndarray) -> float:
    return float(per_class_f1(cm).mean())


def macro_f1(preds, truths, n_classes: int) -> float:
    """Unweighted mean of per-class F1 over all n_classes."""
    return macro_f1_from_confusion(confusion(preds, truths, n_classes))


def binary_f1(preds, truths) -> float:
    preds = np.asarray(preds, np.int64)
    truths = np.asarray(truths, np.int64)
    tp = int(((preds == 1) & (truths == 1)).sum())
    fp = int(((preds == 1) & (truths == 0)).sum())
    fn = int(((preds == 0) & (truths == 1)).sum())
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom > 0 else 0.0


def per_label_f1(preds, truths) -> np.ndarray:
    preds = np.asarray(preds, np.int64)
    truths = np.asarray(truths, np.int64)
    if preds.shape != truths.shape or preds.ndim != 2:
        raise DimensionError(f"multilabel shapes differ: {preds.shape} vs {truths.shape}")
    if preds.size == 0:
        raise DataError("no frames to score")
    return np.array([binary_f1(preds[:, j], truths[:, j]) for j in range(preds.shape[1])])


def multilabel_f1(preds, truths) -> float:
    """Mean over label columns of positive-class binary F1."""
    return float(per_label_f1(preds, truths).mean())


def ccc(x, y) -> float:
    """Concordance correlation: 2*cov / (var_x + var_y + (mean_x - mean_y)^2).

    Population moments; defined as 0 when both sides are constant.
    """
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionError(f"ccc operand shapes differ: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise DataError("ccc needs at least 2 frames")
    mx, my = x.mean(), y.mean()
    vx, vy = x.var(), y.var()
    denom = vx + vy + (mx - my) ** 2
    if denom == 0.0 or np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        return 0.0  # a constant side has exactly zero covariance
    cov = ((x - mx) * (y - my)).mean()
    return float(2.0 * cov / denom)


def per_dim_ccc(preds, truths) -> np.ndarray:
    preds = np.asarray(preds, np.float64)
    truths = np.asarray(truths, np.float64)
    if preds.shape != truths.shape or preds.ndim != 2 or preds.shape[1] != 2:
        raise DimensionError(f"expected [n, 2] pairs, got {preds.shape} vs {truths.shape}")
    return np.array([ccc(preds[:, d], truths[:, d]) for d in range(2)])


def mean_ccc(preds, truths) -> float:
    """Mean concordance over the valence and arousal columns."""
    return float(per_dim_ccc(preds, truths).mean())


# ---------------------------------------------------------------------------
# reports


def metric_report(task, outputs: np.ndarray, truths: np.ndarray, n_classes: int | None = None):
    """(headline metric, per-component breakdown) for one prediction set."""
    from .model import Task
    task = Task(task)
    if task is Task.EXPR:
        preds = outputs.argmax(axis=1)
        cm = confusion(preds, truths, n_classes or outputs.shape[1])
        per = per_class_f1(cm)
        return macro_f1_from_confusion(cm), {f"class{int(i)}_f1": float(v) for i, v in enumerate(per)}
    if task is Task.AU:
        preds = (outputs > 0.0).astype(np.int64)
        per = per_label_f1(preds, truths)
        return float(per.mean()), {f"au{int(i) + 1}_f1": float(v) for i, v in enumerate(per)}
    per = per_dim_ccc(outputs, truths)
    return float(per.mean()), {"valence_ccc": float(per[0]), "arousal_ccc": float(per[1])}


def write_metric_report(txt_path, csv_path, rows: list[tuple[str, float, dict]]) -> None:
    """rows: (label, headline, per-component dict); writes text + CSV."""
    width = max(len(r[0]) for r in rows)
    lines = [f"{label:<{width}}  {value:.5f}" for label, value, _ in rows]
    Path(txt_path).write_text("\n".join(lines) + "\n")
    keys = sorted({k for _, _, d in rows for k in d})
    csv_lines = ["label,metric," + ",".join(keys)]
    for label, value, d in rows:
        csv_lines.append(",".join([label, f"{value:.10g}"] + [f"{d.get(k, float('nan')):.10g}" for k in keys]))
    Path(csv_path).write_text("\n".join(csv_lines) + "\n")
