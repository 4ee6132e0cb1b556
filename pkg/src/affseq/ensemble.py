"""Soft average voting over per-frame model outputs.

Members are fused by a weighted arithmetic mean of their raw per-frame
logit vectors (bounded values for the regression task); the decision
rule runs after the average. Logit files use an FSQ1-style container:
magic "LGT1", u32 version=1, u32 n_frames, u32 n_outputs, f32 payload,
named ``<video_id>.<model_id>.lgt``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError, FormatError
from .model import Task
from . import metrics as metrics_mod

LGT_MAGIC = b"LGT1"
LGT_VERSION = 1


@dataclass
class LogitSet:
    """One model's per-frame outputs over one whole video."""

    model_id: str
    video_id: str
    values: np.ndarray  # [n_frames, n_outputs] f32

    def __post_init__(self):
        if self.values.ndim != 2:
            raise DimensionError(f"logit matrix must be 2-d, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise DataError(f"{self.video_id}.{self.model_id}: non-finite logits")
        if "." in self.model_id:
            raise DataError(f"model id {self.model_id!r} must not contain '.'")


@dataclass(frozen=True)
class EnsembleSpec:
    """Ordered members plus positive weights normalized to mean one."""

    member_ids: tuple
    weights: tuple

    @classmethod
    def of(cls, member_ids, weights=None) -> "EnsembleSpec":
        ids = tuple(member_ids)
        if not ids:
            raise DataError("ensemble needs at least one member")
        if weights is None:
            w = np.ones(len(ids))
        else:
            w = np.asarray(list(weights), np.float64)
            if w.shape != (len(ids),):
                raise DimensionError(f"{len(ids)} members but {w.size} weights")
            if (w <= 0).any():
                raise DataError("member weights must be positive")
            w = w * (len(ids) / w.sum())
        return cls(ids, tuple(float(x) for x in w))


def write_logits(out_dir, ls: LogitSet) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{ls.video_id}.{ls.model_id}.lgt"
    vals = np.ascontiguousarray(ls.values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(LGT_MAGIC)
        fh.write(struct.pack("<III", LGT_VERSION, vals.shape[0], vals.shape[1]))
        fh.write(vals.tobytes())
    return path


def read_logits(path) -> LogitSet:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header")
    if blob[:4] != LGT_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r} at offset 0")
    version, n, c = struct.unpack_from("<III", blob, 4)
    if version != LGT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if len(blob) != 16 + 4 * n * c:
        raise FormatError(f"{path}: payload size mismatch: header says {n}x{c}")
    stem = path.name[: -len(".lgt")] if path.name.endswith(".lgt") else path.stem
    video_id, _, model_id = stem.rpartition(".")
    if not video_id or not model_id:
        raise FormatError(f"{path}: filename must look like <video_id>.<model_id>.lgt")
    values = np.frombuffer(blob, dtype="<f4", offset=16).reshape(n, c).astype(np.float32)
    return LogitSet(model_id, video_id, values)


def load_logit_dir(path) -> dict[str, LogitSet]:
    """All .lgt files of one model run, keyed by video id."""
    path = Path(path)
    out = {}
    for p in sorted(path.glob("*.lgt")):
        ls = read_logits(p)
        if ls.video_id in out:
            raise DataError(f"{path}: duplicate logits for video {ls.video_id}")
        out[ls.video_id] = ls
    if not out:
        raise DataError(f"{path}: no .lgt files")
    return out


def soft_average(members: list[LogitSet], weights=None) -> LogitSet:
    """Weighted per-frame mean of member outputs for one video."""
    if not members:
        raise DataError("soft_average needs at least one member")
    first = members[0]
    spec = EnsembleSpec.of([m.model_id for m in members], weights)
    for m in members[1:]:
        if m.video_id != first.video_id:
            raise DataError(f"member {m.model_id}: video {m.video_id} != {first.video_id}")
        if m.values.shape != first.values.shape:
            raise DataError(f"member {m.model_id}: logits {m.values.shape} != {first.values.shape}")
    acc = np.zeros(first.values.shape, np.float64)
    for m, w in zip(members, spec.weights):
        acc += w * m.values
    fused = (acc / sum(spec.weights)).astype(np.float32)
    return LogitSet("+".join(spec.member_ids), first.video_id, fused)


def decide(task: Task, values: np.ndarray) -> np.ndarray:
    task = Task(task)
    if task is Task.EXPR:
        return values.argmax(axis=1)
    if task is Task.AU:
        return (values > 0.0).astype(np.int64)
    return values


def _subset_label(ids) -> str:
    return "+".join(ids)


def ensemble_eval(members: dict[str, dict[str, LogitSet]], truths_by_video: dict,
                  task: Task, subsets: str = "all") -> list[tuple[str, float, dict]]:
    """Task metric for member subsets.

    ``members`` maps model_id -> video_id -> LogitSet; ``truths_by_video``
    maps video_id -> (labels, valid). With ``subsets="all"`` the report
    covers every non-empty subset (singletons, pairs, ..., full set);
    ``subsets="full"`` scores only the complete ensemble.
    """
    task = Task(task)
    ids = list(members)
    video_ids = sorted(truths_by_video)
    for mid in ids:
        have = set(members[mid])
        if have != set(video_ids):
            raise DataError(f"member {mid}: video set mismatch "
                            f"(missing {sorted(set(video_ids) - have)}, extra {sorted(have - set(video_ids))})")
    if subsets == "all":
        pick = [c for r in range(1, len(ids) + 1) for c in combinations(ids, r)]
    elif subsets == "full":
        pick = [tuple(ids)]
    else:
        raise DataError(f"unknown subset mode {subsets!r}")

    rows = []
    for chosen in pick:
        outs, labs = [], []
        for vid in video_ids:
            fused = soft_average([members[m][vid] for m in chosen])
            labels, valid = truths_by_video[vid]
            if fused.values.shape[0] != labels.shape[0]:
                raise DataError(f"{vid}: {fused.values.shape[0]} logit frames but "
                                f"{labels.shape[0]} annotation rows")
            if valid.any():
                outs.append(fused.values[valid])
                labs.append(labels[valid])
        if not outs:
            raise DataError("no valid frames across the ensemble inputs")
        out = np.concatenate(outs)
        lab = np.concatenate(labs)
        headline, per = metrics_mod.metric_report(task, out, lab)
        rows.append((_subset_label(chosen), headline, per))
    return rows
