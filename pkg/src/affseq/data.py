"""Dataset ingestion and segmentation.

A video arrives as one FSQ1 feature file (dense f32 frames) plus one
annotation CSV; a manifest lists the pairs. Sequences are cut into
fixed-length, zero-padded segments; frames whose labels carry the
invalid sentinel stay in the input (attention context) but are masked
out of loss and metrics via ``valid``.

FSQ1 layout (little-endian): magic "FSQ1", u32 version=1, u32 n_frames,
u32 feat_dim, then n_frames*feat_dim f32 row-major.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .model import Task
from .rng import derive_rng

FSQ1_MAGIC = b"FSQ1"
FSQ1_VERSION = 1
EXPR_CLASSES = 8
AU_COUNT = 12
EXPR_INVALID = -1
VA_INVALID = -5.0
BASIC_CLASSES = range(1, 7)  # ids of the six basic emotions; 0=neutral, 7=other


@dataclass
class FrameSequence:
    """Per-video feature matrix with per-frame labels and validity mask."""

    video_id: str
    features: np.ndarray   # [n, feat_dim] f32
    labels: np.ndarray     # EXPR [n] i64 / AU [n,12] i64 / VA [n,2] f32
    valid: np.ndarray      # [n] bool, False where any label component is the sentinel
    task: Task

    def __post_init__(self):
        n = self.features.shape[0]
        if n < 1:
            raise DataError(f"{self.video_id}: empty sequence")
        if self.labels.shape[0] != n or self.valid.shape[0] != n:
            raise DataError(f"{self.video_id}: {n} feature rows but "
                            f"{self.labels.shape[0]} labels / {self.valid.shape[0]} validity flags")

    @property
    def n_frames(self) -> int:
        return self.features.shape[0]


@dataclass
class Segment:
    """One fixed-length window; ``pad_mask`` True marks real frames."""

    video_id: str
    start: int
    features: np.ndarray
    labels: np.ndarray
    valid: np.ndarray
    pad_mask: np.ndarray


@dataclass(frozen=True)
class ClassWeights:
    weights: np.ndarray  # [n_classes] f64, all positive

    def __post_init__(self):
        if (self.weights <= 0).any():
            raise ConfigError("class weights must be positive")


# ---------------------------------------------------------------------------
# FSQ1 feature files


def write_feature_file(path, features: np.ndarray) -> None:
    feats = np.ascontiguousarray(features, dtype="<f4")
    if feats.ndim != 2:
        raise DataError(f"feature matrix must be 2-d, got shape {feats.shape}")
    n, d = feats.shape
    with open(path, "wb") as fh:
        fh.write(FSQ1_MAGIC)
        fh.write(struct.pack("<III", FSQ1_VERSION, n, d))
        fh.write(feats.tobytes())


def read_feature_file(path) -> tuple[str, np.ndarray]:
    """Parse one FSQ1 file; returns (video_id from the filename stem, [n,d] f32)."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 16:
        raise FormatError(f"{path}: truncated header, {len(blob)} bytes < 16")
    if blob[:4] != FSQ1_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r} at offset 0")
    version, n, d = struct.unpack_from("<III", blob, 4)
    if version != FSQ1_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at offset 4")
    if n < 1 or d < 1:
        raise FormatError(f"{path}: non-positive extents {n}x{d} at offset 8")
    expected = 16 + 4 * n * d
    if len(blob) != expected:
        raise FormatError(f"{path}: payload size mismatch at offset 16: "
                          f"expected {expected} bytes total, found {len(blob)}")
    feats = np.frombuffer(blob, dtype="<f4", offset=16).reshape(n, d)
    if not np.isfinite(feats).all():
        bad = np.argwhere(~np.isfinite(feats))[0]
        raise FormatError(f"{path}: non-finite value at frame {bad[0]}, column {bad[1]}")
    return path.stem, feats.astype(np.float32)


# ---------------------------------------------------------------------------
# annotation CSVs


def _au_header():
    return ["frame"] + [f"au{i}" for i in range(1, AU_COUNT + 1)]

_HEADERS = {
    Task.EXPR: ["frame", "label"],
    Task.AU: _au_header(),
    Task.VA: ["frame", "valence", "arousal"],
}


def read_annotations(path, task: Task) -> tuple[np.ndarray, np.ndarray]:
    """Parse one per-video CSV; returns (labels, valid) in frame order."""
    task = Task(task)
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != _HEADERS[task]:
        raise FormatError(f"{path}: header {rows[0] if rows else '(empty)'} "
                          f"does not match {_HEADERS[task]}")
    body = rows[1:]
    if not body:
        raise FormatError(f"{path}: no annotation rows")
    labels, valid = [], []
    for i, row in enumerate(body):
        if len(row) != len(_HEADERS[task]):
            raise FormatError(f"{path}: row {i} has {len(row)} fields, expected {len(_HEADERS[task])}")
        if int(row[0]) != i:
            raise FormatError(f"{path}: frame index {row[0]} at row {i}; indices must be 0-based and dense")
        if task is Task.EXPR:
            lab = int(row[1])
            if lab != EXPR_INVALID and not 0 <= lab < EXPR_CLASSES:
                raise DataError(f"{path}: expression label {lab} out of range at frame {i}")
            labels.append(lab)
            valid.append(lab != EXPR_INVALID)
        elif task is Task.AU:
            vec = [int(v) for v in row[1:]]
            if any(v not in (-1, 0, 1) for v in vec):
                raise DataError(f"{path}: AU value outside {{-1,0,1}} at frame {i}")
            labels.append(vec)
            valid.append(all(v != -1 for v in vec))
        else:
            pair = [float(row[1]), float(row[2])]
            ok = all(v == VA_INVALID or -1.0 <= v <= 1.0 for v in pair)
            if not ok:
                raise DataError(f"{path}: valence/arousal {pair} out of range at frame {i}")
            labels.append(pair)
            valid.append(all(v != VA_INVALID for v in pair))
    dtype = np.float32 if task is Task.VA else np.int64
    return np.asarray(labels, dtype=dtype), np.asarray(valid, dtype=bool)


def write_annotations(path, task: Task, labels: np.ndarray) -> None:
    task = Task(task)
    labels = np.asarray(labels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_HEADERS[task])
        for i in range(labels.shape[0]):
            if task is Task.EXPR:
                w.writerow([i, int(labels[i])])
            elif task is Task.AU:
                w.writerow([i] + [int(v) for v in labels[i]])
            else:
                w.writerow([i] + [f"{float(v):.6f}" for v in labels[i]])


# ---------------------------------------------------------------------------
# manifests


def load_manifest(path) -> list[tuple[str, Path, Path]]:
    """Tab-separated lines: video_id, feature path, annotation path."""
    path = Path(path)
    out = []
    for ln, line in enumerate(path.read_text().splitlines()):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}: line {ln + 1} has {len(parts)} fields, expected 3")
        vid, feat, ann = parts
        out.append((vid, path.parent / feat, path.parent / ann))
    if not out:
        raise FormatError(f"{path}: empty manifest")
    return out


def write_manifest(path, entries) -> None:
    path = Path(path)
    lines = []
    for vid, feat, ann in entries:
        feat = Path(feat)
        ann = Path(ann)
        try:
            feat = feat.relative_to(path.parent)
            ann = ann.relative_to(path.parent)
        except ValueError:
            pass
        lines.append(f"{vid}\t{feat}\t{ann}")
    path.write_text("\n".join(lines) + "\n")


def load_dataset(manifest_path, task: Task) -> list[FrameSequence]:
    task = Task(task)
    seqs = []
    for vid, feat_path, ann_path in load_manifest(manifest_path):
        _, feats = read_feature_file(feat_path)
        labels, valid = read_annotations(ann_path, task)
        if feats.shape[0] != labels.shape[0]:
            raise DataError(f"{vid}: {feats.shape[0]} feature frames but {labels.shape[0]} annotation rows")
        seqs.append(FrameSequence(vid, feats, labels, valid, task))
    return seqs


# ---------------------------------------------------------------------------
# segmentation


def segment_sequence(seq: FrameSequence, seg_len: int, drop_all_invalid: bool = True) -> list[Segment]:
    """Non-overlapping windows; only the last may be zero-padded.

    Windows with zero valid frames are dropped when ``drop_all_invalid``
    (training path); the prediction path keeps them so every frame gets
    an output row.
    """
    if seg_len < 1:
        raise ConfigError(f"seg_len must be positive, got {seg_len}")
    n = seq.n_frames
    segments = []
    for start in range(0, n, seg_len):
        stop = min(start + seg_len, n)
        take = stop - start
        pad = seg_len - take
        feats = seq.features[start:stop]
        labels = seq.labels[start:stop]
        valid = seq.valid[start:stop]
        if pad:
            feats = np.concatenate([feats, np.zeros((pad,) + feats.shape[1:], feats.dtype)])
            labels = np.concatenate([labels, np.zeros((pad,) + labels.shape[1:], labels.dtype)])
            valid = np.concatenate([valid, np.zeros(pad, bool)])
        pad_mask = np.arange(seg_len) < take
        if drop_all_invalid and not (valid & pad_mask).any():
            continue
        segments.append(Segment(seq.video_id, start, feats, labels, valid & pad_mask, pad_mask))
    return segments


def segment_dataset(seqs, seg_len: int, drop_all_invalid: bool = True) -> list[Segment]:
    out = []
    for seq in seqs:
        out.extend(segment_sequence(seq, seg_len, drop_all_invalid))
    return out


# ---------------------------------------------------------------------------
# synthetic merge


def merge_synthetic(real: list[FrameSequence], synthetic: list[FrameSequence],
                    seg_len: int, seed: int) -> list[FrameSequence]:
    """Append synthetic stills, grouped into seg_len-long pseudo-sequences.

    Synthetic frames must carry one of the six basic classes; the grouping
    order is a pure function of the seed so merges replay exactly.
    """
    if not synthetic:
        return list(real)
    feats, labels = [], []
    for seq in synthetic:
        if seq.task is not Task.EXPR:
            raise DataError(f"{seq.video_id}: synthetic merge is an expression-task operation")
        bad = [int(v) for v in np.unique(seq.labels) if int(v) not in BASIC_CLASSES]
        if bad:
            raise DataError(f"{seq.video_id}: synthetic labels {bad} outside the six basic classes")
        feats.append(seq.features)
        labels.append(seq.labels)
    feats = np.concatenate(feats)
    labels = np.concatenate(labels)
    order = derive_rng(seed, "merge").permutation(len(labels))
    feats, labels = feats[order], labels[order]

    merged = list(real)
    for i in range(math.ceil(len(labels) / seg_len)):
        sl = slice(i * seg_len, (i + 1) * seg_len)
        merged.append(FrameSequence(f"syn{i:05d}", feats[sl], labels[sl],
                                    np.ones(len(labels[sl]), bool), Task.EXPR))
    return merged


# ---------------------------------------------------------------------------
# class weights


def count_labels(seqs, n_classes: int) -> np.ndarray:
    counts = np.zeros(n_classes, dtype=np.int64)
    for seq in seqs:
        ids = seq.labels[seq.valid]
        counts += np.bincount(ids, minlength=n_classes)[:n_classes]
    return counts


def compute_class_weights(labels, n_classes: int) -> ClassWeights:
    """Inverse-frequency weights w_c = N / (C * n_c); all-ones when balanced."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise DataError("cannot compute class weights from an empty label set")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise DataError(f"label ids outside [0, {n_classes})")
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    if (counts == 0).any():
        empty = np.flatnonzero(counts == 0).tolist()
        raise ConfigError(
            f"classes {empty} have no samples; merge synthetic data or drop them before weighting")
    return ClassWeights(labels.size / (n_classes * counts))


def au_positive_weights(seqs) -> np.ndarray:
    """Per-AU negative/positive count ratio, clipped to at least 1."""
    pos = np.zeros(AU_COUNT, np.float64)
    neg = np.zeros(AU_COUNT, np.float64)
    for seq in seqs:
        lab = seq.labels[seq.valid]
        pos += (lab == 1).sum(axis=0)
        neg += (lab == 0).sum(axis=0)
    if (pos == 0).any():
        raise ConfigError(f"AUs {np.flatnonzero(pos == 0).tolist()} never active; cannot weight")
    return np.maximum(neg / pos, 1.0)
