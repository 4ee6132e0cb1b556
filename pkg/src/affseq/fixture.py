"""Synthetic mini-datasets for tests and end-to-end runs.

Features for class c are drawn from N(mu_c, noise_var * I) with mu_c a
fixed random unit direction scaled by ``mean_scale``, so the task is
separable by construction and a small model must overfit it. Labels are
piecewise-constant runs inside each video. Everything is a pure function
of the seed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import (FrameSequence, write_annotations, write_feature_file, write_manifest)
from .model import Task
from .rng import derive_rng


def class_means(n_classes: int, feat_dim: int, seed: int, scale: float = 2.0) -> np.ndarray:
    rng = derive_rng(seed, "fixture", "means")
    dirs = rng.normal(size=(n_classes, feat_dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return (scale * dirs).astype(np.float32)


def make_synthetic_fixture(n_videos: int, frames_range: tuple[int, int], feat_dim: int,
                           n_classes: int, seed: int, *, class_probs=None,
                           run_range: tuple[int, int] = (16, 48), mean_scale: float = 2.0,
                           noise_var: float = 0.1, id_prefix: str = "vid",
                           means: np.ndarray | None = None) -> list[FrameSequence]:
    """Expression-labeled videos with run-structured labels; deterministic in seed."""
    if n_classes < 2:
        raise ValueError("fixture needs at least 2 classes")
    lo, hi = frames_range
    if not 1 <= lo <= hi:
        raise ValueError(f"bad frames_range {frames_range}")
    if means is None:
        means = class_means(n_classes, feat_dim, seed, mean_scale)
    std = float(np.sqrt(noise_var))
    if class_probs is not None:
        class_probs = np.asarray(class_probs, np.float64)
        class_probs = class_probs / class_probs.sum()
    seqs = []
    for v in range(n_videos):
        rng = derive_rng(seed, "fixture", "video", v)
        n = int(rng.integers(lo, hi + 1))
        labels = np.empty(n, np.int64)
        pos = 0
        while pos < n:
            run = int(rng.integers(run_range[0], run_range[1] + 1))
            c = int(rng.choice(n_classes, p=class_probs))
            labels[pos:pos + run] = c
            pos += run
        feats = (means[labels] + rng.normal(scale=std, size=(n, feat_dim))).astype(np.float32)
        seqs.append(FrameSequence(f"{id_prefix}{v:03d}", feats, labels, np.ones(n, bool), Task.EXPR))
    return seqs


def make_synthetic_stills(n_images: int, feat_dim: int, n_classes: int, seed: int, *,
                          mean_scale: float = 2.0, noise_var: float = 0.1,
                          group: int = 512) -> list[FrameSequence]:
    """Single-image set restricted to the six basic classes (ids 1..6)."""
    means = class_means(n_classes, feat_dim, seed, mean_scale)
    rng = derive_rng(seed, "fixture", "stills")
    labels = rng.integers(1, min(7, n_classes), size=n_images)
    feats = (means[labels] + rng.normal(scale=np.sqrt(noise_var), size=(n_images, feat_dim))
             ).astype(np.float32)
    seqs = []
    for i in range(0, n_images, group):
        sl = slice(i, min(i + group, n_images))
        seqs.append(FrameSequence(f"still{i // group:03d}", feats[sl], labels[sl],
                                  np.ones(sl.stop - sl.start, bool), Task.EXPR))
    return seqs


# class -> deterministic AU pattern / VA anchor, so one feature layout
# serves all three tasks.

def au_pattern(c: int) -> np.ndarray:
    bits = [(c >> b) & 1 for b in range(3)]
    return np.array((bits * 4)[:12], np.int64)


def va_anchor(c: int, n_classes: int) -> np.ndarray:
    angle = 2.0 * np.pi * c / n_classes
    return np.array([0.7 * np.cos(angle), 0.7 * np.sin(angle)], np.float32)


def relabel(seqs: list[FrameSequence], task: Task, n_classes: int, seed: int) -> list[FrameSequence]:
    """Map class-labeled sequences onto AU patterns or VA anchors."""
    task = Task(task)
    if task is Task.EXPR:
        return seqs
    out = []
    for seq in seqs:
        if task is Task.AU:
            labels = np.stack([au_pattern(int(c)) for c in seq.labels])
        else:
            rng = derive_rng(seed, "fixture", "va", seq.video_id)
            jitter = rng.normal(scale=0.05, size=(seq.n_frames, 2))
            anchors = np.stack([va_anchor(int(c), n_classes) for c in seq.labels])
            labels = np.clip(anchors + jitter, -1.0, 1.0).astype(np.float32)
        out.append(FrameSequence(seq.video_id, seq.features, labels, seq.valid.copy(), task))
    return out


def write_dataset(out_dir, seqs: list[FrameSequence], manifest_name: str) -> Path:
    """FSQ1 + CSV per video plus a manifest; byte-identical per input."""
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    entries = []
    for seq in seqs:
        feat = out_dir / "features" / f"{seq.video_id}.fsq"
        ann = out_dir / "labels" / f"{seq.video_id}.csv"
        write_feature_file(feat, seq.features)
        write_annotations(ann, seq.task, seq.labels)
        entries.append((seq.video_id, feat, ann))
    manifest = out_dir / manifest_name
    write_manifest(manifest, entries)
    return manifest


def write_fixture(out_dir, seed: int, *, task: Task = Task.EXPR, n_videos: int = 40,
                  frames_range: tuple[int, int] = (96, 192), feat_dim: int = 32,
                  n_classes: int = 8, n_synthetic: int = 400, val_fraction: float = 0.2,
                  class_probs=None, noise_var: float = 0.1,
                  run_range: tuple[int, int] = (16, 48)) -> dict:
    """Write train/val manifests plus a basic-class stills set; returns the paths."""
    task = Task(task)
    n_val = max(1, int(round(n_videos * val_fraction)))
    means = class_means(n_classes, feat_dim, seed)  # shared geometry for both splits
    train = make_synthetic_fixture(n_videos, frames_range, feat_dim, n_classes, seed,
                                   class_probs=class_probs, noise_var=noise_var,
                                   run_range=run_range, means=means)
    val = make_synthetic_fixture(n_val, frames_range, feat_dim, n_classes, seed + 1,
                                 class_probs=class_probs, noise_var=noise_var,
                                 run_range=run_range, id_prefix="val", means=means)
    train = relabel(train, task, n_classes, seed)
    val = relabel(val, task, n_classes, seed + 1)
    out_dir = Path(out_dir)
    paths = {
        "train": write_dataset(out_dir / "train", train, "manifest.txt"),
        "val": write_dataset(out_dir / "val", val, "manifest.txt"),
    }
    if task is Task.EXPR and n_synthetic > 0:
        stills = make_synthetic_stills(n_synthetic, feat_dim, n_classes, seed)
        paths["synthetic"] = write_dataset(out_dir / "synthetic", stills, "manifest.txt")
    return paths
