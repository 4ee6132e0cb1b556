"""Epoch loop, evaluation, and checkpoint I/O.

The batch unit is the segment: a batch of B segments is one [B, S, F]
forward. Only frames that are both real (not padding) and validly
labeled enter the loss; everything else contributes exactly zero
gradient because it is never gathered.

Checkpoint layout (little-endian): magic "ACP1", u32 version=1, u32
config-text length + UTF-8 "key = value" lines, u32 tensor count, then
per tensor: u16 name length + name, u8 dtype code (4=f32, 8=f64), u8
rank, u32 dims, raw payload. Declaration order is fixed by the model.
"""

from __future__ import annotations

import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .data import ClassWeights, Segment
from .errors import DataError, FormatError
from . import losses
from . import metrics as metrics_mod
from .model import ModelConfig, ModelParams, Task, forward, init_params, param_specs
from .optim import OptimizerState, TrainConfig, adam_step
from .rng import derive_rng
from .tensor import Graph, Tensor, gather_rows

CKPT_MAGIC = b"ACP1"
CKPT_VERSION = 1


# ---------------------------------------------------------------------------
# batching


def _stack_batch(segments: list[Segment]):
    feats = np.stack([s.features for s in segments])
    labels = np.stack([s.labels for s in segments])
    score = np.stack([s.valid for s in segments])   # valid already implies real
    pad = np.stack([s.pad_mask for s in segments])
    return feats, labels, score, pad


def _batch_loss(logits, labels, score_mask, task: Task, weights, cfg: TrainConfig):
    """Gather scored frames out of [B,S,C] logits and apply the task loss."""
    b, s, c = logits.shape
    idx = np.flatnonzero(score_mask.reshape(-1))
    if idx.size == 0:
        raise DataError("batch has no scorable frames")
    flat = gather_rows(logits.reshape((b * s, c)), idx)
    lab = labels.reshape((b * s,) + labels.shape[2:])[idx]
    if task is Task.EXPR:
        w = weights if weights is not None else np.ones(c)
        return flat, lab, losses.weighted_cross_entropy(flat, lab, w)
    if task is Task.AU:
        return flat, lab, losses.binary_cross_entropy_multilabel(flat, lab, weights)
    if cfg is not None and cfg.va_loss == "mse":
        return flat, lab, losses.mse_loss(flat, lab)
    return flat, lab, losses.ccc_loss(flat, lab)


# ---------------------------------------------------------------------------
# evaluation / prediction


def predict_video(params: ModelParams, config: ModelConfig, segments: list[Segment],
                  batch: int = 64) -> np.ndarray:
    """Per-frame outputs [n_frames, n_outputs] for one video's segment list."""
    if not segments:
        raise DataError("predict_video needs at least one segment")
    rows = []
    for i in range(0, len(segments), batch):
        chunk = segments[i:i + batch]
        feats = np.stack([s.features for s in chunk])
        pad = np.stack([s.pad_mask for s in chunk])
        out = forward(params, config, feats, pad).data
        for j, seg in enumerate(chunk):
            rows.append(out[j][seg.pad_mask])
    return np.concatenate(rows)


def evaluate(params: ModelParams, config: ModelConfig, segments_by_video: dict,
             weights=None, cfg: TrainConfig | None = None) -> dict:
    """Loss + task metric over every valid frame of the given videos."""
    task = config.task
    outs, labs = [], []
    for vid, segs in segments_by_video.items():
        logits = predict_video(params, config, segs)
        valid = np.concatenate([s.valid[s.pad_mask] for s in segs])
        labels = np.concatenate([s.labels[s.pad_mask] for s in segs])
        if valid.any():
            outs.append(logits[valid])
            labs.append(labels[valid])
    if not outs:
        raise DataError("no valid frames to evaluate")
    out = np.concatenate(outs)
    lab = np.concatenate(labs)
    if task is Task.EXPR:
        w = weights if weights is not None else np.ones(config.n_outputs)
        loss = losses.weighted_cross_entropy(Tensor(out), lab, w).item()
        preds = out.argmax(axis=1)
        metric = metrics_mod.macro_f1(preds, lab, config.n_outputs)
    elif task is Task.AU:
        loss = losses.binary_cross_entropy_multilabel(Tensor(out), lab, weights).item()
        preds = (out > 0.0).astype(np.int64)
        metric = metrics_mod.multilabel_f1(preds, lab)
    else:
        if out.shape[0] >= 2:
            loss_fn = losses.mse_loss if (cfg is not None and cfg.va_loss == "mse") else losses.ccc_loss
            loss = loss_fn(Tensor(out), lab).item()
        else:
            loss = float("nan")
        preds = out
        metric = metrics_mod.mean_ccc(out, lab)
    return {"loss": loss, "metric": metric, "preds": preds, "truths": lab, "outputs": out}


def group_by_video(segments: list[Segment]) -> dict:
    by_vid: dict[str, list[Segment]] = {}
    for seg in segments:
        by_vid.setdefault(seg.video_id, []).append(seg)
    for segs in by_vid.values():
        segs.sort(key=lambda s: s.start)
    return by_vid


# ---------------------------------------------------------------------------
# the loop


def train(params: ModelParams, config: ModelConfig, cfg: TrainConfig,
          train_segments: list[Segment], val_segments: list[Segment] | None = None,
          class_weights: ClassWeights | np.ndarray | None = None,
          out_dir=None, log=print) -> tuple[ModelParams, list[dict]]:
    """Run the epoch loop; returns params plus one log row per (epoch, split).

    Deterministic in (dataset, configs, seed): shuffle order, dropout
    masks, and init all derive from the run seed. Saves final and
    best-validation checkpoints when ``out_dir`` is given.
    """
    if not train_segments:
        raise DataError("training set is empty")
    weights = class_weights.weights if isinstance(class_weights, ClassWeights) else class_weights
    if config.task is Task.EXPR and not cfg.class_weighting:
        weights = None
    state = OptimizerState.for_params(params)
    train_by_vid = group_by_video(train_segments)
    val_by_vid = group_by_video(val_segments) if val_segments else None
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    best_metric = -np.inf
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = derive_rng(cfg.seed, "shuffle", epoch).permutation(len(train_segments))
        for i in range(0, len(order), cfg.batch_size):
            batch = [train_segments[j] for j in order[i:i + cfg.batch_size]]
            feats, labels, score, pad = _stack_batch(batch)
            with Graph() as g:
                logits = forward(params, config, feats, pad, training=True,
                                 drop_seed=cfg.seed, step=step)
                _, _, loss = _batch_loss(logits, labels, score, config.task, weights, cfg)
            g.backward(loss, params=[t for _, t in params.trainable()])
            adam_step(params, state, cfg)
            params.zero_grads()
            step += 1
        ev = evaluate(params, config, train_by_vid, weights, cfg)
        rows.append({"epoch": epoch, "split": "train", "loss": ev["loss"], "metric": ev["metric"]})
        line = f"epoch {epoch:3d}  train loss {ev['loss']:.4f} metric {ev['metric']:.4f}"
        if val_by_vid:
            ev_val = evaluate(params, config, val_by_vid, weights, cfg)
            rows.append({"epoch": epoch, "split": "val",
                         "loss": ev_val["loss"], "metric": ev_val["metric"]})
            line += f"  val loss {ev_val['loss']:.4f} metric {ev_val['metric']:.4f}"
            if out_dir is not None and ev_val["metric"] > best_metric:
                best_metric = ev_val["metric"]
                save_checkpoint(out_dir / "model_best.ckpt", params, config, cfg)
        if log is not None:
            log(line)
    if out_dir is not None:
        save_checkpoint(out_dir / "model_final.ckpt", params, config, cfg)
        write_epoch_log(out_dir / "log.csv", rows)
    return params, rows


def write_epoch_log(path, rows: list[dict]) -> None:
    lines = ["epoch,split,loss,metric"]
    for r in rows:
        lines.append(f"{r['epoch']},{r['split']},{r['loss']:.10g},{r['metric']:.10g}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# checkpoints


def _config_text(config: ModelConfig, cfg: TrainConfig | None) -> str:
    pairs = [("kind", "model")] + [(k, v) for k, v in asdict(config).items()]
    if cfg is not None:
        pairs += [(k, v) for k, v in asdict(cfg).items()]
    return "".join(f"{k} = {v.value if isinstance(v, Task) else v}\n" for k, v in pairs)


def save_checkpoint(path, params: ModelParams, config: ModelConfig,
                    cfg: TrainConfig | None = None) -> None:
    text = _config_text(config, cfg).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(text)))
        fh.write(text)
        items = list(params.items())
        fh.write(struct.pack("<I", len(items)))
        for name, t in items:
            nb = name.encode()
            code = t.data.dtype.itemsize
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", code, t.data.ndim))
            fh.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            fh.write(np.ascontiguousarray(t.data, dtype=f"<f{code}").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig, dict]:
    """Reverse of save_checkpoint; validates magic, shapes, and counts."""
    path = Path(path)
    blob = path.read_bytes()

    def need(n, what):
        if off + n > len(blob):
            raise FormatError(f"{path}: truncated while reading {what} at offset {off}")

    off = 0
    need(12, "header")
    if blob[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r} at offset 0")
    version, text_len = struct.unpack_from("<II", blob, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 12
    need(text_len, "config text")
    meta = {}
    for line in blob[off:off + text_len].decode().splitlines():
        k, _, v = line.partition(" = ")
        meta[k.strip()] = v.strip()
    off += text_len
    need(4, "tensor count")
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4

    model_fields = {
        "task": Task(meta["task"]), "feat_dim": int(meta["feat_dim"]),
        "d_model": int(meta["d_model"]), "d_ff": int(meta["d_ff"]),
        "n_layers": int(meta["n_layers"]), "n_heads": int(meta["n_heads"]),
        "dropout_p": float(meta["dropout_p"]), "head_hidden": int(meta["head_hidden"]),
        "seg_len": int(meta["seg_len"]),
    }
    config = ModelConfig(**model_fields)
    specs = param_specs(config)
    if count != len(specs):
        raise FormatError(f"{path}: {count} tensors but config declares {len(specs)}")
    tensors = {}
    for spec in specs:
        need(2, "name length")
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        need(nlen, "name")
        name = blob[off:off + nlen].decode()
        off += nlen
        if name != spec.name:
            raise FormatError(f"{path}: tensor {name!r} where {spec.name!r} was declared")
        need(2, "dtype/rank")
        code, rank = struct.unpack_from("<BB", blob, off)
        off += 2
        if code not in (4, 8):
            raise FormatError(f"{path}: bad dtype code {code} for {name}")
        need(4 * rank, "dims")
        shape = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        if shape != spec.shape:
            raise FormatError(f"{path}: {name} shape {shape} != declared {spec.shape}")
        nbytes = code * int(np.prod(shape))
        need(nbytes, f"payload of {name}")
        data = np.frombuffer(blob, dtype=f"<f{code}", count=int(np.prod(shape)), offset=off)
        off += nbytes
        tensors[name] = Tensor(data.reshape(shape).astype(f"f{code}"))
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes after last tensor")
    return ModelParams(config, tensors), config, meta


def fresh_model(config: ModelConfig, seed: int) -> ModelParams:
    return init_params(config, seed)
