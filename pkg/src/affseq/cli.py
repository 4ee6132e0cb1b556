"""Command-line entry point.

Subcommands: train / eval / predict / ensemble / fixture / gradcheck.
Exit codes: 0 success, 1 usage, 2 data or format error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import ensemble as ens_mod
from . import fixture as fixture_mod
from . import gradcheck as gradcheck_mod
from . import metrics as metrics_mod
from . import training as training_mod
from .errors import (AffseqError, ConfigError, DataError, DimensionError,
                     FormatError, NumericError, UsageError)
from .model import Task, init_params
from .runconfig import RunConfig, format_config, load_config_file, resolve


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_usage()}")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--manifest", help="train manifest (video_id TAB features TAB labels)")
    p.add_argument("--val-manifest", dest="val_manifest", help="held-out manifest")
    p.add_argument("--synthetic-manifest", dest="synthetic_manifest",
                   help="basic-class stills manifest for --use-synthetic")
    p.add_argument("--use-synthetic", dest="use_synthetic", action="store_const", const=True)
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--task", choices=[t.value for t in Task])
    p.add_argument("--feat-dim", dest="feat_dim", type=int)
    p.add_argument("--d-model", dest="d_model", type=int)
    p.add_argument("--d-ff", dest="d_ff", type=int)
    p.add_argument("--n-layers", dest="n_layers", type=int)
    p.add_argument("--n-heads", dest="n_heads", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--head-hidden", dest="head_hidden", type=int)
    p.add_argument("--seg-len", dest="seg_len", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--grad-clip", dest="grad_clip", type=float)
    p.add_argument("--no-class-weights", dest="class_weights", action="store_const", const=False)
    p.add_argument("--va-loss", dest="va_loss", choices=["ccc", "mse"])
    p.add_argument("--model-id", dest="model_id")
    p.add_argument("--print-config", action="store_true",
                   help="print the resolved configuration and exit")


_RUN_KEYS = [f.name for f in fields(RunConfig)]


def _resolve(args) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else None
    overrides = {k: getattr(args, k) for k in _RUN_KEYS if hasattr(args, k)}
    return resolve(file_values, overrides)


def _load_segments(cfg: RunConfig, manifest, task: Task, seg_len: int, *,
                   merge_synthetic: bool = False, drop_all_invalid: bool = True):
    seqs = data_mod.load_dataset(manifest, task)
    if merge_synthetic:
        if not cfg.synthetic_manifest:
            raise ConfigError("--use-synthetic requires --synthetic-manifest")
        if task is not Task.EXPR:
            raise ConfigError("the synthetic stills set only carries expression labels")
        syn = data_mod.load_dataset(cfg.synthetic_manifest, Task.EXPR)
        if cfg.seed is None:
            raise ConfigError("merging synthetic data requires a seed")
        seqs = data_mod.merge_synthetic(seqs, syn, seg_len, cfg.seed)
    return data_mod.segment_dataset(seqs, seg_len, drop_all_invalid)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = _resolve(args)
    if args.print_config:
        sys.stdout.write(format_config(cfg))
        return 0
    if not cfg.manifest:
        raise UsageError("train requires --manifest (or `manifest =` in the config)")
    if not cfg.out_dir:
        raise UsageError("train requires --out")
    mcfg = cfg.model_config()
    tcfg = cfg.train_config()
    task = mcfg.task
    train_segments = _load_segments(cfg, cfg.manifest, task, mcfg.seg_len,
                                    merge_synthetic=cfg.use_synthetic)
    val_segments = (_load_segments(cfg, cfg.val_manifest, task, mcfg.seg_len)
                    if cfg.val_manifest else None)
    weights = None
    if task is Task.EXPR and tcfg.class_weighting:
        ids = np.concatenate([s.labels[s.valid] for s in train_segments])
        weights = data_mod.compute_class_weights(ids, mcfg.n_outputs)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(format_config(cfg))
    params = init_params(mcfg, tcfg.seed)
    training_mod.train(params, mcfg, tcfg, train_segments, val_segments,
                       class_weights=weights, out_dir=out_dir)
    print(f"wrote {out_dir / 'model_final.ckpt'}")
    return 0


def _eval_rows(params, config, manifest):
    seqs = data_mod.load_dataset(manifest, config.task)
    segments = data_mod.segment_dataset(seqs, config.seg_len, drop_all_invalid=False)
    by_vid = training_mod.group_by_video(segments)
    ev = training_mod.evaluate(params, config, by_vid)
    headline, per = metrics_mod.metric_report(config.task, ev["outputs"], ev["truths"])
    return headline, per, ev


def cmd_eval(args) -> int:
    params, config, _ = training_mod.load_checkpoint(args.checkpoint)
    headline, per, _ = _eval_rows(params, config, args.manifest)
    label = Path(args.checkpoint).stem
    print(f"{config.task.value} metric: {headline:.5f}")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        metrics_mod.write_metric_report(out / "report.txt", out / "report.csv",
                                        [(label, headline, per)])
        print(f"wrote {out / 'report.csv'}")
    return 0


def cmd_predict(args) -> int:
    params, config, meta = training_mod.load_checkpoint(args.checkpoint)
    model_id = args.model_id or f"n{config.n_layers}h{config.n_heads}"
    seqs = data_mod.load_dataset(args.manifest, config.task)
    out_dir = Path(args.out_dir)
    for seq in seqs:
        if "." in seq.video_id:
            raise DataError(f"video id {seq.video_id!r} must not contain '.' (logit filename)")
        segments = data_mod.segment_sequence(seq, config.seg_len, drop_all_invalid=False)
        values = training_mod.predict_video(params, config, segments)
        ens_mod.write_logits(out_dir, ens_mod.LogitSet(model_id, seq.video_id, values))
    print(f"wrote logits for {len(seqs)} videos to {out_dir}")
    return 0


def cmd_ensemble(args) -> int:
    task = Task(args.task)
    members: dict[str, dict[str, ens_mod.LogitSet]] = {}
    for d in args.logit_dirs:
        sets = ens_mod.load_logit_dir(d)
        mid = next(iter(sets.values())).model_id
        if mid in members:
            raise DataError(f"duplicate model id {mid!r} across logit dirs")
        members[mid] = sets
    seqs = data_mod.load_dataset(args.manifest, task)
    truths = {s.video_id: (s.labels, s.valid) for s in seqs}
    rows = ens_mod.ensemble_eval(members, truths, task,
                                 subsets="all" if not args.full_only else "full")
    width = max(len(r[0]) for r in rows)
    for label, value, _ in rows:
        print(f"{label:<{width}}  {value:.5f}")
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        metrics_mod.write_metric_report(out / "ensemble.txt", out / "ensemble.csv", rows)
        print(f"wrote {out / 'ensemble.csv'}")
    return 0


def cmd_fixture(args) -> int:
    frames_range = tuple(int(x) for x in args.frames.split(":"))
    run_range = tuple(int(x) for x in args.run_range.split(":"))
    if len(frames_range) != 2 or len(run_range) != 2:
        raise UsageError("--frames and --run-range expect LO:HI")
    class_probs = None
    if args.imbalance and args.imbalance > 1.0:
        class_probs = np.ones(args.classes)
        class_probs[0] = args.imbalance
    paths = fixture_mod.write_fixture(
        args.out_dir, args.seed, task=Task(args.task), n_videos=args.videos,
        frames_range=frames_range, feat_dim=args.feat_dim, n_classes=args.classes,
        n_synthetic=args.synthetic, class_probs=class_probs, noise_var=args.noise_var,
        run_range=run_range)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


def cmd_gradcheck(args) -> int:
    ok = gradcheck_mod.run_suite(seed=args.seed or 0, tolerance=args.tolerance)
    if not ok:
        raise NumericError("gradient check failed (see FAIL lines above)")
    print("gradient check passed")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="affseq", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model and write checkpoints + epoch log")
    _add_run_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", dest="out_dir")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("predict", help="write per-video logit files from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--model-id", dest="model_id")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("ensemble", help="soft average voting over logit dirs")
    p.add_argument("logit_dirs", nargs="+")
    p.add_argument("--manifest", required=True)
    p.add_argument("--task", required=True, choices=[t.value for t in Task])
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--full-only", dest="full_only", action="store_true",
                   help="score only the complete ensemble, not every subset")
    p.set_defaults(fn=cmd_ensemble)

    p = sub.add_parser("fixture", help="write a runnable synthetic mini-dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--task", default="expr", choices=[t.value for t in Task])
    p.add_argument("--videos", type=int, default=40)
    p.add_argument("--frames", default="96:192", help="video length range LO:HI")
    p.add_argument("--run-range", dest="run_range", default="16:48",
                   help="label run length range LO:HI")
    p.add_argument("--feat-dim", dest="feat_dim", type=int, default=32)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--synthetic", type=int, default=400,
                   help="number of basic-class stills (0 disables)")
    p.add_argument("--imbalance", type=float, default=0.0,
                   help="make class 0 this many times more likely than the rest")
    p.add_argument("--noise-var", dest="noise_var", type=float, default=0.1)
    p.set_defaults(fn=cmd_fixture)

    p = sub.add_parser("gradcheck", help="finite-difference gate over losses and a tiny encoder")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=gradcheck_mod.TOLERANCE)
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (FormatError, DataError, ConfigError, DimensionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except AffseqError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
