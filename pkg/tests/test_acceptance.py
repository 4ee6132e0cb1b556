"""Acceptance gates.

Each test enforces one release criterion at its stated tolerance and
prints a PASS line on success. Training/gradcheck gates run the real CLI
in a single-threaded subprocess, exactly as a user would.
"""

import math
import os
import subprocess
import sys
import time

import numpy as np
import numpy.testing as npt

from affseq.data import compute_class_weights, segment_dataset, segment_sequence
from affseq.ensemble import LogitSet, ensemble_eval, soft_average
from affseq.fixture import class_means, make_synthetic_fixture
from affseq.metrics import confusion, macro_f1, mean_ccc, multilabel_f1, per_class_f1
from affseq.model import ModelConfig, Task, init_params
from affseq.optim import TrainConfig
from affseq.rng import derive_rng
from affseq.training import evaluate, group_by_video, train

from oracles import macro_f1_tally, mean_ccc_tally, multilabel_f1_tally
from test_data import seq_of

SINGLE_THREAD_ENV = {**os.environ, "OMP_NUM_THREADS": "1",
                     "OPENBLAS_NUM_THREADS": "1", "MKL_NUM_THREADS": "1"}


def run_cli(*args, timeout=600):
    return subprocess.run([sys.executable, "-m", "affseq"] + [str(a) for a in args],
                          capture_output=True, text=True, env=SINGLE_THREAD_ENV,
                          timeout=timeout)


def read_log(path):
    rows = []
    for line in path.read_text().splitlines()[1:]:
        epoch, split, loss, metric = line.split(",")
        rows.append((int(epoch), split, float(loss), float(metric)))
    return rows


def test_gradient_gate():
    start = time.monotonic()
    proc = run_cli("gradcheck", timeout=120)
    elapsed = time.monotonic() - start
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert "gradient check passed" in proc.stdout
    assert elapsed < 60.0, f"gradcheck took {elapsed:.1f}s"
    print(f"PASS gradient gate: every loss + tiny encoder <= 1e-3 rel err in {elapsed:.1f}s")


def test_overfit_gate(tmp_path):
    start = time.monotonic()
    fx = run_cli("fixture", "--seed", 2024, "--out", tmp_path / "fx")
    assert fx.returncode == 0, fx.stderr
    tr = run_cli("train",
                 "--manifest", tmp_path / "fx" / "train" / "manifest.txt",
                 "--val-manifest", tmp_path / "fx" / "val" / "manifest.txt",
                 "--out", tmp_path / "run", "--seed", 7,
                 "--feat-dim", 32, "--d-model", 64, "--d-ff", 64,
                 "--n-layers", 4, "--n-heads", 4, "--head-hidden", 32,
                 "--batch-size", 16)
    elapsed = time.monotonic() - start
    assert tr.returncode == 0, tr.stderr
    rows = read_log(tmp_path / "run" / "log.csv")
    final_train = [r for r in rows if r[1] == "train"][-1]
    final_val = [r for r in rows if r[1] == "val"][-1]
    assert final_train[0] <= 20
    assert final_train[3] >= 0.95, f"train macro F1 {final_train[3]:.4f}"
    assert final_val[3] >= 0.80, f"held-out macro F1 {final_val[3]:.4f}"
    assert elapsed < 300.0, f"overfit gate took {elapsed:.1f}s"
    print(f"PASS overfit gate: (4,4) model train F1 {final_train[3]:.4f}, "
          f"val F1 {final_val[3]:.4f} in {elapsed:.0f}s")


def test_metric_oracle_gate():
    rng = derive_rng(2023, "metric-oracle")
    for draw in range(1000):
        n = int(rng.integers(2, 40))
        preds = rng.integers(0, 8, size=n)
        truths = rng.integers(0, 8, size=n)
        assert abs(macro_f1(preds, truths, 8) -
                   macro_f1_tally(list(preds), list(truths), 8)) <= 1e-9
        pb = rng.integers(0, 2, size=(n, 12))
        tb = rng.integers(0, 2, size=(n, 12))
        assert abs(multilabel_f1(pb, tb) -
                   multilabel_f1_tally(pb.tolist(), tb.tolist())) <= 1e-9
        pv = rng.uniform(-1, 1, size=(n, 2))
        tv = rng.uniform(-1, 1, size=(n, 2))
        assert abs(mean_ccc(pv, tv) - mean_ccc_tally(pv.tolist(), tv.tolist())) <= 1e-9
    print("PASS metric oracle: macro F1 / AU F1 / CCC match brute-force tallies "
          "to 1e-9 on 1000 draws")


def test_segmentation_conservation_gate():
    rng = derive_rng(2022, "segcheck")
    for draw in range(500):
        n = int(rng.integers(1, 5001))
        feats = rng.normal(size=(n, 3)).astype(np.float32)
        seq = seq_of(rng.integers(0, 8, size=n), features=feats, feat_dim=3,
                     video_id=f"v{draw}")
        segs = segment_sequence(seq, 64)
        assert len(segs) == math.ceil(n / 64)
        npt.assert_array_equal(np.concatenate([s.features[s.pad_mask] for s in segs]), feats)
        npt.assert_array_equal(np.concatenate([s.labels[s.pad_mask] for s in segs]), seq.labels)
    print("PASS segmentation conservation: 500 random lengths reconstruct exactly, "
          "count = ceil(n/64)")


def test_ensemble_contract_gate():
    rng = derive_rng(2021, "ens")

    # identity on a single member
    solo = LogitSet("a", "v", rng.normal(size=(6, 8)).astype(np.float32))
    npt.assert_array_equal(soft_average([solo]).values, solo.values)

    # permutation invariance with matched weights
    members = [LogitSet(m, "v", rng.normal(size=(6, 8)).astype(np.float32)) for m in "abc"]
    w = [1.0, 2.0, 3.0]
    f1 = soft_average(members, w)
    f2 = soft_average([members[1], members[2], members[0]], [w[1], w[2], w[0]])
    npt.assert_array_equal(f1.values, f2.values)

    # constant shift leaves argmax decisions unchanged
    shifted = soft_average([LogitSet(m.model_id, "v", m.values + 3.0) for m in members], w)
    npt.assert_array_equal(shifted.values.argmax(axis=1), f1.values.argmax(axis=1))

    # pinned case: averaging logits disagrees with majority voting
    a = LogitSet("a", "v", np.array([[0.0, 2.0]], np.float32))
    b = LogitSet("b", "v", np.array([[1.0, 0.0]], np.float32))
    vote = min(a.values.argmax(axis=1)[0], b.values.argmax(axis=1)[0])  # tie -> lowest id
    averaged = soft_average([a, b]).values.argmax(axis=1)[0]
    assert (vote, averaged) == (0, 1)

    # 7-row subset report for 3 members
    videos = [("v0", 25), ("v1", 18)]
    sets = {m: {vid: LogitSet(m, vid, rng.normal(size=(n, 8)).astype(np.float32))
                for vid, n in videos} for m in ("m1", "m2", "m3")}
    truths = {vid: (rng.integers(0, 8, size=n), np.ones(n, bool)) for vid, n in videos}
    rows = ensemble_eval(sets, truths, Task.EXPR)
    assert [r[0] for r in rows] == ["m1", "m2", "m3", "m1+m2", "m1+m3", "m2+m3", "m1+m2+m3"]
    print("PASS ensemble contracts: identity, permutation, shift-argmax, "
          "average-vs-vote pin, 7-row report")


def test_determinism_gate(tmp_path):
    fx = run_cli("fixture", "--seed", 31, "--out", tmp_path / "fx", "--videos", 8,
                 "--frames", "32:64", "--run-range", "4:12", "--feat-dim", 12,
                 "--classes", 8, "--synthetic", 0)
    assert fx.returncode == 0, fx.stderr
    blobs = []
    for run in ("r1", "r2"):
        tr = run_cli("train", "--manifest", tmp_path / "fx" / "train" / "manifest.txt",
                     "--val-manifest", tmp_path / "fx" / "val" / "manifest.txt",
                     "--out", tmp_path / run, "--seed", 13,
                     "--feat-dim", 12, "--d-model", 16, "--d-ff", 16,
                     "--n-layers", 2, "--n-heads", 2, "--head-hidden", 8,
                     "--seg-len", 16, "--epochs", 3, "--batch-size", 8)
        assert tr.returncode == 0, tr.stderr
        blobs.append({name: (tmp_path / run / name).read_bytes()
                      for name in ("log.csv", "model_final.ckpt", "model_best.ckpt")})
    assert blobs[0] == blobs[1]
    print("PASS determinism: identical seed gives bit-identical epoch logs and checkpoints")


def test_hyperparameter_fidelity_gate():
    proc = run_cli("train", "--print-config")
    assert proc.returncode == 0, proc.stderr
    got = {}
    for line in proc.stdout.strip().splitlines():
        key, _, value = line.partition("=")
        got[key.strip()] = value.strip()
    want = {"seg_len": "64", "d_model": "512", "d_ff": "512", "dropout": "0.1",
            "head_hidden": "256", "epochs": "20", "batch_size": "64",
            "lr": "0.001", "weight_decay": "0.015625"}
    for key, value in want.items():
        assert got[key] == value, (key, got[key], value)
    print("PASS hyperparameter fidelity: --print-config defaults match the "
          "trained setting exactly")


def test_imbalance_gate():
    probs = np.ones(8)
    probs[0] = 50.0
    means = class_means(8, 16, 72)
    seqs = make_synthetic_fixture(24, (64, 128), 16, 8, seed=72, class_probs=probs,
                                  run_range=(4, 12), noise_var=0.5, means=means)
    segs = segment_dataset(seqs, 32)
    ids = np.concatenate([s.labels[s.valid] for s in segs])
    counts = np.bincount(ids, minlength=8)
    ratio = counts[0] / counts[1:].mean()
    assert ratio >= 45.0, f"fixture count ratio {ratio:.1f}:1"
    weights = compute_class_weights(ids, 8)
    cfg = ModelConfig(task=Task.EXPR, feat_dim=16, d_model=32, d_ff=32, n_layers=2,
                      n_heads=2, head_hidden=16, seg_len=32)

    def minority_f1(class_weights, weighting):
        params = init_params(cfg, 5)
        tcfg = TrainConfig(epochs=4, batch_size=8, lr=1e-3, seed=5,
                           class_weighting=weighting)
        params, _ = train(params, cfg, tcfg, segs, None,
                          class_weights=class_weights, log=None)
        ev = evaluate(params, cfg, group_by_video(segs))
        return per_class_f1(confusion(ev["preds"], ev["truths"], 8))[1:].mean()

    weighted = minority_f1(weights, True)
    unweighted = minority_f1(None, False)
    assert weighted > unweighted, (weighted, unweighted)
    print(f"PASS imbalance: ~{ratio:.0f}:1 counts, weighted CE minority F1 "
          f"{weighted:.3f} > unweighted {unweighted:.3f}")
