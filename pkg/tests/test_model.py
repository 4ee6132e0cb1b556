import numpy as np
import numpy.testing as npt
import pytest

from affseq.errors import ConfigError, DataError, DimensionError
from affseq.model import (ModelConfig, ModelParams, Task, encoder_layer, forward,
                          init_params, multi_head_attention, param_count,
                          positional_encoding)
from affseq.rng import derive_rng
from affseq.tensor import Tensor

TINY = dict(task=Task.EXPR, feat_dim=8, d_model=16, d_ff=16, n_layers=2,
            n_heads=2, head_hidden=8, seg_len=4, dropout_p=0.0)


def tiny_config(**over):
    return ModelConfig(**{**TINY, **over})


# ---------------------------------------------------------------------------
# config


def test_config_defaults_match_trained_setting():
    cfg = ModelConfig()
    assert (cfg.d_model, cfg.d_ff, cfg.dropout_p, cfg.head_hidden, cfg.seg_len) == \
        (512, 512, 0.1, 256, 64)
    assert (cfg.n_layers, cfg.n_heads) == (4, 4)


def test_config_rejects_indivisible_heads():
    with pytest.raises(ConfigError):
        ModelConfig(d_model=10, n_heads=4)


def test_task_output_widths():
    assert Task.EXPR.n_outputs == 8
    assert Task.AU.n_outputs == 12
    assert Task.VA.n_outputs == 2


def test_ensemble_configurations_are_legal():
    for n, h in [(4, 4), (8, 4), (4, 6)]:
        cfg = ModelConfig(n_layers=n, n_heads=h, d_model=12 * h, feat_dim=8)
        assert (cfg.n_layers, cfg.n_heads) == (n, h)


# ---------------------------------------------------------------------------
# init


def test_init_is_deterministic():
    cfg = tiny_config()
    a = init_params(cfg, seed=5)
    b = init_params(cfg, seed=5)
    for (n1, t1), (n2, t2) in zip(a.items(), b.items()):
        assert n1 == n2
        assert t1.data.tobytes() == t2.data.tobytes()
    c = init_params(cfg, seed=6)
    assert any(t.data.tobytes() != c[n].data.tobytes() for n, t in a.items() if t.ndim == 2)


def test_init_biases_zero_and_gammas_one():
    params = init_params(tiny_config(), seed=0)
    for name, t in params.items():
        if name.endswith((".b", ".b1", ".b2", ".bq", ".bk", ".bv", ".bo", ".beta")):
            assert not t.data.any(), name
        if name.endswith(".gamma"):
            npt.assert_array_equal(t.data, np.ones_like(t.data))


def test_init_weight_variance_matches_uniform_law():
    cfg = ModelConfig(task=Task.EXPR, feat_dim=512, d_model=512, d_ff=512,
                      n_layers=1, n_heads=4, head_hidden=8, seg_len=4)
    w = init_params(cfg, seed=3)["proj.w"].data
    s = np.sqrt(6.0 / (512 + 512))
    assert abs(w.var() - s * s / 3.0) <= 0.1 * s * s / 3.0


def test_param_count_matches_hand_computed_value():
    # proj 8*16+16 = 144; per layer 4*(256+16) + (256+16)*2 + 4*16 = 1696;
    # head 16*8+8 + 8*8+8 = 208; with N=4: 144 + 4*1696 + 208 = 7136
    cfg = tiny_config(n_layers=4, n_heads=4)
    assert param_count(cfg) == 7136


def test_params_reject_wrong_shape():
    cfg = tiny_config()
    tensors = {n: Tensor(t.data) for n, t in init_params(cfg, 0).items()}
    tensors["proj.w"] = Tensor(np.zeros((3, 3), np.float32))
    with pytest.raises(ConfigError):
        ModelParams(cfg, tensors)


# ---------------------------------------------------------------------------
# positional encoding


def test_positional_encoding_row_zero():
    pe = positional_encoding(4, 6)
    npt.assert_allclose(pe[0, 0::2], 0.0, atol=1e-7)
    npt.assert_allclose(pe[0, 1::2], 1.0, atol=1e-7)


def test_positional_encoding_sin_at_one():
    pe = positional_encoding(4, 6)
    npt.assert_allclose(pe[1, 0], np.sin(1.0), atol=1e-6)


def test_positional_encoding_bounded():
    pe = positional_encoding(64, 512)
    assert np.abs(pe).max() <= 1.0


# ---------------------------------------------------------------------------
# attention


def _layer_params(params, i=0):
    prefix = f"layer{i}."
    return {n[len(prefix):]: t for n, t in params.items() if n.startswith(prefix)}


def test_attention_singleton_weight_is_one():
    cfg = tiny_config(seg_len=1)
    params = init_params(cfg, 1)
    x = Tensor(derive_rng(0, "x").normal(size=(1, cfg.d_model)).astype(np.float32))
    _, w = multi_head_attention(x, None, _layer_params(params), cfg.n_heads, return_weights=True)
    npt.assert_allclose(w, np.ones_like(w))


def test_attention_identical_rows_give_identical_outputs():
    cfg = tiny_config()
    params = init_params(cfg, 2)
    row = derive_rng(1, "row").normal(size=cfg.d_model).astype(np.float32)
    x = Tensor(np.tile(row, (cfg.seg_len, 1)))
    out = multi_head_attention(x, None, _layer_params(params), cfg.n_heads).data
    npt.assert_allclose(out, np.tile(out[0], (cfg.seg_len, 1)), rtol=1e-5, atol=1e-6)


def test_attention_mask_zeroes_padded_keys():
    cfg = tiny_config(seg_len=3)
    params = init_params(cfg, 3)
    x = Tensor(derive_rng(2, "x").normal(size=(3, cfg.d_model)).astype(np.float32))
    mask = np.array([True, True, False])
    _, w = multi_head_attention(x, mask, _layer_params(params), cfg.n_heads, return_weights=True)
    # [B,h,S,S]: key axis last
    assert w[..., 2].max() == 0.0
    npt.assert_allclose(w[..., :2].sum(axis=-1), 1.0, atol=1e-6)


def test_attention_rejects_all_padded_segment():
    cfg = tiny_config(seg_len=2)
    params = init_params(cfg, 0)
    x = Tensor(np.ones((2, cfg.d_model), np.float32))
    with pytest.raises(DataError):
        multi_head_attention(x, np.array([False, False]), _layer_params(params), cfg.n_heads)


# ---------------------------------------------------------------------------
# encoder layer


def test_encoder_layer_zero_branches_reduce_to_double_norm():
    from affseq.tensor import layer_norm
    cfg = tiny_config()
    params = init_params(cfg, 4)
    lp = _layer_params(params)
    lp["attn.wo"] = Tensor(np.zeros_like(lp["attn.wo"].data))
    lp["ffn.w2"] = Tensor(np.zeros_like(lp["ffn.w2"].data))
    x = Tensor(derive_rng(3, "x").normal(size=(cfg.seg_len, cfg.d_model)).astype(np.float32))
    got = encoder_layer(x, None, lp, cfg.n_heads).data
    ones, zeros = Tensor(np.ones(cfg.d_model)), Tensor(np.zeros(cfg.d_model))
    want = layer_norm(layer_norm(x, ones, zeros), ones, zeros).data
    npt.assert_allclose(got, want, rtol=1e-5, atol=1e-6)


def test_encoder_layer_preserves_shape():
    cfg = tiny_config()
    params = init_params(cfg, 5)
    x = Tensor(derive_rng(4, "x").normal(size=(cfg.seg_len, cfg.d_model)).astype(np.float32))
    assert encoder_layer(x, None, _layer_params(params), cfg.n_heads).shape == x.shape


def test_encoder_layer_gradient_matches_finite_differences():
    from affseq.tensor import finite_difference_check
    cfg = tiny_config()
    params = init_params(cfg, 6).astype(np.float64)
    lp = _layer_params(params)
    rng = derive_rng(5, "x")
    x0 = rng.normal(size=(cfg.seg_len, cfg.d_model))
    # random readout: a plain sum is constant under layer norm with unit gammas
    r = Tensor(rng.normal(size=(cfg.seg_len, cfg.d_model)))
    err = finite_difference_check(
        lambda t: (encoder_layer(t, None, lp, cfg.n_heads) * r).sum(), Tensor(x0), h=1e-4)
    assert err <= 1e-3


# ---------------------------------------------------------------------------
# full forward


def test_forward_preserves_frame_count_and_width():
    rng = derive_rng(6, "fwd")
    for task, width in [(Task.EXPR, 8), (Task.AU, 12), (Task.VA, 2)]:
        cfg = tiny_config(task=task)
        params = init_params(cfg, 7)
        for frames in (1, 3, 4):
            x = rng.normal(size=(frames, cfg.feat_dim)).astype(np.float32)
            out = forward(params, cfg, x)
            assert out.shape == (frames, width)


def test_forward_va_outputs_strictly_inside_unit_box():
    cfg = tiny_config(task=Task.VA)
    params = init_params(cfg, 8)
    x = derive_rng(7, "x").normal(size=(4, cfg.feat_dim)).astype(np.float32)
    out = forward(params, cfg, x).data
    assert (np.abs(out) < 1.0).all()


def test_forward_rejects_wrong_feature_width():
    cfg = tiny_config()
    params = init_params(cfg, 9)
    with pytest.raises(DimensionError):
        forward(params, cfg, np.zeros((4, cfg.feat_dim + 1), np.float32))


def test_forward_attention_mixes_frames():
    cfg = tiny_config()
    params = init_params(cfg, 10)
    x = derive_rng(8, "x").normal(size=(4, cfg.feat_dim)).astype(np.float32)
    base = forward(params, cfg, x).data
    x2 = x.copy()
    x2[1] += 0.5
    moved = forward(params, cfg, x2).data
    other = [i for i in range(4) if i != 1]
    assert np.abs(moved[other] - base[other]).max() > 1e-6


def test_forward_padded_frames_have_exactly_zero_influence():
    cfg = tiny_config()
    params = init_params(cfg, 11)
    x = derive_rng(9, "x").normal(size=(4, cfg.feat_dim)).astype(np.float32)
    mask = np.array([True, True, True, False])
    base = forward(params, cfg, x, mask).data
    x2 = x.copy()
    x2[3] = 1e3 * derive_rng(10, "noise").normal(size=cfg.feat_dim)
    moved = forward(params, cfg, x2, mask).data
    npt.assert_array_equal(moved[:3], base[:3])


def test_forward_is_pure_without_dropout():
    cfg = tiny_config()
    params = init_params(cfg, 12)
    x = derive_rng(11, "x").normal(size=(4, cfg.feat_dim)).astype(np.float32)
    assert forward(params, cfg, x).data.tobytes() == forward(params, cfg, x).data.tobytes()


def test_forward_dropout_replays_per_step_and_differs_across_steps():
    cfg = tiny_config(dropout_p=0.3)
    params = init_params(cfg, 13)
    x = derive_rng(12, "x").normal(size=(4, cfg.feat_dim)).astype(np.float32)
    a = forward(params, cfg, x, training=True, drop_seed=1, step=0).data
    b = forward(params, cfg, x, training=True, drop_seed=1, step=0).data
    c = forward(params, cfg, x, training=True, drop_seed=1, step=1).data
    npt.assert_array_equal(a, b)
    assert a.tobytes() != c.tobytes()


def test_forward_batch_matches_single_segments():
    cfg = tiny_config()
    params = init_params(cfg, 14)
    rng = derive_rng(13, "batch")
    xs = rng.normal(size=(3, cfg.seg_len, cfg.feat_dim)).astype(np.float32)
    batch = forward(params, cfg, xs).data
    for i in range(3):
        single = forward(params, cfg, xs[i]).data
        npt.assert_allclose(batch[i], single, rtol=1e-5, atol=1e-6)


def test_forward_equivariant_under_matched_permutation():
    cfg = tiny_config()
    base = init_params(cfg, 15).astype(np.float64)
    x = derive_rng(14, "x").normal(size=(cfg.seg_len, cfg.feat_dim))
    perm = np.array([2, 0, 3, 1])
    out = forward(base, cfg, Tensor(x)).data
    permuted = {n: Tensor(t.data.copy()) for n, t in base.items()}
    permuted["pos"] = Tensor(base["pos"].data[perm])
    pp = ModelParams(cfg, permuted)
    out_perm = forward(pp, cfg, Tensor(x[perm])).data
    npt.assert_allclose(out_perm, out[perm], rtol=1e-10, atol=1e-12)
