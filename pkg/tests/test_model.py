"""Model forward: pyramid shapes, attention window, masking, config checks."""

import math

import numpy as np
import pytest

from momentdet.model import (LocalizerModel, ModelConfig,
                             default_regression_ranges,
                             interpolate_position_embedding)
from momentdet.tensor import constant


def tiny_config(**overrides):
    base = dict(input_dim=8, num_classes=2, embed_dim=16, num_heads=2,
                window_size=5, num_stem_blocks=1, num_pyramid_blocks=2,
                max_seq_len=128)
    base.update(overrides)
    return ModelConfig(**base)


def test_default_ranges_double_and_end_open():
    ranges = default_regression_ranges(6)
    assert ranges == [(0.0, 4.0), (4.0, 8.0), (8.0, 16.0), (16.0, 32.0),
                      (32.0, 64.0), (64.0, float("inf"))]


def test_config_rejects_even_window():
    with pytest.raises(ValueError):
        tiny_config(window_size=4)


def test_config_rejects_head_mismatch():
    with pytest.raises(ValueError):
        tiny_config(embed_dim=15, num_heads=2)


def test_config_rejects_wrong_range_count():
    with pytest.raises(ValueError):
        tiny_config(regression_ranges=[(0.0, 4.0), (4.0, float("inf"))],
                    num_pyramid_blocks=3)


def test_config_rejects_gap_in_ranges():
    with pytest.raises(ValueError):
        tiny_config(regression_ranges=[(0.0, 4.0), (5.0, 8.0),
                                       (8.0, float("inf"))])


def test_config_json_roundtrip_preserves_inf():
    import json
    cfg = tiny_config()
    restored = ModelConfig.from_dict(json.loads(cfg.to_json()))
    assert restored.regression_ranges == cfg.regression_ranges
    assert restored.embed_dim == cfg.embed_dim


def test_pyramid_lengths_are_ceil_chain():
    cfg = tiny_config(num_pyramid_blocks=3, max_seq_len=256)
    model = LocalizerModel(cfg, seed=0)
    feats = np.zeros((100, 8), dtype=np.float32)
    pyramid, outputs = model.forward(feats)
    lengths = [lv.features.shape[0] for lv in pyramid.levels]
    assert lengths == [100, 50, 25, 13]
    assert [lv.stride for lv in pyramid.levels] == [1, 2, 4, 8]
    assert len(outputs.class_logits) == cfg.num_levels
    for logits, reg, lv in zip(outputs.class_logits, outputs.reg_distances,
                               pyramid.levels):
        assert logits.shape == (lv.features.shape[0], cfg.num_classes)
        assert reg.shape == (lv.features.shape[0], 2)


def test_reg_distances_non_negative():
    cfg = tiny_config()
    model = LocalizerModel(cfg, seed=3)
    feats = np.random.default_rng(0).normal(size=(40, 8)).astype(np.float32)
    _, outputs = model.forward(feats)
    for reg in outputs.reg_distances:
        assert np.all(reg.data >= 0.0)


def test_training_rejects_overlong_sequence():
    cfg = tiny_config(max_seq_len=32)
    model = LocalizerModel(cfg, seed=0)
    with pytest.raises(ValueError):
        model.forward(np.zeros((64, 8), dtype=np.float32), training=True)


def test_local_attention_matches_dense_reference():
    rng = np.random.default_rng(3)
    t_len, d, heads = 23, 16, 4
    cfg = tiny_config(embed_dim=d, num_heads=heads, window_size=2 * t_len - 1)
    model = LocalizerModel(cfg, seed=7)
    z = constant(rng.normal(size=(t_len, d)).astype(np.float32))
    mask = np.ones(t_len, dtype=bool)
    mask[-4:] = False
    out = model._attention(z, mask, "block0.")

    p = {k: v.data.astype(np.float64) for k, v in model.params.items()}
    zz = z.data.astype(np.float64)
    q = zz @ p["block0.attn.wq.weight"] + p["block0.attn.wq.bias"]
    k = zz @ p["block0.attn.wk.weight"] + p["block0.attn.wk.bias"]
    v = zz @ p["block0.attn.wv.weight"] + p["block0.attn.wv.bias"]
    dh = d // heads
    ref = np.zeros((t_len, d))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        s = q[:, sl] @ k[:, sl].T / math.sqrt(dh)
        s[:, ~mask] = -1e9
        a = np.exp(s - s.max(axis=1, keepdims=True))
        a /= a.sum(axis=1, keepdims=True)
        ref[:, sl] = a @ v[:, sl]
    ref = ref @ p["block0.attn.wo.weight"] + p["block0.attn.wo.bias"]
    ref *= mask[:, None]
    assert np.abs(out.data - ref).max() <= 1e-6


def test_uniform_keys_give_window_mean_of_values():
    # Constant scores: softmax is uniform over the window, so the output
    # (before wo) averages V over each query's visible neighborhood.
    t_len, d = 12, 16
    cfg = tiny_config(embed_dim=d, num_heads=1, window_size=5)
    model = LocalizerModel(cfg, seed=0)
    for name in ("wq", "wk"):
        model.params[f"block0.attn.{name}.weight"].data[:] = 0.0
        model.params[f"block0.attn.{name}.bias"].data[:] = 0.0
    wv = np.eye(d, dtype=np.float32)
    model.params["block0.attn.wv.weight"].data[:] = wv
    model.params["block0.attn.wv.bias"].data[:] = 0.0
    model.params["block0.attn.wo.weight"].data[:] = wv
    model.params["block0.attn.wo.bias"].data[:] = 0.0
    rng = np.random.default_rng(5)
    z_np = rng.normal(size=(t_len, d)).astype(np.float32)
    mask = np.ones(t_len, dtype=bool)
    out = model._attention(constant(z_np), mask, "block0.")
    half = 2
    for t in range(t_len):
        window = z_np[max(0, t - half):min(t_len, t + half + 1)]
        assert np.allclose(out.data[t], window.mean(axis=0), atol=1e-5)


def test_single_token_attention_is_value_projection():
    cfg = tiny_config(window_size=5)
    model = LocalizerModel(cfg, seed=2)
    z = constant(np.random.default_rng(1).normal(size=(1, 16)).astype(np.float32))
    out = model._attention(z, np.ones(1, dtype=bool), "block0.")
    p = model.params
    expected = (z.data @ p["block0.attn.wv.weight"].data
                + p["block0.attn.wv.bias"].data)
    expected = expected @ p["block0.attn.wo.weight"].data + p["block0.attn.wo.bias"].data
    assert np.allclose(out.data, expected, atol=1e-6)


def test_padding_does_not_leak_into_valid_outputs():
    cfg = tiny_config(num_pyramid_blocks=2, max_seq_len=128)
    model = LocalizerModel(cfg, seed=4)
    rng = np.random.default_rng(9)
    feats = rng.normal(size=(40, 8)).astype(np.float32)
    _, out_plain = model.forward(feats)
    padded = np.zeros((96, 8), dtype=np.float32)
    padded[:40] = feats
    mask = np.zeros(96, dtype=bool)
    mask[:40] = True
    _, out_padded = model.forward(padded, mask)
    for lp, lq in zip(out_plain.class_logits, out_padded.class_logits):
        n = lp.shape[0]
        assert np.abs(lp.data - lq.data[:n]).max() <= 1e-5


def test_position_embedding_crop_and_interp():
    pe = np.arange(12.0).reshape(6, 2)
    assert np.array_equal(interpolate_position_embedding(pe, 4), pe[:4])
    assert np.array_equal(interpolate_position_embedding(pe, 6), pe)
    up = interpolate_position_embedding(pe, 11)
    assert up.shape == (11, 2)
    assert np.allclose(up[0], pe[0])
    assert np.allclose(up[-1], pe[-1])


def test_cls_head_prior_bias():
    cfg = tiny_config(prior_prob=0.01)
    model = LocalizerModel(cfg, seed=0)
    last = cfg.head_layers - 1
    bias = model.params[f"cls_head.conv{last}.bias"].data
    assert np.allclose(bias, -math.log(0.99 / 0.01), atol=1e-5)


def test_state_dict_roundtrip():
    cfg = tiny_config()
    a = LocalizerModel(cfg, seed=0)
    b = LocalizerModel(cfg, seed=1)
    b.load_state_dict(a.state_dict())
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data)


def test_load_state_dict_rejects_missing_and_mismatched():
    cfg = tiny_config()
    model = LocalizerModel(cfg, seed=0)
    state = model.state_dict()
    bad = dict(state)
    bad.pop("proj.conv1.weight")
    with pytest.raises(KeyError):
        model.load_state_dict(bad)
    bad = dict(state)
    bad["proj.conv1.weight"] = np.zeros((1, 1, 1), dtype=np.float32)
    with pytest.raises(ValueError):
        model.load_state_dict(bad)


def test_forward_is_deterministic():
    cfg = tiny_config()
    feats = np.random.default_rng(2).normal(size=(33, 8)).astype(np.float32)
    outs = []
    for _ in range(2):
        model = LocalizerModel(cfg, seed=11)
        _, out = model.forward(feats)
        outs.append([t.data.copy() for t in out.class_logits])
    for a, b in zip(*outs):
        assert np.array_equal(a, b)
