"""Randomized invariants checked with hypothesis."""
import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from gidnet.archive import read_archive, save_weights
from gidnet.imaging import EvalProtocol, ImagePlane, psnr, resize_weights, rgb_to_y
from gidnet.model import ModelConfig, build_model, model_forward
from gidnet.ops import ConvParams, conv2d, depth_to_space, leaky_relu, space_to_depth, tile_attention
from gidnet.training import OptimState, adam_step, charbonnier_loss, knee_lr, KneeSchedule

SETTINGS = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(1, 6)


@SETTINGS
@given(seeds, dims, dims, st.sampled_from([1, 4]), st.sampled_from([1, 3]))
def test_conv_is_affine(seed, h, w, groups, k):
    rng = np.random.default_rng(seed)
    c = 8
    p = ConvParams(rng.standard_normal((c, c // groups, k, k)).astype(np.float32),
                   np.zeros(c, np.float32), groups)
    a, b = rng.standard_normal((2, 1, c, h, w)).astype(np.float32)
    np.testing.assert_allclose(conv2d(a + 2 * b, p), conv2d(a, p) + 2 * conv2d(b, p), atol=1e-4)


@SETTINGS
@given(seeds, dims, dims, st.integers(1, 4))
def test_depth_space_roundtrip(seed, h, w, r):
    x = np.random.default_rng(seed).standard_normal((2, 3 * r * r, h, w)).astype(np.float32)
    y = depth_to_space(x, r)
    assert y.shape == (2, 3, h * r, w * r)
    assert np.array_equal(space_to_depth(y, r), x)


@SETTINGS
@given(seeds, dims, dims)
def test_leaky_relu_preserves_order(seed, h, w):
    x = np.sort(np.random.default_rng(seed).standard_normal(h * w)).astype(np.float32)
    assert (np.diff(leaky_relu(x)) >= 0).all()


@SETTINGS
@given(seeds, st.integers(1, 9), st.integers(1, 9), st.integers(1, 5))
def test_attention_output_in_value_hull(seed, h, w, tile):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 4, h, w)).astype(np.float32)
    v = rng.standard_normal((1, 4, h, w)).astype(np.float32)
    out = tile_attention(x, v, tile)
    # softmax rows are convex weights, so every output lies within the per-channel value range
    lo, hi = v.min(axis=(2, 3), keepdims=True), v.max(axis=(2, 3), keepdims=True)
    assert (out >= lo - 1e-5).all() and (out <= hi + 1e-5).all()


@SETTINGS
@given(st.integers(1, 40), st.sampled_from([1 / 4, 1 / 2, 2, 4]))
def test_resize_weights_partition_unity(n, factor):
    out_len = max(1, int(np.ceil(n * factor)))
    wts = resize_weights(n, out_len, factor, antialias=True)
    np.testing.assert_allclose(wts.sum(axis=1), 1.0, atol=1e-9)


@SETTINGS
@given(seeds, st.integers(9, 20), st.integers(9, 20))
def test_psnr_symmetric_and_finite(seed, h, w):
    rng = np.random.default_rng(seed)
    a = ImagePlane(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))
    b = ImagePlane(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))
    proto = EvalProtocol(scale=4)
    assert psnr(a, b, proto) == psnr(b, a, proto)
    assert psnr(a, a, proto) == float("inf")


@SETTINGS
@given(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255))
def test_luminance_range(r, g, b):
    y = rgb_to_y(ImagePlane(np.array([[[r, g, b]]], np.uint8)))
    assert 16 - 1e-9 <= y.item() <= 235 + 1e-9


@SETTINGS
@given(seeds, st.floats(1e-4, 1e-1))
def test_adam_step_bounded_by_lr(seed, lr):
    rng = np.random.default_rng(seed)
    p = {"w": rng.standard_normal(6)}
    out = adam_step(p, {"w": rng.standard_normal(6) * 100}, OptimState(), lr)
    assert np.abs(out["w"] - p["w"]).max() <= lr * (1 + 1e-6)


@SETTINGS
@given(seeds)
def test_charbonnier_bounds(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((2, 1, 3, 4, 4))
    loss = charbonnier_loss(a, b, 0.1)
    assert np.abs(a - b).mean() <= loss <= np.abs(a - b).mean() + 0.1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 3000))
def test_knee_lr_bounded(epoch):
    s = KneeSchedule()
    assert s.floor_lr <= knee_lr(epoch, s) <= s.max_lr or epoch < s.warmup_epochs


@settings(max_examples=5, deadline=None)
@given(seeds, st.sampled_from([4, 8]), st.booleans())
def test_archive_roundtrip(tmp_path_factory, seed, core, nla):
    model = build_model(ModelConfig(core, nla), seed=seed % 1000)
    path = tmp_path_factory.mktemp("arc") / "w.gidw"
    save_weights(model, path)
    entries = read_archive(path)
    assert set(entries) == set(model.params)
    assert all(np.array_equal(entries[k], v) for k, v in model.params.items())


@settings(max_examples=8, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6))
def test_forward_shape(h, w):
    model = build_model(ModelConfig(4, True, nla_tile=3), seed=0)
    x = np.random.default_rng(h * 7 + w).random((1, 3, h, w)).astype(np.float32)
    assert model_forward(model, x).shape == (1, 3, 4 * h, 4 * w)
