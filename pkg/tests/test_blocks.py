import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from axialvc import autodiff as ad
from axialvc.autodiff import ConvSpec, Tensor
from axialvc.blocks import (
    AxialBlockConfig,
    ConvBlockConfig,
    axial_block_forward,
    conv_residual_block_forward,
    init_axial_block,
    init_conv_block,
    lightweight_temporal_conv,
    receptive_field,
)
from axialvc.errors import ConfigError, ShapeError
from axialvc.gradcheck import check_gradients

from conftest import loop_conv1d, loop_leaky


def _zeroed(params):
    for t in params.values():
        t.data = np.zeros_like(t.data)
    return params


def loop_axial(x, p, cfg, prefix="b"):
    """Axial block from the loop oracles: depthwise temporal conv, leaky, full freq conv."""
    tw, tb = p[f"{prefix}.temporal.weight"].data, p[f"{prefix}.temporal.bias"].data
    if cfg.temporal_mode == "lightweight":
        tw = np.repeat(tw, cfg.lightweight_share, axis=0)
    kt, kf = cfg.temporal_kernel, cfg.freq_kernel
    h = loop_conv1d(x, tw, tb, groups=cfg.channels, padding=kt // 2)
    fw, fb = p[f"{prefix}.freq.weight"].data, p[f"{prefix}.freq.bias"].data
    if cfg.residual_mode == "once":
        return x + loop_conv1d(loop_leaky(h, cfg.activation_slope), fw, fb, padding=kf // 2)
    h = x + h
    return h + loop_conv1d(loop_leaky(h, cfg.activation_slope), fw, fb, padding=kf // 2)


def test_zero_axial_block_is_identity(rng):
    cfg = AxialBlockConfig(channels=5, temporal_kernel=17)
    p = _zeroed(init_axial_block(rng, cfg, "b"))
    x = Tensor(rng.standard_normal((2, 5, 9)).astype(np.float32))
    np.testing.assert_array_equal(axial_block_forward(x, p, cfg, "b").data, x.data)


@pytest.mark.parametrize("mode", ["once", "twice"])
def test_axial_block_matches_loop_oracle(mode, rng):
    cfg = AxialBlockConfig(channels=4, temporal_kernel=5, freq_kernel=3, residual_mode=mode)
    p = init_axial_block(rng, cfg, "b", np.float64)
    x = rng.standard_normal((1, 4, 6))
    out = axial_block_forward(Tensor(x), p, cfg, "b").data
    np.testing.assert_allclose(out, loop_axial(x, p, cfg), atol=1e-10, rtol=0)


@settings(max_examples=25, deadline=None)
@given(T=st.integers(1, 320), kind=st.sampled_from(["depthwise", "lightweight", "conv"]))
def test_blocks_preserve_shape(T, kind):
    rng = np.random.default_rng(T)
    x = Tensor(rng.standard_normal((1, 6, T)))
    if kind == "conv":
        cfg = ConvBlockConfig(6, 5)
        out = conv_residual_block_forward(x, init_conv_block(rng, cfg, "c", np.float64), cfg, "c")
    else:
        cfg = AxialBlockConfig(channels=6, temporal_mode=kind, lightweight_share=3 if kind == "lightweight" else 1)
        out = axial_block_forward(x, init_axial_block(rng, cfg, "b", np.float64), cfg, "b")
    assert out.shape == x.shape


def test_lightweight_with_share_one_equals_depthwise(rng):
    cfg = AxialBlockConfig(channels=4, temporal_kernel=5, temporal_mode="lightweight", lightweight_share=1)
    k = Tensor(rng.standard_normal((4, 1, 5)))
    b = Tensor(rng.standard_normal(4))
    x = Tensor(rng.standard_normal((2, 4, 11)))
    ref = ad.conv1d(x, k, b, ConvSpec(4, 4, 5, groups=4, padding=2)).data
    np.testing.assert_allclose(lightweight_temporal_conv(x, k, b, cfg).data, ref, atol=1e-12, rtol=0)


def test_lightweight_full_share_broadcasts_one_kernel(rng):
    C = 4
    cfg = AxialBlockConfig(channels=C, temporal_kernel=3, temporal_mode="lightweight", lightweight_share=C)
    k = rng.standard_normal((1, 3))
    x = rng.standard_normal((1, C, 7))
    out = lightweight_temporal_conv(Tensor(x), Tensor(k), None, cfg).data
    for c in range(C):
        single = loop_conv1d(x[:, c : c + 1], k[None], None, padding=1)
        np.testing.assert_allclose(out[:, c : c + 1], single, atol=1e-12)


def test_lightweight_share_two_matches_loop_oracle(rng):
    cfg = AxialBlockConfig(channels=4, temporal_kernel=3, temporal_mode="lightweight", lightweight_share=2)
    k = rng.standard_normal((2, 3))
    x = rng.standard_normal((1, 4, 8))
    out = lightweight_temporal_conv(Tensor(x), Tensor(k), None, cfg).data
    # channels 0,1 use kernel 0; channels 2,3 use kernel 1
    w = np.stack([k[0], k[0], k[1], k[1]])[:, None, :]
    np.testing.assert_allclose(out, loop_conv1d(x, w, None, groups=4, padding=1), atol=1e-10)


def test_lightweight_divisibility():
    with pytest.raises(ConfigError):
        AxialBlockConfig(channels=5, temporal_mode="lightweight", lightweight_share=2)


def test_conv_block_zero_is_identity_and_matches_oracle(rng):
    cfg = ConvBlockConfig(3, 5, 0.2)
    x = rng.standard_normal((2, 3, 7))
    p = _zeroed(init_conv_block(rng, cfg, "c", np.float64))
    np.testing.assert_array_equal(conv_residual_block_forward(Tensor(x), p, cfg, "c").data, x)
    p = init_conv_block(rng, cfg, "c", np.float64)
    h = loop_leaky(loop_conv1d(x, p["c.conv1.weight"].data, p["c.conv1.bias"].data, padding=2), 0.2)
    ref = x + loop_conv1d(h, p["c.conv2.weight"].data, p["c.conv2.bias"].data, padding=2)
    np.testing.assert_allclose(conv_residual_block_forward(Tensor(x), p, cfg, "c").data, ref, atol=1e-10)


def test_channel_mismatch_raises(rng):
    cfg = AxialBlockConfig(channels=4, temporal_kernel=3)
    with pytest.raises(ShapeError):
        axial_block_forward(Tensor(np.zeros((1, 5, 3))), init_axial_block(rng, cfg, "b"), cfg, "b")


@pytest.mark.parametrize("mode,residual", [("depthwise", "once"), ("lightweight", "twice")])
def test_block_gradients(mode, residual, rng):
    cfg = AxialBlockConfig(channels=4, temporal_kernel=5, temporal_mode=mode,
                           lightweight_share=2 if mode == "lightweight" else 1, residual_mode=residual)
    p = init_axial_block(rng, cfg, "b", np.float64)
    x = Tensor(rng.standard_normal((2, 4, 6)))
    target = Tensor(rng.standard_normal((2, 4, 6)))
    res = check_gradients(lambda: ad.l1_loss(axial_block_forward(x, p, cfg, "b"), target), {**p, "x": x})
    assert res.ok, res.failures[:3]


def test_receptive_field_values():
    rf = receptive_field(17, 1, 256, 1024, 22050)
    assert rf.samples == 5120
    assert rf.milliseconds == pytest.approx(232.2, abs=0.05)
    assert rf.hertz == pytest.approx(4.307, abs=1e-3)
    assert receptive_field(1, 1, 256, 1024, 22050).samples == 1024
    seven = receptive_field(17, 7, 256, 1024, 22050)
    assert seven.samples == 29_696
    assert seven.milliseconds / 1000 == pytest.approx(1.35, abs=0.005)
    assert rf.milliseconds >= 100
