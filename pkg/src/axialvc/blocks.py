"""Residual building blocks.

The axial block factors its work into a per-band temporal convolution
(depthwise, or lightweight with kernels shared across groups of bands)
followed by a frequency convolution that mixes every band at each frame.
The conventional block (two full convolutions) is what the discriminator uses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import ConvSpec, Tensor
from .errors import ConfigError, ShapeError

Params = Mapping[str, Tensor]


@dataclass(frozen=True)
class AxialBlockConfig:
    channels: int = 513
    temporal_kernel: int = 17
    temporal_mode: str = "depthwise"  # or "lightweight"
    lightweight_share: int = 1
    freq_kernel: int = 3
    activation_slope: float = 0.01
    residual_mode: str = "once"  # or "twice"

    def __post_init__(self):
        if self.temporal_kernel % 2 == 0 or self.freq_kernel % 2 == 0:
            raise ConfigError("temporal_kernel and freq_kernel must be odd")
        if self.temporal_mode not in ("depthwise", "lightweight"):
            raise ConfigError(f"unknown temporal_mode {self.temporal_mode!r}")
        if self.residual_mode not in ("once", "twice"):
            raise ConfigError(f"unknown residual_mode {self.residual_mode!r}")
        if self.temporal_mode == "lightweight" and self.channels % self.lightweight_share:
            raise ConfigError(
                f"channels {self.channels} not divisible by lightweight_share {self.lightweight_share}"
            )

    @property
    def temporal_spec(self) -> ConvSpec:
        return ConvSpec.same(self.channels, self.channels, self.temporal_kernel, groups=self.channels)

    @property
    def freq_spec(self) -> ConvSpec:
        return ConvSpec.same(self.channels, self.channels, self.freq_kernel)


@dataclass(frozen=True)
class ConvBlockConfig:
    channels: int
    kernel: int = 5
    activation_slope: float = 0.2

    def __post_init__(self):
        if self.kernel % 2 == 0:
            raise ConfigError("conv block kernel must be odd")

    @property
    def spec(self) -> ConvSpec:
        return ConvSpec.same(self.channels, self.channels, self.kernel)


def init_conv(rng: np.random.Generator, weight_shape, bias: bool = True, dtype=np.float32):
    """Uniform +-sqrt(1/fan_in) for weight and bias."""
    fan_in = int(np.prod(weight_shape[1:]))
    bound = np.sqrt(1.0 / fan_in)
    w = rng.uniform(-bound, bound, size=weight_shape).astype(dtype)
    out = {"weight": w}
    if bias:
        out["bias"] = rng.uniform(-bound, bound, size=weight_shape[0]).astype(dtype)
    return out


def _named(prefix: str, arrays: dict) -> dict[str, Tensor]:
    return {f"{prefix}.{k}": Tensor(v, requires_grad=True, name=f"{prefix}.{k}") for k, v in arrays.items()}


def init_axial_block(rng, cfg: AxialBlockConfig, prefix: str = "block", dtype=np.float32) -> dict[str, Tensor]:
    C = cfg.channels
    if cfg.temporal_mode == "depthwise":
        temporal = init_conv(rng, (C, 1, cfg.temporal_kernel), dtype=dtype)
    else:
        temporal = init_conv(rng, (C // cfg.lightweight_share, 1, cfg.temporal_kernel), bias=False, dtype=dtype)
        temporal["bias"] = rng.uniform(-1, 1, size=C).astype(dtype) / np.sqrt(cfg.temporal_kernel)
    params = _named(f"{prefix}.temporal", temporal)
    params.update(_named(f"{prefix}.freq", init_conv(rng, cfg.freq_spec.weight_shape, dtype=dtype)))
    return params


def init_conv_block(rng, cfg: ConvBlockConfig, prefix: str = "block", dtype=np.float32) -> dict[str, Tensor]:
    params = _named(f"{prefix}.conv1", init_conv(rng, cfg.spec.weight_shape, dtype=dtype))
    params.update(_named(f"{prefix}.conv2", init_conv(rng, cfg.spec.weight_shape, dtype=dtype)))
    return params


def lightweight_temporal_conv(x: Tensor, kernels: Tensor, bias: Tensor | None, cfg: AxialBlockConfig) -> Tensor:
    """Temporal conv where band ``c`` uses kernel ``c // lightweight_share``.

    ``kernels`` is ``(C/H, k)`` or ``(C/H, 1, k)``.
    """
    H = cfg.lightweight_share
    if cfg.channels % H:
        raise ShapeError(f"channels {cfg.channels} not divisible by share {H}")
    rows = cfg.channels // H
    if kernels.data.ndim == 2:
        kernels = ad.reshape(kernels, (kernels.shape[0], 1, kernels.shape[1]))
    if kernels.shape != (rows, 1, cfg.temporal_kernel):
        raise ShapeError(f"lightweight kernels shape {kernels.shape} != ({rows}, 1, {cfg.temporal_kernel})")
    full = ad.repeat_channels(kernels, H) if H > 1 else kernels
    return ad.conv1d(x, full, bias, cfg.temporal_spec)


def _check_channels(x: Tensor, channels: int) -> None:
    if x.data.ndim != 3 or x.shape[1] != channels:
        raise ShapeError(f"block expects (batch, {channels}, frames), got {x.shape}")


def axial_block_forward(x: Tensor, params: Params, cfg: AxialBlockConfig, prefix: str = "block") -> Tensor:
    _check_channels(x, cfg.channels)
    tw, tb = params[f"{prefix}.temporal.weight"], params.get(f"{prefix}.temporal.bias")
    if cfg.temporal_mode == "depthwise":
        h = ad.conv1d(x, tw, tb, cfg.temporal_spec)
    else:
        h = lightweight_temporal_conv(x, tw, tb, cfg)
    fw, fb = params[f"{prefix}.freq.weight"], params.get(f"{prefix}.freq.bias")
    if cfg.residual_mode == "once":
        return ad.add(x, ad.conv1d(ad.leaky_relu(h, cfg.activation_slope), fw, fb, cfg.freq_spec))
    h = ad.add(x, h)
    return ad.add(h, ad.conv1d(ad.leaky_relu(h, cfg.activation_slope), fw, fb, cfg.freq_spec))


def conv_residual_block_forward(x: Tensor, params: Params, cfg: ConvBlockConfig, prefix: str = "block") -> Tensor:
    _check_channels(x, cfg.channels)
    spec = cfg.spec
    h = ad.conv1d(x, params[f"{prefix}.conv1.weight"], params.get(f"{prefix}.conv1.bias"), spec)
    h = ad.leaky_relu(h, cfg.activation_slope)
    h = ad.conv1d(h, params[f"{prefix}.conv2.weight"], params.get(f"{prefix}.conv2.bias"), spec)
    return ad.add(x, h)


@dataclass(frozen=True)
class ReceptiveField:
    samples: int
    milliseconds: float
    hertz: float


def receptive_field(temporal_kernel: int, blocks: int, hop: int, window: int, sample_rate: float) -> ReceptiveField:
    """Waveform span seen by ``blocks`` stacked temporal convolutions.

    One frame covers ``window`` samples; each block widens the span by
    ``(temporal_kernel - 1)`` hops.
    """
    if min(temporal_kernel, blocks, hop, window, sample_rate) <= 0:
        raise ValueError("receptive_field arguments must be positive")
    samples = window + blocks * (temporal_kernel - 1) * hop
    ms = 1000.0 * samples / sample_rate
    return ReceptiveField(samples, ms, 1000.0 / ms)
