"""Generator and spectrally normalized per-frame discriminator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import ConvSpec, Tensor
from .blocks import (
    AxialBlockConfig,
    ConvBlockConfig,
    axial_block_forward,
    conv_residual_block_forward,
    init_axial_block,
    init_conv,
    init_conv_block,
)
from .errors import ConfigError, ShapeError

SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    bins: int = 513
    gen_blocks: int = 7
    temporal_kernel: int = 17
    temporal_mode: str = "depthwise"
    lightweight_share: int = 1
    freq_kernel: int = 3
    gen_slope: float = 0.01
    residual_mode: str = "once"
    input_scale: float = 1.0
    disc_blocks: int = 5
    disc_channels: int = 0  # 0 means "same as bins"
    disc_kernel: int = 5
    disc_slope: float = 0.2
    disc_noise_std: float = 0.01
    sn_iterations: int = 1

    def __post_init__(self):
        if self.bins < 1 or self.gen_blocks < 0 or self.disc_blocks < 1:
            raise ConfigError("bins and disc_blocks must be positive, gen_blocks nonnegative")
        if self.input_scale <= 0:
            raise ConfigError("input_scale must be positive")
        if self.sn_iterations < 1:
            raise ConfigError("sn_iterations must be at least 1")

    @property
    def axial(self) -> AxialBlockConfig:
        return AxialBlockConfig(
            channels=self.bins,
            temporal_kernel=self.temporal_kernel,
            temporal_mode=self.temporal_mode,
            lightweight_share=self.lightweight_share,
            freq_kernel=self.freq_kernel,
            activation_slope=self.gen_slope,
            residual_mode=self.residual_mode,
        )

    @property
    def disc_hidden(self) -> int:
        return self.disc_channels or self.bins

    @property
    def disc_block(self) -> ConvBlockConfig:
        return ConvBlockConfig(self.disc_hidden, self.disc_kernel, self.disc_slope)


# ------------------------------------------------------------------ generator


@dataclass
class GeneratorParams:
    cfg: ModelConfig
    params: dict[str, Tensor]

    def frozen(self) -> "GeneratorParams":
        return GeneratorParams(self.cfg, {k: Tensor(v.data, name=k) for k, v in self.params.items()})


def init_generator(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> GeneratorParams:
    C = cfg.bins
    params: dict[str, Tensor] = {}
    for k, v in init_conv(rng, (C, C, 1), dtype=dtype).items():
        params[f"prenet.{k}"] = Tensor(v, True, f"prenet.{k}")
    for i in range(cfg.gen_blocks):
        params.update(init_axial_block(rng, cfg.axial, f"blocks.{i}", dtype=dtype))
    for k, v in init_conv(rng, (C, C, 1), dtype=dtype).items():
        params[f"postnet.{k}"] = Tensor(v, True, f"postnet.{k}")
    return GeneratorParams(cfg, params)


def identity_generator(cfg: ModelConfig, dtype=np.float64) -> GeneratorParams:
    """Generator computing exactly ``relu(x)``: identity 1x1 pre/postnets, zero blocks."""
    gp = init_generator(cfg, np.random.default_rng(0), dtype)
    eye = np.eye(cfg.bins, dtype=dtype)[:, :, None]
    for name, t in gp.params.items():
        if name.endswith(".weight") and name.split(".")[0] in ("prenet", "postnet"):
            t.data = eye.copy()
        else:
            t.data = np.zeros_like(t.data)
    return gp


def _as_batch(x: Tensor, channels: int) -> Tensor:
    if x.data.ndim != 3 or x.shape[1] != channels:
        raise ShapeError(f"expected (batch, {channels}, frames) spectrogram, got {x.shape}")
    return x


def generator_forward(x: Tensor, gp: GeneratorParams) -> Tensor:
    """relu(postnet(blocks(prenet(x)))), shape-preserving in channels and frames."""
    cfg = gp.cfg
    p = gp.params
    x = _as_batch(x, cfg.bins)
    pw = ConvSpec(cfg.bins, cfg.bins, 1)
    h = ad.scale(x, cfg.input_scale) if cfg.input_scale != 1.0 else x
    h = ad.conv1d(h, p["prenet.weight"], p["prenet.bias"], pw)
    for i in range(cfg.gen_blocks):
        h = axial_block_forward(h, p, cfg.axial, f"blocks.{i}")
    h = ad.relu(ad.conv1d(h, p["postnet.weight"], p["postnet.bias"], pw))
    if cfg.input_scale != 1.0:
        h = ad.scale(h, 1.0 / cfg.input_scale)
    return h


def convert(mag: np.ndarray, gp: GeneratorParams) -> np.ndarray:
    """Run the generator on a single ``(bins, frames)`` magnitude array."""
    dtype = gp.params["prenet.weight"].dtype
    x = Tensor(np.asarray(mag, dtype=dtype)[None])
    return generator_forward(x, gp).data[0]


# ------------------------------------------------------- spectral normalization


@dataclass
class SpectralNormState:
    u: np.ndarray
    iterations: int = 1

    @classmethod
    def init(cls, rows: int, rng: np.random.Generator, iterations: int = 1, dtype=np.float32):
        u = rng.standard_normal(rows).astype(dtype)
        return cls(u / np.linalg.norm(u), iterations)


def power_iteration(w: np.ndarray, state: SpectralNormState, update: bool = True) -> float:
    """Advance ``state.u`` and return ``sigma = u^T W v`` for ``W`` reshaped to rows x rest."""
    mat = w.reshape(w.shape[0], -1)
    u = state.u
    v = None
    for _ in range(state.iterations):
        v = mat.T @ u
        v = v / max(np.linalg.norm(v), SIGMA_FLOOR)
        u = mat @ v
        u = u / max(np.linalg.norm(u), SIGMA_FLOOR)
    sigma = float(u @ mat @ v)
    if update:
        state.u = u.astype(state.u.dtype, copy=False)
    return max(sigma, SIGMA_FLOOR)


def spectral_normalize(w: Tensor, state: SpectralNormState, update: bool = True) -> tuple[Tensor, float]:
    """``W / sigma(W)`` with sigma from persistent power iteration, held constant in backward."""
    if state is None:
        raise ValueError("missing spectral-norm state")
    sigma = power_iteration(w.data, state, update)
    return ad.scale(w, 1.0 / sigma), sigma


# -------------------------------------------------------------- discriminator


@dataclass
class DiscriminatorParams:
    cfg: ModelConfig
    params: dict[str, Tensor]
    sn: dict[str, SpectralNormState] = field(default_factory=dict)

    def frozen(self) -> "DiscriminatorParams":
        return DiscriminatorParams(
            self.cfg, {k: Tensor(v.data, name=k) for k, v in self.params.items()}, self.sn
        )


@dataclass
class DiscriminatorOutput:
    logits: Tensor  # (batch, 1, frames)
    features: list[Tensor]


def init_discriminator(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> DiscriminatorParams:
    D = cfg.disc_hidden
    params: dict[str, Tensor] = {}
    for k, v in init_conv(rng, (D, cfg.bins, 1), dtype=dtype).items():
        params[f"prenet.{k}"] = Tensor(v, True, f"prenet.{k}")
    for i in range(cfg.disc_blocks):
        params.update(init_conv_block(rng, cfg.disc_block, f"blocks.{i}", dtype=dtype))
    for k, v in init_conv(rng, (1, D, 1), dtype=dtype).items():
        params[f"postnet.{k}"] = Tensor(v, True, f"postnet.{k}")
    sn = {
        name: SpectralNormState.init(t.shape[0], rng, cfg.sn_iterations, dtype)
        for name, t in params.items()
        if name.endswith(".weight")
    }
    return DiscriminatorParams(cfg, params, sn)


def current_sigmas(dp: DiscriminatorParams) -> dict[str, float]:
    """sigma estimate of every weight from the stored vectors, without advancing them."""
    return {name: power_iteration(dp.params[name].data, st, update=False) for name, st in dp.sn.items()}


def normalized_weights(dp: DiscriminatorParams, update: bool,
                       sigmas: Mapping[str, float] | None = None) -> dict[str, Tensor]:
    """Spectrally normalized weights; ``sigmas`` pins the divisors instead of estimating them."""
    out = {}
    for name, t in dp.params.items():
        if name.endswith(".weight"):
            if sigmas is not None:
                out[name] = ad.scale(t, 1.0 / sigmas[name])
                continue
            if name not in dp.sn:
                raise ValueError(f"missing spectral-norm state for {name}")
            out[name], _ = spectral_normalize(t, dp.sn[name], update)
        else:
            out[name] = t
    return out


def discriminator_forward(
    x: Tensor,
    dp: DiscriminatorParams,
    noise_seed: int | None = None,
    training: bool = False,
    sigmas: Mapping[str, float] | None = None,
) -> DiscriminatorOutput:
    """Per-frame logits plus the post-block features used for feature matching.

    In training mode the input receives Gaussian noise and every spectral-norm
    vector advances by its configured number of power iterations; otherwise the
    pass is deterministic and leaves the state untouched.  ``sigmas`` replaces
    the estimates with fixed divisors, which makes the pass a plain function
    of the raw weights (used by the finite-difference checks).
    """
    cfg = dp.cfg
    x = _as_batch(x, cfg.bins)
    w = normalized_weights(dp, update=training and sigmas is None, sigmas=sigmas)
    if training and cfg.disc_noise_std > 0:
        if noise_seed is None:
            raise ValueError("training-mode discriminator needs a noise seed")
        x = ad.gaussian_noise(x, cfg.disc_noise_std, noise_seed)
    D = cfg.disc_hidden
    h = ad.conv1d(x, w["prenet.weight"], w["prenet.bias"], ConvSpec(cfg.bins, D, 1))
    h = ad.leaky_relu(h, cfg.disc_slope)
    features = []
    for i in range(cfg.disc_blocks):
        h = conv_residual_block_forward(h, w, cfg.disc_block, f"blocks.{i}")
        features.append(h)
    logits = ad.conv1d(h, w["postnet.weight"], w["postnet.bias"], ConvSpec(D, 1, 1))
    return DiscriminatorOutput(logits, features)
