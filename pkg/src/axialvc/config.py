"""Flat ``key=value`` run configuration covering DSP, model, training and eval."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .dsp import StftConfig
from .errors import ConfigError
from .losses import LossFlags, LossWeights
from .networks import ModelConfig
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    # analysis grid for the model
    sample_rate: int = 22050
    window_length: int = 1024
    hop: int = 256
    # generator
    gen_blocks: int = 7
    temporal_kernel: int = 17
    temporal_mode: str = "depthwise"
    lightweight_share: int = 1
    freq_kernel: int = 3
    gen_slope: float = 0.01
    residual_mode: str = "once"
    input_scale: float = 1.0
    # discriminator
    disc_blocks: int = 5
    disc_channels: int = 0
    disc_kernel: int = 5
    disc_slope: float = 0.2
    disc_noise_std: float = 0.01
    sn_iterations: int = 1
    # training
    epochs: int = 200
    batch_size: int = 16
    crop_frames: int = 128
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    anneal_factor: float = 0.1
    anneal_every: int = 50
    d_steps: int = 1
    max_steps: int = 0
    seed: int = 0
    checkpoint_every: int = 10
    # objective
    lambda_adv: float = 1.0
    lambda_cyc: float = 10.0
    lambda_id: float = 1.0
    feature_matching: bool = True
    extended_identity: bool = True
    saturating_adv: bool = False
    # synthesis and evaluation
    griffin_lim_iters: int = 32
    n_mels: int = 40
    mel_fmin: float = 0.0
    mel_fmax: float = 8000.0
    mel_floor: float = 1e-5
    eval_window: int = 1024
    eval_hop: int = 256
    msd_multiplier: float = 1.0
    out_dir: str = "runs"

    def __post_init__(self):
        # build every derived config once so invalid combinations fail early
        self.stft, self.model, self.train, self.eval_stft  # noqa: B018

    @classmethod
    def toy(cls, **overrides) -> "RunConfig":
        """Desk-scale preset: 128-sample window, 65 bins, 3 axial blocks, batch 8."""
        base = dict(
            window_length=128,
            hop=32,
            gen_blocks=3,
            disc_channels=32,
            batch_size=8,
            lr=5e-4,
            epochs=10**6,
            max_steps=600,
            checkpoint_every=0,
        )
        base.update(overrides)
        return cls(**base)

    @property
    def stft(self) -> StftConfig:
        return StftConfig(self.window_length, self.hop, self.sample_rate)

    @property
    def eval_stft(self) -> StftConfig:
        return StftConfig(self.eval_window, self.eval_hop, self.sample_rate)

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(
            bins=self.stft.bins,
            gen_blocks=self.gen_blocks,
            temporal_kernel=self.temporal_kernel,
            temporal_mode=self.temporal_mode,
            lightweight_share=self.lightweight_share,
            freq_kernel=self.freq_kernel,
            gen_slope=self.gen_slope,
            residual_mode=self.residual_mode,
            input_scale=self.input_scale,
            disc_blocks=self.disc_blocks,
            disc_channels=self.disc_channels,
            disc_kernel=self.disc_kernel,
            disc_slope=self.disc_slope,
            disc_noise_std=self.disc_noise_std,
            sn_iterations=self.sn_iterations,
        )

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_adv, self.lambda_cyc, self.lambda_id)

    @property
    def flags(self) -> LossFlags:
        return LossFlags(self.feature_matching, self.extended_identity, self.saturating_adv)

    @property
    def train(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            crop_frames=self.crop_frames,
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            adam_eps=self.adam_eps,
            anneal_factor=self.anneal_factor,
            anneal_every=self.anneal_every,
            d_steps=self.d_steps,
            max_steps=self.max_steps,
            seed=self.seed,
            weights=self.weights,
            flags=self.flags,
        )

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # ------------------------------------------------------------ text format

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _coerce(key, raw, types[key])
        return dataclasses.replace(base or cls(), **values)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path, base: "RunConfig | None" = None) -> "RunConfig":
        return cls.loads(Path(path).read_text(), base)


def _coerce(key: str, raw: str, typ) -> object:
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from None
