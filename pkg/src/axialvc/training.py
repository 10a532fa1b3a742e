"""Two-pair CycleGAN training: Adam, step schedule, batching, checkpoints."""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError, ConfigError, NonFiniteError
from .losses import LossFlags, LossReport, LossWeights, adversarial_loss, generator_objective
from .networks import (
    DiscriminatorParams,
    GeneratorParams,
    ModelConfig,
    SpectralNormState,
    discriminator_forward,
    generator_forward,
    init_discriminator,
    init_generator,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
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
    max_steps: int = 0  # 0: no cap beyond epochs
    seed: int = 0
    weights: LossWeights = LossWeights()
    flags: LossFlags = LossFlags()

    def __post_init__(self):
        for name in ("epochs", "batch_size", "crop_frames", "anneal_every", "d_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be nonnegative")


# ---------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int, lr: float,
              beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on ``param``, ``m`` and ``v``; ``t`` counts from 1."""
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * (grad * grad)
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype, copy=False)


def adam_update(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    state.t += 1
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        adam_step(p.data, g, state.m[name], state.v[name], state.t, lr, state.beta1, state.beta2, state.eps)
        p.grad = None


def lr_schedule(epoch: int, base: float = 2e-4, factor: float = 0.1, every: int = 50) -> float:
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    return base * factor ** (epoch // every)


# -------------------------------------------------------------------- corpus


@dataclass
class CorpusDataset:
    items: list[np.ndarray]  # each (bins, frames), nonnegative
    names: list[str] = field(default_factory=list)
    label: str = ""

    def __post_init__(self):
        if not self.names:
            self.names = [f"{self.label or 'item'}_{i:04d}" for i in range(len(self.items))]

    def __len__(self) -> int:
        return len(self.items)

    @property
    def bins(self) -> int:
        return self.items[0].shape[0]

    def usable(self, crop_frames: int) -> "CorpusDataset":
        keep = [i for i, m in enumerate(self.items) if m.shape[1] >= crop_frames]
        return CorpusDataset([self.items[i] for i in keep], [self.names[i] for i in keep], self.label)


def _draw(ds: CorpusDataset, batch_size: int, crop_frames: int, rng: np.random.Generator) -> np.ndarray:
    idx = rng.integers(0, len(ds), size=batch_size)
    out = np.empty((batch_size, ds.bins, crop_frames), dtype=np.float32)
    for b, i in enumerate(idx):
        item = ds.items[i]
        if item.shape[1] < crop_frames:
            raise ValueError(f"item {ds.names[i]} has {item.shape[1]} < {crop_frames} frames")
        s = int(rng.integers(0, item.shape[1] - crop_frames + 1))
        out[b] = item[:, s : s + crop_frames]
    return out


def sample_batch(ds_x: CorpusDataset, ds_y: CorpusDataset, batch_size: int, crop_frames: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Independent, unpaired random crops from each identity."""
    if not len(ds_x) or not len(ds_y):
        raise ValueError("both datasets must be nonempty")
    return _draw(ds_x, batch_size, crop_frames, rng), _draw(ds_y, batch_size, crop_frames, rng)


# --------------------------------------------------------------------- state


@dataclass
class TrainState:
    model: ModelConfig
    train: TrainConfig
    g_xy: GeneratorParams
    g_yx: GeneratorParams
    d_x: DiscriminatorParams
    d_y: DiscriminatorParams
    opt: dict[str, AdamState]
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0

    @classmethod
    def create(cls, model: ModelConfig, train: TrainConfig) -> "TrainState":
        rng = np.random.default_rng(train.seed)
        nets = dict(
            g_xy=init_generator(model, rng),
            g_yx=init_generator(model, rng),
            d_x=init_discriminator(model, rng),
            d_y=init_discriminator(model, rng),
        )
        opt = {k: AdamState(beta1=train.beta1, beta2=train.beta2, eps=train.adam_eps) for k in nets}
        return cls(model, train, opt=opt, rng=rng, **nets)

    def networks(self) -> dict[str, GeneratorParams | DiscriminatorParams]:
        return {"g_xy": self.g_xy, "g_yx": self.g_yx, "d_x": self.d_x, "d_y": self.d_y}


def _seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))


def _discriminator_loss(d: DiscriminatorParams, real: np.ndarray, fake: np.ndarray, seed: int) -> Tensor:
    both = Tensor(np.concatenate([real, fake], axis=0))
    logits = discriminator_forward(both, d, seed, training=True).logits
    B = real.shape[0]
    return adversarial_loss(ad.take(logits, 0, B), ad.take(logits, B, 2 * B), "discriminator")


def train_step(state: TrainState, batch: tuple[np.ndarray, np.ndarray], lr: float | None = None) -> LossReport:
    """One discriminator update (both D) followed by one joint generator update.

    Mutates ``state`` in place and returns the step's loss report.
    """
    cfg = state.train
    lr = lr_schedule(state.epoch, cfg.lr, cfg.anneal_factor, cfg.anneal_every) if lr is None else lr
    xb, yb = batch
    x, y = Tensor(xb), Tensor(yb)

    with ad.no_grad():
        fake_y = generator_forward(x, state.g_xy).data
        fake_x = generator_forward(y, state.g_yx).data
    for _ in range(cfg.d_steps):
        sx, sy = _seed(state.rng), _seed(state.rng)
        with ad.Tape() as tape:
            loss_dx = _discriminator_loss(state.d_x, xb, fake_x, sx)
            loss_dy = _discriminator_loss(state.d_y, yb, fake_y, sy)
            tape.backward(ad.add(loss_dx, loss_dy))
        adam_update(state.d_x.params, state.opt["d_x"], lr)
        adam_update(state.d_y.params, state.opt["d_y"], lr)

    seeds = (_seed(state.rng), _seed(state.rng))
    with ad.Tape() as tape:
        terms = generator_objective(
            x, y, state.g_xy, state.g_yx, state.d_x.frozen(), state.d_y.frozen(),
            cfg.weights, cfg.flags, noise_seeds=seeds,
        )
        tape.backward(terms.total)
    adam_update(state.g_xy.params, state.opt["g_xy"], lr)
    adam_update(state.g_yx.params, state.opt["g_yx"], lr)

    state.step += 1
    adv_g, cyc, idl = float(terms.adv_g.data), float(terms.cyc.data), float(terms.id.data)
    w = cfg.weights
    return LossReport(
        step=state.step,
        adv_d_x=float(loss_dx.data),
        adv_d_y=float(loss_dy.data),
        adv_g=adv_g,
        cyc=cyc,
        id=idl,
        total=w.lambda_adv * adv_g + w.lambda_cyc * cyc + w.lambda_id * idl,
    )


def steps_per_epoch(ds_x: CorpusDataset, ds_y: CorpusDataset, batch_size: int) -> int:
    return max(1, math.ceil(min(len(ds_x), len(ds_y)) / batch_size))


def train(
    state: TrainState,
    ds_x: CorpusDataset,
    ds_y: CorpusDataset,
    epochs: int | None = None,
    on_step: Callable[[LossReport], None] | None = None,
    on_epoch: Callable[[TrainState], None] | None = None,
    diagnostic_path: str | Path | None = None,
) -> list[LossReport]:
    """Run epochs until ``epochs`` (default: config) or ``max_steps`` is reached.

    Resumes from ``state.epoch``/``state.step``; an epoch is one pass over the
    smaller corpus.
    """
    cfg = state.train
    epochs = cfg.epochs if epochs is None else epochs
    ds_x, ds_y = ds_x.usable(cfg.crop_frames), ds_y.usable(cfg.crop_frames)
    if not len(ds_x) or not len(ds_y):
        raise ValueError(f"no utterance has at least {cfg.crop_frames} frames")
    per_epoch = steps_per_epoch(ds_x, ds_y, cfg.batch_size)
    reports = []
    while state.epoch < epochs:
        while state.step < (state.epoch + 1) * per_epoch:
            if cfg.max_steps and state.step >= cfg.max_steps:
                return reports
            batch = sample_batch(ds_x, ds_y, cfg.batch_size, cfg.crop_frames, state.rng)
            try:
                report = train_step(state, batch)
            except NonFiniteError:
                if diagnostic_path is not None:
                    save_checkpoint(state, diagnostic_path)
                    log.error("non-finite loss at step %d; diagnostic checkpoint at %s", state.step, diagnostic_path)
                raise
            reports.append(report)
            if on_step:
                on_step(report)
        state.epoch += 1
        if on_epoch:
            on_epoch(state)
    return reports


# ---------------------------------------------------------------- checkpoints

MAGIC = b"AXVCCKPT"
FORMAT_VERSION = 1


def config_hash(model: ModelConfig) -> bytes:
    blob = json.dumps(dataclasses.asdict(model), sort_keys=True).encode()
    return hashlib.sha256(blob).digest()


def _write_block(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    raw = name.encode()
    arr = np.ascontiguousarray(arr, dtype="<f4")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(arr.tobytes())


def _read_block(buf: io.BytesIO) -> tuple[str, np.ndarray]:
    (n,) = struct.unpack("<H", buf.read(2))
    name = buf.read(n).decode()
    (ndim,) = struct.unpack("<B", buf.read(1))
    shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(buf.read(4 * count), dtype="<f4").astype(np.float32).reshape(shape)
    return name, data


def _tensor_blocks(state: TrainState) -> Iterable[tuple[str, np.ndarray]]:
    for net_name, net in state.networks().items():
        for k, t in net.params.items():
            yield f"{net_name}/{k}", t.data
        if isinstance(net, DiscriminatorParams):
            for k, s in net.sn.items():
                yield f"{net_name}/sn/{k}", s.u


def _optimizer_blocks(state: TrainState) -> Iterable[tuple[str, np.ndarray]]:
    for net_name, opt in state.opt.items():
        for k in sorted(opt.m):
            yield f"{net_name}/m/{k}", opt.m[k]
            yield f"{net_name}/v/{k}", opt.v[k]


def checkpoint_bytes(state: TrainState, extra: dict | None = None) -> bytes:
    meta = {
        "model": dataclasses.asdict(state.model),
        "train": dataclasses.asdict(state.train),
        "epoch": state.epoch,
        "step": state.step,
        "adam_t": {k: o.t for k, o in state.opt.items()},
        "rng": state.rng.bit_generator.state,
        "extra": extra or {},
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(config_hash(state.model))
    raw = json.dumps(meta, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    for section in (list(_tensor_blocks(state)), list(_optimizer_blocks(state))):
        buf.write(struct.pack("<I", len(section)))
        for name, arr in section:
            _write_block(buf, name, arr)
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def save_checkpoint(state: TrainState, path: str | Path, extra: dict | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(state, extra))
    tmp.replace(path)


def _train_config_from(d: dict) -> TrainConfig:
    d = dict(d)
    d["weights"] = LossWeights(**d["weights"])
    d["flags"] = LossFlags(**d["flags"])
    return TrainConfig(**d)


def load_checkpoint(path: str | Path) -> tuple[TrainState, dict]:
    """Inverse of :func:`save_checkpoint`; returns the state and the ``extra`` dict."""
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 4 + 32 + 32 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupt)")
    buf = io.BytesIO(body)
    buf.read(len(MAGIC))
    (version,) = struct.unpack("<I", buf.read(4))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    stored_hash = buf.read(32)
    (n,) = struct.unpack("<I", buf.read(4))
    meta = json.loads(buf.read(n))
    model = ModelConfig(**meta["model"])
    if config_hash(model) != stored_hash:
        raise CheckpointError(f"{path}: model config hash mismatch")
    train_cfg = _train_config_from(meta["train"])
    tensors = {}
    for _ in range(2):
        (count,) = struct.unpack("<I", buf.read(4))
        for _ in range(count):
            name, arr = _read_block(buf)
            tensors[name] = arr

    state = TrainState.create(model, train_cfg)
    for net_name, net in state.networks().items():
        for k, t in net.params.items():
            t.data = tensors[f"{net_name}/{k}"].copy()
        if isinstance(net, DiscriminatorParams):
            for k in net.sn:
                net.sn[k] = SpectralNormState(tensors[f"{net_name}/sn/{k}"].copy(), model.sn_iterations)
        opt = state.opt[net_name]
        opt.t = meta["adam_t"][net_name]
        for k in net.params:
            if f"{net_name}/m/{k}" in tensors:
                opt.m[k] = tensors[f"{net_name}/m/{k}"].copy()
                opt.v[k] = tensors[f"{net_name}/v/{k}"].copy()
    state.rng.bit_generator.state = meta["rng"]
    state.epoch = meta["epoch"]
    state.step = meta["step"]
    return state, meta["extra"]
