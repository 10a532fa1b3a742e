"""CycleGAN objective: adversarial, cycle + feature matching, extended identity."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .networks import DiscriminatorParams, GeneratorParams, discriminator_forward, generator_forward


@dataclass(frozen=True)
class LossWeights:
    lambda_adv: float = 1.0
    lambda_cyc: float = 10.0
    lambda_id: float = 1.0

    def __post_init__(self):
        if min(self.lambda_adv, self.lambda_cyc, self.lambda_id) < 0:
            raise ConfigError("loss weights must be nonnegative")


@dataclass(frozen=True)
class LossFlags:
    feature_matching: bool = True
    extended_identity: bool = True
    saturating_adv: bool = False


@dataclass
class LossReport:
    step: int
    adv_d_x: float
    adv_d_y: float
    adv_g: float
    cyc: float
    id: float
    total: float

    COLUMNS = ("step", "adv_d_x", "adv_d_y", "adv_g", "cyc", "id", "total")

    def row(self) -> list[str]:
        return [str(self.step)] + [repr(float(getattr(self, c))) for c in self.COLUMNS[1:]]


def adversarial_loss(
    real_logits: Tensor | None, fake_logits: Tensor, side: str, saturating: bool = False
) -> Tensor:
    """Binary cross entropy on per-frame logits, averaged over frames and batch.

    ``side="discriminator"``: real frames toward 1, fake toward 0.
    ``side="generator"``: non-saturating ``-log D(G(x))`` by default; with
    ``saturating=True`` the literal minimax term ``log(1 - D(G(x)))``.
    """
    if side == "discriminator":
        if real_logits is None:
            raise ValueError("discriminator side needs real logits")
        return ad.add(ad.bce_with_logits(real_logits, True), ad.bce_with_logits(fake_logits, False))
    if side == "generator":
        if saturating:
            return ad.scale(ad.bce_with_logits(fake_logits, False), -1.0)
        return ad.bce_with_logits(fake_logits, True)
    raise ValueError(f"unknown side {side!r}")


def _feature_distance(d: DiscriminatorParams, cycled: Tensor, original: Tensor) -> Tensor:
    with ad.no_grad():
        target = [f.detach() for f in discriminator_forward(original, d, training=False).features]
    feats = discriminator_forward(cycled, d, training=False).features
    terms = [ad.l1_loss(f, t) for f, t in zip(feats, target)]
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.scale(total, 1.0 / len(terms))


def _gen(g: GeneratorParams) -> Callable[[Tensor], Tensor]:
    return lambda x: generator_forward(x, g)


def cycle_loss(
    x: Tensor,
    y: Tensor,
    g_xy: GeneratorParams,
    g_yx: GeneratorParams,
    d_x: DiscriminatorParams | None = None,
    d_y: DiscriminatorParams | None = None,
    feature_matching: bool = True,
    fake_y: Tensor | None = None,
    fake_x: Tensor | None = None,
) -> Tensor:
    """L1 cycle reconstruction in both directions, plus discriminator feature matching.

    ``fake_y``/``fake_x`` let the caller reuse ``G_xy(x)``/``G_yx(y)`` already on the tape.
    """
    fake_y = generator_forward(x, g_xy) if fake_y is None else fake_y
    fake_x = generator_forward(y, g_yx) if fake_x is None else fake_x
    cyc_x = generator_forward(fake_y, g_yx)
    cyc_y = generator_forward(fake_x, g_xy)
    loss = ad.add(ad.l1_loss(cyc_x, x), ad.l1_loss(cyc_y, y))
    if feature_matching:
        if d_x is None or d_y is None:
            raise ValueError("feature matching needs both discriminators")
        loss = ad.add(loss, _feature_distance(d_x, cyc_x, x))
        loss = ad.add(loss, _feature_distance(d_y, cyc_y, y))
    return loss


def identity_loss(
    x: Tensor,
    y: Tensor,
    g_xy: GeneratorParams,
    g_yx: GeneratorParams,
    extended: bool = True,
    fake_y: Tensor | None = None,
    fake_x: Tensor | None = None,
) -> Tensor:
    """Identity mapping on real target-domain samples, and (extended) on converted ones.

    The extended terms compare ``G_xy(G_xy(x))`` with ``G_xy(x)`` and
    ``G_yx(G_yx(y))`` with ``G_yx(y)``; gradients flow through both applications.
    """
    loss = ad.add(ad.l1_loss(generator_forward(y, g_xy), y), ad.l1_loss(generator_forward(x, g_yx), x))
    if extended:
        fake_y = generator_forward(x, g_xy) if fake_y is None else fake_y
        fake_x = generator_forward(y, g_yx) if fake_x is None else fake_x
        loss = ad.add(loss, ad.l1_loss(generator_forward(fake_y, g_xy), fake_y))
        loss = ad.add(loss, ad.l1_loss(generator_forward(fake_x, g_yx), fake_x))
    return loss


def total_generator_loss(adv_g, cyc, id_, w: LossWeights):
    """``lambda_adv*adv + lambda_cyc*cyc + lambda_id*id``; works on tensors or floats."""
    if isinstance(adv_g, Tensor):
        total = ad.scale(adv_g, w.lambda_adv)
        total = ad.add(total, ad.scale(cyc, w.lambda_cyc))
        return ad.add(total, ad.scale(id_, w.lambda_id))
    return w.lambda_adv * adv_g + w.lambda_cyc * cyc + w.lambda_id * id_


@dataclass
class GeneratorTerms:
    total: Tensor
    adv_g: Tensor
    cyc: Tensor
    id: Tensor


def generator_objective(
    x: Tensor,
    y: Tensor,
    g_xy: GeneratorParams,
    g_yx: GeneratorParams,
    d_x: DiscriminatorParams,
    d_y: DiscriminatorParams,
    weights: LossWeights,
    flags: LossFlags = LossFlags(),
    noise_seeds: tuple[int, int] | None = None,
) -> GeneratorTerms:
    """Full generator-side objective over both directions.

    With ``noise_seeds`` the adversarial discriminator passes run in training
    mode (input noise, power-iteration update); without, they are deterministic.
    """
    fake_y = generator_forward(x, g_xy)
    fake_x = generator_forward(y, g_yx)
    training = noise_seeds is not None
    sy, sx = noise_seeds if training else (None, None)
    logits_y = discriminator_forward(fake_y, d_y, sy, training).logits
    logits_x = discriminator_forward(fake_x, d_x, sx, training).logits
    adv = ad.add(
        adversarial_loss(None, logits_y, "generator", flags.saturating_adv),
        adversarial_loss(None, logits_x, "generator", flags.saturating_adv),
    )
    cyc = cycle_loss(x, y, g_xy, g_yx, d_x, d_y, flags.feature_matching, fake_y, fake_x)
    idl = identity_loss(x, y, g_xy, g_yx, flags.extended_identity, fake_y, fake_x)
    return GeneratorTerms(total_generator_loss(adv, cyc, idl, weights), adv, cyc, idl)
