"""Built-in verification suites run by ``axialvc selfcheck`` and the test suite.

Each suite compares the implementation against an independent oracle:
central finite differences for gradients, an eigendecomposition of ``W^T W``
for spectral norms, exhaustive path enumeration for DTW, and a direct sweep
over sequence lengths for shape preservation.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import ConvSpec, Tensor
from .blocks import AxialBlockConfig, axial_block_forward, init_axial_block
from .evaluation import dtw_align
from .gradcheck import GradCheckResult, check_gradients
from .losses import LossWeights, adversarial_loss, generator_objective
from .networks import (
    ModelConfig,
    SpectralNormState,
    current_sigmas,
    discriminator_forward,
    generator_forward,
    init_discriminator,
    init_generator,
    power_iteration,
)

OP_RTOL = 1e-4
COMPOSITION_RTOL = 1e-3
SHAPE_LENGTHS = (1, 16, 128, 301, 500)


@dataclass
class SuiteResult:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0
    failures: list[str] = field(default_factory=list)

    def line(self) -> str:
        return f"[{'PASS' if self.ok else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _t(rng: np.random.Generator, *shape: int, lo: float = -1.0, hi: float = 1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, shape), True)


# ------------------------------------------------------------ gradient suite


def op_cases(seed: int = 0) -> dict[str, tuple[Callable[[], Tensor], dict[str, Tensor]]]:
    """Scalar-valued probes around every differentiable op, in float64."""
    rng = np.random.default_rng(seed)
    cases: dict[str, tuple[Callable[[], Tensor], dict[str, Tensor]]] = {}
    r = rng.standard_normal  # fixed projection vectors make each probe scalar

    def proj(t: Tensor, w: np.ndarray) -> Tensor:
        return ad.sum(ad.conv1d(t, Tensor(w), None, ConvSpec(t.shape[1], 1, 1))) if t.data.ndim == 3 \
            else ad.sum(ad.reshape(t, (-1,)))

    a, b = _t(rng, 2, 3, 5), _t(rng, 2, 3, 5)
    wa = r((1, 3, 1))
    cases["add"] = (lambda: proj(ad.add(a, b), wa), {"a": a, "b": b})
    cases["sub"] = (lambda: proj(ad.sub(a, b), wa), {"a": a, "b": b})
    cases["scale"] = (lambda: proj(ad.scale(a, -2.5), wa), {"a": a})
    cases["relu"] = (lambda: proj(ad.relu(a), wa), {"a": a})
    cases["leaky_relu"] = (lambda: proj(ad.leaky_relu(a, 0.2), wa), {"a": a})
    cases["gaussian_noise"] = (lambda: proj(ad.gaussian_noise(a, 0.1, 7), wa), {"a": a})
    cases["reshape"] = (lambda: proj(ad.reshape(ad.reshape(a, (6, 5)), (2, 3, 5)), wa), {"a": a})
    w2, w6 = r((1, 2, 1)), r((1, 6, 1))
    cases["take"] = (lambda: proj(ad.take(a, 1, 3, axis=1), w2), {"a": a})
    cases["concat"] = (lambda: proj(ad.concat([a, b], axis=1), w6), {"a": a, "b": b})
    cases["sum"] = (lambda: ad.sum(ad.scale(a, 0.5)), {"a": a})
    cases["mean"] = (lambda: ad.mean(ad.leaky_relu(a, 0.3)), {"a": a})
    cases["l1_loss"] = (lambda: ad.l1_loss(a, b), {"a": a, "b": b})
    cases["bce_real"] = (lambda: ad.bce_with_logits(ad.scale(a, 4.0), True), {"a": a})
    cases["bce_fake"] = (lambda: ad.bce_with_logits(ad.scale(a, 4.0), False), {"a": a})
    k, xk = _t(rng, 2, 1, 3), _t(rng, 2, 6, 5)
    dw = ConvSpec(6, 6, 3, groups=6, padding=1)
    cases["repeat_channels"] = (lambda: proj(ad.conv1d(xk, ad.repeat_channels(k, 3), None, dw), w6),
                                {"k": k, "x": xk})

    conv_specs = {
        "conv_pointwise": ConvSpec(4, 3, 1),
        "conv_full": ConvSpec(4, 3, 3, padding=1),
        "conv_strided": ConvSpec(4, 3, 3, stride=2, padding=1),
        "conv_grouped": ConvSpec(4, 6, 3, groups=2, padding=1),
        "conv_depthwise": ConvSpec(4, 4, 5, groups=4, padding=2),
    }
    for name, spec in conv_specs.items():
        x = _t(rng, 2, spec.in_channels, 9)
        w = _t(rng, *spec.weight_shape)
        bias = _t(rng, spec.out_channels)
        wo = r((1, spec.out_channels, 1))
        cases[name] = (lambda x=x, w=w, bias=bias, spec=spec, wo=wo: proj(ad.conv1d(x, w, bias, spec), wo),
                       {"x": x, "w": w, "b": bias})
    return cases


def _tiny_model(bins: int = 6) -> ModelConfig:
    return ModelConfig(bins=bins, gen_blocks=2, temporal_kernel=3, freq_kernel=3, disc_blocks=2,
                       disc_channels=5, disc_kernel=3)


def composition_cases(seed: int = 0) -> dict[str, tuple[Callable[[], Tensor], dict[str, Tensor]]]:
    """Generator objective w.r.t. both generators; discriminator loss w.r.t. both discriminators.

    Spectral-norm divisors are treated as constants in backward, so the
    discriminator probe pins them at their current estimates.
    """
    cfg = _tiny_model()
    rng = np.random.default_rng(seed)
    g_xy, g_yx = init_generator(cfg, rng, np.float64), init_generator(cfg, rng, np.float64)
    d_x, d_y = init_discriminator(cfg, rng, np.float64), init_discriminator(cfg, rng, np.float64)
    x = Tensor(rng.uniform(0.1, 2.0, (2, cfg.bins, 7)))
    y = Tensor(rng.uniform(0.1, 2.0, (2, cfg.bins, 7)))
    # bias the postnets upward so the output relu is active where it is probed
    for g in (g_xy, g_yx):
        g.params["postnet.bias"].data += 1.0

    def gen_loss() -> Tensor:
        return generator_objective(x, y, g_xy, g_yx, d_x, d_y, LossWeights()).total

    gen_params = {f"g_xy/{k}": v for k, v in g_xy.params.items()}
    gen_params.update({f"g_yx/{k}": v for k, v in g_yx.params.items()})

    sig_x, sig_y = current_sigmas(d_x), current_sigmas(d_y)
    with ad.no_grad():
        fake_x = generator_forward(y, g_yx).detach()
        fake_y = generator_forward(x, g_xy).detach()

    def disc_loss() -> Tensor:
        lx = adversarial_loss(discriminator_forward(x, d_x, sigmas=sig_x).logits,
                              discriminator_forward(fake_x, d_x, sigmas=sig_x).logits, "discriminator")
        ly = adversarial_loss(discriminator_forward(y, d_y, sigmas=sig_y).logits,
                              discriminator_forward(fake_y, d_y, sigmas=sig_y).logits, "discriminator")
        return ad.add(lx, ly)

    disc_params = {f"d_x/{k}": v for k, v in d_x.params.items()}
    disc_params.update({f"d_y/{k}": v for k, v in d_y.params.items()})

    block_cfg = AxialBlockConfig(channels=4, temporal_kernel=5, temporal_mode="lightweight",
                                 lightweight_share=2, residual_mode="twice")
    bp = init_axial_block(rng, block_cfg, "blk", np.float64)
    bx = Tensor(rng.standard_normal((2, 4, 9)))
    wb = rng.standard_normal((1, 4, 1))

    def block_loss() -> Tensor:
        out = axial_block_forward(bx, bp, block_cfg, "blk")
        return ad.sum(ad.conv1d(out, Tensor(wb), None, ConvSpec(4, 1, 1)))

    return {
        "generator objective": (gen_loss, gen_params),
        "discriminator objective": (disc_loss, disc_params),
        "lightweight axial block (twice residual)": (block_loss, dict(bp)),
    }


def gradient_suite(seed: int = 0, max_per_param: int | None = 12) -> tuple[SuiteResult, SuiteResult]:
    out = []
    for label, cases, rtol, cap in (
        ("gradients: ops", op_cases(seed), OP_RTOL, None),
        ("gradients: composition", composition_cases(seed), COMPOSITION_RTOL, max_per_param),
    ):
        t0 = time.perf_counter()
        failures, checked, worst, skipped = [], 0, 0.0, 0
        for name, (fn, params) in cases.items():
            res: GradCheckResult = check_gradients(fn, params, rtol=rtol, max_per_param=cap, seed=seed)
            checked += res.checked
            skipped += res.skipped_kinks
            worst = max(worst, res.max_rel_error)
            if not res.ok:
                failures.append(f"{name}: {len(res.failures)} mismatches, checked {res.checked}")
        detail = f"{checked} entries over {len(cases)} cases, max rel err {worst:.2e} (tol {rtol:g})"
        if skipped:
            detail += f", {skipped} kink crossings skipped"
        out.append(SuiteResult(label, not failures, detail, time.perf_counter() - t0, failures))
    return out[0], out[1]


# -------------------------------------------------------- spectral-norm suite


def svd_sigma(w: np.ndarray) -> float:
    """Largest singular value via the eigenvalues of ``W^T W`` (independent of power iteration)."""
    mat = np.asarray(w, dtype=np.float64).reshape(w.shape[0], -1)
    return float(np.sqrt(max(np.linalg.eigvalsh(mat.T @ mat)[-1], 0.0)))


@dataclass
class SigmaTrial:
    rel_error: np.ndarray  # |estimate - exact| / exact per matrix
    normalized: np.ndarray  # exact sigma of W / estimate
    gap: np.ndarray  # sigma_2 / sigma_1


def sigma_trials(n: int = 100, size: int = 16, iterations: int = 50, seed: int = 0) -> SigmaTrial:
    """Power-iteration estimates on ``n`` standard-normal matrices from a fresh random ``u``."""
    rng = np.random.default_rng(seed)
    rel, unit, gap = [], [], []
    for _ in range(n):
        w = rng.standard_normal((size, size))
        est = power_iteration(w, SpectralNormState.init(size, rng, iterations, np.float64))
        exact = svd_sigma(w)
        rel.append(abs(est - exact) / exact)
        unit.append(svd_sigma(w / est))
        s = np.sqrt(np.maximum(np.linalg.eigvalsh(w.T @ w)[::-1], 0.0))
        gap.append(s[1] / s[0])
    return SigmaTrial(np.array(rel), np.array(unit), np.array(gap))


def spectral_norm_suite(n: int = 100, size: int = 16, iterations: int = 50, seed: int = 0,
                        gap_limit: float = 0.9, slow_budget: int = 1000) -> SuiteResult:
    """Matrices with sigma_2/sigma_1 <= ``gap_limit`` must hit 1e-3 within ``iterations``.

    Power iteration converges like ``(sigma_2/sigma_1)^(2k)``, so nearly
    degenerate matrices get ``slow_budget`` iterations instead of being skipped.
    """
    t0 = time.perf_counter()
    fast = sigma_trials(n, size, iterations, seed)
    slow = sigma_trials(n, size, slow_budget, seed)
    failures = []
    for i in range(n):
        trial = fast if fast.gap[i] <= gap_limit else slow
        if trial.rel_error[i] > 1e-3 or abs(trial.normalized[i] - 1.0) > 1e-3:
            failures.append(f"matrix {i} (gap {fast.gap[i]:.3f}): rel err {trial.rel_error[i]:.2e}")
    n_slow = int((fast.gap > gap_limit).sum())
    detail = (f"{n} random {size}x{size}: {n - n_slow} with gap <= {gap_limit} in {iterations} iterations "
              f"(max rel err {fast.rel_error[fast.gap <= gap_limit].max():.1e}), "
              f"{n_slow} near-degenerate in {slow_budget}")
    return SuiteResult("spectral norm vs SVD oracle", not failures, detail, time.perf_counter() - t0, failures)


# ------------------------------------------------------------------ DTW suite


@lru_cache(maxsize=None)
def monotone_paths(n: int, m: int) -> tuple[tuple[tuple[int, int], ...], ...]:
    """Every path from (0, 0) to (n-1, m-1) using steps (1,0), (0,1), (1,1)."""
    if n == 1 and m == 1:
        return (((0, 0),),)
    out = []
    for di, dj in ((1, 1), (1, 0), (0, 1)):
        pi, pj = n - di, m - dj
        if pi >= 1 and pj >= 1:
            out.extend(p + ((n - 1, m - 1),) for p in monotone_paths(pi, pj))
    return tuple(out)


def brute_force_dtw(a: np.ndarray, b: np.ndarray) -> float:
    cost = np.sqrt(((a.T[:, None, :] - b.T[None, :, :]) ** 2).sum(-1))
    return min(sum(cost[i, j] for i, j in p) for p in monotone_paths(a.shape[1], b.shape[1]))


def dtw_suite(max_len: int = 6, dims: int = 3, seed: int = 0) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    failures, worst = [], 0.0
    for ta, tb in itertools.product(range(1, max_len + 1), repeat=2):
        a, b = rng.standard_normal((dims, ta)), rng.standard_normal((dims, tb))
        res = dtw_align(a, b)
        exact = brute_force_dtw(a, b)
        err = abs(res.total_cost - exact) / max(exact, 1e-12)
        path_cost = sum(float(np.linalg.norm(a[:, i] - b[:, j])) for i, j in res.path)
        err = max(err, abs(path_cost - exact) / max(exact, 1e-12))
        worst = max(worst, err)
        if err > 1e-9:
            failures.append(f"{ta}x{tb}: dp {res.total_cost:.6g} vs exhaustive {exact:.6g}")
    detail = f"all shapes up to {max_len}x{max_len}, max rel err {worst:.1e}"
    return SuiteResult("DTW vs exhaustive paths", not failures, detail, time.perf_counter() - t0, failures)


# ---------------------------------------------------------------- shape suite


def shape_suite(lengths=SHAPE_LENGTHS, bins: tuple[int, ...] = (65, 513), seed: int = 0) -> SuiteResult:
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    failures = []
    for c in bins:
        cfg = ModelConfig(bins=c, gen_blocks=3 if c <= 65 else 7)
        gp = init_generator(cfg, rng)
        for t in lengths:
            x = Tensor(rng.uniform(0, 1, (1, c, t)).astype(np.float32))
            with ad.no_grad():
                y = generator_forward(x, gp)
            if y.shape != x.shape:
                failures.append(f"bins {c}, T={t}: output {y.shape}")
    detail = f"bins {list(bins)} x T {list(lengths)}"
    return SuiteResult("generator shape preservation", not failures, detail, time.perf_counter() - t0, failures)


def run_all(seed: int = 0) -> list[SuiteResult]:
    return [*gradient_suite(seed), spectral_norm_suite(seed=seed), dtw_suite(seed=seed), shape_suite(seed=seed)]
