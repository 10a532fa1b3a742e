"""Central finite-difference gradient checking in double precision."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autodiff import Tape, Tensor


@dataclass
class GradCheckResult:
    checked: int = 0
    skipped_kinks: int = 0
    max_rel_error: float = 0.0
    failures: list[tuple[str, tuple, float, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures and self.checked > 0


def _rel_err(a: float, n: float, floor: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    rtol: float = 1e-4,
    max_per_param: int | None = None,
    seed: int = 0,
    abs_floor: float = 1e-7,
) -> GradCheckResult:
    """Compare tape gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must rebuild the forward pass from the current contents of
    ``params`` (float64 tensors, modified in place here).  An entry whose +h and
    -h evaluations take different branches at a relu/leaky-relu/L1 kink is
    excluded, since the difference quotient is meaningless there.
    """
    for p in params.values():
        if p.data.dtype != np.float64:
            raise TypeError("gradient checks run in double precision")
        p.grad = None
        p.requires_grad = True
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for k, p in params.items()}

    def probe() -> tuple[float, np.ndarray]:
        with Tape() as t:
            val = loss_fn()
            sig = t.kink_signature()
        return float(val.data), sig

    rng = np.random.default_rng(seed)
    res = GradCheckResult()
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = np.sort(rng.choice(flat.size, max_per_param, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp, sp = probe()
            flat[i] = orig - h
            fm, sm = probe()
            flat[i] = orig
            if sp.shape != sm.shape or not np.array_equal(sp, sm):
                res.skipped_kinks += 1
                continue
            num = (fp - fm) / (2 * h)
            a = float(analytic[name].reshape(-1)[i])
            err = _rel_err(a, num, abs_floor)
            res.checked += 1
            res.max_rel_error = max(res.max_rel_error, err)
            if err > rtol:
                res.failures.append((name, np.unravel_index(i, p.shape), a, num))
    for p in params.values():
        p.grad = None
    return res
