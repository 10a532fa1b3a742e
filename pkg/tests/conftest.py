"""Independent reference implementations shared by the test modules.

Everything here is written as plain loops over the defining formulas so it
shares no code path with the vectorized implementations under test.
"""

from __future__ import annotations

import numpy as np
import pytest


def loop_conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int = 1, groups: int = 1,
                padding: int = 0) -> np.ndarray:
    """Naive grouped cross-correlation on ``(B, Cin, T)``."""
    B, cin, T = x.shape
    cout, cg, k = w.shape
    og = cout // groups
    xp = np.zeros((B, cin, T + 2 * padding))
    xp[:, :, padding : padding + T] = x
    tout = (T + 2 * padding - k) // stride + 1
    out = np.zeros((B, cout, tout))
    for n in range(B):
        for o in range(cout):
            g = o // og
            for t in range(tout):
                acc = 0.0 if b is None else float(b[o])
                for c in range(cg):
                    for j in range(k):
                        acc += w[o, c, j] * xp[n, g * cg + c, t * stride + j]
                out[n, o, t] = acc
    return out


def loop_leaky(x: np.ndarray, slope: float) -> np.ndarray:
    out = np.empty_like(x)
    for i, v in np.ndenumerate(x):
        out[i] = v if v > 0 else slope * v
    return out


def direct_dft_frames(x: np.ndarray, window: np.ndarray, hop: int) -> np.ndarray:
    """``(bins, frames)`` magnitudes from the O(N^2) DFT sum, frame by frame."""
    W = len(window)
    frames = 1 + (len(x) - W) // hop
    n = np.arange(W)
    out = np.zeros((W // 2 + 1, frames))
    for t in range(frames):
        seg = x[t * hop : t * hop + W] * window
        for kbin in range(W // 2 + 1):
            out[kbin, t] = abs(np.sum(seg * np.exp(-2j * np.pi * kbin * n / W)))
    return out


def softplus(z: float) -> float:
    return max(z, 0.0) + np.log1p(np.exp(-abs(z)))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


# acceptance lines, echoed in the terminal summary so they survive output capture
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
