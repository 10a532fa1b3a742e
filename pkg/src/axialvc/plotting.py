"""Figures written next to the CSV/text reports."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _save(fig: Figure, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def read_loss_log(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        return {}
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def plot_losses(log: dict[str, np.ndarray], path: str | Path, smooth: int = 20) -> Path:
    """Training curves: discriminator terms on the left, generator terms on the right."""
    with plt.rc_context(STYLE):
        fig, (ax_d, ax_g) = plt.subplots(1, 2, figsize=(8, 3), constrained_layout=True)
        step = log["step"]

        def smoothed(v):
            if len(v) < smooth or smooth < 2:
                return step, v
            kernel = np.ones(smooth) / smooth
            return step[smooth - 1 :], np.convolve(v, kernel, mode="valid")

        for key in ("adv_d_x", "adv_d_y"):
            ax_d.plot(*smoothed(log[key]), label=key)
        ax_d.set_xlabel("step")
        ax_d.set_ylabel("BCE")
        ax_d.legend(frameon=False)
        for key in ("adv_g", "cyc", "id"):
            ax_g.plot(*smoothed(log[key]), label=key)
        ax_g.set_xlabel("step")
        ax_g.set_yscale("log")
        ax_g.legend(frameon=False)
        return _save(fig, path)


def plot_conversion(source: np.ndarray, converted: np.ndarray, reference: np.ndarray | None,
                    path: str | Path, sample_rate: float, hop: int, title: str = "") -> Path:
    """Log-magnitude spectrograms of source, converted and (optionally) target side by side."""
    panels = [("source", source), ("converted", converted)]
    if reference is not None:
        panels.append(("reference", reference))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(panels), figsize=(3.2 * len(panels), 2.8),
                                 constrained_layout=True, sharey=True)
        top = sample_rate / 2000.0
        for ax, (name, mag) in zip(np.atleast_1d(axes), panels):
            db = 20 * np.log10(np.maximum(mag, 1e-5))
            dur = mag.shape[1] * hop / sample_rate
            ax.imshow(db, origin="lower", aspect="auto", cmap="magma",
                      extent=(0, dur, 0, top), vmin=db.max() - 80, vmax=db.max())
            ax.set_title(name)
            ax.set_xlabel("time [s]")
        np.atleast_1d(axes)[0].set_ylabel("frequency [kHz]")
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_msd(names: Sequence[str], values: Sequence[float], path: str | Path,
             ground_truth: float | None = None, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4, 0.35 * len(values) + 1.5), 3), constrained_layout=True)
        x = np.arange(len(values))
        ax.bar(x, values, color="0.35")
        ax.axhline(float(np.mean(values)), color="C1", lw=1, label="mean")
        if ground_truth is not None:
            ax.axhline(ground_truth, color="C2", lw=1, ls="--", label="ground truth")
        ax.set_xticks(x, names, rotation=60, ha="right")
        ax.set_ylabel("MSD")
        ax.legend(frameon=False)
        if title:
            ax.set_title(title)
        return _save(fig, path)
