"""Objective evaluation: DTW-aligned mel spectral distortion and a centroid probe."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .dsp import MelSpectrogram, Spectrogram
from .errors import ShapeError, ValidationError


@dataclass
class DtwResult:
    path: list[tuple[int, int]]
    total_cost: float
    normalized_cost: float


def _frames(m: MelSpectrogram | np.ndarray) -> np.ndarray:
    arr = m.logmel if isinstance(m, MelSpectrogram) else np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise ValidationError(f"expected a nonempty (features, frames) array, got shape {arr.shape}")
    return arr.T


def dtw_align(a: MelSpectrogram | np.ndarray, b: MelSpectrogram | np.ndarray) -> DtwResult:
    """Minimal-cost monotone alignment with steps (1,0), (0,1), (1,1).

    Local cost is the Euclidean distance between frames; ties prefer the
    diagonal step.
    """
    fa, fb = _frames(a), _frames(b)
    if fa.shape[1] != fb.shape[1]:
        raise ShapeError(f"feature dimensions differ: {fa.shape[1]} vs {fb.shape[1]}")
    cost = cdist(fa, fb)
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row, prev = acc[i], acc[i - 1]
        c = cost[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if row[j - 1] < best:
                best = row[j - 1]
            row[j] = c[j - 1] + best

    path = [(n - 1, m - 1)]
    i, j = n, m
    while (i, j) != (1, 1):
        options = []
        if i > 1 and j > 1:
            options.append((acc[i - 1, j - 1], 0, i - 1, j - 1))
        if i > 1:
            options.append((acc[i - 1, j], 1, i - 1, j))
        if j > 1:
            options.append((acc[i, j - 1], 2, i, j - 1))
        _, _, i, j = min(options)
        path.append((i - 1, j - 1))
    path.reverse()
    total = float(acc[n, m])
    return DtwResult(path, total, total / len(path))


def msd_parallel(converted, reference, multiplier: float = 1.0) -> float:
    """Mean per-frame Euclidean log-mel distance along the DTW path."""
    return multiplier * dtw_align(converted, reference).normalized_cost


@dataclass
class ReferenceStats:
    """Fixed reference sample of one target identity and its own pairwise MSD level."""

    references: list
    per_reference: list[float]
    ground_truth: float
    multiplier: float = 1.0


def build_reference_stats(references: Sequence, multiplier: float = 1.0) -> ReferenceStats:
    refs = list(references)
    if not refs:
        raise ValidationError("reference sample is empty")
    per_ref = [float(np.mean([msd_parallel(r, q, multiplier) for q in refs])) for r in refs]
    return ReferenceStats(refs, per_ref, float(np.mean(per_ref)), multiplier)


@dataclass
class NonParallelResult:
    per_utterance: list[float]
    converted: float
    ground_truth: float


def msd_nonparallel(converted_set: Sequence, stats: ReferenceStats) -> NonParallelResult:
    """Average MSD of each converted utterance against every reference utterance.

    The ground-truth level is the same statistic computed with the real
    reference utterances in place of the converted ones (self-pairs included),
    so a converted set identical to the reference sample scores it exactly.
    """
    if not stats.references:
        raise ValidationError("reference sample is empty")
    per = [float(np.mean([msd_parallel(c, r, stats.multiplier) for r in stats.references])) for c in converted_set]
    return NonParallelResult(per, float(np.mean(per)) if per else float("nan"), stats.ground_truth)


def spectral_centroid(spec: Spectrogram | np.ndarray, sample_rate: float | None = None,
                      window_length: int | None = None) -> float:
    """Power-weighted mean bin frequency, averaged over frames that carry energy."""
    if isinstance(spec, Spectrogram):
        mag = spec.mag
        sample_rate = spec.config.sample_rate if sample_rate is None else sample_rate
        window_length = spec.config.window_length
    else:
        mag = np.asarray(spec, dtype=np.float64)
        if sample_rate is None:
            raise ValueError("sample_rate is required for a bare array")
        window_length = window_length or 2 * (mag.shape[0] - 1)
    power = np.asarray(mag, dtype=np.float64) ** 2
    energy = power.sum(axis=0)
    keep = energy > 0
    if not keep.any():
        raise ValidationError("spectral centroid of an all-zero spectrogram is undefined")
    freqs = np.arange(mag.shape[0]) * sample_rate / window_length
    return float(np.mean((freqs @ power[:, keep]) / energy[keep]))


# -------------------------------------------------------------------- reports


@dataclass
class UtteranceScore:
    name: str
    msd: float


@dataclass
class EvalReport:
    pair: str  # e.g. "A-B"
    protocol: str  # "parallel" | "nonparallel-pairwise"
    utterances: list[UtteranceScore] = field(default_factory=list)
    ground_truth: float | None = None

    @property
    def values(self) -> np.ndarray:
        return np.array([u.msd for u in self.utterances])

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def std(self) -> float:
        return float(self.values.std())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pair", "protocol", "utterance", "msd"])
        for u in self.utterances:
            w.writerow([self.pair, self.protocol, u.name, repr(u.msd)])
        w.writerow([self.pair, self.protocol, "__mean__", repr(self.mean)])
        w.writerow([self.pair, self.protocol, "__std__", repr(self.std)])
        if self.ground_truth is not None:
            w.writerow([self.pair, self.protocol, "__ground_truth__", repr(self.ground_truth)])
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [
            f"protocol={self.protocol}",
            f"{'pair':<10}{'':<6}{'ours':>16}",
            "-" * 32,
            f"{self.pair:<10}{'MSD':<6}{f'{self.mean:.2f} ± {self.std:.2f}':>16}",
            f"{'':<10}{'WER':<6}{'n/a':>16}",
        ]
        if self.ground_truth is not None:
            lines.append(f"{'':<10}{'GT':<6}{f'{self.ground_truth:.2f}':>16}")
        lines.append("WER and MOS need an external ASR service and human raters; not computed.")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path, stem: str = "eval") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path, txt_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.txt"
        csv_path.write_text(self.to_csv())
        txt_path.write_text(self.to_table())
        return csv_path, txt_path
