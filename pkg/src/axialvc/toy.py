"""Synthetic two-speaker corpus for desk-scale runs.

Each "speaker" is a harmonic source at its own pitch filtered by a formant
envelope whose frequencies are scaled per speaker (a crude vocal-tract length
difference).  Utterances are sequences of vowel-like syllables separated by
short pauses; the held-out set is parallel (same syllable script for both
speakers) so the parallel evaluation protocol can run on it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import SAMPLE_RATE, Waveform

VOWELS = np.array([
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [440.0, 1020.0, 2240.0],
])


@dataclass(frozen=True)
class ToySpeaker:
    name: str
    f0: float
    formant_scale: float
    tilt_db_per_khz: float


SPEAKER_A = ToySpeaker("A", f0=120.0, formant_scale=1.0, tilt_db_per_khz=-4.0)
SPEAKER_B = ToySpeaker("B", f0=240.0, formant_scale=1.5, tilt_db_per_khz=-1.0)


def _envelope(freqs: np.ndarray, formants: np.ndarray, speaker: ToySpeaker) -> np.ndarray:
    env = np.zeros_like(freqs)
    for i, f in enumerate(formants * speaker.formant_scale):
        bw = 80.0 + 0.08 * f
        env += (0.6**i) * np.exp(-0.5 * ((freqs - f) / bw) ** 2)
    return (env + 0.01) * 10 ** (speaker.tilt_db_per_khz * freqs / 1000.0 / 20.0)


def _script(rng: np.random.Generator, duration: float) -> list[tuple[int, float, float]]:
    """(vowel, syllable seconds, pause seconds) triples covering about ``duration``."""
    out, total = [], 0.0
    while total < duration:
        syl, pause = rng.uniform(0.08, 0.18), rng.uniform(0.02, 0.06)
        out.append((int(rng.integers(len(VOWELS))), syl, pause))
        total += syl + pause
    return out


def synthesize(script, speaker: ToySpeaker, rng: np.random.Generator, sample_rate: int = SAMPLE_RATE) -> Waveform:
    pieces = [np.zeros(int(0.03 * sample_rate))]
    nyq = sample_rate / 2
    for vowel, syl, pause in script:
        n = int(syl * sample_rate)
        t = np.arange(n) / sample_rate
        f0 = speaker.f0 * (1 + 0.05 * rng.uniform(-1, 1)) * (1 + 0.04 * np.sin(2 * np.pi * rng.uniform(2, 5) * t))
        phase = 2 * np.pi * np.cumsum(f0) / sample_rate
        n_harm = int(min(8000.0, 0.95 * nyq) // speaker.f0)
        amps = _envelope(speaker.f0 * np.arange(1, n_harm + 1), VOWELS[vowel], speaker)
        sig = sum(a * np.sin(h * phase) for h, a in zip(range(1, n_harm + 1), amps))
        ramp = np.minimum(1.0, np.minimum(t, t[-1] - t) / 0.015)
        pieces.append(sig * ramp)
        pieces.append(np.zeros(int(pause * sample_rate)))
    x = np.concatenate(pieces)
    x += 1e-4 * rng.standard_normal(len(x))
    return Waveform(0.9 * x / np.max(np.abs(x)), sample_rate)


def toy_corpus(n_train: int = 24, n_eval: int = 8, duration: float = 0.8, seed: int = 1234,
               sample_rate: int = SAMPLE_RATE) -> dict[str, dict[str, list[Waveform]]]:
    """``{"A": {"train": [...], "eval": [...]}, "B": {...}}``; eval utterances share scripts."""
    rng = np.random.default_rng(seed)
    corpus = {s.name: {"train": [], "eval": []} for s in (SPEAKER_A, SPEAKER_B)}
    for spk in (SPEAKER_A, SPEAKER_B):
        for _ in range(n_train):
            corpus[spk.name]["train"].append(synthesize(_script(rng, duration), spk, rng, sample_rate))
    for _ in range(n_eval):
        script = _script(rng, duration)
        for spk in (SPEAKER_A, SPEAKER_B):
            corpus[spk.name]["eval"].append(synthesize(script, spk, rng, sample_rate))
    return corpus
