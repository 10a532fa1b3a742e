"""Waveform I/O, preprocessing, STFT magnitude, Griffin-Lim and mel features."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window

from .errors import AudioError, ConfigError, ShapeError

SAMPLE_RATE = 22050
PEAK_TARGET = 0.95
SILENCE_DB = -40.0
SILENCE_WINDOW_S = 0.010
ENVELOPE_FLOOR = 1e-8
LOG_FLOOR = 1e-5


@dataclass(frozen=True)
class StftConfig:
    window_length: int = 1024
    hop: int = 256
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.window_length % 2 or self.window_length < 2:
            raise ConfigError(f"window_length must be even, got {self.window_length}")
        if not 0 < self.hop <= self.window_length:
            raise ConfigError(f"hop must lie in (0, window_length], got {self.hop}")

    @property
    def bins(self) -> int:
        return self.window_length // 2 + 1

    @property
    def window(self) -> np.ndarray:
        return get_window("hann", self.window_length, fftbins=True)

    def frames(self, n_samples: int) -> int:
        if n_samples < self.window_length:
            raise ShapeError(f"{n_samples} samples is shorter than one {self.window_length}-sample window")
        return 1 + (n_samples - self.window_length) // self.hop

    def samples_for(self, frames: int) -> int:
        return self.window_length + (frames - 1) * self.hop


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError("waveforms are mono 1-D arrays")
        if self.sample_rate <= 0:
            raise AudioError("sample_rate must be positive")
        if not np.isfinite(self.samples).all():
            raise AudioError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class Spectrogram:
    mag: np.ndarray  # (bins, frames)
    config: StftConfig

    def __post_init__(self):
        if self.mag.ndim != 2 or self.mag.shape[0] != self.config.bins:
            raise ShapeError(f"spectrogram must be ({self.config.bins}, frames), got {self.mag.shape}")

    @property
    def frames(self) -> int:
        return self.mag.shape[1]


@dataclass
class MelFilterbank:
    weights: np.ndarray  # (n_mels, bins)
    f_min: float
    f_max: float
    centers_hz: np.ndarray


@dataclass
class MelSpectrogram:
    logmel: np.ndarray  # (n_mels, frames)

    @property
    def frames(self) -> int:
        return self.logmel.shape[1]


# ------------------------------------------------------------------ wav I/O


def read_wav(path: str | Path, sample_rate: int = SAMPLE_RATE) -> Waveform:
    """Read a mono 16-bit PCM or float WAV, resampling linearly to ``sample_rate``."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            sr, data = wavfile.read(str(path))
    except (ValueError, OSError) as exc:
        raise AudioError(f"cannot read {path}: {exc}") from exc
    if data.ndim != 1:
        raise AudioError(f"{path}: only mono audio is supported, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(resample(x, sr, sample_rate), sample_rate)


def write_wav(path: str | Path, wave: Waveform) -> None:
    """Write 16-bit PCM at the waveform's rate; the scale matches :func:`read_wav`, so values round-trip."""
    pcm = np.clip(np.round(wave.samples * 32768.0), -32768, 32767).astype("<i2")
    wavfile.write(str(path), int(wave.sample_rate), pcm)


def resample(x: np.ndarray, sr_in: int, sr_out: int) -> np.ndarray:
    if sr_in == sr_out:
        return np.asarray(x, dtype=np.float64)
    n_out = int(round(len(x) * sr_out / sr_in))
    t_out = np.arange(n_out) * (sr_in / sr_out)
    return np.interp(t_out, np.arange(len(x)), x)


# ------------------------------------------------------------- preprocessing


def _onset(x: np.ndarray, sample_rate: int) -> int | None:
    """First sample at or above the silence threshold that opens a loud 10 ms window."""
    peak = np.max(np.abs(x))
    thr = peak * 10 ** (SILENCE_DB / 20)
    win = max(1, int(round(SILENCE_WINDOW_S * sample_rate)))
    power = np.concatenate([[0.0], np.cumsum(x * x)])
    idx = np.arange(len(x))
    end = np.minimum(idx + win, len(x))
    rms = np.sqrt((power[end] - power[idx]) / win)
    hits = np.flatnonzero((np.abs(x) >= thr) & (rms >= thr))
    return int(hits[0]) if hits.size else None


def preprocess(wave: Waveform, target_frames: int | None = None, cfg: StftConfig = StftConfig()) -> Waveform:
    """Trim leading silence, zero-pad (or cut) to a whole frame count, peak-normalize.

    With ``target_frames`` the result has exactly ``cfg.samples_for(target_frames)``
    samples; otherwise it is padded up to the next whole frame.  The silence
    threshold is relative to the peak, so trimming before scaling is the same
    as trimming after it; normalizing last keeps the function idempotent even
    when the cut drops the original peak.
    """
    x = wave.samples
    if x.size == 0:
        raise AudioError("empty waveform")
    if np.max(np.abs(x)) == 0:
        raise AudioError("waveform is empty after trim (all silent)")
    start = _onset(x, wave.sample_rate)
    if start is None:
        raise AudioError("waveform is empty after trim (no window above the silence threshold)")
    x = x[start:]
    if target_frames is not None:
        if target_frames < 1:
            raise ValueError("target_frames must be positive")
        n = cfg.samples_for(target_frames)
    else:
        span = max(len(x), cfg.window_length) - cfg.window_length
        n = cfg.samples_for(1 + -(-span // cfg.hop))
    if len(x) < n:
        x = np.concatenate([x, np.zeros(n - len(x))])
    else:
        x = x[:n]
    peak = np.max(np.abs(x))
    if abs(peak - PEAK_TARGET) > 1e-9:
        x = x * (PEAK_TARGET / peak)
    return Waveform(x, wave.sample_rate)


# ----------------------------------------------------------------------- STFT


def _frame(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    T = cfg.frames(len(x))
    idx = np.arange(cfg.window_length)[None, :] + cfg.hop * np.arange(T)[:, None]
    return x[idx]


def stft(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Complex STFT ``(bins, frames)``, Hann window, frames anchored at sample 0."""
    frames = _frame(np.asarray(x, dtype=np.float64), cfg) * cfg.window[None, :]
    return np.fft.rfft(frames, axis=1).T


def stft_magnitude(wave: Waveform, cfg: StftConfig = StftConfig()) -> Spectrogram:
    return Spectrogram(np.abs(stft(wave.samples, cfg)), cfg)


def istft(spec: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Least-squares inverse: windowed overlap-add over the summed squared window."""
    if spec.shape[0] != cfg.bins:
        raise ShapeError(f"expected {cfg.bins} bins, got {spec.shape[0]}")
    T = spec.shape[1]
    w = cfg.window
    frames = np.fft.irfft(spec.T, n=cfg.window_length, axis=1) * w[None, :]
    n = cfg.samples_for(T)
    out = np.zeros(n)
    env = np.zeros(n)
    for t in range(T):
        s = t * cfg.hop
        out[s : s + cfg.window_length] += frames[t]
        env[s : s + cfg.window_length] += w * w
    return out / np.maximum(env, ENVELOPE_FLOOR)


def spectral_convergence(x: np.ndarray, mag: np.ndarray, cfg: StftConfig) -> float:
    denom = np.linalg.norm(mag)
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(np.abs(stft(x, cfg)) - mag) / denom)


def griffin_lim(
    spec: Spectrogram,
    iterations: int = 32,
    seed: int = 0,
    sample_rate: int | None = None,
    history: list[float] | None = None,
) -> Waveform:
    """Phase retrieval by alternating projections from a seeded random phase.

    If ``history`` is given, the spectral-convergence error of the initial
    estimate and after each iteration is appended to it.
    """
    mag = np.asarray(spec.mag, dtype=np.float64)
    if (mag < 0).any():
        raise ValueError("magnitudes must be nonnegative")
    cfg = spec.config
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(mag.shape))
    x = istft(mag * phase, cfg)
    if history is not None:
        history.append(spectral_convergence(x, mag, cfg))
    for _ in range(iterations):
        S = stft(x, cfg)
        absS = np.abs(S)
        unit = np.where(absS > 0, S / np.where(absS > 0, absS, 1.0), 1.0)
        x = istft(mag * unit, cfg)
        if history is not None:
            history.append(spectral_convergence(x, mag, cfg))
    return Waveform(x, sample_rate or cfg.sample_rate)


# ------------------------------------------------------------------------ mel


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_matrix(
    n_mels: int = 40,
    bins: int = 513,
    sample_rate: int = SAMPLE_RATE,
    f_min: float = 0.0,
    f_max: float = 8000.0,
) -> MelFilterbank:
    """Unit-peak triangular filters with centers evenly spaced in mel."""
    if n_mels < 1:
        raise ConfigError("n_mels must be at least 1")
    if f_max > sample_rate / 2:
        raise ConfigError(f"f_max {f_max} Hz exceeds the Nyquist frequency {sample_rate / 2} Hz")
    if not 0 <= f_min < f_max:
        raise ConfigError("need 0 <= f_min < f_max")
    freqs = np.arange(bins) * sample_rate / (2.0 * (bins - 1))
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    weights = np.clip(np.minimum(rising, falling), 0.0, 1.0)
    empty = np.flatnonzero(weights.max(axis=1) <= 0)
    if empty.size:
        raise ConfigError(
            f"mel filters {empty.tolist()} cover no frequency bin; use fewer mels or more bins"
        )
    return MelFilterbank(weights, f_min, f_max, edges[1:-1])


def log_mel(spec: Spectrogram | np.ndarray, fb: MelFilterbank, floor: float = LOG_FLOOR) -> MelSpectrogram:
    mag = spec.mag if isinstance(spec, Spectrogram) else np.asarray(spec)
    if mag.shape[0] != fb.weights.shape[1]:
        raise ShapeError(f"spectrogram has {mag.shape[0]} bins, filterbank expects {fb.weights.shape[1]}")
    if floor <= 0:
        raise ValueError("log floor must be positive")
    return MelSpectrogram(np.log(np.maximum(fb.weights @ mag, floor)))


def eval_log_mel(wave: Waveform, n_mels: int = 40, f_min: float = 0.0, f_max: float = 8000.0,
                 cfg: StftConfig = StftConfig(), floor: float = LOG_FLOOR) -> MelSpectrogram:
    """Log-mel features on the evaluation analysis grid (1024/256 at 22.05 kHz by default)."""
    if len(wave) < cfg.window_length:
        wave = Waveform(np.concatenate([wave.samples, np.zeros(cfg.window_length - len(wave))]), wave.sample_rate)
    fb = mel_matrix(n_mels, cfg.bins, wave.sample_rate, f_min, f_max)
    return log_mel(stft_magnitude(wave, cfg), fb, floor)
