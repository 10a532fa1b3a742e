"""On-disk container for preprocessed spectrograms of one identity.

Layout: ``AXVCDS01`` magic, a little-endian u32 header length, a JSON header
(label, STFT grid, per-item name/frames/samples), then for each item its
``bins x frames`` magnitude and its preprocessed waveform, both as
little-endian float32.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .dsp import StftConfig, Waveform, preprocess, read_wav, stft_magnitude
from .errors import AudioError, ValidationError
from .training import CorpusDataset

log = logging.getLogger(__name__)

MAGIC = b"AXVCDS01"


@dataclass
class SpectrogramDataset:
    label: str
    stft: StftConfig
    names: list[str] = field(default_factory=list)
    mags: list[np.ndarray] = field(default_factory=list)
    waves: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.mags)

    @property
    def total_frames(self) -> int:
        return int(sum(m.shape[1] for m in self.mags))

    def corpus(self) -> CorpusDataset:
        return CorpusDataset(list(self.mags), list(self.names), self.label)

    def add(self, name: str, wave: Waveform, min_frames: int = 1) -> None:
        """Preprocess ``wave`` and append it, padding to at least ``min_frames`` frames."""
        trimmed = preprocess(wave, None, self.stft)
        frames = max(self.stft.frames(len(trimmed)), min_frames)
        trimmed = preprocess(wave, frames, self.stft)
        self.names.append(name)
        self.mags.append(stft_magnitude(trimmed, self.stft).mag.astype(np.float32))
        self.waves.append(trimmed.samples.astype(np.float32))

    def save(self, path: str | Path) -> None:
        header = {
            "label": self.label,
            "sample_rate": self.stft.sample_rate,
            "window_length": self.stft.window_length,
            "hop": self.stft.hop,
            "bins": self.stft.bins,
            "items": [
                {"name": n, "frames": int(m.shape[1]), "samples": int(len(w))}
                for n, m, w in zip(self.names, self.mags, self.waves)
            ],
        }
        raw = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            for m, w in zip(self.mags, self.waves):
                f.write(np.ascontiguousarray(m, dtype="<f4").tobytes())
                f.write(np.ascontiguousarray(w, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "SpectrogramDataset":
        blob = Path(path).read_bytes()
        if blob[: len(MAGIC)] != MAGIC:
            raise ValidationError(f"{path}: not a spectrogram dataset file")
        (n,) = struct.unpack_from("<I", blob, len(MAGIC))
        off = len(MAGIC) + 4
        header = json.loads(blob[off : off + n])
        off += n
        stft = StftConfig(header["window_length"], header["hop"], header["sample_rate"])
        ds = cls(header["label"], stft)
        bins = header["bins"]
        for item in header["items"]:
            count = bins * item["frames"]
            mag = np.frombuffer(blob, "<f4", count, off).reshape(bins, item["frames"])
            off += 4 * count
            wave = np.frombuffer(blob, "<f4", item["samples"], off)
            off += 4 * item["samples"]
            ds.names.append(item["name"])
            ds.mags.append(mag.astype(np.float32))
            ds.waves.append(wave.astype(np.float32))
        if off != len(blob):
            raise ValidationError(f"{path}: {len(blob) - off} trailing bytes; file is corrupt")
        return ds


def build_dataset(
    sources: Iterable[tuple[str, Waveform | Path]],
    label: str,
    stft: StftConfig,
    min_frames: int = 1,
) -> SpectrogramDataset:
    """Preprocess named waveforms (or WAV paths); unreadable files are skipped with a warning."""
    ds = SpectrogramDataset(label, stft)
    for name, src in sources:
        try:
            wave = read_wav(src, stft.sample_rate) if isinstance(src, (str, Path)) else src
            ds.add(name, wave, min_frames)
        except AudioError as exc:
            log.warning("skipping %s: %s", name, exc)
    if not len(ds):
        raise ValidationError(f"no usable audio for identity {label!r}")
    return ds


def wav_sources(directory: str | Path) -> list[tuple[str, Path]]:
    d = Path(directory)
    if not d.is_dir():
        raise ValidationError(f"{d} is not a directory")
    return [(p.stem, p) for p in sorted(d.glob("*.wav"))]
