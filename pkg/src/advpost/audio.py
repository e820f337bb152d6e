"""Waveform container and WAV I/O.

Everything on disk is mono PCM16; in memory samples are float64 in [-1, 1].
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

CANONICAL_RATE = 16000
PCM16_SCALE = 32768.0


class AudioError(Exception):
    """Base class for waveform I/O failures."""


class UnreadableFileError(AudioError):
    pass


class MultichannelError(AudioError):
    pass


class UnsupportedEncodingError(AudioError):
    pass


class UnwritablePathError(AudioError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = CANONICAL_RATE
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def replace(self, samples: np.ndarray, **metadata) -> "Waveform":
        """Same rate, new samples; extra keyword args are merged into metadata."""
        return Waveform(samples, self.sample_rate, {**self.metadata, **metadata})


def read_wav(path: str | os.PathLike) -> Waveform:
    try:
        rate, data = wavfile.read(os.fspath(path))
    except FileNotFoundError as exc:
        raise UnreadableFileError(f"no such file: {path}") from exc
    except ValueError as exc:
        # scipy signals unknown format tags and malformed chunks this way
        msg = str(exc)
        lowered = msg.lower()
        if "not understood" not in lowered and ("format" in lowered or "bit depth" in lowered):
            raise UnsupportedEncodingError(f"{path}: {msg}") from exc
        raise UnreadableFileError(f"{path}: {msg}") from exc
    except OSError as exc:
        raise UnreadableFileError(f"{path}: {exc}") from exc

    if data.ndim > 1:
        if data.shape[1] != 1:
            raise MultichannelError(f"{path}: multichannel input ({data.shape[1]} channels)")
        data = data[:, 0]

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedEncodingError(f"{path}: unsupported sample type {data.dtype}")
    return Waveform(samples, int(rate))


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    return np.clip(np.round(clipped * PCM16_SCALE), -32768, 32767).astype(np.int16)


def write_wav(w: Waveform, path: str | os.PathLike) -> None:
    """Write `w` as mono PCM16, clipping anything outside [-1, 1]."""
    path = os.fspath(path)
    parent = os.path.dirname(path)
    try:
        if parent:
            os.makedirs(parent, exist_ok=True)
        wavfile.write(path, int(w.sample_rate), to_pcm16(w.samples))
    except OSError as exc:
        raise UnwritablePathError(f"cannot write {path}: {exc}") from exc


def resample(w: Waveform, target_rate: int) -> Waveform:
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate, dict(w.metadata))
    ratio = Fraction(int(target_rate), int(w.sample_rate))
    out = resample_poly(w.samples, ratio.numerator, ratio.denominator, window=("kaiser", 8.0))
    n = int(round(len(w) * target_rate / w.sample_rate))
    out = out[:n] if len(out) >= n else np.pad(out, (0, n - len(out)))
    return Waveform(out, int(target_rate), dict(w.metadata))


def ensure_canonical(w: Waveform) -> Waveform:
    """Convert any ingested waveform to the canonical 16 kHz rate."""
    return w if w.sample_rate == CANONICAL_RATE else resample(w, CANONICAL_RATE)


def frame_energies(samples: np.ndarray, frame_len: int) -> np.ndarray:
    """Mean power of consecutive non-overlapping frames; a short tail forms its own frame."""
    samples = np.asarray(samples, dtype=np.float64)
    n_frames = -(-len(samples) // frame_len)
    padded = np.zeros(n_frames * frame_len)
    padded[: len(samples)] = samples
    counts = np.full(n_frames, frame_len, dtype=np.float64)
    if n_frames:
        counts[-1] = len(samples) - (n_frames - 1) * frame_len
    return (padded.reshape(n_frames, frame_len) ** 2).sum(axis=1) / counts


def speech_mask(samples: np.ndarray, sample_rate: int, frame_ms: float = 25.0,
                threshold_db: float = -30.0) -> np.ndarray:
    """Per-sample boolean mask: True where the enclosing frame is within `threshold_db` of the loudest frame."""
    frame_len = max(1, int(round(frame_ms * sample_rate / 1000)))
    energy = frame_energies(samples, frame_len)
    if energy.size == 0 or energy.max() <= 0:
        return np.zeros(len(samples), dtype=bool)
    voiced = energy >= energy.max() * 10 ** (threshold_db / 10)
    return np.repeat(voiced, frame_len)[: len(samples)]
