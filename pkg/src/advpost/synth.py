"""Synthetic stand-ins: toy voices, interferers, room impulse responses.

The toy corpus mimics the setting the tool targets: genuine and fake clips
share harmonic voiced segments separated by near-silent pauses and differ only
in quiet high-band breath noise, which the band-limited fakes lack.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import butter, sosfilt

from .audio import CANONICAL_RATE, Waveform


def voiced_segment(n: int, sr: int, rng: np.random.Generator, f0: float | None = None,
                   n_harmonics: int = 12) -> np.ndarray:
    """Harmonic complex with a drifting pitch and a syllable-like envelope."""
    f0 = rng.uniform(110, 240) if f0 is None else f0
    t = np.arange(n) / sr
    drift = 1 + 0.06 * np.sin(2 * np.pi * rng.uniform(1, 3) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(f0 * drift) / sr
    x = np.zeros(n)
    for h in range(1, n_harmonics + 1):
        if h * f0 * 1.1 >= sr / 2:
            break
        x += np.sin(h * phase + rng.uniform(0, 2 * np.pi)) / h
    env = np.sin(np.pi * np.linspace(0, 1, n)) ** 0.6
    return x * env / (np.abs(x).max() + 1e-12)


def _segments(n: int, sr: int, rng: np.random.Generator):
    """Alternating (start, stop) voiced spans separated by pauses of 200-350 ms."""
    spans = []
    pos = int(rng.uniform(0.15, 0.3) * sr)
    while True:
        length = int(rng.uniform(0.18, 0.35) * sr)
        if pos + length > n - int(0.15 * sr):
            break
        spans.append((pos, pos + length))
        pos += length + int(rng.uniform(0.2, 0.35) * sr)
    if not spans:
        spans.append((n // 4, 3 * n // 4))
    return spans


def toy_clip(kind: str, rng: np.random.Generator, duration: float = 1.0, sr: int = CANONICAL_RATE,
             silence_level: float = 3e-4, breath_level: float = 0.002, split_hz: float = 3000.0) -> Waveform:
    """One toy utterance; `kind` is "genuine" or "fake".

    Both kinds share harmonic voiced segments and a white silence floor.
    Genuine clips add breath noise above `split_hz` inside the voiced spans;
    fakes do not, as a vocoder with a limited band would not.
    """
    if kind not in ("genuine", "fake"):
        raise ValueError(f"unknown toy clip kind {kind!r}")
    sos = butter(4, split_hz, "highpass", fs=sr, output="sos")
    n = int(duration * sr)
    x = silence_level * rng.standard_normal(n)
    for a, b in _segments(n, sr, rng):
        env = np.sin(np.pi * np.linspace(0, 1, b - a)) ** 0.6
        x[a:b] += rng.uniform(0.3, 0.6) * voiced_segment(b - a, sr, rng)
        if kind == "genuine":
            x[a:b] += breath_level * sosfilt(sos, rng.standard_normal(b - a)) * env
    return Waveform(np.clip(x, -1, 1), sr, {"toy": kind})


def white_noise(n: int, rng: np.random.Generator, level: float = 0.1) -> np.ndarray:
    return level * rng.standard_normal(n)


def tone_complex(n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    """Music stand-in: a few sustained notes with harmonics."""
    t = np.arange(n) / sr
    x = np.zeros(n)
    for _ in range(rng.integers(2, 5)):
        f = 110.0 * 2 ** (rng.integers(0, 36) / 12)
        for h in (1, 2, 3):
            if h * f < sr / 2:
                x += np.sin(2 * np.pi * h * f * t + rng.uniform(0, 2 * np.pi)) / h
    return 0.1 * x / (np.abs(x).max() + 1e-12)


def babble(n: int, sr: int, rng: np.random.Generator, talkers: int = 5) -> np.ndarray:
    """Overlapped-speech stand-in built from several toy voices."""
    x = np.zeros(n)
    for _ in range(talkers):
        seg_len = int(rng.uniform(0.3, 0.8) * sr)
        pos = 0
        while pos < n:
            m = min(seg_len, n - pos)
            if m > 16:
                x[pos:pos + m] += voiced_segment(m, sr, rng)
            pos += seg_len + int(rng.uniform(0.0, 0.2) * sr)
    return 0.1 * x / (np.abs(x).max() + 1e-12)


def exponential_rir(sr: int, rng: np.random.Generator, rt60: float = 0.3,
                    length_s: float | None = None) -> np.ndarray:
    """Direct path plus exponentially decaying diffuse tail (60 dB decay at rt60)."""
    n = int((length_s or rt60) * sr)
    t = np.arange(n) / sr
    tail = rng.standard_normal(n) * np.exp(-6.9078 * t / rt60)
    tail[: int(0.002 * sr)] = 0.0
    rir = 0.3 * tail
    rir[0] = 1.0
    return rir / np.abs(rir).max()
