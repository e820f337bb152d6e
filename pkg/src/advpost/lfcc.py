"""Differentiable linear-frequency cepstral coefficients.

Every stage (framing, windowing, power spectrum, triangular filterbank, log,
DCT-II, deltas) is a tensor op, so gradients reach the raw samples.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .audio import Waveform


@dataclass(frozen=True)
class LfccConfig:
    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_filters: int = 70
    n_coeff: int = 20
    include_deltas: bool = True
    log_floor: float = 1e-10
    sample_rate: int = 16000

    def __post_init__(self):
        if self.n_coeff > self.n_filters:
            raise ValueError(f"n_coeff ({self.n_coeff}) must not exceed n_filters ({self.n_filters})")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")
        if self.win_ms <= 0 or self.hop_ms <= 0:
            raise ValueError("win_ms and hop_ms must be positive")
        if self.n_coeff < 1 or self.sample_rate <= 0:
            raise ValueError("n_coeff and sample_rate must be positive")

    @property
    def win_length(self) -> int:
        return int(round(self.win_ms * self.sample_rate / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000))

    @property
    def n_fft(self) -> int:
        return 1 << (self.win_length - 1).bit_length()

    @property
    def feature_dim(self) -> int:
        return self.n_coeff * (3 if self.include_deltas else 1)

    def num_frames(self, n_samples: int) -> int:
        if n_samples < self.win_length:
            return 0
        return (n_samples - self.win_length) // self.hop_length + 1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FeatureMatrix:
    values: np.ndarray  # (frames, feature_dim)
    frame_hop_s: float
    frame_len_s: float

    @property
    def shape(self):
        return self.values.shape


class ShortWaveformError(ValueError):
    pass


def linear_filterbank(n_filters: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters with edges evenly spaced on 0..Nyquist, shape (n_filters, n_fft//2+1)."""
    edges = np.linspace(0.0, sample_rate / 2, n_filters + 2)
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - left) / (center - left)
    falling = (right - freqs) / (right - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def dct_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Orthonormal DCT-II basis, shape (n_out, n_in)."""
    n = np.arange(n_in)
    k = np.arange(n_out)[:, None]
    basis = np.cos(math.pi / n_in * (n + 0.5) * k) * math.sqrt(2.0 / n_in)
    basis[0] /= math.sqrt(2.0)
    return basis


def deltas(feats: torch.Tensor, width: int = 2) -> torch.Tensor:
    """Regression deltas along the frame axis (dim -2) with edge replication."""
    n_frames = feats.shape[-2]
    idx = torch.arange(n_frames, device=feats.device)
    denom = 2 * sum(n * n for n in range(1, width + 1))
    out = torch.zeros_like(feats)
    for n in range(1, width + 1):
        ahead = feats.index_select(-2, (idx + n).clamp(max=n_frames - 1))
        behind = feats.index_select(-2, (idx - n).clamp(min=0))
        out = out + n * (ahead - behind)
    return out / denom


class LFCC(nn.Module):
    """Batched LFCC: (batch, samples) -> (batch, frames, feature_dim)."""

    def __init__(self, cfg: LfccConfig | None = None):
        super().__init__()
        self.cfg = cfg or LfccConfig()
        c = self.cfg
        window = np.hamming(c.win_length)
        self.register_buffer("window", torch.from_numpy(window), persistent=False)
        fbank = linear_filterbank(c.n_filters, c.n_fft, c.sample_rate)
        self.register_buffer("fbank", torch.from_numpy(fbank.T.copy()), persistent=False)
        dct = dct_matrix(c.n_filters, c.n_coeff)
        self.register_buffer("dct", torch.from_numpy(dct.T.copy()), persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        c = self.cfg
        squeeze = x.dim() == 1
        if squeeze:
            x = x.unsqueeze(0)
        if x.shape[-1] < c.win_length:
            raise ShortWaveformError(
                f"waveform of {x.shape[-1]} samples is shorter than one window ({c.win_length})"
            )
        dtype = x.dtype
        frames = x.unfold(-1, c.win_length, c.hop_length) * self.window.to(dtype)
        spec = torch.fft.rfft(frames, n=c.n_fft)
        power = spec.real.square() + spec.imag.square()
        energies = power @ self.fbank.to(dtype)
        ceps = torch.log(energies + c.log_floor) @ self.dct.to(dtype)
        if c.include_deltas:
            d1 = deltas(ceps)
            ceps = torch.cat([ceps, d1, deltas(d1)], dim=-1)
        return ceps.squeeze(0) if squeeze else ceps


def extract_lfcc(w: Waveform, cfg: LfccConfig | None = None) -> FeatureMatrix:
    cfg = cfg or LfccConfig()
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"waveform rate {w.sample_rate} does not match LFCC config rate {cfg.sample_rate}")
    with torch.no_grad():
        values = LFCC(cfg)(torch.from_numpy(w.samples)).numpy()
    return FeatureMatrix(values, cfg.hop_ms / 1000, cfg.win_ms / 1000)
