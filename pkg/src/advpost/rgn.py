"""Residual generation network.

A MelGAN-style fully convolutional generator. The waveform is cut into
non-overlapping 256-sample frames that act as 256 input channels; four
transposed-convolution upsamplers (8x, 8x, 2x, 2x by default) bring the frame
rate back to the sample rate, so the output is one residual sample per input
sample.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.parametrizations import weight_norm

from . import checkpoint
from .audio import Waveform


@dataclass
class GeneratorConfig:
    upsample_factors: list = field(default_factory=lambda: [8, 8, 2, 2])
    base_channels: int = 128
    kernel_size: int = 7
    stack_kernel_size: int = 3
    stack_dilations: list = field(default_factory=lambda: [1, 3, 9])
    leaky_slope: float = 0.2
    use_weight_norm: bool = True
    output_scale: float = 0.1
    bounded_output: bool = True

    def __post_init__(self):
        if int(np.prod(self.upsample_factors)) <= 0:
            raise ValueError("upsample factors must be positive")
        if self.base_channels % (2 ** len(self.upsample_factors)):
            raise ValueError("base_channels must be divisible by 2**len(upsample_factors)")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.output_scale <= 0:
            raise ValueError("output_scale must be positive")

    @property
    def frame_width(self) -> int:
        return int(np.prod(self.upsample_factors))


def _wn(module: nn.Module, enabled: bool) -> nn.Module:
    return weight_norm(module) if enabled else module


class ResidualStack(nn.Module):
    def __init__(self, channels: int, kernel_size: int, dilation: int, slope: float, wn: bool):
        super().__init__()
        self.slope = slope
        pad = (kernel_size - 1) // 2 * dilation
        self.conv = _wn(nn.Conv1d(channels, channels, kernel_size, dilation=dilation, padding=pad), wn)
        self.proj = _wn(nn.Conv1d(channels, channels, 1), wn)

    def forward(self, x):
        y = self.conv(F.leaky_relu(x, self.slope))
        y = self.proj(F.leaky_relu(y, self.slope))
        return x + y


class ResidualGenerator(nn.Module):
    def __init__(self, cfg: GeneratorConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or GeneratorConfig()
        wn, slope = cfg.use_weight_norm, cfg.leaky_slope
        ch = cfg.base_channels
        layers: list[nn.Module] = [
            _wn(nn.Conv1d(cfg.frame_width, ch, cfg.kernel_size, padding=cfg.kernel_size // 2), wn)]
        for i, s in enumerate(cfg.upsample_factors):
            c_in, c_out = ch // 2 ** i, ch // 2 ** (i + 1)
            layers.append(nn.LeakyReLU(slope))
            layers.append(_wn(nn.ConvTranspose1d(c_in, c_out, 2 * s, stride=s,
                                                 padding=s // 2 + s % 2, output_padding=s % 2), wn))
            layers += [ResidualStack(c_out, cfg.stack_kernel_size, d, slope, wn) for d in cfg.stack_dilations]
        layers.append(nn.LeakyReLU(slope))
        self.final = _wn(nn.Conv1d(ch // 2 ** len(cfg.upsample_factors), 1, cfg.kernel_size,
                                   padding=cfg.kernel_size // 2), wn)
        layers.append(self.final)
        self.net = nn.Sequential(*layers)
        self.reset_parameters()

    def reset_parameters(self):
        """Fan-in scaled (Kaiming) init so the residual depends on the input from step 0."""
        for m in self.modules():
            if isinstance(m, (nn.Conv1d, nn.ConvTranspose1d)):
                param = m.parametrizations.weight if hasattr(m, "parametrizations") else None
                w = param.original1 if param is not None else m.weight
                fan_in = w.shape[1] * w.shape[2] if isinstance(m, nn.Conv1d) else \
                    w.shape[0] * w.shape[2] // m.stride[0]
                with torch.no_grad():
                    w.normal_(0.0, math.sqrt(2.0 / (1 + self.cfg.leaky_slope ** 2) / fan_in))
                    if param is not None:
                        dims = [d for d in range(w.dim()) if d != 0]
                        param.original0.copy_(w.norm(dim=dims, keepdim=True))
                    if m.bias is not None:
                        m.bias.zero_()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(batch, T) or (T,) waveform -> residual of the same shape."""
        squeeze = x.dim() == 1
        if squeeze:
            x = x.unsqueeze(0)
        n = x.shape[-1]
        width = self.cfg.frame_width
        n_frames = max(1, math.ceil(n / width))
        x = F.pad(x, (0, n_frames * width - n))
        frames = x.reshape(x.shape[0], n_frames, width).transpose(1, 2)  # (B, 256, frames)
        y = self.net(frames).squeeze(1)[..., :n]
        if self.cfg.bounded_output:
            y = self.cfg.output_scale * torch.tanh(y)
        return y.squeeze(0) if squeeze else y

    def zero_output_(self) -> "ResidualGenerator":
        """Zero the final layer so the residual is identically zero."""
        with torch.no_grad():
            if hasattr(self.final, "parametrizations"):
                self.final.parametrizations.weight.original0.zero_()
            else:
                self.final.weight.zero_()
            self.final.bias.zero_()
        return self


def generate_residual(g: ResidualGenerator, w: Waveform) -> Waveform:
    if not np.all(np.isfinite(w.samples)):
        raise ValueError("waveform contains non-finite samples")
    g.eval()
    dtype = next(g.parameters()).dtype
    with torch.no_grad():
        r = g(torch.as_tensor(w.samples, dtype=dtype)).double().numpy()
    if g.cfg.bounded_output:
        # float32(scale) can exceed scale by one ulp
        r = np.clip(r, -g.cfg.output_scale, g.cfg.output_scale)
    return Waveform(r, w.sample_rate)


def apply(g: ResidualGenerator, w: Waveform) -> Waveform:
    """Post-processed speech clip(w + P(w), -1, 1)."""
    r = generate_residual(g, w)
    return w.replace(np.clip(w.samples + r.samples, -1.0, 1.0))


def save_generator(g: ResidualGenerator, path, **extra) -> None:
    checkpoint.save(path, "generator", asdict(g.cfg), g.state_dict(), None, **extra)


def load_generator(path) -> tuple[ResidualGenerator, dict]:
    payload = checkpoint.load(path, "generator")
    g = ResidualGenerator(GeneratorConfig(**payload["arch"]))
    g.load_state_dict(payload["state_dict"])
    g.eval()
    return g, payload["extra"]
