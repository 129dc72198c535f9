"""Fixed STFT/iSTFT convolution layers and TCN building blocks."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..dsp import FrameSpec

EPS = 1e-8


def _dft_kernels(spec: FrameSpec):
    k = spec.kernel_size
    f = np.arange(spec.num_bins)[:, None]
    m = np.arange(k)[None, :]
    angle = 2.0 * np.pi * f * m / k
    return np.cos(angle), -np.sin(angle)


class StftConv(nn.Module):
    """STFT as a strided 1-D convolution with fixed DFT kernels.

    ``[B, T] -> (real, imag)``, each ``[B, F, N]``.
    """

    def __init__(self, spec: FrameSpec | None = None):
        super().__init__()
        self.spec = spec or FrameSpec()
        cos, sin = _dft_kernels(self.spec)
        w = self.spec.analysis_window()[None, :]
        weight = np.concatenate([cos * w, sin * w], axis=0)[:, None, :]
        self.register_buffer("weight", torch.from_numpy(weight))

    def forward(self, wave: torch.Tensor):
        self.spec.num_frames(wave.shape[-1])
        out = F.conv1d(wave.unsqueeze(1), self.weight.to(wave.dtype), stride=self.spec.hop)
        return out.chunk(2, dim=1)


class IstftConv(nn.Module):
    """Inverse STFT as a transposed 1-D convolution (overlap-add)."""

    def __init__(self, spec: FrameSpec | None = None):
        super().__init__()
        self.spec = spec or FrameSpec()
        k = self.spec.kernel_size
        cos, sin = _dft_kernels(self.spec)
        scale = np.full(self.spec.num_bins, 2.0 / k)
        scale[0] = 1.0 / k
        if k % 2 == 0:
            scale[-1] = 1.0 / k
        w = self.spec.synthesis_window()[None, :]
        # irfft of X: sum_f c_f (Re X cos - Im X sin); note sin kernel is -sin
        weight = np.concatenate([cos * scale[:, None] * w, sin * scale[:, None] * w], axis=0)
        self.register_buffer("weight", torch.from_numpy(weight[:, None, :]))

    def forward(self, real: torch.Tensor, imag: torch.Tensor, num_samples: int | None = None):
        n_frames = real.shape[-1]
        if num_samples is not None and num_samples > self.spec.max_length(n_frames):
            raise ValueError("requested length exceeds reconstructable span")
        x = torch.cat([real, imag], dim=1)
        out = F.conv_transpose1d(x, self.weight.to(x.dtype), stride=self.spec.hop).squeeze(1)
        if num_samples is None:
            return out
        if num_samples <= out.shape[-1]:
            return out[..., :num_samples]
        return F.pad(out, (0, num_samples - out.shape[-1]))


class GlobalLayerNorm(nn.Module):
    """Normalise over channels and time jointly, per example."""

    def __init__(self, channels: int):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(1, channels, 1))
        self.beta = nn.Parameter(torch.zeros(1, channels, 1))

    def forward(self, x):
        mean = x.mean(dim=(1, 2), keepdim=True)
        var = (x - mean).square().mean(dim=(1, 2), keepdim=True)
        return self.gamma * (x - mean) / torch.sqrt(var + EPS) + self.beta


class GroupedLayerNorm(nn.Module):
    """:class:`GlobalLayerNorm` applied separately to consecutive channel groups."""

    def __init__(self, sizes):
        super().__init__()
        self.sizes = tuple(sizes)
        self.norms = nn.ModuleList(GlobalLayerNorm(n) for n in self.sizes)

    def forward(self, x):
        parts = torch.split(x, self.sizes, dim=1)
        return torch.cat([norm(p) for norm, p in zip(self.norms, parts)], dim=1)


class TcnBlock(nn.Module):
    def __init__(self, bottleneck: int, hidden: int, kernel: int = 3, dilation: int = 1):
        super().__init__()
        pad = dilation * (kernel - 1) // 2
        self.net = nn.Sequential(
            nn.Conv1d(bottleneck, hidden, 1),
            nn.PReLU(),
            GlobalLayerNorm(hidden),
            nn.Conv1d(hidden, hidden, kernel, dilation=dilation, padding=pad, groups=hidden),
            nn.PReLU(),
            GlobalLayerNorm(hidden),
            nn.Conv1d(hidden, bottleneck, 1),
        )

    def forward(self, x):
        return x + self.net(x)


def complex_mask_multiply(mask_r, mask_i, spec_r, spec_i):
    return mask_r * spec_r - mask_i * spec_i, mask_r * spec_i + mask_i * spec_r
