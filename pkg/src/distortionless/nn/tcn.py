"""Dilated TCN mask estimator and the full enhancement network."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from ..dsp import FrameSpec
from .layers import GlobalLayerNorm, GroupedLayerNorm, IstftConv, TcnBlock, complex_mask_multiply

FEATURE_ROWS = 8 * 257


@dataclass
class TcnConfig:
    mask_kind: str = "cirm"
    in_channels: int = FEATURE_ROWS
    num_bins: int = 257
    bottleneck: int = 64   # B
    hidden: int = 128      # H
    blocks: int = 4        # X
    repeats: int = 2       # R
    kernel: int = 3
    input_norm: str = "grouped"  # gLN per LPS / IPD / AF group, or "global"
    dropout: float = 0.0

    def __post_init__(self):
        if self.mask_kind not in ("irm", "cirm"):
            raise ValueError(f"unknown mask kind {self.mask_kind!r}")
        if self.input_norm not in ("grouped", "global"):
            raise ValueError(f"unknown input_norm {self.input_norm!r}")

    to_dict = asdict


class TcnMaskNet(nn.Module):
    """``[B, 2056, N]`` features to an IRM ``[B, F, N]`` or cIRM ``([B, F, N], [B, F, N])``."""

    def __init__(self, cfg: TcnConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or TcnConfig()
        if cfg.input_norm == "grouped":
            f = cfg.num_bins
            self.input_norm = GroupedLayerNorm((f, cfg.in_channels - 2 * f, f))
        else:
            self.input_norm = GlobalLayerNorm(cfg.in_channels)
        self.dropout = nn.Dropout(cfg.dropout)
        self.proj = nn.Conv1d(cfg.in_channels, cfg.bottleneck, 1)
        self.blocks = nn.Sequential(*[
            TcnBlock(cfg.bottleneck, cfg.hidden, cfg.kernel, dilation=2**x)
            for _ in range(cfg.repeats)
            for x in range(cfg.blocks)
        ])
        self.act = nn.PReLU()
        out = cfg.num_bins if cfg.mask_kind == "irm" else 2 * cfg.num_bins
        self.head = nn.Conv1d(cfg.bottleneck, out, 1)
        # start from the identity mask: 1 (IRM) or 1 + 0i (cIRM)
        with torch.no_grad():
            self.head.bias.zero_()
            self.head.bias[: cfg.num_bins] = 1.0

    def forward(self, features: torch.Tensor):
        if features.shape[1] != self.cfg.in_channels:
            raise ValueError(
                f"expected {self.cfg.in_channels} feature rows, got {features.shape[1]}"
            )
        x = self.blocks(self.proj(self.dropout(self.input_norm(features))))
        y = self.head(self.act(x))
        if self.cfg.mask_kind == "irm":
            return torch.relu(y)
        return y[:, : self.cfg.num_bins], y[:, self.cfg.num_bins :]

    def identity_head_(self):
        """Zero the head weights so the mask is exactly 1 (+0i) for any input."""
        with torch.no_grad():
            self.head.weight.zero_()
            self.head.bias.zero_()
            self.head.bias[: self.cfg.num_bins] = 1.0
        return self


class Enhancer(nn.Module):
    """Mask network plus fixed iSTFT decoder.

    The reference-channel spectrogram is supplied by the caller as
    ``(real, imag)`` since the encoder carries no trainable weights.
    """

    def __init__(self, cfg: TcnConfig | None = None, frame_spec: FrameSpec | None = None):
        super().__init__()
        self.mask_net = TcnMaskNet(cfg)
        self.decoder = IstftConv(frame_spec)

    @property
    def cfg(self) -> TcnConfig:
        return self.mask_net.cfg

    def enhanced_spectrum(self, features, ref_real, ref_imag):
        mask = self.mask_net(features)
        if self.cfg.mask_kind == "irm":
            # |Y| M exp(i phase(Y)) == M Y for a real mask
            return mask * ref_real, mask * ref_imag
        return complex_mask_multiply(mask[0], mask[1], ref_real, ref_imag)

    def forward(self, features, ref_real, ref_imag, num_samples: int | None = None):
        real, imag = self.enhanced_spectrum(features, ref_real, ref_imag)
        return self.decoder(real, imag, num_samples)
