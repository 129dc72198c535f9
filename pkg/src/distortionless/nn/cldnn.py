"""CLDNN-lite acoustic model: LFB -> 2 conv -> LSTM -> 2 linear -> log-softmax."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from ..features import LfbLayer


@dataclass
class CldnnConfig:
    num_phonemes: int = 32   # P; the blank is class P
    lstm_layers: int = 1     # L
    lstm_units: int = 128    # U
    conv_channels: int = 32
    num_filters: int = 40
    bidirectional: bool = True
    time_stride: int = 2     # second conv layer subsamples frames by this factor

    def __post_init__(self):
        if self.time_stride < 1:
            raise ValueError("time_stride must be >= 1")

    @property
    def num_classes(self) -> int:
        return self.num_phonemes + 1

    to_dict = asdict


class CldnnLite(nn.Module):
    """Waveform ``[B, T]`` to per-frame log-probabilities ``[B, frames, P + 1]``.

    ``frames`` is the LFB frame count divided (rounding up) by ``time_stride``.

    The LFB layer is frozen but differentiable, so gradients reach the
    waveform. Each filter channel is mean/variance normalised per utterance.
    """

    def __init__(self, cfg: CldnnConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or CldnnConfig()
        self.lfb = LfbLayer(num_filters=cfg.num_filters)
        c = cfg.conv_channels
        self.conv = nn.Sequential(
            nn.Conv2d(1, c, 3, stride=(2, 1), padding=1),
            nn.ReLU(),
            nn.Conv2d(c, c, 3, stride=(2, cfg.time_stride), padding=1),
            nn.ReLU(),
        )
        freq_out = (cfg.num_filters + 1) // 2
        freq_out = (freq_out + 1) // 2
        self.lstm = nn.LSTM(
            c * freq_out, cfg.lstm_units, cfg.lstm_layers,
            batch_first=True, bidirectional=cfg.bidirectional,
        )
        # forget-gate bias 1 (gate order i, f, g, o) shortens the CTC blank plateau
        with torch.no_grad():
            for name, p in self.lstm.named_parameters():
                if name.startswith("bias_ih"):
                    p[cfg.lstm_units : 2 * cfg.lstm_units] = 1.0
        width = cfg.lstm_units * (2 if cfg.bidirectional else 1)
        self.dnn = nn.Sequential(
            nn.Linear(width, cfg.lstm_units),
            nn.ReLU(),
            nn.Linear(cfg.lstm_units, cfg.num_classes),
        )

    def features(self, wave: torch.Tensor) -> torch.Tensor:
        feats = self.lfb(wave)  # [B, 40, frames]
        mean = feats.mean(-1, keepdim=True)
        std = torch.sqrt(feats.var(-1, unbiased=False, keepdim=True) + 1e-5)
        return (feats - mean) / std

    def forward(self, wave: torch.Tensor) -> torch.Tensor:
        if wave.ndim == 1:
            wave = wave.unsqueeze(0)
        x = self.conv(self.features(wave).unsqueeze(1))  # [B, C, F', frames]
        b, c, f, t = x.shape
        x = x.permute(0, 3, 1, 2).reshape(b, t, c * f)
        x, _ = self.lstm(x)
        return torch.log_softmax(self.dnn(x), dim=-1)
