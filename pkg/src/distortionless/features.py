"""Mask-network inputs (LPS, IPDs, angle feature) and log-mel filterbank features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .dsp import ComplexSpectrogram, InsufficientSamplesError, MultiChannelWave, stft
from .room import SOUND_SPEED, ArrayGeometry

LPS_FLOOR = 1e-12
LFB_FLOOR = 1e-8
# 1-indexed microphone pairs, converted to 0-indexed below
MIC_PAIRS = ((1, 4), (2, 5), (3, 6), (1, 2), (3, 4), (5, 6))
PAIRS = tuple((a - 1, b - 1) for a, b in MIC_PAIRS)


@dataclass
class FeaturePack:
    lps: np.ndarray
    ipds: np.ndarray
    af: np.ndarray

    @property
    def concatenated(self) -> np.ndarray:
        return np.concatenate([self.lps, self.ipds, self.af], axis=0)

    @property
    def num_frames(self) -> int:
        return self.lps.shape[1]


def _bins(spec) -> np.ndarray:
    return spec.bins if isinstance(spec, ComplexSpectrogram) else np.asarray(spec)


def lps(ref_spec) -> np.ndarray:
    return np.log(np.maximum(np.abs(_bins(ref_spec)) ** 2, LPS_FLOOR))


def ipd(spec_k1, spec_k2) -> np.ndarray:
    a, b = _bins(spec_k1), _bins(spec_k2)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    # angle(a / b) as a wrapped difference: exact zero for identical channels
    phase = np.angle(a) - np.angle(b)
    phase = phase - 2.0 * np.pi * np.ceil((phase - np.pi) / (2.0 * np.pi))
    return np.where((a == 0) | (b == 0), 0.0, phase)


@dataclass
class SteeringRatio:
    """Unit-modulus far-field inter-channel ratio per mic pair and bin."""

    values: np.ndarray  # [pairs x bins], complex
    doa: float

    @classmethod
    def for_doa(
        cls,
        doa_deg: float,
        array: ArrayGeometry | None = None,
        num_bins: int = 257,
        sample_rate: int = 16000,
        pairs=PAIRS,
        sound_speed: float = SOUND_SPEED,
    ) -> "SteeringRatio":
        if doa_deg is None:
            raise ValueError("target DOA is required for the angle feature")
        array = array or ArrayGeometry()
        rel = array.mic_positions - np.asarray(array.center, dtype=float)
        rad = np.radians(doa_deg)
        toward = np.array([np.cos(rad), np.sin(rad), 0.0])
        # mics nearer the source hear the plane wave earlier
        tau = -(rel @ toward) / sound_speed
        freqs = np.arange(num_bins) * sample_rate / (2.0 * (num_bins - 1))
        dtau = np.array([tau[a] - tau[b] for a, b in pairs])
        return cls(np.exp(-2j * np.pi * np.outer(dtau, freqs)), float(doa_deg))

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.values)


def angle_feature(specs, steering: SteeringRatio | None, pairs=PAIRS) -> np.ndarray:
    """Sum over pairs of cos(observed IPD - steering phase)."""
    if steering is None:
        raise ValueError("missing steering vector: target DOA must be known")
    bins = [_bins(s) for s in specs]
    need = max(max(p) for p in pairs) + 1
    if len(bins) < need:
        raise ValueError(f"angle feature needs {need} channels, got {len(bins)}")
    if any(b.shape != bins[0].shape for b in bins):
        raise ValueError("inconsistent spectrogram shapes")
    if steering.values.shape != (len(pairs), bins[0].shape[0]):
        raise ValueError("steering shape does not match pairs x bins")
    af = np.zeros(bins[0].shape)
    for k, (a, b) in enumerate(pairs):
        af += np.cos(ipd(bins[a], bins[b]) - steering.phase[k][:, None])
    return af


def compute_features(
    mixture: MultiChannelWave,
    target_doa: float,
    array: ArrayGeometry | None = None,
    spec=None,
    ref_channel: int = 0,
):
    """Return ``(FeaturePack, per-channel spectrograms)`` for one mixture."""
    specs = [stft(ch, spec) for ch in mixture.samples]
    frame_spec = specs[0].frame_spec
    steering = SteeringRatio.for_doa(
        target_doa, array, frame_spec.num_bins, frame_spec.sample_rate
    )
    pack = FeaturePack(
        lps=lps(specs[ref_channel]),
        ipds=np.concatenate([ipd(specs[a], specs[b]) for a, b in PAIRS], axis=0),
        af=angle_feature(specs, steering),
    )
    return pack, specs


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(
    num_filters: int = 40, n_fft: int = 512, sample_rate: int = 16000,
    fmin: float = 0.0, fmax: float | None = None,
) -> np.ndarray:
    """HTK-style triangular mel filters, ``[num_filters x n_fft // 2 + 1]``."""
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), num_filters + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


class LfbLayer(nn.Module):
    """25 ms / 10 ms log-mel filterbank as a fixed, differentiable layer.

    Frames of 400 samples are Hamming-windowed, zero-padded to 512, turned into
    a 257-bin power spectrum and mapped to 40 log-mel energies by a frozen
    linear layer.
    """

    def __init__(self, num_filters=40, win_length=400, hop=160, n_fft=512,
                 sample_rate=16000, floor=LFB_FLOOR):
        super().__init__()
        self.win_length = win_length
        self.hop = hop
        self.n_fft = n_fft
        self.floor = floor
        window = torch.hamming_window(win_length, periodic=False, dtype=torch.float64)
        self.register_buffer("window", window)
        weights = mel_filterbank(num_filters, n_fft, sample_rate)
        self.register_buffer("mel", torch.from_numpy(weights))

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.win_length:
            raise InsufficientSamplesError(
                f"insufficient samples: {num_samples} < {self.win_length}"
            )
        return (num_samples - self.win_length) // self.hop + 1

    def forward(self, wave: torch.Tensor) -> torch.Tensor:
        """``[..., samples] -> [..., 40, frames]``."""
        self.num_frames(wave.shape[-1])
        frames = wave.unfold(-1, self.win_length, self.hop)
        frames = frames * self.window.to(wave.dtype)
        power = torch.view_as_real(torch.fft.rfft(frames, n=self.n_fft)).square().sum(-1)
        fbank = power @ self.mel.to(wave.dtype).T
        return torch.log(torch.clamp(fbank, min=self.floor)).transpose(-1, -2)


_LFB = LfbLayer()


def lfb(waveform) -> np.ndarray:
    x = torch.as_tensor(np.asarray(waveform, dtype=np.float64))
    if x.ndim != 1:
        raise ValueError("lfb expects a mono waveform")
    with torch.no_grad():
        return _LFB(x).numpy()
