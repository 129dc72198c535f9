"""Fixed STFT/iSTFT transforms, framing arithmetic and WAV I/O.

All transforms use a periodic square-root Hann window on both analysis and
synthesis, so the product window is a periodic Hann that overlap-adds to
exactly one at a hop of half the kernel size. No center padding is applied:
frame ``n`` covers samples ``[n * hop, n * hop + kernel_size)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile


class InsufficientSamplesError(ValueError):
    pass


def sqrt_hann(length: int) -> np.ndarray:
    n = np.arange(length)
    return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * n / length))


@dataclass(frozen=True)
class FrameSpec:
    kernel_size: int = 512
    hop: int = 256
    sample_rate: int = 16000
    window: str = "sqrt_hann"

    def __post_init__(self):
        if self.kernel_size <= 0:
            raise ValueError("kernel_size must be positive")
        if not 0 < self.hop <= self.kernel_size:
            raise ValueError("hop must satisfy 0 < hop <= kernel_size")
        if self.window != "sqrt_hann":
            raise ValueError(f"unsupported window {self.window!r}")
        # sqrt-Hann x sqrt-Hann is COLA only when the hop divides K/2
        if (self.kernel_size // 2) % self.hop or self.kernel_size % 2:
            raise ValueError("sqrt_hann requires hop to divide kernel_size / 2")

    @property
    def num_bins(self) -> int:
        return self.kernel_size // 2 + 1

    def analysis_window(self) -> np.ndarray:
        # normalised so the overlap-added product window sums to one
        scale = np.sqrt(2.0 * self.hop / self.kernel_size)
        return sqrt_hann(self.kernel_size) * scale

    def synthesis_window(self) -> np.ndarray:
        return self.analysis_window()

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.kernel_size:
            raise InsufficientSamplesError(
                f"insufficient samples: {num_samples} < kernel_size {self.kernel_size}"
            )
        return (num_samples - self.kernel_size) // self.hop + 1

    def span(self, num_frames: int) -> int:
        """Number of samples touched by ``num_frames`` frames."""
        return (num_frames - 1) * self.hop + self.kernel_size

    def max_length(self, num_frames: int) -> int:
        """Longest waveform that still yields exactly ``num_frames`` frames."""
        return self.span(num_frames) + self.hop - 1


@dataclass
class MultiChannelWave:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise ValueError("samples must be a [channels x num_samples] matrix")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain non-finite values")
        self.samples = samples

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    def channel(self, index: int) -> np.ndarray:
        return self.samples[index]


@dataclass
class ComplexSpectrogram:
    bins: np.ndarray
    frame_spec: FrameSpec = field(default_factory=FrameSpec)

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.complex128)
        if bins.ndim != 2 or bins.shape[0] != self.frame_spec.num_bins:
            raise ValueError(
                f"expected {self.frame_spec.num_bins} bins, got shape {bins.shape}"
            )
        if not np.all(np.isfinite(bins)):
            raise ValueError("spectrogram contains non-finite values")
        self.bins = bins

    @property
    def num_frames(self) -> int:
        return self.bins.shape[1]

    @property
    def shape(self):
        return self.bins.shape


def frame_signal(x: np.ndarray, spec: FrameSpec) -> np.ndarray:
    """Return a ``[num_frames, kernel_size]`` strided view of ``x``."""
    n = spec.num_frames(len(x))
    view = np.lib.stride_tricks.sliding_window_view(x, spec.kernel_size)
    return view[: (n - 1) * spec.hop + 1 : spec.hop]


def stft(wave_channel, spec: FrameSpec | None = None) -> ComplexSpectrogram:
    spec = spec or FrameSpec()
    x = np.asarray(wave_channel, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("stft expects a single channel")
    frames = frame_signal(x, spec) * spec.analysis_window()
    return ComplexSpectrogram(np.fft.rfft(frames, axis=-1).T, spec)


def stft_multichannel(wave: MultiChannelWave, spec: FrameSpec | None = None):
    return [stft(ch, spec) for ch in wave.samples]


def istft(spectrogram: ComplexSpectrogram, num_samples: int | None = None) -> np.ndarray:
    """Overlap-add inverse of :func:`stft`.

    Output is trimmed or zero-padded to ``num_samples``. Lengths beyond the
    longest waveform that could have produced this many frames are rejected.
    """
    spec = spectrogram.frame_spec
    n_frames = spectrogram.num_frames
    span = spec.span(n_frames)
    if num_samples is None:
        num_samples = span
    if num_samples > spec.max_length(n_frames):
        raise ValueError(
            f"requested {num_samples} samples exceeds reconstructable span "
            f"{spec.max_length(n_frames)} for {n_frames} frames"
        )
    frames = np.fft.irfft(spectrogram.bins.T, n=spec.kernel_size, axis=-1)
    frames *= spec.synthesis_window()
    out = np.zeros(max(span, num_samples))
    for n in range(n_frames):
        out[n * spec.hop : n * spec.hop + spec.kernel_size] += frames[n]
    return out[:num_samples]


def magnitude_phase(spec: ComplexSpectrogram):
    bins = spec.bins
    mag = np.abs(bins)
    phase = np.angle(bins)
    # np.angle gives -pi for -1-0j; fold onto the half-open interval (-pi, pi]
    phase = np.where(phase <= -np.pi, phase + 2.0 * np.pi, phase)
    phase = np.where(mag == 0, 0.0, phase)
    return mag, phase


def parseval_constant(spec: FrameSpec) -> float:
    """Ratio of :func:`spectrogram_energy` to waveform energy.

    Holds for signals supported on the fully overlapped interior, because the
    squared analysis window overlap-adds to one.
    """
    return float(spec.kernel_size)


def spectrogram_energy(spec: ComplexSpectrogram) -> float:
    power = np.abs(spec.bins) ** 2
    weights = np.full(power.shape[0], 2.0)
    weights[0] = 1.0
    if spec.frame_spec.kernel_size % 2 == 0:
        weights[-1] = 1.0
    return float(np.sum(power * weights[:, None]))


def read_wav(path) -> MultiChannelWave:
    """Read a PCM16 or float32 WAV as float64 in [-1, 1]."""
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype.kind == "f":
        data = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample type {data.dtype}")
    if data.ndim == 1:
        data = data[:, None]
    return MultiChannelWave(data.T, int(rate))


def write_wav(path, wave, sample_rate: int = 16000, subtype: str = "float32") -> None:
    if isinstance(wave, MultiChannelWave):
        samples, sample_rate = wave.samples, wave.sample_rate
    else:
        samples = np.atleast_2d(np.asarray(wave, dtype=np.float64))
    data = samples.T
    if subtype == "float32":
        data = data.astype(np.float32)
    elif subtype == "pcm16":
        data = np.round(np.clip(data, -1.0, 32767 / 32768) * 32768.0).astype(np.int16)
    else:
        raise ValueError(f"unknown subtype {subtype!r}")
    if data.shape[1] == 1:
        data = data[:, 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), int(sample_rate), data)
