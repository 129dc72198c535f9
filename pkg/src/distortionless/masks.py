"""IRM / cIRM masks, waveform reconstruction and the spectral-hole statistic."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import ComplexSpectrogram, istft

CIRM_ORACLE_CLIP = 10.0


@dataclass
class Mask:
    kind: str  # "irm" | "cirm"
    values: np.ndarray

    def __post_init__(self):
        if self.kind == "irm":
            values = np.asarray(self.values, dtype=np.float64)
            if np.any(values < 0):
                raise ValueError("IRM entries must be non-negative")
        elif self.kind == "cirm":
            values = np.asarray(self.values, dtype=np.complex128)
        else:
            raise ValueError(f"unknown mask kind {self.kind!r}")
        if not np.all(np.isfinite(values)):
            raise ValueError("mask contains non-finite values")
        self.values = values

    @property
    def shape(self):
        return self.values.shape


def _check_shape(mask: Mask, mixture_spec: ComplexSpectrogram):
    if mask.shape != mixture_spec.shape:
        raise ValueError(f"mask shape {mask.shape} != spectrogram {mixture_spec.shape}")


def apply_irm(mask: Mask, mixture_spec: ComplexSpectrogram, num_samples=None) -> np.ndarray:
    """Scale the reference magnitude and resynthesise with the mixture phase."""
    if mask.kind != "irm":
        raise ValueError("apply_irm needs an IRM")
    _check_shape(mask, mixture_spec)
    bins = mixture_spec.bins
    magnitude = mask.values * np.abs(bins)
    enhanced = magnitude * np.exp(1j * np.angle(bins))
    return istft(ComplexSpectrogram(enhanced, mixture_spec.frame_spec), num_samples)


def apply_cirm(mask: Mask, mixture_spec: ComplexSpectrogram, num_samples=None) -> np.ndarray:
    if mask.kind != "cirm":
        raise ValueError("apply_cirm needs a cIRM")
    _check_shape(mask, mixture_spec)
    enhanced = mask.values * mixture_spec.bins
    return istft(ComplexSpectrogram(enhanced, mixture_spec.frame_spec), num_samples)


def apply_mask(mask: Mask, mixture_spec: ComplexSpectrogram, num_samples=None) -> np.ndarray:
    if mask.kind == "irm":
        return apply_irm(mask, mixture_spec, num_samples)
    return apply_cirm(mask, mixture_spec, num_samples)


def oracle_irm(target_spec: ComplexSpectrogram, mixture_spec: ComplexSpectrogram) -> Mask:
    """|S| / |Y|, with zero where the mixture bin is zero."""
    s, y = np.abs(target_spec.bins), np.abs(mixture_spec.bins)
    return Mask("irm", np.divide(s, y, out=np.zeros_like(s), where=y > 0))


def oracle_cirm(
    target_spec: ComplexSpectrogram,
    mixture_spec: ComplexSpectrogram,
    clip: float | None = CIRM_ORACLE_CLIP,
) -> Mask:
    """Bin-wise S / Y; magnitudes above ``clip`` are scaled back onto it."""
    s, y = target_spec.bins, mixture_spec.bins
    m = np.divide(s, y, out=np.zeros_like(s), where=y != 0)
    if clip is not None:
        mag = np.abs(m)
        m = np.where(mag > clip, m * (clip / np.maximum(mag, 1e-300)), m)
    return Mask("cirm", m)


def hole_fraction(
    enhanced_mag,
    reference_mag,
    floor_ratio: float = 0.1,
    active_thresh_db: float = -40.0,
) -> float:
    """Fraction of reference-active bins where the enhanced magnitude collapsed.

    A bin is active when the reference is within ``active_thresh_db`` of its
    peak, and a hole when the enhanced magnitude is below
    ``floor_ratio * reference``.
    """
    enhanced_mag = np.asarray(enhanced_mag, dtype=float)
    reference_mag = np.asarray(reference_mag, dtype=float)
    if enhanced_mag.shape != reference_mag.shape:
        raise ValueError("shape mismatch")
    peak = reference_mag.max() if reference_mag.size else 0.0
    if peak <= 0:
        raise ValueError("no active bins")
    active = reference_mag >= peak * 10.0 ** (active_thresh_db / 20.0)
    holes = active & (enhanced_mag < floor_ratio * reference_mag)
    return float(holes.sum() / active.sum())


MARGIN = 4
PANEL_GAP = 8


def spectrogram_image(mag: np.ndarray, dynamic_range_db: float = 80.0, ref: float | None = None) -> np.ndarray:
    """Log-magnitude as uint8 rows (high frequency at the top)."""
    db = 20.0 * np.log10(np.maximum(mag, 1e-12))
    top = 20.0 * np.log10(ref) if ref else db.max()
    if not np.isfinite(top) or mag.max() <= 0:
        return np.zeros(mag.shape, dtype=np.uint8)
    scaled = np.clip((db - (top - dynamic_range_db)) / dynamic_range_db, 0.0, 1.0)
    return np.round(scaled[::-1] * 255).astype(np.uint8)


def compose_panels(images) -> np.ndarray:
    height = max(img.shape[0] for img in images)
    width = sum(img.shape[1] for img in images) + PANEL_GAP * (len(images) - 1)
    canvas = np.zeros((height + 2 * MARGIN, width + 2 * MARGIN), dtype=np.uint8)
    x = MARGIN
    for img in images:
        canvas[MARGIN : MARGIN + img.shape[0], x : x + img.shape[1]] = img
        x += img.shape[1] + PANEL_GAP
    return canvas


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (image.shape[1], image.shape[0]))
        f.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM")
    width, height = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1 : pos + 1 + width * height], dtype=np.uint8)
    return pixels.reshape(height, width)
