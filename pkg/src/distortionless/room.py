"""Shoebox image-method RIRs for a uniform circular array and two-speaker scenes."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.signal import butter, fftconvolve, sosfilt

from .dsp import MultiChannelWave

log = logging.getLogger(__name__)

SOUND_SPEED = 343.0
WALL_CLEARANCE = 0.3
SIR_CHOICES = (-6.0, 0.0, 6.0)
DIMS_LOW = (3.0, 3.0, 2.5)
DIMS_HIGH = (8.0, 10.0, 6.0)
RT60_RANGE = (0.05, 0.5)
DISTANCE_RANGE = (1.0, 5.0)
FRACTIONAL_TAPS = 81
HIGHPASS_HZ = 50.0


class SceneError(ValueError):
    pass


@dataclass
class ArrayGeometry:
    center: tuple = (0.0, 0.0, 0.0)
    num_mics: int = 6
    radius: float = 0.035

    @property
    def mic_positions(self) -> np.ndarray:
        angles = 2.0 * np.pi * np.arange(self.num_mics) / self.num_mics
        offsets = np.stack(
            [np.cos(angles), np.sin(angles), np.zeros(self.num_mics)], axis=1
        )
        return np.asarray(self.center, dtype=float) + self.radius * offsets


@dataclass
class RoomSpec:
    dims: tuple
    rt60: float
    sound_speed: float = SOUND_SPEED
    max_image_order: int = 20

    @property
    def volume(self) -> float:
        lx, ly, lz = self.dims
        return lx * ly * lz

    @property
    def surface(self) -> float:
        lx, ly, lz = self.dims
        return 2.0 * (lx * ly + lx * lz + ly * lz)

    def contains(self, point, clearance: float = 0.0) -> bool:
        p = np.asarray(point, dtype=float)
        dims = np.asarray(self.dims, dtype=float)
        return bool(np.all(p >= clearance) and np.all(p <= dims - clearance))


@dataclass
class SceneSpec:
    room: RoomSpec
    array: ArrayGeometry
    target_pos: tuple
    interferer_pos: tuple
    target_doa: float
    interferer_doa: float
    sir_db: float
    seed: int = 0

    @property
    def angle_difference(self) -> float:
        diff = abs(self.target_doa - self.interferer_doa) % 360.0
        return min(diff, 360.0 - diff)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["room"]["dims"] = list(self.room.dims)
        d["array"]["center"] = list(self.array.center)
        d["target_pos"] = list(self.target_pos)
        d["interferer_pos"] = list(self.interferer_pos)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        room = RoomSpec(**{**d["room"], "dims": tuple(d["room"]["dims"])})
        array = ArrayGeometry(**{**d["array"], "center": tuple(d["array"]["center"])})
        return cls(
            room=room,
            array=array,
            target_pos=tuple(d["target_pos"]),
            interferer_pos=tuple(d["interferer_pos"]),
            target_doa=float(d["target_doa"]),
            interferer_doa=float(d["interferer_doa"]),
            sir_db=float(d["sir_db"]),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class Rir:
    taps: np.ndarray
    sample_rate: int = 16000
    direct_delays: np.ndarray = field(default=None, repr=False)


def _fibonacci_sphere(n: int = 400) -> np.ndarray:
    i = np.arange(n) + 0.5
    polar = np.arccos(1.0 - 2.0 * i / n)
    azimuth = np.pi * (1.0 + 5.0**0.5) * i
    return np.stack(
        [np.cos(azimuth) * np.sin(polar), np.sin(azimuth) * np.sin(polar), np.cos(polar)],
        axis=1,
    )


_DIRECTIONS = _fibonacci_sphere()


def _edc_t60(t: np.ndarray, edc_db: np.ndarray, lo: float = -5.0, hi: float = -25.0) -> float:
    i0 = int(np.argmax(edc_db <= lo))
    i1 = int(np.argmax(edc_db <= hi))
    slope = np.polyfit(t[i0:i1], edc_db[i0:i1], 1)[0]
    return -60.0 / slope


def image_model_t60(room: RoomSpec, alpha: float) -> float:
    """T60 of a shoebox image-method RIR with uniform absorption ``alpha``.

    Images fill space with uniform density and each arrives with energy
    proportional to ``(1 - alpha) ** bounces``, where the bounce count per metre
    travelled in direction ``u`` is ``sum(|u_a| / L_a)``. Averaging over
    directions gives the late energy envelope; the T60 is read off its
    Schroeder curve with the same -5..-25 dB fit used for measured RIRs.
    """
    g = np.abs(_DIRECTIONS) @ (1.0 / np.asarray(room.dims, dtype=float))
    kappa = -math.log1p(-alpha) * room.sound_speed
    t = np.linspace(0.0, 8.0 / (kappa * g.min()), 1000)
    edc = np.mean(np.exp(-kappa * np.outer(t, g)) / (kappa * g), axis=1)
    return _edc_t60(t, 10.0 * np.log10(edc / edc[0]))


def rt60_to_absorption(room: RoomSpec, formula: str = "sabine") -> float:
    """Uniform absorption coefficient that yields ``room.rt60``.

    ``sabine`` inverts ``RT60 = 0.161 V / (S a)``; ``eyring`` inverts
    ``RT60 = 0.161 V / (-S ln(1 - a))``; ``image`` inverts
    :func:`image_model_t60`, which is what the simulator actually produces.
    Sabine/Eyring values that would reach 1 are clamped with a warning.
    """
    if room.rt60 <= 0:
        raise ValueError("rt60 must be positive")
    if room.volume <= 0:
        raise ValueError("room volume must be positive")
    ratio = 0.161 * room.volume / (room.surface * room.rt60)
    if formula == "sabine":
        alpha = ratio
    elif formula == "eyring":
        alpha = 1.0 - math.exp(-ratio)
    elif formula == "image":
        return brentq(lambda a: image_model_t60(room, a) - room.rt60, 1e-6, 1.0 - 1e-9)
    else:
        raise ValueError(f"unknown formula {formula!r}")
    if alpha >= 1.0:
        log.warning(
            "room too small for requested RT60 %.3f s %s (absorption %.3f); clamping",
            room.rt60, room.dims, alpha,
        )
        alpha = 1.0 - 1e-6
    return alpha


def rir_length(room: RoomSpec, fs: int) -> int:
    return int(math.ceil((room.rt60 + 0.05) * fs))


def image_sources(room: RoomSpec, source, max_order: int):
    """Image positions and reflection counts for all images up to ``max_order``.

    Along each axis, image index ``i`` sits at ``i * L + (x if i is even else
    L - x)`` and has ``|i|`` wall bounces.
    """
    dims = np.asarray(room.dims, dtype=float)
    src = np.asarray(source, dtype=float)
    r = np.arange(-max_order, max_order + 1)
    ii, jj, kk = np.meshgrid(r, r, r, indexing="ij")
    order = np.abs(ii) + np.abs(jj) + np.abs(kk)
    keep = order <= max_order
    idx = np.stack([ii[keep], jj[keep], kk[keep]], axis=1)
    even = idx % 2 == 0
    pos = idx * dims + np.where(even, src, dims - src)
    return pos, order[keep]


def simulate_rir(
    room: RoomSpec,
    source,
    mics,
    fs: int = 16000,
    absorption: float | None = None,
    formula: str = "image",
    length: int | None = None,
    max_order: int | None = None,
    highpass: bool = True,
) -> Rir:
    """Multi-microphone RIR by the image method.

    Each image contributes ``sqrt(1 - alpha) ** bounces / (4 pi d)`` at delay
    ``d / c``, spread over an 81-tap Hann-windowed sinc. Images later than the
    RIR length (``(rt60 + 0.05) * fs`` by default) or above the image order are
    dropped. A 50 Hz high-pass removes the DC build-up that all-positive
    image pulses otherwise leave in the tail.
    """
    if isinstance(mics, ArrayGeometry):
        mic_pos = mics.mic_positions
    else:
        mic_pos = np.atleast_2d(np.asarray(mics, dtype=float))
    source = np.asarray(source, dtype=float)
    if not room.contains(source) or not all(room.contains(m) for m in mic_pos):
        raise SceneError("source and microphones must lie inside the room")
    direct = np.linalg.norm(mic_pos - source, axis=1)
    if np.any(direct < 0.01):
        raise SceneError("source coincides with a microphone")

    if absorption is None:
        absorption = rt60_to_absorption(room, formula)
    beta = math.sqrt(max(0.0, 1.0 - absorption))
    n_taps = length or rir_length(room, fs)
    half = FRACTIONAL_TAPS // 2
    order = room.max_image_order if max_order is None else max_order
    positions, bounces = image_sources(room, source, order)
    gain = beta ** bounces.astype(float)
    if beta == 0.0:
        gain = (bounces == 0).astype(float)

    offsets = np.arange(-half, half + 1)
    taps = np.zeros((len(mic_pos), n_taps))
    for m, mic in enumerate(mic_pos):
        dist = np.linalg.norm(positions - mic, axis=1)
        delay = dist * fs / room.sound_speed
        keep = (delay < n_taps) & (gain > 0)
        d, a = delay[keep], gain[keep] / (4.0 * np.pi * dist[keep])
        base = np.round(d).astype(np.int64)
        idx = base[:, None] + offsets[None, :]
        t = idx - d[:, None]
        kernel = np.sinc(t) * (0.5 + 0.5 * np.cos(2.0 * np.pi * t / FRACTIONAL_TAPS))
        vals = a[:, None] * kernel
        valid = (idx >= 0) & (idx < n_taps)
        taps[m] = np.bincount(idx[valid], weights=vals[valid], minlength=n_taps)
    if highpass:
        taps = sosfilt(_highpass_sos(fs), taps, axis=1)
    return Rir(taps, fs, direct * fs / room.sound_speed)


def _highpass_sos(fs: int):
    return butter(2, HIGHPASS_HZ, "highpass", fs=fs, output="sos")


def _energy(x) -> float:
    return float(np.sum(np.square(x)))


def synthesize_scene(
    scene: SceneSpec,
    target_src,
    interf_src,
    fs: int = 16000,
    ref_channel: int = 0,
    rirs: tuple | None = None,
):
    """Convolve both sources with their RIRs and mix at ``scene.sir_db``.

    Returns ``(mixture, reverberant_target)`` as :class:`MultiChannelWave`, both
    trimmed to the target source length. The SIR is measured on the reference
    channel of the reverberant images.
    """
    target_src = np.asarray(target_src, dtype=float)
    interf_src = np.asarray(interf_src, dtype=float)
    if _energy(target_src) == 0 or _energy(interf_src) == 0:
        raise SceneError("cannot set SIR: zero-energy source")
    if rirs is None:
        rirs = (
            simulate_rir(scene.room, scene.target_pos, scene.array, fs),
            simulate_rir(scene.room, scene.interferer_pos, scene.array, fs),
        )
    n = len(target_src)
    rev_t = reverberate(target_src, rirs[0], n)
    rev_i = reverberate(interf_src, rirs[1], n)
    e_t, e_i = _energy(rev_t[ref_channel]), _energy(rev_i[ref_channel])
    if e_t == 0 or e_i == 0:
        raise SceneError("cannot set SIR: zero-energy reverberant image")
    scale = math.sqrt(e_t / (e_i * 10.0 ** (scene.sir_db / 10.0)))
    mixture = rev_t + scale * rev_i
    return MultiChannelWave(mixture, fs), MultiChannelWave(rev_t, fs)


def reverberate(src: np.ndarray, rir: Rir, num_samples: int) -> np.ndarray:
    src = np.resize(src, num_samples) if len(src) < num_samples else src[:num_samples]
    return fftconvolve(src[None, :], rir.taps, axes=1)[:, :num_samples]


def doa_of(array: ArrayGeometry, point) -> float:
    delta = np.asarray(point, dtype=float) - np.asarray(array.center, dtype=float)
    return float(np.degrees(np.arctan2(delta[1], delta[0])) % 360.0)


def sample_scene(rng_seed: int, max_tries: int = 10000) -> SceneSpec:
    """Draw a random valid scene; rejection-samples until every constraint holds."""
    rng = np.random.default_rng(rng_seed)
    for _ in range(max_tries):
        dims = tuple(float(v) for v in rng.uniform(DIMS_LOW, DIMS_HIGH))
        rt60 = float(rng.uniform(*RT60_RANGE))
        room = RoomSpec(dims, rt60)
        array_z = float(rng.uniform(0.8, min(1.6, dims[2] - 0.5)))
        margin = WALL_CLEARANCE + 0.035
        center = (
            float(rng.uniform(margin, dims[0] - margin)),
            float(rng.uniform(margin, dims[1] - margin)),
            array_z,
        )
        array = ArrayGeometry(center)
        speakers = []
        for _ in range(2):
            for _ in range(50):
                doa = float(rng.uniform(0.0, 360.0))
                dist = float(rng.uniform(*DISTANCE_RANGE))
                dz = float(rng.uniform(-0.2, 0.2))
                horiz = math.sqrt(max(dist**2 - dz**2, 0.0))
                rad = math.radians(doa)
                pos = (
                    center[0] + horiz * math.cos(rad),
                    center[1] + horiz * math.sin(rad),
                    center[2] + dz,
                )
                if room.contains(pos, WALL_CLEARANCE):
                    speakers.append((pos, doa))
                    break
            else:
                break
        if len(speakers) < 2:
            continue
        if not all(room.contains(m, WALL_CLEARANCE) for m in array.mic_positions):
            continue
        sir = float(rng.choice(SIR_CHOICES))
        (tpos, tdoa), (ipos, idoa) = speakers
        return SceneSpec(room, array, tpos, ipos, tdoa, idoa, sir, rng_seed)
    raise SceneError("could not sample a valid scene")
