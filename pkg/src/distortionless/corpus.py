"""Source material and dataset synthesis.

Sources are either a user WAV corpus laid out as ``<root>/<speaker>/<utt>.wav``
(with an optional ``<utt>.lab`` of whitespace-separated integer labels) or the
built-in pseudo-speech generator: harmonic "vowels" shaped by phoneme-specific
formants and band-noise "fricatives", voiced at a speaker-specific pitch.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import read_wav, write_wav
from .room import SceneSpec, sample_scene, synthesize_scene

log = logging.getLogger(__name__)

FS = 16000
INVENTORY_SEED = 20200
SPLITS = ("train", "valid", "test")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Phoneme:
    voiced: bool
    formants: tuple  # Hz; for fricatives (center, bandwidth)


def phoneme_inventory(num_phonemes: int = 32, seed: int = INVENTORY_SEED):
    """Fixed inventory: three quarters vowel-like, the rest fricative-like."""
    rng = np.random.default_rng(seed)
    n_voiced = num_phonemes - num_phonemes // 4
    voiced, tries = [], 0
    min_sep = 0.16
    while len(voiced) < n_voiced:
        f1 = rng.uniform(280, 900)
        f2 = rng.uniform(max(900, f1 + 300), 2500)
        f3 = rng.uniform(max(2300, f2 + 300), 3800)
        point = np.log([f1, f2])
        if all(np.linalg.norm(point - np.log(v[:2])) > min_sep for v in voiced):
            voiced.append((f1, f2, f3))
        tries += 1
        if tries % 2000 == 0:
            min_sep *= 0.9
    centers = np.linspace(2200, 7000, num_phonemes - n_voiced)
    fricatives = [(c, 500 + 0.2 * c) for c in centers]
    return [Phoneme(True, tuple(v)) for v in voiced] + [
        Phoneme(False, tuple(f)) for f in fricatives
    ]


@dataclass(frozen=True)
class Speaker:
    name: str
    f0: float
    formant_scale: float
    tilt_db: float

    @classmethod
    def random(cls, name: str, rng: np.random.Generator) -> "Speaker":
        return cls(name, float(rng.uniform(90, 240)), float(rng.uniform(0.9, 1.1)),
                   float(rng.uniform(-9, -4)))


def _formant_gain(freqs, formants, scale):
    gain = np.zeros_like(freqs)
    for f, bw in zip(formants, (90.0, 130.0, 200.0)):
        gain += 1.0 / (1.0 + ((freqs - f * scale) / bw) ** 2)
    return gain


def synth_utterance(speaker: Speaker, rng: np.random.Generator, inventory,
                    num_samples: int = 2 * FS, fs: int = FS):
    """Return ``(waveform, labels)`` for one random pseudo-speech utterance."""
    t = np.arange(num_samples) / fs
    drift = 1.0 + 0.06 * np.sin(2 * np.pi * rng.uniform(0.3, 1.2) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * np.cumsum(speaker.f0 * drift) / fs
    out = np.zeros(num_samples)
    labels = []
    fade = int(0.012 * fs)
    pos = int(rng.uniform(0.05, 0.15) * fs)
    prev = None
    while True:
        dur = int(rng.uniform(0.09, 0.2) * fs)
        if pos + dur + fade > num_samples - int(0.05 * fs):
            break
        choices = [p for p in range(len(inventory)) if p != prev]
        pid = int(rng.choice(choices))
        ph = inventory[pid]
        lo, hi = max(pos - fade, 0), pos + dur + fade
        n = hi - lo
        env = np.ones(n)
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        env[:fade] = ramp
        env[-fade:] = ramp[::-1]
        if ph.voiced:
            f0 = speaker.f0
            k = np.arange(1, int(0.95 * (fs / 2) / (f0 * 1.06)) + 1)
            freqs = k * f0
            amp = _formant_gain(freqs, ph.formants, speaker.formant_scale)
            amp *= 10 ** (speaker.tilt_db * np.log2(freqs / 100.0) / 20.0)
            seg = np.sin(np.outer(phase[lo:hi], k)) @ amp
        else:
            center, bw = ph.formants
            noise = rng.standard_normal(n + 64)
            spec = np.fft.rfft(noise)
            f = np.fft.rfftfreq(n + 64, 1 / fs)
            spec *= np.exp(-0.5 * ((f - center * speaker.formant_scale) / bw) ** 2)
            seg = np.fft.irfft(spec, n + 64)[:n]
        seg /= np.sqrt(np.mean(seg**2)) + 1e-12
        out[lo:hi] += float(rng.uniform(0.6, 1.0)) * env * seg
        labels.append(pid)
        prev = pid
        pos += dur
        if rng.random() < 0.15:
            pos += int(rng.uniform(0.04, 0.12) * fs)
    return _normalize(out), labels


def _normalize(x, rms: float = 0.05):
    return x * (rms / (np.sqrt(np.mean(x**2)) + 1e-12))


class PseudoSpeechCorpus:
    """Speaker pools per split, disjoint by construction."""

    def __init__(self, speakers_per_split=(34, 6, 6), num_phonemes=32, seed=0,
                 num_samples=2 * FS):
        rng = np.random.default_rng([seed, 1])
        self.inventory = phoneme_inventory(num_phonemes)
        self.num_samples = num_samples
        self.speakers = {}
        for split, count in zip(SPLITS, speakers_per_split):
            if count < 2:
                raise CorpusError(f"{split} split needs at least 2 speakers")
            self.speakers[split] = [
                Speaker.random(f"{split}-spk{i:03d}", rng) for i in range(count)
            ]

    def draw(self, split: str, rng: np.random.Generator, exclude: str | None = None):
        pool = [s for s in self.speakers[split] if s.name != exclude]
        spk = pool[int(rng.integers(len(pool)))]
        wave, labels = synth_utterance(spk, rng, self.inventory, self.num_samples)
        return spk.name, wave, labels


class WavCorpus:
    """User-supplied 16 kHz mono corpus, split by speaker directory."""

    def __init__(self, root, split_fractions=(0.85, 0.1, 0.05), seed=0, num_samples=2 * FS):
        root = Path(root)
        speakers = sorted(p for p in root.iterdir() if p.is_dir() and any(p.glob("*.wav")))
        if len(speakers) < 6:
            raise CorpusError(
                f"corpus too small for disjoint splits: {len(speakers)} speakers (need >= 6)"
            )
        rng = np.random.default_rng([seed, 2])
        order = [speakers[i] for i in rng.permutation(len(speakers))]
        n_valid = max(2, int(round(split_fractions[1] * len(order))))
        n_test = max(2, int(round(split_fractions[2] * len(order))))
        n_train = len(order) - n_valid - n_test
        if n_train < 2:
            raise CorpusError("corpus too small for disjoint splits")
        self.num_samples = num_samples
        self.speakers = {
            "train": order[:n_train],
            "valid": order[n_train : n_train + n_valid],
            "test": order[n_train + n_valid :],
        }

    def draw(self, split: str, rng: np.random.Generator, exclude: str | None = None):
        pool = [s for s in self.speakers[split] if s.name != exclude]
        spk = pool[int(rng.integers(len(pool)))]
        files = sorted(spk.glob("*.wav"))
        path = files[int(rng.integers(len(files)))]
        wave = read_wav(path)
        if wave.sample_rate != FS:
            raise CorpusError(f"{path}: expected {FS} Hz, got {wave.sample_rate}")
        x = wave.samples[0]
        x = np.pad(x, (0, max(0, self.num_samples - len(x))))[: self.num_samples]
        lab = path.with_suffix(".lab")
        labels = [int(v) for v in lab.read_text().split()] if lab.exists() else []
        return spk.name, _normalize(x), labels


def _scene_job(args):
    corpus, split, index, seed, out_dir = args
    rng = np.random.default_rng([seed, SPLITS.index(split), index])
    scene = sample_scene(int(rng.integers(2**31)))
    t_name, target, labels = corpus.draw(split, rng)
    i_name, interf, _ = corpus.draw(split, rng, exclude=t_name)
    mixture, reverb = synthesize_scene(scene, target, interf)
    gain = 0.05 / (np.sqrt(np.mean(mixture.samples[0] ** 2)) + 1e-12)
    peak = gain * np.max(np.abs(mixture.samples))
    if peak > 0.95:
        gain *= 0.95 / peak
    utt = f"{split}-{index:05d}"
    rel = Path(split)
    write_wav(out_dir / rel / f"{utt}_mix.wav", mixture.samples * gain)
    write_wav(out_dir / rel / f"{utt}_rev.wav", reverb.samples * gain)
    write_wav(out_dir / rel / f"{utt}_cln.wav", target)
    return {
        "id": utt,
        "split": split,
        "mixture_wav": str(rel / f"{utt}_mix.wav"),
        "reverb_target_wav": str(rel / f"{utt}_rev.wav"),
        "clean_wav": str(rel / f"{utt}_cln.wav"),
        "target_speaker": t_name,
        "interferer_speaker": i_name,
        "sir_db": scene.sir_db,
        "target_doa": scene.target_doa,
        "angle_diff": scene.angle_difference,
        "scene": scene.to_dict(),
        "transcript_labels": labels,
    }


def synth_dataset(out_dir, counts=(200, 20, 20), seed=0, corpus=None, threads=1):
    """Write WAVs plus one ``<split>.jsonl`` manifest per split; returns the manifests."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = corpus or PseudoSpeechCorpus(seed=seed)
    manifests = {}
    for split, count in zip(SPLITS, counts):
        jobs = [(corpus, split, i, seed, out_dir) for i in range(count)]
        if threads > 1:
            with ProcessPoolExecutor(threads) as pool:
                records = list(pool.map(_scene_job, jobs))
        else:
            records = [_scene_job(j) for j in jobs]
        write_manifest(out_dir / f"{split}.jsonl", records)
        manifests[split] = records
        log.info("wrote %d %s utterances", count, split)
    return manifests


def write_manifest(path, records) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path):
    path = Path(path)
    records = []
    with open(path) as f:
        for line in f:
            if line.strip():
                rec = json.loads(line)
                rec["_root"] = str(path.parent)
                records.append(rec)
    return records


def scene_of(record) -> SceneSpec:
    return SceneSpec.from_dict(record["scene"])
