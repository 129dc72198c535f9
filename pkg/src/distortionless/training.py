"""Training regimes: IRM/cIRM enhancement, AM pretraining and CTC joint fine-tuning."""

from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import tensorio
from .corpus import read_manifest, write_manifest
from .dsp import MultiChannelWave, read_wav, stft, write_wav
from .features import compute_features
from .losses import cer, corpus_cer, edit_distance, multitask_loss, sdr, si_snr
from .masks import hole_fraction
from .nn.cldnn import CldnnConfig, CldnnLite
from .nn.ctc import batch_ctc_loss, greedy_decode
from .nn.tcn import Enhancer, TcnConfig

log = logging.getLogger(__name__)

ENHANCEMENT_REGIMES = {
    "base_irm_sisnr": ("irm", "sisnr"),
    "sept1_cirm_sisnr": ("cirm", "sisnr"),
    "sept2_cirm_multitask": ("cirm", "sisnr_plus_lfb"),
}
REGIMES = tuple(ENHANCEMENT_REGIMES) + ("am_pretrain", "joint", "joint_frozen_am")
CONDITIONS = ("clean", "reverb", "mixture", "enhanced")


class NumericalError(RuntimeError):
    pass


class DisconnectedGradientError(RuntimeError):
    pass


class ChannelMismatchError(ValueError):
    pass


@dataclass
class RegimeConfig:
    regime: str = "sept1_cirm_sisnr"
    epochs: int = 20
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    alpha: float = 1.0
    grad_clip: float = 5.0
    role_swap: bool = True  # enhancement training also sees each scene with roles swapped
    deterministic: bool = True
    am_conditions: tuple = CONDITIONS
    tcn: TcnConfig = field(default_factory=TcnConfig)
    cldnn: CldnnConfig = field(default_factory=CldnnConfig)

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if isinstance(self.tcn, dict):
            self.tcn = TcnConfig(**self.tcn)
        if isinstance(self.cldnn, dict):
            self.cldnn = CldnnConfig(**self.cldnn)
        self.am_conditions = tuple(self.am_conditions)
        bad = set(self.am_conditions) - set(CONDITIONS)
        if bad:
            raise ValueError(f"unknown AM conditions {sorted(bad)}")
        if self.regime in ENHANCEMENT_REGIMES:
            self.tcn.mask_kind = ENHANCEMENT_REGIMES[self.regime][0]

    @property
    def loss_mode(self) -> str:
        if self.regime in ENHANCEMENT_REGIMES:
            return ENHANCEMENT_REGIMES[self.regime][1]
        return "ctc_joint"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["am_conditions"] = list(self.am_conditions)
        return d


@dataclass
class Utterance:
    id: str
    features: np.ndarray      # [2056, N] float32
    ref_real: np.ndarray      # [257, N]
    ref_imag: np.ndarray
    mixture: np.ndarray       # reference channel
    target: np.ndarray        # reverberant target, reference channel
    clean: np.ndarray | None
    labels: list
    sir_db: float = 0.0
    angle_diff: float = 0.0


def load_utterances(records, ref_channel: int = 0, role_swap: bool = False):
    """Read WAVs from manifest records and precompute network inputs.

    With ``role_swap`` every scene is also returned with the interferer as
    target (reverberant image = mixture - reverberant target, features steered
    to the interferer DOA, no transcript). The swapped copies follow the
    originals.
    """
    utts, swapped = [], []
    for rec in records:
        root = Path(rec.get("_root", "."))
        mix = read_wav(root / rec["mixture_wav"])
        rev = read_wav(root / rec["reverb_target_wav"])
        clean = read_wav(root / rec["clean_wav"]).samples[0] if rec.get("clean_wav") else None
        array = _array_of(rec)
        utts.append(utterance_from_arrays(
            rec["id"], mix, rev.samples[ref_channel], rec["target_doa"],
            clean=clean, labels=rec.get("transcript_labels", []),
            sir_db=rec.get("sir_db", 0.0), angle_diff=rec.get("angle_diff", 0.0),
            array=array, ref_channel=ref_channel,
        ))
        if role_swap:
            swapped.append(utterance_from_arrays(
                rec["id"] + "-swap", mix, mix.samples[ref_channel] - rev.samples[ref_channel],
                rec["scene"]["interferer_doa"], sir_db=-rec.get("sir_db", 0.0),
                angle_diff=rec.get("angle_diff", 0.0), array=array, ref_channel=ref_channel,
            ))
    return utts + swapped


def _array_of(rec):
    from .room import ArrayGeometry

    a = rec.get("scene", {}).get("array")
    return ArrayGeometry(**{**a, "center": tuple(a["center"])}) if a else None


def utterance_from_arrays(utt_id, mixture: MultiChannelWave, target, doa, clean=None,
                          labels=(), sir_db=0.0, angle_diff=0.0, array=None, ref_channel=0):
    expected = array.num_mics if array is not None else 6
    if mixture.num_channels != expected:
        raise ChannelMismatchError(
            f"{utt_id}: expected {expected} channels, got {mixture.num_channels}"
        )
    pack, specs = compute_features(mixture, doa, array, ref_channel=ref_channel)
    ref = specs[ref_channel].bins
    return Utterance(
        utt_id, pack.concatenated.astype(np.float32),
        ref.real.astype(np.float32), ref.imag.astype(np.float32),
        mixture.samples[ref_channel].astype(np.float32),
        np.asarray(target, dtype=np.float32),
        None if clean is None else np.asarray(clean, dtype=np.float32),
        list(labels), float(sir_db), float(angle_diff),
    )


def load_split(manifest_path, role_swap: bool = False):
    return load_utterances(read_manifest(manifest_path), role_swap=role_swap)


def set_determinism(seed: int, deterministic: bool = True) -> None:
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def _stack(utts, attr):
    return torch.from_numpy(np.stack([getattr(u, attr) for u in utts]))


def _check_finite(loss, epoch, step):
    if not torch.isfinite(loss):
        raise NumericalError(f"non-finite loss at epoch {epoch} step {step}: {loss.item()}")


def _clip_and_step(params, opt, clip):
    torch.nn.utils.clip_grad_norm_(params, clip)
    opt.step()


def enhance_batch(model: Enhancer, utts, grad: bool = False):
    ctx = torch.enable_grad() if grad else torch.no_grad()
    with ctx:
        return model(
            _stack(utts, "features"), _stack(utts, "ref_real"), _stack(utts, "ref_imag"),
            len(utts[0].mixture),
        )


def enhance(model: Enhancer, utts, batch_size: int = 8):
    model.eval()
    out = []
    for i in range(0, len(utts), batch_size):
        out.extend(enhance_batch(model, utts[i : i + batch_size]).numpy())
    return out


def validate_si_snr(model: Enhancer, utts) -> float:
    est = enhance(model, utts)
    return float(np.mean([si_snr(e, u.target) for e, u in zip(est, utts)]))


class TrainLog:
    """Per-epoch records, optionally mirrored to a JSON-lines file."""

    def __init__(self, path=None, seed: int = 0):
        self.records = []
        self.seed = seed
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def add(self, **rec):
        rec = {"epoch": len(self.records) + 1, "seed": self.seed, **rec}
        self.records.append(rec)
        log.info("%s", rec)
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(rec) + "\n")

    def column(self, key):
        return [r[key] for r in self.records]


def train_enhancement(cfg: RegimeConfig, train, valid, init: Enhancer | None = None,
                      log_path=None):
    """Train an IRM or cIRM enhancer with SI-SNR or SI-SNR + LFB-MSE.

    Returns ``(model, TrainLog)``; the model is the epoch with the best
    validation SI-SNR.
    """
    if cfg.regime not in ENHANCEMENT_REGIMES:
        raise ValueError(f"{cfg.regime} is not an enhancement regime")
    if not train:
        raise ValueError("empty training set")
    set_determinism(cfg.seed, cfg.deterministic)
    model = copy.deepcopy(init) if init is not None else Enhancer(cfg.tcn)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    trace = TrainLog(log_path, cfg.seed)
    best, best_state = -np.inf, copy.deepcopy(model.state_dict())
    alpha = cfg.alpha if cfg.loss_mode == "sisnr_plus_lfb" else 0.0
    for epoch in range(cfg.epochs):
        start, losses = time.time(), []
        model.train()
        for step, idx in enumerate(_batches(len(train), cfg.batch_size, rng)):
            batch = [train[i] for i in idx]
            est = enhance_batch(model, batch, grad=True)
            loss = multitask_loss(est, _stack(batch, "target"), alpha)
            _check_finite(loss, epoch, step)
            opt.zero_grad()
            loss.backward()
            _clip_and_step(model.parameters(), opt, cfg.grad_clip)
            losses.append(loss.item())
        score = validate_si_snr(model, valid) if valid else -float(np.mean(losses))
        if score > best:
            best, best_state = score, copy.deepcopy(model.state_dict())
        trace.add(train_loss=float(np.mean(losses)), valid_si_snr=score,
                  wall_time=time.time() - start)
    model.load_state_dict(best_state)
    model.eval()
    return model, trace


def decode(am: CldnnLite, waves, batch_size: int = 16):
    am.eval()
    hyps = []
    with torch.no_grad():
        for i in range(0, len(waves), batch_size):
            lp = am(torch.from_numpy(np.stack(waves[i : i + batch_size]).astype(np.float32)))
            hyps.extend(greedy_decode(x) for x in lp)
    return hyps


def am_cer(am: CldnnLite, waves, labels) -> float:
    return corpus_cer(decode(am, waves), labels)


def condition_waves(utts, enhanced=None):
    """Map each AM training condition to per-utterance waveforms."""
    waves = {
        "clean": [u.clean for u in utts],
        "reverb": [u.target for u in utts],
        "mixture": [u.mixture for u in utts],
    }
    if enhanced is not None:
        waves["enhanced"] = [np.asarray(e, dtype=np.float32) for e in enhanced]
    return waves


def train_am(cfg: RegimeConfig, waves: dict, labels, valid_waves=None, valid_labels=None,
             init: CldnnLite | None = None, log_path=None):
    """Train the CLDNN-lite with CTC, mixing the selected conditions uniformly.

    Each epoch visits every utterance once, under a condition drawn uniformly
    from ``cfg.am_conditions``. Returns the epoch with the lowest validation CER.
    """
    conditions = [c for c in cfg.am_conditions if c in waves]
    missing = set(cfg.am_conditions) - set(conditions)
    if missing:
        raise ValueError(f"no waveforms for conditions {sorted(missing)}")
    set_determinism(cfg.seed, cfg.deterministic)
    model = copy.deepcopy(init) if init is not None else CldnnLite(cfg.cldnn)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    trace = TrainLog(log_path, cfg.seed)
    best, best_state = np.inf, copy.deepcopy(model.state_dict())
    n = len(labels)
    for epoch in range(cfg.epochs):
        start, losses = time.time(), []
        picks = rng.integers(len(conditions), size=n)
        model.train()
        for step, idx in enumerate(_batches(n, cfg.batch_size, rng)):
            x = torch.from_numpy(np.stack([waves[conditions[picks[i]]][i] for i in idx]))
            loss = batch_ctc_loss(model(x), [labels[i] for i in idx])
            _check_finite(loss, epoch, step)
            opt.zero_grad()
            loss.backward()
            _clip_and_step(model.parameters(), opt, cfg.grad_clip)
            losses.append(loss.item())
        score = am_cer(model, valid_waves, valid_labels) if valid_waves else float(np.mean(losses))
        if score < best:
            best, best_state = score, copy.deepcopy(model.state_dict())
        trace.add(train_loss=float(np.mean(losses)), valid_cer=score,
                  wall_time=time.time() - start)
    model.load_state_dict(best_state)
    model.eval()
    return model, trace


def system_cer(enhancer: Enhancer, am: CldnnLite, utts) -> float:
    return am_cer(am, enhance(enhancer, utts), [u.labels for u in utts])


def enhancer_grad_norm(enhancer: Enhancer, am: CldnnLite, utts) -> float:
    enhancer.zero_grad()
    est = enhance_batch(enhancer, utts, grad=True)
    batch_ctc_loss(am(est), [u.labels for u in utts]).backward()
    norm = sum(float(p.grad.square().sum()) for p in enhancer.parameters() if p.grad is not None)
    enhancer.zero_grad()
    am.zero_grad()
    return norm**0.5


def joint_finetune(cfg: RegimeConfig, enhancer: Enhancer, am: CldnnLite, train, valid,
                   freeze_am: bool | None = None, log_path=None):
    """Fine-tune enhancer (and AM unless frozen) end-to-end with CTC.

    Gradients flow waveform -> LFB -> AM and back through the iSTFT decoder and
    mask into the TCN. Returns ``(enhancer, am, TrainLog)`` at the epoch with
    the lowest validation CER; inputs are not modified.
    """
    if freeze_am is None:
        freeze_am = cfg.regime == "joint_frozen_am"
    set_determinism(cfg.seed, cfg.deterministic)
    enhancer, am = copy.deepcopy(enhancer), copy.deepcopy(am)
    probe = train[: min(len(train), cfg.batch_size)]
    if enhancer_grad_norm(enhancer, am, probe) == 0.0:
        raise DisconnectedGradientError("CTC gradient does not reach the enhancement network")
    for p in am.parameters():
        p.requires_grad_(not freeze_am)
    params = list(enhancer.parameters()) + ([] if freeze_am else list(am.parameters()))
    opt = torch.optim.Adam(params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    trace = TrainLog(log_path, cfg.seed)

    def snapshot():
        return copy.deepcopy(enhancer.state_dict()), copy.deepcopy(am.state_dict())

    best = system_cer(enhancer, am, valid) if valid else np.inf
    best_state = snapshot()
    for epoch in range(cfg.epochs):
        start, losses = time.time(), []
        enhancer.train()
        am.train()
        for step, idx in enumerate(_batches(len(train), cfg.batch_size, rng)):
            batch = [train[i] for i in idx]
            est = enhance_batch(enhancer, batch, grad=True)
            loss = batch_ctc_loss(am(est), [u.labels for u in batch])
            _check_finite(loss, epoch, step)
            opt.zero_grad()
            loss.backward()
            _clip_and_step(params, opt, cfg.grad_clip)
            losses.append(loss.item())
        score = system_cer(enhancer, am, valid) if valid else float(np.mean(losses))
        if score < best:
            best, best_state = score, snapshot()
        trace.add(train_loss=float(np.mean(losses)), valid_cer=score,
                  wall_time=time.time() - start)
    enhancer.load_state_dict(best_state[0])
    am.load_state_dict(best_state[1])
    for p in am.parameters():
        p.requires_grad_(True)
    enhancer.eval()
    am.eval()
    return enhancer, am, trace


def save_enhancer(path, model: Enhancer, cfg: RegimeConfig | None = None) -> None:
    meta = {"kind": "enhancer", "tcn": model.cfg.to_dict()}
    if cfg is not None:
        meta["regime"] = cfg.to_dict()
    tensorio.save_module(path, model, meta)


def load_enhancer(path) -> Enhancer:
    state, meta = tensorio.load_state(path)
    if meta.get("kind") != "enhancer":
        raise ValueError(f"{path} is not an enhancer checkpoint")
    model = Enhancer(TcnConfig(**meta["tcn"]))
    model.load_state_dict(state)
    model.eval()
    return model


def save_am(path, model: CldnnLite, cfg: RegimeConfig | None = None) -> None:
    meta = {"kind": "am", "cldnn": model.cfg.to_dict()}
    if cfg is not None:
        meta["regime"] = cfg.to_dict()
    tensorio.save_module(path, model, meta)


def load_am(path) -> CldnnLite:
    state, meta = tensorio.load_state(path)
    if meta.get("kind") != "am":
        raise ValueError(f"{path} is not an acoustic-model checkpoint")
    model = CldnnLite(CldnnConfig(**meta["cldnn"]))
    model.load_state_dict(state)
    model.eval()
    return model


def enhance_corpus(enhancer: Enhancer, manifest_path, out_dir, batch_size: int = 8):
    """Write one mono enhanced WAV per manifest entry plus ``enhanced.jsonl``.

    Output length equals the input length; a second run with the same
    checkpoint writes byte-identical files.
    """
    records = read_manifest(manifest_path)
    out_dir = Path(out_dir)
    out = []
    for i in range(0, len(records), batch_size):
        chunk = records[i : i + batch_size]
        utts = load_utterances(chunk)
        for rec, wave in zip(chunk, enhance(enhancer, utts, batch_size)):
            rel = Path("enhanced") / f"{rec['id']}_enh.wav"
            write_wav(out_dir / rel, wave)
            entry = {k: v for k, v in rec.items() if k != "_root"}
            entry["enhanced_wav"] = str(rel)
            out.append(entry)
    write_manifest(out_dir / "enhanced.jsonl", out)
    return out


def evaluate(utts, enhancer: Enhancer | None = None, am: CldnnLite | None = None):
    """Per-utterance report rows; ``enhancer=None`` scores the raw mixture."""
    outputs = enhance(enhancer, utts) if enhancer is not None else [u.mixture for u in utts]
    hyps = decode(am, outputs) if am is not None else [None] * len(utts)
    rows = []
    for u, est, hyp in zip(utts, outputs, hyps):
        ref_mag = np.abs(stft(u.target).bins)
        row = {
            "utt_id": u.id,
            "sir_db": u.sir_db,
            "angle_diff": u.angle_diff,
            "si_snr_in": si_snr(u.mixture, u.target),
            "si_snr_out": si_snr(est, u.target),
            "sdr_out": sdr(est, u.target),
            "hole_fraction": hole_fraction(np.abs(stft(est).bins), ref_mag),
            "cer": None,
        }
        if hyp is not None:
            row["cer"] = cer(hyp, u.labels)
            row["cer_edits"] = edit_distance(hyp, u.labels)
            row["cer_len"] = len(u.labels)
        rows.append(row)
    return rows
