"""Training objectives and evaluation metrics."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
import torch

from .features import LfbLayer

SI_SNR_EPS = 1e-8
SDR_CAP = 100.0
ANGLE_BUCKETS = ((0.0, 15.0), (15.0, 45.0), (45.0, 90.0), (90.0, 180.0))
LOSS_MODES = ("sisnr", "sisnr_plus_lfb", "ctc_joint")


@dataclass
class LossConfig:
    mode: str = "sisnr"
    alpha: float = 1.0

    def __post_init__(self):
        if self.mode not in LOSS_MODES:
            raise ValueError(f"unknown loss mode {self.mode!r}")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")


def si_snr_torch(estimate: torch.Tensor, reference: torch.Tensor, eps: float = SI_SNR_EPS,
                 zero_mean: bool = True):
    """SI-SNR in dB over the last axis; differentiable w.r.t. ``estimate``.

    ``zero_mean=False`` skips mean removal and evaluates the bare projection
    formula, which is what small hand-worked examples usually assume.
    """
    est, ref = estimate, reference
    if zero_mean:
        est = est - est.mean(-1, keepdim=True)
        ref = ref - ref.mean(-1, keepdim=True)
    ref_energy = ref.square().sum(-1, keepdim=True)
    if torch.any(ref_energy == 0):
        raise ValueError("zero reference")
    s_target = (est * ref).sum(-1, keepdim=True) * ref / ref_energy
    e_noise = est - s_target
    return 10.0 * torch.log10(s_target.square().sum(-1) / (e_noise.square().sum(-1) + eps))


def si_snr(estimate, reference, eps: float = SI_SNR_EPS, zero_mean: bool = True) -> float:
    est = np.asarray(estimate, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError("estimate and reference lengths differ")
    return float(si_snr_torch(torch.from_numpy(est), torch.from_numpy(ref), eps, zero_mean))


def si_snr_loss(estimate: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
    return -si_snr_torch(estimate, reference).mean()


_LFB = LfbLayer()


def lfb_mse(estimate: torch.Tensor, reference: torch.Tensor, lfb_layer=None) -> torch.Tensor:
    layer = lfb_layer or _LFB
    return (layer(estimate) - layer(reference)).square().mean()


def multitask_loss(estimate, reference, alpha: float = 1.0, lfb_layer=None):
    """Negative SI-SNR plus ``alpha`` times the log-mel MSE."""
    loss = si_snr_loss(estimate, reference)
    if alpha == 0:
        return loss
    return loss + alpha * lfb_mse(estimate, reference, lfb_layer)


def sdr(estimate, reference) -> float:
    est = np.asarray(estimate, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError("estimate and reference lengths differ")
    err = np.sum((est - ref) ** 2)
    if err == 0:
        return SDR_CAP
    return float(min(SDR_CAP, 10.0 * math.log10(np.sum(ref**2) / err)))


def edit_distance(hyp, ref) -> int:
    hyp, ref = list(hyp), list(ref)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def cer(hypothesis, reference) -> float:
    if len(reference) == 0:
        raise ValueError("empty reference")
    return edit_distance(hypothesis, reference) / len(reference)


def corpus_cer(hypotheses, references) -> float:
    """Total edits over total reference symbols."""
    edits = sum(edit_distance(h, r) for h, r in zip(hypotheses, references))
    total = sum(len(r) for r in references)
    if total == 0:
        raise ValueError("empty reference")
    return edits / total


def angle_bucket(angle_diff: float) -> str:
    for lo, hi in ANGLE_BUCKETS:
        if angle_diff <= hi:
            return f"{lo:g}-{hi:g}"
    raise ValueError(f"angle difference {angle_diff} outside [0, 180]")


def summarize(records) -> dict:
    """Aggregate per-utterance records by SIR and angle-difference bucket."""
    keys = ("si_snr_in", "si_snr_out", "sdr_out", "hole_fraction", "cer")
    groups = defaultdict(list)
    for rec in records:
        groups["all"].append(rec)
        groups[f"sir={rec['sir_db']:g}"].append(rec)
        groups[f"angle={angle_bucket(rec['angle_diff'])}"].append(rec)
    summary = {}
    order = ["all"] + [f"sir={s:g}" for s in (-6.0, 0.0, 6.0)]
    order += [f"angle={lo:g}-{hi:g}" for lo, hi in ANGLE_BUCKETS]
    for name in order:
        rows = groups.get(name, [])
        entry = {"count": len(rows)}
        for k in keys:
            vals = [r[k] for r in rows if r.get(k) is not None]
            entry[k] = float(np.mean(vals)) if vals else None
        if rows and all(r.get("cer_edits") is not None for r in rows):
            entry["cer"] = sum(r["cer_edits"] for r in rows) / sum(r["cer_len"] for r in rows)
        if entry["si_snr_in"] is not None and entry["si_snr_out"] is not None:
            entry["si_snr_improvement"] = entry["si_snr_out"] - entry["si_snr_in"]
        summary[name] = entry
    return summary
