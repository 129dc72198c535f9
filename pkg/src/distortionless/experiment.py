"""System comparison on one dataset: base / sept-1 / sept-2 / joint / joint with frozen AM.

Per seed:

1. train the three enhancers (IRM + SI-SNR, cIRM + SI-SNR, cIRM + SI-SNR + LFB-MSE);
2. train a clean acoustic model (A1), then fine-tune it on clean, reverberant,
   mixture and base-enhanced audio (A4);
3. score every enhancer through A4 on the test split;
4. fine-tune sept-1 + A4 jointly with CTC, once with a trainable and once with
   a frozen AM, and score both.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import training as T
from .losses import corpus_cer

log = logging.getLogger(__name__)

SYSTEMS = ("base", "sept-1", "sept-2")
ENHANCER_REGIMES = {
    "base": "base_irm_sisnr",
    "sept-1": "sept1_cirm_sisnr",
    "sept-2": "sept2_cirm_multitask",
}


@dataclass
class SuiteConfig:
    enh_epochs: int = 15
    enh_lr: float = 1e-3
    am_clean_epochs: int = 40
    am_multi_epochs: int = 20
    am_lr: float = 3e-3
    joint_epochs: int = 5
    joint_lr: float = 1e-4
    batch_size: int = 8
    alpha: float = 1.0
    role_swap: bool = True
    tcn: dict = field(default_factory=dict)
    cldnn: dict = field(default_factory=dict)

    to_dict = asdict


@dataclass
class Splits:
    train: list
    train_swapped: list  # train plus role-swapped copies (enhancement only)
    valid: list
    test: list


def load_splits(data_dir, role_swap: bool = True) -> Splits:
    data_dir = Path(data_dir)
    train = T.load_split(data_dir / "train.jsonl", role_swap=role_swap)
    n = len(train) // 2 if role_swap else len(train)
    return Splits(train[:n], train, T.load_split(data_dir / "valid.jsonl"),
                  T.load_split(data_dir / "test.jsonl"))


def _cer_rows(rows) -> float:
    return sum(r["cer_edits"] for r in rows) / sum(r["cer_len"] for r in rows)


def _summary(rows) -> dict:
    return {
        "si_snr_median": float(np.median([r["si_snr_out"] for r in rows])),
        "hole_fraction_median": float(np.median([r["hole_fraction"] for r in rows])),
        "cer": _cer_rows(rows) if rows and rows[0]["cer"] is not None else None,
    }


def run_seed(splits: Splits, seed: int, cfg: SuiteConfig | None = None, out_dir=None) -> dict:
    """Train and score every system for one seed; returns a JSON-ready dict.

    ``test`` holds per-system medians and CER on the test split, ``valid``
    the median validation SI-SNR and hole fraction of each enhancer.
    """
    cfg = cfg or SuiteConfig()
    out_dir = Path(out_dir) if out_dir else None
    t0 = time.time()
    timings, enhancers = {}, {}

    def logp(name):
        return out_dir / f"{name}.log.jsonl" if out_dir else None

    for name in SYSTEMS:
        rc = T.RegimeConfig(
            regime=ENHANCER_REGIMES[name], epochs=cfg.enh_epochs, lr=cfg.enh_lr, seed=seed,
            batch_size=cfg.batch_size, alpha=cfg.alpha, tcn=dict(cfg.tcn),
        )
        train = splits.train_swapped if cfg.role_swap else splits.train
        start = time.time()
        enhancers[name], _ = T.train_enhancement(rc, train, splits.valid, log_path=logp(name))
        timings[name] = time.time() - start
        log.info("seed %d: %s trained in %.0f s", seed, name, timings[name])

    labels = [u.labels for u in splits.train]
    valid_labels = [u.labels for u in splits.valid]
    base_train = T.enhance(enhancers["base"], splits.train)
    base_valid = T.enhance(enhancers["base"], splits.valid)
    waves = T.condition_waves(splits.train, base_train)

    start = time.time()
    rc = T.RegimeConfig(regime="am_pretrain", epochs=cfg.am_clean_epochs, lr=cfg.am_lr, seed=seed,
                        batch_size=cfg.batch_size, am_conditions=("clean",), cldnn=dict(cfg.cldnn))
    am_clean, _ = T.train_am(rc, waves, labels, [u.clean for u in splits.valid], valid_labels,
                             log_path=logp("am_clean"))
    rc = T.RegimeConfig(regime="am_pretrain", epochs=cfg.am_multi_epochs, lr=cfg.am_lr, seed=seed,
                        batch_size=cfg.batch_size, am_conditions=T.CONDITIONS,
                        cldnn=dict(cfg.cldnn))
    am_multi, _ = T.train_am(rc, waves, labels, base_valid, valid_labels, init=am_clean,
                             log_path=logp("am_multi"))
    timings["am"] = time.time() - start

    test_labels = [u.labels for u in splits.test]
    base_test = T.enhance(enhancers["base"], splits.test)
    results = {"seed": seed, "test": {}, "valid": {}, "am": {
        "clean_only_on_base_enhanced": corpus_cer(T.decode(am_clean, base_test), test_labels),
        "multi_condition_on_base_enhanced": corpus_cer(T.decode(am_multi, base_test), test_labels),
    }}
    results["test"]["mixture"] = _summary(T.evaluate(splits.test, None, am_multi))
    for name in SYSTEMS:
        results["test"][name] = _summary(T.evaluate(splits.test, enhancers[name], am_multi))
        results["valid"][name] = _summary(T.evaluate(splits.valid, enhancers[name]))

    for name, frozen in (("joint", False), ("joint-frozen", True)):
        rc = T.RegimeConfig(regime="joint_frozen_am" if frozen else "joint",
                            epochs=cfg.joint_epochs, lr=cfg.joint_lr, seed=seed,
                            batch_size=cfg.batch_size, tcn=dict(cfg.tcn), cldnn=dict(cfg.cldnn))
        start = time.time()
        enh, am, _ = T.joint_finetune(rc, enhancers["sept-1"], am_multi, splits.train,
                                      splits.valid, log_path=logp(name))
        timings[name] = time.time() - start
        results["test"][name] = _summary(T.evaluate(splits.test, enh, am))
        if out_dir:
            T.save_enhancer(out_dir / f"{name}.enhancer.ckpt", enh, rc)
            T.save_am(out_dir / f"{name}.am.ckpt", am, rc)

    if out_dir:
        for name, model in enhancers.items():
            T.save_enhancer(out_dir / f"{name}.enhancer.ckpt", model)
        T.save_am(out_dir / "am_clean.ckpt", am_clean)
        T.save_am(out_dir / "am_multi.ckpt", am_multi)
    timings["total"] = time.time() - t0
    results["seconds"] = timings
    return results


def orderings(result: dict) -> dict:
    """The four ordering checks for one seed."""
    test, valid = result["test"], result["valid"]
    cer = {k: v["cer"] for k, v in test.items()}
    return {
        "a_hole_fraction": test["sept-1"]["hole_fraction_median"]
        < test["base"]["hole_fraction_median"],
        "b_valid_si_snr": valid["sept-1"]["si_snr_median"] >= valid["base"]["si_snr_median"],
        "c_cer_chain": cer["joint"] <= cer["sept-2"] <= cer["sept-1"] <= cer["base"],
        "d_frozen_am": cer["joint-frozen"] >= cer["joint"],
    }
