"""Command-line entry point: ``distortionless <subcommand> ...``.

Exit codes: 0 success, 2 usage, 3 data contract, 4 numerical failure. Errors
are reported as a single JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as cfgio
from . import training
from .corpus import CorpusError, PseudoSpeechCorpus, WavCorpus, read_manifest, synth_dataset
from .dsp import InsufficientSamplesError, read_wav, stft
from .losses import summarize
from .masks import compose_panels, hole_fraction, spectrogram_image, write_pgm
from .nn.ctc import LabelTooLongError
from .room import SceneError
from .tensorio import ContainerError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

REGIME_NAMES = {
    "base": "base_irm_sisnr",
    "sept-1": "sept1_cirm_sisnr",
    "sept-2": "sept2_cirm_multitask",
    "am": "am_pretrain",
    "joint": "joint",
    "joint-frozen": "joint_frozen_am",
}

DATA_ERRORS = (
    CorpusError, SceneError, ContainerError, InsufficientSamplesError, LabelTooLongError,
    training.ChannelMismatchError, FileNotFoundError, KeyError, ValueError,
)
NUMERIC_ERRORS = (training.NumericalError, training.DisconnectedGradientError, FloatingPointError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(code: int, kind: str, message: str) -> int:
    line = json.dumps({"error": kind, "code": code, "message": " ".join(str(message).split())})
    print(line, file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", default=None, help="key = value file; flags take precedence")
    common.add_argument("--deterministic", action="store_true", default=None)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--workdir", default=".", help="root for all relative paths")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="distortionless", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth-dataset", parents=[common], help="simulate a toy dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n-train", type=int, default=None)
    s.add_argument("--n-valid", type=int, default=None)
    s.add_argument("--n-test", type=int, default=None)
    s.add_argument("--source-corpus", default=None, help="<root>/<speaker>/<utt>.wav")

    t = sub.add_parser("train", parents=[common], help="run one training regime")
    t.add_argument("--regime", required=True, choices=list(REGIME_NAMES))
    t.add_argument("--data", required=True, help="directory with train.jsonl and valid.jsonl")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--init-ckpt", default=None,
                   help="enhancer (enhancement/joint) or AM (am) to start from")
    t.add_argument("--enh-ckpt", default=None, help="enhancer for the 'enhanced' AM condition")
    t.add_argument("--am-ckpt", default=None, help="pretrained AM (joint regimes)")
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--alpha", type=float, default=None)
    t.add_argument("--am-conditions", default=None,
                   help="comma-separated subset of clean,reverb,mixture,enhanced")

    e = sub.add_parser("enhance", parents=[common], help="enhance every utterance of a manifest")
    e.add_argument("--enh-ckpt", required=True)
    e.add_argument("--data", required=True, help="manifest (.jsonl)")
    e.add_argument("--out", required=True)

    v = sub.add_parser("evaluate", parents=[common], help="per-utterance and bucketed report")
    v.add_argument("--enh-ckpt", default=None, help="omit to score the unprocessed mixture")
    v.add_argument("--am-ckpt", default=None)
    v.add_argument("--cer", action="store_true", help="also decode and score CER")
    v.add_argument("--data", required=True, help="manifest (.jsonl)")
    v.add_argument("--report", required=True, help="per-utterance JSON lines")

    g = sub.add_parser("plot", parents=[common], help="log-magnitude spectrogram image")
    g.add_argument("--wav", default=None)
    g.add_argument("--ckpt", default=None, help="enhancer; with --data/--utt draws a triplet")
    g.add_argument("--data", default=None)
    g.add_argument("--utt", default=None)
    g.add_argument("--out", required=True, help=".pgm image")
    return p


def _resolve(args) -> dict:
    """Defaults < config file < explicit flags."""
    defaults = {
        "seed": 0, "deterministic": False, "threads": 1,
        "n_train": 200, "n_valid": 20, "n_test": 20,
        "epochs": None, "batch_size": 8, "lr": None, "alpha": 1.0,
    }
    file_values = cfgio.unflatten(cfgio.read_config(args.config)) if args.config else {}
    flags = {k: v for k, v in vars(args).items() if k not in ("config", "verbose")}
    return cfgio.merge(cfgio.merge(defaults, file_values), flags)


def _path(cfg, p):
    return None if p is None else Path(cfg["workdir"]) / p


def _emit(cfg, out_dir=None):
    line = json.dumps({"resolved_config": cfgio.flatten(cfg)}, sort_keys=True)
    print(line)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "resolved_config.txt").write_text(cfgio.format_config(cfg))


def cmd_synth_dataset(cfg) -> int:
    out = _path(cfg, cfg["out"])
    _emit(cfg, out)
    src = _path(cfg, cfg.get("source_corpus"))
    corpus = WavCorpus(src, seed=cfg["seed"]) if src else PseudoSpeechCorpus(seed=cfg["seed"])
    counts = (cfg["n_train"], cfg["n_valid"], cfg["n_test"])
    manifests = synth_dataset(out, counts, seed=cfg["seed"], corpus=corpus, threads=cfg["threads"])
    print(json.dumps({split: len(r) for split, r in manifests.items()}))
    return EXIT_OK


def _regime_config(cfg, regime) -> training.RegimeConfig:
    joint = regime in ("joint", "joint_frozen_am")
    default_lr = 1e-4 if joint else (3e-3 if regime == "am_pretrain" else 1e-3)
    lr = cfg["lr"] if cfg["lr"] is not None else default_lr
    conds = cfg.get("am_conditions")
    if isinstance(conds, str):
        conds = [c.strip() for c in conds.split(",") if c.strip()]
    return training.RegimeConfig(
        regime=regime,
        epochs=cfg["epochs"] if cfg["epochs"] is not None else (5 if joint else 20),
        batch_size=cfg["batch_size"], lr=lr, seed=cfg["seed"], alpha=cfg["alpha"],
        deterministic=bool(cfg["deterministic"]),
        am_conditions=conds or training.CONDITIONS,
        role_swap=bool(cfg.get("role_swap", True)),
        tcn=cfg.get("tcn", {}), cldnn=cfg.get("cldnn", {}),
    )


def cmd_train(cfg) -> int:
    regime = REGIME_NAMES[cfg["regime"]]
    rc = _regime_config(cfg, regime)
    cfg["resolved_regime"] = rc.to_dict()
    out = _path(cfg, cfg["out"])
    _emit(cfg, out)
    data = _path(cfg, cfg["data"])
    swap = rc.role_swap and regime in training.ENHANCEMENT_REGIMES
    train = training.load_split(data / "train.jsonl", role_swap=swap)
    valid = training.load_split(data / "valid.jsonl")
    if not train:
        raise ValueError("training manifest is empty")
    log_path = out / "train_log.jsonl"
    init = _path(cfg, cfg.get("init_ckpt"))

    if regime in training.ENHANCEMENT_REGIMES:
        start = training.load_enhancer(init) if init else None
        model, trace = training.train_enhancement(rc, train, valid, start, log_path)
        training.save_enhancer(out / "enhancer.ckpt", model, rc)
    elif regime == "am_pretrain":
        enh_ckpt = _path(cfg, cfg.get("enh_ckpt"))
        enhanced = valid_enhanced = None
        if enh_ckpt:
            enh = training.load_enhancer(enh_ckpt)
            enhanced, valid_enhanced = training.enhance(enh, train), training.enhance(enh, valid)
        elif "enhanced" in rc.am_conditions:
            if cfg.get("am_conditions"):
                raise ValueError("'enhanced' AM condition requires --enh-ckpt")
            rc.am_conditions = tuple(c for c in rc.am_conditions if c != "enhanced")
        waves = training.condition_waves(train, enhanced)
        vwaves = training.condition_waves(valid, valid_enhanced)
        vcond = "enhanced" if "enhanced" in rc.am_conditions else rc.am_conditions[0]
        start = training.load_am(init) if init else None
        model, trace = training.train_am(
            rc, waves, [u.labels for u in train], vwaves[vcond], [u.labels for u in valid],
            start, log_path,
        )
        training.save_am(out / "am.ckpt", model, rc)
    else:
        if not init or not cfg.get("am_ckpt"):
            raise ValueError("joint regimes need --init-ckpt (enhancer) and --am-ckpt")
        enh = training.load_enhancer(init)
        am = training.load_am(_path(cfg, cfg["am_ckpt"]))
        enh, am, trace = training.joint_finetune(rc, enh, am, train, valid, log_path=log_path)
        training.save_enhancer(out / "enhancer.ckpt", enh, rc)
        training.save_am(out / "am.ckpt", am, rc)
    print(json.dumps({"epochs": len(trace.records), "last": trace.records[-1] if trace.records else None}))
    return EXIT_OK


def cmd_enhance(cfg) -> int:
    out = _path(cfg, cfg["out"])
    _emit(cfg, out)
    model = training.load_enhancer(_path(cfg, cfg["enh_ckpt"]))
    rows = training.enhance_corpus(model, _path(cfg, cfg["data"]), out)
    print(json.dumps({"enhanced": len(rows), "manifest": str(out / "enhanced.jsonl")}))
    return EXIT_OK


def cmd_evaluate(cfg) -> int:
    if cfg["cer"] and not cfg.get("am_ckpt"):
        raise UsageError("CER requested but no --am-ckpt given")
    report = _path(cfg, cfg["report"])
    _emit(cfg)
    utts = training.load_split(_path(cfg, cfg["data"]))
    enh = training.load_enhancer(_path(cfg, cfg["enh_ckpt"])) if cfg.get("enh_ckpt") else None
    am = training.load_am(_path(cfg, cfg["am_ckpt"])) if cfg.get("am_ckpt") else None
    rows = training.evaluate(utts, enh, am)
    report.parent.mkdir(parents=True, exist_ok=True)
    with open(report, "w") as f:
        for r in rows:
            f.write(json.dumps({k: v for k, v in r.items() if not k.startswith("cer_")}) + "\n")
    summary = summarize(rows)
    report.with_suffix(".summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    print(json.dumps({"rows": len(rows), "all": summary["all"]}))
    return EXIT_OK


def cmd_plot(cfg) -> int:
    out = _path(cfg, cfg["out"])
    _emit(cfg)
    if cfg.get("wav"):
        wave = read_wav(_path(cfg, cfg["wav"]))
        image = compose_panels([spectrogram_image(np.abs(stft(wave.samples[0]).bins))])
        write_pgm(out, image)
        print(json.dumps({"image": str(out), "shape": list(image.shape)}))
        return EXIT_OK
    if not (cfg.get("ckpt") and cfg.get("data") and cfg.get("utt")):
        raise UsageError("plot needs --wav, or --ckpt with --data and --utt")
    records = [r for r in read_manifest(_path(cfg, cfg["data"])) if r["id"] == cfg["utt"]]
    if not records:
        raise KeyError(f"utterance {cfg['utt']!r} not in manifest")
    utt = training.load_utterances(records)[0]
    model = training.load_enhancer(_path(cfg, cfg["ckpt"]))
    enhanced = training.enhance(model, [utt])[0]
    mags = [np.abs(stft(x).bins) for x in (utt.target, utt.mixture, enhanced)]
    ref = max(m.max() for m in mags)
    write_pgm(out, compose_panels([spectrogram_image(m, ref=ref) for m in mags]))
    holes = {
        name: hole_fraction(m, mags[0])
        for name, m in zip(("reverb_target", "mixture", "enhanced"), mags)
    }
    print(json.dumps({"image": str(out), "hole_fraction": holes}))
    return EXIT_OK


COMMANDS = {
    "synth-dataset": cmd_synth_dataset,
    "train": cmd_train,
    "enhance": cmd_enhance,
    "evaluate": cmd_evaluate,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = _resolve(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except (OSError, ValueError) as exc:
        return _fail(EXIT_DATA, "data", f"config: {exc}")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(max(1, int(cfg["threads"])))
    if cfg["deterministic"]:
        torch.use_deterministic_algorithms(True)
    try:
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except NUMERIC_ERRORS as exc:
        return _fail(EXIT_NUMERIC, "numerical", f"{type(exc).__name__}: {exc}")
    except DATA_ERRORS as exc:
        return _fail(EXIT_DATA, "data", f"{type(exc).__name__}: {exc}")
    except OSError as exc:
        return _fail(EXIT_DATA, "data", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
