import json

import numpy as np
import pytest
import torch

from distortionless import cli, training as T
from distortionless.config import read_config
from distortionless.corpus import read_manifest
from distortionless.masks import read_pgm
from distortionless.tensorio import file_hash

TINY = "tcn.bottleneck = 8\ntcn.hidden = 16\ntcn.blocks = 1\ntcn.repeats = 1\n"


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err):
    line = err.strip().splitlines()[-1]
    return json.loads(line)


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text("epochs = 3\nbatch_size = 4\n" + TINY)
    return path


def test_unknown_regime_lists_choices(capsys, toy_data, tmp_path):
    code, _, err = run(capsys, "train", "--regime", "sept-3", "--data", toy_data, "--out", tmp_path)
    assert code == 2
    msg = error_of(err)
    assert msg["error"] == "usage" and msg["code"] == 2
    for name in ("base", "sept-1", "sept-2", "am", "joint", "joint-frozen"):
        assert f"'{name}'" in msg["message"]


def test_synth_dataset(capsys, tmp_path):
    args = ["synth-dataset", "--n-train", 3, "--n-valid", 2, "--n-test", 2, "--seed", 5]
    code, out, _ = run(capsys, *args, "--out", tmp_path / "a")
    assert code == 0
    resolved = json.loads(out.splitlines()[0])["resolved_config"]
    assert resolved["seed"] == 5 and resolved["n_train"] == 3
    assert (tmp_path / "a" / "resolved_config.txt").exists()
    run(capsys, *args, "--out", tmp_path / "b")
    for split in ("train", "valid", "test"):
        a = (tmp_path / "a" / f"{split}.jsonl").read_bytes()
        assert a == (tmp_path / "b" / f"{split}.jsonl").read_bytes()
    recs = read_manifest(tmp_path / "a" / "train.jsonl")
    assert all(r["sir_db"] in (-6, 0, 6) for r in recs)


def test_synth_dataset_small_corpus(capsys, tmp_path):
    (tmp_path / "corpus" / "spk").mkdir(parents=True)
    code, _, err = run(capsys, "synth-dataset", "--out", tmp_path / "o",
                       "--source-corpus", tmp_path / "corpus")
    assert code == 3 and "too small" in error_of(err)["message"]


def test_flags_override_config(capsys, toy_data, tmp_path, tiny_config):
    code, out, _ = run(capsys, "train", "--regime", "sept-1", "--data", toy_data,
                       "--out", tmp_path / "run", "--config", tiny_config, "--epochs", 1)
    assert code == 0
    resolved = json.loads(out.splitlines()[0])["resolved_config"]
    assert resolved["epochs"] == 1 and resolved["batch_size"] == 4
    assert resolved["resolved_regime.tcn.bottleneck"] == 8
    saved = read_config(tmp_path / "run" / "resolved_config.txt")
    assert saved["epochs"] == 1 and saved["tcn.hidden"] == 16
    log = (tmp_path / "run" / "train_log.jsonl").read_text().splitlines()
    assert len(log) == 1


def test_deterministic_reruns_are_bit_identical(capsys, toy_data, tmp_path, tiny_config):
    hashes = []
    for name in ("a", "b"):
        code, _, _ = run(capsys, "train", "--regime", "sept-2", "--data", toy_data,
                         "--out", tmp_path / name, "--config", tiny_config, "--deterministic",
                         "--seed", 3, "--epochs", 1)
        assert code == 0
        hashes.append(file_hash(tmp_path / name / "enhancer.ckpt"))
    assert hashes[0] == hashes[1]


@pytest.fixture
def enhancer_ckpt(tmp_path):
    model = T.Enhancer(T.TcnConfig(bottleneck=8, hidden=16, blocks=1, repeats=1))
    path = tmp_path / "enh.ckpt"
    T.save_enhancer(path, model)
    return path


def test_enhance_and_evaluate(capsys, toy_data, tmp_path, enhancer_ckpt):
    code, out, _ = run(capsys, "enhance", "--enh-ckpt", enhancer_ckpt,
                       "--data", toy_data / "test.jsonl", "--out", tmp_path / "enh")
    assert code == 0
    assert len(read_manifest(tmp_path / "enh" / "enhanced.jsonl")) == 3

    report = tmp_path / "rep" / "mix.jsonl"
    code, out, _ = run(capsys, "evaluate", "--data", toy_data / "test.jsonl", "--report", report)
    assert code == 0
    rows = [json.loads(line) for line in report.read_text().splitlines()]
    assert len(rows) == 3
    summary = json.loads(report.with_suffix(".summary.json").read_text())
    assert set(summary) == {
        "all", "sir=-6", "sir=0", "sir=6",
        "angle=0-15", "angle=15-45", "angle=45-90", "angle=90-180",
    }
    assert summary["all"]["si_snr_improvement"] == 0.0


def test_evaluate_errors(capsys, toy_data, tmp_path, enhancer_ckpt):
    code, _, err = run(capsys, "evaluate", "--data", toy_data / "test.jsonl", "--cer",
                       "--report", tmp_path / "r.jsonl")
    assert code == 2 and "am-ckpt" in error_of(err)["message"]
    code, _, err = run(capsys, "evaluate", "--data", tmp_path / "missing.jsonl",
                       "--report", tmp_path / "r.jsonl")
    assert code == 3 and error_of(err)["error"] == "data"
    code, _, err = run(capsys, "evaluate", "--data", toy_data / "test.jsonl",
                       "--enh-ckpt", toy_data / "test.jsonl", "--report", tmp_path / "r.jsonl")
    assert code == 3


def test_joint_needs_checkpoints(capsys, toy_data, tmp_path, enhancer_ckpt):
    code, _, err = run(capsys, "train", "--regime", "joint", "--data", toy_data,
                       "--out", tmp_path, "--init-ckpt", enhancer_ckpt)
    assert code == 3 and "am-ckpt" in error_of(err)["message"]


def test_am_regime(capsys, toy_data, tmp_path):
    code, _, _ = run(capsys, "train", "--regime", "am", "--data", toy_data, "--out", tmp_path,
                     "--epochs", 1, "--am-conditions", "clean,reverb",
                     "--config", _write(tmp_path / "am.cfg", "cldnn.lstm_units = 16\n"))
    assert code == 0
    am = T.load_am(tmp_path / "am.ckpt")
    assert am.cfg.lstm_units == 16
    code, _, err = run(capsys, "train", "--regime", "am", "--data", toy_data, "--out", tmp_path,
                       "--epochs", 1, "--am-conditions", "clean,enhanced")
    assert code == 3 and "enh-ckpt" in error_of(err)["message"]


def _write(path, text):
    path.write_text(text)
    return path


def test_numerical_failure_exit_code(capsys, toy_data, tmp_path):
    model = T.Enhancer(T.TcnConfig(bottleneck=8, hidden=16, blocks=1, repeats=1))
    with torch.no_grad():
        model.mask_net.head.bias.fill_(float("nan"))
    T.save_enhancer(tmp_path / "nan.ckpt", model)
    code, _, err = run(capsys, "train", "--regime", "sept-1", "--data", toy_data,
                       "--out", tmp_path / "o", "--init-ckpt", tmp_path / "nan.ckpt", "--epochs", 1)
    assert code == 4 and error_of(err)["error"] == "numerical"


def test_plot(capsys, toy_data, tmp_path, enhancer_ckpt):
    rec = read_manifest(toy_data / "test.jsonl")[0]
    code, _, _ = run(capsys, "plot", "--wav", toy_data / rec["clean_wav"], "--out", tmp_path / "a.pgm")
    assert code == 0
    img = read_pgm(tmp_path / "a.pgm")
    frames = (32000 - 512) // 256 + 1
    assert img.shape == (257 + 8, frames + 8)

    code, out, _ = run(capsys, "plot", "--ckpt", enhancer_ckpt, "--data", toy_data / "test.jsonl",
                       "--utt", rec["id"], "--out", tmp_path / "t.pgm")
    assert code == 0
    holes = json.loads(out.splitlines()[-1])["hole_fraction"]
    assert holes["reverb_target"] == 0.0 and set(holes) == {"reverb_target", "mixture", "enhanced"}
    assert read_pgm(tmp_path / "t.pgm").shape == (257 + 8, 3 * frames + 2 * 8 + 8)

    code, _, err = run(capsys, "plot", "--wav", tmp_path / "nope.wav", "--out", tmp_path / "x.pgm")
    assert code == 3
    code, _, err = run(capsys, "plot", "--out", tmp_path / "x.pgm")
    assert code == 2


def test_silent_plot_is_uniform(capsys, tmp_path):
    from distortionless.dsp import write_wav

    write_wav(tmp_path / "s.wav", np.zeros(4000))
    assert run(capsys, "plot", "--wav", tmp_path / "s.wav", "--out", tmp_path / "s.pgm")[0] == 0
    img = read_pgm(tmp_path / "s.pgm")
    assert len(np.unique(img[4:-4, 8:-8])) == 1
