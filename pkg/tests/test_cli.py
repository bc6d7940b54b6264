import json
from dataclasses import asdict

import numpy as np
import pytest

from dlpl import cli
from dlpl import tensor as T
from dlpl.config import RunConfig
from dlpl.harness import load_dataset

from conftest import TINY


@pytest.fixture
def data_file(tmp_path):
    path = tmp_path / "d.bin"
    assert cli.main(["gen-data", "--out", str(path), "--n-train", "8", "--n-test", "4",
                     "--img-size", "16", "--num-classes", "3"]) == 0
    return path


@pytest.fixture
def config_file(tmp_path, data_file):
    cfg = RunConfig(**TINY, data=str(data_file), out_dir=str(tmp_path / "run"))
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(asdict(cfg)))
    return path


def test_gen_data_defaults(tmp_path):
    path = tmp_path / "full.bin"
    assert cli.main(["gen-data", "--out", str(path)]) == 0
    ds = load_dataset(path)
    assert (ds.split == 0).sum() == 2000 and (ds.split == 1).sum() == 500


def test_gen_data_seed_is_deterministic(tmp_path):
    files = []
    for name in ("a.bin", "b.bin"):
        files.append(tmp_path / name)
        assert cli.main(["gen-data", "--out", str(files[-1]), "--seed", "7", "--n-train", "3",
                         "--n-test", "2", "--img-size", "16"]) == 0
    assert files[0].read_bytes() == files[1].read_bytes()


@pytest.mark.parametrize("flags", [["--warp-train", "2.0"], ["--warp-test", "x"], ["--n-train", "-1"]])
def test_gen_data_bad_flags(tmp_path, flags):
    assert cli.main(["gen-data", "--out", str(tmp_path / "x.bin")] + flags) == 2


def test_train_dlpl_and_baseline_csvs_match(tmp_path, config_file, capsys):
    assert cli.main(["train", "--config", str(config_file), "--out-dir", str(tmp_path / "d")]) == 0
    assert cli.main(["train", "--config", str(config_file), "--out-dir", str(tmp_path / "b"),
                     "--baseline"]) == 0
    heads = [(tmp_path / n / "history.csv").read_text().splitlines()[0] for n in ("d", "b")]
    assert heads[0] == heads[1] == "epoch,task_loss,rec_loss,total,train_miou,test_miou,mode"
    meta = json.loads((tmp_path / "b" / "run.json").read_text())
    assert meta["status"] == "ok" and meta["config"]["baseline"] is True


def test_flags_override_config(tmp_path, config_file):
    assert cli.main(["train", "--config", str(config_file), "--out-dir", str(tmp_path / "o"),
                     "--epochs", "1", "--seed", "3"]) == 0
    saved = json.loads((tmp_path / "o" / "config.json").read_text())
    assert saved["epochs"] == 1 and saved["seed"] == 3 and saved["embed_dim"] == TINY["embed_dim"]
    assert len((tmp_path / "o" / "history.csv").read_text().splitlines()) == 2


def test_train_missing_dataset(tmp_path, config_file):
    assert cli.main(["train", "--config", str(config_file), "--data", str(tmp_path / "nope.bin")]) == 1


def test_train_unknown_config_key(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"nonsense": 1}')
    assert cli.main(["train", "--config", str(bad)]) == 2


def test_train_divergence_exit_code(tmp_path, config_file, monkeypatch):
    real = T.cross_entropy
    calls = {"n": 0}

    def poisoned(logits, labels):
        calls["n"] += 1
        out = real(logits, labels)
        if calls["n"] == 3:
            out.data = np.array(np.inf)
        return out
    monkeypatch.setattr(T, "cross_entropy", poisoned)
    out = tmp_path / "div"
    assert cli.main(["train", "--config", str(config_file), "--out-dir", str(out)]) == 3
    meta = json.loads((out / "run.json").read_text())
    assert meta["status"] == "diverged" and meta["step"] == 2
    # epoch 0 finished before the bad step, so its checkpoint survives
    assert (out / "checkpoint.bin").exists()


def test_verify_single_suite(capsys):
    assert cli.main(["verify", "--suite", "pht"]) == 0
    out = capsys.readouterr().out
    assert "suite pht: PASS" in out and "suite grad" not in out


def test_verify_unknown_suite():
    assert cli.main(["verify", "--suite", "nope"]) == 2


def test_verify_names_the_broken_op(monkeypatch, capsys):
    from scipy.special import erf

    def broken_gelu(x):
        cdf = 0.5 * (1.0 + erf(x.data / np.sqrt(2.0)))
        return T._make("gelu", x.data * cdf, (x,), lambda g: (g * cdf,))    # drops the x*pdf term
    monkeypatch.setattr(T, "gelu", broken_gelu)
    assert cli.main(["verify", "--suite", "grad"]) == 1
    lines = capsys.readouterr().out.splitlines()
    assert any(line.startswith("FAIL grad:gelu ") for line in lines)
    assert "suite grad: FAIL" in lines[-2]
    assert not any(line.startswith("FAIL grad:add ") for line in lines)


@pytest.fixture
def trained(tmp_path, config_file):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(config_file), "--out-dir", str(out)]) == 0
    return out


def test_inspect_writes_maps_and_entropy(tmp_path, trained, capsys):
    dest = tmp_path / "maps"
    assert cli.main(["inspect", "--checkpoint", str(trained / "checkpoint.bin"), "--sample-index", "1",
                     "--out-dir", str(dest)]) == 0
    assert len(list(dest.glob("*.pgm"))) == TINY["num_blocks"] * 3
    line = [l for l in capsys.readouterr().out.splitlines() if l.startswith("stats ")][0]
    assert "mode=transformed" in line
    for i in range(TINY["num_blocks"]):
        assert f"block{i}_entropy=" in line
    stats = json.loads((dest / "stats.json").read_text())
    assert all(e >= 0 for e in stats["responsibility_entropy"])


def test_inspect_bad_index_and_checkpoint(tmp_path, trained):
    ckpt = str(trained / "checkpoint.bin")
    assert cli.main(["inspect", "--checkpoint", ckpt, "--sample-index", "99",
                     "--out-dir", str(tmp_path / "m")]) == 2
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"garbage")
    (tmp_path / "config.json").write_text((trained / "config.json").read_text())
    assert cli.main(["inspect", "--checkpoint", str(junk), "--out-dir", str(tmp_path / "m")]) == 1
    assert cli.main(["inspect", "--checkpoint", str(tmp_path / "missing.bin")]) == 1


def test_no_command_is_usage_error():
    assert cli.main([]) == 2
