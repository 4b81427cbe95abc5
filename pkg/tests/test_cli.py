import json
import subprocess
import sys

import pytest

from sfsnid.cli import main

TINY = """[network]
base_channels = 4
sfii_blocks_per_stage = 1
[train]
image_size = 32
batch_size = 2
steps = 2
[data]
image_size = 32
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.ini").write_text(TINY)
    cfg = str(root / "tiny.ini")
    assert main(["synth", "--config", cfg, "--seed", "3", "--out", str(root / "data")]) == 0
    assert main(["train", "--config", cfg, "--seed", "3", "--manifest", str(root / "data/manifest.json"),
                 "--out", str(root / "s1")]) == 0
    return root


def test_pipeline_commands(workspace, capsys):
    w = workspace
    ck = str(w / "s1/checkpoint.ckpt")
    assert main(["pseudo", "--checkpoint", ck, "--manifest", str(w / "data/manifest.json"), "--out", str(w / "ps")]) == 0
    assert main(["retrain", "--config", str(w / "tiny.ini"), "--checkpoint", ck,
                 "--manifest", str(w / "ps/manifest.json"), "--out", str(w / "s2")]) == 0
    assert main(["infer", "--checkpoint", str(w / "s2/checkpoint.ckpt"), "--input", str(w / "data/real/hazy"),
                 "--out", str(w / "inf")]) == 0
    assert len(list((w / "inf").glob("*.png"))) == 2
    assert main(["infer", "--checkpoint", ck, "--input", str(w / "data/real/hazy/0000.png"),
                 "--out", str(w / "one.png")]) == 0
    assert (w / "one.png").exists()
    assert main(["eval", "--checkpoint", ck, "--manifest", str(w / "data/manifest.json"), "--out", str(w / "ev.json")]) == 0
    doc = json.loads((w / "ev.json").read_text())
    assert doc["split"] == "synthetic" and len(doc["records"]) == 4
    assert main(["spectrum", "--input", str(w / "data/real/hazy/0000.png"), "--out", str(w / "spec")]) == 0
    assert len(list((w / "spec").glob("*.png"))) == 6


def test_errors_give_nonzero_exit(workspace, capsys):
    bad = workspace / "bad.ini"
    bad.write_text("[train]\nnope = 1\n")
    assert main(["synth", "--config", str(bad), "--out", str(workspace / "x")]) == 2
    assert "nope" in capsys.readouterr().err
    fresh_dir = workspace / "fresh"
    assert main(["retrain", "--checkpoint", str(workspace / "missing.ckpt"), "--manifest", "m.json",
                 "--out", str(fresh_dir)]) == 2


def test_gradcheck_command(tmp_path):
    assert main(["gradcheck", "--out", str(tmp_path / "g.txt")]) == 0
    assert "covered" in (tmp_path / "g.txt").read_text()


def test_console_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "sfsnid.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("synth", "train", "pseudo", "retrain", "infer", "eval", "gradcheck"):
        assert cmd in out.stdout
