import json

import numpy as np
import pytest

from onenet import cli
from onenet.data import read_mask, toy_sample, write_image

TINY = ["--variant", "onenet_ed", "--layers", "1", "--base-channels", "4", "--num-classes", "3"]


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_analyze_reports_published_reduction(capsys):
    code, out, err = run(capsys, "analyze", "--variant", "onenet_ed", "--layers", "4",
                         "--baseline", "unet_baseline")
    assert code == 0
    assert "70.8%" in out and "31.04" in out and "9.08" in out
    assert err.startswith("# resolved config") and "variant=onenet_ed" in err


def test_analyze_json_is_clean_and_ordered(capsys):
    code, out, _ = run(capsys, "analyze", "--variant", "onenet_e", "--layers", "4",
                       "--baseline", "unet_baseline", "--json")
    assert code == 0
    doc = json.loads(out)
    assert list(doc[0]) == ["name", "params", "param_mb", "macs", "gflops", "reduction_pct"]
    assert doc[0]["reduction_pct"] == pytest.approx(47.2, abs=0.1)


def test_analyze_same_variant_baseline(capsys):
    code, out, _ = run(capsys, "analyze", "--layers", "2", "--baseline", "onenet_ed", "--json")
    assert code == 0
    names = [r["name"] for r in json.loads(out)]
    assert names == ["onenet_ed_2", "onenet_ed_2_ref"]


@pytest.mark.parametrize("argv", [
    ["analyze", "--layers", "0"],
    ["analyze", "--set", "colour=blue"],
    ["analyze", "--set", "layers=four"],
    ["analyze", "--set", "novalue"],
    ["analyze", "--baseline", "resnet"],
    ["analyze", "--input-size", "100"],
    ["analyze", "--config", "/nonexistent/cfg"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_2(capsys, argv):
    assert cli.main(argv) == cli.EXIT_USAGE


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nvariant = onenet_e\nlayers=3\nbase_channels=8  # inline\n")
    code, _, err = run(capsys, "analyze", "--config", str(cfg), "--layers", "2",
                       "--set", "layers=1", "--input-size", "64")
    assert code == 0
    assert "variant=onenet_e" in err and "layers=1" in err and "base_channels=8" in err
    cfg.write_text("this line is not a pair\n")
    assert cli.main(["analyze", "--config", str(cfg)]) == cli.EXIT_USAGE


def test_parse_config_text():
    assert cli.parse_config_text("a=1\n\n# x\nb = two = 2\n") == {"a": "1", "b": "two = 2"}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    out = d / "net.otsr"
    code = cli.main(["train", *TINY, "--epochs", "2", "--lr", "3e-3", "--batch-size", "8",
                     "--set", "image_size=16", "--set", "train_samples=16",
                     "--set", "eval_samples=8", "--out", str(out), "--quiet"])
    assert code == 0
    img, _ = toy_sample(16, 16, 3, np.random.default_rng(9))
    write_image(d / "img.ppm", img)
    return d, out


def test_train_writes_artifacts(trained):
    d, out = trained
    assert out.exists() and (d / "net.csv").exists()
    assert "variant=onenet_ed" in (d / "net.otsr.cfg").read_text()
    assert len((d / "net.csv").read_text().splitlines()) == 3


def test_infer_is_deterministic(trained, capsys):
    d, out = trained
    masks = []
    for name in ("a.pgm", "b.pgm"):
        code, text, _ = run(capsys, "infer", *TINY, "--weights", str(out), "--image",
                            str(d / "img.ppm"), "--out", str(d / name))
        assert code == 0 and "8x8" in text
        masks.append(read_mask(d / name))
    assert np.array_equal(*masks) and masks[0].max() < 3


def test_infer_integrity_errors(trained, tmp_path, capsys):
    d, out = trained
    img = str(d / "img.ppm")
    # different config: hash mismatch
    assert cli.main(["infer", *TINY, "--set", "base_channels=8", "--weights", str(out),
                     "--image", img, "--out", str(tmp_path / "m.pgm")]) == cli.EXIT_INTEGRITY
    blob = bytearray(out.read_bytes())
    blob[len(blob) // 2] ^= 0x40
    bad = tmp_path / "bad.otsr"
    bad.write_bytes(bytes(blob))
    assert cli.main(["infer", *TINY, "--weights", str(bad), "--image", img,
                     "--out", str(tmp_path / "m.pgm")]) == cli.EXIT_INTEGRITY
    assert cli.main(["infer", *TINY, "--weights", str(out), "--image", str(tmp_path / "none.ppm"),
                     "--out", str(tmp_path / "m.pgm")]) == cli.EXIT_USAGE
    assert cli.main(["infer", *TINY, "--weights", str(tmp_path / "none.otsr"), "--image", img,
                     "--out", str(tmp_path / "m.pgm")]) == cli.EXIT_USAGE


def test_train_from_pnm_directory(tmp_path, capsys):
    from onenet.data import export_pnm_dataset, generate_toy_dataset
    export_pnm_dataset(tmp_path / "data", generate_toy_dataset(4, 16, 16, 3, seed=0, batch_size=4))
    code, out, _ = run(capsys, "train", *TINY, "--epochs", "1", "--data-dir", str(tmp_path / "data"),
                       "--out", str(tmp_path / "w.otsr"))
    assert code == 0 and "epoch    0" in out
    assert cli.main(["train", *TINY, "--epochs", "1", "--data-dir", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "w.otsr")]) == cli.EXIT_USAGE


def test_thread_limit_env(monkeypatch, capsys):
    monkeypatch.setenv("ONENET_THREADS", "1")
    assert cli.main(["analyze", "--layers", "1", "--input-size", "16"]) == 0
    monkeypatch.setenv("ONENET_THREADS", "many")
    assert cli.main(["analyze", "--layers", "1", "--input-size", "16"]) == cli.EXIT_USAGE
