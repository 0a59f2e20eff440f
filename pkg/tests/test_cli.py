import json
from types import SimpleNamespace

import numpy as np
import pytest

from glyphfill import cli
from glyphfill.imageio import load_rgb, save_mask, save_rgb

TINY = {
    "model": {"depth": 1, "dim": 16, "heads": 2, "patch": 4, "H": 32, "W": 32, "cma_hidden": 8},
    "train": {"steps": 5, "pretrain_steps": 5, "batch": 2},
    "data": {"n_amorphous": 3, "n_object": 2, "per_element": 2},
    "sample": {"steps": 3},
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    assert cli.main(["synth-data", "--config", str(cfg), "--out", str(root / "data"), "--workers", "1"]) == 0
    ck = root / "ck"
    assert cli.main(["train", "--config", str(cfg), "--kind", "amorphous", "--data", str(root / "data"), "--out", str(ck / "amorphous.ckpt")]) == 0
    base = ck / "amorphous.base.ckpt"
    assert cli.main(["train", "--config", str(cfg), "--kind", "edge", "--data", str(root / "data"), "--base", str(base), "--out", str(ck / "edge.ckpt")]) == 0
    rng = np.random.default_rng(0)
    save_rgb(root / "el.png", rng.random((32, 16, 3)))
    mask = np.zeros((32, 32))
    mask[6:26, 8:24] = 1
    save_mask(root / "mask.png", mask)
    return SimpleNamespace(root=root, cfg=cfg, ck=ck, base=base)


def gen_args(w, out, *extra):
    return ["generate", "--config", str(w.cfg), "--element", str(w.root / "el.png"), "--mask", str(w.root / "mask.png"),
            "--adapter", str(w.ck / "amorphous.ckpt"), "--out", str(out), *extra]


def test_synth_data_outputs(work, capsys):
    assert (work.root / "data" / "manifest.jsonl").exists()
    assert (work.root / "data" / "config.resolved.json").exists()
    lines = (work.root / "data" / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == (3 + 2) * 2


def test_train_outputs(work):
    for name in ("amorphous.ckpt", "amorphous.base.ckpt", "amorphous.loss.csv", "amorphous.config.json", "edge.ckpt"):
        assert (work.ck / name).exists(), name
    # reusing a base checkpoint writes no new base
    assert not (work.ck / "edge.base.ckpt").exists()


def test_generate_and_repaint(work):
    out = work.root / "g.png"
    assert cli.main(gen_args(work, out)) == 0
    assert load_rgb(out).shape == (32, 32, 3)
    out2 = work.root / "g2.png"
    assert cli.main(gen_args(work, out2, "--repaint", "--edge-adapter", str(work.ck / "edge.ckpt"))) == 0
    assert cli.main(gen_args(work, work.root / "g3.png", "--lambda", "0.3", "--seed", "4")) == 0


def test_mix(work):
    out = work.root / "m.png"
    args = ["mix", "--config", str(work.cfg), "--elements", f"{work.root / 'el.png'}:0.5", f"{work.root / 'el.png'}:0.5",
            "--regions", "0.5", "--mask", str(work.root / "mask.png"), "--adapter", str(work.ck / "amorphous.ckpt"), "--out", str(out)]
    assert cli.main(args) == 0
    assert load_rgb(out).shape == (32, 32, 3)


def test_eval(work, tmp_path):
    gen, ref = tmp_path / "gen", tmp_path / "ref"
    gen.mkdir()
    ref.mkdir()
    rng = np.random.default_rng(1)
    mask = np.zeros((32, 32))
    mask[6:26, 8:24] = 1
    for i in ("a", "b"):
        save_rgb(gen / f"{i}.png", rng.random((32, 32, 3)))
        save_rgb(ref / f"{i}_gt.png", rng.random((32, 32, 3)) * mask[..., None])
        save_mask(ref / f"{i}_mask.png", mask)
    out = tmp_path / "report.json"
    assert cli.main(["eval", "--gen", str(gen), "--ref", str(ref), "--out", str(out), "--patches", "16"]) == 0
    report = json.loads(out.read_text())
    assert set(report["samples"]) == {"a", "b"}
    assert set(report["aggregate"]) == {"patch_fd_same", "patch_fd_cross", "mask_iou", "cleanliness"}


# -- exit codes -------------------------------------------------------------


def test_config_errors_exit_2(work, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {"depthh": 1}}))
    assert cli.main(["synth-data", "--config", str(bad), "--out", str(tmp_path / "d")]) == 2
    bad.write_text("{not json")
    assert cli.main(["synth-data", "--config", str(bad), "--out", str(tmp_path / "d")]) == 2
    assert cli.main(gen_args(work, tmp_path / "x.png", "--lambda", "1.5")) == 2


def test_io_errors_exit_3(work, tmp_path):
    assert cli.main(["synth-data", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "d")]) == 3
    args = gen_args(work, tmp_path / "x.png")
    args[args.index("--adapter") + 1] = str(tmp_path / "nope.ckpt")
    assert cli.main(args) == 3
    (tmp_path / "gen").mkdir()
    assert cli.main(["eval", "--gen", str(tmp_path / "gen"), "--ref", str(tmp_path), "--out", str(tmp_path / "r.json")]) == 3


def test_mismatch_exit_4(work, tmp_path):
    assert cli.main(gen_args(work, tmp_path / "x.png", "--kind", "object")) == 4
    save_mask(tmp_path / "small.png", np.ones((16, 16)))
    args = gen_args(work, tmp_path / "x.png")
    args[args.index("--mask") + 1] = str(tmp_path / "small.png")
    assert cli.main(args) == 4
    args = gen_args(work, tmp_path / "x.png")
    args[args.index("--adapter") + 1] = str(work.ck / "edge.ckpt")
    assert cli.main(args) == 4


def test_gradcheck_exit_codes(monkeypatch, capsys):
    import glyphfill.verify as verify

    ok = SimpleNamespace(name="ok", passed=True, detail="fine")
    bad = SimpleNamespace(name="bad", passed=False, detail="off")
    monkeypatch.setattr(verify, "run_all", lambda: [ok])
    assert cli.main(["gradcheck"]) == 0
    monkeypatch.setattr(verify, "run_all", lambda: [ok, bad])
    assert cli.main(["gradcheck"]) == 5
    out = capsys.readouterr().out
    assert "PASS  ok" in out and "FAIL  bad" in out
