import json
import subprocess
import sys

import pytest

from flashsplit.cli import main

TINY = {
    "scene": {"size": 32, "n_scenes": 10},
    "codec": {"widths": [8, 16, 16], "batch": 2, "stats_images": 8},
    "diffusion": {"width": 8},
    "trainer": {"batch": 2, "crop": 32, "pool_size": 8, "stage2_samples": 4, "log_every": 1},
    "eval": {"n_samples": 2, "steps": 3},
    "warp": {"sweep_scenes": 2, "sweep_magnitudes": [0, 4]},
}


def _cfg(tmp_path, **extra):
    d = json.loads(json.dumps(TINY))
    d["paths"] = {"run_dir": str(tmp_path / "run"), "out_dir": str(tmp_path / "out"),
                  "data_dir": str(tmp_path / "data")}
    for k, v in extra.items():
        d.setdefault(k, {}).update(v)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(d))
    return str(p)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = _cfg(tmp)
    assert main(["train", "all", "--config", cfg, "--steps", "3"]) == 0
    return tmp, cfg


def test_gen_data_deterministic(tmp_path):
    cfg = _cfg(tmp_path)
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    a = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(a) >= 10 * 7 + 1
    for name in a:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["counts"] == {"train": 8, "val": 1, "test": 1}


def test_eval_without_checkpoints_runs_baselines(tmp_path, capsys):
    cfg = _cfg(tmp_path)
    assert main(["eval", "--config", cfg]) == 0
    err = capsys.readouterr().err
    assert "omitting" in err and "flash_split" in err
    text = (tmp_path / "out" / "metrics.csv").read_text()
    assert "prealign_diff" in text and "flash_split" not in text


def test_sweep_without_checkpoints(tmp_path):
    cfg = _cfg(tmp_path)
    assert main(["sweep", "--config", cfg]) == 0
    lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 2


def test_exit_codes(tmp_path):
    cfg = _cfg(tmp_path)
    assert main(["infer", "--config", cfg, "--pair", "a.png", "b.png"]) == 3
    assert main(["train", "stage1", "--config", cfg]) == 3
    bad = _cfg(tmp_path, scene={"gamma_range": [0.5, 3.0]})
    assert main(["gen-data", "--config", bad]) == 2
    (tmp_path / "broken.json").write_text("{")
    assert main(["eval", "--config", str(tmp_path / "broken.json")]) == 2
    assert main(["infer", "--config", cfg]) == 2
    with pytest.raises(SystemExit) as e:
        main(["train", "nothing"])
    assert e.value.code == 2


def test_mode_mismatch(trained):
    tmp, cfg = trained
    assert main(["eval", "--config", cfg, "--tonemapped"]) == 4


def test_infer_outputs_and_provenance(trained, tmp_path):
    tmp, cfg = trained
    assert main(["gen-data", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
    side = sorted((tmp_path / "d").glob("s*.json"))[0]
    outs = []
    for k in ("o1", "o2"):
        assert main(["infer", "--config", cfg, str(side), "--out", str(tmp_path / k), "--seed", "5"]) == 0
        outs.append(tmp_path / k / side.stem)
    for name in ("transmission.png", "reflection.png", "provenance.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    prov = json.loads((outs[0] / "provenance.json").read_text())
    assert prov["seed"] == 5 and prov["mode"] == "linear" and prov["steps"] == 3
    assert set(prov["checkpoints"]) == {"codec", "stage1", "stage2"}
    assert all(len(v) == 64 for v in prov["checkpoints"].values())


def test_eval_with_checkpoints(trained, tmp_path):
    tmp, cfg = trained
    assert main(["eval", "--config", cfg, "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert {"flash_split", "flash_split_vanilla_decode"} <= set(summary["methods"])
    assert "flash_split_single_image" not in summary["methods"]


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "flashsplit.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "gen-data" in r.stdout
