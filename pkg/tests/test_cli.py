import json
import subprocess
import sys

import pytest

from saspa.cli import main
from saspa.manifest import read_manifest

from conftest import write_toy_dataset


@pytest.fixture
def toy(tmp_path):
    return write_toy_dataset(tmp_path / "toy", n=6)


def test_prompts_instruction(capsys):
    assert main(["prompts", "--meta-class", "Bird", "--instruction"]) == 0
    assert "Generate 100 prompts for the class Bird" in capsys.readouterr().out


def test_prompts_writes_pool(tmp_path, capsys):
    out = tmp_path / "pool.txt"
    assert main(["prompts", "--meta-class", "Car", "--artists", "default", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 100
    assert sum(", a painting of " in ln for ln in lines) == 50


def test_stage_by_stage(tmp_path, toy):
    out = tmp_path / "run"
    assert main(["edges", "--dataset", str(toy), "--out", str(out / "edges")]) == 0
    assert len(list((out / "edges").glob("*.edge.png"))) == 6
    manifest = out / "manifest.jsonl"
    assert main(["generate", "--dataset", str(toy), "--edges", str(out / "edges"), "--out", str(manifest)]) == 0
    assert len(read_manifest(manifest).records) == 12
    assert main(["filter", "--manifest", str(manifest), "--dataset", str(toy), "--scorer", "keep_all"]) == 0
    m = read_manifest(manifest)
    assert not m.pending() and len(m.kept_by_source()) == 6
    assert main(["train", "--dataset", str(toy), "--manifest", str(manifest), "--epochs", "3",
                 "--log", str(out / "log.jsonl")]) == 0
    assert len((out / "log.jsonl").read_text().splitlines()) == 3
    assert main(["metrics", "--dataset", str(toy), "--manifest", str(manifest), "--out", str(out / "m.json")]) == 0
    assert "fid" in json.loads((out / "m.json").read_text())


def test_run_and_report(tmp_path, toy, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(f"dataset: {toy}\noutput_dir: {tmp_path / 'out'}\npolicy:\n  epochs: 3\n")
    assert main(["run", "--config", str(cfg)]) == 0
    assert main(["run", "--config", str(cfg)]) == 0
    assert "skipped (up-to-date)" in capsys.readouterr().out
    for f in (tmp_path / "out" / "figures").glob("*.png"):
        f.unlink()
    assert main(["report", "--out-dir", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "figures" / "stage_counts.png").is_file()
    rows = (tmp_path / "out" / "stage_counts.csv").read_text().splitlines()
    assert rows[0] == "count,value" and rows[1] == "jobs,12"


def test_run_overrides(tmp_path, toy):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(f"dataset: {toy}\npolicy:\n  epochs: 2\n")
    assert main(["run", "--config", str(cfg), "--M", "1", "--out-dir", str(tmp_path / "o"),
                 "--set", "filter.k=1", "--set", "params.guidance_scale=5.0"]) == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["counts"]["jobs"] == 6 and report["filter_config"]["k"] == 1


def test_exit_codes(tmp_path, toy, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text(f"dataset: {toy}\nbackend:\n  name: gpu\n")
    assert main(["run", "--config", str(bad)]) == 1
    assert "unknown backend" in capsys.readouterr().err
    assert main(["report", "--out-dir", str(tmp_path)]) == 1
    with pytest.raises(SystemExit) as info:
        main(["generate"])
    assert info.value.code == 1
    # stage failure: backend unreachable
    down = tmp_path / "down.yaml"
    down.write_text(f"dataset: {toy}\noutput_dir: {tmp_path / 'd'}\nbackend:\n  name: wire\n  url: http://127.0.0.1:9\n")
    assert main(["run", "--config", str(down)]) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "saspa.cli", "prompts", "--meta-class", "Car", "--instruction"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "Car" in proc.stdout
