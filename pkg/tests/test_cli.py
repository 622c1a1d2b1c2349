"""End-to-end CLI coverage on a deliberately tiny configuration."""

import numpy as np
import pytest

from rayproxy.cli import main
from rayproxy.optics import paraxial_efl
from rayproxy.prescription import load_prescription

TINY = """
extent=12.0
cells_per_side=3
rays_per_cell=32
seed=7
split_fraction=0.7
hidden_width=8
hidden_layers=3
epochs=4
batch_size=64
novel_count=500
"""


@pytest.fixture()
def tiny_cfg(tmp_path):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY)
    return cfg


def run(*argv):
    return main([str(a) for a in argv])


def test_design_writes_valid_prescription(tmp_path):
    assert run("design", "--focal", 60, "--aperture", 50.6, "--out-dir", tmp_path) == 0
    system = load_prescription(tmp_path / "prescription.txt")
    assert paraxial_efl(system) == pytest.approx(60.0, abs=0.06)


def test_design_missing_required_flag_exits_2(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run("design", "--aperture", 50.6, "--out-dir", tmp_path)
    assert exc.value.code == 2


def test_design_infeasible_exits_2(tmp_path):
    assert run("design", "--focal", 60, "--aperture", 200, "--out-dir", tmp_path) == 2


def test_full_pipeline_emits_all_artifacts(tmp_path, tiny_cfg):
    common = ("--config", tiny_cfg, "--out-dir", tmp_path)
    assert run("design", "--focal", 60, "--aperture", 50.6, *common) == 0
    assert run("gen", *common) == 0
    assert (tmp_path / "dataset.bin").exists()
    assert (tmp_path / "dataset.bin.report.txt").exists()
    assert run("train", *common) == 0
    assert (tmp_path / "checkpoint.bin").exists()
    assert (tmp_path / "checkpoint.final.bin").exists()
    assert (tmp_path / "history.csv").exists()
    assert run("eval", *common) == 0
    reports = (tmp_path / "eval_reports.csv").read_text().splitlines()
    assert reports[0].startswith("condition,n_rays,")
    assert reports[1].startswith("unseen_grid_cell,")
    assert reports[2].startswith("novel_ray_pattern,")
    assert run("bench", "--batch-sizes", "50,100", "--repeats", "1", *common) == 0
    bench_lines = (tmp_path / "bench.csv").read_text().splitlines()
    assert len(bench_lines) == 1 + 2 * 2
    assert run("plot", "--rays", "64", *common) == 0
    assert (tmp_path / "spot.svg").exists()
    assert (tmp_path / "spot.csv").exists()


def test_eval_before_train_exits_1(tmp_path, tiny_cfg, capsys):
    common = ("--config", tiny_cfg, "--out-dir", tmp_path)
    assert run("design", "--focal", 60, "--aperture", 50.6, *common) == 0
    assert run("gen", *common) == 0
    assert run("eval", *common) == 1
    assert "checkpoint not found" in capsys.readouterr().err


def test_seeded_reruns_are_byte_identical(tmp_path, tiny_cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        common = ("--config", tiny_cfg, "--out-dir", d, "--seed", 7)
        assert run("design", "--focal", 60, "--aperture", 50.6, *common) == 0
        assert run("gen", *common) == 0
        assert run("train", *common) == 0
    assert (a / "dataset.bin").read_bytes() == (b / "dataset.bin").read_bytes()
    assert (a / "checkpoint.bin").read_bytes() == (b / "checkpoint.bin").read_bytes()


def test_unknown_config_key_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("sneaky=1\n")
    assert run("gen", "--config", bad, "--out-dir", tmp_path) == 2
    assert "unknown config key" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert run("gen", "--config", tmp_path / "nope.cfg", "--out-dir", tmp_path) == 2


def test_gen_without_prescription_exits_1(tmp_path, tiny_cfg):
    assert run("gen", "--config", tiny_cfg, "--out-dir", tmp_path) == 1


def test_flag_overrides_config(tmp_path, tiny_cfg):
    common = ("--config", tiny_cfg, "--out-dir", tmp_path)
    assert run("design", "--focal", 60, "--aperture", 50.6, *common) == 0
    assert run("gen", "--rays-per-cell", "16", *common) == 0
    report = (tmp_path / "dataset.bin.report.txt").read_text()
    assert "rays_per_cell=16" in report
