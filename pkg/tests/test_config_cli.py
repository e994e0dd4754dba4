import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from dynavo.cli import main, thread_cap
from dynavo.config import ConfigError, PipelineConfig, dump_config, load_config
from dynavo.dataset_io import read_trajectory
from dynavo.pipeline import CSV_COLUMNS, run_scene
from dynavo.synth import default_intrinsics, make_scenario


# ---------------------------------------------------------------- config

def test_defaults():
    cfg = load_config()
    assert cfg.th_differ == 0.3 and cfg.mu == 2.0 and cfg.lam == 0.5 and cfg.ref_pool_size == 3
    assert (cfg.w_mc, cfg.w_dc, cfg.w_dec) == (0.4, 0.3, 0.3)
    assert (cfg.th_f, cfg.th_fmax, cfg.th_s, cfg.th_smin) == (30.0, 120.0, 0.5, 0.3)


def test_file_and_overrides(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# gating\nth_differ = 0.45   # stricter\n\nmax_iters = 12\n")
    cfg = load_config(p, mu=1.0)
    assert cfg.th_differ == 0.45 and cfg.max_iters == 12 and isinstance(cfg.max_iters, int) and cfg.mu == 1.0


@pytest.mark.parametrize("text, match", [
    ("th_diffr = 0.4\n", "unknown key"),
    ("mu = 1\nmu = 2\n", "duplicate"),
    ("max_iters = 2.5\n", "max_iters"),
    ("th_differ 0.4\n", "key = value"),
    ("th_differ = 1.4\n", "th_differ"),
    ("w_conf = 0.9\n", "sum to 1"),
    ("th_static = 0.7\n", "th_static"),
])
def test_bad_config_files(tmp_path, text, match):
    p = tmp_path / "c.cfg"
    p.write_text(text)
    with pytest.raises(ConfigError, match=match):
        load_config(p)


def test_dump_round_trip(tmp_path):
    cfg = load_config(th_differ=0.41, fx=500.0, width=320)
    p = tmp_path / "c.cfg"
    p.write_text(dump_config(cfg))
    assert load_config(p) == cfg


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="missing"):
        load_config(tmp_path / "nope.cfg")


def test_thread_cap():
    assert thread_cap({}) is None
    assert thread_cap({"DYNAVO_THREADS": "2"}) == 2
    for bad in ("0", "-1", "two"):
        with pytest.raises(ValueError):
            thread_cap({"DYNAVO_THREADS": bad})


# ---------------------------------------------------------------- pipeline

def test_static_sequence_all_good():
    res = run_scene(make_scenario("static", 40, K=default_intrinsics(8)), load_config())
    s = res.summary
    assert s["frames"] == 40 and s["BAD"] == 0 and s["GOOD"] == 40 - s["init"]
    assert s["Feature"] == 40
    assert [r["frame_index"] for r in res.rows] == list(range(40))
    for r in res.rows:
        for k in ("s_conf", "s_spatial", "s_feature", "s_depth", "s_total"):
            assert 0.0 <= r[k] <= 1.0


# ---------------------------------------------------------------- CLI

@pytest.fixture(scope="module")
def synth_seq(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "seq"
    assert main(["synth", "dynamic_object", "--out", str(out), "--frames", "36", "--scale", "8"]) == 0
    return out


def _run(seq, out):
    return main(["run", "--seq", str(seq), "--out", str(out), "--log-level", "error"])


def test_synth_layout(synth_seq):
    for name in ("rgb.txt", "depth.txt", "groundtruth.txt", "detections.jsonl", "camera.txt"):
        assert (synth_seq / name).exists()


def test_run_outputs_and_determinism(synth_seq, tmp_path):
    assert _run(synth_seq, tmp_path / "a") == 0
    assert _run(synth_seq, tmp_path / "b") == 0
    for name in ("trajectory.txt", "decisions.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    traj = read_trajectory(tmp_path / "a" / "trajectory.txt")
    assert len(traj) == 36
    with open(tmp_path / "a" / "decisions.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [float(r["timestamp"]) for r in rows] == sorted(float(r["timestamp"]) for r in rows)
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["frames"] == 36 and summary["GOOD"] + summary["BAD"] + summary["init"] == 36


def test_eval_self_is_zero(synth_seq, tmp_path):
    gt = synth_seq / "groundtruth.txt"
    assert main(["eval", str(gt), str(gt), "--out", str(tmp_path)]) == 0
    with open(tmp_path / "metrics.csv") as fh:
        row = next(csv.DictReader(fh))
    assert all(float(row[k]) == 0.0 for k in ("ate_rmse", "ate_std", "t_rpe_rmse", "rot_rpe_rmse"))
    assert (tmp_path / "trajectory.svg").exists()


def test_eval_mismatched_ranges_exit_3(synth_seq, tmp_path):
    shifted = tmp_path / "shifted.txt"
    lines = []
    for line in (synth_seq / "groundtruth.txt").read_text().splitlines():
        if line and not line.startswith("#"):
            t, rest = line.split(" ", 1)
            lines.append(f"{float(t) + 50:.6f} {rest}")
    shifted.write_text("\n".join(lines) + "\n")
    assert main(["eval", str(shifted), str(synth_seq / "groundtruth.txt"), "--out", str(tmp_path / "m")]) == 3


def test_run_missing_index_exit_2(tmp_path, capsys):
    assert _run(tmp_path, tmp_path / "out") == 2
    assert "rgb.txt" in capsys.readouterr().err


def test_run_bad_config_exit_2(synth_seq, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("bogus = 1\n")
    assert main(["run", "--seq", str(synth_seq), "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 2


def test_synth_unknown_scenario_exit_2(tmp_path, capsys):
    assert main(["synth", "volcano", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "static" in err and "fast_roll" in err


def test_invalid_thread_env_exit_2(tmp_path):
    env = dict(os.environ, DYNAVO_THREADS="zero")
    proc = subprocess.run([sys.executable, "-m", "dynavo", "synth", "static", "--out", str(tmp_path),
                           "--frames", "2", "--scale", "8"], env=env, capture_output=True, text=True)
    assert proc.returncode == 2 and "DYNAVO_THREADS" in proc.stderr


def test_thread_env_applied(tmp_path):
    env = dict(os.environ, DYNAVO_THREADS="1")
    env.pop("OMP_NUM_THREADS", None)
    code = "import os, dynavo.cli; print(os.environ['OMP_NUM_THREADS'])"
    proc = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert proc.stdout.strip() == "1"
