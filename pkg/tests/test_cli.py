from __future__ import annotations

import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from mcreg.cli import main
from mcreg.datasets import Frame, save_frame
from mcreg.geometry import Isometry, v2t
from mcreg.synthetic import pose_error, render, room_scene
from mcreg.trajectory import Trajectory, read_trajectory, write_trajectory
from mcreg.projection import pinhole

CONFIG = """
[projector]
model = pinhole
fx = 100
fy = 100
cx = 63.5
cy = 47.5
width = 128
height = 96

[solver]
levels = 2
min_inliers = 50
"""


@pytest.fixture()
def setup(tmp_path):
    (tmp_path / "c.cfg").write_text(CONFIG)
    proj = pinhole(fx=100, fy=100, cx=63.5, cy=47.5, width=128, height=96)
    return tmp_path, proj


def row_major(X):
    return " ".join(f"{x:.12g}" for x in X.matrix()[:3].ravel())


def test_register_command(setup, capsys):
    tmp, proj = setup
    X_gt = v2t([0.02, -0.01, 0.03, 0.01, 0.02, -0.01])
    save_frame(Frame(0.0, render(room_scene(), Isometry.identity(), proj), proj), tmp / "a.npz")
    save_frame(Frame(0.1, render(room_scene(), X_gt, proj), proj), tmp / "b.npz")
    code = main(["register", "--model", str(tmp / "a.npz"), "--target", str(tmp / "b.npz"),
                 "--config", str(tmp / "c.cfg"), "--error-image-out", str(tmp / "err")])
    lines = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert code == 0
    final = lines[-1]
    assert final["converged"] and len(final["transform"]) == 12
    X = Isometry.from_matrix(np.array(final["transform"]))
    assert pose_error(X, X_gt)[0] < 2e-3
    assert {"level", "chi2_total", "inlier_count", "normalized_chi2"} <= set(lines[0])
    for kind in ("intensity", "depth", "normal"):
        with Image.open(tmp / "err" / f"error_{kind}.png") as im:
            assert im.size == (128, 96)


def test_register_with_guess(setup, capsys):
    tmp, proj = setup
    save_frame(Frame(0.0, render(room_scene(), Isometry.identity(), proj), proj), tmp / "a.npz")
    code = main(["register", "--model", str(tmp / "a.npz"), "--target", str(tmp / "a.npz"),
                 "--config", str(tmp / "c.cfg"), "--guess", row_major(Isometry.identity())])
    assert code == 0
    bad = main(["register", "--model", str(tmp / "a.npz"), "--target", str(tmp / "a.npz"),
                "--config", str(tmp / "c.cfg"), "--guess", "1 2 3"])
    assert bad == 2


def write_tum_dir(path, proj, poses):
    path.mkdir()
    rgb_lines, depth_lines, gt_lines = [], [], []
    for k, X in enumerate(poses):
        img = render(room_scene(), X, proj, normals=None)
        gray = np.nan_to_num(img.data["intensity"]) * 255
        Image.fromarray(np.round(gray).astype(np.uint8)).save(path / f"rgb{k}.png")
        raw = np.round(np.nan_to_num(img.data["depth"]) * 5000).astype(np.uint16)
        Image.fromarray(raw).save(path / f"depth{k}.png")
        rgb_lines.append(f"{k * 0.1:.6f} rgb{k}.png")
        depth_lines.append(f"{k * 0.1 + 0.004:.6f} depth{k}.png")
    (path / "rgb.txt").write_text("\n".join(rgb_lines) + "\n")
    (path / "depth.txt").write_text("\n".join(depth_lines) + "\n")
    gt = Trajectory(np.arange(len(poses)) * 0.1, [X.inverse() for X in poses])
    write_trajectory(gt, path / "groundtruth.txt")


def test_odometry_and_eval_commands(setup, capsys):
    tmp, proj = setup
    poses = [v2t([0.01 * k, 0.0, 0.005 * k, 0.0, 0.004 * k, 0.0]) for k in range(4)]
    write_tum_dir(tmp / "seq", proj, poses)
    out, stats = tmp / "traj.txt", tmp / "stats.jsonl"
    code = main(["odometry", "--dataset", "tum", "--path", str(tmp / "seq"), "--config",
                 str(tmp / "c.cfg"), "--out", str(out), "--stats-out", str(stats)])
    assert code == 0
    assert json.loads(capsys.readouterr().out.splitlines()[-1]) == {"frames": 4, "failed": 0}
    traj = read_trajectory(out)
    assert len(traj) == 4 and len(stats.read_text().splitlines()) == 3
    assert pose_error(traj.poses[3], poses[3].inverse())[0] < 0.01
    code = main(["eval-rpe", "--est", str(out), "--gt", str(tmp / "seq" / "groundtruth.txt"),
                 "--delta", "0.1"])
    lines = capsys.readouterr().out.splitlines()
    assert code == 0 and lines[0].startswith("rmse_trans ") and lines[1].startswith("rmse_rot ")
    assert float(lines[0].split()[1]) < 0.05


def test_odometry_wrong_model(setup, capsys):
    tmp, _ = setup
    code = main(["odometry", "--dataset", "kitti", "--path", str(tmp), "--config",
                 str(tmp / "c.cfg"), "--out", str(tmp / "t.txt")])
    assert code == 2


def test_synth_bench_command(setup, capsys):
    tmp, _ = setup
    out = tmp / "bench.csv"
    code = main(["synth-bench", "--scene", "room", "--trials", "3", "--perturb-trans", "0.05",
                 "--perturb-rot", "2", "--config", str(tmp / "c.cfg"), "--out", str(out)])
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 3
    assert set(rows[0]) == {"trial", "success", "trans_err", "rot_err_deg", "iterations",
                            "converged", "seconds"}
    summary = json.loads(capsys.readouterr().out)
    assert summary["trials"] == 3 and summary["successes"] == sum(
        r["success"] == "True" for r in rows)


def test_bad_config_exit_code(setup, capsys):
    tmp, _ = setup
    (tmp / "bad.cfg").write_text("[solver]\nbogus = 1\n")
    code = main(["synth-bench", "--scene", "room", "--trials", "1", "--perturb-trans", "0.1",
                 "--perturb-rot", "1", "--config", str(tmp / "bad.cfg"), "--out", str(tmp / "o")])
    assert code == 2
    assert "bogus" in capsys.readouterr().err


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "mcreg.cli", "--help"], capture_output=True,
                         text=True, check=True)
    for cmd in ("register", "odometry", "eval-rpe", "synth-bench"):
        assert cmd in res.stdout
