"""``mcreg`` command-line tool."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .cloud import cloud_from_image, predict_image, read_ply
from .config import ConfigError, load_config
from .datasets import (kitti_sequence, load_frame, read_guesses, tum_sequence)
from .geometry import Isometry
from .imaging import build_pyramid, render_error_image, write_gray
from .odometry import run_odometry
from .projection import ProjectionModel
from .solver import register
from .trajectory import read_trajectory, relative_pose_error, write_trajectory

log = logging.getLogger("mcreg")


def _row_major(X: Isometry) -> list:
    return [float(x) for x in X.matrix()[:3].ravel()]


def _parse_guess(text: str) -> Isometry:
    vals = [float(x) for x in text.replace(",", " ").split()]
    if len(vals) != 12:
        raise ValueError(f"--guess needs 12 numbers, got {len(vals)}")
    return Isometry.from_matrix(np.array(vals))


def _image_kw(cfg) -> dict:
    return {"discontinuity": cfg.discontinuity,
            "normal_discontinuity_deg": cfg.normal_discontinuity_deg}


def cmd_register(args) -> int:
    cfg = load_config(args.config)
    proj = cfg.projector
    target = load_frame(args.target, proj, **_image_kw(cfg))
    pyr = build_pyramid(target.image, proj, cfg.solver.n_levels)
    if Path(args.model).suffix.lower() == ".ply":
        model = read_ply(args.model)
        finest_model = model
    else:
        src = load_frame(args.model, proj, **_image_kw(cfg))
        mp = build_pyramid(src.image, proj, cfg.solver.n_levels)
        model = [cloud_from_image(img, p) for img, p in mp.levels]
        finest_model = model[-1]
    X0 = _parse_guess(args.guess) if args.guess else Isometry.identity()
    X, stats = register(model, pyr, X0, cfg.solver)
    for rec in stats.to_records():
        print(json.dumps(rec))
    print(json.dumps({"transform": _row_major(X), "converged": stats.converged,
                      "failure": stats.failure, "level_exit": stats.level_exit}))
    if args.error_image_out:
        out = Path(args.error_image_out)
        out.mkdir(parents=True, exist_ok=True)
        img, p = pyr.finest
        pred = predict_image(finest_model, X, p, cfg.kinds)
        for kind in cfg.kinds:
            write_gray(out / f"error_{kind.value}.png", render_error_image(img, pred, kind))
    return 0 if stats.converged else 1


def cmd_odometry(args) -> int:
    cfg = load_config(args.config)
    proj = cfg.projector
    kw = _image_kw(cfg)
    if args.dataset == "tum":
        if proj.model is not ProjectionModel.PINHOLE:
            raise ConfigError("the tum dataset needs [projector] model = pinhole")
        frames = tum_sequence(args.path, proj, cfg.max_dt, **kw)
    else:
        if proj.model is not ProjectionModel.SPHERICAL:
            raise ConfigError("the kitti dataset needs [projector] model = spherical")
        frames = kitti_sequence(args.path, proj, args.limit, **kw)
    guesses = read_guesses(cfg.guess_file) if cfg.guess_file else None
    stats_file = open(args.stats_out, "w") if args.stats_out else None

    def on_pair(res):
        its = res.stats.iterations
        log.info("frame %d: %s, %d iterations", res.index,
                 "FAILED" if res.failed else "ok", len(its))
        if stats_file is not None:
            stats_file.write(json.dumps({
                "frame": res.index, "timestamp": res.timestamp, "failed": res.failed,
                "failure": res.stats.failure, "transform": _row_major(res.relative),
                "level_exit": res.stats.level_exit, "iterations": res.stats.to_records(),
            }) + "\n")
            stats_file.flush()

    try:
        traj = run_odometry(frames, cfg.solver, guesses, on_pair)
    finally:
        if stats_file is not None:
            stats_file.close()
    write_trajectory(traj, args.out)
    n_failed = int(traj.flags.sum())
    print(json.dumps({"frames": len(traj), "failed": n_failed}))
    return 0


def cmd_eval_rpe(args) -> int:
    est = read_trajectory(args.est)
    gt = read_trajectory(args.gt)
    t, r = relative_pose_error(est, gt, args.delta)
    print(f"rmse_trans {t:.6f}")
    print(f"rmse_rot {r:.6f}")
    return 0


def cmd_synth_bench(args) -> int:
    from .synthetic import SCENES, bench_problem, run_trials

    cfg = load_config(args.config)
    problem = bench_problem(SCENES[args.scene](), cfg.projector, cfg.solver.n_levels)
    fields = ["trial", "success", "trans_err", "rot_err_deg", "iterations", "converged", "seconds"]
    n_ok = 0
    with open(args.out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        for row in run_trials(problem, cfg.solver, args.trials, args.perturb_trans,
                              args.perturb_rot, args.seed):
            w.writerow(row)
            n_ok += row["success"]
    print(json.dumps({"scene": args.scene, "trials": args.trials, "successes": n_ok,
                      "success_rate": n_ok / max(args.trials, 1)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mcreg", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="register a model against a target frame")
    p.add_argument("--model", required=True,
                   help="model frame (rgb.png,depth.png | scan.bin | frame.npz) or cloud.ply")
    p.add_argument("--target", required=True, help="target frame")
    p.add_argument("--config", required=True)
    p.add_argument("--guess", help="initial transform, 12 row-major floats of a 3x4 matrix")
    p.add_argument("--error-image-out", help="directory for per-channel error images")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("odometry", help="frame-to-frame odometry over a dataset")
    p.add_argument("--dataset", required=True, choices=("tum", "kitti"))
    p.add_argument("--path", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stats-out")
    p.add_argument("--limit", type=int, help="use only the first N scans (kitti)")
    p.set_defaults(func=cmd_odometry)

    p = sub.add_parser("eval-rpe", help="relative pose error of a trajectory")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--delta", type=float, required=True)
    p.set_defaults(func=cmd_eval_rpe)

    p = sub.add_parser("synth-bench", help="convergence trials on a synthetic scene")
    p.add_argument("--scene", required=True, choices=("room", "plane", "corridor"))
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--perturb-trans", type=float, required=True)
    p.add_argument("--perturb-rot", type=float, required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"mcreg: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
