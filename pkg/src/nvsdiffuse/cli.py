"""Command-line entry point: ``nvs render|synth|ablate|smooth-path|metrics``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .dataset_io import (
    ABLATION_TOGGLES,
    SolverParams,
    load_camera_path,
    load_dataset,
    load_frames,
    load_ground_truth,
    load_params,
    load_poses,
    poses_to_json,
)
from .errors import NVSError
from .pipeline import ablate, compute_metrics, render_sequence, summarize, write_metrics_csv
from .pose_smoothing import TrajectoryProblem, keyframe_anchors, smooth_trajectory
from .synthetic import SceneSpec, generate_synthetic

logger = logging.getLogger("nvsdiffuse")

_PARAM_FLAGS = {
    "lambda_pc": "--lambda-pc",
    "lambda_t": "--lambda-t",
    "lambda_p": "--lambda-p",
    "lambda_g": "--lambda-g",
    "sigma": "--sigma",
    "n_views": "--views",
    "pyramid_levels": "--levels",
}


def _threads(args) -> int:
    env = os.environ.get("NVS_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"NVS_THREADS must be an integer, got {env!r}") from None
    else:
        n = args.threads
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    return n


def _dataset_params(root: Path, config) -> SolverParams:
    if config is not None:
        return load_params(config)
    if (root / "config.json").exists():
        return load_params(root / "config.json")
    return SolverParams()


def _write_figure(fn, *args):
    # figures are a convenience; a plotting failure must not fail the run
    try:
        from . import report

        path = getattr(report, fn)(*args)
        if path is not None:
            logger.info("wrote %s", path)
    except Exception as exc:  # noqa: BLE001
        logger.warning("could not write figure: %s", exc)


def cmd_render(args) -> int:
    root = Path(args.dataset)
    frameset, clouds = load_dataset(root)
    path = load_camera_path(args.path)
    params = _dataset_params(root, args.config)
    overrides = {k: getattr(args, k) for k in _PARAM_FLAGS if getattr(args, k) is not None}
    params = params.replace(**overrides)
    gt = load_ground_truth(root)
    if gt is not None and len(gt) < len(path):
        logger.warning("ground truth covers %d of %d frames; metrics without it", len(gt), len(path))
        gt = None
    out = Path(args.out)
    _, metrics = render_sequence(frameset, clouds, path, params, gt, out_dir=out, threads=_threads(args))
    _write_figure("plot_metrics", metrics, out / "metrics.png")
    for key, val in summarize(metrics).items():
        logger.info("mean %s: %.4f", key, val)
    return 0


def cmd_synth(args) -> int:
    spec = SceneSpec.load(args.spec) if args.spec else SceneSpec()
    generate_synthetic(spec, args.seed, args.out)
    logger.info("wrote synthetic dataset to %s", args.out)
    return 0


def cmd_ablate(args) -> int:
    root = Path(args.dataset)
    toggles = [t.strip() for t in args.toggles.split(",") if t.strip()]
    unknown = sorted(set(toggles) - set(ABLATION_TOGGLES))
    if unknown:
        raise ValueError(f"unknown toggles {unknown}; choose from {', '.join(ABLATION_TOGGLES)}")
    frameset, clouds = load_dataset(root)
    path = load_camera_path(args.path or root / "path" / "cameras.json")
    params = _dataset_params(root, args.config)
    gt = load_ground_truth(root)
    out = Path(args.out)
    results = ablate(frameset, clouds, path, params, toggles, gt, out_dir=out, threads=_threads(args))
    _write_figure("plot_ablation", results, out / "ablation.png")
    return 0


def cmd_smooth_path(args) -> int:
    poses = load_poses(args.input)
    if len(poses) < 2:
        raise ValueError(f"{args.input}: need at least two poses to smooth")
    problem = TrajectoryProblem(
        poses,
        keyframe_anchors(poses, args.kappa),
        window_sigma=args.sigma,
        data_weight=args.data_weight,
    )
    poses_to_json(smooth_trajectory(problem), args.output)
    return 0


def cmd_metrics(args) -> int:
    rendered = load_frames(args.rendered)
    gt = load_frames(args.gt)
    if not rendered:
        raise ValueError(f"{args.rendered}: no frame_*.png files")
    by_index = {f.time_index: f for f in gt}
    missing = [f.time_index for f in rendered if f.time_index not in by_index]
    if missing:
        raise ValueError(f"{args.gt}: no ground truth for frame {missing[0]}")
    metrics = compute_metrics(rendered, [by_index[f.time_index] for f in rendered])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out, metrics)
    _write_figure("plot_metrics", metrics, out.with_suffix(".png"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvs", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a virtual camera path")
    p.add_argument("--dataset", required=True)
    p.add_argument("--path", required=True, help="cameras.json of the virtual path")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="solver parameters (JSON); defaults to DATASET/config.json")
    for name, flag in _PARAM_FLAGS.items():
        kind = int if name in ("n_views", "pyramid_levels") else float
        p.add_argument(flag, dest=name, type=kind)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("synth", help="write a synthetic dataset with ground truth")
    p.add_argument("--spec", help="scene spec (JSON); defaults to the moving-box scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ablate", help="render once per ablation toggle")
    p.add_argument("--dataset", required=True)
    p.add_argument("--toggles", default=",".join(ABLATION_TOGGLES), help="comma-separated toggles")
    p.add_argument("--out", required=True)
    p.add_argument("--path", help="virtual path; defaults to DATASET/path/cameras.json")
    p.add_argument("--config")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("smooth-path", help="smooth a noisy camera trajectory")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--sigma", type=float, default=1.5, help="Gaussian window sigma in frames")
    p.add_argument("--kappa", type=int, default=20, help="anchor spacing in frames")
    p.add_argument("--data-weight", type=float, default=1.0)
    p.set_defaults(func=cmd_smooth_path)

    p = sub.add_parser("metrics", help="score rendered frames against ground truth")
    p.add_argument("--rendered", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True, help="CSV file")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (NVSError, OSError, ValueError) as exc:
        print(f"nvs {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
