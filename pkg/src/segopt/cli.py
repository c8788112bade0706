"""Command-line front-end: synth, segment, optimize, bench, convert."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import formats
from .bench import Scenario, run_bench, world_config
from .errors import InvalidArgument, ParseError, SegoptError
from .formats import Trajectory
from .graph import BaProblem
from .pipeline import METHODS, STAGES, finite_values, run_method
from .segmentation import STRATEGIES, SegmentationParams, segment_trajectory, write_labels
from .solver import SolverConfig
from .synth import SHAPES, generate

log = logging.getLogger("segopt")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
TRAJ_FORMATS = ("tum", "kitti")


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _load_yaml(path) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise UsageError(f"{path}: invalid YAML: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a mapping")
    return data


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text)


# ---------------------------------------------------------------------------
# shared option groups
# ---------------------------------------------------------------------------

_SEG_FLAGS = {
    "sigma_v": ("--sigma-v", float, "velocity deviation threshold (default: adaptive)"),
    "sigma_r": ("--sigma-r", float, "reprojection error threshold in pixels (default: adaptive)"),
    "alpha": ("--alpha", float, "velocity weight of the buffer exit score"),
    "eta_threshold": ("--eta-threshold", float, "buffer exit threshold"),
    "head_len": ("--head-len", int, "head frames per segment"),
    "tail_len": ("--tail-len", int, "tail frames per segment"),
    "min_segment_len": ("--min-segment-len", int, "shortest allowed segment"),
    "covis_threshold": ("--covis-threshold", int, "shared landmarks for connecting frames"),
    "num_segments": ("--num-segments", int, "segment count for the fixed-length strategy"),
}

_SOLVER_FLAGS = {
    "max_iterations": ("--max-iterations", int, "LM iteration cap"),
    "cost_rel_tolerance": ("--cost-tolerance", float, "relative cost decrease to stop at"),
    "initial_lambda": ("--lambda", float, "initial LM damping"),
    "robust_kernel": ("--robust", str, "robust kernel: none or huber"),
    "huber_delta": ("--huber-delta", float, "Huber threshold"),
}


def _add_seg_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("segmentation")
    for key, (flag, typ, help_) in _SEG_FLAGS.items():
        g.add_argument(flag, dest=key, type=typ, default=None, help=help_)
    g.add_argument("--strategy", choices=STRATEGIES, default=None, help="segmentation strategy")
    g.add_argument("--no-buffer", dest="use_buffer", action="store_false", default=None,
                   help="let segments abut without buffer regions")


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("solver")
    for key, (flag, typ, help_) in _SOLVER_FLAGS.items():
        g.add_argument(flag, dest=key, type=typ, default=None, help=help_)


def _seg_params(args, cfg: dict) -> SegmentationParams:
    d = dict(cfg.get("segmentation") or {})
    for key in list(_SEG_FLAGS) + ["strategy", "use_buffer"]:
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    if "alpha" in d and "beta" not in d:
        d["beta"] = 1.0 - d["alpha"]
    try:
        return SegmentationParams(**d)
    except TypeError as exc:
        raise UsageError(f"bad segmentation config: {exc}") from None


def _solver_config(args, cfg: dict) -> SolverConfig:
    d = dict(cfg.get("solver") or {})
    for key in _SOLVER_FLAGS:
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    try:
        return SolverConfig(**d)
    except TypeError as exc:
        raise UsageError(f"bad solver config: {exc}") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _load_yaml(args.config)
    world_spec = dict(cfg.get("world", cfg))
    for key in ("frames", "shape", "speed", "rate", "landmarks_per_frame", "pixel_std", "odom_rot_std",
                "odom_trans_std", "loops", "events"):
        v = getattr(args, key)
        if v is not None:
            world_spec[key] = v
    wc = world_config(world_spec, args.seed)
    world = generate(wc)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "graph": out / f"{args.prefix}.g2o",
        "ground_truth": out / f"{args.prefix}_gt.tum",
        "config": out / f"{args.prefix}_config.yaml",
    }
    formats.write_graph(world.problem, paths["graph"])
    formats.write_trajectory(Trajectory(world.timestamps, world.gt_poses), paths["ground_truth"], "tum")
    paths["config"].write_text(yaml.safe_dump({"world": wc.to_dict()}, sort_keys=True))
    p = world.problem
    payload = {
        "config": wc.to_dict(),
        "files": {k: str(v) for k, v in paths.items()},
        "frames": len(p.frames),
        "landmarks": len(p.landmark_ids),
        "observations": len(p.obs_frame),
        "edges": len(p.edges),
    }
    _emit(args, payload, "\n".join(f"wrote {v}" for v in paths.values()))
    return EXIT_OK


def cmd_segment(args) -> int:
    cfg = _load_yaml(args.config)
    params = _seg_params(args, cfg)
    problem = formats.read_graph(args.graph)
    result = segment_trajectory(problem, params)
    labels = Path(args.out) if args.out else Path(args.graph).with_suffix(".labels")
    write_labels(result, labels)
    summary = result.summary()
    summary["labels_file"] = str(labels)
    summary = finite_values(summary)
    text = (f"{summary['segment_count']} segments, {summary['buffer_count']} buffers, "
            f"kept {summary['kept_fraction_pose_graph']:.1%} (pose graph) / "
            f"{summary['kept_fraction_ba']:.1%} (BA); labels in {labels}")
    _emit(args, summary, text)
    return EXIT_OK


def cmd_optimize(args) -> int:
    cfg = _load_yaml(args.config)
    method = args.method or cfg.get("method", "segmented")
    stage = args.stage or cfg.get("stage", "pose-graph")
    params = _seg_params(args, cfg)
    solver = _solver_config(args, cfg)
    problem = formats.read_graph(args.graph)
    gt = formats.read_trajectory(args.gt, args.gt_format) if args.gt else None
    res = run_method(problem, method, solver, params, gt, stage=stage)
    out = Path(args.out) if args.out else Path(args.graph).with_name(
        f"{Path(args.graph).stem}_{method}.{args.format}")
    formats.write_trajectory(Trajectory(problem.timestamps, res.poses), out, args.format)
    if args.out_graph:
        if isinstance(problem, BaProblem):
            formats.write_graph(problem.with_state(res.poses, res.landmarks), args.out_graph)
        else:
            formats.write_graph(problem.with_poses(res.poses), args.out_graph)
    report = res.report.to_dict()
    report["trajectory_file"] = str(out)
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    t = report["timings"]
    ate = "n/a" if report["ate_rmse"] is None else f"{report['ate_rmse']:.6g} m"
    text = (f"{method} ({stage}): solve {t['solve']:.3f} s, total {t['total']:.3f} s, ATE {ate}; "
            f"trajectory in {out}")
    _emit(args, report, text)
    return EXIT_OK


def cmd_bench(args) -> int:
    data = _load_yaml(args.scenario)
    scenario = Scenario.from_dict(data)
    result = run_bench(scenario, args.jobs, args.seed)
    if args.out:
        base = Path(args.out)
        base.parent.mkdir(parents=True, exist_ok=True)
        base.with_suffix(".json").write_text(result.to_json() + "\n")
        base.with_suffix(".csv").write_text(result.to_csv())
    lines = [f"{m:15s} ATE {_fmt(v['ate_rmse'])}  solve {_fmt(v['solve_time'])} s  total {_fmt(v['total_time'])} s"
             for m, v in result.medians.items()]
    _emit(args, result.to_dict(), "\n".join(["median per method:"] + lines))
    return EXIT_OK


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.6g}"


def _infer_format(path: str, explicit: str | None) -> str:
    if explicit:
        return explicit
    suffix = Path(path).suffix.lower()
    if suffix == ".g2o":
        return "g2o"
    if suffix in (".kitti",):
        return "kitti"
    if suffix in (".tum", ".txt"):
        return "tum"
    raise UsageError(f"cannot infer the format of {path}; pass --from/--to")


def cmd_convert(args) -> int:
    src = _infer_format(args.input, args.src_format)
    dst = _infer_format(args.output, args.dst_format)
    if dst == "g2o" and src != "g2o":
        raise UsageError("a trajectory cannot be converted to a graph file")
    if src == "g2o":
        problem = formats.read_graph(args.input)
        if dst == "g2o":
            formats.write_graph(problem, args.output)
            count = len(problem.frames)
        else:
            traj = Trajectory(problem.timestamps, problem.poses)
            formats.write_trajectory(traj, args.output, dst)
            count = len(traj)
    else:
        traj = formats.read_trajectory(args.input, src)
        formats.write_trajectory(traj, args.output, dst)
        count = len(traj)
    _emit(args, {"input": args.input, "output": args.output, "from": src, "to": dst, "records": count},
          f"converted {count} poses {src} -> {dst}: {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    def d(value):
        return argparse.SUPPRESS if suppress else value

    p.add_argument("--seed", type=_nonneg_int, default=d(None), help="world seed override")
    p.add_argument("--jobs", type=_positive_int, default=d(1), help="parallel benchmark runs")
    p.add_argument("--json", action="store_true", default=d(False), help="print machine-readable JSON")
    p.add_argument("--trace", action="store_true", default=d(False), help="debug logging and tracebacks")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="segopt", description="Segment-based trajectory optimisation toolkit.")
    _add_global_flags(p, suppress=False)
    # the global flags are also accepted after the subcommand name
    common = argparse.ArgumentParser(add_help=False)
    _add_global_flags(common, suppress=True)
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    _orig = sub.add_parser
    sub.add_parser = lambda *a, **k: _orig(*a, parents=[common], **k)

    s = sub.add_parser("synth", help="generate a synthetic world")
    s.add_argument("--config", help="YAML world config")
    s.add_argument("--shape", choices=SHAPES, default=None)
    s.add_argument("--frames", type=_positive_int, default=None)
    s.add_argument("--speed", type=float, default=None, help="m/s")
    s.add_argument("--rate", type=float, default=None, help="frames per second")
    s.add_argument("--landmarks-per-frame", dest="landmarks_per_frame", type=_nonneg_int, default=None)
    s.add_argument("--pixel-noise", dest="pixel_std", type=float, default=None, help="pixels")
    s.add_argument("--odom-rot-noise", dest="odom_rot_std", type=float, default=None, help="rad per edge")
    s.add_argument("--odom-trans-noise", dest="odom_trans_std", type=float, default=None, help="m per edge")
    s.add_argument("--loops", type=_nonneg_int, default=None, help="loop closures at the path's closing point")
    s.add_argument("--events", type=_nonneg_int, default=None, help="evenly spaced injected events")
    s.add_argument("--out-dir", default=".", help="output directory")
    s.add_argument("--prefix", default="world", help="output file prefix")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("segment", help="label frames of a graph file")
    s.add_argument("graph")
    s.add_argument("--config", help="YAML config with a 'segmentation' section")
    s.add_argument("--out", help="labels file (default: <graph>.labels)")
    _add_seg_flags(s)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("optimize", help="optimise a graph file")
    s.add_argument("graph")
    s.add_argument("--method", choices=list(METHODS), default=None, help="default: segmented")
    s.add_argument("--stage", choices=STAGES, default=None, help="default: pose-graph")
    s.add_argument("--config", help="YAML config with 'segmentation' and 'solver' sections")
    s.add_argument("--gt", help="ground-truth trajectory for the ATE")
    s.add_argument("--gt-format", choices=TRAJ_FORMATS, default="tum")
    s.add_argument("--out", help="output trajectory")
    s.add_argument("--format", choices=TRAJ_FORMATS, default="tum", help="output trajectory format")
    s.add_argument("--out-graph", help="also write the optimised problem as a graph file")
    s.add_argument("--report", help="write the run report as JSON")
    _add_seg_flags(s)
    _add_solver_flags(s)
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("bench", help="run a benchmark scenario")
    s.add_argument("scenario", help="YAML scenario file")
    s.add_argument("--out", help="output path stem; writes .json and .csv")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("convert", help="convert between graph and trajectory formats")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--from", dest="src_format", choices=("g2o",) + TRAJ_FORMATS, default=None)
    s.add_argument("--to", dest="dst_format", choices=("g2o",) + TRAJ_FORMATS, default=None)
    s.set_defaults(func=cmd_convert)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.trace else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ParseError, InvalidArgument) as exc:
        if args.trace:
            log.exception("usage error")
        print(f"segopt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SegoptError as exc:
        if args.trace:
            log.exception("runtime failure")
        print(f"segopt: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"segopt: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
