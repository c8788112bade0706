"""Benchmark scenarios: several methods over seeded worlds or a graph file."""

from __future__ import annotations

import csv
import io
import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .errors import InvalidArgument
from .formats import read_graph, read_trajectory
from .pipeline import METHODS, STAGES, get_method, run_method
from .segmentation import SegmentationParams
from .solver import SolverConfig
from .synth import WorldConfig, default_loops, generate, spread_events

BENCH_COLUMNS = (
    "method", "seed", "repetition", "stage", "frames", "ate_rmse", "solve_time", "total_time",
    "segmentation_time", "reduction_time", "global_solve_time", "interpolation_time", "landmark_update_time",
    "segment_count", "buffer_fraction", "kept_fraction", "cost_before", "cost_after",
    "iterations", "dropped_loop_edges", "dropped_observations", "monotone",
)
MEDIAN_KEYS = ("ate_rmse", "solve_time", "total_time", "interpolation_time")


def world_config(spec: dict, seed: int | None = None) -> WorldConfig:
    """World config from a mapping; ``loops`` and ``events`` may be counts."""
    d = dict(spec)
    frames = int(d.get("frames", WorldConfig.frames))
    loops = d.pop("loops", None)
    if loops is not None:
        if "loop_closures" in d:
            raise InvalidArgument("give either 'loops' or 'loop_closures', not both")
        d["loop_closures"] = default_loops(frames, int(loops)) if isinstance(loops, int) else loops
    events = d.get("events")
    if isinstance(events, int):
        d["events"] = spread_events(frames, events)
    if seed is not None:
        d["seed"] = seed
    return WorldConfig.from_dict(d)


@dataclass
class Scenario:
    methods: list[str]
    repetitions: int = 1
    stage: str = "pose-graph"
    world: dict | None = None
    seeds: list[int] | None = None
    graph: str | None = None
    gt: str | None = None
    solver: dict = field(default_factory=dict)
    segmentation: dict = field(default_factory=dict)
    name: str = "bench"

    def __post_init__(self):
        if not self.methods:
            raise InvalidArgument("scenario lists no methods")
        for m in self.methods:
            get_method(m)
        if self.repetitions < 1:
            raise InvalidArgument("repetitions must be >= 1")
        if self.stage not in STAGES:
            raise InvalidArgument(f"unknown stage {self.stage!r}; choose from {', '.join(STAGES)}")
        if (self.world is None) == (self.graph is None):
            raise InvalidArgument("scenario needs exactly one of 'world' or 'graph'")
        SolverConfig(**self.solver)
        SegmentationParams(**self.segmentation)

    @classmethod
    def from_dict(cls, d: dict) -> Scenario:
        if not isinstance(d, dict):
            raise InvalidArgument("scenario must be a mapping")
        known = {"methods", "repetitions", "stage", "world", "seeds", "graph", "gt", "solver", "segmentation",
                 "name"}
        unknown = set(d) - known
        if unknown:
            raise InvalidArgument(f"unknown scenario keys: {', '.join(sorted(unknown))}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidArgument(str(exc)) from None

    def world_seeds(self, override: int | None = None) -> list[int]:
        if override is not None:
            return [override]
        if self.seeds:
            return [int(s) for s in self.seeds]
        return [int((self.world or {}).get("seed", 0))]


@dataclass
class BenchResult:
    scenario: Scenario
    rows: list[dict]
    medians: dict[str, dict]

    def to_dict(self) -> dict:
        return {"name": self.scenario.name, "stage": self.scenario.stage, "methods": list(self.scenario.methods),
                "rows": self.rows, "medians": self.medians}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=BENCH_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.rows:
            w.writerow(row)
        return buf.getvalue()


def _row(report, seed, rep) -> dict:
    d = report.to_dict()
    t, seg = d["timings"], d["segmentation"]
    return {
        "method": report.method,
        "seed": seed,
        "repetition": rep,
        "stage": report.stage,
        "frames": report.frames,
        "ate_rmse": d["ate_rmse"],
        "solve_time": t["solve"],
        "total_time": t["total"],
        "segmentation_time": t["segmentation"],
        "reduction_time": t["reduction"],
        "global_solve_time": t["global_solve"],
        "interpolation_time": t["interpolation"],
        "landmark_update_time": t["landmark_update"],
        "segment_count": seg.get("segment_count", 0),
        "buffer_fraction": seg.get("buffer_fraction", 0.0),
        "kept_fraction": seg.get("kept_fraction_pose_graph" if report.stage == "pose-graph" else "kept_fraction_ba",
                                 1.0),
        "cost_before": sum(d["cost_before"].values()),
        "cost_after": sum(d["cost_after"].values()),
        "iterations": sum(d["iterations"].values()),
        "dropped_loop_edges": report.dropped_loop_edges,
        "dropped_observations": report.dropped_observations,
        "monotone": report.monotone,
    }


def _task(args):
    problem, gt, method, stage, solver, segmentation, seed, rep = args
    res = run_method(problem, method, SolverConfig(**solver), SegmentationParams(**segmentation), gt, stage=stage)
    return _row(res.report, seed, rep)


def _inputs(scenario: Scenario, seed_override: int | None):
    if scenario.graph is not None:
        problem = read_graph(scenario.graph)
        gt = read_trajectory(scenario.gt) if scenario.gt else None
        return [(None, problem, gt)]
    out = []
    for seed in scenario.world_seeds(seed_override):
        world = generate(world_config(scenario.world, seed))
        out.append((seed, world.problem, world.gt_poses))
    return out


def run_bench(scenario: Scenario, jobs: int = 1, seed: int | None = None) -> BenchResult:
    """One row per (method, seed, repetition), ordered by method then seed then repetition."""
    if jobs < 1:
        raise InvalidArgument("jobs must be >= 1")
    tasks = []
    for s, problem, gt in _inputs(scenario, seed):
        for method in scenario.methods:
            for rep in range(scenario.repetitions):
                tasks.append((problem, gt, method, scenario.stage, scenario.solver, scenario.segmentation, s, rep))
    if jobs == 1:
        rows = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_task, tasks))
    order = {m: k for k, m in enumerate(scenario.methods)}
    rows.sort(key=lambda r: (order[r["method"]], -1 if r["seed"] is None else r["seed"], r["repetition"]))
    medians = {}
    for method in scenario.methods:
        mine = [r for r in rows if r["method"] == method]
        medians[method] = {
            k: (statistics.median([r[k] for r in mine]) if all(r[k] is not None for r in mine) else None)
            for k in MEDIAN_KEYS
        }
    return BenchResult(scenario, rows, medians)


def registered_methods() -> list[str]:
    return list(METHODS)
