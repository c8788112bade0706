import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from segopt.bench import BENCH_COLUMNS
from segopt.cli import main
from segopt.formats import read_labels, read_trajectory, write_graph

from helpers import chain_graph, straight_poses

FIXTURES = Path(__file__).parent / "fixtures"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    d = tmp_path_factory.mktemp("world")
    assert main(["synth", "--shape", "figure-eight", "--frames", "160", "--loops", "2", "--events", "2",
                 "--seed", "5", "--out-dir", str(d)]) == 0
    return d


def test_synth_writes_three_files_and_echoes_flags(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "--shape", "circle", "--frames", 100, "--seed", 7, "--out-dir", tmp_path,
                       "--json")
    assert code == 0
    payload = json.loads(out)
    assert payload["config"]["shape"] == "circle"
    assert payload["config"]["frames"] == 100
    assert payload["config"]["seed"] == 7
    assert payload["frames"] == 100
    for path in payload["files"].values():
        assert Path(path).is_file()
    assert sorted(p.name for p in tmp_path.iterdir()) == ["world.g2o", "world_config.yaml", "world_gt.tum"]
    assert len(read_trajectory(tmp_path / "world_gt.tum")) == 100


def test_global_flags_accepted_before_or_after_subcommand(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "--seed", 3, "synth", "--frames", 30, "--out-dir", a)[0] == 0
    assert run(capsys, "synth", "--frames", 30, "--seed", 3, "--out-dir", b)[0] == 0
    assert (a / "world.g2o").read_bytes() == (b / "world.g2o").read_bytes()


def test_synth_is_byte_identical_for_a_seed(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(capsys, "synth", "--frames", 60, "--events", 1, "--loops", 1, "--seed", 11,
                   "--out-dir", tmp_path / d)[0] == 0
    for name in ("world.g2o", "world_gt.tum", "world_config.yaml"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synth_config_file_round_trips(tmp_path, capsys):
    assert run(capsys, "synth", "--frames", 50, "--seed", 2, "--out-dir", tmp_path / "a")[0] == 0
    cfg = tmp_path / "a" / "world_config.yaml"
    assert run(capsys, "synth", "--config", cfg, "--out-dir", tmp_path / "b")[0] == 0
    assert (tmp_path / "a" / "world.g2o").read_bytes() == (tmp_path / "b" / "world.g2o").read_bytes()


@pytest.mark.parametrize("argv", [
    ["synth", "--frames", "0"],
    ["synth", "--frames", "-3"],
    ["synth", "--shape", "hexagon"],
    ["--seed", "-1", "synth"],
    ["optimize", "g.g2o", "--method", "nope"],
    [],
])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert "synth" in capsys.readouterr().out


def test_segment_constant_velocity(tmp_path, capsys):
    path = tmp_path / "straight.g2o"
    write_graph(chain_graph(straight_poses(80)), path)
    code, out, _ = run(capsys, "segment", path, "--json")
    assert code == 0
    summary = json.loads(out)
    assert summary["segment_count"] == 1
    assert summary["buffer_count"] == 0
    labels = read_labels(tmp_path / "straight.labels")
    assert [l[0] for l in labels] == list(range(80))


def test_segment_finds_injected_spike(tmp_path, capsys):
    cfg = tmp_path / "spike.yaml"
    cfg.write_text(yaml.safe_dump({"world": {"frames": 200, "shape": "figure-eight", "seed": 1,
                                             "events": [{"kind": "velocity-spike", "center": 100}]}}))
    assert run(capsys, "synth", "--config", cfg, "--out-dir", tmp_path)[0] == 0
    code, out, _ = run(capsys, "segment", tmp_path / "world.g2o", "--out", tmp_path / "l.txt")
    assert code == 0
    labels = read_labels(tmp_path / "l.txt")
    boundaries = [i for i in range(1, len(labels))
                  if labels[i][2] != labels[i - 1][2] or (labels[i][1] == "buffer") != (labels[i - 1][1] == "buffer")]
    assert min(abs(b - 100) for b in boundaries) <= 8


def test_missing_file_exit_2_names_path(tmp_path, capsys):
    missing = tmp_path / "missing.g2o"
    code, _, err = run(capsys, "segment", missing)
    assert code == 2
    assert str(missing) in err
    code, _, err = run(capsys, "optimize", missing)
    assert code == 2 and str(missing) in err


def test_malformed_graph_exit_2_with_line(tmp_path, capsys):
    bad = tmp_path / "bad.g2o"
    bad.write_text("VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\nVERTEX_SE3:QUAT 1 0 0\n")
    code, _, err = run(capsys, "segment", bad)
    assert code == 2
    assert f"{bad}:2:" in err


def test_runtime_failure_exit_1(world, tmp_path, capsys):
    gt = read_trajectory(world / "world_gt.tum")
    shifted = tmp_path / "shifted.tum"
    shifted.write_text("".join(f"{t + 1000:.6f} 0 0 0 0 0 0 1\n" for t in gt.timestamps))
    code, _, err = run(capsys, "optimize", world / "world.g2o", "--gt", shifted, "--out", tmp_path / "o.tum")
    assert code == 1
    assert "AlignmentError" in err


@pytest.mark.parametrize("method", ["full", "segmented"])
def test_optimize_writes_trajectory_and_report(world, tmp_path, capsys, method):
    out, report = tmp_path / "out.tum", tmp_path / "r.json"
    code, stdout, _ = run(capsys, "optimize", world / "world.g2o", "--method", method, "--gt",
                          world / "world_gt.tum", "--out", out, "--report", report, "--json")
    assert code == 0
    d = json.loads(report.read_text())
    assert d == json.loads(stdout) | {"trajectory_file": str(out)}
    assert d["method"] == method and 0 < d["ate_rmse"] < 1.0
    assert set(d["timings"]) >= {"reduction", "global_solve", "interpolation", "total"}
    assert len(read_trajectory(out)) == 160


def test_optimize_ba_stage_and_graph_output(world, tmp_path, capsys):
    code, _, _ = run(capsys, "optimize", world / "world.g2o", "--stage", "ba", "--out", tmp_path / "o.kitti",
                     "--format", "kitti", "--out-graph", tmp_path / "o.g2o", "--max-iterations", 5)
    assert code == 0
    assert len((tmp_path / "o.kitti").read_text().splitlines()) == 160
    assert "EDGE_PROJECT" in (tmp_path / "o.g2o").read_text()


def test_convert_round_trip(world, tmp_path, capsys):
    assert run(capsys, "convert", world / "world_gt.tum", tmp_path / "gt.kitti")[0] == 0
    assert run(capsys, "convert", tmp_path / "gt.kitti", tmp_path / "back.tum")[0] == 0
    a, b = read_trajectory(world / "world_gt.tum"), read_trajectory(tmp_path / "back.tum")
    for p, q in zip(a.poses, b.poses):
        np.testing.assert_allclose(p.matrix(), q.matrix(), atol=1e-12)
    assert run(capsys, "convert", world / "world.g2o", tmp_path / "init.tum")[0] == 0
    assert run(capsys, "convert", tmp_path / "init.tum", tmp_path / "x.g2o")[0] == 2
    assert run(capsys, "convert", tmp_path / "init.tum", tmp_path / "x.weird")[0] == 2


def _scenario(tmp_path, methods, reps=1, name="s"):
    path = tmp_path / f"{name}.yaml"
    path.write_text(yaml.safe_dump({
        "name": name, "methods": methods, "repetitions": reps, "seeds": [2],
        "world": {"frames": 120, "shape": "figure-eight", "loops": 1, "events": 1},
    }))
    return path


def test_bench_rows_and_medians(tmp_path, capsys):
    code, out, _ = run(capsys, "bench", _scenario(tmp_path, ["full", "segmented"], reps=3), "--json",
                       "--out", tmp_path / "res")
    assert code == 0
    d = json.loads(out)
    assert len(d["rows"]) == 6
    assert [(r["method"], r["repetition"]) for r in d["rows"]] == [(m, k) for m in ("full", "segmented")
                                                                   for k in range(3)]
    assert set(d["medians"]) == {"full", "segmented"}
    for m in ("full", "segmented"):
        ates = [r["ate_rmse"] for r in d["rows"] if r["method"] == m]
        assert len(set(ates)) == 1
        assert d["medians"][m]["ate_rmse"] == ates[0]
    rows = list(csv.DictReader(io.StringIO((tmp_path / "res.csv").read_text())))
    assert len(rows) == 6
    assert json.loads((tmp_path / "res.json").read_text()) == d


def test_bench_schema_matches_golden(tmp_path, capsys):
    golden = json.loads((FIXTURES / "bench_schema.json").read_text())
    code, out, _ = run(capsys, "bench", _scenario(tmp_path, ["full", "segmented"]), "--json", "--out",
                       tmp_path / "res")
    assert code == 0
    d = json.loads(out)
    assert sorted(d) == golden["top_level"]
    assert sorted(d["rows"][0]) == golden["row"]
    assert sorted(d["medians"]["full"]) == golden["median"]
    assert (tmp_path / "res.csv").read_text().splitlines()[0] == ",".join(golden["csv_header"])
    assert list(BENCH_COLUMNS) == golden["csv_header"]


def test_bench_ablation_columns(tmp_path, capsys):
    methods = ["segmented", "reproj-only", "velocity-only", "covis", "fixed-length"]
    code, out, _ = run(capsys, "bench", _scenario(tmp_path, methods), "--json")
    assert code == 0
    d = json.loads(out)
    assert set(d["medians"]) == set(methods)
    assert all(r["ate_rmse"] is not None for r in d["rows"])


def test_bench_is_deterministic_across_runs_and_jobs(tmp_path, capsys):
    path = _scenario(tmp_path, ["full", "segmented", "no-buffer"])
    _, a, _ = run(capsys, "bench", path, "--json")
    _, b, _ = run(capsys, "bench", path, "--json", "--jobs", 2)
    ra, rb = json.loads(a)["rows"], json.loads(b)["rows"]
    assert [r["ate_rmse"] for r in ra] == [r["ate_rmse"] for r in rb]
    assert [r["method"] for r in ra] == [r["method"] for r in rb]


def test_bench_unknown_method_lists_registered(tmp_path, capsys):
    code, _, err = run(capsys, "bench", _scenario(tmp_path, ["full", "magic"]))
    assert code == 2
    assert "segmented" in err and "linear-interp" in err


def test_bench_report_values_are_finite(tmp_path, capsys):
    _, out, _ = run(capsys, "bench", _scenario(tmp_path, ["full", "segmented"]), "--json")
    json.loads(out, parse_constant=lambda c: pytest.fail(f"non-finite value {c}"))


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "segopt", "synth", "--frames", "0"], capture_output=True, text=True)
    assert res.returncode == 2
    res = subprocess.run([sys.executable, "-m", "segopt", "synth", "--frames", "20", "--out-dir", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0


def test_alpha_flag_sets_complementary_beta(tmp_path, capsys):
    path = tmp_path / "straight.g2o"
    write_graph(chain_graph(straight_poses(40)), path)
    assert run(capsys, "segment", path, "--alpha", 0.3)[0] == 0
    assert run(capsys, "segment", path, "--alpha", 1.5)[0] == 2
