import json
import shutil
import subprocess
import sys

import numpy as np
import pytest
from filelock import FileLock

from cmkernel import io
from cmkernel.analysis import load_taylor, taylor_center_manifold
from cmkernel.cli import (EXIT_DIM, EXIT_EMPTY, EXIT_FIT, EXIT_INVALID, EXIT_LOCKED,
                          EXIT_NUMERICAL, EXIT_OK, EXIT_STEP, main, parse_grid)
from cmkernel.dynamics import example2


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Example 2 with the default settings, one stage at a time."""
    d = tmp_path_factory.mktemp("ex2")
    assert run("simulate", "--system", "example2", "--out", d / "ds.csv") == EXIT_OK
    assert run("greedy", "--dataset", d / "ds.csv", "--kernel", "k2", "--out", d / "sel.json") == EXIT_OK
    assert run("fit", "--dataset", d / "ds.csv", "--selection", d / "sel.json",
               "--out", d / "model.json") == EXIT_OK
    assert run("eval", "--model", d / "model.json", "--system", "example2",
               "--out", d / "eval.csv", "--taylor-out", d / "taylor.json") == EXIT_OK
    return d


def _bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_stage_files_round_trip(pipeline):
    d = pipeline
    data = io.read_dataset(d / "ds.csv")
    assert len(data) == data.provenance["retained_count"] > 0
    assert data.provenance["dataset_sha256"] == io.sha256_file(d / "ds.csv")
    sel = io.read_selection(d / "sel.json")
    assert sel["selected_count"] == len(sel["selected_indices"])
    np.testing.assert_array_equal(data.x_points[sel["selected_indices"]], sel["selected_points"])
    sur = io.read_model(d / "model.json")
    # writing the read-back model reproduces the file byte for byte
    io.write_model(sur, d / "model_again.json", json.load(open(d / "model.json"))["selection_sha256"])
    assert _bytes(d / "model_again.json") == _bytes(d / "model.json")
    header, ev = io.read_evaluation(d / "eval.csv")
    assert header == ["x1", "s_1", "h_taylor_1", "residual_norm"]
    assert ev.shape == (401, 4)
    np.testing.assert_array_equal(ev[:, 1], sur(ev[:, :1])[:, 0])
    assert load_taylor(d / "taylor.json") == taylor_center_manifold(example2(), 4)


def test_dataset_csv_round_trip_is_exact(tmp_path):
    from cmkernel.dynamics import box, build_dataset, initial_grid
    data = build_dataset(example2(), initial_grid(0.8, 2), 0.0, 100.0, 0.1, box(0.1, 1))
    io.write_dataset(data, tmp_path / "ds.csv")
    back = io.read_dataset(tmp_path / "ds.csv")
    for name in ("times", "x_points", "y_points"):
        assert np.array_equal(getattr(back, name), getattr(data, name))
    text = open(tmp_path / "ds.csv", newline="").read()
    assert "\r" not in text and text.splitlines()[0] == "t,x1,y1"


def test_pipeline_meets_constraints(pipeline):
    rep = io.read_model(pipeline / "model.json").fit_report
    assert rep["s0_norm"] <= 1e-10 and rep["ds0_norm"] <= 1e-8


def test_refit_is_byte_identical(pipeline, tmp_path):
    d = pipeline
    assert run("fit", "--dataset", d / "ds.csv", "--selection", d / "sel.json",
               "--out", tmp_path / "model.json") == EXIT_OK
    assert _bytes(tmp_path / "model.json") == _bytes(d / "model.json")


def test_reproduce_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("reproduce", 2, "k2", "--outdir", a) == EXIT_OK
    assert run("reproduce", 2, "k2", "--outdir", b) == EXIT_OK
    for name in ("dataset.csv", "selection.json", "selection_power.json", "model.json",
                 "evaluation.csv", "taylor.json"):
        assert _bytes(a / name) == _bytes(b / name), name
    report = json.load(open(a / "report.json"))
    assert report["greedy_size"]["reported"] == 6
    assert set(report["greedy_size"]["reproduced"]) == {"power", "power_squared"}


def test_max_points_cap(pipeline, tmp_path):
    assert run("greedy", "--dataset", pipeline / "ds.csv", "--kernel", "k2", "--max-points", 1,
               "--out", tmp_path / "sel.json") == EXIT_OK
    assert io.read_selection(tmp_path / "sel.json")["selected_count"] == 1


def test_selection_ignores_y_column(pipeline, tmp_path):
    data = io.read_dataset(pipeline / "ds.csv")
    rng = np.random.default_rng(0)
    data.y_points = data.y_points[rng.permutation(len(data))]
    io.write_dataset(data, tmp_path / "perm.csv")
    assert run("greedy", "--dataset", tmp_path / "perm.csv", "--kernel", "k2",
               "--out", tmp_path / "sel.json") == EXIT_OK
    ours = io.read_selection(tmp_path / "sel.json")["selected_indices"]
    assert ours == io.read_selection(pipeline / "sel.json")["selected_indices"]


def test_literal_weight_mode_degrades_the_fit(pipeline, tmp_path):
    d = pipeline
    assert run("fit", "--dataset", d / "ds.csv", "--selection", d / "sel.json",
               "--weight-mode", "literal", "--out", tmp_path / "lit.json") == EXIT_OK
    pts = np.linspace(-0.05, 0.05, 401)[:, None]
    h = pts[:, 0] ** 2
    jitter = np.max(np.abs(io.read_model(d / "model.json")(pts)[:, 0] - h))
    literal = np.max(np.abs(io.read_model(tmp_path / "lit.json")(pts)[:, 0] - h))
    assert jitter <= 1e-4 < 1e-3 < literal


def test_grid_sizes(tmp_path):
    assert run("reproduce", 3, "k2", "--outdir", tmp_path) == EXIT_OK
    _, ev = io.read_evaluation(tmp_path / "evaluation.csv")
    assert ev.shape == (101 * 101, 2 + 2 + 1)
    assert run("eval", "--model", tmp_path / "model.json", "--system", "example3",
               "--grid=-0.05:0.05:41", "--taylor-degree", 2, "--out", tmp_path / "e.csv") == EXIT_OK
    assert io.read_evaluation(tmp_path / "e.csv")[1].shape[0] == 41 * 41
    assert [len(a) for a in parse_grid(None, 1, 0.1)] == [401]
    assert parse_grid("-0.1:0.1:401", 1, 0.5)[0][0] == -0.1


def test_empty_box_and_empty_dataset(tmp_path):
    assert run("simulate", "--system", "example2", "--T", 5, "--box", -0.1,
               "--out", tmp_path / "ds.csv") == EXIT_OK
    assert open(tmp_path / "ds.csv").read() == "t,x1,y1\n"
    assert run("greedy", "--dataset", tmp_path / "ds.csv", "--out", tmp_path / "s.json") == EXIT_EMPTY


def test_step_failure_exit_code(tmp_path):
    out = tmp_path / "ds.csv"
    assert run("simulate", "--system", "example1", "--on-newton-failure", "raise",
               "--out", out) == EXIT_STEP
    assert not out.exists()  # nothing is renamed into place on failure


def test_numerical_failure_exit_code(pipeline, tmp_path):
    assert run("greedy", "--dataset", pipeline / "ds.csv", "--kernel", "poly:4:1e300",
               "--out", tmp_path / "s.json") == EXIT_NUMERICAL


def test_fit_failure_exit_code(pipeline, tmp_path):
    data = io.read_dataset(pipeline / "ds.csv")
    data.y_points = np.full_like(data.y_points, 1e308)
    io.write_dataset(data, tmp_path / "big.csv")
    assert run("greedy", "--dataset", tmp_path / "big.csv", "--kernel", "k2",
               "--out", tmp_path / "s.json") == EXIT_OK
    assert run("fit", "--dataset", tmp_path / "big.csv", "--selection", tmp_path / "s.json",
               "--out", tmp_path / "m.json") == EXIT_FIT
    assert not (tmp_path / "m.json").exists()


def test_dimension_mismatch_exit_code(pipeline, tmp_path):
    assert run("eval", "--model", pipeline / "model.json", "--system", "example3",
               "--out", tmp_path / "e.csv") == EXIT_DIM


def test_invalid_inputs(pipeline, tmp_path):
    assert run("greedy", "--dataset", tmp_path / "missing.csv", "--out", tmp_path / "s.json") \
        == EXIT_INVALID
    assert run("greedy", "--dataset", pipeline / "ds.csv", "--kernel", "cubic",
               "--out", tmp_path / "s.json") == EXIT_INVALID
    # a selection made from another dataset is refused
    data = io.read_dataset(pipeline / "ds.csv")
    data.y_points = data.y_points + 1.0
    io.write_dataset(data, tmp_path / "other.csv")
    assert run("fit", "--dataset", tmp_path / "other.csv", "--selection", pipeline / "sel.json",
               "--out", tmp_path / "m.json") == EXIT_INVALID
    with pytest.raises(SystemExit):
        run("simulate", "--tol-mode", "p3", "--out", tmp_path / "x.csv")


def test_locked_output_directory(tmp_path):
    with FileLock(str(tmp_path / ".cmkernel.lock")):
        code = subprocess.run([sys.executable, "-m", "cmkernel.cli", "simulate", "--system",
                               "example2", "--T", "5", "--out", str(tmp_path / "ds.csv")],
                              capture_output=True).returncode
    assert code == EXIT_LOCKED
    assert not (tmp_path / "ds.csv").exists()


def test_console_script_entry_point(tmp_path):
    exe = shutil.which("cmkernel")
    if exe is None:
        pytest.skip("console script not installed")
    res = subprocess.run([exe, "simulate", "--system", "example2", "--T", "5",
                          "--out", str(tmp_path / "ds.csv")], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("N* = ")
