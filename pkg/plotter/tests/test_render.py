"""Renderer semantics via sidecar metadata (no pixel comparisons)."""

import json
from pathlib import Path

import numpy as np
import pytest

from flowplot import PlotError, TraceFigureSpec, load_grid, render_grid, render_trace

DATA = Path(__file__).parent / "data"
TRACE = DATA / "trace_argmax_flip.json"
GRID = DATA / "grid.csv"


def make_trace(tmp_path, probs_per_step, gold=0, stop="step-budget"):
    steps = []
    for i, probs in enumerate(probs_per_step):
        steps.append(
            {
                "i": i,
                "probs": list(map(float, probs)),
                "s": 0.5,
                "js_from_start": 0.0 if i == 0 else 0.01,
                "js_from_prev": None if i == 0 else 0.01,
                "alpha": None if i == 0 else 1.0,
            }
        )
    doc = {"instance_id": f"synthetic-{len(steps)}", "gold": gold,
           "stop_reason": stop, "steps": steps}
    path = tmp_path / "trace.json"
    path.write_text(json.dumps(doc))
    return path


def read_sidecar(path):
    return json.loads(Path(path).read_text())


# ── traces ──────────────────────────────────────────────────────────────────

def test_single_step_trace_renders(tmp_path):
    path = make_trace(tmp_path, [[0.6, 0.3, 0.1]])
    image, sidecar = render_trace(path, tmp_path / "out.png")
    meta = read_sidecar(sidecar)
    assert image.exists() and image.stat().st_size > 0
    assert meta["n_steps"] == 1
    assert meta["argmax_path"] == [0]


def test_constant_argmax_gives_straight_path(tmp_path):
    path = make_trace(tmp_path, [[0.7, 0.2, 0.1]] * 6)
    _, sidecar = render_trace(path, tmp_path / "out.png")
    assert read_sidecar(sidecar)["argmax_path"] == [0] * 6


def test_class_filter_uses_any_step_semantics(tmp_path):
    # class 1 exceeds the threshold only at the last step; class 2 never
    rows = [[0.991, 0.004, 0.005]] * 3 + [[0.985, 0.010, 0.005]]
    path = make_trace(tmp_path, rows)
    _, sidecar = render_trace(path, tmp_path / "out.png")
    meta = read_sidecar(sidecar)
    assert meta["classes_shown"] == [0, 1]
    assert meta["min_probability"] == 0.01


def test_display_threshold_is_configurable(tmp_path):
    rows = [[0.92, 0.06, 0.02]]
    path = make_trace(tmp_path, rows)
    _, sidecar = render_trace(
        path, tmp_path / "out.png", TraceFigureSpec(min_probability=0.05)
    )
    assert read_sidecar(sidecar)["classes_shown"] == [0, 1]


def test_bundled_trace_fixture(tmp_path):
    image, sidecar = render_trace(TRACE, tmp_path / "flip.png")
    meta = read_sidecar(sidecar)
    assert meta["n_steps"] == 12
    assert meta["classes_shown"] == [0, 1, 2]
    assert meta["argmax_path"][0] == 0 and meta["argmax_path"][-1] == 1
    assert meta["gold"] == 1


def test_svg_output(tmp_path):
    image, _ = render_trace(
        TRACE, tmp_path / "flip.svg", TraceFigureSpec(fmt="svg")
    )
    body = image.read_text()
    assert body.lstrip().startswith("<?xml")


def test_malformed_trace_names_missing_field(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"instance_id": "x", "gold": 0, "steps": [
        {"i": 0, "probs": [1.0], "s": 0.5, "js_from_start": 0.0,
         "js_from_prev": None, "alpha": None}]}))
    with pytest.raises(PlotError, match="stop_reason"):
        render_trace(path, tmp_path / "out.png")

    path2 = tmp_path / "bad2.json"
    path2.write_text(json.dumps({"instance_id": "x", "gold": 0,
                                 "stop_reason": "step-budget",
                                 "steps": [{"i": 0, "probs": [1.0]}]}))
    with pytest.raises(PlotError, match="'s'"):
        render_trace(path2, tmp_path / "out.png")


def test_invalid_spec_rejected():
    with pytest.raises(PlotError):
        TraceFigureSpec(min_probability=1.0)
    with pytest.raises(PlotError):
        TraceFigureSpec(fmt="jpeg")


def test_renderer_does_not_mutate_input(tmp_path):
    before = TRACE.read_bytes()
    render_trace(TRACE, tmp_path / "out.png")
    assert TRACE.read_bytes() == before


# ── grids ───────────────────────────────────────────────────────────────────

def test_grid_loads_tuner_csv_without_transformation():
    t_steps, t_js, improvement = load_grid(GRID)
    assert improvement.shape == (100, 100)
    assert list(t_steps[:3]) == [0, 1, 2] and t_steps[-1] == 99
    assert t_js[0] == 0.0
    assert np.all(improvement[:, 0] == 0.0)  # zero-budget column


def test_grid_render_and_sidecar(tmp_path):
    image, sidecar = render_grid(GRID, tmp_path / "grid.png")
    meta = read_sidecar(sidecar)
    assert image.exists() and image.stat().st_size > 0
    assert (meta["n_rows"], meta["n_cols"]) == (100, 100)
    assert meta["value_min"] <= 0.0 <= meta["value_max"]


def test_all_zero_grid_renders(tmp_path):
    path = tmp_path / "zero.csv"
    header = "t_js," + ",".join(str(k) for k in range(4))
    rows = [f"{j * 0.1}," + ",".join("0.0" for _ in range(4)) for j in range(3)]
    path.write_text("\n".join([header] + rows) + "\n")
    image, sidecar = render_grid(path, tmp_path / "zero.png")
    meta = read_sidecar(sidecar)
    assert meta["value_min"] == meta["value_max"] == 0.0


def test_grid_shape_mismatch_diagnostic(tmp_path):
    path = tmp_path / "ragged.csv"
    path.write_text("t_js,0,1\n0.0,1.0\n")
    with pytest.raises(PlotError, match="line 2"):
        render_grid(path, tmp_path / "out.png")


def test_grid_bad_header_diagnostic(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("threshold,0,1\n0.0,1.0,2.0\n")
    with pytest.raises(PlotError, match="t_js"):
        render_grid(path, tmp_path / "out.png")


# ── cli ─────────────────────────────────────────────────────────────────────

def test_cli_trace_and_grid(tmp_path, capsys):
    from flowplot.cli import main

    out = tmp_path / "t.png"
    assert main(["trace", str(TRACE), "--out", str(out)]) == 0
    assert out.exists() and (tmp_path / "t.png.json").exists()

    gout = tmp_path / "g.png"
    assert main(["grid", str(GRID), "--out", str(gout)]) == 0
    assert gout.exists()

    rc = main(["trace", str(tmp_path / "missing.json")])
    assert rc == 2
    assert capsys.readouterr().err.startswith("error:")
