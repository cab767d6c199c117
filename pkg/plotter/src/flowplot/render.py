"""Static figures from trace JSON and threshold-grid CSV.

Trace figures are per-step class-probability heatmaps: steps left to
right, surviving classes top to bottom, a white line tracking the argmax
per step, a black rectangle isolating the unmodified step-0 prediction,
and the gold class highlighted in its row label. Grid figures are 100x100
heatmaps of validation improvement with a diverging scale centered at 0.

Rendering never mutates its inputs and is deterministic for a given spec:
fixed colormaps, pinned image metadata, no timestamps. Every figure gets
a JSON sidecar describing its content so tests can assert semantics
without pixel comparison.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.colors import TwoSlopeNorm
from matplotlib.patches import Rectangle


class PlotError(Exception):
    """Malformed input or rendering misuse; the message names the issue."""


REQUIRED_TRACE_FIELDS = ("instance_id", "gold", "stop_reason", "steps")
REQUIRED_STEP_FIELDS = ("i", "probs", "s", "js_from_start", "js_from_prev", "alpha")

#: SVG output would otherwise embed the build date.
_STABLE_METADATA = {"svg": {"Date": None}, "png": None}


@dataclass
class TraceFigureSpec:
    """Display knobs for trace figures. A class appears iff its
    probability reaches `min_probability` at any step."""

    min_probability: float = 0.01
    cmap: str = "viridis"
    dpi: int = 150
    fmt: str = "png"

    def __post_init__(self):
        if not 0.0 <= self.min_probability < 1.0:
            raise PlotError(
                f"min probability must lie in [0, 1), got {self.min_probability}"
            )
        if self.fmt not in ("png", "svg"):
            raise PlotError(f"format must be png or svg, got {self.fmt!r}")


def load_trace(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise PlotError(f"{path}: not valid trace JSON ({exc})") from exc
    for field in REQUIRED_TRACE_FIELDS:
        if field not in doc:
            raise PlotError(f"{path}: trace is missing field {field!r}")
    if not doc["steps"]:
        raise PlotError(f"{path}: trace has no steps")
    for step in doc["steps"]:
        for field in REQUIRED_STEP_FIELDS:
            if field not in step:
                raise PlotError(
                    f"{path}: step {step.get('i', '?')} is missing field {field!r}"
                )
    return doc


def _write_sidecar(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def render_trace(
    trace_path,
    out_path,
    spec: TraceFigureSpec | None = None,
    sidecar_path=None,
) -> tuple[Path, Path]:
    """Render one trace; returns (image path, sidecar path)."""
    spec = spec or TraceFigureSpec()
    doc = load_trace(trace_path)
    probs = np.array([step["probs"] for step in doc["steps"]], dtype=float)
    n_steps, n_classes = probs.shape

    shown = [k for k in range(n_classes) if probs[:, k].max() >= spec.min_probability]
    if not shown:  # degenerate threshold; keep the argmax row visible
        shown = [int(np.argmax(probs[0]))]
    matrix = probs[:, shown].T  # classes x steps
    argmax_path = [int(np.argmax(row)) for row in probs]

    fig, ax = plt.subplots(figsize=(max(4.0, 0.45 * n_steps), max(2.5, 0.4 * len(shown) + 1.2)))
    ax.imshow(matrix, aspect="auto", cmap=spec.cmap, vmin=0.0, vmax=1.0,
              interpolation="nearest")

    # white line marking the per-step maximum, where that class is displayed
    row_of = {k: r for r, k in enumerate(shown)}
    path_rows = [row_of.get(k, np.nan) for k in argmax_path]
    ax.plot(range(n_steps), path_rows, color="white", linewidth=2.0,
            marker="o", markersize=3)

    # the unmodified base prediction sits inside a black rectangle
    ax.add_patch(Rectangle((-0.5, -0.5), 1.0, len(shown), fill=False,
                           edgecolor="black", linewidth=2.0, clip_on=False))

    ax.set_xlabel("step")
    ax.set_ylabel("class")
    ax.set_xticks(range(0, n_steps, max(1, n_steps // 12)))
    ax.set_yticks(range(len(shown)))
    ax.set_yticklabels([f"class {k}" for k in shown])
    gold = doc["gold"]
    if gold is not None and gold in row_of:
        label = ax.get_yticklabels()[row_of[gold]]
        label.set_bbox({"facecolor": "lightgray", "edgecolor": "none", "pad": 2.0})
    ax.set_title(
        f"{doc['instance_id'] or 'trace'} "
        f"(stop: {doc['stop_reason']}, gold: {gold if gold is not None else '-'})"
    )
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=spec.dpi, format=spec.fmt,
                metadata=_STABLE_METADATA[spec.fmt])
    plt.close(fig)

    sidecar_path = Path(sidecar_path) if sidecar_path else out_path.with_suffix(out_path.suffix + ".json")
    _write_sidecar(
        sidecar_path,
        {
            "kind": "trace",
            "image": out_path.name,
            "instance_id": doc["instance_id"],
            "gold": gold,
            "stop_reason": doc["stop_reason"],
            "n_steps": n_steps,
            "classes_shown": shown,
            "argmax_path": argmax_path,
            "min_probability": spec.min_probability,
        },
    )
    return out_path, sidecar_path


def load_grid(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(t_steps values, t_js values, improvement matrix) from the tuner CSV."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.strip() for line in fh if line.strip()]
    if not lines:
        raise PlotError(f"{path}: empty grid file")
    header = lines[0].split(",")
    if header[0] != "t_js":
        raise PlotError(f"{path}: first header column must be t_js, got {header[0]!r}")
    try:
        t_steps = np.array([int(v) for v in header[1:]])
    except ValueError as exc:
        raise PlotError(f"{path}: non-integer step budget in header ({exc})") from exc
    t_js, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(header):
            raise PlotError(
                f"{path}: line {lineno} has {len(parts)} columns, header has {len(header)}"
            )
        try:
            t_js.append(float(parts[0]))
            rows.append([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise PlotError(f"{path}: line {lineno} is not numeric ({exc})") from exc
    return t_steps, np.array(t_js), np.array(rows)


def render_grid(
    grid_path,
    out_path,
    dpi: int = 150,
    fmt: str = "png",
    sidecar_path=None,
) -> tuple[Path, Path]:
    """Render a threshold grid; returns (image path, sidecar path)."""
    if fmt not in ("png", "svg"):
        raise PlotError(f"format must be png or svg, got {fmt!r}")
    t_steps, t_js, improvement = load_grid(grid_path)

    span = max(float(np.abs(improvement).max()), 1e-9)
    fig, ax = plt.subplots(figsize=(6.4, 5.2))
    im = ax.imshow(
        improvement,
        aspect="auto",
        origin="lower",
        cmap="RdBu_r",
        norm=TwoSlopeNorm(vcenter=0.0, vmin=-span, vmax=span),
        extent=(t_steps[0] - 0.5, t_steps[-1] + 0.5, float(t_js[0]), float(t_js[-1])),
        interpolation="nearest",
    )
    fig.colorbar(im, ax=ax, label="validation accuracy improvement (pp)")
    ax.set_xlabel("step budget")
    ax.set_ylabel("distance threshold")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=dpi, format=fmt, metadata=_STABLE_METADATA[fmt])
    plt.close(fig)

    sidecar_path = Path(sidecar_path) if sidecar_path else out_path.with_suffix(out_path.suffix + ".json")
    _write_sidecar(
        sidecar_path,
        {
            "kind": "grid",
            "image": out_path.name,
            "n_rows": int(improvement.shape[0]),
            "n_cols": int(improvement.shape[1]),
            "t_steps_range": [int(t_steps[0]), int(t_steps[-1])],
            "t_js_range": [float(t_js[0]), float(t_js[-1])],
            "value_min": float(improvement.min()),
            "value_max": float(improvement.max()),
        },
    )
    return out_path, sidecar_path
