"""Joint grid search over the two stopping thresholds.

Runs every validation flow once to the maximal budget with the distance
threshold disabled, then derives each grid cell's accuracy by truncating
the stored traces under that cell's thresholds. Truncation commutes with
the stopping rule — update steps never depend on the thresholds — so the
grid equals 10,000 independent runs at a hundredth of the cost.

Axes: 100 integer step budgets (0..99, the 0 row is the do-nothing
baseline) by 100 uniform Jensen-Shannon thresholds spanning
[0, sqrt(ln 2)] inclusive. Cells hold validation accuracy improvement
over the baseline, in percentage points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .data import Split
from .errors import ConfigError, ContractError
from .flow import SQRT_LN2, FlowTrace, StoppingConfig, run_flow
from .model import ModelBundle

GRID_POINTS = 100


def default_t_steps_values() -> np.ndarray:
    return np.arange(GRID_POINTS, dtype=np.int64)


def default_t_js_values() -> np.ndarray:
    return np.linspace(0.0, SQRT_LN2, GRID_POINTS)


@dataclass
class TunerGrid:
    """Validation improvement (percentage points) per threshold pair.
    `improvement[j, k]` pairs t_js_values[j] with t_steps_values[k]."""

    t_steps_values: np.ndarray  # (K,) ints, ascending
    t_js_values: np.ndarray  # (J,) floats, ascending
    improvement: np.ndarray  # (J, K)
    base_accuracy: float
    n_instances: int
    js_referent: str
    seed: int

    def shape(self) -> tuple[int, int]:
        return self.improvement.shape


def _referent_distances(trace: FlowTrace, referent: str) -> np.ndarray:
    if referent == "consecutive":
        return np.array([s.js_from_prev for s in trace.steps[1:]], dtype=np.float64)
    return np.array([s.js_from_start for s in trace.steps[1:]], dtype=np.float64)


def _stop_index(distances: np.ndarray, t_steps: int, t_js: float) -> int:
    """Where a flow with the given thresholds halts, given the referent
    distances of the stored max-budget trace (distances[i-1] belongs to
    step i). The violating step itself is kept."""
    within = distances[:t_steps]
    viol = within > t_js
    if viol.any():
        return int(np.argmax(viol)) + 1
    return min(t_steps, len(distances))


def truncate_trace(trace: FlowTrace, t_steps: int, t_js: float) -> FlowTrace:
    """The trace run_flow would have produced under (t_steps, t_js),
    carved out of a stored longer run with the same step semantics."""
    if trace.config is None:
        raise ContractError("trace carries no config; cannot truncate")
    if t_steps > trace.n_stop:
        raise ContractError(
            f"stored trace has {trace.n_stop} steps, cannot truncate to {t_steps}"
        )
    distances = _referent_distances(trace, trace.config.js_referent)
    n_stop = _stop_index(distances, t_steps, t_js)
    reason = (
        "js-threshold"
        if n_stop >= 1 and distances[n_stop - 1] > t_js
        else "step-budget"
    )
    return FlowTrace(
        steps=trace.steps[: n_stop + 1],
        stop_reason=reason,
        instance_id=trace.instance_id,
        gold=trace.gold,
        config=replace(trace.config, t_steps=t_steps, t_js=t_js),
        seed=trace.seed,
        features=trace.features,
    )


def collect_traces(
    bundle: ModelBundle,
    split: Split,
    config: StoppingConfig,
    seed: int = 0,
    max_steps: int | None = None,
) -> list[FlowTrace]:
    """One max-budget, threshold-disabled flow per instance. Instance i
    runs under seed `seed + i` (the same rule any re-run must use)."""
    if len(split) == 0:
        raise ConfigError("empty validation set")
    if max_steps is None:
        max_steps = int(default_t_steps_values().max())
    full = replace(config, t_steps=max_steps, t_js=SQRT_LN2)
    traces = []
    for i in range(len(split)):
        traces.append(
            run_flow(
                bundle,
                split.x[i],
                full,
                seed=seed + i,
                instance_id=split.ids[i],
                gold=int(split.y[i]),
            )
        )
    return traces


def evaluate_grid(
    bundle: ModelBundle,
    split: Split,
    config: StoppingConfig,
    seed: int = 0,
    t_steps_values: np.ndarray | None = None,
    t_js_values: np.ndarray | None = None,
    traces: list[FlowTrace] | None = None,
) -> TunerGrid:
    """Fill the threshold grid from stored traces (collected on demand).
    `config` contributes the flow parameters; its own thresholds are
    ignored."""
    tsteps = default_t_steps_values() if t_steps_values is None else np.asarray(t_steps_values)
    tjs = default_t_js_values() if t_js_values is None else np.asarray(t_js_values)
    if traces is None:
        traces = collect_traces(bundle, split, config, seed, int(tsteps.max()))

    n = len(traces)
    if n == 0:
        raise ConfigError("empty validation set")
    counts = np.zeros((tjs.shape[0], tsteps.shape[0]), dtype=np.int64)
    base_count = 0
    for trace in traces:
        correct_at = np.array(
            [int(np.argmax(s.probs)) == trace.gold for s in trace.steps], dtype=bool
        )
        base_count += int(correct_at[0])
        distances = _referent_distances(trace, trace.config.js_referent)
        viol = distances[None, :] > tjs[:, None]  # (J, S)
        has = viol.any(axis=1)
        first = np.where(has, viol.argmax(axis=1) + 1, len(distances) + 1)
        n_stop = np.minimum(first[:, None], tsteps[None, :])  # (J, K)
        counts += correct_at[n_stop]

    improvement = (counts - base_count) / n * 100.0
    return TunerGrid(
        t_steps_values=tsteps,
        t_js_values=tjs,
        improvement=improvement,
        base_accuracy=base_count / n,
        n_instances=n,
        js_referent=traces[0].config.js_referent,
        seed=seed,
    )


def select_thresholds(grid: TunerGrid) -> tuple[int, float]:
    """Argmax cell; ties break toward the smaller step budget, then the
    smaller distance threshold (prefer less intervention)."""
    best = grid.improvement.max()
    ks, js = np.nonzero(grid.improvement.T == best)  # t_steps-major order
    return int(grid.t_steps_values[ks[0]]), float(grid.t_js_values[js[0]])


# ── export ──────────────────────────────────────────────────────────────────

def write_grid_csv(grid: TunerGrid, path) -> None:
    """101 header-labeled columns: the t_js row label plus one column per
    step budget. Values are full-precision reprs."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t_js," + ",".join(str(int(v)) for v in grid.t_steps_values) + "\n")
        for j, tjs in enumerate(grid.t_js_values):
            row = ",".join(repr(float(v)) for v in grid.improvement[j])
            fh.write(f"{float(tjs)!r},{row}\n")


def write_grid_meta(grid: TunerGrid, path, extra: dict | None = None) -> None:
    t_steps, t_js = select_thresholds(grid)
    meta = {
        "t_steps_values": [int(v) for v in grid.t_steps_values],
        "t_js_values": [float(v) for v in grid.t_js_values],
        "base_accuracy": grid.base_accuracy,
        "n_instances": grid.n_instances,
        "js_referent": grid.js_referent,
        "seed": grid.seed,
        "selected": {
            "t_steps": t_steps,
            "t_js": t_js,
            "improvement_pp": float(grid.improvement.max()),
        },
        "axis_note": (
            "t_steps: integers 0..99 (0 = baseline row, exactly zero "
            "improvement); t_js: 100 uniform points on [0, sqrt(ln 2)] "
            "inclusive of both endpoints"
        ),
    }
    if extra:
        meta.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_grid_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`write_grid_csv`: (t_steps_values, t_js_values,
    improvement)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "t_js":
            raise ContractError(f"{path}: first column must be t_js, got {header[0]!r}")
        tsteps = np.array([int(v) for v in header[1:]], dtype=np.int64)
        tjs, rows = [], []
        for line in fh:
            parts = line.strip().split(",")
            tjs.append(float(parts[0]))
            rows.append([float(v) for v in parts[1:]])
    return tsteps, np.array(tjs), np.array(rows)
