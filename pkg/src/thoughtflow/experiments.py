"""Experiment harnesses: correction statistics, gradient-sign attacks,
and a label-distribution-shift pipeline.

Each harness is a pure function over read-only bundles; per-seed runs are
independent. Results export as CSV plus a JSON manifest carrying the
exact configuration, seeds, and a provenance digest.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .data import Dataset, Split, benchmark_spec, generate_synthetic
from .errors import ConfigError
from .flow import SQRT_LN2, FlowTrace, StoppingConfig, flow_prediction, run_flow
from .model import ModelBundle
from .training import TrainConfig, accuracy, train_base, train_correction
from .tuning import evaluate_grid, select_thresholds


# ── correction statistics ───────────────────────────────────────────────────

@dataclass
class CorrectionStats:
    """Transition counts between the base prediction (step 0) and the
    flow's final prediction. The four categories partition the split:
    flow_accuracy - base_accuracy == (wrong_to_right - right_to_wrong)/n."""

    n: int
    base_correct: int
    flow_correct: int
    wrong_to_right: int
    right_to_wrong: int
    wrong_to_wrong_changed: int
    unchanged: int

    @property
    def base_accuracy(self) -> float:
        return self.base_correct / self.n

    @property
    def flow_accuracy(self) -> float:
        return self.flow_correct / self.n

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "base_accuracy": self.base_accuracy,
            "flow_accuracy": self.flow_accuracy,
            "wrong_to_right": self.wrong_to_right,
            "right_to_wrong": self.right_to_wrong,
            "wrong_to_wrong_changed": self.wrong_to_wrong_changed,
            "unchanged": self.unchanged,
        }


def correction_stats(
    bundle: ModelBundle,
    split: Split,
    config: StoppingConfig,
    seed: int = 0,
    collect_ids: set[str] | None = None,
) -> tuple[CorrectionStats, list[FlowTrace]]:
    """Run the flow over a split with tuned thresholds and tally
    prediction transitions. Traces for ids in `collect_ids` are returned
    for export."""
    counts = dict(wrong_to_right=0, right_to_wrong=0, wrong_to_wrong_changed=0, unchanged=0)
    base_correct = flow_correct = 0
    kept = []
    for i in range(len(split)):
        trace = run_flow(
            bundle,
            split.x[i],
            config,
            seed=seed + i,
            instance_id=split.ids[i],
            gold=int(split.y[i]),
        )
        gold = int(split.y[i])
        first, last = trace.base_prediction, flow_prediction(trace)
        base_correct += int(first == gold)
        flow_correct += int(last == gold)
        if last == first:
            counts["unchanged"] += 1
        elif last == gold:
            counts["wrong_to_right"] += 1
        elif first == gold:
            counts["right_to_wrong"] += 1
        else:
            counts["wrong_to_wrong_changed"] += 1
        if collect_ids and split.ids[i] in collect_ids:
            kept.append(trace)
    stats = CorrectionStats(
        n=len(split), base_correct=base_correct, flow_correct=flow_correct, **counts
    )
    return stats, kept


# ── gradient-sign attack ────────────────────────────────────────────────────

@dataclass
class AttackConfig:
    eps_levels: tuple[float, ...] = (0.001, 0.01, 0.1, 1.0)

    def __post_init__(self):
        if any(e < 0 for e in self.eps_levels):
            raise ConfigError("attack strengths must be non-negative")


def fgsm_attack(bundle: ModelBundle, x: np.ndarray, gold: int, eps: float) -> np.ndarray:
    """x + eps * sign(d loss / d x) for the cross-entropy loss of the
    base prediction — the single-step attack that nudges every input
    coordinate toward higher loss."""
    if eps < 0:
        raise ConfigError(f"eps must be non-negative, got {eps}")
    x = np.asarray(x, dtype=np.float64)
    tape = ad.Tape()
    x_node = tape.watch(x)
    phi = bundle.encoder.forward_tape(tape, x_node)
    z = bundle.label.logits_tape(tape, phi)
    loss = tape.cross_entropy(z, gold)
    tape.backward(loss)
    return x + eps * np.sign(x_node.grad_or_zeros())


def fgsm_sweep(
    bundle: ModelBundle,
    split: Split,
    config: StoppingConfig,
    attack: AttackConfig | None = None,
    seed: int = 0,
) -> list[dict]:
    """Base vs. flow accuracy per attack strength. The distance threshold
    must be disabled (t_js = sqrt(ln 2)) so corrections can run long under
    heavy noise."""
    if config.t_js < SQRT_LN2:
        raise ConfigError(
            "fgsm_sweep requires the distance threshold disabled "
            f"(t_js = sqrt(ln 2) = {SQRT_LN2:.6f}); got t_js = {config.t_js}"
        )
    attack = attack or AttackConfig()
    rows = []
    for eps in attack.eps_levels:
        base_correct = flow_correct = 0
        for i in range(len(split)):
            gold = int(split.y[i])
            x_adv = fgsm_attack(bundle, split.x[i], gold, eps)
            trace = run_flow(bundle, x_adv, config, seed=seed + i)
            base_correct += int(trace.base_prediction == gold)
            flow_correct += int(flow_prediction(trace) == gold)
        n = len(split)
        rows.append(
            {
                "eps": eps,
                "base_accuracy": base_correct / n,
                "flow_accuracy": flow_correct / n,
                "improvement_pp": (flow_correct - base_correct) / n * 100.0,
            }
        )
    return rows


def mean_attacked_cross_entropy(bundle: ModelBundle, split: Split, eps: float) -> float:
    total = 0.0
    for i in range(len(split)):
        gold = int(split.y[i])
        x_adv = fgsm_attack(bundle, split.x[i], gold, eps)
        z, _ = bundle.predict(x_adv)
        total += ad.log_sum_exp(z) - float(z[gold])
    return total / len(split)


# ── label-distribution shift ────────────────────────────────────────────────

@dataclass
class ShiftConfig:
    """Per-class sampling weights for the train split versus the val/test
    splits, the flow scalings to evaluate, and the seeds to average."""

    train_weights: tuple[float, ...]
    eval_weights: tuple[float, ...]
    deltas: tuple[float, ...] = (0.001, 0.01)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self):
        for name, w in (("train", self.train_weights), ("eval", self.eval_weights)):
            arr = np.asarray(w, dtype=np.float64)
            if np.any(arr < 0) or arr.sum() == 0:
                raise ConfigError(f"{name} weights must be non-negative, not all zero")


def weighted_resample(split: Split, weights, rng: np.random.Generator) -> Split:
    """Resample a split to the given class proportions, keeping its size.
    Draws without replacement per class when the source has enough
    records, with replacement otherwise. Classes that the source lacks
    entirely trigger a warning and their share moves to the others."""
    weights = np.asarray(weights, dtype=np.float64)
    present = np.array([np.any(split.y == k) for k in range(len(weights))])
    missing = [k for k in range(len(weights)) if weights[k] > 0 and not present[k]]
    if missing:
        warnings.warn(
            f"classes {missing} have sampling weight but no source records; "
            "their share is redistributed",
            stacklevel=2,
        )
        weights = np.where(present, weights, 0.0)
        if weights.sum() == 0:
            raise ConfigError("no source records for any weighted class")
    weights = weights / weights.sum()

    n = len(split)
    counts = np.floor(weights * n).astype(int)
    # hand out the remainder to the largest fractional parts, stable order
    frac = weights * n - counts
    for k in np.argsort(-frac, kind="stable")[: n - counts.sum()]:
        counts[k] += 1

    chosen: list[int] = []
    for k in range(len(weights)):
        if counts[k] == 0:
            continue
        pool = np.nonzero(split.y == k)[0]
        take = rng.choice(pool, size=counts[k], replace=counts[k] > len(pool))
        chosen.extend(int(v) for v in take)
    ids = []
    seen: dict[str, int] = {}
    for idx in chosen:
        base = split.ids[idx]
        occurrence = seen.get(base, 0)
        seen[base] = occurrence + 1
        ids.append(base if occurrence == 0 else f"{base}:{occurrence}")
    sel = np.array(chosen, dtype=int)
    return Split(ids=ids, x=split.x[sel].copy(), y=split.y[sel].copy())


def label_shift_run(
    dataset: Dataset,
    shift: ShiftConfig,
    base_train: TrainConfig | None = None,
    correction_train: TrainConfig | None = None,
    flow_config: StoppingConfig | None = None,
) -> dict:
    """Full shifted pipeline: train the base model on a reweighted train
    split, fit the correction module on half of the reweighted validation
    split, tune thresholds on the other half, report test accuracy per
    flow scaling. Returns per-seed detail plus Table-style mean/std rows.
    """
    flow_config = flow_config or StoppingConfig(t_steps=0)
    per_seed: list[dict] = []
    for seed in shift.seeds:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5F17)))
        train_split = weighted_resample(dataset.splits["train"], shift.train_weights, rng)
        val_split = weighted_resample(dataset.splits["val"], shift.eval_weights, rng)
        test_split = weighted_resample(dataset.splits["test"], shift.eval_weights, rng)
        half = len(val_split) // 2
        val_fit = Split(ids=val_split.ids[:half], x=val_split.x[:half], y=val_split.y[:half])
        val_tune = Split(ids=val_split.ids[half:], x=val_split.x[half:], y=val_split.y[half:])

        shifted = Dataset(
            n_inputs=dataset.n_inputs,
            n_classes=dataset.n_classes,
            splits={"train": train_split, "val_fit": val_fit},
            manifest={"derived_from": dataset.manifest.get("format", "unknown")},
        )
        b_cfg = replace(base_train or TrainConfig(), seed=seed)
        c_cfg = replace(correction_train or TrainConfig(epochs=10), seed=seed)
        bundle = train_base(shifted, b_cfg)
        bundle = train_correction(bundle, shifted, c_cfg, split="val_fit")

        base_test_acc = accuracy(bundle, test_split)
        detail = {"seed": seed, "base_test_accuracy": base_test_acc, "per_delta": {}}
        for delta in shift.deltas:
            cfg = replace(flow_config, delta=delta)
            grid = evaluate_grid(bundle, val_tune, cfg, seed=seed)
            t_steps, t_js = select_thresholds(grid)
            tuned = replace(cfg, t_steps=t_steps, t_js=t_js)
            stats, _ = correction_stats(bundle, test_split, tuned, seed=seed)
            detail["per_delta"][delta] = {
                "t_steps": t_steps,
                "t_js": t_js,
                "val_improvement_pp": float(grid.improvement.max()),
                "flow_test_accuracy": stats.flow_accuracy,
            }
        per_seed.append(detail)

    rows = []
    base_accs = np.array([d["base_test_accuracy"] for d in per_seed])
    for delta in shift.deltas:
        flow_accs = np.array([d["per_delta"][delta]["flow_test_accuracy"] for d in per_seed])
        impr = (flow_accs - base_accs) * 100.0
        rows.append(
            {
                "delta": delta,
                "initial_acc_mean": float(base_accs.mean() * 100.0),
                "initial_acc_std": float(base_accs.std() * 100.0),
                "flow_acc_mean": float(flow_accs.mean() * 100.0),
                "flow_acc_std": float(flow_accs.std() * 100.0),
                "improvement_mean": float(impr.mean()),
                "improvement_std": float(impr.std()),
            }
        )
    return {"rows": rows, "per_seed": per_seed}


# ── bundled benchmark pipeline ──────────────────────────────────────────────

#: Training recipe for the bundled 3-class benchmark. The architecture is
#: deliberately small so train and validation accuracy stay close — a big
#: train/val gap miscalibrates the correctness scores.
BENCHMARK_ARCH = dict(
    n_features=8, encoder_hidden=(16,), label_hidden=16,
    correction_hidden=32, dropout_rate=0.3,
)
BENCHMARK_BASE_EPOCHS = 20
BENCHMARK_CORRECTION_EPOCHS = 10


def benchmark_pipeline(
    seed: int,
    dataset: Dataset | None = None,
    flow_config: StoppingConfig | None = None,
) -> dict:
    """gen -> train base -> train correction -> tune -> eval on the
    bundled benchmark, returning the bundle, grid, tuned thresholds, and
    validation/test accuracies for one seed."""
    if dataset is None:
        dataset = generate_synthetic(benchmark_spec(seed=seed))
    flow_config = flow_config or StoppingConfig(t_steps=0)
    bundle = train_base(
        dataset, TrainConfig(epochs=BENCHMARK_BASE_EPOCHS, seed=seed), **BENCHMARK_ARCH
    )
    bundle = train_correction(
        bundle, dataset, TrainConfig(epochs=BENCHMARK_CORRECTION_EPOCHS, seed=seed)
    )
    grid = evaluate_grid(bundle, dataset.splits["val"], flow_config, seed=seed)
    t_steps, t_js = select_thresholds(grid)
    tuned = replace(flow_config, t_steps=t_steps, t_js=t_js)
    stats, _ = correction_stats(bundle, dataset.splits["test"], tuned, seed=seed)
    return {
        "seed": seed,
        "dataset": dataset,
        "bundle": bundle,
        "grid": grid,
        "t_steps": t_steps,
        "t_js": t_js,
        "tuned_config": tuned,
        "base_val_accuracy": grid.base_accuracy,
        "flow_val_accuracy": grid.base_accuracy + grid.improvement.max() / 100.0,
        "base_test_accuracy": stats.base_accuracy,
        "flow_test_accuracy": stats.flow_accuracy,
        "test_stats": stats,
    }


# ── result files ────────────────────────────────────────────────────────────

def provenance_digest(payload: dict) -> str:
    return hashlib.sha1(
        json.dumps(payload, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()[:12]


def write_rows_csv(path, rows: list[dict]) -> None:
    if not rows:
        raise ConfigError("no rows to write")
    keys = list(rows[0].keys())
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(keys) + "\n")
        for row in rows:
            fh.write(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k]) for k in keys) + "\n")


def write_manifest(path, config: dict, seeds) -> None:
    doc = {
        "config": config,
        "seeds": list(seeds),
        "provenance": provenance_digest({"config": config, "seeds": list(seeds)}),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
