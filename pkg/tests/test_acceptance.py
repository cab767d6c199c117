"""Acceptance suite: every release-gating criterion, one test each,
with a printed pass/fail line per criterion.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest

from thoughtflow import autodiff as ad
from thoughtflow.data import Split, SyntheticSpec, generate_synthetic
from thoughtflow.experiments import (
    AttackConfig,
    ShiftConfig,
    benchmark_pipeline,
    correction_stats,
    fgsm_attack,
    fgsm_sweep,
    label_shift_run,
    write_rows_csv,
)
from thoughtflow.flow import (
    SQRT_LN2,
    StoppingConfig,
    _score_and_gradient,
    flow_prediction,
    js_distance,
    replay_step_values,
    run_flow,
    score_and_gradient_samples,
)
from thoughtflow.model import build_bundle
from thoughtflow.training import (
    TrainConfig,
    auc_score,
    correction_scores,
    make_correctness_labels,
    train_base,
    train_correction,
)
from thoughtflow.tuning import evaluate_grid, select_thresholds
from tests.test_autodiff import central_diff, rel_err
from tests.test_flow import fsum_js


def report(name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[ACCEPTANCE] {name}: {status}{suffix}")


@pytest.fixture(scope="module")
def pipeline5():
    """The bundled benchmark pipeline for seeds 0..4, with wall time."""
    start = time.monotonic()
    results = [benchmark_pipeline(seed) for seed in range(5)]
    elapsed = time.monotonic() - start
    return {"results": results, "elapsed": elapsed}


def random_micro_bundle(rng: np.random.Generator, dropout_rate: float):
    c = int(rng.integers(2, 5))
    d = int(rng.integers(2, 7))
    m = int(rng.integers(2, 5))
    bundle = build_bundle(
        n_inputs=m,
        n_features=d,
        n_classes=c,
        encoder_hidden=(4,),
        label_hidden=4,
        correction_hidden=8,
        dropout_rate=dropout_rate,
        seed=int(rng.integers(0, 2**31)),
    )
    # scale the correction head so scores leave the 0.5 plateau and
    # gradients have useful magnitude
    bundle.correction.head.weights *= 4.0
    return bundle, m


# ── criterion 1: gradient correctness ───────────────────────────────────────

def test_gradient_correctness_against_finite_differences():
    start = time.monotonic()
    rng = np.random.default_rng(100)
    worst = 0.0
    for trial in range(100):
        c = int(rng.integers(2, 7))
        d = int(rng.integers(2, 10))
        bundle = build_bundle(
            n_inputs=d, n_features=d, n_classes=c, encoder_hidden=(),
            correction_hidden=12, dropout_rate=0.0, seed=trial,
        )
        phi = rng.normal(size=d)
        z = rng.normal(size=c)

        def fwd(v):
            return bundle.correction.score_from_input(np.concatenate([ad.softmax(v), phi]))

        _, grad = _score_and_gradient(
            bundle, phi, z, StoppingConfig(t_steps=0), seed=0, step_index=0
        )
        worst = max(worst, rel_err(grad, central_diff(fwd, z, h=1e-5)))
    elapsed = time.monotonic() - start
    ok = worst < 1e-5 and elapsed < 10.0
    report("gradient-correctness", ok, f"worst rel err {worst:.2e}, {elapsed:.2f}s")
    assert worst < 1e-5
    assert elapsed < 10.0


# ── criteria 2 + 3: step identity and trace semantics ───────────────────────

def _referent_series(trace):
    if trace.config.js_referent == "consecutive":
        return [s.js_from_prev for s in trace.steps[1:]]
    return [s.js_from_start for s in trace.steps[1:]]


def _soundness_violation(trace):
    cfg = trace.config
    ds = _referent_series(trace)
    n_steps = len(trace.steps) - 1
    if trace.stop_reason == "js-threshold":
        if not ds or ds[-1] <= cfg.t_js:
            return "final distance does not exceed threshold"
        if any(d > cfg.t_js for d in ds[:-1]):
            return "earlier distance already exceeded threshold"
        if n_steps > cfg.t_steps:
            return "ran past the step budget"
    else:
        if n_steps != cfg.t_steps:
            return "budget stop with wrong trace length"
        if any(d > cfg.t_js for d in ds):
            return "budget stop but a distance exceeded the threshold"
    return None


def test_flow_semantics_on_randomized_flows():
    rng = np.random.default_rng(200)
    step_identity_ok = True
    replay_ok = True
    soundness_error = None
    zero_budget_ok = True
    checked_steps = 0

    for flow_no in range(1000):
        dropout_rate = float(rng.choice([0.0, 0.2, 0.5]))
        bundle, m = random_micro_bundle(rng, dropout_rate)
        if flow_no % 50 == 0:  # sprinkle constant-score bundles
            bundle.correction.head.weights[:] = 0.0
            bundle.correction.head.bias[:] = 0.0
        mode = str(rng.choice(["single-gradient", "mcdrop"]))
        config = StoppingConfig(
            t_steps=int(rng.integers(0, 13)),
            t_js=float(rng.uniform(0.0, SQRT_LN2)),
            delta=float(10 ** rng.uniform(-4, -2)),
            epsilon=1e-8,
            mc_samples=int(rng.integers(1, 6)),
            mode=mode,
            js_referent=str(rng.choice(["consecutive", "initial"])),
        )
        x = rng.normal(size=m)
        seed = int(rng.integers(0, 10_000))
        trace = run_flow(bundle, x, config, seed=seed)

        # Eq.-1 identity: recompute the probe distance at each step
        for prev, step in zip(trace.steps, trace.steps[1:]):
            _, grad = _score_and_gradient(
                bundle, trace.features, prev.logits, config, seed, prev.index
            )
            dist = float(
                np.abs(ad.softmax(prev.logits) - ad.softmax(prev.logits + grad)).sum()
            )
            if abs(step.alpha * (dist + config.epsilon) - config.delta) > 1e-12:
                step_identity_ok = False
            checked_steps += 1

        # trace replay: recorded (probs, score) reproduce exactly
        for (y, s), step in zip(replay_step_values(bundle, trace), trace.steps):
            if not np.array_equal(y, step.probs) or s != step.score:
                replay_ok = False

        if soundness_error is None:
            soundness_error = _soundness_violation(trace)

        if config.t_steps == 0:
            z, y = bundle.predict(x)
            if len(trace.steps) != 1 or flow_prediction(trace) != int(np.argmax(y)):
                zero_budget_ok = False

    report(
        "step-identity",
        step_identity_ok,
        f"alpha*(dist+eps)=delta over {checked_steps} recomputed steps",
    )
    report(
        "flow-semantics",
        replay_ok and soundness_error is None and zero_budget_ok,
        soundness_error or "replay exact, stop reasons sound, zero budget = base",
    )
    assert step_identity_ok
    assert replay_ok
    assert soundness_error is None, soundness_error
    assert zero_budget_ok


# ── criterion 4: JS distance ────────────────────────────────────────────────

def test_js_distance_oracle_agreement():
    rng = np.random.default_rng(300)
    worst = 0.0
    symmetric = True
    for _ in range(1000):
        c = int(rng.integers(2, 12))
        p = ad.softmax(rng.normal(scale=rng.uniform(0.5, 6.0), size=c))
        q = ad.softmax(rng.normal(scale=rng.uniform(0.5, 6.0), size=c))
        d = js_distance(p, q)
        worst = max(worst, abs(d - fsum_js(p, q)))
        if d != js_distance(q, p):
            symmetric = False
    zero_ok = js_distance(np.array([0.3, 0.7]), np.array([0.3, 0.7])) == 0.0
    max_err = abs(js_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) - SQRT_LN2)
    ok = worst < 1e-10 and symmetric and zero_ok and max_err < 1e-10
    report(
        "js-distance",
        ok,
        f"oracle dev {worst:.2e}, disjoint-support dev {max_err:.2e}",
    )
    assert ok


# ── criterion 5: tuner ──────────────────────────────────────────────────────

def test_tuner_grid_matches_brute_force(pipeline5):
    result = pipeline5["results"][0]
    bundle, dataset = result["bundle"], result["dataset"]
    val = dataset.splits["val"]
    sub = Split(ids=val.ids[:60], x=val.x[:60], y=val.y[:60])
    config = StoppingConfig(t_steps=0)
    grid = evaluate_grid(bundle, sub, config, seed=0)

    k0 = int(np.nonzero(grid.t_steps_values == 0)[0][0])
    zero_row_ok = bool(np.all(grid.improvement[:, k0] == 0.0))

    rng = np.random.default_rng(400)
    mismatches = 0
    for _ in range(50):
        j = int(rng.integers(0, 100))
        k = int(rng.integers(0, 100))
        cell_cfg = replace(
            config,
            t_steps=int(grid.t_steps_values[k]),
            t_js=float(grid.t_js_values[j]),
        )
        correct = 0
        for i in range(len(sub)):
            trace = run_flow(bundle, sub.x[i], cell_cfg, seed=0 + i)
            correct += int(flow_prediction(trace) == int(sub.y[i]))
        brute = correct / len(sub)
        derived = grid.base_accuracy + grid.improvement[j, k] / 100.0
        if abs(brute - derived) > 1e-12:
            mismatches += 1

    selected_ok = all(
        r["grid"].improvement.max() >= 0.0 for r in pipeline5["results"]
    )
    ok = mismatches == 0 and zero_row_ok and selected_ok
    report(
        "tuner",
        ok,
        f"{mismatches}/50 cell mismatches, zero row exact, selection >= 0 on 5 seeds",
    )
    assert ok


# ── criterion 6: desk-scale pipeline ────────────────────────────────────────

def test_benchmark_pipeline_five_seeds(pipeline5):
    results = pipeline5["results"]
    elapsed = pipeline5["elapsed"]

    base_band_ok = all(0.70 <= r["base_val_accuracy"] <= 0.90 for r in results)
    aucs = []
    for r in results:
        val = r["dataset"].splits["val"]
        targets = make_correctness_labels(r["bundle"], val)
        aucs.append(auc_score(correction_scores(r["bundle"], val), targets))
    auc_ok = all(a > 0.5 for a in aucs)
    val_ok = all(r["flow_val_accuracy"] >= r["base_val_accuracy"] for r in results)
    mean_base = float(np.mean([r["base_test_accuracy"] for r in results]))
    mean_flow = float(np.mean([r["flow_test_accuracy"] for r in results]))
    test_ok = mean_flow >= mean_base - 0.005
    time_ok = elapsed < 300.0

    ok = base_band_ok and auc_ok and val_ok and test_ok and time_ok
    report(
        "benchmark-pipeline",
        ok,
        f"{elapsed:.0f}s, AUC min {min(aucs):.3f}, mean test flow-base "
        f"{100 * (mean_flow - mean_base):+.2f}pp",
    )
    assert base_band_ok, [r["base_val_accuracy"] for r in results]
    assert auc_ok, aucs
    assert val_ok
    assert test_ok, (mean_base, mean_flow)
    assert time_ok, elapsed


# ── criterion 7: mcdrop gradients ───────────────────────────────────────────

def test_mcdrop_gradient_sampling(small_dataset):
    # dropout 0: mcdrop is bitwise identical to the single gradient
    bundle0 = train_base(
        small_dataset, TrainConfig(epochs=5, seed=21),
        n_features=8, encoder_hidden=(16,), label_hidden=16,
        correction_hidden=32, dropout_rate=0.0,
    )
    bundle0 = train_correction(bundle0, small_dataset, TrainConfig(epochs=5, seed=21))
    split = small_dataset.splits["val"]
    bitwise_ok = True
    for i in range(10):
        t_single = run_flow(bundle0, split.x[i], StoppingConfig(t_steps=10), seed=i)
        t_mc = run_flow(
            bundle0, split.x[i],
            StoppingConfig(t_steps=10, mode="mcdrop", mc_samples=5), seed=i,
        )
        for a, b in zip(t_single.steps, t_mc.steps):
            if not np.array_equal(a.logits, b.logits) or a.score != b.score:
                bitwise_ok = False

    # dropout 0.2: the five sampled gradients differ on >= 99% of steps
    bundle2 = train_base(
        small_dataset, TrainConfig(epochs=5, seed=22),
        n_features=8, encoder_hidden=(16,), label_hidden=16,
        correction_hidden=32, dropout_rate=0.2,
    )
    bundle2 = train_correction(bundle2, small_dataset, TrainConfig(epochs=5, seed=22))
    total = varied = 0
    for i in range(40):
        phi = bundle2.encode(split.x[i])
        z, _ = bundle2.label_logits(phi)
        for step_index in range(12):
            samples = score_and_gradient_samples(
                bundle2, phi, z, mc_samples=5, seed=i, step_index=step_index
            )
            grads = [g for _, g in samples]
            total += 1
            if any(not np.array_equal(grads[0], g) for g in grads[1:]):
                varied += 1
    fraction = varied / total
    ok = bitwise_ok and fraction >= 0.99
    report("mcdrop", ok, f"rate-0 bitwise match, varied on {100 * fraction:.1f}% of steps")
    assert bitwise_ok
    assert fraction >= 0.99


# ── criterion 8: gradient-sign attack ───────────────────────────────────────

def test_fgsm_sweep_and_identity(pipeline5, tmp_path):
    result = pipeline5["results"][0]
    bundle, dataset = result["bundle"], result["dataset"]
    test = dataset.splits["test"]

    identity_ok = all(
        np.array_equal(fgsm_attack(bundle, test.x[i], int(test.y[i]), 0.0), test.x[i])
        for i in range(len(test))
    )

    config = StoppingConfig(t_steps=25, t_js=SQRT_LN2)
    rows = fgsm_sweep(
        bundle, test, config, AttackConfig((0.0, 0.001, 0.01, 0.1, 1.0)), seed=0
    )
    clean_stats, _ = correction_stats(bundle, test, config, seed=0)
    zero_row_ok = (
        rows[0]["base_accuracy"] == clean_stats.base_accuracy
        and rows[0]["flow_accuracy"] == clean_stats.flow_accuracy
    )
    degradation_ok = rows[-1]["base_accuracy"] < rows[0]["base_accuracy"]

    csv_path = tmp_path / "fgsm.csv"
    write_rows_csv(csv_path, rows)
    header = csv_path.read_text().splitlines()[0]
    csv_ok = header == "eps,base_accuracy,flow_accuracy,improvement_pp"

    ok = identity_ok and zero_row_ok and degradation_ok and csv_ok
    report(
        "fgsm",
        ok,
        f"clean {rows[0]['base_accuracy']:.3f} -> eps=1 {rows[-1]['base_accuracy']:.3f}",
    )
    assert identity_ok
    assert zero_row_ok
    assert degradation_ok
    assert csv_ok


# ── criterion 9: label shift ────────────────────────────────────────────────

def test_label_shift_five_seeds():
    spec = SyntheticSpec(
        n_classes=3,
        n_inputs=6,
        means=[[1.4, 0, 0, 0, 0, 0], [0, 1.4, 0, 0, 0, 0], [0, 0, 1.4, 0, 0, 0]],
        sizes={"train": 300, "val": 160, "test": 160},
        seed=31,
    )
    dataset = generate_synthetic(spec)
    shift = ShiftConfig(
        train_weights=(0.7, 0.2, 0.1),
        eval_weights=(0.1, 0.2, 0.7),
        deltas=(0.001, 0.01),
        seeds=(0, 1, 2, 3, 4),
    )
    result = label_shift_run(
        dataset,
        shift,
        base_train=TrainConfig(epochs=10),
        correction_train=TrainConfig(epochs=6),
    )

    rows = result["rows"]
    table_ok = [r["delta"] for r in rows] == [0.001, 0.01] and all(
        np.isfinite(r[k])
        for r in rows
        for k in ("initial_acc_mean", "initial_acc_std", "flow_acc_mean",
                  "flow_acc_std", "improvement_mean", "improvement_std")
    )
    val_ok = all(
        cell["val_improvement_pp"] >= 0.0
        for detail in result["per_seed"]
        for cell in detail["per_delta"].values()
    )
    ok = table_ok and val_ok
    detail = ", ".join(
        f"delta={r['delta']:g}: {r['improvement_mean']:+.2f}±{r['improvement_std']:.2f}pp"
        for r in rows
    )
    report("label-shift", ok, detail)
    assert table_ok
    assert val_ok
