"""Command-line surface tying the pipeline together.

Every command exits 0 on success and nonzero with a one-line diagnostic
on failure. All randomness is flag-seeded; nothing reads environment
variables, so an invocation is self-describing.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import (
    SyntheticSpec,
    benchmark_spec,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .errors import ConfigError, ThoughtflowError
from .experiments import (
    AttackConfig,
    ShiftConfig,
    correction_stats,
    fgsm_sweep,
    label_shift_run,
    provenance_digest,
    write_manifest,
    write_rows_csv,
)
from .flow import SQRT_LN2, StoppingConfig, flow_prediction, run_flow
from .model import ModelBundle
from .training import MetricsLog, TrainConfig, accuracy, train_base, train_correction
from .tuning import evaluate_grid, select_thresholds, write_grid_csv, write_grid_meta


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v != ""]


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v != "")


def _add_flow_flags(p: argparse.ArgumentParser, with_thresholds: bool = True):
    p.add_argument("--delta", type=float, default=0.001, help="target probability movement per step")
    p.add_argument("--epsilon", type=float, default=1e-8, help="step-width stabilizer")
    p.add_argument("--mc-samples", type=int, default=5)
    p.add_argument("--mode", choices=["single-gradient", "mcdrop"], default="single-gradient")
    p.add_argument("--js-referent", choices=["consecutive", "initial"], default="consecutive")
    p.add_argument("--seed", type=int, default=0)
    if with_thresholds:
        p.add_argument("--t-steps", type=int, default=10)
        p.add_argument("--t-js", type=float, default=SQRT_LN2,
                       help="distance threshold; defaults to sqrt(ln 2) = disabled")


def _flow_config(args, t_steps=None, t_js=None) -> StoppingConfig:
    return StoppingConfig(
        t_steps=int(args.t_steps if t_steps is None else t_steps),
        t_js=float(args.t_js if t_js is None else t_js),
        delta=args.delta,
        epsilon=args.epsilon,
        mc_samples=args.mc_samples,
        mode=args.mode,
        js_referent=args.js_referent,
    )


def _train_config(args, default_epochs) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs if args.epochs is not None else default_epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
        optimizer=args.optimizer,
        pos_weight=getattr(args, "pos_weight", 1.0),
    )


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metrics-log", default=None, help="append per-epoch metrics here")


def _pick_instance(dataset, args):
    split = dataset.splits[args.split]
    if args.id is not None:
        try:
            idx = split.ids.index(args.id)
        except ValueError:
            raise ConfigError(f"id {args.id!r} not found in split {args.split!r}") from None
    else:
        idx = args.index
        if not 0 <= idx < len(split):
            raise ConfigError(f"index {idx} out of range for split of {len(split)}")
    return split, idx


# ── commands ────────────────────────────────────────────────────────────────

def cmd_gen(args) -> int:
    if args.spec:
        spec = SyntheticSpec.from_dict(json.loads(Path(args.spec).read_text()))
    else:
        spec = benchmark_spec(seed=args.seed)
    if args.seed is not None:
        spec.seed = args.seed
    if args.sizes:
        parts = dict(p.split("=") for p in args.sizes.split(","))
        spec.sizes = {k: int(v) for k, v in parts.items()}
    dataset = generate_synthetic(spec)
    save_dataset(dataset, args.out)
    print(
        f"wrote {args.out}: c={dataset.n_classes} m={dataset.n_inputs} "
        f"sizes={dataset.split_sizes()} bayes={dataset.manifest['bayes_accuracy']:.4f}"
    )
    return 0


def cmd_train_base(args) -> int:
    dataset = load_dataset(args.data)
    log = MetricsLog(args.metrics_log)
    bundle = train_base(
        dataset,
        _train_config(args, default_epochs=30),
        n_features=args.features,
        encoder_hidden=_ints(args.encoder_hidden),
        label_hidden=args.label_hidden,
        correction_hidden=args.correction_hidden,
        dropout_rate=args.dropout,
        identity_encoder=args.identity_encoder,
        log=log,
    )
    bundle.save(args.out)
    val = dataset.splits.get("val")
    val_acc = f" val_acc={accuracy(bundle, val):.4f}" if val is not None else ""
    print(
        f"wrote {args.out}: train_acc={bundle.provenance['base_train_accuracy']:.4f}{val_acc}"
    )
    return 0


def cmd_train_correction(args) -> int:
    dataset = load_dataset(args.data)
    bundle = ModelBundle.load(args.bundle)
    log = MetricsLog(args.metrics_log)
    bundle = train_correction(
        bundle, dataset, _train_config(args, default_epochs=10), split=args.split, log=log
    )
    bundle.save(args.out)
    print(f"wrote {args.out}: correction trained on split {args.split!r}")
    return 0


def cmd_tune(args) -> int:
    dataset = load_dataset(args.data)
    bundle = ModelBundle.load(args.bundle)
    config = StoppingConfig(
        t_steps=0,
        delta=args.delta,
        epsilon=args.epsilon,
        mc_samples=args.mc_samples,
        mode=args.mode,
        js_referent=args.js_referent,
    )
    grid = evaluate_grid(bundle, dataset.splits[args.split], config, seed=args.seed)
    write_grid_csv(grid, args.out_grid)
    if args.out_meta:
        write_grid_meta(grid, args.out_meta)
    t_steps, t_js = select_thresholds(grid)
    print(
        f"wrote {args.out_grid}: best t_steps={t_steps} t_js={t_js:.6f} "
        f"improvement={grid.improvement.max():.4f}pp over base {grid.base_accuracy:.4f}"
    )
    return 0


def cmd_flow(args) -> int:
    bundle = ModelBundle.load(args.bundle)
    config = _flow_config(args)
    if args.input:
        x = np.array(_floats(args.input))
        trace = run_flow(bundle, x, config, seed=args.seed, as_features=args.as_features)
    else:
        dataset = load_dataset(args.data)
        split, idx = _pick_instance(dataset, args)
        trace = run_flow(
            bundle,
            split.x[idx],
            config,
            seed=args.seed,
            instance_id=split.ids[idx],
            gold=int(split.y[idx]),
            as_features=args.as_features,
        )
    if args.out:
        trace.save(args.out)
    final = trace.steps[-1]
    print(
        f"instance={trace.instance_id or '-'} base={trace.base_prediction} "
        f"final={flow_prediction(trace)} steps={len(trace.steps)} "
        f"stop={trace.stop_reason} score={final.score:.4f}"
    )
    return 0


def cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    bundle = ModelBundle.load(args.bundle)
    config = _flow_config(args)
    stats, _ = correction_stats(bundle, dataset.splits[args.split], config, seed=args.seed)
    row = stats.as_dict()
    if args.out_csv:
        write_rows_csv(args.out_csv, [row])
    if args.out_manifest:
        write_manifest(args.out_manifest, {"command": "eval", "config": vars(args)}, [args.seed])
    print(
        f"split={args.split} n={stats.n} base={stats.base_accuracy:.4f} "
        f"flow={stats.flow_accuracy:.4f} w2r={stats.wrong_to_right} "
        f"r2w={stats.right_to_wrong} w2w={stats.wrong_to_wrong_changed} "
        f"same={stats.unchanged}"
    )
    return 0


def cmd_attack(args) -> int:
    dataset = load_dataset(args.data)
    bundle = ModelBundle.load(args.bundle)
    config = _flow_config(args, t_js=SQRT_LN2)
    rows = fgsm_sweep(
        bundle,
        dataset.splits[args.split],
        config,
        AttackConfig(eps_levels=tuple(_floats(args.eps))),
        seed=args.seed,
    )
    if args.out_csv:
        write_rows_csv(args.out_csv, rows)
    if args.out_manifest:
        write_manifest(args.out_manifest, {"command": "attack", "eps": args.eps}, [args.seed])
    for row in rows:
        print(
            f"eps={row['eps']:g} base={row['base_accuracy']:.4f} "
            f"flow={row['flow_accuracy']:.4f} improvement={row['improvement_pp']:+.2f}pp"
        )
    return 0


def cmd_shift(args) -> int:
    dataset = load_dataset(args.data)
    shift = ShiftConfig(
        train_weights=tuple(_floats(args.train_weights)),
        eval_weights=tuple(_floats(args.eval_weights)),
        deltas=tuple(_floats(args.deltas)),
        seeds=_ints(args.seeds),
    )
    result = label_shift_run(
        dataset,
        shift,
        base_train=TrainConfig(epochs=args.epochs if args.epochs is not None else 30,
                               learning_rate=args.lr, batch_size=args.batch_size,
                               optimizer=args.optimizer),
        correction_train=TrainConfig(epochs=args.correction_epochs, learning_rate=args.lr,
                                     batch_size=args.batch_size, optimizer=args.optimizer),
        flow_config=StoppingConfig(
            t_steps=0, epsilon=args.epsilon, mc_samples=args.mc_samples,
            mode=args.mode, js_referent=args.js_referent,
        ),
    )
    if args.out_csv:
        write_rows_csv(args.out_csv, result["rows"])
    if args.out_manifest:
        write_manifest(
            args.out_manifest,
            {"command": "shift", "train_weights": args.train_weights,
             "eval_weights": args.eval_weights, "deltas": args.deltas},
            shift.seeds,
        )
    for row in result["rows"]:
        print(
            f"delta={row['delta']:g} initial={row['initial_acc_mean']:.2f}±"
            f"{row['initial_acc_std']:.2f} flow={row['flow_acc_mean']:.2f}±"
            f"{row['flow_acc_std']:.2f} improvement={row['improvement_mean']:+.2f}±"
            f"{row['improvement_std']:.2f}"
        )
    return 0


def cmd_export_trace(args) -> int:
    dataset = load_dataset(args.data)
    bundle = ModelBundle.load(args.bundle)
    config = _flow_config(args)
    split = dataset.splits[args.split]
    wanted = set(args.ids.split(",")) if args.ids else None
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = 0
    for i in range(len(split)):
        if wanted is not None and split.ids[i] not in wanted:
            continue
        trace = run_flow(
            bundle, split.x[i], config, seed=args.seed + i,
            instance_id=split.ids[i], gold=int(split.y[i]),
        )
        trace.save(out_dir / f"{split.ids[i]}.json")
        written += 1
    print(f"wrote {written} trace(s) to {out_dir}")
    return 0


# ── parser ──────────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thoughtflow",
        description="Self-correcting classification: train, refine, tune, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", default=None, help="JSON file with a generator spec")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", default=None, help="e.g. train=500,val=300,test=300")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train-base", help="phase 1: encoder + label module")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--features", type=int, default=16)
    p.add_argument("--encoder-hidden", default="32,32")
    p.add_argument("--label-hidden", type=int, default=32)
    p.add_argument("--correction-hidden", type=int, default=64)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--identity-encoder", action="store_true",
                   help="inputs are pre-extracted features; train only the label module")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train_base)

    p = sub.add_parser("train-correction", help="phase 2: correction module on a frozen backbone")
    p.add_argument("--data", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--pos-weight", type=float, default=1.0)
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train_correction)

    p = sub.add_parser("tune", help="joint grid search over the stopping thresholds")
    p.add_argument("--data", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--out-grid", required=True)
    p.add_argument("--out-meta", default=None)
    p.add_argument("--split", default="val")
    _add_flow_flags(p, with_thresholds=False)
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("flow", help="run the refinement on one instance")
    p.add_argument("--bundle", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--id", default=None)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--input", default=None, help="comma-separated raw input vector")
    p.add_argument("--as-features", action="store_true",
                   help="treat the input as an already-encoded feature vector")
    p.add_argument("--out", default=None, help="write the trace JSON here")
    _add_flow_flags(p)
    p.set_defaults(fn=cmd_flow)

    p = sub.add_parser("eval", help="correction statistics over a split")
    p.add_argument("--data", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out-csv", default=None)
    p.add_argument("--out-manifest", default=None)
    _add_flow_flags(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("attack", help="gradient-sign attack sweep")
    p.add_argument("--data", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--eps", default="0.001,0.01,0.1,1")
    p.add_argument("--out-csv", default=None)
    p.add_argument("--out-manifest", default=None)
    _add_flow_flags(p)
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("shift", help="label-distribution-shift pipeline")
    p.add_argument("--data", required=True)
    p.add_argument("--train-weights", required=True, help="e.g. 70,20,10")
    p.add_argument("--eval-weights", required=True, help="e.g. 10,20,70")
    p.add_argument("--deltas", default="0.001,0.01")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--correction-epochs", type=int, default=10)
    p.add_argument("--out-csv", default=None)
    p.add_argument("--out-manifest", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.add_argument("--mc-samples", type=int, default=5)
    p.add_argument("--mode", choices=["single-gradient", "mcdrop"], default="single-gradient")
    p.add_argument("--js-referent", choices=["consecutive", "initial"], default="consecutive")
    p.set_defaults(fn=cmd_shift)

    p = sub.add_parser("export-trace", help="write trace JSON files for the plotter")
    p.add_argument("--data", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--ids", default=None, help="comma-separated instance ids (default: all)")
    p.add_argument("--out-dir", required=True)
    _add_flow_flags(p)
    p.set_defaults(fn=cmd_export_trace)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ThoughtflowError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
