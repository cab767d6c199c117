"""Two-phase training.

Phase 1 ("base") fits the encoder and label module on class labels with
cross-entropy. Phase 2 ("correction") freezes those two parts, derives a
binary correctness label per training instance (did the base argmax hit
the gold class?), and fits the correction module on that signal, with
dropout active on the feature slice.

Everything is seeded: parameter init, shuffling, dropout masks. Batch
gradients accumulate in a fixed order, so a seed pins the whole run.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .data import Dataset, Split
from .errors import ConfigError, DivergenceError, LifecycleError, NumericsError
from .model import ModelBundle, build_bundle

METRICS_HEADER = "# thoughtflow-metrics-v1: phase epoch split loss accuracy"


@dataclass
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 0.01
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "adam"  # "adam" | "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    pos_weight: float = 1.0  # weight of the "correct" class in phase 2

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")


class _Optimizer:
    """Adam-style adaptive moments (default) or plain SGD, updating the
    parameter arrays in place."""

    def __init__(self, params: list[np.ndarray], config: TrainConfig):
        self.params = params
        self.config = config
        self.t = 0
        if config.optimizer == "adam":
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        cfg = self.config
        if cfg.optimizer == "sgd":
            for p, g in zip(self.params, grads):
                p -= cfg.learning_rate * g
            return
        self.t += 1
        b1t = 1.0 - cfg.beta1**self.t
        b2t = 1.0 - cfg.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m += (1.0 - cfg.beta1) * (g - m)
            v += (1.0 - cfg.beta2) * (g * g - v)
            p -= cfg.learning_rate * (m / b1t) / (np.sqrt(v / b2t) + cfg.adam_epsilon)


class MetricsLog:
    """Line-oriented training log: the header documents the schema, each
    record is `phase epoch split loss accuracy` separated by single
    spaces, floats printed with repr precision."""

    def __init__(self, path=None):
        self.path = path
        self._wrote_header = False

    def record(self, phase: str, epoch: int, split: str, loss: float, accuracy: float):
        if self.path is None:
            return
        with open(self.path, "a", encoding="utf-8") as fh:
            if not self._wrote_header:
                fh.write(METRICS_HEADER + "\n")
                self._wrote_header = True
            fh.write(f"{phase} {epoch} {split} {loss!r} {accuracy!r}\n")


def _shuffled_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def accuracy(bundle: ModelBundle, split: Split) -> float:
    correct = 0
    for i in range(len(split)):
        _, y = bundle.predict(split.x[i])
        correct += int(np.argmax(y)) == int(split.y[i])
    return correct / len(split)


def mean_cross_entropy(bundle: ModelBundle, split: Split) -> float:
    total = 0.0
    for i in range(len(split)):
        z, _ = bundle.predict(split.x[i])
        total += ad.log_sum_exp(z) - float(z[int(split.y[i])])
    return total / len(split)


def train_base(
    dataset: Dataset,
    config: TrainConfig,
    n_features: int = 16,
    encoder_hidden: tuple[int, ...] = (32, 32),
    label_hidden: int = 32,
    correction_hidden: int = 64,
    dropout_rate: float = 0.2,
    split: str = "train",
    identity_encoder: bool = False,
    log: MetricsLog | None = None,
) -> ModelBundle:
    """Phase 1: fit encoder + label module with cross-entropy.

    With `identity_encoder` the dataset's vectors are treated as
    pre-extracted features: the encoder becomes a fixed pass-through
    (n_features = n_inputs) and only the label module trains."""
    data = dataset.splits[split]
    bundle = build_bundle(
        n_inputs=dataset.n_inputs,
        n_features=dataset.n_inputs if identity_encoder else n_features,
        n_classes=dataset.n_classes,
        encoder_hidden=() if identity_encoder else encoder_hidden,
        label_hidden=label_hidden,
        correction_hidden=correction_hidden,
        dropout_rate=dropout_rate,
        seed=config.seed,
    )
    if identity_encoder:
        layer = bundle.encoder.layers[0]
        layer.weights[:] = np.eye(dataset.n_inputs)
        layer.bias[:] = 0.0
        bundle.provenance["identity_encoder"] = True
    trainable = ([] if identity_encoder else list(bundle.encoder.layers)) + [
        bundle.label.block1,
        bundle.label.block2,
    ]
    params = [a for layer in trainable for a in (layer.weights, layer.bias)]
    opt = _Optimizer(params, config)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 1)))

    for epoch in range(config.epochs):
        epoch_loss = 0.0
        for batch_no, batch in enumerate(_shuffled_batches(len(data), config.batch_size, rng)):
            grads = [np.zeros_like(p) for p in params]
            batch_loss = 0.0
            for i in batch:
                tape = ad.Tape()
                enc_nodes = (
                    None
                    if identity_encoder
                    else [
                        (tape.watch(l.weights), tape.watch(l.bias))
                        for l in bundle.encoder.layers
                    ]
                )
                lab_nodes = [
                    (tape.watch(b.weights), tape.watch(b.bias))
                    for b in (bundle.label.block1, bundle.label.block2)
                ]
                try:
                    phi = bundle.encoder.forward_tape(tape, data.x[i], enc_nodes)
                    z = bundle.label.logits_tape(tape, phi, lab_nodes)
                    loss = tape.cross_entropy(z, int(data.y[i]))
                    tape.backward(loss)
                except NumericsError as exc:
                    raise DivergenceError(
                        f"base training diverged at epoch {epoch}, batch {batch_no}: {exc}"
                    ) from exc
                batch_loss += float(loss.value[0])
                flat = [n for pair in (enc_nodes or []) + lab_nodes for n in pair]
                for g, node in zip(grads, flat):
                    g += node.grad_or_zeros()
            if not np.isfinite(batch_loss):
                raise DivergenceError(
                    f"base training diverged at epoch {epoch}, batch {batch_no}: "
                    f"loss={batch_loss}"
                )
            scale = 1.0 / len(batch)
            opt.step([g * scale for g in grads])
            epoch_loss += batch_loss
        if log is not None:
            log.record("base", epoch, split, epoch_loss / len(data), accuracy(bundle, data))

    bundle.provenance.update(
        trained_base=True,
        base_seed=config.seed,
        base_epochs=config.epochs,
        base_train_accuracy=accuracy(bundle, data),
    )
    bundle.seeds["base"] = config.seed
    return bundle


def make_correctness_labels(bundle: ModelBundle, split: Split) -> np.ndarray:
    """1 where the base argmax (lowest index on ties) hits the gold class,
    else 0. A pure function of (bundle, split)."""
    labels = np.empty(len(split), dtype=np.int64)
    for i in range(len(split)):
        _, y = bundle.predict(split.x[i])
        labels[i] = int(int(np.argmax(y)) == int(split.y[i]))
    return labels


def train_correction(
    bundle: ModelBundle,
    dataset: Dataset,
    config: TrainConfig,
    split: str = "train",
    log: MetricsLog | None = None,
) -> ModelBundle:
    """Phase 2: freeze the backbone, then fit the correction module on
    binary correctness labels with (optionally weighted) cross-entropy.
    Dropout stays active on the feature slice during this phase."""
    if not bundle.provenance.get("trained_base"):
        raise LifecycleError("correction training requires a trained base model")
    bundle.freeze_backbone()
    data = dataset.splits[split]
    targets = make_correctness_labels(bundle, data)

    # backbone is frozen, so features and probabilities are constants
    feats = np.stack([bundle.encode(data.x[i]) for i in range(len(data))])
    probs = np.stack([ad.softmax(bundle.label.logits(feats[i])) for i in range(len(data))])

    blocks = [bundle.correction.block1, bundle.correction.block2, bundle.correction.head]
    params = [a for b in blocks for a in (b.weights, b.bias)]
    opt = _Optimizer(params, config)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 2)))
    rng_dropout = np.random.default_rng(np.random.SeedSequence((config.seed, 3)))
    rate = bundle.correction.dropout_rate

    for epoch in range(config.epochs):
        epoch_loss = 0.0
        n_correct = 0
        for batch_no, batch in enumerate(_shuffled_batches(len(data), config.batch_size, rng)):
            grads = [np.zeros_like(p) for p in params]
            batch_loss = 0.0
            for i in batch:
                u = np.concatenate([probs[i], ad.dropout(feats[i], rate, rng_dropout)])
                tape = ad.Tape()
                nodes = [(tape.watch(b.weights), tape.watch(b.bias)) for b in blocks]
                try:
                    logit, score = bundle.correction.forward_tape(tape, u, nodes)
                    loss = tape.bce_with_logit(
                        logit, float(targets[i]), pos_weight=config.pos_weight
                    )
                    tape.backward(loss)
                except NumericsError as exc:
                    raise DivergenceError(
                        f"correction training diverged at epoch {epoch}, "
                        f"batch {batch_no}: {exc}"
                    ) from exc
                batch_loss += float(loss.value[0])
                n_correct += int((float(score.value[0]) >= 0.5) == bool(targets[i]))
                flat = [n for pair in nodes for n in pair]
                for g, node in zip(grads, flat):
                    g += node.grad_or_zeros()
            if not np.isfinite(batch_loss):
                raise DivergenceError(
                    f"correction training diverged at epoch {epoch}, batch {batch_no}"
                )
            scale = 1.0 / len(batch)
            opt.step([g * scale for g in grads])
            epoch_loss += batch_loss
        if log is not None:
            log.record("correction", epoch, split, epoch_loss / len(data), n_correct / len(data))

    bundle.provenance.update(
        trained_correction=True,
        correction_seed=config.seed,
        correction_epochs=config.epochs,
    )
    bundle.seeds["correction"] = config.seed
    return bundle


def correction_scores(bundle: ModelBundle, split: Split) -> np.ndarray:
    """Deterministic correctness scores over a split."""
    out = np.empty(len(split))
    for i in range(len(split)):
        phi = bundle.encode(split.x[i])
        _, y = bundle.label_logits(phi)
        out[i] = bundle.correctness_score(y, phi)
    return out


def correction_bce(bundle: ModelBundle, split: Split) -> float:
    """Held-out mean binary cross-entropy of the correctness scores."""
    targets = make_correctness_labels(bundle, split)
    scores = np.clip(correction_scores(bundle, split), 1e-12, 1.0 - 1e-12)
    return float(
        -np.mean(targets * np.log(scores) + (1 - targets) * np.log(1.0 - scores))
    )


def auc_score(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-sum AUC of scores as a positive/negative discriminator, with
    average ranks on ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ConfigError("AUC needs both positive and negative instances")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum_pos = float(ranks[labels == 1].sum())
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
