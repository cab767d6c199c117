"""The three network parts and their container.

* :class:`Encoder` — small SELU feedforward net mapping a raw input vector
  to a feature vector. A stand-in for whatever backbone produced the
  features; an identity configuration lets pre-extracted features pass
  straight through.
* :class:`LabelModule` — exactly two blocks, each a SELU activation
  followed by a fully-connected layer, producing class logits.
* :class:`CorrectionModule` — consumes ``[class probabilities; dropped-out
  feature vector]`` and emits a correctness score in (0, 1): its estimate
  of the probability that the current argmax is the true class.
* :class:`ModelBundle` — the three parts plus metadata, with bit-exact
  binary persistence.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DimensionError, FormatError

BUNDLE_MAGIC = b"TFBUNDLE"
BUNDLE_VERSION = 1


@dataclass
class Layer:
    weights: np.ndarray  # (fan_out, fan_in)
    bias: np.ndarray  # (fan_out,)

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[0]


def init_layer(rng: np.random.Generator, fan_in: int, fan_out: int) -> Layer:
    """Fan-in-scaled normal init (variance 1/fan_in), zero bias — keeps
    SELU activations in their self-normalizing regime."""
    w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in))
    return Layer(weights=w.astype(np.float64), bias=np.zeros(fan_out))


class Encoder:
    """Feedforward net: dense -> SELU between layers, linear last layer.

    With no hidden layers this is a single affine map, so identity weights
    and zero bias make it a pass-through for pre-extracted features.
    """

    def __init__(self, layers: list[Layer]):
        if not layers:
            raise DimensionError("encoder needs at least one layer")
        self.layers = layers

    @property
    def n_inputs(self) -> int:
        return self.layers[0].fan_in

    @property
    def n_features(self) -> int:
        return self.layers[-1].fan_out

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[0] != self.n_inputs:
            raise DimensionError(
                f"encoder expects input of length {self.n_inputs}, got {x.shape[0]}"
            )
        h = x
        for i, layer in enumerate(self.layers):
            h = ad.dense(h, layer.weights, layer.bias)
            if i < len(self.layers) - 1:
                h = ad.selu(h)
        return h

    def forward_tape(self, tape: ad.Tape, x, nodes: list[tuple] | None = None):
        """Tape-recorded forward. `x` may be a Node (for input gradients)
        or an array; `nodes` optionally supplies watched (w, b) pairs per
        layer so the trainer can read parameter gradients."""
        h = x
        for i, layer in enumerate(self.layers):
            w, b = nodes[i] if nodes is not None else (layer.weights, layer.bias)
            h = tape.dense(h, w, b)
            if i < len(self.layers) - 1:
                h = tape.selu(h)
        return h


class LabelModule:
    """Two SELU->FC blocks mapping features to class logits."""

    def __init__(self, block1: Layer, block2: Layer):
        if block1.fan_out != block2.fan_in:
            raise DimensionError(
                f"label blocks disagree: {block1.fan_out} -> {block2.fan_in}"
            )
        self.block1 = block1
        self.block2 = block2

    @property
    def n_features(self) -> int:
        return self.block1.fan_in

    @property
    def n_classes(self) -> int:
        return self.block2.fan_out

    def logits(self, phi: np.ndarray) -> np.ndarray:
        if phi.shape[0] != self.n_features:
            raise DimensionError(
                f"label module expects {self.n_features} features, got {phi.shape[0]}"
            )
        h = ad.dense(ad.selu(phi), self.block1.weights, self.block1.bias)
        return ad.dense(ad.selu(h), self.block2.weights, self.block2.bias)

    def logits_tape(self, tape: ad.Tape, phi, nodes: list[tuple] | None = None):
        w1, b1 = nodes[0] if nodes is not None else (self.block1.weights, self.block1.bias)
        w2, b2 = nodes[1] if nodes is not None else (self.block2.weights, self.block2.bias)
        h = tape.dense(tape.selu(phi), w1, b1)
        return tape.dense(tape.selu(h), w2, b2)


class CorrectionModule:
    """Correctness estimator: [probs; dropout(features)] -> score in (0, 1).

    Mirrors the label-module block style: two SELU->FC blocks, then a
    scalar head squashed by a sigmoid. Dropout applies only to the feature
    slice of the input, never to the probability slice.
    """

    def __init__(self, block1: Layer, block2: Layer, head: Layer, dropout_rate: float):
        if block1.fan_out != block2.fan_in or block2.fan_out != head.fan_in:
            raise DimensionError("correction layers do not chain")
        if head.fan_out != 1:
            raise DimensionError("correction head must output a single score")
        self.block1 = block1
        self.block2 = block2
        self.head = head
        self.dropout_rate = dropout_rate

    @property
    def n_inputs(self) -> int:
        return self.block1.fan_in

    def score_from_input(self, u: np.ndarray) -> float:
        h = ad.dense(ad.selu(u), self.block1.weights, self.block1.bias)
        h = ad.dense(ad.selu(h), self.block2.weights, self.block2.bias)
        logit = ad.dense(h, self.head.weights, self.head.bias)
        return float(ad.sigmoid(logit)[0])

    def forward_tape(self, tape: ad.Tape, u, nodes: list[tuple] | None = None):
        """Tape-recorded score; returns the pre-sigmoid node and the score
        node (the logit is what the trainer's fused BCE wants)."""
        if nodes is not None:
            (w1, b1), (w2, b2), (wh, bh) = nodes
        else:
            w1, b1 = self.block1.weights, self.block1.bias
            w2, b2 = self.block2.weights, self.block2.bias
            wh, bh = self.head.weights, self.head.bias
        h = tape.dense(tape.selu(u), w1, b1)
        h = tape.dense(tape.selu(h), w2, b2)
        logit = tape.dense(h, wh, bh)
        return logit, tape.sigmoid(logit)


def _validate_probs(y: np.ndarray, n_classes: int) -> None:
    if y.shape[0] != n_classes:
        raise DimensionError(
            f"probability vector has length {y.shape[0]}, expected {n_classes}"
        )
    if abs(float(y.sum()) - 1.0) > 1e-6:
        raise ContractError(
            f"probabilities sum to {float(y.sum()):.8f}, not 1 within 1e-6"
        )


class ModelBundle:
    """Encoder + label module + correction module + metadata.

    Inference on a frozen bundle is read-only and safe for parallel
    callers. Freezing marks the backbone arrays non-writeable, so any
    accidental in-place update raises immediately.
    """

    def __init__(
        self,
        encoder: Encoder,
        label: LabelModule,
        correction: CorrectionModule,
        seeds: dict | None = None,
        provenance: dict | None = None,
    ):
        if encoder.n_features != label.n_features:
            raise DimensionError(
                f"encoder emits {encoder.n_features} features, label module "
                f"expects {label.n_features}"
            )
        expected = label.n_classes + encoder.n_features
        if correction.n_inputs != expected:
            raise DimensionError(
                f"correction module expects {correction.n_inputs} inputs, "
                f"bundle needs {expected} (classes + features)"
            )
        self.encoder = encoder
        self.label = label
        self.correction = correction
        self.seeds = dict(seeds or {})
        self.provenance = dict(provenance or {"trained_base": False, "trained_correction": False})

    # dimensions
    @property
    def n_inputs(self) -> int:
        return self.encoder.n_inputs

    @property
    def n_features(self) -> int:
        return self.encoder.n_features

    @property
    def n_classes(self) -> int:
        return self.label.n_classes

    @property
    def dropout_rate(self) -> float:
        return self.correction.dropout_rate

    # forward contracts
    def encode(self, x: np.ndarray) -> np.ndarray:
        return self.encoder.forward(np.asarray(x, dtype=np.float64))

    def label_logits(self, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Feature vector -> (logits, probabilities)."""
        z = self.label.logits(phi)
        return z, ad.softmax(z)

    def predict(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.label_logits(self.encode(x))

    def correctness_score(
        self,
        y_hat: np.ndarray,
        phi: np.ndarray,
        mode: str = "deterministic",
        seed: int | None = None,
    ) -> float:
        """Score in (0, 1). Deterministic mode disables dropout; sampled
        mode applies a seeded dropout mask to the feature slice only."""
        _validate_probs(y_hat, self.n_classes)
        if phi.shape[0] != self.n_features:
            raise DimensionError(
                f"feature vector has length {phi.shape[0]}, expected {self.n_features}"
            )
        if mode == "deterministic":
            phi_in = phi
        elif mode == "sampled":
            if seed is None:
                raise ContractError("sampled mode needs a seed")
            rng = np.random.default_rng(np.random.SeedSequence(seed))
            phi_in = ad.dropout(phi, self.correction.dropout_rate, rng)
        else:
            raise ContractError(f"unknown scoring mode {mode!r}")
        return self.correction.score_from_input(np.concatenate([y_hat, phi_in]))

    # freezing
    @property
    def backbone_frozen(self) -> bool:
        return not self.encoder.layers[0].weights.flags.writeable

    def _backbone_arrays(self) -> list[np.ndarray]:
        arrays = []
        for layer in self.encoder.layers:
            arrays += [layer.weights, layer.bias]
        for block in (self.label.block1, self.label.block2):
            arrays += [block.weights, block.bias]
        return arrays

    def freeze_backbone(self) -> None:
        """Make encoder and label-module parameters immutable."""
        for arr in self._backbone_arrays():
            arr.flags.writeable = False

    def backbone_checksum(self) -> str:
        h = hashlib.sha256()
        for arr in self._backbone_arrays():
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    # persistence
    def _named_arrays(self) -> list[tuple[str, np.ndarray]]:
        named = []
        for i, layer in enumerate(self.encoder.layers):
            named += [(f"encoder.{i}.weights", layer.weights), (f"encoder.{i}.bias", layer.bias)]
        for i, block in enumerate((self.label.block1, self.label.block2)):
            named += [(f"label.{i}.weights", block.weights), (f"label.{i}.bias", block.bias)]
        for name, layer in (
            ("correction.0", self.correction.block1),
            ("correction.1", self.correction.block2),
            ("correction.head", self.correction.head),
        ):
            named += [(f"{name}.weights", layer.weights), (f"{name}.bias", layer.bias)]
        return named

    def save(self, path) -> None:
        named = self._named_arrays()
        meta = {
            "n_inputs": self.n_inputs,
            "n_features": self.n_features,
            "n_classes": self.n_classes,
            "dropout_rate": self.correction.dropout_rate,
            "encoder_layers": len(self.encoder.layers),
            "frozen": self.backbone_frozen,
            "seeds": self.seeds,
            "provenance": self.provenance,
            "arrays": [{"name": n, "shape": list(a.shape)} for n, a in named],
        }
        blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(BUNDLE_MAGIC)
            fh.write(struct.pack("<HI", BUNDLE_VERSION, len(blob)))
            fh.write(blob)
            for _, arr in named:
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ModelBundle":
        with open(path, "rb") as fh:
            data = fh.read()
        if len(data) < len(BUNDLE_MAGIC) + 6:
            raise FormatError(f"{path}: truncated before header")
        if data[: len(BUNDLE_MAGIC)] != BUNDLE_MAGIC:
            raise FormatError(f"{path}: bad magic, not a model bundle")
        off = len(BUNDLE_MAGIC)
        version, meta_len = struct.unpack_from("<HI", data, off)
        off += 6
        if version != BUNDLE_VERSION:
            raise FormatError(f"{path}: unsupported bundle version {version}")
        if len(data) < off + meta_len:
            raise FormatError(f"{path}: truncated inside metadata")
        try:
            meta = json.loads(data[off : off + meta_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: unreadable metadata ({exc})") from exc
        off += meta_len

        arrays = {}
        for spec in meta["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            nbytes = count * 8
            if len(data) < off + nbytes:
                raise FormatError(f"{path}: truncated inside array {spec['name']!r}")
            arrays[spec["name"]] = (
                np.frombuffer(data[off : off + nbytes], dtype="<f8").reshape(shape).copy()
            )
            off += nbytes
        if off != len(data):
            raise FormatError(f"{path}: {len(data) - off} trailing bytes after arrays")

        def layer(prefix: str) -> Layer:
            wkey, bkey = f"{prefix}.weights", f"{prefix}.bias"
            if wkey not in arrays or bkey not in arrays:
                raise FormatError(f"{path}: missing arrays for {prefix!r}")
            return Layer(weights=arrays[wkey], bias=arrays[bkey])

        encoder = Encoder([layer(f"encoder.{i}") for i in range(meta["encoder_layers"])])
        label = LabelModule(layer("label.0"), layer("label.1"))
        correction = CorrectionModule(
            layer("correction.0"),
            layer("correction.1"),
            layer("correction.head"),
            dropout_rate=float(meta["dropout_rate"]),
        )
        bundle = cls(
            encoder,
            label,
            correction,
            seeds=meta.get("seeds", {}),
            provenance=meta.get("provenance", {}),
        )
        for key, expected in (
            ("n_inputs", bundle.n_inputs),
            ("n_features", bundle.n_features),
            ("n_classes", bundle.n_classes),
        ):
            if meta[key] != expected:
                raise FormatError(
                    f"{path}: metadata field {key}={meta[key]} does not match "
                    f"arrays ({expected})"
                )
        if meta.get("frozen"):
            bundle.freeze_backbone()
        return bundle


def build_bundle(
    n_inputs: int,
    n_features: int,
    n_classes: int,
    encoder_hidden: tuple[int, ...] = (32, 32),
    label_hidden: int = 32,
    correction_hidden: int = 64,
    dropout_rate: float = 0.2,
    seed: int = 0,
) -> ModelBundle:
    """Freshly initialized, untrained bundle with consistent dimensions."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    dims = [n_inputs, *encoder_hidden, n_features]
    encoder = Encoder([init_layer(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)])
    label = LabelModule(
        init_layer(rng, n_features, label_hidden),
        init_layer(rng, label_hidden, n_classes),
    )
    correction = CorrectionModule(
        init_layer(rng, n_classes + n_features, correction_hidden),
        init_layer(rng, correction_hidden, correction_hidden),
        init_layer(rng, correction_hidden, 1),
        dropout_rate=dropout_rate,
    )
    return ModelBundle(
        encoder,
        label,
        correction,
        seeds={"init": seed},
        provenance={"trained_base": False, "trained_correction": False},
    )
