"""Dense vector math and tape-based reverse-mode differentiation.

Everything runs on float64 numpy arrays: 1-D vectors for activations, 2-D
matrices for layer weights. The networks in this package are small enough
that a vector-level tape (one record per layer op, not per scalar) is both
simple and fast, and it gives us gradients with respect to *intermediate*
values — the label logits, the raw input — not just parameters.

Two API layers:

* plain functions (:func:`dense`, :func:`selu`, :func:`softmax`,
  :func:`sigmoid`, :func:`dropout`) compute forward values only;
* :class:`Tape` records the same ops on :class:`Node` objects so a single
  :meth:`Tape.backward` call can push gradients back to designated leaves.

Tapes are single-use and confined to one evaluation. Several tapes may run
concurrently over shared read-only parameter arrays.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, NumericsError

# Constants from the self-normalizing-networks formulation of SELU, at full
# double precision (the extra digits round into the same float64).
SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericsError(f"{op} produced a non-finite value")
    return arr


# ── plain forward ops ───────────────────────────────────────────────────────

def dense(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map weights @ x + bias with shape validation."""
    if weights.ndim != 2 or x.ndim != 1 or bias.ndim != 1:
        raise DimensionError(
            f"dense expects matrix/vector/vector, got ndim "
            f"{weights.ndim}/{x.ndim}/{bias.ndim}"
        )
    if weights.shape[1] != x.shape[0]:
        raise DimensionError(
            f"dense: weights have {weights.shape[1]} columns but input has "
            f"length {x.shape[0]}"
        )
    if bias.shape[0] != weights.shape[0]:
        raise DimensionError(
            f"dense: bias length {bias.shape[0]} != weights rows {weights.shape[0]}"
        )
    return _check_finite(weights @ x + bias, "dense")


def selu(x: np.ndarray) -> np.ndarray:
    """Scaled exponential linear unit, elementwise."""
    return _check_finite(
        np.where(x > 0.0, SELU_LAMBDA * x, SELU_LAMBDA * SELU_ALPHA * np.expm1(x)),
        "selu",
    )


def _selu_deriv(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, SELU_LAMBDA, SELU_LAMBDA * SELU_ALPHA * np.exp(x))


#: Bounds keeping probabilities inside the open interval (0, 1) even when
#: float64 rounding would saturate an entry to exactly 0 or 1.
_PROB_FLOOR = 5e-324
_PROB_CEIL = float(np.nextafter(1.0, 0.0))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Probability vector from logits, stabilized by max subtraction.
    Entries stay strictly inside (0, 1): extreme logits saturate to the
    closest representable values instead of exact 0/1 (one-ulp effect)."""
    if logits.size == 0:
        raise DimensionError("softmax of an empty vector")
    shifted = logits - np.max(logits)
    e = np.exp(shifted)
    return _check_finite(np.clip(e / e.sum(), _PROB_FLOOR, _PROB_CEIL), "softmax")


def sigmoid(u: np.ndarray) -> np.ndarray:
    """Numerically safe logistic function, elementwise, clamped to the
    open interval (0, 1) like :func:`softmax`."""
    out = np.empty_like(u, dtype=np.float64)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return _check_finite(np.clip(out, _PROB_FLOOR, _PROB_CEIL), "sigmoid")


def dropout(x: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted dropout: zero entries with probability `rate`, scale
    survivors by 1/(1-rate). Identity (a copy) when rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return x.copy()
    mask = (rng.random(x.shape[0]) >= rate) / (1.0 - rate)
    return x * mask


def log_sum_exp(z: np.ndarray) -> float:
    m = float(np.max(z))
    return m + math.log(float(np.exp(z - m).sum()))


# ── tape ────────────────────────────────────────────────────────────────────

class Node:
    """A value recorded on a tape. `grad` stays None until backward
    reaches it."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad: np.ndarray | None = None

    def grad_or_zeros(self) -> np.ndarray:
        return self.grad if self.grad is not None else np.zeros_like(self.value)


def _val(a) -> np.ndarray:
    return a.value if isinstance(a, Node) else a


def _acc(target, g: np.ndarray) -> None:
    if isinstance(target, Node):
        target.grad = g.copy() if target.grad is None else target.grad + g


class Tape:
    """Records primitive ops in execution order; `backward` replays them
    reversed. Op arguments may be Nodes (tracked) or plain arrays
    (constants) — gradients accumulate only into Nodes."""

    def __init__(self):
        self._records: list[tuple[Node, object]] = []

    def watch(self, array: np.ndarray) -> Node:
        """Designate a leaf whose gradient the caller will read."""
        return Node(np.asarray(array, dtype=np.float64))

    def _emit(self, value: np.ndarray, back) -> Node:
        node = Node(value)
        self._records.append((node, back))
        return node

    # each op mirrors its plain-function counterpart

    def dense(self, x, weights, bias) -> Node:
        xv, wv, bv = _val(x), _val(weights), _val(bias)
        out = dense(xv, wv, bv)

        def back(g):
            _acc(x, wv.T @ g)
            _acc(weights, np.outer(g, xv))
            _acc(bias, g)

        return self._emit(out, back)

    def selu(self, x) -> Node:
        xv = _val(x)
        out = selu(xv)
        dv = _selu_deriv(xv)

        def back(g):
            _acc(x, g * dv)

        return self._emit(out, back)

    def softmax(self, z) -> Node:
        zv = _val(z)
        y = softmax(zv)

        def back(g):
            _acc(z, y * (g - float(np.dot(g, y))))

        return self._emit(y, back)

    def sigmoid(self, u) -> Node:
        uv = _val(u)
        y = sigmoid(uv)

        def back(g):
            _acc(u, g * y * (1.0 - y))

        return self._emit(y, back)

    def concat(self, *parts) -> Node:
        vals = [_val(p) for p in parts]
        out = np.concatenate(vals)
        offsets = np.cumsum([0] + [v.shape[0] for v in vals])

        def back(g):
            for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                _acc(part, g[lo:hi])

        return self._emit(out, back)

    def add(self, a, b) -> Node:
        out = _check_finite(_val(a) + _val(b), "add")

        def back(g):
            _acc(a, g)
            _acc(b, g)

        return self._emit(out, back)

    def mul(self, a, b) -> Node:
        av, bv = _val(a), _val(b)
        out = _check_finite(av * bv, "mul")

        def back(g):
            _acc(a, g * bv)
            _acc(b, g * av)

        return self._emit(out, back)

    def pick(self, x, index: int) -> Node:
        xv = _val(x)
        out = xv[index : index + 1].copy()

        def back(g):
            full = np.zeros_like(xv)
            full[index] = g[0]
            _acc(x, full)

        return self._emit(out, back)

    def cross_entropy(self, logits, label: int) -> Node:
        """-log softmax(logits)[label], fused for stability."""
        zv = _val(logits)
        if not 0 <= label < zv.shape[0]:
            raise ContractError(f"label {label} out of range for {zv.shape[0]} classes")
        out = np.array([log_sum_exp(zv) - zv[label]])
        y = softmax(zv)

        def back(g):
            delta = y.copy()
            delta[label] -= 1.0
            _acc(logits, g[0] * delta)

        return self._emit(out, back)

    def bce_with_logit(self, logit, target: float, pos_weight: float = 1.0) -> Node:
        """Binary cross-entropy against sigmoid(logit), fused. `logit`
        is a length-1 node; `pos_weight` scales the target-1 term."""
        uv = _val(logit)
        if uv.shape[0] != 1:
            raise ContractError("bce_with_logit expects a length-1 logit")
        u = float(uv[0])
        # -[t log s + (1-t) log(1-s)] with s = sigmoid(u), weighted
        log_s = -(max(-u, 0.0) + math.log1p(math.exp(-abs(u))))
        log_1ms = -(max(u, 0.0) + math.log1p(math.exp(-abs(u))))
        out = np.array([-(pos_weight * target * log_s + (1.0 - target) * log_1ms)])
        s = 1.0 / (1.0 + math.exp(-u)) if u >= 0 else math.exp(u) / (1.0 + math.exp(u))

        def back(g):
            d = pos_weight * target * (s - 1.0) + (1.0 - target) * s
            _acc(logit, g * d)

        return self._emit(out, back)

    def backward(self, output: Node) -> None:
        """Seed d(output)/d(output) = 1 and sweep the records in exact
        reverse execution order."""
        if output.value.size != 1:
            raise ContractError(
                f"backward needs a scalar output, got size {output.value.size}"
            )
        output.grad = np.ones_like(output.value)
        for node, back in reversed(self._records):
            if node.grad is not None:
                back(node.grad)
