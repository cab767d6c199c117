"""Iterative prediction refinement.

A trained bundle's label logits are reinterpreted as the state of a
dynamic system. Each update asks the correction module "how should the
logits change to look more correct?", takes the gradient of the
correctness score with respect to the logits, and steps along it with a
width chosen so that roughly a fixed amount of probability mass moves per
step. Two stopping criteria bound the walk: a step budget and a
Jensen-Shannon distance threshold.

The whole run is a pure function of (bundle, input, config, seed), so
traces are exactly replayable and arbitrarily many flows can run
concurrently over one read-only bundle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError
from .model import ModelBundle

#: Upper bound of the Jensen-Shannon distance under the natural log.
SQRT_LN2 = math.sqrt(math.log(2.0))

MODES = ("single-gradient", "mcdrop")
REFERENTS = ("consecutive", "initial")


def js_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon distance sqrt(0.5 KL(p||m) + 0.5 KL(q||m)) with
    m = (p+q)/2, natural log. Symmetric, zero iff p == q, at most
    sqrt(ln 2) (attained on disjoint support)."""
    if p.shape[0] != q.shape[0]:
        raise DimensionError(
            f"js_distance: lengths differ ({p.shape[0]} vs {q.shape[0]})"
        )
    m = 0.5 * (p + q)
    kl_pm = float(np.sum(np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0) / np.where(m > 0.0, m, 1.0)), 0.0)))
    kl_qm = float(np.sum(np.where(q > 0.0, q * np.log(np.where(q > 0.0, q, 1.0) / np.where(m > 0.0, m, 1.0)), 0.0)))
    return math.sqrt(max(0.5 * kl_pm + 0.5 * kl_qm, 0.0))


@dataclass(frozen=True)
class StoppingConfig:
    """Everything that governs one flow run.

    t_steps: maximum number of logit updates.
    t_js: Jensen-Shannon distance threshold; sqrt(ln 2) disables it.
    delta: target L1 probability movement per step.
    epsilon: stabilizer added to the probe distance before dividing.
    mc_samples: gradients averaged per step in mcdrop mode.
    mode: "single-gradient" (deterministic) or "mcdrop".
    js_referent: compare each step against the previous step
        ("consecutive") or against the initial prediction ("initial").
    """

    t_steps: int
    t_js: float = SQRT_LN2
    delta: float = 0.001
    epsilon: float = 1e-8
    mc_samples: int = 5
    mode: str = "single-gradient"
    js_referent: str = "consecutive"

    def __post_init__(self):
        if not isinstance(self.t_steps, (int, np.integer)) or self.t_steps < 0:
            raise ConfigError(f"t_steps must be a non-negative integer, got {self.t_steps!r}")
        if not 0.0 <= self.t_js <= SQRT_LN2 + 1e-12:
            raise ConfigError(
                f"t_js={self.t_js} is outside [0, sqrt(ln 2) = {SQRT_LN2:.6f}]; "
                "distances above sqrt(ln 2) cannot occur, so larger thresholds "
                "are almost certainly a mistake"
            )
        if self.delta <= 0.0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        if self.epsilon <= 0.0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.mc_samples < 1:
            raise ConfigError(f"mc_samples must be >= 1, got {self.mc_samples}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.js_referent not in REFERENTS:
            raise ConfigError(
                f"js_referent must be one of {REFERENTS}, got {self.js_referent!r}"
            )


@dataclass
class FlowStep:
    """One state of the flow: logits, their softmax, the correctness
    score evaluated there, and the distances/step width that led here."""

    index: int
    logits: np.ndarray
    probs: np.ndarray
    score: float
    js_from_start: float
    js_from_prev: float | None  # None at step 0
    alpha: float | None  # step width used to reach this state; None at step 0


@dataclass
class FlowTrace:
    """Ordered flow steps 0..n_stop plus how and why the run stopped."""

    steps: list[FlowStep]
    stop_reason: str  # "step-budget" | "js-threshold"
    instance_id: str | None = None
    gold: int | None = None
    config: StoppingConfig | None = None
    seed: int = 0
    features: np.ndarray | None = None  # phi the flow ran on; not serialized

    @property
    def n_stop(self) -> int:
        return len(self.steps) - 1

    @property
    def base_prediction(self) -> int:
        return int(np.argmax(self.steps[0].probs))

    def to_json_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "gold": None if self.gold is None else int(self.gold),
            "stop_reason": self.stop_reason,
            "steps": [
                {
                    "i": s.index,
                    "probs": [float(v) for v in s.probs],
                    "s": float(s.score),
                    "js_from_start": float(s.js_from_start),
                    "js_from_prev": None if s.js_from_prev is None else float(s.js_from_prev),
                    "alpha": None if s.alpha is None else float(s.alpha),
                }
                for s in self.steps
            ],
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True)
            fh.write("\n")


def flow_prediction(trace: FlowTrace) -> int:
    """Class index of the final step's distribution (lowest index wins ties)."""
    return int(np.argmax(trace.steps[-1].probs))


# ── gradient of the correctness score w.r.t. the logits ────────────────────

def _mask_rng(seed: int, step_index: int, sample_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, step_index, sample_index)))


def _single_score_and_gradient(
    bundle: ModelBundle, phi_in: np.ndarray, z: np.ndarray
) -> tuple[float, np.ndarray]:
    """One tape evaluation: s = f_corr([softmax(z); phi_in]) and ds/dz.
    The gradient flows back through the softmax; phi_in is a constant."""
    tape = ad.Tape()
    z_node = tape.watch(z)
    y_node = tape.softmax(z_node)
    u = tape.concat(y_node, phi_in)
    _, score = bundle.correction.forward_tape(tape, u)
    tape.backward(score)
    return float(score.value[0]), z_node.grad_or_zeros()


def score_and_gradient_samples(
    bundle: ModelBundle,
    phi: np.ndarray,
    z: np.ndarray,
    mc_samples: int,
    seed: int,
    step_index: int,
) -> list[tuple[float, np.ndarray]]:
    """The individual mcdrop samples: per sample, a fresh dropout mask on
    the feature slice (seeded by (seed, step, sample)) and one tape pass."""
    rate = bundle.correction.dropout_rate
    out = []
    for k in range(mc_samples):
        phi_k = ad.dropout(phi, rate, _mask_rng(seed, step_index, k))
        out.append(_single_score_and_gradient(bundle, phi_k, z))
    return out


def _score_and_gradient(
    bundle: ModelBundle,
    phi: np.ndarray,
    z: np.ndarray,
    config: StoppingConfig,
    seed: int,
    step_index: int,
) -> tuple[float, np.ndarray]:
    if config.mode == "single-gradient" or bundle.correction.dropout_rate == 0.0:
        # rate-0 masks are the identity, so every mcdrop sample equals the
        # deterministic evaluation; one pass gives the exact mean.
        return _single_score_and_gradient(bundle, phi, z)
    samples = score_and_gradient_samples(
        bundle, phi, z, config.mc_samples, seed, step_index
    )
    score = sum(s for s, _ in samples) / len(samples)
    grad = sum(g for _, g in samples) / len(samples)
    return score, grad


def correctness_gradient(
    bundle: ModelBundle,
    phi: np.ndarray,
    z: np.ndarray,
    mode: str = "single-gradient",
    mc_samples: int = 5,
    seed: int = 0,
    step_index: int = 0,
) -> np.ndarray:
    """Gradient of the correctness score with respect to the logits.

    single-gradient: one deterministic evaluation, dropout off. mcdrop:
    arithmetic mean of `mc_samples` gradients, each under an independent
    seeded dropout mask on the feature slice."""
    cfg = StoppingConfig(t_steps=0, mc_samples=mc_samples, mode=mode)
    _, grad = _score_and_gradient(bundle, phi, z, cfg, seed, step_index)
    return grad


# ── the update rule ─────────────────────────────────────────────────────────

def flow_step(
    z: np.ndarray, gradient: np.ndarray, delta: float, epsilon: float
) -> tuple[np.ndarray, float]:
    """One logit update.

    A probing step of length 1 measures how much probability mass the raw
    gradient would move (L1 distance between softmax before/after); the
    actual step is rescaled so that movement becomes `delta`:

        alpha  = delta / (dist + epsilon)
        z_next = z + alpha * gradient

    A zero gradient moves nothing: dist = 0, alpha = delta/epsilon, and
    z_next == z exactly.
    """
    if gradient.shape[0] != z.shape[0]:
        raise DimensionError(
            f"gradient length {gradient.shape[0]} != logits length {z.shape[0]}"
        )
    y = ad.softmax(z)
    probe = ad.softmax(z + gradient)
    dist = float(np.abs(y - probe).sum())
    alpha = float(delta) / (dist + float(epsilon))
    z_next = z + alpha * gradient
    # exact by construction; a violation means the arithmetic path changed
    assert abs(alpha * (dist + epsilon) - delta) <= 1e-12
    return z_next, alpha


def run_flow(
    bundle: ModelBundle,
    x: np.ndarray,
    config: StoppingConfig,
    seed: int = 0,
    instance_id: str | None = None,
    gold: int | None = None,
    as_features: bool = False,
) -> FlowTrace:
    """Full refinement run for one input.

    Step 0 is the unmodified base prediction. Each iteration evaluates the
    correctness score and its gradient at the current logits, applies
    :func:`flow_step`, and then checks the Jensen-Shannon stopping rule
    for the newly reached distribution — the violating step itself is kept
    in the trace. With t_steps = 0 the trace is just the base prediction.
    """
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}")
    x = np.asarray(x, dtype=np.float64)
    phi = x if as_features else bundle.encode(x)
    if phi.shape[0] != bundle.n_features:
        raise DimensionError(
            f"feature vector has length {phi.shape[0]}, expected {bundle.n_features}"
        )

    z, y = bundle.label_logits(phi)
    score, grad = _score_and_gradient(bundle, phi, z, config, seed, 0)
    steps = [FlowStep(0, z, y, score, js_from_start=0.0, js_from_prev=None, alpha=None)]
    stop_reason = "step-budget"

    for i in range(1, config.t_steps + 1):
        z, alpha = flow_step(z, grad, config.delta, config.epsilon)
        y_new = ad.softmax(z)
        js_prev = js_distance(y, y_new)
        js_start = js_distance(steps[0].probs, y_new)
        score, grad = _score_and_gradient(bundle, phi, z, config, seed, i)
        steps.append(FlowStep(i, z, y_new, score, js_start, js_prev, alpha))
        y = y_new
        referent = js_prev if config.js_referent == "consecutive" else js_start
        if referent > config.t_js:
            stop_reason = "js-threshold"
            break

    return FlowTrace(
        steps=steps,
        stop_reason=stop_reason,
        instance_id=instance_id,
        gold=gold,
        config=config,
        seed=seed,
        features=phi,
    )


def replay_step_values(
    bundle: ModelBundle, trace: FlowTrace
) -> list[tuple[np.ndarray, float]]:
    """Recompute (probs, score) at every recorded logit state, using the
    trace's own mode and seeds. Exact agreement with the recorded values
    is the trace-integrity check."""
    if trace.config is None or trace.features is None:
        raise ConfigError("trace carries no config/features; cannot replay")
    out = []
    for step in trace.steps:
        y = ad.softmax(step.logits)
        s, _ = _score_and_gradient(
            bundle, trace.features, step.logits, trace.config, trace.seed, step.index
        )
        out.append((y, s))
    return out
