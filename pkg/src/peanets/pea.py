"""Agreement penalties between child models and their weighted sum.

Child models are two noise realizations of the same parent.  Each
configured layer contributes a penalty between the paired layer views
(the layer's activity with its own noise stripped), weighted per layer.
Passing ``None`` as the first member of the noise pair compares the
unperturbed parent against one child instead, which is the variant used
for supervised training with a dropout-style objective.

The module also carries an exact small-dimension oracle showing that
the expected KL between a logistic regression's clean and mask-noised
outputs equals the expected log-partition gap, by enumerating every
expectation-preserving mask.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import log_partition, log_softmax
from .errors import ConfigurationError
from .network import Gradients, LayeredNet, backward, forward

DIRECTION_EPS = 1e-8


class PenaltyKind(Enum):
    KL = "kl"
    TANH_VAR = "tanh_var"
    XENT_VAR = "xent_var"
    DIRECTION = "direction"
    NONE = "none"


OUTPUT_KINDS = (PenaltyKind.KL, PenaltyKind.TANH_VAR, PenaltyKind.XENT_VAR)
HIDDEN_KINDS = (PenaltyKind.DIRECTION, PenaltyKind.NONE)


@dataclass(frozen=True)
class LayerPenalty:
    """One per-layer penalty term: which layer, which kind, what weight."""

    layer: int
    kind: PenaltyKind
    weight: float

    def __post_init__(self):
        if not isinstance(self.kind, PenaltyKind):
            raise ConfigurationError(f"unknown penalty kind {self.kind!r}")
        if self.weight < 0:
            raise ConfigurationError(f"penalty weight must be >= 0, got {self.weight}")


@dataclass(frozen=True)
class PenaltyConfig:
    entries: tuple

    def __init__(self, entries):
        object.__setattr__(self, "entries", tuple(entries))
        for entry in self.entries:
            if not isinstance(entry, LayerPenalty):
                raise ConfigurationError(f"expected LayerPenalty, got {entry!r}")

    @staticmethod
    def output_only(kind: PenaltyKind, weight: float) -> "PenaltyConfig":
        return PenaltyConfig([LayerPenalty(-1, kind, weight)])

    def validate_for_depth(self, num_layers: int) -> list:
        """Resolve negative layer indices and enforce kind placement."""
        resolved = []
        seen = set()
        for entry in self.entries:
            layer = entry.layer + num_layers if entry.layer < 0 else entry.layer
            if not 0 <= layer < num_layers:
                raise ConfigurationError(
                    f"penalty layer {entry.layer} outside net of depth {num_layers}"
                )
            if layer in seen:
                raise ConfigurationError(f"duplicate penalty for layer {layer}")
            seen.add(layer)
            is_output = layer == num_layers - 1
            if is_output and entry.kind not in OUTPUT_KINDS:
                raise ConfigurationError(
                    f"output layer penalty must be one of {[k.value for k in OUTPUT_KINDS]}"
                )
            if not is_output and entry.kind not in HIDDEN_KINDS:
                raise ConfigurationError(
                    f"hidden layer penalty must be one of {[k.value for k in HIDDEN_KINDS]}"
                )
            resolved.append(LayerPenalty(layer, entry.kind, entry.weight))
        return resolved


@dataclass
class PenaltyValue:
    """Weighted total and the unweighted per-layer breakdown."""

    total: float
    breakdown: list  # (layer index, unweighted value) pairs


def _kl_value_grads(a, b):
    lp = log_softmax(a)
    lq = log_softmax(b)
    p = np.exp(lp)
    q = np.exp(lq)
    value = (p * (lp - lq)).sum(axis=-1)
    ga = p * ((lp - lq) - value[..., None])
    gb = q - p
    return value, ga, gb


def _tanh_var_value_grads(a, b):
    ta = np.tanh(a)
    tb = np.tanh(b)
    diff = ta - tb
    value = (diff * diff).sum(axis=-1)
    ga = 2.0 * diff * (1.0 - ta * ta)
    gb = -2.0 * diff * (1.0 - tb * tb)
    return value, ga, gb


def _xent_var_value_grads(a, b):
    lp = log_softmax(a)
    lq = log_softmax(b)
    p = np.exp(lp)
    q = np.exp(lq)
    surprisal = -lq
    value = (p * surprisal).sum(axis=-1)
    ga = p * (surprisal - value[..., None])
    gb = q - p
    return value, ga, gb


def _direction_value_grads(a, b):
    dot = (a * b).sum(axis=-1)
    na = np.sqrt((a * a).sum(axis=-1))
    nb = np.sqrt((b * b).sum(axis=-1))
    denom = na * nb + DIRECTION_EPS
    value = 1.0 - dot / denom
    # d/da of dot/denom; the norm-derivative term vanishes for a = 0
    safe_na = np.maximum(na, 1e-300)
    safe_nb = np.maximum(nb, 1e-300)
    ga = -b / denom[..., None] + (dot * nb / (safe_na * denom * denom))[..., None] * a
    gb = -a / denom[..., None] + (dot * na / (safe_nb * denom * denom))[..., None] * b
    return value, ga, gb


_VALUE_GRADS = {
    PenaltyKind.KL: _kl_value_grads,
    PenaltyKind.TANH_VAR: _tanh_var_value_grads,
    PenaltyKind.XENT_VAR: _xent_var_value_grads,
    PenaltyKind.DIRECTION: _direction_value_grads,
}


def penalty_value_and_grads(kind: PenaltyKind, a, b):
    """Penalty value with gradients w.r.t. both arguments.

    Accepts a pair of vectors or row-aligned batches; for a batch the
    value is an array of per-row penalties and gradients stay rowwise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"penalty arguments differ in shape: {a.shape} vs {b.shape}")
    return _VALUE_GRADS[kind](a, b)


def penalty_kl(clean_logits, child_logits) -> float:
    """KL(softmax(clean) || softmax(child)); zero iff the softmaxes agree."""
    value, _, _ = penalty_value_and_grads(PenaltyKind.KL, clean_logits, child_logits)
    return float(value)


def penalty_tanh_var(a, b) -> float:
    """Squared l2 distance of elementwise tanh; symmetric, at most 4 dim."""
    value, _, _ = penalty_value_and_grads(PenaltyKind.TANH_VAR, a, b)
    return float(value)


def penalty_xent_var(a, b) -> float:
    """Cross-entropy of softmax(a) against softmax(b).

    Decomposes exactly as KL(softmax(a) || softmax(b)) plus the entropy
    of softmax(a), so minimizing it both pulls the children together
    and sharpens the first child's distribution.
    """
    value, _, _ = penalty_value_and_grads(PenaltyKind.XENT_VAR, a, b)
    return float(value)


def penalty_direction(a, b) -> float:
    """Cosine disagreement 1 - cos(a, b), in [0, 2] up to epsilon effects."""
    value, _, _ = penalty_value_and_grads(PenaltyKind.DIRECTION, a, b)
    return float(value)


def pea_regularizer(net: LayeredNet, x, noise_pair, config: PenaltyConfig):
    """Agreement penalty between two children of ``net`` and its gradient.

    ``noise_pair`` holds the two realizations; the first may be None to
    compare the unperturbed parent against the second child.  ``x`` may
    be one example or a batch of rows; batches contribute the mean
    penalty per row.  Gradients flow through both forward passes,
    including the sharpening term of the cross-entropy penalty.

    Returns (PenaltyValue, Gradients).
    """
    entries = config.validate_for_depth(net.num_layers)
    noise_a, noise_b = noise_pair
    trace_a = forward(net, x, noise_a)
    trace_b = forward(net, x, noise_b)
    batched = trace_a.logits.ndim == 2
    rows = trace_a.logits.shape[0] if batched else 1

    out_grad_a = np.zeros_like(trace_a.logits)
    out_grad_b = np.zeros_like(trace_b.logits)
    agree_a: dict = {}
    agree_b: dict = {}
    total = 0.0
    breakdown = []
    any_gradient = False
    last = net.num_layers - 1
    for entry in entries:
        if entry.kind is PenaltyKind.NONE:
            breakdown.append((entry.layer, 0.0))
            continue
        va = trace_a.agreement[entry.layer]
        vb = trace_b.agreement[entry.layer]
        value_rows, ga, gb = _VALUE_GRADS[entry.kind](va, vb)
        value = float(value_rows.mean()) if batched else float(value_rows)
        breakdown.append((entry.layer, value))
        total += entry.weight * value
        if entry.weight == 0.0:
            continue
        any_gradient = True
        scale = entry.weight / rows
        if entry.layer == last:
            out_grad_a += scale * ga
            out_grad_b += scale * gb
        else:
            agree_a[entry.layer] = agree_a.get(entry.layer, 0.0) + scale * ga
            agree_b[entry.layer] = agree_b.get(entry.layer, 0.0) + scale * gb

    grads = Gradients.zeros_like(net)
    if any_gradient:
        grads.add_(backward(net, trace_a, out_grad_a, agreement_grads=agree_a))
        grads.add_(backward(net, trace_b, out_grad_b, agreement_grads=agree_b))
    return PenaltyValue(total, breakdown), grads


def dropout_equivalence_gap(theta, x, drop_rate):
    """Expected KL vs expected log-partition gap under exhaustive masks.

    ``theta`` is a classes-by-inputs weight matrix of a softmax
    regression.  Enumerates all keep/drop patterns of the
    expectation-preserving mask (kept entries rescaled by
    1/(1 - drop_rate)) and returns the exactly marginalized pair

        lhs = E[KL(softmax(theta x) || softmax(theta (mask * x)))]
        rhs = E[A(theta (mask * x)) - A(theta x)]

    where A is the log-partition function.  The two agree to roundoff
    because the mask preserves E[mask * x] = x.
    """
    theta = np.asarray(theta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if theta.ndim != 2 or theta.shape[1] != x.shape[0]:
        raise ValueError(f"weights {theta.shape} do not act on input of length {x.shape[0]}")
    d = x.shape[0]
    if d > 20:
        raise ConfigurationError(f"exact mask enumeration needs d <= 20, got {d}")
    if not 0.0 <= drop_rate < 1.0:
        raise ConfigurationError(f"drop_rate must be in [0, 1), got {drop_rate}")

    clean_logits = theta @ x
    clean_lp = log_softmax(clean_logits)
    clean_p = np.exp(clean_lp)
    clean_a = log_partition(clean_logits)

    keep_scale = 1.0 / (1.0 - drop_rate)
    lhs = 0.0
    rhs = 0.0
    for keeps in itertools.product((0, 1), repeat=d):
        keeps = np.array(keeps, dtype=np.float64)
        prob = float(np.prod(np.where(keeps == 1.0, 1.0 - drop_rate, drop_rate)))
        if prob == 0.0:
            continue
        child_logits = theta @ (x * keeps * keep_scale)
        child_lp = log_softmax(child_logits)
        lhs += prob * float((clean_p * (clean_lp - child_lp)).sum())
        rhs += prob * (log_partition(child_logits) - clean_a)
    return lhs, rhs
