"""Numeric primitives shared by every other module.

Provides numerically stable softmax-family functions (natural log
throughout) and ``RngStream``, a counter-based deterministic random
stream.  All arithmetic is double precision; gradient checks at 1e-4
relative tolerance are not feasible in single precision.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Generator, Philox

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# Floor applied to the second argument of the KL divergence before
# dividing; softmax outputs of heavily perturbed models can underflow.
KL_PROB_FLOOR = 1e-12


class SupportError(ValueError):
    """The right-hand distribution vanishes where the left one has mass."""


def _splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _mix_component(state: int, component) -> int:
    if isinstance(component, str):
        value = 0
        for byte in component.encode("utf-8"):
            value = _splitmix64(value ^ byte)
    elif isinstance(component, (int, np.integer)):
        value = int(component) & _MASK64
    else:
        raise TypeError(f"stream components must be int or str, got {type(component)!r}")
    return _splitmix64(state ^ value)


class RngStream:
    """Deterministic random stream keyed by (seed, stream id, counter).

    Each sampling call runs a Philox generator positioned at a counter
    block derived solely from ``(seed, stream, counter)``, so a draw's
    value is independent of evaluation order and of how many workers
    share the overall run.  Two streams with identical (seed, stream id)
    replay bitwise-identical sequences; distinct stream ids give
    independent-appearing sequences.
    """

    __slots__ = ("_seed", "_stream", "_counter")

    def __init__(self, seed: int, stream: int = 0, counter: int = 0):
        self._seed = int(seed) & _MASK64
        self._stream = int(stream) & _MASK64
        self._counter = int(counter)

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def stream(self) -> int:
        return self._stream

    @property
    def counter(self) -> int:
        return self._counter

    def derive(self, *components) -> "RngStream":
        """New stream with an id mixed from this stream's id and ``components``.

        Derivation depends only on (seed, stream id, components), never on
        how much this stream has been consumed.
        """
        state = self._stream
        for i, component in enumerate(components):
            state = _mix_component(state, component)
            state = _splitmix64(state ^ (i + 1))
        return RngStream(self._seed, state)

    def _next_generator(self) -> Generator:
        # Each call gets a disjoint 2^128-block region of the Philox
        # counter space, so per-call draw sizes can never collide.
        key = np.array([self._seed, self._stream], dtype=np.uint64)
        counter = np.array([0, 0, self._counter & _MASK64, 0], dtype=np.uint64)
        self._counter += 1
        return Generator(Philox(key=key, counter=counter))

    def normal(self, size=None, sigma: float = 1.0, mean: float = 0.0):
        return self._next_generator().normal(mean, sigma, size=size)

    def uniform(self, size=None):
        return self._next_generator().random(size=size)

    def integers(self, low, high=None, size=None):
        return self._next_generator().integers(low, high, size=size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._next_generator().choice(n, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self._next_generator().permutation(n)

    def __repr__(self) -> str:
        return f"RngStream(seed={self._seed}, stream={self._stream}, counter={self._counter})"


def _as_finite_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a nonempty rank-1 array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _as_distribution(values, name: str) -> np.ndarray:
    arr = _as_finite_vector(values, name)
    if np.any(arr < 0):
        raise ValueError(f"{name} has negative entries")
    total = arr.sum()
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"{name} sums to {total!r}, expected 1 within 1e-9")
    return arr


def softmax(logits) -> np.ndarray:
    """Stable softmax of a rank-1 logit vector.

    Computed with max-subtraction, so the result is invariant under
    adding a constant to every logit.  Output is nonnegative and sums
    to 1 up to rounding.
    """
    v = _as_finite_vector(logits, "logits")
    shifted = np.exp(v - v.max())
    return shifted / shifted.sum()


def log_partition(logits) -> float:
    """log(sum(exp(logits))) with max-subtraction for stability."""
    v = _as_finite_vector(logits, "logits")
    m = v.max()
    return float(m + np.log(np.exp(v - m).sum()))


def log_softmax(logits) -> np.ndarray:
    """Stable log-softmax along the last axis; accepts rank 1 or 2."""
    v = np.asarray(logits, dtype=np.float64)
    shifted = v - v.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def kl_divergence(p, q, floor: float = KL_PROB_FLOOR) -> float:
    """KL divergence sum(p * log(p / q)) in nats.

    ``q`` is floored at ``floor`` before dividing.  Raises
    :class:`SupportError` if ``p`` carries mass where ``q`` does not
    exceed the floor, since the divergence is unbounded there.
    """
    p_arr = _as_distribution(p, "p")
    q_arr = _as_distribution(q, "q")
    if p_arr.shape != q_arr.shape:
        raise ValueError(f"shape mismatch: {p_arr.shape} vs {q_arr.shape}")
    if np.any((p_arr > 0) & (q_arr <= floor)):
        raise SupportError("p has mass where q is at or below the probability floor")
    q_safe = np.maximum(q_arr, floor)
    mask = p_arr > 0
    value = float(np.sum(p_arr[mask] * (np.log(p_arr[mask]) - np.log(q_safe[mask]))))
    # Rounding can leave a ~1e-16 negative residue when p is close to q.
    return value if value > 0.0 else 0.0


def entropy(p) -> float:
    """Shannon entropy -sum(p * log(p)) in nats, with 0*log(0) = 0."""
    p_arr = _as_distribution(p, "p")
    mask = p_arr > 0
    value = float(-np.sum(p_arr[mask] * np.log(p_arr[mask])))
    return value if value > 0.0 else 0.0
