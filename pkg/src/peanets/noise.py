"""The noise process that spawns child models from a parent.

A sampled :class:`NoiseRealization` bundles everything one child model
needs: per-layer keep masks (with expectation-preserving rescale),
Gaussian input and bias draws, and optionally a latent subspace and a
set of weight-fuzz draws.  Sampling is pure given the RNG stream, so
replaying a (seed, stream) replays the realization bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import RngStream
from .errors import ConfigurationError


@dataclass(frozen=True)
class NoiseConfig:
    """Parameters of the noise process.

    Drop rates are probabilities of zeroing a unit; kept units are
    rescaled by 1/(1 - rate) so the masked layer preserves its clean
    expectation.  Sigmas control Gaussian input, bias, and weight-fuzz
    noise; ``subspace_fraction`` is the fraction of latent dimensions a
    sampled subspace keeps.
    """

    drop_rate_input: float = 0.0
    drop_rate_hidden: float = 0.0
    input_sigma: float = 0.0
    bias_sigma: float = 0.0
    weight_sigma: float = 0.0
    subspace_fraction: float = 1.0

    def __post_init__(self):
        for name in ("drop_rate_input", "drop_rate_hidden"):
            rate = getattr(self, name)
            if not (0.0 <= rate < 1.0):
                raise ConfigurationError(f"{name} must be in [0, 1), got {rate}")
        for name in ("input_sigma", "bias_sigma", "weight_sigma"):
            sigma = getattr(self, name)
            if sigma < 0.0:
                raise ConfigurationError(f"{name} must be >= 0, got {sigma}")
        if not (0.0 < self.subspace_fraction <= 1.0):
            raise ConfigurationError(
                f"subspace_fraction must be in (0, 1], got {self.subspace_fraction}"
            )

    @property
    def is_identity(self) -> bool:
        return (
            self.drop_rate_input == 0.0
            and self.drop_rate_hidden == 0.0
            and self.input_sigma == 0.0
            and self.bias_sigma == 0.0
        )


@dataclass
class NoiseRealization:
    """One concrete sample of all perturbations applied to a parent model.

    Mask entries are 0 or 1/(1 - rate).  ``input_noise`` matches the
    input width; ``bias_noise`` holds one vector per hidden layer.
    ``subspace`` and ``weight_fuzz`` are used by the recursive tensor
    network path and stay ``None`` for plain feedforward training.
    """

    input_mask: np.ndarray
    hidden_masks: list = field(default_factory=list)
    input_noise: np.ndarray | None = None
    bias_noise: list | None = None
    subspace: np.ndarray | None = None
    weight_fuzz: dict | None = None


def _sample_mask(rate: float, shape, rng: RngStream) -> np.ndarray:
    if rate == 0.0:
        return np.ones(shape, dtype=np.float64)
    rescale = 1.0 / (1.0 - rate)
    return np.where(rng.uniform(size=shape) >= rate, rescale, 0.0)


def sample_noise(config: NoiseConfig, net_shape, rng: RngStream, batch=None) -> NoiseRealization:
    """Sample one noise realization for a net with the given layer sizes.

    ``net_shape`` lists layer widths from input to output; masks cover
    the input and every hidden layer, bias noise covers hidden layers
    only, the output layer stays unperturbed.  With ``batch`` set, all
    arrays gain a leading batch axis and the realization perturbs each
    row of a batched forward pass independently.
    """
    sizes = [int(s) for s in net_shape]
    if len(sizes) < 2:
        raise ConfigurationError(f"net_shape needs at least input and output sizes, got {sizes}")
    if batch is not None and batch < 1:
        raise ConfigurationError(f"batch must be >= 1, got {batch}")
    hidden_sizes = sizes[1:-1]
    shape_of = (lambda d: (batch, d)) if batch is not None else (lambda d: (d,))

    input_mask = _sample_mask(config.drop_rate_input, shape_of(sizes[0]), rng)
    hidden_masks = [_sample_mask(config.drop_rate_hidden, shape_of(h), rng) for h in hidden_sizes]
    if config.input_sigma > 0.0:
        input_noise = rng.normal(size=shape_of(sizes[0]), sigma=config.input_sigma)
    else:
        input_noise = np.zeros(shape_of(sizes[0]))
    if config.bias_sigma > 0.0:
        bias_noise = [rng.normal(size=shape_of(h), sigma=config.bias_sigma) for h in hidden_sizes]
    else:
        bias_noise = [np.zeros(shape_of(h)) for h in hidden_sizes]
    return NoiseRealization(
        input_mask=input_mask,
        hidden_masks=hidden_masks,
        input_noise=input_noise,
        bias_noise=bias_noise,
    )


def sample_noise_pair(config: NoiseConfig, net_shape, rng: RngStream, batch=None):
    """Two independent realizations from disjoint substreams of ``rng``."""
    return (
        sample_noise(config, net_shape, rng.derive("pair", 0), batch=batch),
        sample_noise(config, net_shape, rng.derive("pair", 1), batch=batch),
    )


def identity_noise(net_shape) -> NoiseRealization:
    """The do-nothing realization: all masks one, all Gaussian draws zero."""
    return sample_noise(NoiseConfig(), net_shape, RngStream(0))


def stack_noise(realizations) -> NoiseRealization:
    """Stack per-example realizations into one batched realization.

    Each array gains a leading batch axis; used by the vectorized
    forward/backward paths so per-example sampling semantics survive
    batching.
    """
    if not realizations:
        raise ValueError("need at least one realization to stack")
    first = realizations[0]
    return NoiseRealization(
        input_mask=np.stack([r.input_mask for r in realizations]),
        hidden_masks=[
            np.stack([r.hidden_masks[i] for r in realizations])
            for i in range(len(first.hidden_masks))
        ],
        input_noise=np.stack([r.input_noise for r in realizations]),
        bias_noise=[
            np.stack([r.bias_noise[i] for r in realizations])
            for i in range(len(first.bias_noise))
        ],
    )


def sample_subspace(n: int, fraction: float, rng: RngStream) -> np.ndarray:
    """Uniformly random sorted k-subset of {0..n-1}, k = round(fraction * n).

    Subset size has a floor of 1.  One subspace is sampled per phrase
    tree and reused for the whole tree.
    """
    if n <= 0:
        raise ValueError(f"latent dimension must be positive, got {n}")
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    k = max(1, int(round(fraction * n)))
    if k >= n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=k, replace=False))


def fuzz_parameters(params: dict, sigma: float, rng: RngStream) -> dict:
    """Copy of ``params`` with elementwise Gaussian(0, sigma^2) added.

    The originals are untouched; draw order follows dict insertion
    order, so replaying the stream replays the perturbation.
    """
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return {name: arr.copy() for name, arr in params.items()}
    return {
        name: arr + rng.normal(size=arr.shape, sigma=sigma)
        for name, arr in params.items()
    }
