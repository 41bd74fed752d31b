"""Layered feedforward network with clean and noise-perturbed propagation.

The forward pass records, per layer, both the chained perturbed
activations and an "agreement" view: the layer's activation computed
from the perturbed layers below it but with the layer's own noise
removed.  Agreement penalties compare that view across child models.

Masks are applied post-activation with an expectation-preserving
rescale of 1/(1 - drop_rate), so a masked linear layer keeps its clean
expectation.  Bias noise is added to hidden pre-activations; the output
layer is never perturbed, which makes the final agreement vector equal
to the child model's output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .core import RngStream
from .errors import ConfigurationError
from .noise import NoiseRealization

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class LayerSpec:
    fan_in: int
    fan_out: int
    activation: str = "relu"
    max_norm: float | None = None

    def __post_init__(self):
        if self.fan_in < 1 or self.fan_out < 1:
            raise ConfigurationError(f"layer dimensions must be positive, got {self}")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.max_norm is not None and self.max_norm <= 0:
            raise ConfigurationError(f"max_norm must be positive, got {self.max_norm}")


class LayeredNet:
    """Parameters and layer specs of a parent feedforward model."""

    def __init__(self, specs, weights, biases):
        specs = list(specs)
        if not specs:
            raise ConfigurationError("network needs at least one layer")
        for a, b in zip(specs, specs[1:]):
            if a.fan_out != b.fan_in:
                raise ConfigurationError(
                    f"layer dimensions do not chain: {a.fan_out} -> {b.fan_in}"
                )
        if specs[-1].activation != "identity":
            raise ConfigurationError("output layer must use the identity activation")
        for spec in specs[:-1]:
            if spec.activation != "relu":
                raise ConfigurationError("hidden layers must use the rectified-linear activation")
        for spec, w, b in zip(specs, weights, biases):
            if w.shape != (spec.fan_in, spec.fan_out) or b.shape != (spec.fan_out,):
                raise ConfigurationError(
                    f"parameter shapes {w.shape}/{b.shape} do not match spec {spec}"
                )
        self.specs = specs
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @property
    def num_layers(self) -> int:
        return len(self.specs)

    def layer_sizes(self) -> list:
        return [self.specs[0].fan_in] + [s.fan_out for s in self.specs]

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameter_dict(self) -> dict:
        params = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            params[f"w{i}"] = w
            params[f"b{i}"] = b
        return params

    def get_flat_params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.parameter_dict().values()])

    def set_flat_params(self, vector: np.ndarray) -> None:
        offset = 0
        for arr in self.parameter_dict().values():
            arr.flat[:] = vector[offset : offset + arr.size]
            offset += arr.size

    def copy(self) -> "LayeredNet":
        return LayeredNet(
            self.specs,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def max_column_norm(self) -> float:
        """Largest incoming-weight column norm over constrained layers."""
        worst = 0.0
        for spec, w in zip(self.specs, self.weights):
            if spec.max_norm is not None:
                worst = max(worst, float(np.sqrt((w * w).sum(axis=0)).max()))
        return worst


@dataclass
class Gradients:
    """Per-parameter gradients mirroring a LayeredNet's layout."""

    weights: list
    biases: list

    @staticmethod
    def zeros_like(net: LayeredNet) -> "Gradients":
        return Gradients(
            [np.zeros_like(w) for w in net.weights],
            [np.zeros_like(b) for b in net.biases],
        )

    def add_(self, other: "Gradients", scale: float = 1.0) -> "Gradients":
        for mine, theirs in zip(self.weights, other.weights):
            mine += scale * theirs
        for mine, theirs in zip(self.biases, other.biases):
            mine += scale * theirs
        return self

    def scale_(self, factor: float) -> "Gradients":
        for arr in self.weights:
            arr *= factor
        for arr in self.biases:
            arr *= factor
        return self

    def to_dict(self) -> dict:
        grads = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            grads[f"w{i}"] = w
            grads[f"b{i}"] = b
        return grads

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.to_dict().values()])


@dataclass
class LayerTrace:
    """Record of one forward pass (single example or a stacked batch).

    ``affine`` holds the pre-noise pre-activations, ``noisy_affine`` the
    bias-noised ones, ``activations`` the post-activation values feeding
    the mask, ``outputs`` the masked values feeding the next layer, and
    ``agreement`` the per-layer view with the layer's own noise removed.
    """

    x: np.ndarray
    net_input: np.ndarray
    affine: list = field(default_factory=list)
    noisy_affine: list = field(default_factory=list)
    activations: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    agreement: list = field(default_factory=list)
    noise: NoiseRealization | None = None

    @property
    def logits(self) -> np.ndarray:
        return self.outputs[-1]


def init_network(specs, rng: RngStream) -> LayeredNet:
    """Gaussian(0, 0.01^2) weights; hidden biases 0.1, output biases 0."""
    specs = list(specs)
    weights = []
    biases = []
    for i, spec in enumerate(specs):
        weights.append(rng.normal(size=(spec.fan_in, spec.fan_out), sigma=0.01))
        bias_value = 0.0 if i == len(specs) - 1 else 0.1
        biases.append(np.full(spec.fan_out, bias_value))
    return LayeredNet(specs, weights, biases)


def _check_noise_shapes(net: LayeredNet, noise: NoiseRealization, batched: bool) -> None:
    sizes = net.layer_sizes()
    # a rank-1 realization on a batched input is one child shared across rows
    max_rank = 2 if batched else 1
    if noise.input_mask.ndim > max_rank or noise.input_mask.shape[-1] != sizes[0]:
        raise ValueError(
            f"input mask shape {noise.input_mask.shape} does not fit input width {sizes[0]}"
        )
    if len(noise.hidden_masks) != net.num_layers - 1:
        raise ValueError(
            f"expected {net.num_layers - 1} hidden masks, got {len(noise.hidden_masks)}"
        )
    for mask, width in zip(noise.hidden_masks, sizes[1:-1]):
        if mask.shape[-1] != width:
            raise ValueError(f"hidden mask shape {mask.shape} does not fit width {width}")


def forward(net: LayeredNet, x, noise: NoiseRealization | None = None) -> LayerTrace:
    """Propagate ``x`` through the net, optionally under a noise realization.

    ``x`` may be a single example (rank 1) or a batch of rows (rank 2);
    a batched call needs a realization with stacked (batch-leading)
    arrays.  With ``noise=None`` the unperturbed parent outputs are
    returned and ``agreement[i]`` equals ``activations[i]`` everywhere.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.specs[0].fan_in:
        raise ValueError(f"input width {x.shape[-1]} != fan_in {net.specs[0].fan_in}")
    if x.ndim not in (1, 2):
        raise ValueError(f"input must be rank 1 or 2, got shape {x.shape}")
    if noise is not None:
        _check_noise_shapes(net, noise, batched=x.ndim == 2)

    trace = LayerTrace(x=x, net_input=x, noise=noise)
    if noise is not None:
        z = (x + noise.input_noise) * noise.input_mask
    else:
        z = x
    trace.net_input = z

    last = net.num_layers - 1
    for i, (spec, w, b) in enumerate(zip(net.specs, net.weights, net.biases)):
        a = z @ w + b
        if noise is not None and i < last:
            an = a + noise.bias_noise[i]
        else:
            an = a
        h = np.maximum(an, 0.0) if spec.activation == "relu" else an
        if noise is not None and i < last:
            out = h * noise.hidden_masks[i]
        else:
            out = h
        g = np.maximum(a, 0.0) if spec.activation == "relu" else a
        trace.affine.append(a)
        trace.noisy_affine.append(an)
        trace.activations.append(h)
        trace.outputs.append(out)
        trace.agreement.append(g)
        z = out
    return trace


def backward(
    net: LayeredNet,
    trace: LayerTrace,
    output_grad,
    agreement_grads: dict | None = None,
) -> Gradients:
    """Backpropagate through a recorded trace.

    ``output_grad`` is the loss gradient at the final logits.
    ``agreement_grads`` optionally maps hidden layer indices to loss
    gradients at that layer's agreement activations; those flow through
    the pre-noise pre-activation, so they skip the layer's own mask and
    bias noise but follow the perturbed layers below.  For a batched
    trace, the returned gradients are summed over rows.
    """
    output_grad = np.asarray(output_grad, dtype=np.float64)
    if output_grad.shape != trace.outputs[-1].shape:
        raise ValueError(
            f"output_grad shape {output_grad.shape} != logits shape {trace.outputs[-1].shape}"
        )
    if len(trace.affine) != net.num_layers:
        raise ValueError("trace does not match this network")
    if agreement_grads:
        for idx in agreement_grads:
            if not (0 <= idx < net.num_layers - 1):
                raise ValueError(f"agreement gradient for non-hidden layer {idx}")

    grads = Gradients.zeros_like(net)
    noise = trace.noise
    last = net.num_layers - 1
    # Gradient w.r.t. the (noised, masked) pre-activation of the current layer.
    delta = output_grad
    for i in range(last, -1, -1):
        z_prev = trace.outputs[i - 1] if i > 0 else trace.net_input
        if i < last:
            # Chain branch arrives via the layer's mask and noisy activation.
            dh = delta * noise.hidden_masks[i] if noise is not None else delta
            da = dh * (trace.noisy_affine[i] > 0.0)
            if agreement_grads and i in agreement_grads:
                g = np.asarray(agreement_grads[i], dtype=np.float64)
                da = da + g * (trace.affine[i] > 0.0)
        else:
            da = delta
        if da.ndim == 1:
            grads.weights[i] += np.outer(z_prev, da)
            grads.biases[i] += da
        else:
            grads.weights[i] += z_prev.T @ da
            grads.biases[i] += da.sum(axis=0)
        delta = da @ net.weights[i].T
    return grads


def apply_max_norm(net: LayeredNet) -> None:
    """Project each over-norm incoming-weight column onto the norm ball.

    Columns whose L2 norm exceeds the layer's max_norm are rescaled to
    exactly max_norm; all other columns are untouched.  Idempotent.
    """
    for spec, w in zip(net.specs, net.weights):
        if spec.max_norm is None:
            continue
        norms = np.sqrt((w * w).sum(axis=0))
        over = norms > spec.max_norm
        if np.any(over):
            w[:, over] *= spec.max_norm / norms[over]


def save_checkpoint(net: LayeredNet, path) -> None:
    """Write the net to the flat binary container (see checkpoint module)."""
    spec_text = ",".join(
        f"{s.fan_in}x{s.fan_out}:{s.activation}:{'none' if s.max_norm is None else s.max_norm!r}"
        for s in net.specs
    )
    meta = {"kind": "layered-net", "layers": spec_text}
    arrays = net.parameter_dict()
    checkpoint.save_arrays(path, meta, arrays)


def load_checkpoint(path) -> LayeredNet:
    meta, arrays = checkpoint.load_arrays(path)
    if meta.get("kind") != "layered-net":
        raise checkpoint.CheckpointFormatError(f"not a layered-net checkpoint: {meta!r}")
    specs = []
    for chunk in meta["layers"].split(","):
        dims, activation, max_norm = chunk.split(":")
        fan_in, fan_out = (int(d) for d in dims.split("x"))
        specs.append(
            LayerSpec(
                fan_in,
                fan_out,
                activation,
                None if max_norm == "none" else float(max_norm),
            )
        )
    weights = [arrays[f"w{i}"] for i in range(len(specs))]
    biases = [arrays[f"b{i}"] for i in range(len(specs))]
    return LayeredNet(specs, weights, biases)
