"""Momentum SGD loops over child models.

Three objective modes:

* ``SDE``: supervised cross-entropy through one sampled child per
  example, the noise-as-data-augmentation baseline.
* ``PEA_CLEAN_BRANCH``: supervised loss on the unperturbed parent plus
  a weighted agreement penalty between the parent's output and one
  child's.
* ``PEA_SEMISUP``: the SDE loss on labeled examples plus the agreement
  regularizer between child pairs on unlabeled examples, with penalty
  weights ramped linearly from zero over the first ramp epochs.

All randomness derives from the config seed through named substreams,
so a run is reproducible bit for bit; worker counts never enter the
stream derivation.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .core import RngStream, log_softmax
from .errors import ConfigurationError, TrainingDivergedError
from .network import Gradients, LayeredNet, apply_max_norm, backward, forward
from .noise import NoiseConfig, sample_noise, sample_noise_pair
from .pea import LayerPenalty, PenaltyConfig, pea_regularizer

CSV_COLUMNS = ("epoch", "sup_loss", "pea_total", "train_err", "test_err", "seconds")


class Mode(Enum):
    SDE = "sde"
    PEA_CLEAN_BRANCH = "pea_clean_branch"
    PEA_SEMISUP = "pea_semisup"


@dataclass(frozen=True)
class TrainConfig:
    mode: Mode = Mode.SDE
    epochs: int = 50
    batch_size: int = 100
    unlabeled_batch_size: int = 96
    learning_rate: float = 0.1
    momentum: float = 0.9
    lr_decay: float = 0.5
    lr_decay_every_fraction: float = 0.2
    max_norm: float | None = 3.5
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    penalties: PenaltyConfig = field(default_factory=lambda: PenaltyConfig(()))
    ramp_epochs: int = 0
    seed: int = 0
    record_wall_time: bool = False

    def __post_init__(self):
        if not isinstance(self.mode, Mode):
            raise ConfigurationError(f"unknown objective mode {self.mode!r}")
        # epochs 0 is allowed for evaluate-only runs
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if not 0 <= self.ramp_epochs <= max(self.epochs, 0):
            raise ConfigurationError(
                f"ramp_epochs must lie in [0, epochs], got {self.ramp_epochs}"
            )
        if self.batch_size < 1 or self.unlabeled_batch_size < 1:
            raise ConfigurationError("batch sizes must be >= 1")
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigurationError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if not 0.0 < self.lr_decay_every_fraction <= 1.0:
            raise ConfigurationError(
                f"lr_decay_every_fraction must be in (0, 1], got {self.lr_decay_every_fraction}"
            )
        if self.max_norm is not None and self.max_norm <= 0:
            raise ConfigurationError(f"max_norm must be positive, got {self.max_norm}")


@dataclass
class EpochMetrics:
    epoch: int
    sup_loss: float
    pea_total: float
    pea_by_layer: dict
    train_err: float
    test_err: float
    seconds: float


@dataclass
class StepStats:
    """One step's contribution to the epoch aggregate."""

    loss_sum: float = 0.0
    example_count: int = 0
    pea_total: float = 0.0
    pea_breakdown: tuple = ()


class MomentumSGD:
    """Classical momentum: v <- mu v - lr g, theta <- theta + v."""

    def __init__(self, net: LayeredNet, momentum: float):
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(arr) for name, arr in net.parameter_dict().items()}

    def step(self, net: LayeredNet, grads: Gradients, lr: float) -> None:
        grad_dict = grads.to_dict()
        for name, param in net.parameter_dict().items():
            v = self.velocity[name]
            v *= self.momentum
            v -= lr * grad_dict[name]
            param += v


@dataclass
class TrainState:
    optimizer: MomentumSGD
    max_column_norm: float = 0.0


def schedule_lr(config: TrainConfig, epoch: int) -> float:
    """Stepwise decay: multiply by lr_decay every decay-fraction of epochs."""
    if config.epochs <= 0:
        return config.learning_rate
    interval = max(1, int(round(config.lr_decay_every_fraction * config.epochs)))
    return config.learning_rate * config.lr_decay ** (epoch // interval)


def lambda_ramp(config: TrainConfig, epoch: int) -> float:
    """Penalty weight multiplier, linear from 0 at epoch 0 to 1 after ramp_epochs."""
    if config.ramp_epochs <= 0:
        return 1.0
    return min(1.0, epoch / config.ramp_epochs)


def softmax_xent(logits, labels):
    """Mean cross-entropy of softmax(logits) rows against integer labels.

    Returns (loss, gradient w.r.t. logits); gradient rows carry the
    1/batch factor so they feed backward() directly.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels))
    rows = logits.shape[0]
    if labels.shape != (rows,):
        raise ValueError(f"labels shape {labels.shape} does not match {rows} logit rows")
    lp = log_softmax(logits)
    loss = float(-lp[np.arange(rows), labels].mean())
    grad = np.exp(lp)
    grad[np.arange(rows), labels] -= 1.0
    grad /= rows
    return loss, grad


def _require_finite(value: float, what: str, epoch, step) -> None:
    if not np.isfinite(value):
        raise TrainingDivergedError(
            f"non-finite {what} ({value!r}) at epoch {epoch}, step {step}"
        )


def _fresh_state(net: LayeredNet, config: TrainConfig) -> TrainState:
    return TrainState(optimizer=MomentumSGD(net, config.momentum))


def _update(net, grads, lr, state):
    state.optimizer.step(net, grads, lr)
    apply_max_norm(net)
    state.max_column_norm = max(state.max_column_norm, net.max_column_norm())


def step_supervised_sde(net, batch, noise, config, state=None, lr=None, epoch=0, step=0):
    """Cross-entropy through one child per example, then one SGD update."""
    x, y = batch
    if len(np.atleast_1d(y)) == 0:
        raise ValueError("labeled batch must be nonempty")
    state = state or _fresh_state(net, config)
    lr = config.learning_rate if lr is None else lr
    trace = forward(net, x, noise)
    loss, out_grad = softmax_xent(trace.logits, y)
    _require_finite(loss, "supervised loss", epoch, step)
    grads = backward(net, trace, out_grad if trace.logits.ndim == 2 else out_grad[0])
    _update(net, grads, lr, state)
    return StepStats(loss_sum=loss * len(np.atleast_1d(y)), example_count=len(np.atleast_1d(y)))


def step_pea_clean_branch(net, batch, noise, config, state=None, lr=None, epoch=0, step=0):
    """Supervised loss on the parent plus parent-vs-child agreement penalty."""
    x, y = batch
    if len(np.atleast_1d(y)) == 0:
        raise ValueError("labeled batch must be nonempty")
    state = state or _fresh_state(net, config)
    lr = config.learning_rate if lr is None else lr
    clean = forward(net, x, None)
    loss, out_grad = softmax_xent(clean.logits, y)
    _require_finite(loss, "supervised loss", epoch, step)
    grads = backward(net, clean, out_grad if clean.logits.ndim == 2 else out_grad[0])
    value, pea_grads = pea_regularizer(net, x, (None, noise), config.penalties)
    _require_finite(value.total, "agreement penalty", epoch, step)
    grads.add_(pea_grads)
    _update(net, grads, lr, state)
    return StepStats(
        loss_sum=loss * len(np.atleast_1d(y)),
        example_count=len(np.atleast_1d(y)),
        pea_total=value.total,
        pea_breakdown=tuple(value.breakdown),
    )


def _ramped(penalties: PenaltyConfig, ramp: float) -> PenaltyConfig:
    if ramp == 1.0:
        return penalties
    return PenaltyConfig(
        [LayerPenalty(e.layer, e.kind, e.weight * ramp) for e in penalties.entries]
    )


def step_semisup(
    net,
    labeled_batch,
    unlabeled_batch,
    config,
    epoch,
    rng=None,
    state=None,
    lr=None,
    labeled_noise=None,
    unlabeled_pair=None,
    step=0,
):
    """Labeled loss through one child plus ramped agreement on unlabeled rows.

    Noise defaults to fresh draws from ``rng``; tests may pin
    ``labeled_noise`` and ``unlabeled_pair`` to hold the realization
    fixed.  An empty unlabeled batch reduces the step to
    step_supervised_sde on the labeled batch.
    """
    lx, ly = labeled_batch
    n_labeled = len(np.atleast_1d(ly)) if ly is not None else 0
    ux = None if unlabeled_batch is None else np.atleast_2d(unlabeled_batch)
    n_unlabeled = 0 if ux is None or ux.size == 0 else ux.shape[0]
    if n_labeled == 0 and n_unlabeled == 0:
        raise ValueError("semisup step needs a labeled or an unlabeled batch")
    state = state or _fresh_state(net, config)
    lr = config.learning_rate if lr is None else lr
    sizes = net.layer_sizes()

    grads = Gradients.zeros_like(net)
    stats = StepStats()
    if n_labeled:
        lx = np.atleast_2d(np.asarray(lx, dtype=np.float64))
        ly = np.atleast_1d(ly)
        if labeled_noise is None:
            if rng is None:
                raise ValueError("need rng when labeled_noise is not given")
            labeled_noise = sample_noise(
                config.noise, sizes, rng.derive("labeled"), batch=lx.shape[0]
            )
        trace = forward(net, lx, labeled_noise)
        loss, out_grad = softmax_xent(trace.logits, ly)
        _require_finite(loss, "supervised loss", epoch, step)
        grads.add_(backward(net, trace, out_grad))
        stats.loss_sum = loss * n_labeled
        stats.example_count = n_labeled
    if n_unlabeled:
        if unlabeled_pair is None:
            if rng is None:
                raise ValueError("need rng when unlabeled_pair is not given")
            unlabeled_pair = sample_noise_pair(
                config.noise, sizes, rng.derive("unlabeled"), batch=n_unlabeled
            )
        ramped = _ramped(config.penalties, lambda_ramp(config, epoch))
        value, pea_grads = pea_regularizer(net, ux, unlabeled_pair, ramped)
        _require_finite(value.total, "agreement penalty", epoch, step)
        grads.add_(pea_grads)
        stats.pea_total = value.total
        stats.pea_breakdown = tuple(value.breakdown)
    _update(net, grads, lr, state)
    return stats


def evaluate(net: LayeredNet, x, y, chunk: int = 1000) -> float:
    """Clean-forward error rate; argmax ties resolve to the lowest index."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y))
    if y.size == 0:
        raise ValueError("evaluation set must be nonempty")
    wrong = 0
    for start in range(0, x.shape[0], chunk):
        logits = forward(net, x[start : start + chunk], None).logits
        wrong += int((np.argmax(logits, axis=1) != y[start : start + chunk]).sum())
    return wrong / y.size


class _Cycler:
    """Endless deterministic index batches, reshuffled every full pass."""

    def __init__(self, n: int, rng: RngStream):
        self.n = n
        self.rng = rng
        self.passes = 0
        self.pointer = 0
        self.order = rng.derive("pass", 0).permutation(n)

    def take(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            if self.pointer >= self.n:
                self.passes += 1
                self.order = self.rng.derive("pass", self.passes).permutation(self.n)
                self.pointer = 0
            grab = min(k, self.n - self.pointer)
            out.append(self.order[self.pointer : self.pointer + grab])
            self.pointer += grab
            k -= grab
        return np.concatenate(out)


@dataclass
class TrainResult:
    net: LayeredNet
    metrics: list
    max_column_norm: float
    wall_seconds: float

    @property
    def final_train_err(self) -> float:
        return self.metrics[-1].train_err if self.metrics else float("nan")

    @property
    def final_test_err(self) -> float:
        return self.metrics[-1].test_err if self.metrics else float("nan")

    @property
    def best_test_err(self) -> float:
        errs = [m.test_err for m in self.metrics if np.isfinite(m.test_err)]
        return min(errs) if errs else float("nan")


def _apply_config_max_norm(net: LayeredNet, config: TrainConfig) -> None:
    if config.max_norm is None:
        return
    net.specs = [replace(spec, max_norm=config.max_norm) for spec in net.specs]


def train(
    net: LayeredNet,
    train_x,
    train_y,
    config: TrainConfig,
    test_x=None,
    test_y=None,
    unlabeled_x=None,
    csv_path=None,
) -> TrainResult:
    """Run the configured objective for config.epochs over the labeled set.

    Modifies ``net`` in place and returns per-epoch metrics.  The
    semi-supervised mode paces an epoch by the unlabeled set, drawing
    labeled batches cyclically; the other modes ignore ``unlabeled_x``.
    """
    train_x = np.atleast_2d(np.asarray(train_x, dtype=np.float64))
    train_y = np.atleast_1d(np.asarray(train_y))
    if train_x.shape[0] != train_y.size:
        raise ConfigurationError(
            f"{train_x.shape[0]} training rows vs {train_y.size} labels"
        )
    has_unlabeled = unlabeled_x is not None and np.asarray(unlabeled_x).size > 0
    if has_unlabeled:
        unlabeled_x = np.atleast_2d(np.asarray(unlabeled_x, dtype=np.float64))

    _apply_config_max_norm(net, config)
    root = RngStream(config.seed)
    state = _fresh_state(net, config)
    sizes = net.layer_sizes()
    metrics: list = []
    started = time.perf_counter()
    labeled_cycle = None
    if config.mode is Mode.PEA_SEMISUP and has_unlabeled:
        # persists across epochs so labeled coverage keeps rotating
        labeled_cycle = _Cycler(train_x.shape[0], root.derive("labeled-order"))

    for epoch in range(config.epochs):
        epoch_started = time.perf_counter()
        lr = schedule_lr(config, epoch)
        step_stats: list = []

        if config.mode in (Mode.SDE, Mode.PEA_CLEAN_BRANCH):
            order = root.derive("shuffle", epoch).permutation(train_x.shape[0])
            for step, start in enumerate(range(0, order.size, config.batch_size)):
                idx = order[start : start + config.batch_size]
                batch = (train_x[idx], train_y[idx])
                noise = sample_noise(
                    config.noise, sizes, root.derive("noise", epoch, step), batch=idx.size
                )
                if config.mode is Mode.SDE:
                    stats = step_supervised_sde(
                        net, batch, noise, config, state=state, lr=lr, epoch=epoch, step=step
                    )
                else:
                    stats = step_pea_clean_branch(
                        net, batch, noise, config, state=state, lr=lr, epoch=epoch, step=step
                    )
                step_stats.append(stats)
        elif config.mode is Mode.PEA_SEMISUP:
            if has_unlabeled:
                uorder = root.derive("ushuffle", epoch).permutation(unlabeled_x.shape[0])
                spans = range(0, uorder.size, config.unlabeled_batch_size)
                for step, start in enumerate(spans):
                    uidx = uorder[start : start + config.unlabeled_batch_size]
                    lidx = labeled_cycle.take(config.batch_size)
                    stats = step_semisup(
                        net,
                        (train_x[lidx], train_y[lidx]),
                        unlabeled_x[uidx],
                        config,
                        epoch,
                        rng=root.derive("noise", epoch, step),
                        state=state,
                        lr=lr,
                        step=step,
                    )
                    step_stats.append(stats)
            else:
                order = root.derive("shuffle", epoch).permutation(train_x.shape[0])
                for step, start in enumerate(range(0, order.size, config.batch_size)):
                    idx = order[start : start + config.batch_size]
                    stats = step_semisup(
                        net,
                        (train_x[idx], train_y[idx]),
                        None,
                        config,
                        epoch,
                        rng=root.derive("noise", epoch, step),
                        state=state,
                        lr=lr,
                        step=step,
                    )
                    step_stats.append(stats)
        else:
            raise ConfigurationError(f"unhandled mode {config.mode!r}")

        metrics.append(
            _epoch_metrics(net, epoch, step_stats, train_x, train_y, test_x, test_y, config,
                           time.perf_counter() - epoch_started)
        )

    result = TrainResult(
        net=net,
        metrics=metrics,
        max_column_norm=state.max_column_norm,
        wall_seconds=time.perf_counter() - started,
    )
    if csv_path is not None:
        write_metrics_csv(csv_path, metrics)
    return result


def _epoch_metrics(net, epoch, step_stats, train_x, train_y, test_x, test_y, config, elapsed):
    examples = sum(s.example_count for s in step_stats)
    loss_sum = sum(s.loss_sum for s in step_stats)
    sup_loss = loss_sum / examples if examples else float("nan")
    pea_steps = [s for s in step_stats if s.pea_breakdown]
    pea_total = (
        float(np.mean([s.pea_total for s in pea_steps])) if pea_steps else 0.0
    )
    by_layer: dict = {}
    if pea_steps:
        for stats in pea_steps:
            for layer, value in stats.pea_breakdown:
                by_layer.setdefault(layer, []).append(value)
        by_layer = {layer: float(np.mean(vals)) for layer, vals in by_layer.items()}
    train_err = evaluate(net, train_x, train_y)
    test_err = (
        evaluate(net, test_x, test_y) if test_x is not None and test_y is not None else float("nan")
    )
    return EpochMetrics(
        epoch=epoch,
        sup_loss=sup_loss,
        pea_total=pea_total,
        pea_by_layer=by_layer,
        train_err=train_err,
        test_err=test_err,
        seconds=elapsed if config.record_wall_time else 0.0,
    )


def write_metrics_csv(path, metrics) -> None:
    """One row per epoch, fixed columns, shortest-repr floats.

    With wall-time recording off (the default) the seconds column is
    0.0 and two runs with the same config are byte-identical.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for m in metrics:
            writer.writerow(
                [
                    m.epoch,
                    repr(m.sup_loss),
                    repr(m.pea_total),
                    repr(m.train_err),
                    repr(m.test_err),
                    repr(m.seconds),
                ]
            )


def metrics_summary(result: TrainResult) -> dict:
    """JSON-ready digest of a finished run."""
    final_by_layer = result.metrics[-1].pea_by_layer if result.metrics else {}
    return {
        "epochs": len(result.metrics),
        "final_train_err": result.final_train_err,
        "final_test_err": result.final_test_err,
        "best_test_err": result.best_test_err,
        "final_sup_loss": result.metrics[-1].sup_loss if result.metrics else float("nan"),
        "final_pea_total": result.metrics[-1].pea_total if result.metrics else 0.0,
        "final_pea_by_layer": {str(k): v for k, v in sorted(final_by_layer.items())},
        "max_column_norm": result.max_column_norm,
        "wall_seconds": result.wall_seconds,
    }
