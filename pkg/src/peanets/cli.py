"""Experiment runner tying the toolkit together.

A run is described by a JSON config (or a named preset), validated as a
whole with key-path error messages, then executed into a fresh output
directory holding exactly five files:

    config.json   resolved configuration snapshot
    metrics.csv   per-epoch metrics
    summary.json  final/best numbers for quick reading
    model.ckpt    trained parameters
    manifest.json resolved config, version, timestamps, final metrics

The ``verify`` kind runs the numeric oracle suites instead (identity,
enumeration, and finite-difference checks) and writes nothing.

Exit codes: 0 success, 1 failed verify suites, 2 invalid configuration,
3 training divergence.  ``--workers`` is accepted for interface
stability; execution is serial and results never depend on it.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .core import RngStream, entropy, softmax
from .errors import TrainingDivergedError
from .mnist import SplitSpec, load_idx, make_split
from .network import LayerSpec, backward, forward, init_network, save_checkpoint
from .noise import NoiseConfig, sample_noise, sample_noise_pair
from .pea import (
    LayerPenalty,
    PenaltyConfig,
    PenaltyKind,
    dropout_equivalence_gap,
    pea_regularizer,
    penalty_kl,
    penalty_xent_var,
)
from .rntn import (
    RntnTrainConfig,
    evaluate_rntn,
    init_rntn,
    save_rntn,
    train_rntn,
    tree_loss_and_gradients,
)
from .synth import lexicon_tokens, synthetic_digits, synthetic_treebank
from .trainer import (
    Mode,
    TrainConfig,
    evaluate,
    softmax_xent,
    train,
    write_metrics_csv,
)
from .treebank import Vocabulary, build_vocabulary, load_trees

KINDS = ("mnist-supervised", "mnist-semisup", "rntn-sentiment", "verify")

TEST_POOL_START = 10**6  # synthetic test examples live in a disjoint index range


@dataclass
class ExperimentConfig:
    """A validated run description; ``resolved`` echoes every default."""

    kind: str
    seed: int
    out: str | None
    resolved: dict


# ---------------------------------------------------------------------------
# validation

_PENALTY_KINDS = {
    "kl": PenaltyKind.KL,
    "tanh_var": PenaltyKind.TANH_VAR,
    "xent_var": PenaltyKind.XENT_VAR,
    "direction": PenaltyKind.DIRECTION,
}


class _Checker:
    """Collects every violation instead of stopping at the first."""

    def __init__(self):
        self.errors: list = []

    def fail(self, path: str, message: str) -> None:
        self.errors.append(f"{path}: {message}")

    def section(self, raw: dict, path: str, allowed) -> dict:
        if not isinstance(raw, dict):
            self.fail(path, f"must be an object, got {type(raw).__name__}")
            return {}
        for key in raw:
            if key not in allowed:
                self.fail(f"{path}.{key}", "unknown key")
        return raw

    def number(self, raw, path, default, lo=None, hi=None, lo_open=False, hi_open=False,
               integer=False, optional=False):
        value = raw.get(path.split(".")[-1], default)
        if value is None and optional:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(path, f"must be a number, got {value!r}")
            return default
        if integer and int(value) != value:
            self.fail(path, f"must be an integer, got {value!r}")
            return default
        if lo is not None and (value <= lo if lo_open else value < lo):
            self.fail(path, f"must be {'>' if lo_open else '>='} {lo}, got {value!r}")
            return default
        if hi is not None and (value >= hi if hi_open else value > hi):
            self.fail(path, f"must be {'<' if hi_open else '<='} {hi}, got {value!r}")
            return default
        return int(value) if integer else float(value)

    def flag(self, raw, path, default):
        value = raw.get(path.split(".")[-1], default)
        if not isinstance(value, bool):
            self.fail(path, f"must be true or false, got {value!r}")
            return default
        return value

    def existing_path(self, raw, path):
        value = raw.get(path.split(".")[-1])
        if not isinstance(value, str) or not value:
            self.fail(path, "missing dataset path")
            return None
        if not os.path.exists(value):
            self.fail(path, f"path does not exist: {value}")
            return None
        return value


def _check_noise(raw: dict, check: _Checker) -> dict:
    raw = check.section(raw, "noise", (
        "drop_rate_input", "drop_rate_hidden", "input_sigma", "bias_sigma",
        "weight_sigma", "subspace_fraction",
    ))
    out = {}
    for key in ("drop_rate_input", "drop_rate_hidden"):
        out[key] = check.number(raw, f"noise.{key}", 0.0, lo=0.0, hi=1.0, hi_open=True)
    for key in ("input_sigma", "bias_sigma", "weight_sigma"):
        out[key] = check.number(raw, f"noise.{key}", 0.0, lo=0.0)
    out["subspace_fraction"] = check.number(
        raw, "noise.subspace_fraction", 1.0, lo=0.0, lo_open=True, hi=1.0
    )
    return out


def _check_penalties(raw, check: _Checker) -> list:
    if raw is None:
        return []
    if not isinstance(raw, list):
        check.fail("penalties", f"must be a list, got {type(raw).__name__}")
        return []
    out = []
    for i, entry in enumerate(raw):
        entry = check.section(entry, f"penalties[{i}]", ("layer", "kind", "weight"))
        layer = check.number(entry, f"penalties[{i}].layer", -1, integer=True)
        kind = entry.get("kind")
        if kind not in _PENALTY_KINDS:
            check.fail(
                f"penalties[{i}].kind",
                f"must be one of {sorted(_PENALTY_KINDS)}, got {kind!r}",
            )
            continue
        weight = check.number(entry, f"penalties[{i}].weight", 1.0, lo=0.0)
        out.append({"layer": layer, "kind": kind, "weight": weight})
    return out


def _check_mnist_data(raw: dict, check: _Checker, semisup: bool) -> dict:
    allowed = ["source", "train_size", "test_size", "digit_seed",
               "train_images", "train_labels", "test_images", "test_labels"]
    if semisup:
        allowed.append("use_unlabeled")
    raw = check.section(raw, "data", tuple(allowed))
    source = raw.get("source", "synthetic")
    out = {"source": source}
    if source == "synthetic":
        out["train_size"] = check.number(raw, "data.train_size", 10000, lo=10, integer=True)
        out["test_size"] = check.number(raw, "data.test_size", 2000, lo=1, integer=True)
        out["digit_seed"] = check.number(raw, "data.digit_seed", 0, integer=True)
    elif source == "idx":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            out[key] = check.existing_path(raw, f"data.{key}")
    else:
        check.fail("data.source", f"must be 'synthetic' or 'idx', got {source!r}")
    if semisup:
        out["use_unlabeled"] = check.flag(raw, "data.use_unlabeled", True)
    return out


def _check_rntn_data(raw: dict, check: _Checker) -> dict:
    raw = check.section(raw, "data", (
        "source", "train_size", "test_size", "tree_seed", "label_noise",
        "train", "test", "min_count",
    ))
    source = raw.get("source", "synthetic")
    out = {"source": source}
    if source == "synthetic":
        out["train_size"] = check.number(raw, "data.train_size", 500, lo=1, integer=True)
        out["test_size"] = check.number(raw, "data.test_size", 300, lo=1, integer=True)
        out["tree_seed"] = check.number(raw, "data.tree_seed", 0, integer=True)
        out["label_noise"] = check.number(raw, "data.label_noise", 0.07, lo=0.0, hi=1.0,
                                          hi_open=True)
    elif source == "files":
        out["train"] = check.existing_path(raw, "data.train")
        out["test"] = check.existing_path(raw, "data.test")
        out["min_count"] = check.number(raw, "data.min_count", 1, lo=1, integer=True)
    else:
        check.fail("data.source", f"must be 'synthetic' or 'files', got {source!r}")
    return out


def _check_mnist_train(raw: dict, check: _Checker, kind: str) -> dict:
    raw = check.section(raw, "train", (
        "mode", "epochs", "batch_size", "unlabeled_batch_size", "learning_rate",
        "momentum", "lr_decay", "lr_decay_every_fraction", "ramp_epochs",
    ))
    out = {}
    default_mode = "pea_semisup" if kind == "mnist-semisup" else "sde"
    mode = raw.get("mode", default_mode)
    valid_modes = (
        ("pea_semisup",) if kind == "mnist-semisup" else ("sde", "pea_clean_branch")
    )
    if mode not in valid_modes:
        check.fail("train.mode", f"must be one of {list(valid_modes)}, got {mode!r}")
        mode = default_mode
    out["mode"] = mode
    out["epochs"] = check.number(raw, "train.epochs", 50, lo=0, integer=True)
    out["batch_size"] = check.number(raw, "train.batch_size", 100, lo=1, integer=True)
    out["unlabeled_batch_size"] = check.number(
        raw, "train.unlabeled_batch_size", 96, lo=1, integer=True
    )
    out["learning_rate"] = check.number(raw, "train.learning_rate", 0.1, lo=0.0)
    out["momentum"] = check.number(raw, "train.momentum", 0.9, lo=0.0, hi=1.0, hi_open=True)
    out["lr_decay"] = check.number(raw, "train.lr_decay", 0.5, lo=0.0, lo_open=True, hi=1.0)
    out["lr_decay_every_fraction"] = check.number(
        raw, "train.lr_decay_every_fraction", 0.2, lo=0.0, lo_open=True, hi=1.0
    )
    out["ramp_epochs"] = check.number(raw, "train.ramp_epochs", 0, lo=0, integer=True)
    if isinstance(out["epochs"], int) and isinstance(out["ramp_epochs"], int):
        if out["ramp_epochs"] > out["epochs"]:
            check.fail("train.ramp_epochs", "must not exceed train.epochs")
    return out


def _check_rntn_train(raw: dict, check: _Checker) -> dict:
    raw = check.section(raw, "train", (
        "epochs", "learning_rate", "momentum", "lr_decay", "lr_decay_every_fraction",
        "l2", "root_only", "eval_subspaces", "eval_every",
    ))
    out = {}
    out["epochs"] = check.number(raw, "train.epochs", 30, lo=0, integer=True)
    out["learning_rate"] = check.number(raw, "train.learning_rate", 0.01, lo=0.0)
    out["momentum"] = check.number(raw, "train.momentum", 0.0, lo=0.0, hi=1.0, hi_open=True)
    out["lr_decay"] = check.number(raw, "train.lr_decay", 0.5, lo=0.0, lo_open=True, hi=1.0)
    out["lr_decay_every_fraction"] = check.number(
        raw, "train.lr_decay_every_fraction", 0.34, lo=0.0, lo_open=True, hi=1.0
    )
    out["l2"] = check.number(raw, "train.l2", 0.0, lo=0.0)
    out["root_only"] = check.flag(raw, "train.root_only", False)
    out["eval_subspaces"] = check.number(raw, "train.eval_subspaces", 50, lo=1, integer=True)
    out["eval_every"] = check.number(raw, "train.eval_every", 1, lo=1, integer=True)
    return out


def validate_config_dict(raw: dict):
    """Full-config validation; returns (ExperimentConfig or None, errors)."""
    check = _Checker()
    if not isinstance(raw, dict):
        return None, ["config: must be a JSON object"]
    kind = raw.get("kind")
    if kind not in KINDS:
        check.fail("kind", f"must be one of {list(KINDS)}, got {kind!r}")
        return None, check.errors

    resolved: dict = {"kind": kind}
    top_allowed = {"kind", "seed", "out"}
    if kind in ("mnist-supervised", "mnist-semisup"):
        top_allowed |= {"data", "network", "train", "noise", "penalties"}
        if kind == "mnist-semisup":
            top_allowed.add("split")
    elif kind == "rntn-sentiment":
        top_allowed |= {"data", "model", "train", "noise"}
    for key in raw:
        if key not in top_allowed:
            check.fail(key, "unknown key")

    resolved["seed"] = check.number(raw, "seed", 0, integer=True)
    out_dir = raw.get("out")
    if out_dir is not None and not isinstance(out_dir, str):
        check.fail("out", f"must be a string, got {out_dir!r}")
        out_dir = None
    resolved["out"] = out_dir

    if kind in ("mnist-supervised", "mnist-semisup"):
        resolved["data"] = _check_mnist_data(
            raw.get("data", {}), check, semisup=(kind == "mnist-semisup")
        )
        network = check.section(raw.get("network", {}), "network", ("hidden", "max_norm"))
        hidden = network.get("hidden", [256, 256])
        if (not isinstance(hidden, list) or not hidden
                or not all(isinstance(h, int) and h >= 1 for h in hidden)):
            check.fail("network.hidden", f"must be a nonempty list of positive ints, got {hidden!r}")
            hidden = [256, 256]
        resolved["network"] = {
            "hidden": hidden,
            "max_norm": check.number(network, "network.max_norm", 3.5, lo=0.0,
                                     lo_open=True, optional=True),
        }
        resolved["train"] = _check_mnist_train(raw.get("train", {}), check, kind)
        resolved["noise"] = _check_noise(raw.get("noise", {}), check)
        default_pen = [{"layer": -1, "kind": "kl", "weight": 1.0}]
        if kind == "mnist-supervised" and resolved["train"]["mode"] == "sde":
            default_pen = []
        resolved["penalties"] = (
            _check_penalties(raw["penalties"], check) if "penalties" in raw else default_pen
        )
        if kind == "mnist-semisup":
            split = check.section(raw.get("split", {}), "split",
                                  ("n_labeled", "index", "split_seed"))
            resolved["split"] = {
                "n_labeled": check.number(split, "split.n_labeled", 100, lo=10, integer=True),
                "index": check.number(split, "split.index", 0, lo=0, integer=True),
                "split_seed": check.number(split, "split.split_seed", 0, integer=True),
            }
    elif kind == "rntn-sentiment":
        resolved["data"] = _check_rntn_data(raw.get("data", {}), check)
        model = check.section(raw.get("model", {}), "model", ("latent_dim", "classes"))
        resolved["model"] = {
            "latent_dim": check.number(model, "model.latent_dim", 10, lo=1, integer=True),
            "classes": check.number(model, "model.classes", 5, lo=2, integer=True),
        }
        resolved["train"] = _check_rntn_train(raw.get("train", {}), check)
        resolved["noise"] = _check_noise(raw.get("noise", {}), check)

    if check.errors:
        return None, check.errors
    return ExperimentConfig(kind=kind, seed=resolved["seed"], out=resolved["out"],
                            resolved=resolved), []


def validate_config(path):
    """Load and validate a JSON config file; returns (config or None, errors).

    Unreadable files raise OSError; unparseable or invalid content comes
    back through the error list.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as err:
            return None, [f"config: not valid JSON ({err})"]
    return validate_config_dict(raw)


# ---------------------------------------------------------------------------
# execution helpers

def _write_atomic(path, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def emit_summary(metrics, wall_seconds: float = 0.0, max_column_norm=None) -> str:
    """JSON text digest of a nonempty metrics history.

    Carries the final and best test errors, the final supervised loss and
    per-layer agreement-penalty totals, and the wall time.
    """
    if not metrics:
        raise ValueError("need a nonempty metrics history")
    last = metrics[-1]
    finite = [m.test_err for m in metrics if np.isfinite(m.test_err)]
    payload = {
        "epochs": len(metrics),
        "final_train_err": last.train_err,
        "final_test_err": last.test_err,
        "best_test_err": min(finite) if finite else float("nan"),
        "final_sup_loss": last.sup_loss,
        "final_pea_total": last.pea_total,
        "final_pea_by_layer": {str(k): v for k, v in sorted(last.pea_by_layer.items())},
        "wall_seconds": wall_seconds,
    }
    if max_column_norm is not None:
        payload["max_column_norm"] = max_column_norm
    return json.dumps(payload, indent=2, allow_nan=True)


def _prepare_run_dir(out_dir: str) -> list:
    if out_dir is None:
        return ["out: an output directory is required for this kind"]
    if os.path.exists(out_dir):
        if not os.path.isdir(out_dir):
            return [f"out: {out_dir} exists and is not a directory"]
        if os.listdir(out_dir):
            return [f"out: {out_dir} is not empty; refusing to mix runs"]
    else:
        os.makedirs(out_dir)
    return []


def _mnist_datasets(data_cfg: dict):
    if data_cfg["source"] == "synthetic":
        train_set = synthetic_digits(data_cfg["train_size"], data_cfg["digit_seed"])
        test_set = synthetic_digits(
            data_cfg["test_size"], data_cfg["digit_seed"], start_index=TEST_POOL_START
        )
    else:
        train_set = load_idx(data_cfg["train_images"], data_cfg["train_labels"])
        test_set = load_idx(data_cfg["test_images"], data_cfg["test_labels"])
    return train_set, test_set


def _build_train_config(resolved: dict) -> TrainConfig:
    t = resolved["train"]
    noise = NoiseConfig(**resolved["noise"])
    entries = tuple(
        LayerPenalty(p["layer"], _PENALTY_KINDS[p["kind"]], p["weight"])
        for p in resolved["penalties"]
    )
    return TrainConfig(
        mode=Mode(t["mode"]),
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        unlabeled_batch_size=t["unlabeled_batch_size"],
        learning_rate=t["learning_rate"],
        momentum=t["momentum"],
        lr_decay=t["lr_decay"],
        lr_decay_every_fraction=t["lr_decay_every_fraction"],
        max_norm=resolved["network"]["max_norm"],
        noise=noise,
        penalties=PenaltyConfig(entries),
        ramp_epochs=t["ramp_epochs"],
        seed=resolved["seed"],
    )


def _build_specs(resolved: dict, input_dim: int, classes: int) -> list:
    hidden = resolved["network"]["hidden"]
    max_norm = resolved["network"]["max_norm"]
    sizes = [input_dim] + hidden + [classes]
    specs = []
    for i in range(len(sizes) - 1):
        activation = "identity" if i == len(sizes) - 2 else "relu"
        specs.append(LayerSpec(sizes[i], sizes[i + 1], activation, max_norm))
    return specs


def _run_mnist(config: ExperimentConfig) -> int:
    resolved = config.resolved
    out_dir = config.out
    train_set, test_set = _mnist_datasets(resolved["data"])
    train_cfg = _build_train_config(resolved)

    labeled = train_set
    unlabeled_x = None
    labeled_indices = None
    if config.kind == "mnist-semisup":
        split_cfg = resolved["split"]
        split = make_split(
            train_set,
            SplitSpec(
                n_labeled=split_cfg["n_labeled"],
                seed=split_cfg["split_seed"],
                index=split_cfg["index"],
            ),
        )
        labeled = split.labeled
        labeled_indices = [int(i) for i in split.labeled_indices]
        if resolved["data"]["use_unlabeled"]:
            unlabeled_x = split.unlabeled_images

    net = init_network(
        _build_specs(resolved, labeled.images.shape[1], 10), RngStream(config.seed)
    )
    started = time.time()
    try:
        result = train(
            net,
            labeled.images,
            labeled.labels,
            train_cfg,
            test_x=test_set.images,
            test_y=test_set.labels,
            unlabeled_x=unlabeled_x,
        )
    except TrainingDivergedError as err:
        print(f"training diverged: {err}", file=sys.stderr)
        return 3
    finished = time.time()

    csv_tmp = os.path.join(out_dir, "metrics.csv.tmp")
    write_metrics_csv(csv_tmp, result.metrics)
    os.replace(csv_tmp, os.path.join(out_dir, "metrics.csv"))

    if result.metrics:
        summary_text = emit_summary(result.metrics, result.wall_seconds,
                                    result.max_column_norm)
        summary = json.loads(summary_text)
    else:
        # an epochs-0 run never evaluated, so score the untrained net here
        err = evaluate(net, test_set.images, test_set.labels)
        summary = {
            "epochs": 0,
            "final_test_err": err,
            "best_test_err": err,
            "wall_seconds": result.wall_seconds,
            "max_column_norm": result.max_column_norm,
            "note": "untrained evaluation only",
        }
        summary_text = json.dumps(summary, indent=2)
    _write_atomic(os.path.join(out_dir, "summary.json"), summary_text)

    ckpt_tmp = os.path.join(out_dir, "model.ckpt.tmp")
    save_checkpoint(net, ckpt_tmp)
    os.replace(ckpt_tmp, os.path.join(out_dir, "model.ckpt"))

    manifest = {
        "config": resolved,
        "version": __version__,
        "started": started,
        "finished": finished,
        "final_metrics": summary,
    }
    if labeled_indices is not None:
        manifest["labeled_indices"] = labeled_indices
    _write_atomic(os.path.join(out_dir, "manifest.json"),
                  json.dumps(manifest, indent=2, allow_nan=True))
    return 0


def _rntn_datasets(data_cfg: dict):
    if data_cfg["source"] == "synthetic":
        train_trees = synthetic_treebank(
            data_cfg["train_size"], data_cfg["tree_seed"], label_noise=data_cfg["label_noise"]
        )
        test_trees = synthetic_treebank(
            data_cfg["test_size"],
            data_cfg["tree_seed"],
            start_index=TEST_POOL_START,
            label_noise=data_cfg["label_noise"],
        )
        vocab = Vocabulary.from_tokens(lexicon_tokens())
    else:
        train_trees = load_trees(data_cfg["train"])
        test_trees = load_trees(data_cfg["test"])
        vocab = build_vocabulary(train_trees, min_count=data_cfg["min_count"])
    return train_trees, test_trees, vocab


def _build_rntn_config(resolved: dict) -> RntnTrainConfig:
    t = resolved["train"]
    return RntnTrainConfig(
        epochs=t["epochs"],
        learning_rate=t["learning_rate"],
        momentum=t["momentum"],
        lr_decay=t["lr_decay"],
        lr_decay_every_fraction=t["lr_decay_every_fraction"],
        noise=NoiseConfig(**resolved["noise"]),
        l2=t["l2"],
        root_only=t["root_only"],
        eval_subspaces=t["eval_subspaces"],
        eval_every=t["eval_every"],
        seed=resolved["seed"],
    )


def _run_rntn(config: ExperimentConfig) -> int:
    resolved = config.resolved
    out_dir = config.out
    train_trees, test_trees, vocab = _rntn_datasets(resolved["data"])
    rntn_cfg = _build_rntn_config(resolved)
    model = init_rntn(
        resolved["model"]["latent_dim"],
        resolved["model"]["classes"],
        len(vocab),
        RngStream(config.seed),
    )
    started = time.time()
    try:
        result = train_rntn(model, train_trees, vocab, rntn_cfg, eval_trees=test_trees)
    except TrainingDivergedError as err:
        print(f"training diverged: {err}", file=sys.stderr)
        return 3
    finished = time.time()

    lines = ["epoch,train_loss,fine_acc,binary_acc"]
    for m in result.metrics:
        lines.append(f"{m.epoch},{m.train_loss!r},{m.fine_acc!r},{m.binary_acc!r}")
    _write_atomic(os.path.join(out_dir, "metrics.csv"), "\n".join(lines) + "\n")

    fine_acc, binary_acc = evaluate_rntn(
        model,
        test_trees,
        vocab,
        rntn_cfg.eval_subspaces,
        rntn_cfg.noise.subspace_fraction,
        RngStream(config.seed).derive("final-eval"),
    )
    summary = {
        "epochs": len(result.metrics),
        "final_fine_acc": fine_acc,
        "final_binary_acc": binary_acc,
        "final_train_loss": result.metrics[-1].train_loss if result.metrics else float("nan"),
        "wall_seconds": finished - started,
    }
    _write_atomic(os.path.join(out_dir, "summary.json"), json.dumps(summary, indent=2))

    ckpt_tmp = os.path.join(out_dir, "model.ckpt.tmp")
    save_rntn(ckpt_tmp, model)
    os.replace(ckpt_tmp, os.path.join(out_dir, "model.ckpt"))

    manifest = {
        "config": resolved,
        "version": __version__,
        "started": started,
        "finished": finished,
        "final_metrics": summary,
    }
    _write_atomic(os.path.join(out_dir, "manifest.json"), json.dumps(manifest, indent=2))
    return 0


# ---------------------------------------------------------------------------
# verify suites

def _suite_xent_identity(rng: RngStream):
    failures = 0
    total = 10**4
    for i in range(total):
        dim = 2 + int(rng.derive("dim", i).integers(0, 49))
        pair_rng = rng.derive("pair", i)
        a = pair_rng.normal(size=dim, sigma=3.0)
        b = pair_rng.normal(size=dim, sigma=3.0)
        xent = penalty_xent_var(a, b)
        decomposed = penalty_kl(a, b) + entropy(softmax(a))
        if abs(xent - decomposed) > 1e-10:
            failures += 1
    return "cross-entropy decomposition", total, failures


def _suite_dropout_equivalence(rng: RngStream):
    failures = 0
    total = 100
    for i in range(total):
        inst = rng.derive("inst", i)
        theta = inst.normal(size=(3, 4), sigma=1.5)
        x = inst.normal(size=4, sigma=1.0)
        lhs, rhs = dropout_equivalence_gap(theta, x, 0.5)
        if abs(lhs - rhs) > 1e-12:
            failures += 1
    return "masking-equivalence enumeration", total, failures


def _fd_gradient_ok(f, x0, analytic, h=1e-5, tol=1e-4):
    numeric = np.empty_like(x0)
    for i in range(x0.size):
        probe = x0.copy()
        probe[i] = x0[i] + h
        up = f(probe)
        probe[i] = x0[i] - h
        down = f(probe)
        numeric[i] = (up - down) / (2 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
    return float(np.max(np.abs(analytic - numeric) / denom)) <= tol


def _mlp_instance(rng: RngStream):
    specs = [LayerSpec(5, 4, "relu", None), LayerSpec(4, 3, "identity", None)]
    net = init_network(specs, rng)
    for w in net.weights:
        w += rng.normal(size=w.shape, sigma=0.6)
    for b in net.biases[:-1]:
        b += rng.normal(size=b.shape, sigma=0.3)
    x = rng.normal(size=(2, 5))
    y = np.asarray(rng.integers(0, 3, size=2))
    return net, x, y


def _suite_mlp_gradients(rng: RngStream):
    failures = 0
    total = 20
    for i in range(total):
        net, x, y = _mlp_instance(rng.derive("inst", i))
        noise = sample_noise(NoiseConfig(input_sigma=0.05, bias_sigma=0.05),
                             net.layer_sizes(), rng.derive("noise", i), batch=2)

        def loss_at(flat):
            probe = net.copy()
            probe.set_flat_params(flat)
            trace = forward(probe, x, noise)
            value, _ = softmax_xent(trace.logits, y)
            return value * 2.0

        trace = forward(net, x, noise)
        _, dlogits = softmax_xent(trace.logits, y)
        grads = backward(net, trace, dlogits * 2.0)
        if not _fd_gradient_ok(loss_at, net.get_flat_params(), grads.flat()):
            failures += 1
    return "network loss gradients", total, failures


def _suite_pea_gradients(rng: RngStream):
    failures = 0
    total = 20
    config = PenaltyConfig((LayerPenalty(-1, PenaltyKind.KL, 0.8),))
    for i in range(total):
        net, x, _ = _mlp_instance(rng.derive("inst", i))
        noise_pair = sample_noise_pair(
            NoiseConfig(input_sigma=0.05, bias_sigma=0.05),
            net.layer_sizes(), rng.derive("noise", i), batch=2,
        )

        def value_at(flat):
            probe = net.copy()
            probe.set_flat_params(flat)
            value, _ = pea_regularizer(probe, x, noise_pair, config)
            return value.total

        _, grads = pea_regularizer(net, x, noise_pair, config)
        if not _fd_gradient_ok(value_at, net.get_flat_params(), grads.flat()):
            failures += 1
    return "agreement-penalty gradients", total, failures


def _suite_rntn_gradients(rng: RngStream):
    from .treebank import parse_tree

    failures = 0
    total = 20
    vocab = Vocabulary.from_tokens(["w1", "w2", "w3"])
    tree = parse_tree("(3 (2 (1 w1) (2 w2)) (4 w3))")
    for i in range(total):
        inst = rng.derive("inst", i)
        model = init_rntn(4, 5, len(vocab), inst, sigma=0.4, word_std=0.5)
        subspace = None if i % 2 == 0 else np.array([0, 2])

        def loss_at(flat):
            probe = model.copy()
            probe.set_flat_params(flat)
            loss, _, _ = tree_loss_and_gradients(probe, tree, vocab, subspace=subspace)
            return loss

        _, grads, _ = tree_loss_and_gradients(model, tree, vocab, subspace=subspace)
        if not _fd_gradient_ok(loss_at, model.get_flat_params(), grads.flat()):
            failures += 1
    return "tree-network gradients", total, failures


def run_verify(seed: int = 0) -> int:
    """Run every oracle suite and print pass/fail counts; 0 if all pass."""
    rng = RngStream(seed)
    suites = [
        _suite_xent_identity(rng.derive("identity")),
        _suite_dropout_equivalence(rng.derive("equivalence")),
        _suite_mlp_gradients(rng.derive("mlp")),
        _suite_pea_gradients(rng.derive("pea")),
        _suite_rntn_gradients(rng.derive("rntn")),
    ]
    total_failures = 0
    for name, total, failures in suites:
        status = "ok" if failures == 0 else "FAIL"
        print(f"{status:4s} {name}: {total - failures}/{total} passed")
        total_failures += failures
    print(f"total: {sum(t for _, t, _ in suites) - total_failures}"
          f"/{sum(t for _, t, _ in suites)} passed")
    return 0 if total_failures == 0 else 1


# ---------------------------------------------------------------------------
# presets

def _mnist_noise():
    return {"drop_rate_input": 0.2, "drop_rate_hidden": 0.5,
            "input_sigma": 0.1, "bias_sigma": 0.1}


PRESETS: dict = {
    # full-protocol configurations; the idx/files paths must exist at launch
    "mnist-sup-sde-full": {
        "kind": "mnist-supervised",
        "data": {"source": "idx",
                 "train_images": "data/train-images-idx3-ubyte.gz",
                 "train_labels": "data/train-labels-idx1-ubyte.gz",
                 "test_images": "data/t10k-images-idx3-ubyte.gz",
                 "test_labels": "data/t10k-labels-idx1-ubyte.gz"},
        "network": {"hidden": [800, 800], "max_norm": 3.5},
        "train": {"mode": "sde", "epochs": 1000, "batch_size": 100,
                  "learning_rate": 0.1, "momentum": 0.9},
        "noise": _mnist_noise(),
    },
    "mnist-sup-pea-full": {
        "kind": "mnist-supervised",
        "data": {"source": "idx",
                 "train_images": "data/train-images-idx3-ubyte.gz",
                 "train_labels": "data/train-labels-idx1-ubyte.gz",
                 "test_images": "data/t10k-images-idx3-ubyte.gz",
                 "test_labels": "data/t10k-labels-idx1-ubyte.gz"},
        "network": {"hidden": [800, 800], "max_norm": 3.5},
        "train": {"mode": "pea_clean_branch", "epochs": 1000, "batch_size": 100,
                  "learning_rate": 0.1, "momentum": 0.9},
        "noise": _mnist_noise(),
        "penalties": [{"layer": -1, "kind": "kl", "weight": 1.0}],
    },
    # desk-scale counterparts run out of the box on generated data
    "mnist-sup-sde-desk": {
        "kind": "mnist-supervised",
        "data": {"source": "synthetic", "train_size": 10000, "test_size": 2000},
        "network": {"hidden": [256, 256], "max_norm": 3.5},
        "train": {"mode": "sde", "epochs": 50, "batch_size": 100,
                  "learning_rate": 0.1, "momentum": 0.9},
        "noise": _mnist_noise(),
    },
    "mnist-sup-pea-desk": {
        "kind": "mnist-supervised",
        "data": {"source": "synthetic", "train_size": 10000, "test_size": 2000},
        "network": {"hidden": [256, 256], "max_norm": 3.5},
        "train": {"mode": "pea_clean_branch", "epochs": 50, "batch_size": 100,
                  "learning_rate": 0.1, "momentum": 0.9},
        "noise": _mnist_noise(),
        "penalties": [{"layer": -1, "kind": "kl", "weight": 1.0}],
    },
    "mnist-semisup-desk": {
        "kind": "mnist-semisup",
        "data": {"source": "synthetic", "train_size": 10000, "test_size": 2000},
        "split": {"n_labeled": 100, "index": 0, "split_seed": 0},
        "network": {"hidden": [256, 256], "max_norm": 3.5},
        "train": {"epochs": 30, "batch_size": 32, "unlabeled_batch_size": 96,
                  "learning_rate": 0.05, "momentum": 0.9, "ramp_epochs": 15},
        "noise": _mnist_noise(),
        "penalties": [{"layer": -1, "kind": "kl", "weight": 1.0},
                      {"layer": 1, "kind": "direction", "weight": 0.1}],
    },
    "mnist-semisup-baseline-desk": {
        "kind": "mnist-semisup",
        "data": {"source": "synthetic", "train_size": 10000, "test_size": 2000,
                 "use_unlabeled": False},
        "split": {"n_labeled": 100, "index": 0, "split_seed": 0},
        "network": {"hidden": [256, 256], "max_norm": 3.5},
        "train": {"epochs": 780, "batch_size": 32,
                  "learning_rate": 0.05, "momentum": 0.9, "ramp_epochs": 0},
        "noise": _mnist_noise(),
        "penalties": [{"layer": -1, "kind": "kl", "weight": 1.0},
                      {"layer": 1, "kind": "direction", "weight": 0.1}],
    },
    "rntn-ctn-full": {
        "kind": "rntn-sentiment",
        "data": {"source": "files", "train": "data/trees-train.txt",
                 "test": "data/trees-test.txt", "min_count": 1},
        "model": {"latent_dim": 30, "classes": 5},
        "train": {"epochs": 100, "learning_rate": 0.01, "momentum": 0.0,
                  "eval_subspaces": 1, "eval_every": 10},
        "noise": {},
    },
    "rntn-ctn-fs-full": {
        "kind": "rntn-sentiment",
        "data": {"source": "files", "train": "data/trees-train.txt",
                 "test": "data/trees-test.txt", "min_count": 1},
        "model": {"latent_dim": 30, "classes": 5},
        "train": {"epochs": 100, "learning_rate": 0.01, "momentum": 0.0,
                  "eval_subspaces": 50, "eval_every": 10},
        "noise": {"weight_sigma": 0.02, "subspace_fraction": 0.5},
    },
    "rntn-ctn-desk": {
        "kind": "rntn-sentiment",
        "data": {"source": "synthetic", "train_size": 500, "test_size": 300},
        "model": {"latent_dim": 10, "classes": 5},
        "train": {"epochs": 30, "learning_rate": 0.01, "momentum": 0.0,
                  "eval_subspaces": 1, "eval_every": 30},
        "noise": {},
    },
    "rntn-ctn-f-desk": {
        "kind": "rntn-sentiment",
        "data": {"source": "synthetic", "train_size": 500, "test_size": 300},
        "model": {"latent_dim": 10, "classes": 5},
        "train": {"epochs": 30, "learning_rate": 0.01, "momentum": 0.0,
                  "eval_subspaces": 1, "eval_every": 30},
        "noise": {"weight_sigma": 0.02},
    },
    "rntn-ctn-s-desk": {
        "kind": "rntn-sentiment",
        "data": {"source": "synthetic", "train_size": 500, "test_size": 300},
        "model": {"latent_dim": 10, "classes": 5},
        "train": {"epochs": 30, "learning_rate": 0.01, "momentum": 0.0,
                  "eval_subspaces": 50, "eval_every": 30},
        "noise": {"subspace_fraction": 0.5},
    },
    "rntn-ctn-fs-desk": {
        "kind": "rntn-sentiment",
        "data": {"source": "synthetic", "train_size": 500, "test_size": 300},
        "model": {"latent_dim": 10, "classes": 5},
        "train": {"epochs": 30, "learning_rate": 0.01, "momentum": 0.0,
                  "eval_subspaces": 50, "eval_every": 30},
        "noise": {"weight_sigma": 0.02, "subspace_fraction": 0.5},
    },
    "verify": {"kind": "verify"},
}

for _size in (100, 600, 1000, 3000):
    PRESETS[f"mnist-semisup-{_size}-full"] = {
        "kind": "mnist-semisup",
        "data": {"source": "idx",
                 "train_images": "data/train-images-idx3-ubyte.gz",
                 "train_labels": "data/train-labels-idx1-ubyte.gz",
                 "test_images": "data/t10k-images-idx3-ubyte.gz",
                 "test_labels": "data/t10k-labels-idx1-ubyte.gz"},
        "split": {"n_labeled": _size, "index": 0, "split_seed": 0},
        "network": {"hidden": [800, 800], "max_norm": 3.5},
        "train": {"epochs": 1000, "batch_size": 32, "unlabeled_batch_size": 96,
                  "learning_rate": 0.05, "momentum": 0.9, "ramp_epochs": 500},
        "noise": _mnist_noise(),
        "penalties": [{"layer": -1, "kind": "kl", "weight": 1.0},
                      {"layer": 1, "kind": "direction", "weight": 0.1}],
    }


# ---------------------------------------------------------------------------
# entry point

def run_experiment(config: ExperimentConfig) -> int:
    """Execute a validated config; returns the process exit status."""
    if config.kind == "verify":
        return run_verify(config.seed)
    errors = _prepare_run_dir(config.out)
    if errors:
        for message in errors:
            print(message, file=sys.stderr)
        return 2
    snapshot = dict(config.resolved)
    snapshot["out"] = config.out
    _write_atomic(os.path.join(config.out, "config.json"), json.dumps(snapshot, indent=2))
    if config.kind in ("mnist-supervised", "mnist-semisup"):
        return _run_mnist(config)
    return _run_rntn(config)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="peanets", description="pseudo-ensemble experiment runner"
    )
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--config", help="path to a JSON experiment config")
    source.add_argument("--preset", choices=sorted(PRESETS), help="named built-in config")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument("--workers", type=int, default=1,
                        help="accepted for compatibility; execution is serial")
    args = parser.parse_args(argv)

    if args.workers < 1:
        print("--workers: must be >= 1", file=sys.stderr)
        return 2

    if args.preset is not None:
        raw = copy.deepcopy(PRESETS[args.preset])
    else:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as err:
            print(f"config: cannot read {args.config}: {err}", file=sys.stderr)
            return 2
        except json.JSONDecodeError as err:
            print(f"config: not valid JSON ({err})", file=sys.stderr)
            return 2

    if not isinstance(raw, dict):
        print("config: must be a JSON object", file=sys.stderr)
        return 2
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out

    config, errors = validate_config_dict(raw)
    if errors:
        for message in errors:
            print(message, file=sys.stderr)
        return 2
    return run_experiment(config)


if __name__ == "__main__":
    sys.exit(main())
