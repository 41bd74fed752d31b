"""Compact recursive neural tensor network over binary phrase trees.

The composition function is bilinear plus affine:

    f_i(v1, v2) = tanh(v1' T_i v2 + M_i [v1; v2; 1])

with an n x n x n tensor ``T``, an n x (2n+1) transform ``M``, a
c x (n+1) classifier ``C``, and a word table of pre-tanh leaf vectors.
Child models are spawned from the parent by two perturbations: latent
subspace sampling (one sorted index set per phrase tree, with all
parameters sliced down to it) and weight fuzzing (Gaussian noise added
to the parameters the tree touches, with the resulting gradients
applied to the clean parameters).  Test-time predictions average the
root distribution over independently sampled subspaces, never fuzzed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import RngStream, log_softmax, softmax
from .checkpoint import CheckpointFormatError, load_arrays, save_arrays
from .errors import ConfigurationError, TrainingDivergedError
from .noise import NoiseConfig, fuzz_parameters, sample_subspace
from .treebank import Polarity, SentimentTree, Vocabulary, root_and_binary_labels

FINE_CLASSES = 5


@dataclass
class CompactRNTN:
    """Parent model parameters; all arrays float64 and finite."""

    tensor: np.ndarray       # n x n x n
    transform: np.ndarray    # n x (2n+1), last column is the bias
    classifier: np.ndarray   # c x (n+1), last column is the bias
    words: np.ndarray        # |V| x n, pre-tanh leaf vectors

    def __post_init__(self):
        self.tensor = np.asarray(self.tensor, dtype=np.float64)
        self.transform = np.asarray(self.transform, dtype=np.float64)
        self.classifier = np.asarray(self.classifier, dtype=np.float64)
        self.words = np.asarray(self.words, dtype=np.float64)
        n = self.tensor.shape[0] if self.tensor.ndim == 3 else -1
        if n < 1 or self.tensor.shape != (n, n, n):
            raise ConfigurationError(f"tensor must be n x n x n, got {self.tensor.shape}")
        if self.transform.shape != (n, 2 * n + 1):
            raise ConfigurationError(
                f"transform must be {n} x {2 * n + 1}, got {self.transform.shape}"
            )
        if self.classifier.ndim != 2 or self.classifier.shape[1] != n + 1:
            raise ConfigurationError(
                f"classifier needs {n + 1} columns, got shape {self.classifier.shape}"
            )
        if self.words.ndim != 2 or self.words.shape[1] != n:
            raise ConfigurationError(f"word table must be |V| x {n}, got {self.words.shape}")
        for name, arr in self.parameter_dict().items():
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError(f"{name} contains non-finite entries")

    @property
    def n(self) -> int:
        return self.tensor.shape[0]

    @property
    def c(self) -> int:
        return self.classifier.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.words.shape[0]

    def parameter_dict(self) -> dict:
        return {
            "tensor": self.tensor,
            "transform": self.transform,
            "classifier": self.classifier,
            "words": self.words,
        }

    def num_params(self) -> int:
        return sum(arr.size for arr in self.parameter_dict().values())

    def copy(self) -> "CompactRNTN":
        return CompactRNTN(
            self.tensor.copy(), self.transform.copy(), self.classifier.copy(), self.words.copy()
        )

    def get_flat_params(self) -> np.ndarray:
        return np.concatenate([arr.ravel() for arr in self.parameter_dict().values()])

    def set_flat_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.num_params(),):
            raise ValueError(f"expected {self.num_params()} values, got shape {flat.shape}")
        offset = 0
        for arr in self.parameter_dict().values():
            arr[...] = flat[offset : offset + arr.size].reshape(arr.shape)
            offset += arr.size


def init_rntn(
    n: int, c: int, vocab_size: int, rng: RngStream, sigma: float = 0.01, word_std: float = 0.5
) -> CompactRNTN:
    """Gaussian(0, sigma^2) parameters with zero bias columns.

    Word vectors are drawn the same way, then each row is rescaled so
    its entries have standard deviation ``word_std``; there is no
    pre-trained table to import, so the scale is imposed directly.
    """
    if n < 1 or c < 1 or vocab_size < 1:
        raise ConfigurationError(f"need n, c, |V| >= 1, got {(n, c, vocab_size)}")
    tensor = rng.normal(size=(n, n, n), sigma=sigma)
    transform = rng.normal(size=(n, 2 * n + 1), sigma=sigma)
    transform[:, -1] = 0.0
    classifier = rng.normal(size=(c, n + 1), sigma=sigma)
    classifier[:, -1] = 0.0
    words = rng.normal(size=(vocab_size, n), sigma=sigma)
    if n > 1:
        stds = words.std(axis=1, keepdims=True)
        words *= word_std / np.maximum(stds, 1e-12)
    else:
        words[...] = word_std
    return CompactRNTN(tensor, transform, classifier, words)


@dataclass
class OpCounter:
    """Counts scalar multiplies in the tensor term of compose.

    A naive triple loop over (output coordinate, row, column) does two
    multiplies per (i, a, b) entry, so one compose over k latent
    dimensions adds exactly 2 k^3.
    """

    tensor_multiplies: int = 0

    def count_compose(self, k: int) -> None:
        self.tensor_multiplies += 2 * k**3


@dataclass
class RntnGradients:
    """Full-shape gradient arrays; entries outside the slice stay zero."""

    tensor: np.ndarray
    transform: np.ndarray
    classifier: np.ndarray
    words: np.ndarray

    @staticmethod
    def zeros_like(model: CompactRNTN) -> "RntnGradients":
        return RntnGradients(
            np.zeros_like(model.tensor),
            np.zeros_like(model.transform),
            np.zeros_like(model.classifier),
            np.zeros_like(model.words),
        )

    def to_dict(self) -> dict:
        return {
            "tensor": self.tensor,
            "transform": self.transform,
            "classifier": self.classifier,
            "words": self.words,
        }

    def add_(self, other: "RntnGradients", scale: float = 1.0) -> None:
        for name, arr in self.to_dict().items():
            arr += scale * other.to_dict()[name]

    def scale_(self, factor: float) -> None:
        for arr in self.to_dict().values():
            arr *= factor

    def flat(self) -> np.ndarray:
        return np.concatenate([arr.ravel() for arr in self.to_dict().values()])


@dataclass
class SlicedParams:
    """Parameters restricted to a sorted latent index set.

    ``transform`` columns are ordered as v1 positions, then v2
    positions, then the bias; ``classifier`` keeps all class rows.
    Slicing copies, so fuzzing a slice never touches the parent.
    """

    subspace: np.ndarray     # sorted indices into 0..n-1, length k
    full_n: int
    tensor: np.ndarray       # k x k x k
    transform: np.ndarray    # k x (2k+1)
    classifier: np.ndarray   # c x (k+1)
    words: np.ndarray        # |V| x k

    @property
    def k(self) -> int:
        return self.subspace.size


def slice_parameters(model: CompactRNTN, subspace) -> SlicedParams:
    """Restrict every parameter to the sorted index set ``subspace``."""
    n = model.n
    s = np.asarray(subspace, dtype=np.int64)
    if s.ndim != 1 or s.size < 1:
        raise ConfigurationError(f"subspace must be a nonempty index vector, got shape {s.shape}")
    if np.any(s < 0) or np.any(s >= n):
        raise ConfigurationError(f"subspace indices must lie in 0..{n - 1}")
    if np.any(np.diff(s) <= 0):
        raise ConfigurationError("subspace indices must be strictly increasing")
    transform_cols = np.concatenate([s, n + s, [2 * n]])
    classifier_cols = np.concatenate([s, [n]])
    return SlicedParams(
        subspace=s,
        full_n=n,
        tensor=model.tensor[np.ix_(s, s, s)],
        transform=model.transform[np.ix_(s, transform_cols)],
        classifier=model.classifier[:, classifier_cols],
        words=model.words[:, s],
    )


def full_parameters(model: CompactRNTN) -> SlicedParams:
    return slice_parameters(model, np.arange(model.n))


def compose(v1, v2, tensor_s, matrix_s, counter: OpCounter | None = None) -> np.ndarray:
    """tanh(v1' T_i v2 + M_i [v1; v2; 1]) for every output coordinate i."""
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    k = tensor_s.shape[0]
    if tensor_s.shape != (k, k, k) or v1.shape != (k,) or v2.shape != (k,):
        raise ConfigurationError(
            f"compose dimension mismatch: T {tensor_s.shape}, v1 {v1.shape}, v2 {v2.shape}"
        )
    if matrix_s.shape != (k, 2 * k + 1):
        raise ConfigurationError(f"transform must be {k} x {2 * k + 1}, got {matrix_s.shape}")
    if counter is not None:
        counter.count_compose(k)
    bilinear = np.einsum("iab,a,b->i", tensor_s, v1, v2)
    affine = matrix_s @ np.concatenate([v1, v2, [1.0]])
    return np.tanh(bilinear + affine)


def classify_node(v, classifier_s) -> np.ndarray:
    """softmax(C [v; 1]), a distribution over the class count."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or classifier_s.shape[1] != v.size + 1:
        raise ConfigurationError(
            f"classifier needs {v.size + 1} columns, got shape {classifier_s.shape}"
        )
    return softmax(classifier_s @ np.append(v, 1.0))


def _node_probs(logits: np.ndarray) -> np.ndarray:
    # same stable formula as core.softmax but without the finiteness
    # validation, so a diverging run surfaces as a non-finite loss at
    # the training step instead of a low-level error mid-forward
    shifted = np.exp(logits - np.max(logits))
    return shifted / shifted.sum()


@dataclass
class _NodeEval:
    label: int
    left: int | None = None       # child positions in the trace node list
    right: int | None = None
    word_index: int | None = None
    pre: np.ndarray | None = None       # pre-tanh input, length k
    vector: np.ndarray | None = None    # post-tanh, length k
    logits: np.ndarray | None = None
    probs: np.ndarray | None = None

    @property
    def is_leaf(self) -> bool:
        return self.word_index is not None


@dataclass
class TreeTrace:
    """Everything forward_tree computed, children listed before parents."""

    nodes: list
    params: SlicedParams

    @property
    def subspace(self) -> np.ndarray:
        return self.params.subspace

    @property
    def root(self) -> _NodeEval:
        return self.nodes[-1]


def forward_tree(
    model: CompactRNTN,
    tree: SentimentTree,
    vocab: Vocabulary,
    subspace=None,
    params: SlicedParams | None = None,
    counter: OpCounter | None = None,
) -> TreeTrace:
    """Evaluate a phrase tree bottom-up under one shared subspace.

    Leaves look up their (sliced) word vector and pass it through tanh;
    internal nodes compose their children; every node is classified.
    ``params`` overrides slicing when the caller already holds a
    (possibly fuzzed) parameter bundle.
    """
    if params is None:
        params = (
            full_parameters(model) if subspace is None else slice_parameters(model, subspace)
        )
    nodes: list = []

    def visit(node: SentimentTree) -> int:
        if node.is_leaf:
            w = vocab.lookup(node.token)
            pre = params.words[w].copy()
            rec = _NodeEval(label=node.label, word_index=w, pre=pre, vector=np.tanh(pre))
        else:
            left = visit(node.children[0])
            right = visit(node.children[1])
            v1, v2 = nodes[left].vector, nodes[right].vector
            if counter is not None:
                counter.count_compose(params.k)
            bilinear = np.einsum("iab,a,b->i", params.tensor, v1, v2)
            affine = params.transform @ np.concatenate([v1, v2, [1.0]])
            pre = bilinear + affine
            rec = _NodeEval(
                label=node.label, left=left, right=right, pre=pre, vector=np.tanh(pre)
            )
        rec.logits = params.classifier @ np.append(rec.vector, 1.0)
        rec.probs = _node_probs(rec.logits)
        nodes.append(rec)
        return len(nodes) - 1

    visit(tree)
    return TreeTrace(nodes=nodes, params=params)


def backward_tree(model: CompactRNTN, trace: TreeTrace, logit_grads) -> RntnGradients:
    """Backpropagation through structure.

    ``logit_grads`` aligns with ``trace.nodes``; entries may be None for
    nodes that contribute no loss.  Gradients are computed at the
    parameters stored in the trace and scattered into full-shape arrays,
    so positions outside the trace's subspace stay exactly zero.
    """
    params = trace.params
    if len(logit_grads) != len(trace.nodes):
        raise ValueError(
            f"need one logit gradient slot per node, got {len(logit_grads)} for "
            f"{len(trace.nodes)} nodes"
        )
    k = params.k
    c = params.classifier.shape[0]
    d_tensor = np.zeros((k, k, k))
    d_transform = np.zeros((k, 2 * k + 1))
    d_classifier = np.zeros((c, k + 1))
    d_words: dict = {}
    vec_grads = [np.zeros(k) for _ in trace.nodes]

    for j in range(len(trace.nodes) - 1, -1, -1):
        node = trace.nodes[j]
        dv = vec_grads[j]
        g = logit_grads[j]
        if g is not None:
            g = np.asarray(g, dtype=np.float64)
            if g.shape != (c,):
                raise ValueError(f"logit gradient {j} has shape {g.shape}, expected ({c},)")
            d_classifier += np.outer(g, np.append(node.vector, 1.0))
            dv = dv + params.classifier[:, :k].T @ g
        du = dv * (1.0 - node.vector**2)
        if node.is_leaf:
            if node.word_index in d_words:
                d_words[node.word_index] += du
            else:
                d_words[node.word_index] = du.copy()
        else:
            v1 = trace.nodes[node.left].vector
            v2 = trace.nodes[node.right].vector
            d_tensor += np.einsum("i,a,b->iab", du, v1, v2)
            d_transform += np.outer(du, np.concatenate([v1, v2, [1.0]]))
            vec_grads[node.left] += np.einsum("i,iab,b->a", du, params.tensor, v2)
            vec_grads[node.left] += params.transform[:, :k].T @ du
            vec_grads[node.right] += np.einsum("i,iab,a->b", du, params.tensor, v1)
            vec_grads[node.right] += params.transform[:, k : 2 * k].T @ du

    grads = RntnGradients.zeros_like(model)
    s = params.subspace
    n = params.full_n
    grads.tensor[np.ix_(s, s, s)] = d_tensor
    grads.transform[np.ix_(s, np.concatenate([s, n + s, [2 * n]]))] = d_transform
    grads.classifier[:, np.concatenate([s, [n]])] = d_classifier
    for w, dw in d_words.items():
        grads.words[w, s] = dw
    return grads


def tree_loss_and_gradients(
    model: CompactRNTN,
    tree: SentimentTree,
    vocab: Vocabulary,
    subspace=None,
    params: SlicedParams | None = None,
    root_only: bool = False,
    counter: OpCounter | None = None,
):
    """Summed cross-entropy over labeled nodes and its parameter gradients.

    Every node carries a label, so by default every node contributes;
    ``root_only`` restricts the loss to the root classifier.  Returns
    ``(loss, gradients, trace)``.
    """
    trace = forward_tree(model, tree, vocab, subspace=subspace, params=params, counter=counter)
    c = trace.params.classifier.shape[0]
    loss = 0.0
    logit_grads: list = [None] * len(trace.nodes)
    scored = [len(trace.nodes) - 1] if root_only else range(len(trace.nodes))
    for j in scored:
        node = trace.nodes[j]
        if not 0 <= node.label < c:
            raise ConfigurationError(f"node label {node.label} outside 0..{c - 1}")
        loss -= float(log_softmax(node.logits)[node.label])
        g = node.probs.copy()
        g[node.label] -= 1.0
        logit_grads[j] = g
    return loss, backward_tree(model, trace, logit_grads), trace


class _DictMomentum:
    """Momentum over a name -> array parameter dict."""

    def __init__(self, params: dict, momentum: float):
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(arr) for name, arr in params.items()}

    def step(self, params: dict, grads: dict, lr: float) -> None:
        for name, param in params.items():
            v = self.velocity[name]
            v *= self.momentum
            v -= lr * grads[name]
            param += v


def train_step_fuzzed(
    model: CompactRNTN,
    tree: SentimentTree,
    vocab: Vocabulary,
    noise: NoiseConfig,
    rng: RngStream,
    lr: float,
    state: _DictMomentum | None = None,
    root_only: bool = False,
    l2: float = 0.0,
    epoch: int = 0,
    step: int = 0,
) -> float:
    """One per-tree SGD step through a fuzzed, subspace-sliced child.

    Samples a subspace and a weight fuzz from named substreams of
    ``rng``, evaluates loss and gradients at the perturbed sliced
    parameters, then applies the step to the CLEAN parameters; the fuzz
    is discarded.  Word fuzz covers only the rows this tree's leaves
    touch, since no other word vector enters the gradient.
    """
    s = sample_subspace(model.n, noise.subspace_fraction, rng.derive("subspace"))
    params = slice_parameters(model, s)
    if noise.weight_sigma > 0.0:
        fuzz_rng = rng.derive("fuzz")
        fuzzed = fuzz_parameters(
            {
                "tensor": params.tensor,
                "transform": params.transform,
                "classifier": params.classifier,
            },
            noise.weight_sigma,
            fuzz_rng,
        )
        params.tensor = fuzzed["tensor"]
        params.transform = fuzzed["transform"]
        params.classifier = fuzzed["classifier"]
        leaf_rows = np.unique([vocab.lookup(leaf.token) for leaf in tree.leaves()])
        params.words[leaf_rows] += fuzz_rng.normal(
            size=(leaf_rows.size, params.k), sigma=noise.weight_sigma
        )
    loss, grads, _ = tree_loss_and_gradients(model, tree, vocab, params=params, root_only=root_only)
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"non-finite tree loss at epoch {epoch}, step {step}")
    grad_dict = grads.to_dict()
    if l2 > 0.0:
        # decay acts on the clean parameters; the fuzz is not part of the model
        for name, param in model.parameter_dict().items():
            grad_dict[name] = grad_dict[name] + l2 * param
    if state is None:
        for name, param in model.parameter_dict().items():
            param -= lr * grad_dict[name]
    else:
        state.step(model.parameter_dict(), grad_dict, lr)
    return loss


def predict_averaged(
    model: CompactRNTN,
    tree: SentimentTree,
    vocab: Vocabulary,
    num_subspaces: int,
    fraction: float,
    rng: RngStream,
) -> np.ndarray:
    """Mean root distribution over independently sampled subspaces.

    No weight fuzzing is applied at prediction time.  With one subspace
    and fraction 1 this is exactly a single clean forward pass.
    """
    if num_subspaces < 1:
        raise ConfigurationError(f"num_subspaces must be >= 1, got {num_subspaces}")
    total = np.zeros(model.c)
    for j in range(num_subspaces):
        s = sample_subspace(model.n, fraction, rng.derive("predict", j))
        trace = forward_tree(model, tree, vocab, subspace=s)
        total += trace.root.probs
    return total / num_subspaces


@dataclass(frozen=True)
class RntnTrainConfig:
    epochs: int = 30
    learning_rate: float = 0.02
    momentum: float = 0.9
    lr_decay: float = 0.5
    lr_decay_every_fraction: float = 0.34
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    l2: float = 0.0
    root_only: bool = False
    eval_subspaces: int = 50
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate < 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigurationError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if not 0.0 < self.lr_decay_every_fraction <= 1.0:
            raise ConfigurationError(
                f"lr_decay_every_fraction must be in (0, 1], got "
                f"{self.lr_decay_every_fraction}"
            )
        if self.l2 < 0:
            raise ConfigurationError(f"l2 must be >= 0, got {self.l2}")
        if self.eval_subspaces < 1:
            raise ConfigurationError(f"eval_subspaces must be >= 1, got {self.eval_subspaces}")
        if self.eval_every < 1:
            raise ConfigurationError(f"eval_every must be >= 1, got {self.eval_every}")


def evaluate_rntn(
    model: CompactRNTN,
    trees,
    vocab: Vocabulary,
    num_subspaces: int,
    fraction: float,
    rng: RngStream,
):
    """Root-level accuracy; returns (fine accuracy, binary accuracy).

    Binary predictions sum the two negative against the two positive
    class probabilities; neutral-rooted trees are skipped on the binary
    side.  With no non-neutral roots the binary accuracy is NaN.
    """
    fine_hits = 0
    binary_hits = 0
    binary_total = 0
    for idx, tree in enumerate(trees):
        probs = predict_averaged(model, tree, vocab, num_subspaces, fraction, rng.derive("tree", idx))
        fine, polarity = root_and_binary_labels(tree)
        if int(np.argmax(probs)) == fine:
            fine_hits += 1
        if polarity is not Polarity.NEUTRAL_SKIP:
            binary_total += 1
            negative = probs[0] + probs[1]
            positive = probs[3] + probs[4]
            predicted = Polarity.POS if positive > negative else Polarity.NEG
            if predicted is polarity:
                binary_hits += 1
    fine_acc = fine_hits / len(trees) if trees else float("nan")
    binary_acc = binary_hits / binary_total if binary_total else float("nan")
    return fine_acc, binary_acc


@dataclass
class RntnEpoch:
    epoch: int
    train_loss: float
    fine_acc: float
    binary_acc: float


@dataclass
class RntnResult:
    model: CompactRNTN
    metrics: list

    @property
    def final_fine_acc(self) -> float:
        return self.metrics[-1].fine_acc if self.metrics else float("nan")

    @property
    def final_binary_acc(self) -> float:
        return self.metrics[-1].binary_acc if self.metrics else float("nan")


def _scheduled_lr(config: RntnTrainConfig, epoch: int) -> float:
    interval = max(1, round(config.lr_decay_every_fraction * config.epochs))
    return config.learning_rate * config.lr_decay ** (epoch // interval)


def train_rntn(
    model: CompactRNTN,
    trees,
    vocab: Vocabulary,
    config: RntnTrainConfig,
    eval_trees=None,
) -> RntnResult:
    """Per-tree momentum SGD through fuzzed, sliced children.

    Per-tree RNG streams are keyed by (epoch, dataset index), so
    results do not depend on visit order; the visit order itself comes
    from a per-epoch shuffle stream.  Evaluation runs after every epoch
    on ``eval_trees`` (defaults to the training trees) with the
    configured subspace count and no fuzzing.
    """
    if not trees:
        raise ConfigurationError("need at least one training tree")
    eval_trees = trees if eval_trees is None else eval_trees
    root = RngStream(config.seed)
    state = _DictMomentum(model.parameter_dict(), config.momentum)
    metrics: list = []
    for epoch in range(config.epochs):
        lr = _scheduled_lr(config, epoch)
        order = root.derive("shuffle", epoch).permutation(len(trees))
        loss_sum = 0.0
        for step, tree_idx in enumerate(order):
            tree_rng = root.derive("tree", epoch, int(tree_idx))
            loss_sum += train_step_fuzzed(
                model,
                trees[tree_idx],
                vocab,
                config.noise,
                tree_rng,
                lr,
                state=state,
                root_only=config.root_only,
                l2=config.l2,
                epoch=epoch,
                step=step,
            )
        # accuracy sweeps are far costlier than the epoch itself, so they
        # run on a stride; the last epoch always gets one
        if (epoch + 1) % config.eval_every == 0 or epoch == config.epochs - 1:
            fine_acc, binary_acc = evaluate_rntn(
                model,
                eval_trees,
                vocab,
                config.eval_subspaces,
                config.noise.subspace_fraction,
                root.derive("eval", epoch),
            )
        else:
            fine_acc, binary_acc = float("nan"), float("nan")
        metrics.append(
            RntnEpoch(
                epoch=epoch,
                train_loss=loss_sum / len(trees),
                fine_acc=fine_acc,
                binary_acc=binary_acc,
            )
        )
    return RntnResult(model=model, metrics=metrics)


def save_rntn(path, model: CompactRNTN) -> None:
    meta = {
        "kind": "compact-rntn",
        "n": str(model.n),
        "c": str(model.c),
        "vocab": str(model.vocab_size),
    }
    save_arrays(path, meta, model.parameter_dict())


def load_rntn(path) -> CompactRNTN:
    meta, arrays = load_arrays(path)
    if meta.get("kind") != "compact-rntn":
        raise CheckpointFormatError(f"not a tensor-network checkpoint: kind={meta.get('kind')!r}")
    try:
        model = CompactRNTN(
            arrays["tensor"], arrays["transform"], arrays["classifier"], arrays["words"]
        )
    except KeyError as missing:
        raise CheckpointFormatError(f"checkpoint missing array {missing}") from None
    expected = (int(meta.get("n", -1)), int(meta.get("c", -1)), int(meta.get("vocab", -1)))
    if (model.n, model.c, model.vocab_size) != expected:
        raise CheckpointFormatError(
            f"header says n,c,|V| = {expected}, arrays give "
            f"{(model.n, model.c, model.vocab_size)}"
        )
    return model
