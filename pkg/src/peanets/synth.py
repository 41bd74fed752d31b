"""Deterministic synthetic stand-ins for the two benchmark datasets.

Both generators key every example to a counter-based stream, so an
example's content depends only on (seed, example index); disjoint index
ranges give disjoint train/test pools under one seed.

Digits start from fixed 7x5 glyph bitmaps, upscaled and centered on a
28x28 canvas, then pushed through a random affine warp (rotation,
log-scale, shear, translation), Gaussian blur, an intensity rescale,
and additive pixel noise.  The result keeps the real data's shape and
value conventions (float64 in [0, 1], 784 pixels, labels 0..9).

Sentiment trees are random binary bracketings over a pseudo-word
lexicon with integer valences; an internal node sums its children, a
negator leaf flips its sibling, and fine labels quantize the valence to
0..4.  Internal non-root labels carry a little flip noise, the root
label stays clean.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import affine_transform, gaussian_filter

from .core import RngStream
from .errors import ConfigurationError
from .mnist import LabeledDataset
from .treebank import SentimentTree

CANVAS = 28

_GLYPHS = {
    0: (" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "),
    1: ("  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "),
    2: (" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"),
    3: (" ### ", "#   #", "    #", "  ## ", "    #", "#   #", " ### "),
    4: ("   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "),
    5: ("#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "),
    6: ("  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "),
    7: ("#####", "    #", "   # ", "  #  ", "  #  ", " #   ", " #   "),
    8: (" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "),
    9: (" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "),
}


def _glyph_canvas(digit: int) -> np.ndarray:
    bitmap = np.array(
        [[1.0 if ch == "#" else 0.0 for ch in row] for row in _GLYPHS[digit]]
    )
    big = np.kron(bitmap, np.ones((3, 3)))
    canvas = np.zeros((CANVAS, CANVAS))
    r0 = (CANVAS - big.shape[0]) // 2
    c0 = (CANVAS - big.shape[1]) // 2
    canvas[r0 : r0 + big.shape[0], c0 : c0 + big.shape[1]] = big
    return canvas


_TEMPLATES = np.stack([_glyph_canvas(d) for d in range(10)])


def _render_digit(digit: int, rng: RngStream) -> np.ndarray:
    draws = rng.uniform(size=7)
    angle = (draws[0] * 2.0 - 1.0) * 0.35
    scale = np.exp((draws[1] * 2.0 - 1.0) * 0.15)
    shear = (draws[2] * 2.0 - 1.0) * 0.15
    shift = (draws[3:5] * 2.0 - 1.0) * 3.0
    blur = 0.4 + draws[5] * 0.5
    intensity = 0.6 + draws[6] * 0.4

    cos_a, sin_a = np.cos(angle), np.sin(angle)
    rotation = np.array([[cos_a, -sin_a], [sin_a, cos_a]])
    warp = rotation @ (scale * np.array([[1.0, shear], [0.0, 1.0]]))
    center = np.array([(CANVAS - 1) / 2.0] * 2)
    offset = center - warp @ center - shift
    image = affine_transform(_TEMPLATES[digit], warp, offset=offset, order=1, cval=0.0)
    image = gaussian_filter(image, sigma=blur) * intensity
    image = image + rng.normal(size=(CANVAS, CANVAS), sigma=0.05)
    return np.clip(image, 0.0, 1.0)


def synthetic_digits(n: int, seed: int, start_index: int = 0) -> LabeledDataset:
    """``n`` warped digit images with labels cycling 0..9.

    Example ``i`` depends only on ``(seed, start_index + i)``, so
    non-overlapping index ranges under one seed never share examples;
    a test pool conventionally starts at index 10**6.
    """
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    root = RngStream(seed)
    images = np.empty((n, CANVAS * CANVAS))
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        index = start_index + i
        labels[i] = index % 10
        images[i] = _render_digit(int(labels[i]), root.derive("digit", index)).ravel()
    return LabeledDataset(images, labels)


# ---------------------------------------------------------------------------
# sentiment trees

_SYLLABLES = ("ba", "do", "ki", "lu", "men", "ra", "sto", "vel", "zo", "pia")

# valence -> pseudo-words; negators flip their sibling subtree
_NEGATORS = ("nux", "norr", "nipo")


def _lexicon():
    words = {valence: [] for valence in (-2, -1, 0, 1, 2)}
    marks = {-2: "gr", -1: "m", 0: "t", 1: "p", 2: "sh"}
    for valence, mark in marks.items():
        for i, syllable in enumerate(_SYLLABLES):
            other = _SYLLABLES[(i * 3 + 1) % len(_SYLLABLES)]
            words[valence].append(f"{mark}{syllable}{other}")
    return words


_WORDS = _lexicon()
_VALENCES = (-2, -1, 0, 1, 2)


def _quantize(valence: int) -> int:
    if valence <= -2:
        return 0
    if valence >= 2:
        return 4
    return valence + 2


def _build_span(tokens, valences, rng: RngStream, depth: int):
    """Random binary bracketing; returns (tree, valence)."""
    if len(tokens) == 1:
        valence = valences[0]
        label = 2 if valence is None else _quantize(valence)
        return SentimentTree(label, token=tokens[0]), valence
    cut = 1 + int(rng.derive("cut", depth, len(tokens)).integers(0, len(tokens) - 1))
    left, lv = _build_span(tokens[:cut], valences[:cut], rng, depth * 2 + 1)
    right, rv = _build_span(tokens[cut:], valences[cut:], rng, depth * 2 + 2)
    if lv is None and rv is None:
        valence = 0
    elif lv is None:
        valence = -rv
    elif rv is None:
        valence = -lv
    else:
        valence = max(-2, min(2, lv + rv))
    label = _quantize(valence)
    return SentimentTree(label, children=(left, right)), valence


def _flip_internal_labels(tree: SentimentTree, rng: RngStream, noise: float, is_root: bool):
    if tree.is_leaf:
        return tree
    children = tuple(
        _flip_internal_labels(child, rng.derive("child", i), noise, False)
        for i, child in enumerate(tree.children)
    )
    label = tree.label
    if not is_root and noise > 0.0:
        draws = rng.derive("flip").uniform(size=2)
        if draws[0] < noise:
            label = (label + 1 + int(draws[1] * 4.0)) % 5
    return SentimentTree(label, children=children)


def synthetic_treebank(
    n: int, seed: int, start_index: int = 0, label_noise: float = 0.07
) -> list:
    """``n`` labeled binary sentiment trees over a fixed pseudo-word lexicon.

    Sentences are 2 to 8 tokens; roughly one token in eight is a
    negator.  Tree ``i`` depends only on ``(seed, start_index + i)``.
    """
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    if not 0.0 <= label_noise < 1.0:
        raise ConfigurationError(f"label_noise must be in [0, 1), got {label_noise}")
    root = RngStream(seed)
    trees = []
    for i in range(n):
        rng = root.derive("tree", start_index + i)
        length = 2 + int(rng.derive("length").integers(0, 7))
        picks = rng.derive("tokens").uniform(size=(length, 3))
        tokens, valences = [], []
        for row in picks:
            if row[0] < 0.125:
                tokens.append(_NEGATORS[int(row[1] * len(_NEGATORS))])
                valences.append(None)
            else:
                valence = _VALENCES[int(row[1] * len(_VALENCES))]
                tokens.append(_WORDS[valence][int(row[2] * len(_WORDS[valence]))])
                valences.append(valence)
        tree, _ = _build_span(tokens, valences, rng, 0)
        trees.append(_flip_internal_labels(tree, rng.derive("noise"), label_noise, True))
    return trees


def lexicon_tokens() -> list:
    """Every token the generator can emit, in a fixed order."""
    tokens = list(_NEGATORS)
    for valence in _VALENCES:
        tokens.extend(_WORDS[valence])
    return tokens
