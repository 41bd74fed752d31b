import gzip

import numpy as np
import pytest

from peanets.core import RngStream
from peanets.errors import ConfigurationError
from peanets.mnist import (
    IdxFormatError,
    LabeledDataset,
    SplitSpec,
    load_idx,
    make_split,
    write_idx_images,
    write_idx_labels,
)
from peanets.treebank import (
    Polarity,
    SentimentTree,
    TreeParseError,
    Vocabulary,
    build_vocabulary,
    load_trees,
    parse_tree,
    root_and_binary_labels,
)


# ---------------------------------------------------------------------------
# IDX loading


def fixture_images(seed=0, n=4, rows=28, cols=28):
    rng = RngStream(seed)
    raw = rng.integers(0, 256, size=(n, rows, cols)).astype(np.uint8)
    labels = np.asarray(rng.integers(0, 10, size=n), dtype=np.uint8)
    return raw, labels


def write_pair(tmp_path, raw, labels, suffix=""):
    ipath = tmp_path / f"images{suffix}"
    lpath = tmp_path / f"labels{suffix}"
    write_idx_images(ipath, raw)
    write_idx_labels(lpath, labels)
    return ipath, lpath


def test_load_idx_four_image_fixture(tmp_path):
    raw, labels = fixture_images()
    data = load_idx(*write_pair(tmp_path, raw, labels))
    assert len(data) == 4
    assert data.images.shape == (4, 784)
    assert data.labels.shape == (4,)
    assert np.array_equal(data.labels, labels.astype(np.int64))


def test_load_idx_round_trip_bit_exact(tmp_path):
    raw, labels = fixture_images(seed=1, n=7)
    data = load_idx(*write_pair(tmp_path, raw, labels))
    back = np.round(data.images * 255.0).astype(np.uint8).reshape(7, 28, 28)
    assert np.array_equal(back, raw)
    assert np.max(np.abs(data.images * 255.0 - raw.reshape(7, 784))) < 1e-12


def test_load_idx_all_255_scales_to_one(tmp_path):
    raw = np.full((2, 28, 28), 255, dtype=np.uint8)
    data = load_idx(*write_pair(tmp_path, raw, np.zeros(2, dtype=np.uint8)))
    assert np.all(data.images == 1.0)


def test_load_idx_gzip_variant(tmp_path):
    raw, labels = fixture_images(seed=2, n=3)
    plain = load_idx(*write_pair(tmp_path, raw, labels))
    gz = load_idx(*write_pair(tmp_path, raw, labels, suffix=".gz"))
    assert np.array_equal(plain.images, gz.images)
    assert np.array_equal(plain.labels, gz.labels)
    with open(tmp_path / "images.gz", "rb") as fh:
        assert fh.read(2) == b"\x1f\x8b"


def test_load_idx_bad_magic_names_offset_zero(tmp_path):
    raw, labels = fixture_images(seed=3)
    ipath, lpath = write_pair(tmp_path, raw, labels)
    blob = bytearray(ipath.read_bytes())
    blob[3] = 0x99
    ipath.write_bytes(bytes(blob))
    with pytest.raises(IdxFormatError) as err:
        load_idx(ipath, lpath)
    assert err.value.offset == 0
    assert "offset 0" in str(err.value)


def test_load_idx_truncation_and_trailing(tmp_path):
    raw, labels = fixture_images(seed=4)
    ipath, lpath = write_pair(tmp_path, raw, labels)
    blob = ipath.read_bytes()
    ipath.write_bytes(blob[:-10])
    with pytest.raises(IdxFormatError) as err:
        load_idx(ipath, lpath)
    assert err.value.offset == len(blob) - 10
    ipath.write_bytes(blob + b"\x00")
    with pytest.raises(IdxFormatError):
        load_idx(ipath, lpath)


def test_load_idx_count_mismatch(tmp_path):
    raw, labels = fixture_images(seed=5, n=4)
    ipath, _ = write_pair(tmp_path, raw, labels)
    lpath = tmp_path / "short-labels"
    write_idx_labels(lpath, labels[:3])
    with pytest.raises(IdxFormatError) as err:
        load_idx(ipath, lpath)
    assert "does not match" in str(err.value)


def test_labeled_dataset_validation():
    with pytest.raises(ConfigurationError):
        LabeledDataset(np.zeros((3, 4)), np.zeros(2, dtype=int))
    with pytest.raises(ConfigurationError):
        LabeledDataset(np.full((2, 4), 1.5), np.zeros(2, dtype=int))


# ---------------------------------------------------------------------------
# splits


def balanced_dataset(n_per_class=30, classes=10, dim=16, seed=9):
    rng = RngStream(seed)
    n = n_per_class * classes
    images = rng.uniform(size=(n, dim))
    labels = np.repeat(np.arange(classes), n_per_class)
    perm = rng.permutation(n)
    return LabeledDataset(images[perm], labels[perm])


def test_split_balance_partition_determinism():
    data = balanced_dataset()
    spec = SplitSpec(n_labeled=100, seed=4, index=2)
    split = make_split(data, spec)
    assert len(split.labeled) == 100
    for cls in range(10):
        assert int((split.labeled.labels == cls).sum()) == 10
    assert split.unlabeled_images.shape == (200, 16)
    union = np.union1d(split.labeled_indices, split.unlabeled_indices)
    assert np.array_equal(union, np.arange(300))
    assert np.intersect1d(split.labeled_indices, split.unlabeled_indices).size == 0

    again = make_split(data, SplitSpec(n_labeled=100, seed=4, index=2))
    assert np.array_equal(split.labeled_indices, again.labeled_indices)
    other = make_split(data, SplitSpec(n_labeled=100, seed=4, index=3))
    assert not np.array_equal(split.labeled_indices, other.labeled_indices)


def test_split_labels_withheld():
    data = balanced_dataset()
    split = make_split(data, SplitSpec(n_labeled=50, seed=0))
    # the unlabeled side is a bare image array
    assert isinstance(split.unlabeled_images, np.ndarray)
    assert split.unlabeled_images.ndim == 2


def test_split_class_shortage():
    data = balanced_dataset(n_per_class=3)
    with pytest.raises(ValueError):
        make_split(data, SplitSpec(n_labeled=100, seed=0))


def test_split_spec_validation():
    with pytest.raises(ConfigurationError):
        SplitSpec(n_labeled=105)
    with pytest.raises(ConfigurationError):
        SplitSpec(n_labeled=0)
    SplitSpec(n_labeled=600)


# ---------------------------------------------------------------------------
# treebank parsing


def test_parse_simple_internal_node():
    tree = parse_tree("(3 (2 good) (2 movie))")
    assert tree.label == 3
    assert not tree.is_leaf
    left, right = tree.children
    assert (left.label, left.token) == (2, "good")
    assert (right.label, right.token) == (2, "movie")


def test_parse_single_leaf():
    tree = parse_tree("(2 hello)")
    assert tree.is_leaf
    assert tree.token == "hello"


def test_parse_unbalanced_reports_position_eight():
    with pytest.raises(TreeParseError) as err:
        parse_tree("(3 (2 a)")
    assert err.value.position == 8
    assert "unbalanced at position 8" in str(err.value)


def test_parse_error_cases():
    with pytest.raises(TreeParseError):
        parse_tree("(x hello)")
    with pytest.raises(TreeParseError):
        parse_tree("(2 a b)")  # token leaf with trailing token
    with pytest.raises(TreeParseError):
        parse_tree("(2 (1 a))")  # single subtree
    with pytest.raises(TreeParseError):
        parse_tree("(2 (1 a) (1 b) (1 c))")
    with pytest.raises(TreeParseError) as err:
        parse_tree("(2 hello) extra")
    assert "trailing garbage" in str(err.value)
    with pytest.raises(TreeParseError):
        parse_tree("(7 hello)")  # label outside fine range
    with pytest.raises(TreeParseError):
        parse_tree("(-1 hello)")
    with pytest.raises(TreeParseError):
        parse_tree("(2)")
    with pytest.raises(TreeParseError):
        parse_tree("")


def test_parse_whitespace_insensitive():
    a = parse_tree("(3 (2 good) (2 movie))")
    b = parse_tree("  (3   (2 good)\t(2 movie)  ) ")
    assert a == b


def test_round_trip_and_binary_property():
    lines = [
        "(3 (2 good) (2 movie))",
        "(2 hello)",
        "(0 (1 (2 not) (3 good)) (2 here))",
        "(4 (3 (2 a) (3 (2 truly) (4 great))) (2 film))",
    ]
    for line in lines:
        tree = parse_tree(line)
        assert parse_tree(tree.serialize()) == tree
        leaves = len(tree.leaves())
        internal = sum(1 for n in tree.nodes() if not n.is_leaf)
        assert leaves == internal + 1


def test_parser_fuzz_never_panics():
    rng = RngStream(33)
    alphabet = "()0123456789 ab"
    for i in range(500):
        length = 1 + i % 30
        chars = rng.integers(0, len(alphabet), size=length)
        line = "".join(alphabet[c] for c in chars)
        try:
            parse_tree(line)
        except TreeParseError as err:
            assert 0 <= err.position <= len(line)


def test_load_trees_skips_blank_lines(tmp_path):
    path = tmp_path / "trees.txt"
    path.write_text("(2 hello)\n\n(3 (2 a) (2 b))\n", encoding="utf-8")
    trees = load_trees(path)
    assert len(trees) == 2
    assert trees[1].children is not None


# ---------------------------------------------------------------------------
# vocabulary and binary labels


def test_vocabulary_first_seen_order():
    trees = [parse_tree("(3 (2 good) (2 movie))"), parse_tree("(2 good)")]
    vocab = build_vocabulary(trees, min_count=1)
    assert len(vocab) == 3  # unknown + 2 tokens
    assert vocab.lookup("good") == 1
    assert vocab.lookup("movie") == 2
    assert vocab.lookup("never-seen") == vocab.unknown_index == 0


def test_vocabulary_min_count_filters():
    trees = [parse_tree("(3 (2 good) (2 movie))"), parse_tree("(2 good)")]
    vocab = build_vocabulary(trees, min_count=2)
    assert vocab.lookup("good") == 1
    assert vocab.lookup("movie") == 0
    all_unknown = build_vocabulary(trees, min_count=10**9)
    assert len(all_unknown) == 1


def test_vocabulary_determinism_and_json():
    trees = [parse_tree("(4 (3 alpha) (1 (2 beta) (0 gamma)))")]
    a = build_vocabulary(trees)
    b = build_vocabulary([parse_tree(trees[0].serialize())])
    assert a.index_to_token == b.index_to_token
    restored = Vocabulary.from_json(a.to_json())
    assert restored.index_to_token == a.index_to_token


def test_binary_label_collapse():
    assert root_and_binary_labels(SentimentTree(0, token="x"))[1] is Polarity.NEG
    assert root_and_binary_labels(SentimentTree(1, token="x"))[1] is Polarity.NEG
    assert root_and_binary_labels(SentimentTree(2, token="x"))[1] is Polarity.NEUTRAL_SKIP
    assert root_and_binary_labels(SentimentTree(3, token="x"))[1] is Polarity.POS
    fine, pol = root_and_binary_labels(SentimentTree(4, token="x"))
    assert (fine, pol) == (4, Polarity.POS)
    with pytest.raises(ValueError):
        root_and_binary_labels(SentimentTree(9, token="x"))


def test_tree_type_validation():
    with pytest.raises(ConfigurationError):
        SentimentTree(2)  # neither token nor children
    with pytest.raises(ConfigurationError):
        SentimentTree(2, token="a", children=(SentimentTree(1, token="b"),) * 2)
    with pytest.raises(ConfigurationError):
        SentimentTree(2, children=(SentimentTree(1, token="b"),))
