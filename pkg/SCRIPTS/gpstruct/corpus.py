"""
Corpus handling for linear-chain sequence labelling data.

Data file format (UTF-8, one token per line):

    #dim 5
    #labels B I O
    0:1 3:0.5 B
    1:1 I

    2:1 O

Each token line holds whitespace-separated ``idx:val`` features followed by the
label (unlabeled files omit the label). A blank line ends a sequence. The
optional ``#dim D`` header declares the feature dimension; otherwise it is one
more than the largest index seen. The optional ``#labels`` header fixes the
label alphabet and its order; without it labels are numbered by first
appearance. Other lines starting with ``#`` are ignored.

Usage:
    from gpstruct.corpus import load_corpus, split_experiments
    corpus = load_corpus("train.txt")
    splits = split_experiments(corpus, n_splits=5, train_size=50, test_size=100, seed=1)
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
from scipy import sparse

from .errors import CorpusFormatError, InsufficientDataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Sparse feature vector: sorted unique indices, finite values, fixed dim."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if indices.shape != values.shape:
            raise ValueError("indices and values must have the same length")
        if self.dim < 1:
            raise ValueError(f"feature dim must be >= 1, got {self.dim}")
        if indices.size:
            if indices.min() < 0 or indices.max() >= self.dim:
                raise ValueError(f"feature index out of range [0, {self.dim})")
            if np.unique(indices).size != indices.size:
                raise ValueError("duplicate feature index")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature values must be finite")
        order = np.argsort(indices, kind="stable")
        object.__setattr__(self, "indices", indices[order])
        object.__setattr__(self, "values", values[order])

    @classmethod
    def from_dense(cls, array: Sequence[float]) -> "FeatureVector":
        array = np.asarray(array, dtype=np.float64).reshape(-1)
        nonzero = np.flatnonzero(array)
        return cls(nonzero, array[nonzero], array.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def dot(self, other: "FeatureVector") -> float:
        if other.dim != self.dim:
            raise ValueError(f"feature dim mismatch: {self.dim} vs {other.dim}")
        common, mine, theirs = np.intersect1d(
            self.indices, other.indices, assume_unique=True, return_indices=True
        )
        return float(np.dot(self.values[mine], other.values[theirs]))

    def squared_distance(self, other: "FeatureVector") -> float:
        d2 = self.dot(self) + other.dot(other) - 2.0 * self.dot(other)
        return max(d2, 0.0)

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return (
            self.dim == other.dim
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )


@dataclass(frozen=True, eq=False)
class TokenSequence:
    """One x = (x_1..x_T) with optional labels y = (y_1..y_T)."""

    features: Tuple[FeatureVector, ...]
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        features = tuple(self.features)
        if not features:
            raise CorpusFormatError("empty sequence")
        dims = {fv.dim for fv in features}
        if len(dims) != 1:
            raise CorpusFormatError(f"sequence mixes feature dims {sorted(dims)}")
        object.__setattr__(self, "features", features)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if labels.size != len(features):
                raise CorpusFormatError(
                    f"{labels.size} labels for {len(features)} tokens"
                )
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features[0].dim

    def matrix(self) -> sparse.csr_matrix:
        """T x dim sparse feature matrix."""
        rows = np.concatenate(
            [np.full(fv.indices.size, t) for t, fv in enumerate(self.features)]
        )
        cols = np.concatenate([fv.indices for fv in self.features])
        vals = np.concatenate([fv.values for fv in self.features])
        return sparse.csr_matrix((vals, (rows, cols)), shape=(len(self), self.dim))

    def __eq__(self, other):
        if not isinstance(other, TokenSequence):
            return NotImplemented
        if self.features != other.features:
            return False
        if self.labels is None or other.labels is None:
            return self.labels is None and other.labels is None
        return np.array_equal(self.labels, other.labels)


@dataclass(frozen=True)
class Corpus:
    """Labelled (or unlabelled) sequences sharing a label alphabet and feature dim."""

    sequences: Tuple[TokenSequence, ...]
    label_alphabet: Tuple[str, ...]
    feature_dim: int

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        object.__setattr__(self, "label_alphabet", tuple(self.label_alphabet))
        n_labels = len(self.label_alphabet)
        if n_labels < 2:
            raise CorpusFormatError(f"need at least 2 labels, got {n_labels}")
        if len(set(self.label_alphabet)) != n_labels:
            raise CorpusFormatError("duplicate label names in alphabet")
        if not self.sequences:
            raise CorpusFormatError("no sequences")
        for n, seq in enumerate(self.sequences):
            if seq.dim != self.feature_dim:
                raise CorpusFormatError(
                    f"sequence {n}: feature dim {seq.dim} != corpus dim {self.feature_dim}"
                )
            if seq.labels is not None and (
                seq.labels.min() < 0 or seq.labels.max() >= n_labels
            ):
                raise CorpusFormatError(f"sequence {n}: label id out of range")

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def n_labels(self) -> int:
        return len(self.label_alphabet)

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([len(seq) for seq in self.sequences], dtype=np.int64)

    @cached_property
    def offsets(self) -> np.ndarray:
        """Start of each sequence in the concatenated position order."""
        return np.concatenate([[0], np.cumsum(self.lengths)[:-1]]).astype(np.int64)

    @property
    def n_positions(self) -> int:
        return int(self.lengths.sum())

    @property
    def is_labeled(self) -> bool:
        return all(seq.labels is not None for seq in self.sequences)

    @cached_property
    def feature_matrix(self) -> sparse.csr_matrix:
        """All positions stacked in layout order, shape (n_positions, feature_dim)."""
        return sparse.vstack([seq.matrix() for seq in self.sequences], format="csr")

    def subset(self, indices: Iterable[int]) -> "Corpus":
        return Corpus(
            tuple(self.sequences[i] for i in indices),
            self.label_alphabet,
            self.feature_dim,
        )

    def without_labels(self) -> "Corpus":
        return Corpus(
            tuple(TokenSequence(seq.features) for seq in self.sequences),
            self.label_alphabet,
            self.feature_dim,
        )


@dataclass(frozen=True)
class ExperimentSplit:
    train: Corpus
    test: Corpus
    split_id: int
    seed: int
    train_indices: Tuple[int, ...] = field(default=(), compare=False)
    test_indices: Tuple[int, ...] = field(default=(), compare=False)


# ==================== PARSING ====================


def _parse_features(fields: List[str], lineno: int) -> Tuple[List[int], List[float]]:
    indices, values = [], []
    for item in fields:
        idx_text, sep, val_text = item.partition(":")
        if not sep:
            raise CorpusFormatError(f"line {lineno}: malformed feature '{item}'")
        try:
            idx = int(idx_text)
            val = float(val_text)
        except ValueError:
            raise CorpusFormatError(f"line {lineno}: malformed feature '{item}'")
        if idx < 0:
            raise CorpusFormatError(f"line {lineno}: negative feature index {idx}")
        if not math.isfinite(val):
            raise CorpusFormatError(f"line {lineno}: non-finite feature value '{item}'")
        indices.append(idx)
        values.append(val)
    if len(set(indices)) != len(indices):
        raise CorpusFormatError(f"line {lineno}: duplicate feature index")
    return indices, values


def parse_corpus(
    stream: Union[str, TextIO, Iterable[str]],
    label_alphabet: Optional[Sequence[str]] = None,
    labeled: bool = True,
    feature_dim: Optional[int] = None,
) -> Corpus:
    """Parse the line format into a validated Corpus.

    Args:
        stream: file contents as a string, or an iterable of lines
        label_alphabet: fixed label names; inferred by first appearance when None
        labeled: whether each token line ends with a label field
        feature_dim: expected dimension (e.g. the training corpus's)

    Raises:
        CorpusFormatError: malformed line, index >= dim, unknown label, no sequences
    """
    lines = stream.splitlines() if isinstance(stream, str) else stream

    fixed_alphabet = label_alphabet is not None
    alphabet = list(label_alphabet) if fixed_alphabet else []
    label_ids = {name: i for i, name in enumerate(alphabet)}
    declared_labels = False

    declared_dim = feature_dim
    raw_sequences, current = [], []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            if current:
                raw_sequences.append(current)
                current = []
            continue
        if line.startswith("#"):
            parts = line.split()
            if parts[0] == "#dim":
                if len(parts) != 2 or not parts[1].isdigit() or int(parts[1]) < 1:
                    raise CorpusFormatError(f"line {lineno}: malformed #dim header")
                if declared_dim is not None and int(parts[1]) != declared_dim:
                    raise CorpusFormatError(
                        f"line {lineno}: #dim {parts[1]} != expected {declared_dim}"
                    )
                declared_dim = int(parts[1])
            elif parts[0] == "#labels":
                if declared_labels or current or raw_sequences:
                    raise CorpusFormatError(
                        f"line {lineno}: #labels must come once, before any token"
                    )
                names = parts[1:]
                if len(set(names)) != len(names):
                    raise CorpusFormatError(f"line {lineno}: duplicate name in #labels")
                if fixed_alphabet:
                    unknown = [name for name in names if name not in label_ids]
                    if unknown:
                        raise CorpusFormatError(
                            f"line {lineno}: unknown label '{unknown[0]}' in #labels"
                        )
                else:
                    alphabet = list(names)
                    label_ids = {name: i for i, name in enumerate(alphabet)}
                declared_labels = True
            continue

        if not labeled and not alphabet:
            raise CorpusFormatError("unlabeled data needs a label alphabet")

        fields = line.split()
        label = None
        if labeled:
            name = fields.pop()
            if ":" in name:
                raise CorpusFormatError(f"line {lineno}: missing label")
            if name not in label_ids:
                if fixed_alphabet or declared_labels:
                    raise CorpusFormatError(f"line {lineno}: unknown label '{name}'")
                label_ids[name] = len(alphabet)
                alphabet.append(name)
            label = label_ids[name]
        indices, values = _parse_features(fields, lineno)
        current.append((indices, values, label, lineno))
    if current:
        raw_sequences.append(current)

    if not raw_sequences:
        raise CorpusFormatError("no sequences")

    if declared_dim is None:
        max_index = max(
            (max(tok[0]) for seq in raw_sequences for tok in seq if tok[0]), default=0
        )
        declared_dim = max_index + 1

    sequences = []
    for seq in raw_sequences:
        features = []
        for indices, values, _, lineno in seq:
            if indices and max(indices) >= declared_dim:
                raise CorpusFormatError(
                    f"line {lineno}: feature index {max(indices)} >= dim {declared_dim}"
                )
            features.append(FeatureVector(indices, values, declared_dim))
        labels = [tok[2] for tok in seq] if labeled else None
        sequences.append(TokenSequence(tuple(features), labels))

    corpus = Corpus(tuple(sequences), tuple(alphabet), declared_dim)
    logger.debug(
        "parsed %d sequences, %d positions, %d labels, dim %d",
        len(corpus), corpus.n_positions, corpus.n_labels, corpus.feature_dim,
    )
    return corpus


def load_corpus(
    path: Union[str, Path],
    label_alphabet: Optional[Sequence[str]] = None,
    labeled: bool = True,
    feature_dim: Optional[int] = None,
) -> Corpus:
    with open(path, encoding="utf-8") as f:
        return parse_corpus(f, label_alphabet, labeled, feature_dim)


def serialize_corpus(corpus: Corpus, include_labels: bool = True) -> str:
    """Write a corpus in the line format; parse_corpus inverts it."""
    include_labels = include_labels and corpus.is_labeled
    out = [f"#dim {corpus.feature_dim}", "#labels " + " ".join(corpus.label_alphabet)]
    for seq in corpus.sequences:
        for t, fv in enumerate(seq.features):
            fields = [f"{i}:{float(v)!r}" for i, v in zip(fv.indices, fv.values)]
            if include_labels:
                fields.append(corpus.label_alphabet[seq.labels[t]])
            elif not fields:
                raise CorpusFormatError("cannot write a featureless unlabeled token")
            out.append(" ".join(fields))
        out.append("")
    return "\n".join(out) + "\n"


def write_labels(
    labels: Sequence[Sequence[int]], alphabet: Sequence[str]
) -> str:
    """Prediction file: one label per line, blank line between sequences."""
    out = []
    for seq in labels:
        out.extend(alphabet[int(y)] for y in seq)
        out.append("")
    return "\n".join(out) + "\n"


def read_labels(stream: Union[str, TextIO, Iterable[str]]) -> List[List[str]]:
    """Read label names from a prediction file, or the labels of a data file."""
    lines = stream.splitlines() if isinstance(stream, str) else stream
    sequences, current = [], []
    for raw in lines:
        line = raw.strip()
        if not line:
            if current:
                sequences.append(current)
                current = []
            continue
        if line.startswith("#"):
            continue
        current.append(line.split()[-1])
    if current:
        sequences.append(current)
    return sequences


# ==================== EXPERIMENT SPLITS ====================


def split_experiments(
    corpus: Corpus, n_splits: int, train_size: int, test_size: int, seed: int
) -> List[ExperimentSplit]:
    """Disjoint training sets, test sets drawn from the remainder.

    Training sets never overlap across splits. Each test set is drawn from the
    sequences no training set uses, so test sets may overlap across splits but
    never intersect their own training set. The permutation and every test draw
    use independent streams spawned from ``seed``; split k keeps seed + k for
    its chain.
    """
    if n_splits < 1 or train_size < 1 or test_size < 1:
        raise ValueError("n_splits, train_size and test_size must be >= 1")
    needed = n_splits * train_size + test_size
    if needed > len(corpus):
        raise InsufficientDataError(
            f"need {needed} sequences ({n_splits} x {train_size} train + "
            f"{test_size} test), corpus has {len(corpus)}"
        )

    order_seq, *test_seqs = np.random.SeedSequence(seed).spawn(n_splits + 1)
    order = np.random.default_rng(order_seq).permutation(len(corpus))
    remainder = order[n_splits * train_size:]

    splits = []
    for split_id in range(n_splits):
        split_seed = seed + split_id
        train_idx = np.sort(order[split_id * train_size:(split_id + 1) * train_size])
        test_idx = np.sort(
            np.random.default_rng(test_seqs[split_id]).choice(remainder, test_size, replace=False)
        )
        splits.append(ExperimentSplit(
            train=corpus.subset(train_idx),
            test=corpus.subset(test_idx),
            split_id=split_id,
            seed=split_seed,
            train_indices=tuple(int(i) for i in train_idx),
            test_indices=tuple(int(i) for i in test_idx),
        ))
    return splits


# ==================== KERNEL STATISTICS ====================


def _pair_from_linear_index(k: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Map row-major upper-triangle pair numbers to (i, j) with i < j."""
    i = n - 2 - np.floor(np.sqrt(-8.0 * k + 4.0 * n * (n - 1) - 7) / 2.0 - 0.5)
    i = i.astype(np.int64)
    j = k + i + 1 - n * (n - 1) // 2 + (n - i) * (n - i - 1) // 2
    return i, j.astype(np.int64)


def median_pairwise_distance(
    corpus: Corpus, max_pairs: int = 100_000, seed: int = 0
) -> float:
    """Median squared Euclidean distance between token positions.

    Pairs are subsampled uniformly (seeded) when there are more than max_pairs.
    """
    X = corpus.feature_matrix
    n = X.shape[0]
    if n < 2:
        raise InsufficientDataError("median distance needs at least 2 positions")

    n_pairs = n * (n - 1) // 2
    sq_norms = np.asarray(X.multiply(X).sum(axis=1)).reshape(-1)
    if n_pairs <= max_pairs:
        gram = (X @ X.T).toarray()
        i, j = np.triu_indices(n, k=1)
        d2 = sq_norms[i] + sq_norms[j] - 2.0 * gram[i, j]
    else:
        picks = np.random.default_rng(seed).choice(n_pairs, size=max_pairs, replace=False)
        i, j = _pair_from_linear_index(np.sort(picks), n)
        cross = np.asarray(X[i].multiply(X[j]).sum(axis=1)).reshape(-1)
        d2 = sq_norms[i] + sq_norms[j] - 2.0 * cross
    return float(np.median(np.maximum(d2, 0.0)))
