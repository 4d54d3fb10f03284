"""
Synthetic chain-labelling data.

Label sequences come from a Markov chain with a given transition matrix;
features are label-dependent:

- onehot:   one-hot(label) plus Gaussian noise (sigma = noise) on every dim
- gaussian: per-label mean vector (drawn once from N(0, I)) plus noise
- noise:    pure N(0, I) features carrying no label information
"""

import logging
from typing import Optional, Sequence

import numpy as np

from .corpus import Corpus, FeatureVector, TokenSequence
from .errors import ConfigError

logger = logging.getLogger(__name__)

FEATURE_MODES = ("onehot", "gaussian", "noise")


def sticky_transitions(n_labels: int, stay: float) -> np.ndarray:
    """Stay with probability `stay`, otherwise move uniformly to another label."""
    if not 0 <= stay <= 1:
        raise ConfigError(f"stay probability must be in [0, 1], got {stay}")
    off = (1.0 - stay) / (n_labels - 1)
    matrix = np.full((n_labels, n_labels), off)
    np.fill_diagonal(matrix, stay)
    return matrix


def validate_stochastic(matrix: np.ndarray, n_labels: int, name: str = "transition matrix") -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    expected = (n_labels, n_labels) if matrix.ndim == 2 else (n_labels,)
    if matrix.shape != expected:
        raise ConfigError(f"{name} must have shape {expected}, got {matrix.shape}", code="stochastic-matrix")
    if not np.all(np.isfinite(matrix)) or np.any(matrix < 0):
        raise ConfigError(f"{name} has negative or non-finite entries", code="stochastic-matrix")
    if not np.allclose(matrix.sum(axis=-1), 1.0, atol=1e-9):
        raise ConfigError(f"{name} rows must sum to 1", code="stochastic-matrix")
    return matrix


def transition_counts(corpus: Corpus) -> np.ndarray:
    counts = np.zeros((corpus.n_labels, corpus.n_labels), dtype=np.int64)
    for seq in corpus.sequences:
        np.add.at(counts, (seq.labels[:-1], seq.labels[1:]), 1)
    return counts


class SyntheticChainGenerator:
    """Markov-chain label sequences with label-dependent features."""

    def __init__(
        self,
        n_labels: int = 2,
        t_min: int = 10,
        t_max: int = 10,
        transitions: Optional[Sequence[Sequence[float]]] = None,
        initial: Optional[Sequence[float]] = None,
        feature_mode: str = "onehot",
        noise: float = 0.2,
        n_extra_features: int = 0,
        seed: int = 0,
    ):
        if n_labels < 2:
            raise ConfigError(f"need at least 2 labels, got {n_labels}")
        if not 1 <= t_min <= t_max:
            raise ConfigError(f"need 1 <= t_min <= t_max, got {t_min}..{t_max}")
        if feature_mode not in FEATURE_MODES:
            raise ConfigError(f"feature mode must be one of {FEATURE_MODES}, got '{feature_mode}'")
        if noise < 0:
            raise ConfigError(f"noise must be >= 0, got {noise}")

        self.n_labels = n_labels
        self.t_min = t_min
        self.t_max = t_max
        uniform = np.full((n_labels, n_labels), 1.0 / n_labels)
        self.transitions = validate_stochastic(
            uniform if transitions is None else transitions, n_labels
        )
        self.initial = validate_stochastic(
            np.full(n_labels, 1.0 / n_labels) if initial is None else initial,
            n_labels, name="initial distribution",
        )
        self.feature_mode = feature_mode
        self.noise = noise
        self.feature_dim = n_labels + n_extra_features
        self.rng = np.random.default_rng(seed)
        self.label_means = self.rng.standard_normal((n_labels, self.feature_dim))
        self.alphabet = tuple(f"L{k}" for k in range(n_labels))

    def sample_labels(self, length: int) -> np.ndarray:
        labels = np.empty(length, dtype=np.int64)
        labels[0] = self.rng.choice(self.n_labels, p=self.initial)
        for t in range(1, length):
            labels[t] = self.rng.choice(self.n_labels, p=self.transitions[labels[t - 1]])
        return labels

    def sample_features(self, labels: np.ndarray) -> np.ndarray:
        shape = (labels.size, self.feature_dim)
        if self.feature_mode == "noise":
            return self.rng.standard_normal(shape)
        if self.feature_mode == "onehot":
            base = np.zeros(shape)
            base[np.arange(labels.size), labels] = 1.0
        else:
            base = self.label_means[labels]
        if self.noise > 0:
            base = base + self.noise * self.rng.standard_normal(shape)
        return base

    def generate(self, n_sequences: int) -> Corpus:
        sequences = []
        for _ in range(n_sequences):
            length = int(self.rng.integers(self.t_min, self.t_max + 1))
            labels = self.sample_labels(length)
            dense = self.sample_features(labels)
            features = tuple(FeatureVector.from_dense(row) for row in dense)
            sequences.append(TokenSequence(features, labels))
        logger.debug("generated %d sequences (%s features)", n_sequences, self.feature_mode)
        return Corpus(tuple(sequences), self.alphabet, self.feature_dim)
