"""
Exact inference on a linear chain with log-domain clique potentials.

p(y | x, f) = exp(sum_t U[t, y_t] + sum_t P[y_t, y_t+1]) / Z

U holds the T x |L| unary latents of one sequence, P the |L| x |L| pairwise
latents shared by every edge. There are exactly T - 1 pairwise terms and no
start/stop potentials.
"""

import itertools
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from .kernels import LatentLayout

# brute_force refuses to enumerate more label sequences than this
MAX_ENUMERATION = 10 ** 6


@dataclass(frozen=True, eq=False)
class ChainPotentials:
    unary: np.ndarray
    pairwise: np.ndarray

    def __post_init__(self):
        unary = np.asarray(self.unary, dtype=np.float64)
        pairwise = np.asarray(self.pairwise, dtype=np.float64)
        if unary.ndim != 2 or unary.shape[0] < 1:
            raise ValueError(f"unary table must be T x |L| with T >= 1, got {unary.shape}")
        if pairwise.shape != (unary.shape[1], unary.shape[1]):
            raise ValueError(
                f"pairwise table must be {unary.shape[1]}x{unary.shape[1]}, got {pairwise.shape}"
            )
        if not (np.all(np.isfinite(unary)) and np.all(np.isfinite(pairwise))):
            raise ValueError("potentials must be finite")
        object.__setattr__(self, "unary", unary)
        object.__setattr__(self, "pairwise", pairwise)

    @property
    def length(self) -> int:
        return self.unary.shape[0]

    @property
    def n_labels(self) -> int:
        return self.unary.shape[1]


@dataclass(frozen=True, eq=False)
class MarginalTables:
    node: np.ndarray  # T x |L|
    edge: np.ndarray  # (T-1) x |L| x |L|


def potentials_from_latents(
    f: np.ndarray, layout: LatentLayout, sequence_index: int
) -> ChainPotentials:
    """Slice one sequence's unary table and the tied pairwise table out of f."""
    if f.shape != (layout.total,):
        raise ValueError(f"latent vector has {f.shape} entries, layout needs {layout.total}")
    if not 0 <= sequence_index < layout.n_sequences:
        raise IndexError(f"sequence index {sequence_index} out of range")
    start = int(layout.offsets[sequence_index])
    stop = start + int(layout.lengths[sequence_index])
    unary = layout.unary_blocks(f)[:, start:stop].T
    return ChainPotentials(unary, layout.pairwise_table(f))


def joint_score(pots: ChainPotentials, labels: Sequence[int]) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (pots.length,):
        raise ValueError(f"expected {pots.length} labels, got {labels.size}")
    if labels.min() < 0 or labels.max() >= pots.n_labels:
        raise ValueError("label id out of range")
    score = pots.unary[np.arange(pots.length), labels].sum()
    score += pots.pairwise[labels[:-1], labels[1:]].sum()
    return float(score)


def forward(pots: ChainPotentials) -> np.ndarray:
    """Log forward messages alpha[t, y] (including the unary at t)."""
    alpha = np.empty_like(pots.unary)
    alpha[0] = pots.unary[0]
    for t in range(1, pots.length):
        alpha[t] = logsumexp(alpha[t - 1][:, None] + pots.pairwise, axis=0) + pots.unary[t]
    return alpha


def backward(pots: ChainPotentials) -> np.ndarray:
    """Log backward messages beta[t, y] (excluding the unary at t)."""
    beta = np.zeros_like(pots.unary)
    for t in range(pots.length - 2, -1, -1):
        beta[t] = logsumexp(pots.pairwise + (pots.unary[t + 1] + beta[t + 1])[None, :], axis=1)
    return beta


def log_partition(pots: ChainPotentials) -> float:
    return float(logsumexp(forward(pots)[-1]))


def sequence_log_likelihood(pots: ChainPotentials, labels: Sequence[int]) -> float:
    return joint_score(pots, labels) - log_partition(pots)


def marginals(pots: ChainPotentials) -> MarginalTables:
    alpha = forward(pots)
    beta = backward(pots)
    log_z = logsumexp(alpha[-1])
    node = np.exp(alpha + beta - log_z)
    edge = np.exp(
        alpha[:-1, :, None]
        + pots.pairwise[None, :, :]
        + (pots.unary[1:] + beta[1:])[:, None, :]
        - log_z
    )
    return MarginalTables(node, edge)


def viterbi(pots: ChainPotentials) -> np.ndarray:
    """Highest-scoring label sequence; ties go to the lowest label id."""
    T, L = pots.unary.shape
    delta = pots.unary[0].copy()
    backpointers = np.zeros((T, L), dtype=np.int64)
    for t in range(1, T):
        scores = delta[:, None] + pots.pairwise
        backpointers[t] = np.argmax(scores, axis=0)
        delta = scores[backpointers[t], np.arange(L)] + pots.unary[t]

    path = np.empty(T, dtype=np.int64)
    path[-1] = np.argmax(delta)
    for t in range(T - 1, 0, -1):
        path[t - 1] = backpointers[t, path[t]]
    return path


def brute_force(
    pots: ChainPotentials, max_configs: int = MAX_ENUMERATION
) -> Tuple[float, MarginalTables, np.ndarray]:
    """Exhaustive enumeration over all |L|^T label sequences. Test oracle."""
    T, L = pots.unary.shape
    if L ** T > max_configs:
        raise ValueError(f"{L}^{T} label sequences exceed the enumeration limit {max_configs}")

    configs = np.array(list(itertools.product(range(L), repeat=T)), dtype=np.int64)
    scores = pots.unary[np.arange(T), configs].sum(axis=1)
    if T > 1:
        scores += pots.pairwise[configs[:, :-1], configs[:, 1:]].sum(axis=1)

    log_z = float(logsumexp(scores))
    probs = np.exp(scores - log_z)
    node = np.zeros((T, L))
    edge = np.zeros((max(T - 1, 0), L, L))
    for t in range(T):
        np.add.at(node[t], configs[:, t], probs)
        if t < T - 1:
            np.add.at(edge[t], (configs[:, t], configs[:, t + 1]), probs)

    best = configs[np.argmax(scores)].copy()
    return log_z, MarginalTables(node, edge), best


def node_softmax(unary_row: np.ndarray) -> np.ndarray:
    """Marginal of a single-node chain."""
    return softmax(np.asarray(unary_row, dtype=np.float64))
