"""
Joint input-output kernel and its block-structured Gram matrix.

The unary kernel is 1[y == y'] * k_x(x, x'), the pairwise kernel is
h_p * 1[(y1, y2) == (y1', y2')]. Over the latent layout this gives a
block-diagonal covariance: |L| identical copies of the input Gram matrix K_x,
followed by h_p * I for the |L|^2 tied pairwise latents. Only K_x is ever
factorized.

Usage:
    from gpstruct.kernels import KernelConfig, assemble_gram
    gram = assemble_gram(corpus, KernelConfig(input_kernel="linear"))
    f = gram.color(rng.standard_normal(gram.layout.total))
"""

import dataclasses
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy import linalg, sparse

from .corpus import Corpus, FeatureVector
from .errors import KernelFactorizationError

logger = logging.getLogger(__name__)

# materialize_full_gram refuses to build anything larger than this
MAX_DENSE_SIZE = 5000


class InputKernel(str, Enum):
    LINEAR = "linear"
    SQUARED_EXPONENTIAL = "squared_exponential"


@dataclass(frozen=True)
class KernelConfig:
    """Kernel hyperparameters: gamma (SE length-scale), h_p (pairwise scale), jitter."""

    input_kernel: InputKernel = InputKernel.LINEAR
    gamma: float = 1.0
    h_p: float = 1.0
    jitter: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "input_kernel", InputKernel(self.input_kernel))
        if self.input_kernel is InputKernel.SQUARED_EXPONENTIAL and not self.gamma > 0:
            raise ValueError(f"gamma must be > 0 for the SE kernel, got {self.gamma}")
        if not self.h_p > 0:
            raise ValueError(f"h_p must be > 0, got {self.h_p}")
        if not self.jitter >= 0:
            raise ValueError(f"jitter must be >= 0, got {self.jitter}")

    def replace(self, **changes) -> "KernelConfig":
        return dataclasses.replace(self, **changes)

    def input_key(self) -> Tuple:
        """Everything K_x depends on (h_p excluded)."""
        if self.input_kernel is InputKernel.LINEAR:
            return (self.input_kernel, self.jitter)
        return (self.input_kernel, self.gamma, self.jitter)


# ==================== KERNEL FUNCTIONS ====================


def kx_eval(x: FeatureVector, x2: FeatureVector, config: KernelConfig) -> float:
    """Input-only kernel: dot product, or exp(-||x - x2||^2 / gamma)."""
    if x.dim != x2.dim:
        raise ValueError(f"feature dim mismatch: {x.dim} vs {x2.dim}")
    if config.input_kernel is InputKernel.LINEAR:
        return x.dot(x2)
    return float(np.exp(-x.squared_distance(x2) / config.gamma))


def unary_kernel(
    label: int, x: FeatureVector, label2: int, x2: FeatureVector, config: KernelConfig
) -> float:
    if label != label2:
        return 0.0
    return kx_eval(x, x2, config)


def pairwise_kernel(pair: Tuple[int, int], pair2: Tuple[int, int], h_p: float) -> float:
    return h_p if tuple(pair) == tuple(pair2) else 0.0


def cross_kernel(
    X: sparse.spmatrix, X2: sparse.spmatrix, config: KernelConfig
) -> np.ndarray:
    """Input-kernel matrix between the rows of X and the rows of X2 (no jitter)."""
    if X.shape[1] != X2.shape[1]:
        raise ValueError(f"feature dim mismatch: {X.shape[1]} vs {X2.shape[1]}")
    inner = np.asarray((X @ X2.T).todense())
    if config.input_kernel is InputKernel.LINEAR:
        return inner
    sq = np.asarray(X.multiply(X).sum(axis=1)).reshape(-1, 1)
    sq2 = np.asarray(X2.multiply(X2).sum(axis=1)).reshape(1, -1)
    d2 = np.maximum(sq + sq2 - 2.0 * inner, 0.0)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        return np.exp(-d2 / config.gamma)


# ==================== LATENT LAYOUT ====================


@dataclass(frozen=True, eq=False)
class LatentLayout:
    """Flat index map for unary latents (n, t, y) and pairwise latents (y, y').

    unary(n, t, y) = y * n_positions + offset(n) + t   (label-major blocks)
    pairwise(y, y') = n_unary + y * n_labels + y'
    """

    offsets: np.ndarray
    lengths: np.ndarray
    n_labels: int

    @classmethod
    def from_corpus(cls, corpus: Corpus) -> "LatentLayout":
        return cls(corpus.offsets.copy(), corpus.lengths.copy(), corpus.n_labels)

    @property
    def n_sequences(self) -> int:
        return int(self.lengths.size)

    @property
    def n_positions(self) -> int:
        return int(self.lengths.sum())

    @property
    def n_unary(self) -> int:
        return self.n_positions * self.n_labels

    @property
    def n_pairwise(self) -> int:
        return self.n_labels ** 2

    @property
    def total(self) -> int:
        return self.n_unary + self.n_pairwise

    def unary_index(self, n: int, t: int, y: int) -> int:
        if not 0 <= t < self.lengths[n]:
            raise IndexError(f"position {t} out of range for sequence {n}")
        if not 0 <= y < self.n_labels:
            raise IndexError(f"label {y} out of range")
        return y * self.n_positions + int(self.offsets[n]) + t

    def pairwise_index(self, y: int, y2: int) -> int:
        if not (0 <= y < self.n_labels and 0 <= y2 < self.n_labels):
            raise IndexError(f"label pair ({y}, {y2}) out of range")
        return self.n_unary + y * self.n_labels + y2

    def unary_blocks(self, f: np.ndarray) -> np.ndarray:
        """View of the unary latents as an (n_labels, n_positions) matrix."""
        return f[: self.n_unary].reshape(self.n_labels, self.n_positions)

    def pairwise_table(self, f: np.ndarray) -> np.ndarray:
        return f[self.n_unary:].reshape(self.n_labels, self.n_labels)

    def __eq__(self, other):
        if not isinstance(other, LatentLayout):
            return NotImplemented
        return (
            self.n_labels == other.n_labels
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.lengths, other.lengths)
        )


# ==================== GRAM BLOCKS ====================


@dataclass(frozen=True, eq=False)
class GramBlocks:
    """Input Gram matrix (with jitter) and its lower Cholesky factor.

    The full covariance is never stored; it is |L| copies of kx followed by
    h_p * I on the pairwise latents.
    """

    kx: np.ndarray
    kx_chol: np.ndarray
    h_p: float
    layout: LatentLayout
    config: KernelConfig

    def color(self, nu: np.ndarray) -> np.ndarray:
        """Map a whitened vector to latent space: f = L nu."""
        nu = np.asarray(nu, dtype=np.float64)
        if nu.shape != (self.layout.total,):
            raise ValueError(f"expected {self.layout.total} entries, got {nu.shape}")
        f = np.empty_like(nu)
        self.layout.unary_blocks(f)[:] = self.layout.unary_blocks(nu) @ self.kx_chol.T
        f[self.layout.n_unary:] = np.sqrt(self.h_p) * nu[self.layout.n_unary:]
        return f

    def whiten(self, f: np.ndarray) -> np.ndarray:
        """Inverse of color: nu = L^-1 f, one triangular solve for all label blocks."""
        f = np.asarray(f, dtype=np.float64)
        if f.shape != (self.layout.total,):
            raise ValueError(f"expected {self.layout.total} entries, got {f.shape}")
        nu = np.empty_like(f)
        blocks = self.layout.unary_blocks(f)
        nu[: self.layout.n_unary] = linalg.solve_triangular(
            self.kx_chol, blocks.T, lower=True
        ).T.reshape(-1)
        nu[self.layout.n_unary:] = f[self.layout.n_unary:] / np.sqrt(self.h_p)
        return nu

    def quad_form(self, f: np.ndarray) -> float:
        """f^T K^-1 f via block solves."""
        nu = self.whiten(f)
        return float(nu @ nu)

    def with_pairwise_scale(self, h_p: float) -> "GramBlocks":
        config = self.config.replace(h_p=h_p)
        return dataclasses.replace(self, h_p=config.h_p, config=config)


def factorize(matrix: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; KernelFactorizationError if not positive definite."""
    if not np.all(np.isfinite(matrix)):
        raise KernelFactorizationError("kernel matrix has non-finite entries")
    try:
        return linalg.cholesky(matrix, lower=True)
    except linalg.LinAlgError as e:
        raise KernelFactorizationError(f"Cholesky failed: {e}")


def assemble_gram(corpus: Corpus, config: KernelConfig) -> GramBlocks:
    """Build K_x over all positions (layout order) plus jitter, factorize once."""
    X = corpus.feature_matrix
    kx = cross_kernel(X, X, config)
    kx[np.diag_indices_from(kx)] += config.jitter
    kx_chol = factorize(kx)
    logger.debug(
        "assembled %dx%d input Gram (%s, gamma=%g, h_p=%g)",
        kx.shape[0], kx.shape[1], config.input_kernel.value, config.gamma, config.h_p,
    )
    return GramBlocks(kx, kx_chol, config.h_p, LatentLayout.from_corpus(corpus), config)


def rebuild_gram(
    corpus: Corpus, config: KernelConfig, previous: Optional[GramBlocks] = None
) -> GramBlocks:
    """assemble_gram, reusing the previous factor when only h_p differs."""
    if previous is not None and previous.config.input_key() == config.input_key():
        return previous.with_pairwise_scale(config.h_p)
    return assemble_gram(corpus, config)


def materialize_full_gram(gram: GramBlocks, max_size: int = MAX_DENSE_SIZE) -> np.ndarray:
    """Dense K of size layout.total. Test oracle only."""
    total = gram.layout.total
    if total > max_size:
        raise ValueError(f"refusing to materialize a {total}x{total} Gram matrix")
    blocks = [gram.kx] * gram.layout.n_labels
    blocks.append(gram.h_p * np.eye(gram.layout.n_pairwise))
    return linalg.block_diag(*blocks)
