"""
Test-time inference: GP predictive conditional for test unary latents,
Bayesian model averaging over posterior f samples (and optional f* draws),
and loss-specific decoding.

Pairwise latents at test time are the training sample's pairwise latents:
the pairwise clique template is tied globally, so no new pairwise latents
exist for test sequences.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from .chain import ChainPotentials, marginals, viterbi
from .corpus import Corpus
from .errors import CorpusFormatError
from .kernels import (
    GramBlocks,
    KernelConfig,
    LatentLayout,
    assemble_gram,
    cross_kernel,
    factorize,
)
from .sampler import SampleStore

logger = logging.getLogger(__name__)


class Scheme(str, Enum):
    FSTAR_MAP = "fstar_map"
    FSTAR_SAMPLE = "fstar_sample"


class Loss(str, Enum):
    HAMMING = "hamming"
    ZERO_ONE = "zero_one"


@dataclass(frozen=True, eq=False)
class PredictiveGaussian:
    """f*_unary | f per label block: N(mean[y], C), C = cov_chol cov_chol^T shared by all labels."""

    mean: np.ndarray  # n_labels x n_test_positions
    pairwise: np.ndarray  # n_labels x n_labels, copied from the training sample
    layout: LatentLayout
    cov_chol: Optional[np.ndarray] = None

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self.cov_chol is None:
            raise ValueError("predictive covariance was not computed")
        z = rng.standard_normal(self.mean.shape)
        return self.mean + z @ self.cov_chol.T

    def potentials(self, unary: np.ndarray, sequence_index: int) -> ChainPotentials:
        start = int(self.layout.offsets[sequence_index])
        stop = start + int(self.layout.lengths[sequence_index])
        return ChainPotentials(unary[:, start:stop].T, self.pairwise)


@dataclass(frozen=True)
class HistoryPoint:
    stamp: int
    n_f_samples: int
    hamming_error: float
    zero_one_error: float


@dataclass(frozen=True, eq=False)
class PredictionResult:
    labels: List[np.ndarray]
    marginals: List[np.ndarray]
    n_f_samples: int
    n_fstar_samples: int
    history: Tuple[HistoryPoint, ...] = ()


def predictive_conditional(
    gram: GramBlocks,
    f: np.ndarray,
    train: Corpus,
    test: Corpus,
    config: Optional[KernelConfig] = None,
    want_cov: bool = False,
) -> PredictiveGaussian:
    """Gaussian conditional of the test unary latents given the training f.

    mean_y = Kx*^T Kx^-1 f_y for each label block y; with want_cov the shared
    covariance Kx** - Kx*^T Kx^-1 Kx* + jitter I is factorized once.
    """
    config = config or gram.config
    if f.shape != (gram.layout.total,):
        raise ValueError(f"latent vector has {f.shape} entries, layout needs {gram.layout.total}")
    if test.feature_dim != train.feature_dim or test.n_labels != train.n_labels:
        raise ValueError("test corpus must share the training feature dim and label alphabet")

    X, X_test = train.feature_matrix, test.feature_matrix
    k_star = cross_kernel(X, X_test, config)
    solved = linalg.cho_solve((gram.kx_chol, True), k_star)
    mean = gram.layout.unary_blocks(f) @ solved

    cov_chol = None
    if want_cov:
        cov = cross_kernel(X_test, X_test, config) - k_star.T @ solved
        cov = 0.5 * (cov + cov.T)
        cov[np.diag_indices_from(cov)] += config.jitter
        cov_chol = factorize(cov)

    return PredictiveGaussian(
        mean=mean,
        pairwise=gram.layout.pairwise_table(f).copy(),
        layout=LatentLayout.from_corpus(test),
        cov_chol=cov_chol,
    )


def decode(
    node_marginals: Sequence[np.ndarray], pairwise: np.ndarray, loss: Loss
) -> List[np.ndarray]:
    """Hamming: per-position argmax. 0/1: Viterbi on log marginals plus averaged pairwise latents."""
    loss = Loss(loss)
    if loss is Loss.HAMMING:
        return [np.argmax(m, axis=1) for m in node_marginals]
    tiny = np.finfo(np.float64).tiny
    return [
        viterbi(ChainPotentials(np.log(np.maximum(m, tiny)), pairwise))
        for m in node_marginals
    ]


def predict_bma(
    store: SampleStore,
    train: Corpus,
    test: Corpus,
    scheme: Scheme = Scheme.FSTAR_MAP,
    n_fstar: int = 1,
    loss: Loss = Loss.HAMMING,
    seed: int = 0,
    predict_thin: int = 1,
    cache_gram: bool = True,
) -> PredictionResult:
    """Average node marginals over (f, f*) pairs and decode.

    Every predict_thin-th stored f sample is used; the Gram matrix is rebuilt
    under that sample's hyperparameters (cached per distinct configuration).
    """
    scheme, loss = Scheme(scheme), Loss(loss)
    if scheme is Scheme.FSTAR_SAMPLE and n_fstar < 1:
        raise ValueError(f"fstar_sample needs n_fstar >= 1, got {n_fstar}")
    if predict_thin < 1:
        raise ValueError(f"predict_thin must be >= 1, got {predict_thin}")
    if len(store) == 0:
        raise ValueError("sample store is empty")

    rng = np.random.default_rng(seed)
    draws_per_f = n_fstar if scheme is Scheme.FSTAR_SAMPLE else 1
    node_sums = [np.zeros((len(seq), test.n_labels)) for seq in test.sequences]
    pairwise_sum = np.zeros((test.n_labels, test.n_labels))
    grams: Dict[KernelConfig, GramBlocks] = {}
    history = []
    count = 0
    n_used = 0

    for i in range(0, len(store), predict_thin):
        config = store.sample_configs[i]
        gram = grams.get(config) if cache_gram else None
        if gram is None:
            gram = assemble_gram(train, config)
            if cache_gram:
                grams[config] = gram
        pg = predictive_conditional(
            gram, store.samples[i], train, test, config,
            want_cov=scheme is Scheme.FSTAR_SAMPLE,
        )
        for _ in range(draws_per_f):
            unary = pg.mean if scheme is Scheme.FSTAR_MAP else pg.sample(rng)
            for n in range(len(test)):
                node_sums[n] += marginals(pg.potentials(unary, n)).node
            pairwise_sum += pg.pairwise
            count += 1
        n_used += 1

        if test.is_labeled:
            current = decode([s / count for s in node_sums], pairwise_sum / count, loss)
            hamming, zero_one = error_rate(current, test)
            history.append(HistoryPoint(store.stamps[i], n_used, hamming, zero_one))

    averaged = [s / count for s in node_sums]
    labels = decode(averaged, pairwise_sum / count, loss)
    logger.info(
        "BMA over %d f samples x %d f* draws (%s, %s)",
        n_used, draws_per_f, scheme.value, loss.value,
    )
    return PredictionResult(labels, averaged, n_used, draws_per_f, tuple(history))


def error_rate(
    pred: Union[PredictionResult, Sequence[Sequence]],
    gold: Union[Corpus, Sequence[Sequence]],
) -> Tuple[float, float]:
    """(hamming error over all positions, 0/1 error over sequences)."""
    predicted = pred.labels if isinstance(pred, PredictionResult) else pred
    if isinstance(gold, Corpus):
        if not gold.is_labeled:
            raise ValueError("gold corpus is unlabeled")
        gold = [seq.labels for seq in gold.sequences]

    if len(predicted) != len(gold):
        raise CorpusFormatError(
            f"{len(predicted)} predicted sequences vs {len(gold)} gold sequences",
            code="alignment",
        )
    wrong_positions = 0
    wrong_sequences = 0
    positions = 0
    for n, (p, g) in enumerate(zip(predicted, gold)):
        p, g = np.asarray(p), np.asarray(g)
        if p.shape != g.shape:
            raise CorpusFormatError(
                f"sequence {n}: {p.size} predicted labels vs {g.size} gold labels",
                code="alignment",
            )
        mismatches = int(np.sum(p != g))
        wrong_positions += mismatches
        wrong_sequences += mismatches > 0
        positions += g.size
    if positions == 0:
        raise ValueError("no positions to score")
    return wrong_positions / positions, wrong_sequences / len(gold)
