"""
MCMC training for GP-prior chain models.

Latent vector f: elliptical slice sampling under the structured-softmax
likelihood. Kernel hyperparameters: Metropolis-Hastings with prior whitening
(f = L_h nu, nu held fixed while h moves). Chain bookkeeping: thinning,
burn-in, checkpoint/resume.

Usage:
    from gpstruct.sampler import ChainConfig, run_chain, burn_in_filter
    store = run_chain(corpus, KernelConfig(), ChainConfig(n_iterations=2000, thin=100))
    store = burn_in_filter(store, 1 / 3)
"""

import copy
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .chain import potentials_from_latents, sequence_log_likelihood
from .corpus import Corpus
from .errors import KernelFactorizationError, ShrinkLimitError
from .kernels import (
    GramBlocks,
    InputKernel,
    KernelConfig,
    LatentLayout,
    assemble_gram,
    rebuild_gram,
)

logger = logging.getLogger(__name__)

LogLikelihood = Callable[[np.ndarray], float]

# Log-likelihood assigned to hyperparameter proposals whose Gram matrix cannot be factorized
REJECTED_LOG_LIK = -1e10
MAX_SHRINKS = 1000


class HyperSampling(str, Enum):
    OFF = "off"
    PRIOR_WHITENING = "prior_whitening"


@dataclass(frozen=True)
class Hyperprior:
    """Gamma hyperpriors: h_p / hp_unit ~ Gamma(hp_shape, scale=hp_scale), gamma ~ Gamma(gamma_shape, scale=gamma_scale)."""

    hp_shape: float = 1.0
    hp_scale: float = 2.0
    hp_unit: float = 1e-4
    gamma_shape: float = 1.0
    gamma_scale: float = 2.0

    def log_density(self, config: KernelConfig, targets: Sequence[str]) -> float:
        total = 0.0
        if "h_p" in targets:
            total += stats.gamma.logpdf(
                config.h_p / self.hp_unit, a=self.hp_shape, scale=self.hp_scale
            ) - math.log(self.hp_unit)
        if "gamma" in targets:
            total += stats.gamma.logpdf(config.gamma, a=self.gamma_shape, scale=self.gamma_scale)
        return float(total)


@dataclass(frozen=True)
class ChainConfig:
    n_iterations: int = 1000
    hyper_every: int = 1000
    thin: int = 1000
    burn_in_fraction: float = 1.0 / 3.0
    hyper_sampling: HyperSampling = HyperSampling.OFF
    hyper_proposal_scale: float = 0.1
    seed: int = 0
    hyperprior: Hyperprior = field(default_factory=Hyperprior)
    debug: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hyper_sampling", HyperSampling(self.hyper_sampling))
        if self.n_iterations < 0:
            raise ValueError(f"n_iterations must be >= 0, got {self.n_iterations}")
        if self.thin < 1:
            raise ValueError(f"thin must be >= 1, got {self.thin}")
        if self.hyper_every < 1:
            raise ValueError(f"hyper_every must be >= 1, got {self.hyper_every}")
        if not 0 <= self.burn_in_fraction < 1:
            raise ValueError(f"burn_in_fraction must be in [0, 1), got {self.burn_in_fraction}")
        if not self.hyper_proposal_scale > 0:
            raise ValueError("hyper_proposal_scale must be > 0")


@dataclass(frozen=True, eq=False)
class SamplerState:
    f: np.ndarray
    config: KernelConfig
    log_lik: float
    iteration: int
    rng: np.random.Generator
    hyper_attempts: int = 0
    hyper_accepts: int = 0

    @property
    def rng_state(self) -> dict:
        return self.rng.bit_generator.state


@dataclass(frozen=True)
class HyperRecord:
    iteration: int
    h_p: float
    gamma: float
    accepted: bool


@dataclass
class SampleStore:
    """Thinned f samples with their stamps and hyperparameters, plus the resumable state."""

    thin: int
    stamps: List[int] = field(default_factory=list)
    samples: List[np.ndarray] = field(default_factory=list)
    sample_configs: List[KernelConfig] = field(default_factory=list)
    sample_log_liks: List[float] = field(default_factory=list)
    hyper_trace: List[HyperRecord] = field(default_factory=list)
    final_state: Optional[SamplerState] = None
    metadata: Dict[str, object] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def record(self, state: SamplerState) -> None:
        if self.stamps and state.iteration <= self.stamps[-1]:
            raise ValueError(f"stamp {state.iteration} not after {self.stamps[-1]}")
        self.stamps.append(state.iteration)
        self.samples.append(state.f.copy())
        self.sample_configs.append(state.config)
        self.sample_log_liks.append(state.log_lik)
        self.final_state = state

    def f_matrix(self) -> np.ndarray:
        return np.vstack(self.samples)


def hyper_targets(config: KernelConfig) -> Tuple[str, ...]:
    """Hyperparameters sampled under prior whitening: h_p, plus gamma for the SE kernel."""
    if config.input_kernel is InputKernel.SQUARED_EXPONENTIAL:
        return ("h_p", "gamma")
    return ("h_p",)


def restore_rng(state: dict) -> np.random.Generator:
    bit_generator = getattr(np.random, state["bit_generator"])()
    bit_generator.state = state
    return np.random.Generator(bit_generator)


# ==================== LIKELIHOOD ====================


def total_log_likelihood(f: np.ndarray, corpus: Corpus, layout: LatentLayout) -> float:
    """log p(D | f), summed over sequences in corpus order."""
    total = 0.0
    for n, seq in enumerate(corpus.sequences):
        total += sequence_log_likelihood(potentials_from_latents(f, layout, n), seq.labels)
    return total


def make_log_likelihood(corpus: Corpus, layout: LatentLayout) -> LogLikelihood:
    if not corpus.is_labeled:
        raise ValueError("training corpus must be labeled")
    return partial(total_log_likelihood, corpus=corpus, layout=layout)


# ==================== TRANSITIONS ====================


def sample_prior(
    gram: GramBlocks, rng: np.random.Generator, nu: Optional[np.ndarray] = None
) -> np.ndarray:
    """Draw f ~ N(0, K) blockwise."""
    if nu is None:
        nu = rng.standard_normal(gram.layout.total)
    return gram.color(nu)


def ess_step(
    state: SamplerState,
    gram: GramBlocks,
    corpus: Corpus,
    log_likelihood: Optional[LogLikelihood] = None,
    nu: Optional[np.ndarray] = None,
    theta: Optional[float] = None,
    max_shrinks: int = MAX_SHRINKS,
) -> SamplerState:
    """One elliptical slice sampling transition targeting N(f; 0, K) p(D | f).

    nu (a prior draw) and theta (the first angle) may be injected; otherwise
    they come from state.rng in the order nu, threshold, theta.
    """
    if log_likelihood is None:
        log_likelihood = make_log_likelihood(corpus, gram.layout)
    rng = state.rng

    if nu is None:
        nu = sample_prior(gram, rng)
    with np.errstate(divide="ignore"):
        log_y = state.log_lik + np.log(rng.random())
    if theta is None:
        theta = rng.uniform(0.0, 2.0 * np.pi)
    theta_min, theta_max = theta - 2.0 * np.pi, theta

    for _ in range(max_shrinks + 1):
        f_new = state.f * np.cos(theta) + nu * np.sin(theta)
        log_lik = log_likelihood(f_new)
        if log_lik > log_y:
            return dataclasses.replace(
                state, f=f_new, log_lik=float(log_lik), iteration=state.iteration + 1
            )
        if theta < 0:
            theta_min = theta
        else:
            theta_max = theta
        theta = rng.uniform(theta_min, theta_max)

    raise ShrinkLimitError(
        f"slice bracket shrunk {max_shrinks} times without acceptance "
        f"(iteration {state.iteration}, threshold {log_y:.6g})"
    )


def hyper_step(
    state: SamplerState,
    corpus: Corpus,
    gram: GramBlocks,
    hyperprior: Hyperprior,
    rng: Optional[np.random.Generator] = None,
    targets: Optional[Sequence[str]] = None,
    proposal_scale: float = 0.1,
    proposal: Optional[Dict[str, float]] = None,
    gram_builder: Callable[..., GramBlocks] = rebuild_gram,
    log_likelihood: Optional[LogLikelihood] = None,
) -> Tuple[SamplerState, GramBlocks]:
    """Prior-whitened Metropolis-Hastings move on the kernel hyperparameters.

    Proposals are independent log-normal random walks; the Jacobian of the log
    walk enters the ratio as sum(log h' - log h). A proposal whose Gram matrix
    cannot be factorized gets REJECTED_LOG_LIK and is rejected.
    """
    rng = rng if rng is not None else state.rng
    targets = tuple(targets) if targets else hyper_targets(state.config)
    if log_likelihood is None:
        log_likelihood = make_log_likelihood(corpus, gram.layout)

    current = {name: getattr(state.config, name) for name in targets}
    steps = rng.standard_normal(len(targets))
    if proposal is None:
        proposed = {
            name: float(np.exp(np.log(current[name]) + proposal_scale * z))
            for name, z in zip(targets, steps)
        }
    else:
        proposed = {name: float(proposal[name]) for name in targets}
    log_u = np.log(rng.random())

    nu = gram.whiten(state.f)
    new_gram = None
    new_log_lik = REJECTED_LOG_LIK
    try:
        new_config = state.config.replace(**proposed)
    except ValueError as e:
        logger.debug("hyper proposal %s invalid: %s", proposed, e)
        new_config = None
    if new_config is not None:
        try:
            new_gram = gram_builder(corpus, new_config, gram)
        except KernelFactorizationError as e:
            logger.debug("hyper proposal %s rejected: %s", proposed, e)
        else:
            f_new = new_gram.color(nu)
            new_log_lik = float(log_likelihood(f_new))

    accepted = False
    if new_config is not None:
        log_ratio = (
            new_log_lik - state.log_lik
            + hyperprior.log_density(new_config, targets)
            - hyperprior.log_density(state.config, targets)
            + sum(np.log(proposed[name]) - np.log(current[name]) for name in targets)
        )
        accepted = new_gram is not None and log_u < log_ratio

    if accepted:
        logger.debug("hyper move accepted at %d: %s", state.iteration, proposed)
        new_state = dataclasses.replace(
            state,
            f=f_new,
            config=new_config,
            log_lik=new_log_lik,
            hyper_attempts=state.hyper_attempts + 1,
            hyper_accepts=state.hyper_accepts + 1,
        )
        return new_state, new_gram

    logger.debug("hyper move rejected at %d: %s", state.iteration, proposed)
    return dataclasses.replace(state, hyper_attempts=state.hyper_attempts + 1), gram


# ==================== CHAIN ====================


def check_cached_log_lik(state: SamplerState, log_likelihood: LogLikelihood) -> None:
    fresh = log_likelihood(state.f)
    if abs(fresh - state.log_lik) > 1e-8 * max(1.0, abs(fresh)):
        raise RuntimeError(
            f"cached log-likelihood {state.log_lik!r} != recomputed {fresh!r} "
            f"at iteration {state.iteration}"
        )


def run_chain(
    corpus: Corpus,
    kcfg: KernelConfig,
    ccfg: ChainConfig,
    resume: Optional[SampleStore] = None,
    on_record: Optional[Callable[[SampleStore], None]] = None,
    log_likelihood: Optional[LogLikelihood] = None,
) -> SampleStore:
    """Run ESS (with optional hyperparameter moves) up to ccfg.n_iterations.

    Starts from f = 0, or continues from resume.final_state. Every thin-th
    iteration is recorded and on_record is called with the store.
    """
    layout = LatentLayout.from_corpus(corpus)
    if log_likelihood is None:
        log_likelihood = make_log_likelihood(corpus, layout)

    if resume is not None and resume.final_state is not None:
        if resume.thin != ccfg.thin:
            raise ValueError(f"resumed store has thin {resume.thin}, config asks {ccfg.thin}")
        store = copy.copy(resume)
        store.stamps = list(resume.stamps)
        store.samples = list(resume.samples)
        store.sample_configs = list(resume.sample_configs)
        store.sample_log_liks = list(resume.sample_log_liks)
        store.hyper_trace = list(resume.hyper_trace)
        previous = resume.final_state
        state = dataclasses.replace(
            previous, f=previous.f.copy(), rng=restore_rng(previous.rng_state)
        )
        gram = assemble_gram(corpus, state.config)
        logger.info("resuming chain at iteration %d", state.iteration)
    else:
        gram = assemble_gram(corpus, kcfg)
        f = np.zeros(layout.total)
        state = SamplerState(
            f, kcfg, float(log_likelihood(f)), 0, np.random.default_rng(ccfg.seed)
        )
        store = SampleStore(
            thin=ccfg.thin,
            metadata={
                "seed": ccfg.seed,
                "n_labels": layout.n_labels,
                "n_positions": layout.n_positions,
                "n_sequences": layout.n_sequences,
            },
        )

    sample_hypers = ccfg.hyper_sampling is HyperSampling.PRIOR_WHITENING
    targets = hyper_targets(state.config) if sample_hypers else ()

    while state.iteration < ccfg.n_iterations:
        state = ess_step(state, gram, corpus, log_likelihood)
        if sample_hypers and state.iteration % ccfg.hyper_every == 0:
            accepts = state.hyper_accepts
            state, gram = hyper_step(
                state, corpus, gram, ccfg.hyperprior,
                targets=targets,
                proposal_scale=ccfg.hyper_proposal_scale,
                log_likelihood=log_likelihood,
            )
            store.hyper_trace.append(HyperRecord(
                state.iteration, state.config.h_p, state.config.gamma,
                state.hyper_accepts > accepts,
            ))
        if ccfg.debug:
            check_cached_log_lik(state, log_likelihood)
        if state.iteration % ccfg.thin == 0:
            store.record(state)
            logger.info(
                "iter %d  log_lik %.4f  h_p %.4g  gamma %.4g",
                state.iteration, state.log_lik, state.config.h_p, state.config.gamma,
            )
            if on_record is not None:
                on_record(store)

    store.final_state = state
    return store


def burn_in_filter(store: SampleStore, fraction: float) -> SampleStore:
    """Drop the first ceil(fraction * count) samples (and the matching hyper trace)."""
    if not 0 <= fraction < 1:
        raise ValueError(f"burn-in fraction must be in [0, 1), got {fraction}")
    if len(store) == 0:
        raise ValueError("sample store is empty")
    n_drop = math.ceil(fraction * len(store) - 1e-9)
    cutoff = store.stamps[n_drop - 1] if n_drop else -1
    return dataclasses.replace(
        store,
        stamps=store.stamps[n_drop:],
        samples=store.samples[n_drop:],
        sample_configs=store.sample_configs[n_drop:],
        sample_log_liks=store.sample_log_liks[n_drop:],
        hyper_trace=[rec for rec in store.hyper_trace if rec.iteration > cutoff],
    )
