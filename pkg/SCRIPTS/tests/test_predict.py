#!/usr/bin/env python3
"""
Unit tests for the predictive conditional, BMA prediction, decoding and error rates.
"""

import sys
import unittest
from pathlib import Path
from unittest import mock

import numpy as np
from scipy.special import expit, softmax

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
from gpstruct.chain import ChainPotentials, marginals, viterbi
from gpstruct.corpus import Corpus, FeatureVector, TokenSequence
from gpstruct.errors import CorpusFormatError
from gpstruct.kernels import InputKernel, KernelConfig, LatentLayout, assemble_gram
from gpstruct.predict import (
    Loss,
    PredictiveGaussian,
    Scheme,
    decode,
    error_rate,
    predict_bma,
    predictive_conditional,
)
from gpstruct.sampler import ChainConfig, SampleStore, SamplerState, burn_in_filter, run_chain
from gpstruct.synth import SyntheticChainGenerator

SE = KernelConfig(InputKernel.SQUARED_EXPONENTIAL, gamma=1.0)


def point(value):
    return FeatureVector.from_dense([value])


def single_sample_store(corpus, config, f):
    store = SampleStore(thin=1)
    store.record(SamplerState(np.asarray(f, dtype=float), config, 0.0, 1, np.random.default_rng(0)))
    return store


class TestPredictiveConditional(unittest.TestCase):

    def setUp(self):
        generator = SyntheticChainGenerator(n_labels=3, t_min=2, t_max=3, feature_mode="gaussian", seed=4)
        self.train = generator.generate(3)
        self.test = generator.generate(2)
        self.gram = assemble_gram(self.train, SE)
        self.f = self.gram.color(np.random.default_rng(0).standard_normal(self.gram.layout.total))

    def dense(self, corpus):
        return corpus.feature_matrix.toarray()

    def se(self, A, B):
        d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-d2)

    def test_mean_and_covariance(self):
        X, Xs = self.dense(self.train), self.dense(self.test)
        K = self.se(X, X) + 1e-4 * np.eye(len(X))
        Ks = self.se(X, Xs)
        expected_mean = np.linalg.solve(K, Ks).T @ self.gram.layout.unary_blocks(self.f).T
        expected_cov = self.se(Xs, Xs) - Ks.T @ np.linalg.solve(K, Ks) + 1e-4 * np.eye(len(Xs))

        pg = predictive_conditional(self.gram, self.f, self.train, self.test, want_cov=True)
        np.testing.assert_allclose(pg.mean, expected_mean.T, atol=1e-6)
        np.testing.assert_allclose(pg.cov_chol @ pg.cov_chol.T, expected_cov, atol=1e-6)
        np.testing.assert_array_equal(pg.pairwise, self.gram.layout.pairwise_table(self.f))
        self.assertEqual(pg.layout, LatentLayout.from_corpus(self.test))

    def test_test_equal_to_train_reproduces_latents(self):
        points = [[0.0, 0.7, 1.4], [2.1, 2.8]]
        train = Corpus(
            tuple(TokenSequence(tuple(point(x) for x in xs), [0] * len(xs)) for xs in points),
            ("A", "B", "C"),
            1,
        )
        gram = assemble_gram(train, SE.replace(jitter=0.0))
        f = gram.color(np.random.default_rng(3).standard_normal(gram.layout.total))
        pg = predictive_conditional(gram, f, train, train)
        np.testing.assert_allclose(pg.mean, gram.layout.unary_blocks(f), atol=1e-6)

    def test_sample_needs_covariance(self):
        pg = predictive_conditional(self.gram, self.f, self.train, self.test)
        with self.assertRaises(ValueError):
            pg.sample(np.random.default_rng(0))

    def test_mismatched_corpora(self):
        other = SyntheticChainGenerator(n_labels=2, seed=1).generate(1)
        with self.assertRaises(ValueError):
            predictive_conditional(self.gram, self.f, self.train, other)


class TestBMA(unittest.TestCase):
    """Bayesian model averaging over f samples"""

    def setUp(self):
        generator = SyntheticChainGenerator(n_labels=2, t_min=3, t_max=5, noise=0.3, seed=2)
        self.train = generator.generate(6)
        self.test = generator.generate(4)
        self.store = run_chain(self.train, KernelConfig(), ChainConfig(n_iterations=60, thin=10, seed=3))

    def test_single_sample_equals_its_marginals(self):
        store = burn_in_filter(self.store, 0.0)
        store = single_sample_store(self.train, store.sample_configs[-1], store.samples[-1])
        result = predict_bma(store, self.train, self.test)
        pg = predictive_conditional(assemble_gram(self.train, KernelConfig()), store.samples[0], self.train, self.test)
        for n in range(len(self.test)):
            expected = marginals(pg.potentials(pg.mean, n)).node
            np.testing.assert_allclose(result.marginals[n], expected)
            np.testing.assert_array_equal(result.labels[n], np.argmax(expected, axis=1))
        self.assertEqual((result.n_f_samples, result.n_fstar_samples), (1, 1))

    def test_average_over_samples(self):
        result = predict_bma(self.store, self.train, self.test)
        gram = assemble_gram(self.train, KernelConfig())
        total = [np.zeros((len(seq), 2)) for seq in self.test.sequences]
        for f in self.store.samples:
            pg = predictive_conditional(gram, f, self.train, self.test)
            for n in range(len(self.test)):
                total[n] += marginals(pg.potentials(pg.mean, n)).node
        for n in range(len(self.test)):
            np.testing.assert_allclose(result.marginals[n], total[n] / len(self.store))
            np.testing.assert_allclose(result.marginals[n].sum(axis=1), 1.0)

    def test_zero_covariance_sampling_equals_map(self):
        with mock.patch.object(PredictiveGaussian, "sample", lambda self, rng: self.mean):
            sampled = predict_bma(self.store, self.train, self.test, scheme=Scheme.FSTAR_SAMPLE, n_fstar=3)
        mapped = predict_bma(self.store, self.train, self.test, scheme=Scheme.FSTAR_MAP)
        self.assertEqual(sampled.n_fstar_samples, 3)
        for a, b in zip(sampled.marginals, mapped.marginals):
            np.testing.assert_allclose(a, b)

    def test_predict_thin_and_history(self):
        result = predict_bma(self.store, self.train, self.test, predict_thin=2)
        self.assertEqual(result.n_f_samples, 3)
        self.assertEqual([p.stamp for p in result.history], [10, 30, 50])
        self.assertEqual([p.n_f_samples for p in result.history], [1, 2, 3])
        hamming, zero_one = error_rate(result, self.test)
        self.assertEqual(result.history[-1].hamming_error, hamming)
        self.assertEqual(result.history[-1].zero_one_error, zero_one)

    def test_no_history_for_unlabeled_test(self):
        result = predict_bma(self.store, self.train, self.test.without_labels())
        self.assertEqual(result.history, ())

    def test_seeded_sampling_is_reproducible(self):
        a = predict_bma(self.store, self.train, self.test, scheme="fstar_sample", n_fstar=2, seed=5)
        b = predict_bma(self.store, self.train, self.test, scheme="fstar_sample", n_fstar=2, seed=5)
        for x, y in zip(a.marginals, b.marginals):
            np.testing.assert_array_equal(x, y)

    def test_invalid_arguments(self):
        with self.assertRaises(ValueError):
            predict_bma(self.store, self.train, self.test, predict_thin=0)
        with self.assertRaises(ValueError):
            predict_bma(SampleStore(thin=1), self.train, self.test)


class TestSampledPredictionQuadrature(unittest.TestCase):
    """f*-sampled marginals against Gauss-Hermite quadrature of the predictive Gaussian.

    One training token at x = 0 and an SE kernel with gamma = 1, so the
    predictive mean of label y at x* is k* f_y / (1 + jitter). Only the label
    difference d = f1* - f0* matters for two labels; per position it is
    Gaussian with mean m1 - m0 and covariance 2C.
    """

    N_FSTAR = 10_000
    JITTER = 1e-4

    def setUp(self):
        self.train = Corpus((TokenSequence((point(0.0),), [0]),), ("A", "B"), 1)

    def predictive_difference(self, xs, f):
        xs = np.asarray(xs, dtype=float)
        k_star = np.exp(-xs ** 2)
        k_ss = np.exp(-(xs[:, None] - xs[None, :]) ** 2)
        scale = 1.0 + self.JITTER
        mu = k_star * (f[1] - f[0]) / scale
        cov = k_ss - np.outer(k_star, k_star) / scale + self.JITTER * np.eye(len(xs))
        return mu, 2.0 * cov

    def assert_within_three_se(self, estimate, expected):
        se = np.sqrt(expected * (1.0 - expected) / self.N_FSTAR)
        self.assertLessEqual(abs(estimate - expected), 3.0 * se,
                             msg=f"estimate {estimate:.4f}, quadrature {expected:.4f}, se {se:.4f}")

    def test_single_node(self):
        test = Corpus((TokenSequence((point(0.5),), [1]),), ("A", "B"), 1)
        f = np.array([1.5, -0.5, 0.0, 0.0, 0.0, 0.0])
        store = single_sample_store(self.train, SE, f)

        mu, cov = self.predictive_difference([0.5], f)
        nodes, weights = np.polynomial.hermite_e.hermegauss(60)
        expected = float(np.sum(weights * expit(mu[0] + np.sqrt(cov[0, 0]) * nodes)) / np.sqrt(2 * np.pi))

        result = predict_bma(store, self.train, test, scheme=Scheme.FSTAR_SAMPLE, n_fstar=self.N_FSTAR, seed=1)
        self.assert_within_three_se(result.marginals[0][0, 1], expected)

        mapped = predict_bma(store, self.train, test)
        self.assertAlmostEqual(mapped.marginals[0][0, 1], float(expit(mu[0])), places=9)

    def test_two_positions_with_pairwise_coupling(self):
        test = Corpus((TokenSequence((point(0.5), point(-0.5)), [1, 1]),), ("A", "B"), 1)
        pairwise = np.array([[0.8, -0.4], [-0.4, 0.3]])
        f = np.concatenate([[1.5, -0.5], pairwise.reshape(-1)])
        store = single_sample_store(self.train, SE, f)

        def first_label_marginal(d):
            """p(y_1 = B) for label-difference potentials d of shape (..., 2)."""
            configs = [(y1, y2) for y1 in (0, 1) for y2 in (0, 1)]
            scores = np.stack([d[..., 0] * y1 + d[..., 1] * y2 + pairwise[y1, y2] for y1, y2 in configs],
                              axis=-1)
            probs = softmax(scores, axis=-1)
            return probs[..., 2] + probs[..., 3]

        mu, cov = self.predictive_difference([0.5, -0.5], f)
        nodes, weights = np.polynomial.hermite_e.hermegauss(40)
        z = np.stack(np.meshgrid(nodes, nodes, indexing="ij"), axis=-1)
        d = mu + z @ np.linalg.cholesky(cov).T
        grid_weights = np.outer(weights, weights) / (2 * np.pi)
        expected = float(np.sum(grid_weights * first_label_marginal(d)))

        result = predict_bma(store, self.train, test, scheme=Scheme.FSTAR_SAMPLE, n_fstar=self.N_FSTAR, seed=1)
        self.assertEqual(result.n_fstar_samples, self.N_FSTAR)
        self.assert_within_three_se(result.marginals[0][0, 1], expected)
        np.testing.assert_allclose(result.marginals[0].sum(axis=1), 1.0)

        mapped = predict_bma(store, self.train, test)
        self.assertAlmostEqual(mapped.marginals[0][0, 1], float(first_label_marginal(mu)), places=9)


class TestDecoding(unittest.TestCase):

    def test_hamming_is_argmax(self):
        node = [np.array([[0.6, 0.4], [0.3, 0.7]])]
        np.testing.assert_array_equal(decode(node, np.zeros((2, 2)), Loss.HAMMING)[0], [0, 1])

    def test_zero_one_uses_pairwise(self):
        node = [np.array([[0.9, 0.1], [0.45, 0.55], [0.45, 0.55]])]
        sticky = np.array([[1.0, -1.0], [-1.0, 1.0]])
        self.assertEqual(list(decode(node, sticky, "zero_one")[0]), [0, 0, 0])
        expected = viterbi(ChainPotentials(np.log(node[0]), sticky))
        np.testing.assert_array_equal(decode(node, sticky, Loss.ZERO_ONE)[0], expected)
        self.assertEqual(list(decode(node, np.zeros((2, 2)), "zero_one")[0]), [0, 1, 1])


class TestErrorRate(unittest.TestCase):

    def test_rates(self):
        pred = [[0, 1, 1], [0], [1, 1]]
        gold = [[0, 1, 0], [0], [0, 0]]
        hamming, zero_one = error_rate(pred, gold)
        self.assertAlmostEqual(hamming, 3 / 6)
        self.assertAlmostEqual(zero_one, 2 / 3)

    def test_label_names(self):
        self.assertEqual(error_rate([["B", "I"]], [["B", "I"]]), (0.0, 0.0))

    def test_alignment_errors(self):
        with self.assertRaises(CorpusFormatError) as ctx:
            error_rate([[0, 1], [0]], [[0, 1], [0, 0]])
        self.assertEqual(ctx.exception.code, "alignment")
        self.assertIn("sequence 1", str(ctx.exception))
        with self.assertRaises(CorpusFormatError):
            error_rate([[0]], [[0], [1]])


if __name__ == "__main__":
    unittest.main()
