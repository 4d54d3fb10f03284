"""
GP-prior structured prediction for linear-chain sequence labelling.

Modules:
    corpus      data format, corpora, experiment splits
    kernels     clique kernels and the factorized Gram matrix
    chain       forward-backward, Viterbi, brute-force reference
    sampler     elliptical slice sampling, hyperparameter moves, chain runner
    checkpoint  sample store files
    predict     predictive conditional, BMA, decoding, error rates
    report      metrics tables
    synth       synthetic Markov-chain data
    config      run configuration
"""

__version__ = "1.0.0"
