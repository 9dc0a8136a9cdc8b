"""Generator training under the marginally penalized Wasserstein (MPW) distance.

Modules:
    autodiff: layer chain, hand-written backward pass, AdamW.
    transport: exact and 1-D W1 solvers with envelope gradients.
    mpw: MPW distance and its gradient.
    tabular: mixed-type table encoding.
    train: minibatch generator training and sampling.
    metrics: TV, MMD, covariance and mode-collapse diagnostics.
    bench: synthetic benchmarks and experiment runner.
    checkpoint, cli: persistence and command line.
"""

__version__ = "0.1.0"
