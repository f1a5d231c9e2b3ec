"""rnntlab: a desk-scale lab for streaming transducer ASR latency.

Subpackages:

* ``numerics``   log-space helpers and a small reverse-mode differentiator
* ``transducer`` RNN-T lattice forward/backward, loss, FastEmit and penalties
* ``encoder``    streaming Conformer blocks and cascaded encoder stacks
* ``decoder``    prediction/joint networks, streaming beam search, two-pass
* ``prefetch``   E2E and silence-based prefetch policies
* ``metrics``    endpointer/partial/prefetch latency and token error rate
* ``harness``    synthetic data, training, experiments and the CLI
"""
__version__ = "0.1.0"
