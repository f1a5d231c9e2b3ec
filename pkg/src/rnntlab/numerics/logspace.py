"""Numerically stable log-domain helpers.

Log-zero is represented by ``-inf``; every helper here treats it as a proper
element of the extended reals rather than a large negative constant.
"""
import numpy as np

LOG_ZERO = -np.inf


def log_sum_exp(values) -> float:
    """Return ``log(sum(exp(values)))`` with a max shift.

    Inputs may contain ``-inf``. An all ``-inf`` (or empty) input yields ``-inf``.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        return LOG_ZERO
    m = v.max()
    if m == -np.inf:
        return LOG_ZERO
    if m == np.inf:
        return np.inf
    return float(m + np.log(np.sum(np.exp(v - m))))


def log_add(a: float, b: float) -> float:
    """Two-argument log-add, exact for ``-inf`` operands."""
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    """Log-probabilities from finite logits along ``axis``.

    Raises:
        ValueError: if any logit is NaN or infinite.
    """
    x = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("log_softmax requires finite logits")
    m = x.max(axis=axis, keepdims=True)
    shifted = x - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(logits, axis: int = -1) -> np.ndarray:
    return np.exp(log_softmax(logits, axis=axis))
