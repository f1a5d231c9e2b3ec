"""RNN-T output lattice: forward/backward variables, likelihood and gradients.

Frames are 0-based in arrays here (``t = 0 .. T-1``); the grids carry an
extra row ``t = T`` so the final blank transition is an ordinary cell:
``alpha[T, U]`` is the total log-likelihood and ``beta[T, U] = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._kernels import alpha_beta

BLANK_ID = 0


@dataclass(frozen=True)
class Vocab:
    """Real tokens are ``1..size``; blank is 0 and EOQ is ``size + 1``."""

    size: int
    blank_id: int = BLANK_ID

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("vocab needs at least one real token")
        if self.blank_id != BLANK_ID:
            raise ValueError("blank must be id 0")

    @property
    def eoq_id(self) -> int:
        return self.size + 1

    @property
    def total(self) -> int:
        return self.size + 2

    def check_targets(self, targets) -> None:
        y = list(targets)
        for i, k in enumerate(y):
            if k == self.blank_id or not 0 <= k < self.total:
                raise ValueError(f"invalid target id {k}")
            if k == self.eoq_id and i != len(y) - 1:
                raise ValueError("EOQ may only appear as the final target")


@dataclass
class PosteriorLattice:
    """``log_probs[t, u, k]`` = log Pr(k | t, u), shape [T, U+1, V_total]."""

    log_probs: np.ndarray

    def __post_init__(self):
        self.log_probs = np.asarray(self.log_probs, dtype=np.float64)
        if self.log_probs.ndim != 3 or self.log_probs.shape[0] < 1:
            raise ValueError("lattice must be [T >= 1, U+1, V]")

    @property
    def T(self) -> int:
        return self.log_probs.shape[0]

    @property
    def U(self) -> int:
        return self.log_probs.shape[1] - 1

    @property
    def vocab_total(self) -> int:
        return self.log_probs.shape[2]

    def is_normalized(self, tol: float = 1e-9) -> bool:
        return bool(np.all(np.abs(np.exp(self.log_probs).sum(-1) - 1.0) <= tol))


@dataclass
class ForwardBackwardGrids:
    alpha: np.ndarray
    beta: np.ndarray
    log_like: float


def _views(lattice: PosteriorLattice, targets, blank_id: int):
    y = np.asarray(targets, dtype=np.int64).reshape(-1)
    lp = lattice.log_probs
    if y.size != lattice.U:
        raise ValueError(f"lattice has U={lattice.U} but {y.size} targets were given")
    if np.any(y == blank_id):
        raise ValueError("blank may not appear in the target sequence")
    if np.any(y < 0) or np.any(y >= lattice.vocab_total):
        raise ValueError("target id outside the lattice vocabulary")
    blank_lp = lp[:, :, blank_id]
    emit_lp = lp[:, np.arange(y.size), y] if y.size else np.zeros((lattice.T, 0))
    return y, blank_lp, emit_lp


def forward_backward(lattice: PosteriorLattice, targets, blank_id: int = BLANK_ID) -> ForwardBackwardGrids:
    """Log-domain alpha/beta recursions over the (frame, emitted-count) grid."""
    _, blank_lp, emit_lp = _views(lattice, targets, blank_id)
    alpha, beta = alpha_beta(blank_lp, emit_lp)
    return ForwardBackwardGrids(alpha=alpha, beta=beta, log_like=float(beta[0, 0]))


def rnnt_grad(lattice: PosteriorLattice, targets, grids: ForwardBackwardGrids,
              lambda_fastemit: float = 0.0, blank_id: int = BLANK_ID) -> np.ndarray:
    """d(-log P)/d Pr(k|t,u) in the probability domain, with FastEmit scaling.

    Non-blank target entries carry ``(1 + lambda_fastemit)``; blank entries are
    untouched and every other symbol gets exactly zero.
    """
    if lambda_fastemit < 0:
        raise ValueError("lambda_fastemit must be >= 0")
    y, _, _ = _views(lattice, targets, blank_id)
    T, U = lattice.T, lattice.U
    a = grids.alpha[:T] - grids.log_like
    g = np.zeros_like(lattice.log_probs)
    g[:, :, blank_id] = -np.exp(a + grids.beta[1:T + 1])
    if U:
        scale = -(1.0 + lambda_fastemit)
        g[:, np.arange(U), y] = scale * np.exp(a[:, :U] + grids.beta[:T, 1:])
    return g


def log_occupation_grad(lattice: PosteriorLattice, targets, grids: ForwardBackwardGrids,
                        lambda_fastemit: float = 0.0, blank_id: int = BLANK_ID) -> np.ndarray:
    """d(-log P)/d log Pr(k|t,u): ``rnnt_grad`` times the probabilities, kept in log space."""
    y, blank_lp, emit_lp = _views(lattice, targets, blank_id)
    T, U = lattice.T, lattice.U
    a = grids.alpha[:T] - grids.log_like
    g = np.zeros_like(lattice.log_probs)
    g[:, :, blank_id] = -np.exp(a + blank_lp + grids.beta[1:T + 1])
    if U:
        g[:, np.arange(U), y] = -(1.0 + lambda_fastemit) * np.exp(a[:, :U] + emit_lp + grids.beta[:T, 1:])
    return g


def emission_posterior(grids: ForwardBackwardGrids, lattice: PosteriorLattice, targets,
                       blank_id: int = BLANK_ID) -> np.ndarray:
    """[T, U] posterior that target ``u`` (0-based) is emitted at frame ``t``."""
    _, _, emit_lp = _views(lattice, targets, blank_id)
    T, U = lattice.T, lattice.U
    if U == 0:
        return np.zeros((T, 0))
    return np.exp(grids.alpha[:T, :U] + emit_lp + grids.beta[:T, 1:] - grids.log_like)


def expected_emission_frames(posterior: np.ndarray) -> np.ndarray:
    """Expected 1-based emission frame per target token."""
    frames = np.arange(1, posterior.shape[0] + 1)[:, None]
    return (frames * posterior).sum(0)
