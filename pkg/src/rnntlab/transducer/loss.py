"""Transducer loss on joint-network logits, single utterance and batched primitive."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..numerics import autodiff as ad
from ..numerics.logspace import log_softmax
from .lattice import BLANK_ID, PosteriorLattice, forward_backward, log_occupation_grad
from .penalties import AlignmentRef, RegularizerConfig, apply_lattice_penalties

_ZERO_CFG = RegularizerConfig()


def rnnt_loss_and_logit_grad(logits, targets, align: Optional[AlignmentRef] = None,
                             eos_frame: Optional[int] = None, cfg: RegularizerConfig = _ZERO_CFG,
                             eoq_id: Optional[int] = None, blank_id: int = BLANK_ID):
    """Negative log-likelihood of ``targets`` and its gradient w.r.t. ``logits``.

    The loss is evaluated on the penalty-modified lattice; FastEmit only
    rescales the gradient, so it never changes the returned loss.

    Args:
        logits: [T, U+1, V_total] joint outputs.
        eos_frame: 1-based end-of-speech frame (defaults to T, only used by EOQ penalties).

    Returns:
        ``(loss, dlogits)`` with ``dlogits`` shaped like ``logits``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    lp = log_softmax(logits, axis=-1)
    lattice = PosteriorLattice(lp)
    if cfg.touches_lattice:
        lattice = apply_lattice_penalties(lattice, targets, align, eos_frame or lattice.T, cfg, eoq_id)
    grids = forward_backward(lattice, targets, blank_id)
    # G = dL/d log Pr'(k|t,u); the penalty is additive in log space so
    # dL/dz_j = G_j - Pr_j * sum_k G_k with the unpenalised Pr.
    G = log_occupation_grad(lattice, targets, grids, cfg.lambda_fastemit, blank_id)
    dlogits = G - np.exp(lp) * G.sum(axis=-1, keepdims=True)
    return -grids.log_like, dlogits


@dataclass
class LossItem:
    """Per-utterance inputs of the batched loss."""

    targets: Sequence[int]
    n_frames: int
    eos_frame: Optional[int] = None
    align: Optional[AlignmentRef] = None


@ad.register_primitive("rnnt_loss")
def rnnt_loss(logits, items: Sequence[LossItem], cfg: RegularizerConfig = _ZERO_CFG,
              eoq_id: Optional[int] = None, blank_id: int = BLANK_ID) -> ad.Tensor:
    """Mean transducer loss over a padded batch of joint logits [B, T_max, U_max+1, V].

    Padded frames/labels receive zero gradient.
    """
    logits = ad.as_tensor(logits)
    B = logits.shape[0]
    if len(items) != B:
        raise ValueError("one LossItem per batch row is required")
    grad = np.zeros_like(logits.data)
    losses = np.empty(B)
    for b, it in enumerate(items):
        T, U = it.n_frames, len(it.targets)
        loss, g = rnnt_loss_and_logit_grad(logits.data[b, :T, :U + 1], it.targets, it.align,
                                           it.eos_frame, cfg, eoq_id, blank_id)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite transducer loss for batch row {b}")
        losses[b] = loss
        grad[b, :T, :U + 1] = g
    grad /= B
    return ad.make_node("rnnt_loss", np.array(losses.mean()), (logits,), lambda g: (g * grad,))

