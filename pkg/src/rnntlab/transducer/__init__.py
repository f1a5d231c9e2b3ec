"""RNN-T lattice loss with FastEmit, constrained-alignment and EOQ penalties."""
from .lattice import (
    BLANK_ID,
    ForwardBackwardGrids,
    PosteriorLattice,
    Vocab,
    emission_posterior,
    expected_emission_frames,
    forward_backward,
    log_occupation_grad,
    rnnt_grad,
)
from .loss import LossItem, rnnt_loss, rnnt_loss_and_logit_grad
from .penalties import AlignmentRef, RegularizerConfig, apply_lattice_penalties

__all__ = [
    "BLANK_ID", "ForwardBackwardGrids", "PosteriorLattice", "Vocab", "emission_posterior",
    "expected_emission_frames", "forward_backward", "log_occupation_grad", "rnnt_grad",
    "LossItem", "rnnt_loss", "rnnt_loss_and_logit_grad", "AlignmentRef", "RegularizerConfig",
    "apply_lattice_penalties",
]
