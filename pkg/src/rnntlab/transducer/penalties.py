"""Training-time lattice modifications: constrained alignment and EOQ timing penalties.

Penalties are subtracted from log-probabilities before the loss and the
distributions are deliberately not renormalised; they only reshape which
alignments the loss rewards.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .lattice import PosteriorLattice


@dataclass(frozen=True)
class RegularizerConfig:
    lambda_fastemit: float = 0.0
    align_penalty: float = 0.0
    align_buffer: int = 0
    eoq_early_scale: float = 0.0
    eoq_late_scale: float = 0.0
    eoq_buffer: int = 0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0, got {value}")

    @property
    def touches_lattice(self) -> bool:
        return self.align_penalty > 0 or self.eoq_early_scale > 0 or self.eoq_late_scale > 0

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "RegularizerConfig":
        return cls(**(d or {}))


@dataclass(frozen=True)
class AlignmentRef:
    """Reference emission frame (1-based) for each target position."""

    token_frames: Sequence[int]

    def __post_init__(self):
        f = list(self.token_frames)
        if any(b < a for a, b in zip(f, f[1:])):
            raise ValueError("reference frames must be nondecreasing")


def apply_lattice_penalties(lattice: PosteriorLattice, targets, align: Optional[AlignmentRef],
                            eos_frame: int, cfg: RegularizerConfig,
                            eoq_id: Optional[int] = None) -> PosteriorLattice:
    """Return a penalised copy of ``lattice`` (the input is not modified).

    * alignment: log Pr(y_{u+1} | t, u) -= align_penalty when |t - r_{u+1}| > align_buffer
    * EOQ: log Pr(eoq | t, u) -= early * max(0, eos - buf - t) + late * max(0, t - eos - buf)

    ``t`` and the reference frames are 1-based.
    """
    T, U = lattice.T, lattice.U
    y = np.asarray(targets, dtype=np.int64).reshape(-1)
    if y.size != U:
        raise ValueError("targets do not match lattice U")
    if not 1 <= eos_frame <= T:
        raise ValueError(f"eos_frame {eos_frame} outside [1, {T}]")
    lp = lattice.log_probs.copy()
    frames = np.arange(1, T + 1)
    if cfg.align_penalty > 0 and U:
        if align is None:
            raise ValueError("align_penalty > 0 needs an AlignmentRef")
        r = np.asarray(align.token_frames, dtype=np.int64)
        if r.size != U:
            raise ValueError(f"alignment has {r.size} entries, expected {U}")
        if r.min() < 1 or r.max() > T:
            raise ValueError("alignment frames must lie in [1, T]")
        outside = np.abs(frames[:, None] - r[None, :]) > cfg.align_buffer  # [T, U]
        lp[:, np.arange(U), y] -= cfg.align_penalty * outside
    if cfg.eoq_early_scale > 0 or cfg.eoq_late_scale > 0:
        if eoq_id is None:
            raise ValueError("EOQ penalties need eoq_id")
        early = np.maximum(0, (eos_frame - cfg.eoq_buffer) - frames)
        late = np.maximum(0, frames - (eos_frame + cfg.eoq_buffer))
        pen = cfg.eoq_early_scale * early + cfg.eoq_late_scale * late
        lp[:, :, eoq_id] -= pen[:, None]
    return PosteriorLattice(lp)
