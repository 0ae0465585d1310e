"""Adaptive weighting of descriptor entries by proximity.

Key-vertex pairs count only while they are close to each other (or to the
ground): weights ramp linearly from 1 at the near threshold to 0 at the
far one, with the thresholds expressed as fractions of character height.
The optimizer blends weights computed on the source with weights
recomputed on the current target pose, the latter behind a stop-gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import torch

from .types import ValidationError

D_MIN_FRAC = 0.05  # near threshold, fraction of character height
D_MAX_FRAC = 0.15  # far threshold
GAZE_A_MIN = np.deg2rad(2.0)
GAZE_A_MAX = np.deg2rad(5.0)

Threshold = Union[float, Sequence[float], torch.Tensor]


@dataclass
class WeightSet:
    """Per-frame weight maps plus the thresholds that produced them."""

    interaction: torch.Tensor  # (T, N, N) in [0, 1]
    floor: torch.Tensor  # (T, N) in [0, 1]
    d_min: Threshold
    d_max: Threshold
    h_min: Threshold
    h_max: Threshold
    alpha: float = 0.0
    gaze_bonus: Optional[torch.Tensor] = None  # (T, N, N), kept out of `interaction`

    def __post_init__(self) -> None:
        for lo, hi, name in ((self.d_min, self.d_max, "d"), (self.h_min, self.h_max, "h")):
            lo_t = torch.as_tensor(lo, dtype=torch.float64)
            hi_t = torch.as_tensor(hi, dtype=torch.float64)
            if not bool(torch.all(lo_t > 0) and torch.all(hi_t > lo_t)):
                raise ValidationError(f"need 0 < {name}_min < {name}_max", "$.weights")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError("alpha must be in [0, 1]", "$.weights.alpha")


def default_thresholds(character_heights: Sequence[float]):
    """(d_min, d_max, h_min, h_max) per character, 5%/15% of height."""
    h = np.asarray(character_heights, dtype=float)
    return D_MIN_FRAC * h, D_MAX_FRAC * h, D_MIN_FRAC * h, D_MAX_FRAC * h


def _row_thresholds(value: Threshold, dtype) -> torch.Tensor:
    t = torch.as_tensor(value, dtype=dtype)
    return t


def _pair_thresholds(value: Threshold, dtype) -> torch.Tensor:
    """Scalar stays scalar; a per-row vector becomes the pairwise mean so
    cross-character blocks use the average of the two characters' scales."""
    t = torch.as_tensor(value, dtype=dtype)
    if t.ndim == 0:
        return t
    return 0.5 * (t[:, None] + t[None, :])


def interaction_weights(
    m_dist: torch.Tensor,
    d_min: Threshold,
    d_max: Threshold,
    mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """clamp(1 - (dist - d_min)/(d_max - d_min)) with an optional {0,1} mask."""
    lo = _pair_thresholds(d_min, m_dist.dtype)
    hi = _pair_thresholds(d_max, m_dist.dtype)
    w = torch.clamp(1.0 - (m_dist - lo) / (hi - lo), 0.0, 1.0)
    if mask is not None:
        w = w * mask
    return w


def floor_weights(m_height: torch.Tensor, h_min: Threshold, h_max: Threshold) -> torch.Tensor:
    lo = _row_thresholds(h_min, m_height.dtype)
    hi = _row_thresholds(h_max, m_height.dtype)
    return torch.clamp(1.0 - (m_height - lo) / (hi - lo), 0.0, 1.0)


def blend_weights(w_source: torch.Tensor, w_target: torch.Tensor, alpha: float) -> torch.Tensor:
    """W_source + alpha * Sg(W_target); the target term carries no gradient."""
    if w_source.shape != w_target.shape:
        raise ValidationError("weight shapes differ", "$.weights")
    return w_source + alpha * w_target.detach()


def alpha_schedule(step: int, total_steps: int) -> float:
    """Linear ramp 0 -> 1 across the optimization."""
    if total_steps <= 1:
        return 1.0
    return min(max(step / (total_steps - 1), 0.0), 1.0)


def interaction_mask(
    limb_tags: Sequence[str], char_ids: Optional[Sequence[int]] = None
) -> torch.Tensor:
    """{0,1} mask zeroing same-limb pairs (including the diagonal).

    Limb tags only collide within one character: pass ``char_ids`` for
    stacked multi-character rows so e.g. the two torsos stay active.
    """
    n = len(limb_tags)
    ids = list(char_ids) if char_ids is not None else [0] * n
    if len(ids) != n:
        raise ValidationError("char_ids length must match limb tags", "$.weights.mask")
    mask = np.ones((n, n))
    for i in range(n):
        for j in range(n):
            if ids[i] == ids[j] and limb_tags[i] == limb_tags[j]:
                mask[i, j] = 0.0
    return torch.tensor(mask, dtype=torch.float64)


def gaze_interaction_bonus(
    m_dir: torch.Tensor,
    m_gaze: torch.Tensor,
    a_min: float = GAZE_A_MIN,
    a_max: float = GAZE_A_MAX,
) -> torch.Tensor:
    """Bonus weight for pairs whose connecting direction lines up with a gaze.

    Rows without a gaze vector contribute zero (their cosine is defined as
    0, which the clamp then floors). The raw formula value is kept as-is
    and pinned by regression tests; the result is symmetrized with an
    elementwise max so downstream weight maps stay symmetric.
    """
    if a_min >= a_max:
        raise ValidationError("need a_min < a_max", "$.weights.gaze")
    gaze_norm = torch.linalg.norm(m_gaze, dim=-1)  # (N,)
    has_gaze = gaze_norm > 1e-12
    dir_norm = torch.linalg.norm(m_dir, dim=-1)
    denom = torch.clamp(dir_norm * gaze_norm[None, :, None], min=1e-9)
    cos = torch.einsum("tijc,ic->tij", m_dir, m_gaze) / denom
    cos = cos * has_gaze[None, :, None]
    cos_min, cos_max = np.cos(a_min), np.cos(a_max)
    bonus = torch.clamp((cos - cos_min) / (cos_min - cos_max), 0.0, 1.0)
    return torch.maximum(bonus, bonus.transpose(1, 2))
