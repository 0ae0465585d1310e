"""Objective terms for pose optimization.

Three families: a regularizer keeping key-vertices near their initialization,
an unsquared-jerk smoothness term, and the semantic family comparing source
and target descriptor stacks under adaptive weights. Weights are applied
elementwise before squaring; each public function can also report per-frame
values so a non-finite total can be traced to the frame that produced it.
"""

from __future__ import annotations

import warnings
from typing import Mapping, Optional, Union

import torch

from .descriptors import DescriptorSet
from .types import ValidationError

SEMANTIC_TERMS = ("dist", "dir", "pen", "height", "sliding")

_COS_EPS = 1e-9  # cosine denominator guard; zero vectors read as cosine 0
_DIR_TOL = 1e-6  # separations below this have no usable direction
_JERK_TOL = 1e-10  # jerk magnitudes below this count as zero
_NOISE_TOL = 1e-12  # residuals below float noise carry no gradient


def _dead(x: torch.Tensor, tol: float = _NOISE_TOL) -> torch.Tensor:
    """Zero out sub-noise residuals so they cannot steer the optimizer.

    Adam rescales each coordinate by its own gradient history, so even a
    1e-15 rounding residual would otherwise trigger full-size steps away
    from an exact optimum.
    """
    return x * (x.abs() > tol).to(x.dtype)


def loss_reg(
    positions: torch.Tensor, init_positions: torch.Tensor, per_frame: bool = False
) -> torch.Tensor:
    """Squared distance to the initialization, summed over frames and rows."""
    if positions.shape != init_positions.shape:
        raise ValidationError("positions/init shape mismatch", "$.loss.reg")
    sq = ((positions - init_positions) ** 2).sum(dim=(1, 2))
    return sq if per_frame else sq.sum()


def loss_smooth(positions: torch.Tensor, fps: float, per_frame: bool = False) -> torch.Tensor:
    """Sum of unsquared jerk norms over the trajectory.

    Jerk is the third forward difference scaled by fps^3, defined on the
    first T-3 frames; fewer than 4 frames make the term vacuously zero.
    In per-frame mode the value at index t covers the stencil [t, t+3].
    """
    t = positions.shape[0]
    if t < 4:
        warnings.warn("smoothness needs at least 4 frames; term is 0", RuntimeWarning)
        zeros = positions.new_zeros(max(t - 3, 0) if per_frame else ())
        return zeros
    third = (
        positions[3:] - 3.0 * positions[2:-1] + 3.0 * positions[1:-2] - positions[:-3]
    ) * float(fps) ** 3
    sq = (third * third).sum(dim=-1)
    # jerk below float cancellation noise reads as flat, not as a kink
    live = sq > _JERK_TOL**2
    norms = torch.sqrt(torch.clamp(sq, min=1e-30)) * live.to(positions.dtype)
    per = norms.sum(dim=1)
    return per if per_frame else per.sum()


def elementwise_cosine(a: torch.Tensor, b: torch.Tensor, eps: float = _COS_EPS) -> torch.Tensor:
    """Cosine similarity over the trailing axis; zero vectors give 0.

    The norms are clamped under the sqrt so the gradient at a zero vector
    is zero rather than NaN.
    """
    dot = (a * b).sum(dim=-1)
    na = torch.sqrt(torch.clamp((a * a).sum(dim=-1), min=1e-30))
    nb = torch.sqrt(torch.clamp((b * b).sum(dim=-1), min=1e-30))
    return dot / torch.clamp(na * nb, min=eps)


def _scaled(sq: torch.Tensor, scale: Optional[torch.Tensor]) -> torch.Tensor:
    """Multiply squared entries by a per-row scale (broadcast over columns)."""
    if scale is None:
        return sq
    if sq.ndim == 3:  # (T, N, N) pair matrices
        return sq * scale.view(1, -1, 1)
    return sq * scale.view(1, -1)  # (T, N) row vectors


def semantic_terms(
    source: DescriptorSet,
    target: DescriptorSet,
    w_interaction: torch.Tensor,
    w_floor: torch.Tensor,
    dir_verbatim: bool = False,
    term_scales: Optional[Mapping[str, torch.Tensor]] = None,
    per_frame: bool = False,
) -> dict[str, torch.Tensor]:
    """The five weighted semantic discrepancy terms, unreduced over terms.

    ``term_scales`` maps a term name to a per-row multiplier applied to the
    squared entries (rows = first key-vertex index); used for interactive
    per-part rebalancing. ``dir_verbatim`` switches the direction term from
    alignment error ||W (1 - cos)||^2 to the raw ||W cos||^2 form.
    """
    if source.n != target.n:
        raise ValidationError("descriptor row counts differ", "$.loss.semantic")
    if source.n_frames != target.n_frames:
        raise ValidationError("descriptor frame counts differ", "$.loss.semantic")
    scales = term_scales or {}

    def reduce(sq: torch.Tensor, name: str) -> torch.Tensor:
        sq = _scaled(sq, scales.get(name))
        per = sq.sum(dim=tuple(range(1, sq.ndim)))
        return per if per_frame else per.sum()

    out: dict[str, torch.Tensor] = {}
    out["dist"] = reduce((w_interaction * _dead(source.dist - target.dist)) ** 2, "dist")

    cos = elementwise_cosine(source.dir, target.dir)
    dir_err = _dead(cos if dir_verbatim else 1.0 - cos)
    # coincident key vertices have no direction; the distance term owns them
    defined = (source.dir.norm(dim=-1) > _DIR_TOL) & (target.dir.norm(dim=-1) > _DIR_TOL)
    out["dir"] = reduce((w_interaction * dir_err * defined.to(dir_err.dtype)) ** 2, "dir")

    out["pen"] = reduce((w_interaction * _dead(source.pen - target.pen)) ** 2, "pen")

    below = _dead(torch.clamp(target.height, max=0.0)) ** 2
    match = (w_floor * _dead(source.height - target.height)) ** 2
    out["height"] = reduce(below + match, "height")

    slide = (w_floor.unsqueeze(-1) * _dead(source.sliding - target.sliding)) ** 2
    out["sliding"] = reduce(slide.sum(dim=-1), "sliding")
    return out


def loss_semantic(
    source: DescriptorSet,
    target: DescriptorSet,
    w_interaction: torch.Tensor,
    w_floor: torch.Tensor,
    term_weights: Mapping[str, float],
    dir_verbatim: bool = False,
    term_scales: Optional[Mapping[str, torch.Tensor]] = None,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Weighted sum of the semantic terms plus the per-term breakdown."""
    terms = semantic_terms(
        source, target, w_interaction, w_floor, dir_verbatim=dir_verbatim, term_scales=term_scales
    )
    total = sum(float(term_weights[k]) * terms[k] for k in SEMANTIC_TERMS)
    return total, terms


def semantic_terms_by_part(
    source: DescriptorSet,
    target: DescriptorSet,
    w_interaction: torch.Tensor,
    w_floor: torch.Tensor,
    part_rows: Mapping[str, Union[list, torch.Tensor]],
    dir_verbatim: bool = False,
) -> dict[str, dict[str, float]]:
    """Unweighted term values restricted to each part's key-vertex rows.

    Row restriction means summing entries whose first index belongs to the
    part, the same convention the per-part rebalance scales use.
    """
    per_part: dict[str, dict[str, float]] = {}
    n = source.n
    for part, rows in part_rows.items():
        idx = torch.as_tensor(rows, dtype=torch.long)
        scale = torch.zeros(n, dtype=source.dist.dtype)
        scale[idx] = 1.0
        terms = semantic_terms(
            source,
            target,
            w_interaction,
            w_floor,
            dir_verbatim=dir_verbatim,
            term_scales={k: scale for k in SEMANTIC_TERMS},
        )
        per_part[part] = {k: float(v) for k, v in terms.items()}
    return per_part
