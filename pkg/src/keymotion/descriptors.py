"""Time-varying pose descriptors over key-vertex trajectories.

Five matrices summarize what a pose *means*: pairwise distances and
direction vectors, penetration depth along surface normals, height above
the ground (flat or a sampled terrain), and horizontal sliding velocity.
All of them are plain torch expressions of the key-vertex positions, so
gradients flow back to whatever produced those positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from . import tquat
from .types import HeightField, ground_axes

_EPS_SQ = 1e-30  # keeps sqrt gradients finite (and zero) at coincident points


@dataclass
class DescriptorSet:
    """Per-frame descriptor stack; N rows cover every character in the scene."""

    dist: torch.Tensor  # (T, N, N) pairwise distances
    dir: torch.Tensor  # (T, N, N, 3), entry (i, j) = p_j - p_i
    pen: torch.Tensor  # (T, N, N) signed offset along n_i
    height: torch.Tensor  # (T, N) clearance above the ground
    sliding: torch.Tensor  # (T, N, 2) horizontal velocity
    fps: float
    up: torch.Tensor  # (3,)

    @property
    def n_frames(self) -> int:
        return int(self.dist.shape[0])

    @property
    def n(self) -> int:
        return int(self.dist.shape[1])


def sample_heightfield(hf: HeightField, x: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """Differentiable twin of HeightField.sample; edge clamping zeroes the
    horizontal gradient outside the grid."""
    grid = torch.as_tensor(hf.heights, dtype=x.dtype)
    h, w = grid.shape
    gx = torch.clamp((x - hf.origin[0]) / hf.spacing, 0.0, w - 1.0)
    gz = torch.clamp((z - hf.origin[1]) / hf.spacing, 0.0, h - 1.0)
    x0 = torch.clamp(torch.floor(gx).long(), 0, w - 2)
    z0 = torch.clamp(torch.floor(gz).long(), 0, h - 2)
    fx = gx - x0
    fz = gz - z0
    h00 = grid[z0, x0]
    h01 = grid[z0, x0 + 1]
    h10 = grid[z0 + 1, x0]
    h11 = grid[z0 + 1, x0 + 1]
    return (1 - fz) * ((1 - fx) * h00 + fx * h01) + fz * ((1 - fx) * h10 + fx * h11)


def compute_descriptors(
    positions: torch.Tensor,
    normals: torch.Tensor,
    fps: float,
    up: Sequence[float] = (0.0, 0.0, 1.0),
    heightfield: Optional[HeightField] = None,
) -> DescriptorSet:
    """Evaluate all five descriptors for a (T, N, 3) key-vertex trajectory."""
    p = positions
    if p.ndim != 3 or p.shape[-1] != 3:
        raise ValueError("positions must be (frames, key-vertices, 3)")
    t, n = p.shape[0], p.shape[1]
    up_t = torch.as_tensor(up, dtype=p.dtype)
    ax_a, ax_b = ground_axes(np.asarray(up, dtype=float))

    d = p[:, None, :, :] - p[:, :, None, :]
    off_diag = 1.0 - torch.eye(n, dtype=p.dtype)
    dist = torch.sqrt(torch.clamp((d * d).sum(-1), min=_EPS_SQ)) * off_diag
    pen = torch.einsum("tijc,tic->tij", d, normals) * off_diag

    height = (p * up_t).sum(-1)
    if heightfield is not None:
        height = height - sample_heightfield(heightfield, p[..., ax_a], p[..., ax_b])

    horizontal = p[..., (ax_a, ax_b)]
    if t >= 2:
        vel = (horizontal[1:] - horizontal[:-1]) * fps
        sliding = torch.cat([vel, vel[-1:]], dim=0)
    else:
        sliding = torch.zeros_like(horizontal)

    return DescriptorSet(dist, d, pen, height, sliding, float(fps), up_t)


def stack_positions(per_character: Sequence[torch.Tensor]) -> tuple[torch.Tensor, list[int]]:
    """Concatenate per-character (T, N_c, 3) stacks along the row axis.

    Returns the joint stack and the starting row of each character.
    """
    offsets = []
    total = 0
    for block in per_character:
        offsets.append(total)
        total += int(block.shape[1])
    return torch.cat(list(per_character), dim=1), offsets


def gaze_directions(
    world_rotations: torch.Tensor, head_bone: int, forward: Sequence[float]
) -> torch.Tensor:
    """Per-frame unit gaze vectors: the head bone's world rotation applied
    to the character's rest-pose forward axis."""
    fwd = torch.as_tensor(forward, dtype=world_rotations.dtype)
    fwd = fwd / torch.linalg.norm(fwd)
    q = world_rotations[:, head_bone, :]
    out = tquat.rotate(q, fwd.expand(q.shape[0], 3))
    return out / torch.linalg.norm(out, dim=-1, keepdim=True)


def gaze_matrix(
    n_total: int, eye_rows: Sequence[int], directions: torch.Tensor
) -> torch.Tensor:
    """Sparse (N_total, 3) matrix holding each character's gaze on its eye
    row and zero everywhere else."""
    if len(eye_rows) != directions.shape[0]:
        raise ValueError("one gaze direction per eye row required")
    out = torch.zeros((n_total, 3), dtype=directions.dtype)
    for row, vec in zip(eye_rows, directions):
        norm = torch.linalg.norm(vec)
        if float(norm) < 1e-12:
            raise ValueError("gaze directions must be nonzero")
        out[row] = vec / norm
    return out
