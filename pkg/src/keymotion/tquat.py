"""Quaternion operations on torch tensors, differentiable, batched.

Same conventions as :mod:`keymotion.quat` ([w, x, y, z], unit norm).
All functions accept arbitrary leading batch dimensions.
"""
from __future__ import annotations

import torch


def mul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    aw, ax, ay, az = a.unbind(-1)
    bw, bx, by, bz = b.unbind(-1)
    return torch.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dim=-1,
    )


def conj(q: torch.Tensor) -> torch.Tensor:
    w, xyz = q.split([1, 3], dim=-1)
    return torch.cat([w, -xyz], dim=-1)


def rotate(q: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    qv = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * torch.linalg.cross(qv, v, dim=-1)
    return v + w * t + torch.linalg.cross(qv, t, dim=-1)


def to_matrix(q: torch.Tensor) -> torch.Tensor:
    w, x, y, z = q.unbind(-1)
    row0 = torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], dim=-1)
    row1 = torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], dim=-1)
    row2 = torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], dim=-1)
    return torch.stack([row0, row1, row2], dim=-2)


def from_rotvec(v: torch.Tensor) -> torch.Tensor:
    """Axis-angle 3-vector to quaternion with well-defined gradients at zero.

    The norm is regularized by 1e-30 under the sqrt so the gradient at the
    origin is exactly zero instead of NaN; the value error is below 1e-15.
    """
    sumsq = (v * v).sum(dim=-1, keepdim=True)
    theta = torch.sqrt(sumsq + 1e-30)
    half = 0.5 * theta
    sinc = torch.where(theta < 1e-4, 0.5 - sumsq / 48.0, torch.sin(half) / theta)
    return torch.cat([torch.cos(half), sinc * v], dim=-1)
