"""Skeleton evaluation: topological order, forward kinematics, skinning.

The differentiable path runs on torch float64 tensors batched over frames;
thin numpy wrappers expose the same operations for plain poses/animations.
"""
from __future__ import annotations

import warnings
from typing import Union

import numpy as np
import torch

from . import quat, tquat
from .types import Animation, Pose, Skeleton, SkinnedMesh, ValidationError

DTYPE = torch.float64


def topological_sort(parents: np.ndarray) -> np.ndarray:
    """Order bone indices so every parent precedes its children.

    Raises ValidationError on cycles or malformed parent arrays.
    """
    parents = np.asarray(parents, dtype=int)
    b = parents.shape[0]
    children: list[list[int]] = [[] for _ in range(b)]
    roots = []
    for i, p in enumerate(parents):
        if p < 0:
            roots.append(i)
        elif p >= b:
            raise ValidationError(f"parent index {p} out of range", f"$.bones[{i}].parent")
        else:
            children[p].append(i)
    order = []
    stack = list(reversed(roots))
    while stack:
        i = stack.pop()
        order.append(i)
        stack.extend(reversed(children[i]))
    if len(order) != b:
        raise ValidationError("bone hierarchy contains a cycle", "$.bones")
    return np.array(order, dtype=int)


class SkeletonTensors:
    """Constant torch views of a skeleton, precomputed for batched FK/LBS."""

    def __init__(self, skeleton: Skeleton):
        self.skeleton = skeleton
        self.order = topological_sort(skeleton.parents)
        self.parents = skeleton.parents
        off_rot, off_trans = skeleton.local_offsets()
        self.offset_rot = torch.tensor(off_rot, dtype=DTYPE)
        self.offset_trans = torch.tensor(off_trans, dtype=DTYPE)
        self.tpose_rot = torch.tensor(skeleton.tpose_rotations, dtype=DTYPE)
        self.tpose_pos = torch.tensor(skeleton.tpose_positions, dtype=DTYPE)
        self.tpose_rot_inv = tquat.conj(self.tpose_rot)


def fk_batch(
    skel: SkeletonTensors, root_positions: torch.Tensor, rotations: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Batched forward kinematics.

    root_positions: (T, 3); rotations: (T, B, 4) local residuals from T-pose.
    Returns world rotations (T, B, 4) and world joint positions (T, B, 3).
    """
    t = root_positions.shape[0]
    b = rotations.shape[1]
    world_rot: list = [None] * b
    world_pos: list = [None] * b
    for i in skel.order:
        p = skel.parents[i]
        if p < 0:
            base_rot = skel.offset_rot[i].expand(t, 4)
            world_rot[i] = tquat.mul(base_rot, rotations[:, i])
            world_pos[i] = root_positions
        else:
            pr = world_rot[p]
            pp = world_pos[p]
            step = tquat.mul(skel.offset_rot[i].expand(t, 4), rotations[:, i])
            world_rot[i] = tquat.mul(pr, step)
            world_pos[i] = pp + tquat.rotate(pr, skel.offset_trans[i].expand(t, 3))
    return torch.stack(world_rot, dim=1), torch.stack(world_pos, dim=1)


def lbs_batch(
    skel: SkeletonTensors,
    world_rot: torch.Tensor,
    world_pos: torch.Tensor,
    vertices: torch.Tensor,
    weights: torch.Tensor,
) -> torch.Tensor:
    """Linear blend skinning of T-pose vertices under FK world transforms.

    vertices: (V, 3), weights: (V, B); world_*: (T, B, ...). Returns (T, V, 3).
    """
    # delta rotation from bind to pose, per bone: Rw * Rt^-1
    skin_rot = tquat.mul(world_rot, skel.tpose_rot_inv.unsqueeze(0))  # (T, B, 4)
    local = vertices.unsqueeze(0).unsqueeze(2) - skel.tpose_pos.unsqueeze(0).unsqueeze(1)  # (1,V,B,3)
    moved = tquat.rotate(skin_rot.unsqueeze(1), local) + world_pos.unsqueeze(1)  # (T,V,B,3)
    return (moved * weights.unsqueeze(0).unsqueeze(-1)).sum(dim=2)


def normals_batch(
    skel: SkeletonTensors,
    world_rot: torch.Tensor,
    rest_norms: torch.Tensor,
    weights: torch.Tensor,
) -> torch.Tensor:
    """Skinned unit normals: blend per-bone rotated rest normals, renormalize.

    rest_norms: (V, 3); returns (T, V, 3).
    """
    skin_rot = tquat.mul(world_rot, skel.tpose_rot_inv.unsqueeze(0))  # (T,B,4)
    rotated = tquat.rotate(skin_rot.unsqueeze(1), rest_norms.unsqueeze(0).unsqueeze(2))  # (T,V,B,3)
    blended = (rotated * weights.unsqueeze(0).unsqueeze(-1)).sum(dim=2)
    n = torch.sqrt((blended * blended).sum(dim=-1, keepdim=True) + 1e-18)
    return blended / n


def _as_batch(x: Union[Pose, Animation]) -> tuple[np.ndarray, np.ndarray, bool]:
    if isinstance(x, Pose):
        return x.root_position[None], x.rotations[None], True
    return x.root_positions, x.rotations, False


def forward_kinematics(skeleton: Skeleton, pose: Union[Pose, Animation]) -> np.ndarray:
    """World 4x4 matrices for a pose ((B,4,4)) or animation ((T,B,4,4))."""
    roots, rots, single = _as_batch(pose)
    if rots.shape[-2] != skeleton.n_bones:
        raise ValidationError("pose bone count != skeleton bone count", "$.rotations")
    skel = SkeletonTensors(skeleton)
    with torch.no_grad():
        wr, wp = fk_batch(
            skel, torch.tensor(roots, dtype=DTYPE), torch.tensor(rots, dtype=DTYPE)
        )
        mats3 = tquat.to_matrix(wr).numpy()
    t, b = mats3.shape[:2]
    out = np.tile(np.eye(4), (t, b, 1, 1))
    out[:, :, :3, :3] = mats3
    out[:, :, :3, 3] = wp.numpy()
    return out[0] if single else out


def _world_rot_pos(
    skeleton: Skeleton, pose: Union[Pose, Animation, np.ndarray]
) -> tuple[np.ndarray, np.ndarray, bool]:
    """World rotations (T,B,3,3) and positions (T,B,3) from a pose, animation,
    or precomputed world matrices."""
    if isinstance(pose, np.ndarray):
        if pose.shape[-2:] != (4, 4):
            raise ValidationError("world matrices must be (...,4,4)", "$")
        single = pose.ndim == 3
        m = pose[None] if single else pose
        return m[..., :3, :3], m[..., :3, 3], single
    mats = forward_kinematics(skeleton, pose)
    single = mats.ndim == 3
    m = mats[None] if single else mats
    return m[..., :3, :3], m[..., :3, 3], single


def linear_blend_skinning(
    mesh: SkinnedMesh, skeleton: Skeleton, pose: Union[Pose, Animation, np.ndarray]
) -> np.ndarray:
    """Posed vertex positions under a pose, animation, or world matrices.

    Returns (V,3) for a single pose/matrix set, (T,V,3) for batches.
    """
    rot, pos, single = _world_rot_pos(skeleton, pose)
    tpose_rot = quat.to_matrix(skeleton.tpose_rotations)
    delta = np.einsum("tbij,bkj->tbik", rot, tpose_rot)  # world rot * inverse bind rot
    local = mesh.vertices[None, :, None, :] - skeleton.tpose_positions[None, None, :, :]
    moved = np.einsum("tbij,uvbj->tvbi", delta, local) + pos[:, None, :, :]
    posed = np.einsum("tvbi,vb->tvi", moved, mesh.skin_weights)
    return posed[0] if single else posed


def rest_normals(mesh: SkinnedMesh) -> np.ndarray:
    """Area-weighted vertex normals of the T-pose mesh, unit length.

    Isolated vertices receive the up axis.
    """
    acc = np.zeros_like(mesh.vertices)
    if mesh.faces.size:
        v = mesh.vertices
        f = mesh.faces
        fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])  # area-scaled
        for c in range(3):
            np.add.at(acc, f[:, c], fn)
    lens = np.linalg.norm(acc, axis=-1)
    zero = lens < 1e-12
    acc[zero] = np.array([0.0, 0.0, 1.0])
    lens[zero] = 1.0
    return acc / lens[:, None]


def skinned_normals(
    mesh: SkinnedMesh,
    skeleton: Skeleton,
    pose: Union[Pose, Animation, np.ndarray],
    vertex_indices: np.ndarray = None,
) -> np.ndarray:
    """Unit vertex normals under a pose, animation, or world matrices.

    A blended normal that cancels to zero falls back to the T-pose normal
    with a warning. ``vertex_indices`` restricts output to a subset.
    """
    rot, _, single = _world_rot_pos(skeleton, pose)
    rn = rest_normals(mesh)
    weights = mesh.skin_weights
    if vertex_indices is not None:
        rn = rn[vertex_indices]
        weights = weights[vertex_indices]
    # blend per-bone delta rotations (world * tpose^-1) applied to rest normals
    tpose_rot = quat.to_matrix(skeleton.tpose_rotations)  # (B,3,3)
    delta = np.einsum("tbij,bkj->tbik", rot, tpose_rot)  # rot @ tpose^T
    rotated = np.einsum("tbij,vj->tvbi", delta, rn)
    blended = np.einsum("tvbi,vb->tvi", rotated, weights)
    lens = np.linalg.norm(blended, axis=-1)
    zero = lens < 1e-9
    if np.any(zero):
        warnings.warn("zero blended normal; falling back to T-pose normal", RuntimeWarning)
        t_idx, v_idx = np.nonzero(zero)
        blended[t_idx, v_idx] = rn[v_idx]
        lens[zero] = 1.0
    out = blended / lens[..., None]
    return out[0] if single else out
