"""Rotation-copy retargeting baseline, used to initialize the optimizer.

Transfers each mapped bone's T-pose-relative rotation through world space,
with two structural repairs for mismatched hierarchies:

  * source bones missing on the target are collapsed: the chain is reset to
    T-pose, the chain's mapped ancestor is re-aimed so the ancestor-to-end
    direction is preserved, and the chain's mapped end bone recovers its
    global orientation;
  * extra target bones in a chain split the transferred rotation into equal
    slerp fractions, each expressed in its own bone's local frame.
"""
from __future__ import annotations

import numpy as np

from . import quat
from .kinematics import topological_sort
from .types import (
    Animation,
    BoneMapping,
    Pose,
    Skeleton,
    UnsupportedTopologyError,
    ValidationError,
)


def scale_root(
    p_source: np.ndarray, source_skel: Skeleton, target_skel: Skeleton
) -> np.ndarray:
    """Scale root translations by the ratio of T-pose root heights.

    Accepts a single 3-vector or a (T, 3) batch.
    """
    h_s = float(source_skel.tpose_positions[source_skel.root] @ source_skel.up_axis)
    h_t = float(target_skel.tpose_positions[target_skel.root] @ target_skel.up_axis)
    if h_s <= 0 or h_t <= 0:
        raise ValidationError(
            f"root T-pose height must be positive (source {h_s:.4f}, target {h_t:.4f})",
            "$.skeleton",
        )
    return np.asarray(p_source, dtype=float) * (h_t / h_s)


def _world_rotations(skel: Skeleton, rotations: np.ndarray) -> np.ndarray:
    """World rotation matrices (B,3,3) of a single pose's residual quats."""
    off_rot, _ = skel.local_offsets()
    out = np.empty((skel.n_bones, 3, 3))
    for b in topological_sort(skel.parents):
        local = quat.to_matrix(off_rot[b]) @ quat.to_matrix(rotations[b])
        p = skel.parents[b]
        out[b] = local if p < 0 else out[p] @ local
    return out


def distribute_extra_bones(
    transferred: np.ndarray, target_skel: Skeleton, chain: list[int]
) -> list[np.ndarray]:
    """Split a transferred local rotation across a bone chain.

    ``transferred`` is the local residual the chain's head would receive on
    its own; every chain bone gets the slerp(identity, L, 1/k) fraction
    conjugated into its own T-pose frame, so the composed chain ends at the
    same global orientation as the k=1 case.
    """
    k = len(chain)
    frac = quat.slerp(quat.IDENTITY, transferred, 1.0 / k)
    head_rot = target_skel.tpose_rotations[chain[0]]
    out = []
    for bone in chain:
        rel = quat.mul(quat.conj(head_rot), target_skel.tpose_rotations[bone])
        out.append(quat.mul(quat.conj(rel), quat.mul(frac, rel)))
    return out


def _extra_chain(target_skel: Skeleton, bone: int, mapped_targets: set[int]) -> list[int]:
    """The bone plus its run of unmapped single-child descendants."""
    chain = [bone]
    cur = bone
    while True:
        kids = target_skel.children(cur)
        if len(kids) != 1 or kids[0] in mapped_targets:
            return chain
        cur = kids[0]
        chain.append(cur)


def copy_rotations(
    source_skel: Skeleton,
    target_skel: Skeleton,
    mapping: BoneMapping,
    source_pose: Pose,
    distribute: bool = True,
) -> Pose:
    """Transfer a pose by copying T-pose-relative rotations through world space.

    Unmapped target bones stay in T-pose unless they continue a mapped bone's
    single-child chain, in which case the transferred rotation is distributed
    along the chain.
    """
    t2s = mapping.target_to_source()
    mapped_targets = set(t2s.keys())
    if source_pose.rotations.shape[0] != source_skel.n_bones:
        raise ValidationError("pose bone count != skeleton bone count", "$.rotations")
    rw_s = _world_rotations(source_skel, source_pose.rotations)
    off_rot_t, _ = target_skel.local_offsets()

    nb = target_skel.n_bones
    residuals = np.tile(quat.IDENTITY, (nb, 1))
    assigned = np.zeros(nb, dtype=bool)
    rw_t = np.empty((nb, 3, 3))
    for bt in topological_sort(target_skel.parents):
        pt = target_skel.parents[bt]
        parent_rot_t = np.eye(3) if pt < 0 else rw_t[pt]
        if bt in t2s and not assigned[bt]:
            bs = t2s[bt]
            ps = source_skel.parents[bs]
            parent_rot_s = np.eye(3) if ps < 0 else rw_s[ps]
            l_s = quat.to_matrix(source_pose.rotations[bs])
            w = parent_rot_s @ l_s @ parent_rot_s.T
            l_t = quat.from_matrix(parent_rot_t.T @ w @ parent_rot_t)
            chain = _extra_chain(target_skel, bt, mapped_targets) if distribute else [bt]
            for bone, r in zip(chain, distribute_extra_bones(l_t, target_skel, chain)):
                residuals[bone] = r
                assigned[bone] = True
        rw_t[bt] = parent_rot_t @ quat.to_matrix(off_rot_t[bt]) @ quat.to_matrix(residuals[bt])

    root_pos = scale_root(source_pose.root_position, source_skel, target_skel)
    return Pose(root_pos, residuals)


def collapse_missing_bones(
    source_pose: Pose, source_skel: Skeleton, mapping: BoneMapping
) -> Pose:
    """Fold unmapped source bones into their mapped neighbours.

    Unmapped chain bones are reset to T-pose; the mapped ancestor B1 is
    re-aimed so the world direction B1 -> B2 survives, and the mapped end
    bone B2 recovers its original global orientation.
    """
    mapped_sources = {a for a, _ in mapping.pairs}
    unmapped = [b for b in range(source_skel.n_bones) if b not in mapped_sources]
    if not unmapped:
        return Pose(source_pose.root_position.copy(), source_pose.rotations.copy())
    for b in unmapped:
        kids = source_skel.children(b)
        if len(kids) > 1:
            raise UnsupportedTopologyError(
                f"unmapped bone {source_skel.names[b]!r} has {len(kids)} children",
                "$.mapping",
            )
        if source_skel.parents[b] < 0:
            raise ValidationError("root bone must be mapped", "$.mapping.pairs")

    orig_world = _world_rotations(source_skel, source_pose.rotations)
    orig_pos = _joint_positions(source_skel, source_pose)

    rotations = source_pose.rotations.copy()
    for b in unmapped:
        rotations[b] = quat.IDENTITY

    # chains: run of unmapped bones whose parent B1 is mapped; B2 is the
    # mapped child closing the chain, when it exists
    heads = [b for b in unmapped if source_skel.parents[b] in mapped_sources]
    off_rot, _ = source_skel.local_offsets()
    for head in sorted(heads, key=lambda b: _depth(source_skel, b)):
        b1 = int(source_skel.parents[head])
        tail = head
        while True:
            kids = source_skel.children(tail)
            if not kids:
                b2 = None
                break
            if kids[0] in mapped_sources:
                b2 = kids[0]
                break
            tail = kids[0]
        if b2 is None:
            continue  # dangling chain: T-pose reset is all we can do
        pose_now = Pose(source_pose.root_position, rotations)
        cur_pos = _joint_positions(source_skel, pose_now)
        cur_world = _world_rotations(source_skel, rotations)
        d_orig = orig_pos[b2] - orig_pos[b1]
        d_new = cur_pos[b2] - cur_pos[b1]
        if np.linalg.norm(d_orig) > 1e-12 and np.linalg.norm(d_new) > 1e-12:
            fix = quat.to_matrix(quat.between(d_new, d_orig))
            p1 = source_skel.parents[b1]
            parent_rot = np.eye(3) if p1 < 0 else cur_world[p1]
            frame = parent_rot @ quat.to_matrix(off_rot[b1])
            new_b1 = frame.T @ fix @ frame @ quat.to_matrix(rotations[b1])
            rotations[b1] = quat.from_matrix(new_b1)
            cur_world = _world_rotations(source_skel, rotations)
        # restore B2's global orientation
        parent_rot = cur_world[source_skel.parents[b2]]
        frame = parent_rot @ quat.to_matrix(off_rot[b2])
        rotations[b2] = quat.from_matrix(frame.T @ orig_world[b2])

    return Pose(source_pose.root_position.copy(), rotations)


def _depth(skel: Skeleton, b: int) -> int:
    d = 0
    while skel.parents[b] >= 0:
        b = skel.parents[b]
        d += 1
    return d


def _joint_positions(skel: Skeleton, pose: Pose) -> np.ndarray:
    from .kinematics import forward_kinematics

    return forward_kinematics(skel, pose)[:, :3, 3]


def naive_retarget(
    source_skel: Skeleton,
    target_skel: Skeleton,
    mapping: BoneMapping,
    animation: Animation,
) -> Animation:
    """Full rotation-copy baseline over an animation: collapse missing source
    bones, copy rotations, distribute over extra target bones, scale root."""
    mapping.validate_roots(source_skel, target_skel)
    poses = []
    for t in range(animation.n_frames):
        adjusted = collapse_missing_bones(animation.pose(t), source_skel, mapping)
        poses.append(copy_rotations(source_skel, target_skel, mapping, adjusted))
    return Animation.from_poses(poses, animation.fps)
