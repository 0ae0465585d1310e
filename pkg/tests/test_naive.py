import numpy as np
import pytest

from keymotion import quat
from keymotion.kinematics import forward_kinematics
from keymotion.naive import (
    collapse_missing_bones,
    copy_rotations,
    distribute_extra_bones,
    naive_retarget,
    scale_root,
)
from keymotion.types import (
    Animation,
    BoneMapping,
    Pose,
    Skeleton,
    UnsupportedTopologyError,
    ValidationError,
)

ID = quat.IDENTITY


def stub_skeleton(root_height: float) -> Skeleton:
    return Skeleton(
        names=["root"],
        parents=np.array([-1]),
        tpose_rotations=np.array([ID]),
        tpose_positions=np.array([[0.0, 0.0, root_height]]),
    )


def chain_skeleton(n: int, tpose_rots=None, spacing=1.0, height=1.0) -> Skeleton:
    """n bones along +x at identical ground height (up = +z)."""
    if tpose_rots is None:
        tpose_rots = np.tile(ID, (n, 1))
    pos = np.zeros((n, 3))
    pos[:, 0] = np.arange(n) * spacing
    pos[:, 2] = height
    return Skeleton(
        names=[f"j{i}" for i in range(n)],
        parents=np.array([-1] + list(range(n - 1))),
        tpose_rotations=np.asarray(tpose_rots),
        tpose_positions=pos,
    )


def random_unit_quats(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def random_tree_skeleton(rng, n):
    parents = np.array([-1] + [int(rng.integers(0, i)) for i in range(1, n)])
    pos = rng.normal(size=(n, 3))
    pos[0, 2] = 1.0  # positive root height for scale_root
    return Skeleton(
        names=[f"b{i}" for i in range(n)],
        parents=parents,
        tpose_rotations=random_unit_quats(rng, n),
        tpose_positions=pos,
    )


# ---------------------------------------------------------------- scale_root


def test_scale_root_ratio():
    src, tgt = stub_skeleton(1.0), stub_skeleton(0.5)
    np.testing.assert_allclose(
        scale_root(np.array([2.0, 0.0, 3.0]), src, tgt), [1.0, 0.0, 1.5]
    )


def test_scale_root_identity():
    sk = stub_skeleton(0.73)
    p = np.array([0.3, -0.2, 0.9])
    np.testing.assert_allclose(scale_root(p, sk, sk), p)


def test_scale_root_doubles():
    np.testing.assert_allclose(
        scale_root(np.array([0.0, 0.0, 0.9]), stub_skeleton(0.9), stub_skeleton(1.8)),
        [0.0, 0.0, 1.8],
    )


def test_scale_root_rejects_grounded_root():
    with pytest.raises(ValidationError):
        scale_root(np.zeros(3), stub_skeleton(0.0), stub_skeleton(1.0))


# ------------------------------------------------------------ copy_rotations


def test_copy_rotations_identity_round_trip():
    rng = np.random.default_rng(21)
    sk = random_tree_skeleton(rng, 8)
    mapping = BoneMapping.identity(sk)
    for _ in range(10):
        pose = Pose(
            sk.tpose_positions[0] + 0.2 * rng.normal(size=3), random_unit_quats(rng, 8)
        )
        out = copy_rotations(sk, sk, mapping, pose)
        np.testing.assert_allclose(
            forward_kinematics(sk, out)[:, :3, 3],
            forward_kinematics(sk, pose)[:, :3, 3],
            atol=1e-6,
        )


def test_copy_rotations_tpose_to_tpose():
    rng = np.random.default_rng(5)
    src = random_tree_skeleton(rng, 6)
    tgt = random_tree_skeleton(rng, 6)
    rest = Pose(src.tpose_positions[0].copy(), np.tile(ID, (6, 1)))
    out = copy_rotations(src, tgt, BoneMapping.identity(src), rest)
    np.testing.assert_allclose(out.rotations, np.tile(ID, (6, 1)), atol=1e-9)


def test_copy_rotations_output_is_valid_pose():
    rng = np.random.default_rng(31)
    src = random_tree_skeleton(rng, 7)
    tgt = random_tree_skeleton(rng, 7)
    pose = Pose(src.tpose_positions[0], random_unit_quats(rng, 7))
    out = copy_rotations(src, tgt, BoneMapping.identity(src), pose)
    np.testing.assert_allclose(np.linalg.norm(out.rotations, axis=-1), 1.0, atol=1e-9)


# ---------------------------------------------------- collapse_missing_bones


def planar_pose(skel, angles_deg):
    rots = np.stack([quat.from_axis_angle([0, 0, 1], np.deg2rad(a)) for a in angles_deg])
    return Pose(skel.tpose_positions[0].copy(), rots)


def test_collapse_noop_when_fully_mapped():
    rng = np.random.default_rng(2)
    sk = random_tree_skeleton(rng, 5)
    pose = Pose(sk.tpose_positions[0], random_unit_quats(rng, 5))
    out = collapse_missing_bones(pose, sk, BoneMapping.identity(sk))
    np.testing.assert_allclose(out.rotations, pose.rotations)


def test_collapse_planar_six_joint_chain():
    # 6-joint planar chain bending 45 deg per joint; joints 3 and 4 unmapped.
    # Hand geometry: B1=j2 must end at 90+45=135 deg so that the j2->j5
    # direction (135 deg) survives the chain straightening; B2=j5 keeps its
    # global 225 deg orientation via a 90 deg residual under the 135 deg parent.
    sk = chain_skeleton(6)
    pose = planar_pose(sk, [0, 45, 45, 45, 45, 45])
    mapping = BoneMapping([(0, 0), (1, 1), (2, 2), (5, 3)])
    adjusted = collapse_missing_bones(pose, sk, mapping)

    expected = planar_pose(sk, [0, 45, 90, 0, 0, 90]).rotations
    for got, want in zip(adjusted.rotations, expected):
        if np.dot(got, want) < 0:
            got = -got
        np.testing.assert_allclose(got, want, atol=1e-9)

    # direction preservation, geometric check
    before = forward_kinematics(sk, pose)[:, :3, 3]
    after = forward_kinematics(sk, adjusted)[:, :3, 3]
    d0 = before[5] - before[2]
    d1 = after[5] - after[2]
    np.testing.assert_allclose(
        d0 / np.linalg.norm(d0), d1 / np.linalg.norm(d1), atol=1e-9
    )
    # B2 global orientation restored
    rot_before = forward_kinematics(sk, pose)[5, :3, :3]
    rot_after = forward_kinematics(sk, adjusted)[5, :3, :3]
    np.testing.assert_allclose(rot_after, rot_before, atol=1e-9)


def test_collapse_then_copy_reproduces_end_segment_direction():
    # transfer the collapsed pose to the 4-bone target skeleton and compare
    # its end-segment direction with the source's preserved B1->B2 direction
    src = chain_skeleton(6)
    tgt = chain_skeleton(4)
    tgt = Skeleton(["j0", "j1", "j2", "j5"], tgt.parents, tgt.tpose_rotations, tgt.tpose_positions)
    pose = planar_pose(src, [0, 45, 45, 45, 45, 45])
    mapping = BoneMapping([(0, 0), (1, 1), (2, 2), (5, 3)])
    adjusted = collapse_missing_bones(pose, src, mapping)
    out = copy_rotations(src, tgt, mapping, adjusted)

    src_pos = forward_kinematics(src, adjusted)[:, :3, 3]
    tgt_pos = forward_kinematics(tgt, out)[:, :3, 3]
    d_src = src_pos[5] - src_pos[2]
    d_tgt = tgt_pos[3] - tgt_pos[2]
    np.testing.assert_allclose(
        d_src / np.linalg.norm(d_src), d_tgt / np.linalg.norm(d_tgt), atol=1e-9
    )


def test_collapse_random_chain_restores_end_orientation():
    rng = np.random.default_rng(77)
    sk = chain_skeleton(6, tpose_rots=random_unit_quats(rng, 6))
    pose = Pose(sk.tpose_positions[0], random_unit_quats(rng, 6))
    mapping = BoneMapping([(0, 0), (1, 1), (2, 2), (5, 3)])
    adjusted = collapse_missing_bones(pose, sk, mapping)

    rot_before = forward_kinematics(sk, pose)[5, :3, :3]
    rot_after = forward_kinematics(sk, adjusted)[5, :3, :3]
    delta = rot_after @ rot_before.T
    angle = np.arccos(np.clip((np.trace(delta) - 1) / 2, -1, 1))
    assert angle < 1e-6

    before = forward_kinematics(sk, pose)[:, :3, 3]
    after = forward_kinematics(sk, adjusted)[:, :3, 3]
    d0 = before[5] - before[2]
    d1 = after[5] - after[2]
    np.testing.assert_allclose(
        d0 / np.linalg.norm(d0), d1 / np.linalg.norm(d1), atol=1e-9
    )


def test_collapse_rejects_unmapped_branching_bone():
    sk = Skeleton(
        names=["root", "split", "a", "b"],
        parents=np.array([-1, 0, 1, 1]),
        tpose_rotations=np.tile(ID, (4, 1)),
        tpose_positions=np.array([[0, 0, 1.0], [0, 0, 2.0], [1, 0, 2.0], [-1, 0, 2.0]]),
    )
    pose = Pose(np.array([0, 0, 1.0]), np.tile(ID, (4, 1)))
    mapping = BoneMapping([(0, 0), (2, 1), (3, 2)])  # "split" unmapped, 2 children
    with pytest.raises(UnsupportedTopologyError):
        collapse_missing_bones(pose, sk, mapping)


# --------------------------------------------------- distribute_extra_bones


def test_distribute_k1_matches_plain_transfer():
    rng = np.random.default_rng(8)
    sk = chain_skeleton(3, tpose_rots=random_unit_quats(rng, 3))
    transferred = random_unit_quats(rng, 1)[0]
    out = distribute_extra_bones(transferred, sk, [1])
    assert len(out) == 1
    np.testing.assert_allclose(out[0], transferred, atol=1e-12)


def test_distribute_45_degrees_over_three_bones():
    sk = chain_skeleton(5)
    transferred = quat.from_axis_angle([0, 0, 1], np.deg2rad(45))
    out = distribute_extra_bones(transferred, sk, [1, 2, 3])
    fifteen = quat.from_axis_angle([0, 0, 1], np.deg2rad(15))
    for r in out:
        np.testing.assert_allclose(r, fifteen, atol=1e-12)


def test_distribute_end_orientation_matches_k1():
    rng = np.random.default_rng(123)
    sk = chain_skeleton(4, tpose_rots=random_unit_quats(rng, 4))
    transferred = random_unit_quats(rng, 1)[0]
    chain = [0, 1, 2, 3]

    rots_k1 = np.tile(ID, (4, 1))
    rots_k1[0] = transferred
    pose_k1 = Pose(sk.tpose_positions[0], rots_k1)

    rots_k4 = np.stack(distribute_extra_bones(transferred, sk, chain))
    pose_k4 = Pose(sk.tpose_positions[0], rots_k4)

    end_k1 = forward_kinematics(sk, pose_k1)[3, :3, :3]
    end_k4 = forward_kinematics(sk, pose_k4)[3, :3, :3]
    delta = end_k4 @ end_k1.T
    angle = np.arccos(np.clip((np.trace(delta) - 1) / 2, -1, 1))
    assert angle < 1e-6


def test_copy_rotations_distributes_over_unmapped_chain():
    # source bone 1 maps to target bone 1 whose two descendants are unmapped:
    # the 45 deg rotation arrives as 15 deg on each chain bone
    src = chain_skeleton(3)
    tgt = chain_skeleton(5)
    mapping = BoneMapping([(0, 0), (1, 1), (2, 4)])
    pose = planar_pose(src, [0, 45, 0])
    out = copy_rotations(src, tgt, mapping, pose)
    fifteen = quat.from_axis_angle([0, 0, 1], np.deg2rad(15))
    for b in (1, 2, 3):
        np.testing.assert_allclose(out.rotations[b], fifteen, atol=1e-9)


# ----------------------------------------------------------- full baseline


def test_naive_retarget_equivariant_under_root_rotation():
    # global rotation of the source commutes with retargeting when the two
    # root T-pose frames agree (both identity here)
    rng = np.random.default_rng(55)
    src = chain_skeleton(6)
    tgt = chain_skeleton(4)
    tgt = Skeleton(["j0", "j1", "j2", "j5"], tgt.parents, tgt.tpose_rotations, tgt.tpose_positions)
    mapping = BoneMapping([(0, 0), (1, 1), (2, 2), (5, 3)])
    rots = random_unit_quats(rng, 6)
    g = quat.from_axis_angle(rng.normal(size=3), 1.1)

    pose = Pose(src.tpose_positions[0], rots)
    rots_rot = rots.copy()
    rots_rot[0] = quat.mul(g, rots[0])
    pose_rot = Pose(src.tpose_positions[0], rots_rot)

    anim = Animation.from_poses([pose], 30.0)
    anim_rot = Animation.from_poses([pose_rot], 30.0)
    out = naive_retarget(src, tgt, mapping, anim)
    out_rot = naive_retarget(src, tgt, mapping, anim_rot)

    pos = forward_kinematics(tgt, out.pose(0))[:, :3, 3]
    pos_rot = forward_kinematics(tgt, out_rot.pose(0))[:, :3, 3]
    root = out.pose(0).root_position
    expected = (quat.to_matrix(g) @ (pos - root).T).T + root
    np.testing.assert_allclose(pos_rot, expected, atol=1e-9)


def test_naive_retarget_processes_all_frames():
    rng = np.random.default_rng(14)
    sk = chain_skeleton(4)
    rots = random_unit_quats(rng, 4 * 3).reshape(3, 4, 4)
    anim = Animation(24.0, np.tile(sk.tpose_positions[0], (3, 1)), rots)
    out = naive_retarget(sk, sk, BoneMapping.identity(sk), anim)
    assert out.n_frames == 3
    assert out.fps == 24.0
