import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from keymotion import quat
from keymotion.kinematics import (
    forward_kinematics,
    linear_blend_skinning,
    rest_normals,
    skinned_normals,
    topological_sort,
)
from keymotion.types import Animation, Pose, Skeleton, SkinnedMesh, ValidationError

ID = quat.IDENTITY


def three_link_chain():
    """Root at origin, two children straight along +x, one unit apart."""
    return Skeleton(
        names=["root", "upper", "lower"],
        parents=np.array([-1, 0, 1]),
        tpose_rotations=np.tile(ID, (3, 1)),
        tpose_positions=np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]]),
    )


def test_topological_sort_chain_and_shuffled():
    order = topological_sort(np.array([-1, 0, 1]))
    assert list(order) == [0, 1, 2]
    # child stored before its parent
    order = topological_sort(np.array([1, 2, -1]))
    pos = {b: i for i, b in enumerate(order)}
    assert pos[2] < pos[1] < pos[0]


def test_topological_sort_rejects_cycle():
    with pytest.raises(ValidationError):
        topological_sort(np.array([1, 0]))


@given(st.integers(0, 2**32 - 1), st.integers(1, 40))
@settings(max_examples=30, deadline=None)
def test_topological_sort_parents_precede_children(seed, n):
    rng = np.random.default_rng(seed)
    # random forest: each bone's parent is an earlier index or none, then shuffled
    parents = np.array([-1] + [int(rng.integers(-1, i)) for i in range(1, n)])
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    shuffled = np.array([-1 if parents[inv[i]] < 0 else perm[parents[inv[i]]] for i in range(n)])
    order = topological_sort(shuffled)
    assert sorted(order) == list(range(n))
    pos = {b: i for i, b in enumerate(order)}
    for i, p in enumerate(shuffled):
        if p >= 0:
            assert pos[p] < pos[i]


def test_fk_tpose_reproduces_rest():
    sk = three_link_chain()
    mats = forward_kinematics(sk, Pose.rest(3))
    for i in range(3):
        np.testing.assert_allclose(mats[i, :3, :3], np.eye(3), atol=1e-12)
        np.testing.assert_allclose(mats[i, :3, 3], sk.tpose_positions[i], atol=1e-12)


def test_fk_two_link_elbow():
    # rotate root and elbow 90 deg about z: classic planar arm
    sk = three_link_chain()
    rz90 = quat.from_axis_angle([0, 0, 1], np.pi / 2)
    pose = Pose(np.zeros(3), np.stack([rz90, rz90, ID]))
    mats = forward_kinematics(sk, pose)
    np.testing.assert_allclose(mats[1, :3, 3], [0.0, 1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(mats[2, :3, 3], [-1.0, 1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(
        mats[2, :3, :3], quat.to_matrix(quat.from_axis_angle([0, 0, 1], np.pi)), atol=1e-12
    )


def test_fk_respects_tpose_frame():
    # hand-computed case with a non-identity T-pose bone frame:
    # bone1 frame is Rx(90), a local Rx(90) residual moves its tip from
    # (0,2,0) to (0,1,1)
    rx90 = quat.from_axis_angle([1, 0, 0], np.pi / 2)
    sk = Skeleton(
        names=["root", "tilted"],
        parents=np.array([-1, 0]),
        tpose_rotations=np.stack([ID, rx90]),
        tpose_positions=np.array([[0.0, 0, 0], [0.0, 1.0, 0]]),
    )
    mesh = SkinnedMesh(
        vertices=np.array([[0.0, 2.0, 0.0]]),
        faces=np.zeros((0, 3), dtype=int),
        skin_weights=np.array([[0.0, 1.0]]),
    )
    pose = Pose(np.zeros(3), np.stack([ID, rx90]))
    posed = linear_blend_skinning(mesh, sk, pose)
    np.testing.assert_allclose(posed[0], [0.0, 1.0, 1.0], atol=1e-12)


def test_fk_root_translation_carries_chain():
    sk = three_link_chain()
    pose = Pose(np.array([5.0, -2.0, 3.0]), np.tile(ID, (3, 1)))
    mats = forward_kinematics(sk, pose)
    np.testing.assert_allclose(mats[2, :3, 3], [7.0, -2.0, 3.0], atol=1e-12)


def test_fk_animation_batches_match_single_frames():
    sk = three_link_chain()
    rng = np.random.default_rng(11)
    rots = rng.normal(size=(4, 3, 4))
    rots /= np.linalg.norm(rots, axis=-1, keepdims=True)
    roots = rng.normal(size=(4, 3))
    anim = Animation(30.0, roots, rots)
    batch = forward_kinematics(sk, anim)
    for t in range(4):
        single = forward_kinematics(sk, anim.pose(t))
        np.testing.assert_allclose(batch[t], single, atol=1e-12)


def test_lbs_rigid_vertex_follows_bone():
    sk = three_link_chain()
    rng = np.random.default_rng(7)
    rots = rng.normal(size=(3, 4))
    rots /= np.linalg.norm(rots, axis=-1, keepdims=True)
    pose = Pose(np.array([0.3, 0.1, -0.2]), rots)
    verts = np.array([[2.5, 0.2, -0.1], [1.1, 0.0, 0.4]])
    mesh = SkinnedMesh(verts, np.zeros((0, 3), dtype=int), np.array([[0, 0, 1.0], [0, 1.0, 0]]))
    posed = linear_blend_skinning(mesh, sk, pose)
    mats = forward_kinematics(sk, pose)
    for v, bone, out in zip(verts, [2, 1], posed):
        expected = mats[bone, :3, :3] @ (v - sk.tpose_positions[bone]) + mats[bone, :3, 3]
        np.testing.assert_allclose(out, expected, atol=1e-12)


def test_lbs_blend_is_convex_combination():
    sk = three_link_chain()
    rot = quat.from_axis_angle([0, 1, 0], 0.7)
    pose = Pose(np.zeros(3), np.stack([ID, rot, ID]))
    v = np.array([[1.5, 0.3, 0.0]])
    w_a = np.array([[1.0, 0.0, 0.0]])
    w_b = np.array([[0.0, 1.0, 0.0]])
    w_mix = 0.25 * w_a + 0.75 * w_b
    faces = np.zeros((0, 3), dtype=int)
    pa = linear_blend_skinning(SkinnedMesh(v, faces, w_a), sk, pose)
    pb = linear_blend_skinning(SkinnedMesh(v, faces, w_b), sk, pose)
    pm = linear_blend_skinning(SkinnedMesh(v, faces, w_mix), sk, pose)
    np.testing.assert_allclose(pm, 0.25 * pa + 0.75 * pb, atol=1e-12)


def square_patch_mesh():
    # two triangles in the x-y plane, normal +z, bound to bone 1
    verts = np.array([[1.0, 0, 0], [2.0, 0, 0], [2.0, 1.0, 0], [1.0, 1.0, 0]])
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    w = np.zeros((4, 3))
    w[:, 1] = 1.0
    return SkinnedMesh(verts, faces, w)


def test_rest_normals_flat_patch():
    mesh = square_patch_mesh()
    n = rest_normals(mesh)
    np.testing.assert_allclose(n, np.tile([0.0, 0.0, 1.0], (4, 1)), atol=1e-12)


def test_skinned_normals_rotate_rigidly():
    sk = three_link_chain()
    mesh = square_patch_mesh()
    rx = quat.from_axis_angle([1, 0, 0], np.pi / 2)
    pose = Pose(np.zeros(3), np.stack([ID, rx, ID]))
    n = skinned_normals(mesh, sk, pose)
    # +z normal rotated 90 deg about x becomes +y... rotated in bone 1's frame
    np.testing.assert_allclose(n, np.tile([0.0, -1.0, 0.0], (4, 1)), atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(n, axis=-1), np.ones(4), atol=1e-12)


def test_skeleton_rejects_non_unit_rotation():
    with pytest.raises(ValidationError) as exc:
        Skeleton(
            names=["root"],
            parents=np.array([-1]),
            tpose_rotations=np.array([[1.0, 0.0, 0.1, 0.0]]),
            tpose_positions=np.zeros((1, 3)),
        )
    assert "rotation" in str(exc.value)


def test_skeleton_rejects_two_roots():
    with pytest.raises(ValidationError):
        Skeleton(
            names=["a", "b"],
            parents=np.array([-1, -1]),
            tpose_rotations=np.tile(ID, (2, 1)),
            tpose_positions=np.zeros((2, 3)),
        )
