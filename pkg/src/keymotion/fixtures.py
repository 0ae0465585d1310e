"""Hand-built characters, animations, and terrains for tests and demos.

Everything here is deterministic and cheap to construct: a small tube-chain
character for gradient checking, template pairs posed for palm contact,
a big-bellied reach scenario that provokes conflicting constraints, and a
terrain step for grounding behavior.
"""

from __future__ import annotations

import numpy as np
import torch

from . import quat
from .kinematics import SkeletonTensors, fk_batch, lbs_batch
from .template import TemplateParams, make_template
from .types import (
    Animation,
    BoneMapping,
    Character,
    HeightField,
    KeyVertexSet,
    Pose,
    Skeleton,
    SkinnedMesh,
)

CHAIN_TAGS = ("torso", "arm_l", "arm_r", "leg_l", "leg_r", "hand_l", "hand_r")


def tube_chain_character(
    n_bones: int = 5,
    spacing: float = 0.2,
    radius: float = 0.05,
    base_height: float = 0.08,
    name: str = "chain",
) -> Character:
    """A vertical chain of bones wrapped in a square tube, up axis +z.

    Each ring of 4 vertices sits at a joint; interior rings are skinned
    half-and-half to the bones meeting there. Key vertices come in +x/-x
    pairs on three rings, tagged with the two bones' limbs so the pair
    stays active under same-limb masking.
    """
    if not 2 <= n_bones <= len(CHAIN_TAGS):
        raise ValueError(f"n_bones must be in [2, {len(CHAIN_TAGS)}]")
    names = [f"bone{i}" for i in range(n_bones)]
    parents = np.arange(-1, n_bones - 1)
    positions = np.zeros((n_bones, 3))
    positions[:, 2] = base_height + spacing * np.arange(n_bones)
    skeleton = Skeleton(
        names=names,
        parents=parents,
        tpose_rotations=np.tile(quat.IDENTITY, (n_bones, 1)),
        tpose_positions=positions,
        up_axis=np.array([0.0, 0.0, 1.0]),
    )

    n_rings = n_bones + 1
    ring_offsets = np.array(
        [[radius, 0.0, 0.0], [0.0, radius, 0.0], [-radius, 0.0, 0.0], [0.0, -radius, 0.0]]
    )
    verts = []
    for k in range(n_rings):
        z = base_height + spacing * k
        ring = ring_offsets + np.array([0.0, 0.0, z])
        verts.append(ring)
    vertices = np.concatenate(verts, axis=0)

    faces = []
    for k in range(n_rings - 1):
        a = 4 * k
        b = 4 * (k + 1)
        for s in range(4):
            s1 = (s + 1) % 4
            faces.append([a + s, a + s1, b + s])
            faces.append([a + s1, b + s1, b + s])
    faces.append([0, 2, 1])  # bottom cap
    faces.append([0, 3, 2])
    top = 4 * (n_rings - 1)
    faces.append([top, top + 1, top + 2])
    faces.append([top, top + 2, top + 3])

    weights = np.zeros((vertices.shape[0], n_bones))
    for k in range(n_rings):
        rows = slice(4 * k, 4 * k + 4)
        if k == 0:
            weights[rows, 0] = 1.0
        elif k == n_rings - 1:
            weights[rows, n_bones - 1] = 1.0
        else:
            weights[rows, k - 1] = 0.5
            weights[rows, k] = 0.5

    limbs = {names[i]: CHAIN_TAGS[i] for i in range(n_bones)}

    # ring 0 sits inside the floor-weight ramp; higher rings carry the
    # interaction pairs (same-ring +x/-x points 2*radius apart)
    kv_rings = [0, 2, n_bones - 1]
    labels, indices, kv_limbs = [], [], []
    for ring in kv_rings:
        plus = 4 * ring  # +x vertex of the ring
        minus = 4 * ring + 2  # -x vertex
        bone_hi = min(ring, n_bones - 1)
        bone_lo = max(ring - 1, 0)
        labels += [f"ring{ring}_px", f"ring{ring}_mx"]
        indices += [plus, minus]
        kv_limbs += [CHAIN_TAGS[bone_hi], CHAIN_TAGS[bone_lo]]

    mesh = SkinnedMesh(
        vertices=vertices, faces=np.array(faces, dtype=int), skin_weights=weights
    )
    key_vertices = KeyVertexSet(labels=labels, indices=np.array(indices), limbs=kv_limbs)
    return Character(
        name=name, skeleton=skeleton, mesh=mesh, limbs=limbs, key_vertices=key_vertices
    )


def wiggle_animation(skeleton: Skeleton, n_frames: int = 4, fps: float = 10.0) -> Animation:
    """Deterministic smooth motion touching every bone and the root."""
    b = skeleton.n_bones
    t = np.arange(n_frames, dtype=float)[:, None]
    k = np.arange(b, dtype=float)[None, :]
    ax = 0.25 * np.sin(0.7 * t + 1.1 * k)
    ay = 0.20 * np.cos(0.9 * t + 2.3 * k)
    az = 0.15 * np.sin(1.3 * t + 0.5 * k)
    rotvecs = np.stack([ax, ay, az], axis=-1)
    rots = np.zeros((n_frames, b, 4))
    for f in range(n_frames):
        for i in range(b):
            rots[f, i] = quat.from_rotvec(rotvecs[f, i])
    root0 = skeleton.tpose_positions[int(np.argmin(skeleton.parents))]
    roots = np.tile(root0, (n_frames, 1)).astype(float)
    roots[:, 0] += 0.05 * t[:, 0]
    roots[:, 1] += 0.03 * np.sin(t[:, 0])
    return Animation(fps, roots, rots)


def gradient_fixture() -> tuple[Character, Animation, BoneMapping]:
    """5-bone, 6-key-vertex, 4-frame scene for finite-difference checks."""
    char = tube_chain_character(n_bones=5)
    anim = wiggle_animation(char.skeleton, n_frames=4, fps=10.0)
    return char, anim, BoneMapping.identity(char.skeleton)


def keyframe_animation(
    skeleton: Skeleton, keys: list[tuple[int, Pose]], n_frames: int, fps: float
) -> Animation:
    """Interpolate keyed poses: slerp for rotations, lerp for the root.

    The interpolation parameter is eased with the quintic smootherstep so
    velocity and acceleration vanish at the keys; segments then join with
    bounded finite-difference jerk instead of spikes.
    """
    if not keys or keys[0][0] != 0:
        raise ValueError("keys must start at frame 0")
    keys = sorted(keys, key=lambda kv: kv[0])
    if keys[-1][0] < n_frames - 1:
        keys = keys + [(n_frames - 1, keys[-1][1])]
    b = skeleton.n_bones
    roots = np.zeros((n_frames, 3))
    rots = np.zeros((n_frames, b, 4))
    for (f0, p0), (f1, p1) in zip(keys[:-1], keys[1:]):
        span = max(f1 - f0, 1)
        for f in range(f0, f1 + 1):
            u = (f - f0) / span
            u = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
            roots[f] = (1 - u) * p0.root_position + u * p1.root_position
            for i in range(b):
                rots[f, i] = quat.slerp(p0.rotations[i], p1.rotations[i], u)
    return Animation(fps, roots, rots)


def _palm_distance(char: Character, pose: Pose) -> float:
    """Distance between the palm key-vertices in the given pose."""
    skel = SkeletonTensors(char.skeleton)
    with torch.no_grad():
        w_rot, w_pos = fk_batch(
            skel,
            torch.tensor(pose.root_position[None], dtype=torch.float64),
            torch.tensor(pose.rotations[None], dtype=torch.float64),
        )
        kv = char.key_vertices
        idx = [kv.labels.index("palm_l"), kv.labels.index("palm_r")]
        pts = lbs_batch(
            skel,
            w_rot,
            w_pos,
            torch.tensor(char.mesh.vertices[kv.indices[idx]], dtype=torch.float64),
            torch.tensor(char.mesh.skin_weights[kv.indices[idx]], dtype=torch.float64),
        )[0]
    return float(np.linalg.norm(pts[0].numpy() - pts[1].numpy()))


def clasp_angles(char: Character, gap: float = 0.01) -> tuple[float, float]:
    """In-plane arm angles that clasp the palms ``gap`` apart at the chest.

    Returns absolute angles (measured from +x toward +z in the shoulder
    plane) of the left upper arm and of the elbow-to-palm segment, solved
    as a planar two-link reach to a point just left of the midline. The
    right arm mirrors them.
    """
    skel = char.skeleton
    pos = skel.tpose_positions
    sh = pos[skel.index("upperarm_l")]
    el = pos[skel.index("forearm_l")]
    kv = char.key_vertices
    palm = char.mesh.vertices[kv.indices[kv.labels.index("palm_l")]]
    u = float(np.linalg.norm(el - sh))
    g = float(np.linalg.norm(palm - el))
    dx = 0.5 * gap - sh[0]
    z_star = 0.7 * np.sqrt((u + g) ** 2 - dx * dx)
    d_sq = dx * dx + z_star * z_star
    d = float(np.sqrt(d_sq))
    if not abs(u - g) + 1e-9 < d < u + g - 1e-9:
        raise ValueError("palm clasp target unreachable for this character")
    alpha = np.arccos(np.clip((u * u + d_sq - g * g) / (2 * u * d), -1.0, 1.0))
    theta_v = np.arctan2(z_star, dx)
    theta1 = float(theta_v - alpha)  # minus keeps the elbow lateral
    ex, ez = sh[0] + u * np.cos(theta1), u * np.sin(theta1)
    theta2 = float(np.arctan2(z_star - ez, 0.5 * gap - ex))
    return theta1, theta2


def clap_pose(char: Character, theta1: float, theta2: float) -> Pose:
    """Two-link clasp: shoulders yawed to ``theta1``, forearms on to ``theta2``.

    Angles follow the clasp_angles convention; hands stay neutral so the
    palm key-vertices continue the forearm line.
    """
    skel = char.skeleton
    pose = Pose.rest(skel.n_bones)
    y = np.array([0.0, 1.0, 0.0])
    # left arm extends +x: negative rotation about y swings it toward +z
    pose.rotations[skel.index("upperarm_l")] = quat.from_axis_angle(y, -theta1)
    pose.rotations[skel.index("forearm_l")] = quat.from_axis_angle(y, -(theta2 - theta1))
    pose.rotations[skel.index("upperarm_r")] = quat.from_axis_angle(y, theta1)
    pose.rotations[skel.index("forearm_r")] = quat.from_axis_angle(y, theta2 - theta1)
    root = int(np.argmin(skel.parents))
    pose.root_position = skel.tpose_positions[root].copy()
    return pose


def clap_fixture(
    source_arm: float = 0.7,
    target_arm: float = 1.6,
    n_frames: int = 75,
    fps: float = 30.0,
) -> tuple[Character, Character, BoneMapping, Animation]:
    """Short-armed source clapping vs a long-armed target.

    The source animation swings both arms until the palms touch and holds;
    copying those rotations onto the longer arms leaves the palms far apart,
    so closing the gap requires the semantic solve.
    """
    source = make_template(TemplateParams(arm_length=source_arm), name="clap_source")
    target = make_template(TemplateParams(arm_length=target_arm), name="clap_target")
    theta = clap_angle(source)
    rest = clap_pose(source, 0.0)
    clap = clap_pose(source, theta)
    mid = n_frames // 2
    anim = keyframe_animation(
        source.skeleton, [(0, rest), (mid, clap), (n_frames - 1, clap)], n_frames, fps
    )
    mapping = BoneMapping.by_name(source.skeleton, target.skeleton)
    return source, target, mapping, anim


def identity_fixture(
    n_frames: int = 30, fps: float = 30.0, bob: float = 0.0
) -> tuple[Character, BoneMapping, Animation]:
    """Self-transfer scene whose naive copy already sits at the optimum.

    The character holds its rest pose and glides at constant velocity, so
    every key-vertex trajectory is linear in time and the copied result has
    zero jerk, zero regularization, and matching descriptors. A nonzero
    ``bob`` blends a short vertical wobble into the middle of the glide;
    smoothing it away is then the only available improvement.
    """
    char = make_template(TemplateParams(), name="glider")
    skel = char.skeleton
    root = int(np.argmin(skel.parents))
    t = np.arange(n_frames, dtype=float)
    roots = np.tile(skel.tpose_positions[root], (n_frames, 1)).astype(float)
    roots[:, 0] += (0.4 / fps) * t
    if bob:
        u = (t - 0.5 * n_frames) / 3.0
        roots[:, 1] += bob * np.exp(-0.5 * u * u)
    rots = np.zeros((n_frames, skel.n_bones, 4))
    rots[:, :, 0] = 1.0
    anim = Animation(fps, roots, rots)
    return char, BoneMapping.identity(skel), anim


def _toe_touch_angles(char: Character) -> tuple[float, float, float]:
    """Grid-fit hinge and arm angles that put the palms just above the toes."""
    skel = char.skeleton
    pos = skel.tpose_positions
    kv = char.key_vertices
    verts = char.mesh.vertices

    pivot = pos[skel.index("pelvis")]
    sh = pos[skel.index("upperarm_l")]
    palm = verts[kv.indices[kv.labels.index("palm_l")]]
    reach = float(np.linalg.norm(palm - sh))
    toe = verts[kv.indices[kv.labels.index("toe_l")]]
    target = toe + np.array([0.0, 0.05, 0.0])
    off = sh - pivot

    def palm_error(beta, swing, pitch):
        cb, sb = np.cos(beta), np.sin(beta)
        shx = pivot[0] + off[0]
        shy = pivot[1] + off[1] * cb - off[2] * sb
        shz = pivot[2] + off[1] * sb + off[2] * cb
        # arm direction in the hinged body frame, then through the hinge
        dx = np.cos(pitch) * np.cos(swing)
        dy = -np.cos(pitch) * np.sin(swing)
        dz = -np.sin(pitch)
        wy = dy * cb - dz * sb
        wz = dy * sb + dz * cb
        return (
            (shx + reach * dx - target[0]) ** 2
            + (shy + reach * wy - target[1]) ** 2
            + (shz + reach * wz - target[2]) ** 2
        )

    beta = np.deg2rad(np.arange(30.0, 126.0, 2.0))
    swing = np.deg2rad(np.arange(20.0, 161.0, 2.0))
    pitch = np.deg2rad(np.arange(-89.0, 90.0, 2.0))
    grids = np.meshgrid(beta, swing, pitch, indexing="ij")
    err = palm_error(*grids)
    at = np.unravel_index(int(np.argmin(err)), err.shape)
    coarse = [float(g[at]) for g in grids]
    fine = np.deg2rad(np.arange(-2.0, 2.01, 0.25))
    grids = np.meshgrid(*[c + fine for c in coarse], indexing="ij")
    err = palm_error(*grids)
    at = np.unravel_index(int(np.argmin(err)), err.shape)
    return tuple(float(g[at]) for g in grids)


def bend_reach_pose(char: Character, bend: float, swing: float, pitch: float) -> Pose:
    """Hip-hinge forward by ``bend`` with both arms reaching down the legs."""
    skel = char.skeleton
    pose = Pose.rest(skel.n_bones)
    ax_x, ax_y, ax_z = np.eye(3)
    pose.rotations[skel.index("pelvis")] = quat.from_axis_angle(ax_x, bend)
    counter = quat.from_axis_angle(ax_x, -bend)
    pose.rotations[skel.index("thigh_l")] = counter
    pose.rotations[skel.index("thigh_r")] = counter.copy()
    pose.rotations[skel.index("upperarm_l")] = quat.mul(
        quat.from_axis_angle(ax_z, -swing), quat.from_axis_angle(ax_y, pitch)
    )
    pose.rotations[skel.index("upperarm_r")] = quat.mul(
        quat.from_axis_angle(ax_z, swing), quat.from_axis_angle(ax_y, -pitch)
    )
    root = int(np.argmin(skel.parents))
    pose.root_position = skel.tpose_positions[root].copy()
    return pose


def belly_fixture(
    n_frames: int = 12, fps: float = 30.0
) -> tuple[Character, Character, BoneMapping, Animation]:
    """Toe-touch pose onto a big-bellied, short-armed target.

    The source hinges at the hips and reaches its palms down to its toes
    with a flat stomach.  On the target the same bend drives the belly
    into the legs while the shorter arms fall well short of the feet, so
    the pair-distance and penetration terms pull the torso in opposite
    directions.
    """
    source = make_template(TemplateParams(arm_length=1.0), name="reach_source")
    target = make_template(
        TemplateParams(arm_length=0.55, belly_depth=0.30), name="reach_target"
    )
    pose = bend_reach_pose(source, *_toe_touch_angles(source))
    anim = keyframe_animation(source.skeleton, [(0, pose)], n_frames, fps)
    mapping = BoneMapping.by_name(source.skeleton, target.skeleton)
    return source, target, mapping, anim


def step_fixture(
    n_frames: int = 10, fps: float = 10.0, step_height: float = 0.2
) -> tuple[Character, BoneMapping, Animation, HeightField]:
    """Standing clip placed on the raised side of a terrain step.

    The source stood on flat ground; the returned heightfield raises the
    ground under the character by ``step_height``, so the optimized result
    must lift the feet back onto the terrain surface.
    """
    char = make_template(TemplateParams(), name="stepper")
    pose = Pose.rest(char.skeleton.n_bones)
    root = int(np.argmin(char.skeleton.parents))
    pose.root_position = char.skeleton.tpose_positions[root].copy()
    anim = keyframe_animation(char.skeleton, [(0, pose)], n_frames, fps)
    # grid spans x, z in [-4, 4]; the plateau starts well left of the feet
    n = 17
    xs = np.linspace(-4.0, 4.0, n)
    heights = np.zeros((n, n))
    for col, x in enumerate(xs):
        if x < -1.0:
            heights[:, col] = 0.0
        elif x > -0.5:
            heights[:, col] = step_height
        else:
            heights[:, col] = step_height * (x + 1.0) / 0.5
    hf = HeightField(origin=np.array([-4.0, -4.0]), spacing=0.5, heights=heights)
    mapping = BoneMapping.identity(char.skeleton)
    return char, mapping, anim, hf
