"""Core data types: skeletons, poses, animations, skinned meshes, mappings.

Conventions used throughout the package:
  * quaternions are ``[w, x, y, z]``, unit norm
  * each skeleton declares its up axis (default +Z); the ground plane is
    spanned by the two remaining coordinate axes
  * pose rotations are residuals relative to the T-pose, expressed in the
    bone's local frame and applied after the T-pose offset
  * world(bone) = world(parent) @ tpose_local_offset(bone) @ rot(residual)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import quat

DEFAULT_UP = np.array([0.0, 0.0, 1.0])


def ground_axes(up: np.ndarray) -> tuple[int, int]:
    """Indices of the two coordinate axes spanning the ground plane.

    Requires an axis-aligned up vector; raises otherwise.
    """
    up = np.asarray(up, dtype=float)
    axis = int(np.argmax(np.abs(up)))
    if abs(abs(up[axis]) - 1.0) > 1e-9 or np.abs(up).sum() - abs(up[axis]) > 1e-9:
        raise ValidationError("terrain requires an axis-aligned up vector", "$.skeleton.up_axis")
    return tuple(i for i in range(3) if i != axis)  # type: ignore[return-value]

LIMB_TAGS = (
    "torso",
    "head",
    "arm_l",
    "arm_r",
    "hand_l",
    "hand_r",
    "leg_l",
    "leg_r",
    "foot_l",
    "foot_r",
)

# Pairs of distinct limbs that are permanently adjacent; interactions between
# them carry no semantics, same as intra-limb pairs.
ADJACENT_LIMBS = (
    ("arm_l", "hand_l"),
    ("arm_r", "hand_r"),
    ("leg_l", "foot_l"),
    ("leg_r", "foot_r"),
)


class ValidationError(ValueError):
    """Raised when a document violates a schema or invariant.

    ``path`` is a JSON-path-ish locator for the offending field.
    """

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.reason = message


class UnsupportedTopologyError(ValidationError):
    """Raised when a skeleton/mapping combination cannot be retargeted."""


class NumericalError(ArithmeticError):
    """Raised when a solve produces non-finite values and cannot continue."""


@dataclass
class Skeleton:
    """Bone hierarchy with T-pose world transforms (unit scale)."""

    names: list[str]
    parents: np.ndarray  # (B,) int, -1 marks the root
    tpose_rotations: np.ndarray  # (B, 4) world-space unit quaternions
    tpose_positions: np.ndarray  # (B, 3) world-space joint positions
    up_axis: np.ndarray = field(default_factory=lambda: DEFAULT_UP.copy())

    def __post_init__(self) -> None:
        self.parents = np.asarray(self.parents, dtype=int)
        self.tpose_rotations = np.asarray(self.tpose_rotations, dtype=float)
        self.tpose_positions = np.asarray(self.tpose_positions, dtype=float)
        self.up_axis = np.asarray(self.up_axis, dtype=float)
        if self.up_axis.shape != (3,) or abs(np.linalg.norm(self.up_axis) - 1.0) > 1e-6:
            raise ValidationError("up_axis must be a unit 3-vector", "$.skeleton.up_axis")
        b = len(self.names)
        if self.parents.shape != (b,):
            raise ValidationError(f"parents shape {self.parents.shape} != ({b},)", "$.skeleton.bones")
        if self.tpose_rotations.shape != (b, 4):
            raise ValidationError("tpose rotation array malformed", "$.skeleton.bones")
        if self.tpose_positions.shape != (b, 3):
            raise ValidationError("tpose position array malformed", "$.skeleton.bones")
        if len(set(self.names)) != b:
            raise ValidationError("duplicate bone names", "$.skeleton.bones")
        roots = np.flatnonzero(self.parents < 0)
        if len(roots) != 1:
            raise ValidationError(f"expected exactly one root bone, found {len(roots)}", "$.skeleton.bones")
        for i, p in enumerate(self.parents):
            if p >= b:
                raise ValidationError(f"parent index {p} out of range", f"$.skeleton.bones[{i}].parent")
        norms = np.linalg.norm(self.tpose_rotations, axis=-1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-6)
        if bad.size:
            raise ValidationError(
                f"non-unit T-pose rotation (|q|={norms[bad[0]]:.8f})",
                f"$.skeleton.bones[{bad[0]}].rotation",
            )
        self._index = {n: i for i, n in enumerate(self.names)}

    @property
    def n_bones(self) -> int:
        return len(self.names)

    @property
    def root(self) -> int:
        return int(np.flatnonzero(self.parents < 0)[0])

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ValidationError(f"unknown bone {name!r}", "$.bones") from None

    def children(self, bone: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.parents == bone)]

    def local_offsets(self) -> tuple[np.ndarray, np.ndarray]:
        """T-pose offsets relative to the parent: (rotations (B,4), translations (B,3)).

        The root's offset is its world T-pose transform.
        """
        rot = np.empty_like(self.tpose_rotations)
        trans = np.empty_like(self.tpose_positions)
        for i in range(self.n_bones):
            p = self.parents[i]
            if p < 0:
                rot[i] = self.tpose_rotations[i]
                trans[i] = self.tpose_positions[i]
            else:
                pr_inv = quat.conj(self.tpose_rotations[p])
                rot[i] = quat.mul(pr_inv, self.tpose_rotations[i])
                trans[i] = quat.rotate(pr_inv, self.tpose_positions[i] - self.tpose_positions[p])
        return rot, trans


@dataclass
class Pose:
    """One frame: global root position plus per-bone local residual rotations."""

    root_position: np.ndarray  # (3,)
    rotations: np.ndarray  # (B, 4) unit quaternions, identity = T-pose

    def __post_init__(self) -> None:
        self.root_position = np.asarray(self.root_position, dtype=float)
        self.rotations = np.asarray(self.rotations, dtype=float)
        if self.root_position.shape != (3,):
            raise ValidationError("root position must be a 3-vector", "$.root_position")
        if self.rotations.ndim != 2 or self.rotations.shape[1] != 4:
            raise ValidationError("rotations must be (B, 4)", "$.rotations")
        norms = np.linalg.norm(self.rotations, axis=-1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-6)
        if bad.size:
            raise ValidationError(
                f"non-unit rotation (|q|={norms[bad[0]]:.8f})", f"$.rotations[{bad[0]}]"
            )

    @staticmethod
    def rest(n_bones: int) -> "Pose":
        rots = np.tile(quat.IDENTITY, (n_bones, 1))
        return Pose(np.zeros(3), rots)


@dataclass
class Animation:
    """Pose sequence sampled at a fixed frame rate."""

    fps: float
    root_positions: np.ndarray  # (T, 3)
    rotations: np.ndarray  # (T, B, 4)

    def __post_init__(self) -> None:
        self.root_positions = np.asarray(self.root_positions, dtype=float)
        self.rotations = np.asarray(self.rotations, dtype=float)
        if self.fps <= 0:
            raise ValidationError("fps must be positive", "$.fps")
        if self.root_positions.ndim != 2 or self.root_positions.shape[1] != 3:
            raise ValidationError("root_positions must be (T, 3)", "$.root_positions")
        if (
            self.rotations.ndim != 3
            or self.rotations.shape[0] != self.root_positions.shape[0]
            or self.rotations.shape[2] != 4
        ):
            raise ValidationError("rotations must be (T, B, 4) matching root_positions", "$.rotations")
        norms = np.linalg.norm(self.rotations, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            t, b = np.argwhere(np.abs(norms - 1.0) > 1e-6)[0]
            raise ValidationError("non-unit rotation", f"$.rotations[{t}][{b}]")

    @property
    def n_frames(self) -> int:
        return int(self.root_positions.shape[0])

    @property
    def n_bones(self) -> int:
        return int(self.rotations.shape[1])

    def pose(self, t: int) -> Pose:
        return Pose(self.root_positions[t].copy(), self.rotations[t].copy())

    @staticmethod
    def from_poses(poses: Sequence[Pose], fps: float) -> "Animation":
        return Animation(
            fps,
            np.stack([p.root_position for p in poses]),
            np.stack([p.rotations for p in poses]),
        )


@dataclass
class SkinnedMesh:
    """Triangle mesh bound to a skeleton by per-vertex bone weights."""

    vertices: np.ndarray  # (V, 3) T-pose positions
    faces: np.ndarray  # (F, 3) int
    skin_weights: np.ndarray  # (V, B) dense, rows sum to 1

    def __post_init__(self) -> None:
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.faces = np.asarray(self.faces, dtype=int)
        self.skin_weights = np.asarray(self.skin_weights, dtype=float)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValidationError("vertices must be (V, 3)", "$.mesh.vertices")
        if self.faces.size and (self.faces.ndim != 2 or self.faces.shape[1] != 3):
            raise ValidationError("faces must be (F, 3)", "$.mesh.faces")
        v = self.vertices.shape[0]
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= v):
            raise ValidationError("face index out of range", "$.mesh.faces")
        if self.skin_weights.shape[0] != v:
            raise ValidationError("skin weight rows != vertex count", "$.mesh.skin")
        if np.any(self.skin_weights < -1e-9):
            raise ValidationError("negative skin weight", "$.mesh.skin")
        sums = self.skin_weights.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > 1e-5)
        if bad.size:
            raise ValidationError(
                f"skin weights sum to {sums[bad[0]]:.6f}", f"$.mesh.skin[{bad[0]}]"
            )

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])


@dataclass
class BoneMapping:
    """Partial one-to-one correspondence between source and target bones."""

    pairs: list[tuple[int, int]]  # (source bone index, target bone index)

    def __post_init__(self) -> None:
        src = [a for a, _ in self.pairs]
        tgt = [b for _, b in self.pairs]
        if len(set(src)) != len(src):
            raise ValidationError("source bone mapped twice", "$.mapping.pairs")
        if len(set(tgt)) != len(tgt):
            raise ValidationError("target bone mapped twice", "$.mapping.pairs")

    def validate_roots(self, source: Skeleton, target: Skeleton) -> None:
        m = dict(self.pairs)
        if m.get(source.root) != target.root:
            raise ValidationError("root bones must map to each other", "$.mapping.pairs")

    def source_to_target(self) -> dict[int, int]:
        return dict(self.pairs)

    def target_to_source(self) -> dict[int, int]:
        return {b: a for a, b in self.pairs}

    @staticmethod
    def identity(skeleton: Skeleton) -> "BoneMapping":
        return BoneMapping([(i, i) for i in range(skeleton.n_bones)])

    @staticmethod
    def by_name(source: Skeleton, target: Skeleton) -> "BoneMapping":
        pairs = []
        for i, n in enumerate(source.names):
            if n in target._index:
                pairs.append((i, target.index(n)))
        return BoneMapping(pairs)


@dataclass
class KeyVertexSet:
    """Sparse labelled vertices that stand in for the full mesh surface."""

    labels: list[str]
    indices: np.ndarray  # (N,) vertex indices into the mesh
    limbs: list[str]  # limb tag per key vertex

    def __post_init__(self) -> None:
        self.indices = np.asarray(self.indices, dtype=int)
        n = len(self.labels)
        if self.indices.shape != (n,) or len(self.limbs) != n:
            raise ValidationError("labels/indices/limbs length mismatch", "$.key_vertices")
        if len(set(self.labels)) != n:
            raise ValidationError("duplicate key-vertex labels", "$.key_vertices.labels")
        for k, tag in enumerate(self.limbs):
            if tag not in LIMB_TAGS:
                raise ValidationError(f"unknown limb tag {tag!r}", f"$.key_vertices.limbs[{k}]")

    @property
    def n(self) -> int:
        return len(self.labels)

    def of_limb(self, tag: str) -> np.ndarray:
        return np.flatnonzero(np.array([t == tag for t in self.limbs]))


@dataclass
class HeightField:
    """Regular-grid terrain y = f(x, z), bilinearly interpolated, edge-clamped."""

    origin: np.ndarray  # (2,) x, z of heights[0][0]
    spacing: float
    heights: np.ndarray  # (H, W); rows advance along +z, columns along +x

    def __post_init__(self) -> None:
        self.origin = np.asarray(self.origin, dtype=float)
        self.heights = np.asarray(self.heights, dtype=float)
        if self.origin.shape != (2,):
            raise ValidationError("origin must be [x, z]", "$.terrain.origin")
        if self.spacing <= 0:
            raise ValidationError("spacing must be positive", "$.terrain.spacing")
        if self.heights.ndim != 2 or min(self.heights.shape) < 2:
            raise ValidationError("heights must be a 2D grid, at least 2x2", "$.terrain.heights")

    def sample(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Bilinear height lookup; queries outside the grid clamp to the edge."""
        gx = (np.asarray(x, dtype=float) - self.origin[0]) / self.spacing
        gz = (np.asarray(z, dtype=float) - self.origin[1]) / self.spacing
        h, w = self.heights.shape
        gx = np.clip(gx, 0.0, w - 1.0)
        gz = np.clip(gz, 0.0, h - 1.0)
        x0 = np.clip(np.floor(gx).astype(int), 0, w - 2)
        z0 = np.clip(np.floor(gz).astype(int), 0, h - 2)
        fx = gx - x0
        fz = gz - z0
        h00 = self.heights[z0, x0]
        h01 = self.heights[z0, x0 + 1]
        h10 = self.heights[z0 + 1, x0]
        h11 = self.heights[z0 + 1, x0 + 1]
        return (1 - fz) * ((1 - fx) * h00 + fx * h01) + fz * ((1 - fx) * h10 + fx * h11)


@dataclass
class GazeSpec:
    """Gaze origin (eye key vertices) and per-frame viewing direction.

    When ``directions`` is None the gaze falls back to the world-space
    ``forward`` axis of ``head_bone`` at each frame.
    """

    eye_indices: np.ndarray  # indices into the key-vertex set
    directions: Optional[np.ndarray] = None  # (T, 3) unit vectors
    head_bone: Optional[str] = None
    forward: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self) -> None:
        self.eye_indices = np.asarray(self.eye_indices, dtype=int)
        self.forward = np.asarray(self.forward, dtype=float)
        if self.directions is not None:
            self.directions = np.asarray(self.directions, dtype=float)
            norms = np.linalg.norm(self.directions, axis=-1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ValidationError("gaze directions must be unit vectors", "$.gaze.directions")
        elif self.head_bone is None:
            raise ValidationError("gaze needs directions or a head bone", "$.gaze")


@dataclass
class Character:
    """A skinned character: skeleton, mesh, limb assignment, key vertices."""

    name: str
    skeleton: Skeleton
    mesh: SkinnedMesh
    limbs: dict[str, str]  # bone name -> limb tag
    key_vertices: Optional[KeyVertexSet] = None
    key_vertex_overrides: Optional[dict[str, int]] = None  # label -> vertex index

    def __post_init__(self) -> None:
        for bone, tag in self.limbs.items():
            if bone not in self.skeleton._index:
                raise ValidationError(f"limb map names unknown bone {bone!r}", "$.limbs")
            if tag not in LIMB_TAGS:
                raise ValidationError(f"unknown limb tag {tag!r}", f"$.limbs.{bone}")
        if self.skeleton.n_bones != self.mesh.skin_weights.shape[1]:
            raise ValidationError("skin weight columns != bone count", "$.mesh.skin")
        for label, idx in (self.key_vertex_overrides or {}).items():
            if not 0 <= int(idx) < self.mesh.n_vertices:
                raise ValidationError(
                    f"override for {label!r} is out of range",
                    f"$.key_vertex_overrides.{label}",
                )

    def bone_limb_tags(self) -> list[str]:
        """Limb tag per bone index; bones missing from the map inherit the parent's tag."""
        tags: list[Optional[str]] = [self.limbs.get(n) for n in self.skeleton.names]
        from .kinematics import topological_sort  # local import to avoid a cycle

        for i in topological_sort(self.skeleton.parents):
            if tags[i] is None:
                p = self.skeleton.parents[i]
                if p < 0 or tags[p] is None:
                    raise ValidationError(
                        f"bone {self.skeleton.names[i]!r} has no limb tag", "$.limbs"
                    )
                tags[i] = tags[p]
        return tags  # type: ignore[return-value]


def character_height(ch: Character) -> float:
    """T-pose mesh extent along the skeleton's up axis."""
    heights = ch.mesh.vertices @ ch.skeleton.up_axis
    return float(heights.max() - heights.min())
