"""Procedural humanoid template with labeled key-vertices.

The template is the canonical character all key-vertex sets originate
from: a ~2500-vertex tube-based humanoid standing in T-pose (up = +Y,
facing +Z, left side at +X), with 41 labeled key-vertices (or 96 in the
extended variant) tagged by limb. Proportions are parametric so tests
can derive stockier, longer-armed, or pot-bellied variants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quat
from .types import Character, KeyVertexSet, SkinnedMesh, Skeleton

UP = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class TemplateParams:
    """Proportion knobs for the procedural humanoid (meters, pre-scale)."""

    height: float = 1.0  # global uniform scale
    arm_length: float = 1.0
    leg_length: float = 1.0
    torso_width: float = 1.0
    belly_depth: float = 0.0  # forward bulge of the abdomen
    resolution: float = 1.0  # tessellation multiplier


class _Builder:
    def __init__(self):
        self.verts: list[np.ndarray] = []
        self.faces: list[tuple[int, int, int]] = []
        self.weights: list[dict[int, float]] = []
        self.vert_limb: list[str] = []

    def add_tube(
        self,
        start,
        end,
        u,
        v,
        profile,
        n_rings,
        n_sides,
        bone_ranges,
        limb,
        blend=0.05,
        offsets=None,
    ):
        """Straight capped tube with per-station radii and smooth skinning.

        profile(t) -> (ru, rv) radii along u and v at t in [0, 1];
        offsets(t) -> 3-vector center shift (belly bulge);
        bone_ranges: [(bone, t0, t1)] spans along the axis, blended over
        `blend` (as a fraction of tube length) at internal boundaries.
        """
        start, end = np.asarray(start, float), np.asarray(end, float)
        u, v = np.asarray(u, float), np.asarray(v, float)
        base = len(self.verts)
        ts = np.linspace(0.0, 1.0, n_rings)
        for t in ts:
            c = start + t * (end - start)
            if offsets is not None:
                c = c + offsets(t)
            ru, rv = profile(t)
            for k in range(n_sides):
                th = 2.0 * np.pi * k / n_sides
                self.verts.append(c + ru * np.cos(th) * u + rv * np.sin(th) * v)
                self.weights.append(self._skin(t, bone_ranges, blend))
                self.vert_limb.append(limb)
        for r in range(n_rings - 1):
            for k in range(n_sides):
                a = base + r * n_sides + k
                b = base + r * n_sides + (k + 1) % n_sides
                c2 = base + (r + 1) * n_sides + (k + 1) % n_sides
                d = base + (r + 1) * n_sides + k
                self.faces.append((a, b, c2))
                self.faces.append((a, c2, d))
        for t, ring0, flip in ((0.0, base, True), (1.0, base + (n_rings - 1) * n_sides, False)):
            c = start + t * (end - start)
            if offsets is not None:
                c = c + offsets(t)
            ci = len(self.verts)
            self.verts.append(c)
            self.weights.append(self._skin(t, bone_ranges, blend))
            self.vert_limb.append(limb)
            for k in range(n_sides):
                a = ring0 + k
                b = ring0 + (k + 1) % n_sides
                self.faces.append((ci, b, a) if flip else (ci, a, b))

    @staticmethod
    def _skin(t, bone_ranges, blend):
        w = {}
        for bone, t0, t1 in bone_ranges:
            lo = np.clip((t - (t0 - blend)) / (2 * blend), 0.0, 1.0)
            hi = np.clip(((t1 + blend) - t) / (2 * blend), 0.0, 1.0)
            val = float(lo * hi)
            if val > 0:
                w[bone] = val
        total = sum(w.values())
        if not w:  # numerical corner: snap to the nearest range
            bone = min(bone_ranges, key=lambda r: min(abs(t - r[1]), abs(t - r[2])))[0]
            return {bone: 1.0}
        return {b: val / total for b, val in w.items()}

    def mesh(self, n_bones) -> SkinnedMesh:
        verts = np.asarray(self.verts)
        faces = np.asarray(self.faces, dtype=np.int64)
        skin = np.zeros((len(verts), n_bones))
        for i, w in enumerate(self.weights):
            for b, val in w.items():
                skin[i, b] = val
        return SkinnedMesh(verts, faces, skin)


BONE_NAMES = [
    "pelvis", "spine", "chest", "neck", "head",
    "upperarm_l", "forearm_l", "hand_l",
    "upperarm_r", "forearm_r", "hand_r",
    "thigh_l", "shin_l", "foot_l",
    "thigh_r", "shin_r", "foot_r",
]
BONE_PARENTS = [-1, 0, 1, 2, 3, 2, 5, 6, 2, 8, 9, 0, 11, 12, 0, 14, 15]
BONE_LIMBS = {
    "pelvis": "torso", "spine": "torso", "chest": "torso", "neck": "torso",
    "head": "head",
    "upperarm_l": "arm_l", "forearm_l": "arm_l", "hand_l": "hand_l",
    "upperarm_r": "arm_r", "forearm_r": "arm_r", "hand_r": "hand_r",
    "thigh_l": "leg_l", "shin_l": "leg_l", "foot_l": "foot_l",
    "thigh_r": "leg_r", "shin_r": "leg_r", "foot_r": "foot_r",
}


def _round(n, res):
    return max(3, int(round(n * res)))


def make_template(
    params: TemplateParams = TemplateParams(),
    n_key_vertices: int = 41,
    name: str = "template",
) -> Character:
    """Build the parametric humanoid character with labeled key-vertices."""
    if n_key_vertices not in (41, 96):
        raise ValueError("key-vertex count must be 41 or 96")
    p = params
    s = p.height

    # joint layout (pre-scale)
    ankle_y = 0.09
    knee_y = ankle_y + 0.43 * p.leg_length
    hip_y = knee_y + 0.40 * p.leg_length
    pelvis_y = hip_y + 0.03
    spine_y = pelvis_y + 0.15
    chest_y = pelvis_y + 0.30
    neck_y = pelvis_y + 0.51
    head_y = pelvis_y + 0.61
    head_top = pelvis_y + 0.81
    shoulder_y = pelvis_y + 0.47
    hip_x = 0.09 * p.torso_width
    shoulder_x = 0.17 * p.torso_width
    elbow_x = shoulder_x + 0.27 * p.arm_length
    wrist_x = shoulder_x + 0.51 * p.arm_length
    hand_tip_x = wrist_x + 0.18 * p.arm_length
    heel_z, toe_z = -0.06, 0.16

    joints = {
        "pelvis": (0, pelvis_y, 0), "spine": (0, spine_y, 0),
        "chest": (0, chest_y, 0), "neck": (0, neck_y, 0), "head": (0, head_y, 0),
        "upperarm_l": (shoulder_x, shoulder_y, 0), "forearm_l": (elbow_x, shoulder_y, 0),
        "hand_l": (wrist_x, shoulder_y, 0),
        "upperarm_r": (-shoulder_x, shoulder_y, 0), "forearm_r": (-elbow_x, shoulder_y, 0),
        "hand_r": (-wrist_x, shoulder_y, 0),
        "thigh_l": (hip_x, hip_y, 0), "shin_l": (hip_x, knee_y, 0),
        "foot_l": (hip_x, ankle_y, 0),
        "thigh_r": (-hip_x, hip_y, 0), "shin_r": (-hip_x, knee_y, 0),
        "foot_r": (-hip_x, ankle_y, 0),
    }
    positions = s * np.array([joints[n] for n in BONE_NAMES])
    skeleton = Skeleton(
        names=list(BONE_NAMES),
        parents=np.array(BONE_PARENTS),
        tpose_rotations=np.tile(quat.IDENTITY, (len(BONE_NAMES), 1)),
        tpose_positions=positions,
        up_axis=UP.copy(),
    )
    bone = {n: i for i, n in enumerate(BONE_NAMES)}

    b = _Builder()
    res = p.resolution
    tw = p.torso_width

    # torso: crotch to neck top, belly bulge pushes ring centers forward
    crotch_y, torso_top = pelvis_y - 0.13, neck_y + 0.03
    torso_len = torso_top - crotch_y

    def torso_profile(t):
        y = crotch_y + t * torso_len
        base_r = 0.13 - 0.035 * np.sin(np.pi * np.clip((y - pelvis_y) / 0.51, 0, 1)) * 0.4
        if y > neck_y - 0.04:  # neck taper
            base_r = 0.055
        bulge = p.belly_depth * np.exp(-(((y - (pelvis_y + 0.10)) / 0.10) ** 2))
        return (base_r + bulge) * 1.0, base_r * 1.35 * tw

    def torso_offset(t):
        y = crotch_y + t * torso_len
        bulge = p.belly_depth * np.exp(-(((y - (pelvis_y + 0.10)) / 0.10) ** 2))
        return np.array([0.0, 0.0, 0.6 * bulge])

    def span(y0, y1):
        return (y0 - crotch_y) / torso_len, (y1 - crotch_y) / torso_len

    torso_ranges = [
        (bone["pelvis"], 0.0, span(spine_y, spine_y)[0]),
        (bone["spine"], span(spine_y, chest_y)[0], span(spine_y, chest_y)[1]),
        (bone["chest"], span(chest_y, neck_y)[0], span(chest_y, neck_y)[1]),
        (bone["neck"], span(neck_y, neck_y)[0], 1.0),
    ]
    b.add_tube(
        s * np.array([0, crotch_y, 0]), s * np.array([0, torso_top, 0]),
        np.array([0, 0, 1.0]), np.array([1.0, 0, 0]),
        lambda t: tuple(s * r for r in torso_profile(t)),
        _round(20, res), _round(28, res), torso_ranges, "torso",
        offsets=lambda t: s * torso_offset(t),
    )

    # head: ellipsoid-ish capsule from above the neck to the crown
    head_lo = neck_y + 0.05
    head_len = head_top - head_lo

    def head_profile(t):
        return (s * 0.085 * np.sin(np.clip(0.15 + 0.85 * t, 0, 1) * np.pi) + s * 0.015,) * 2

    b.add_tube(
        s * np.array([0, head_lo, 0]), s * np.array([0, head_top, 0]),
        np.array([0, 0, 1.0]), np.array([1.0, 0, 0]),
        head_profile, _round(14, res), _round(20, res),
        [(bone["head"], 0.0, 1.0)], "head",
    )

    # arms: shoulder to wrist, tapering; hands as flat paddles
    def arm_profile(t):
        return (s * (0.045 - 0.015 * t),) * 2

    for side, sign in (("l", 1.0), ("r", -1.0)):
        u = np.array([0, 1.0, 0])
        v = np.array([0, 0, sign])  # keeps (u, v, d) right-handed for d = sign*x
        elbow_t = (elbow_x - shoulder_x) / (wrist_x - shoulder_x)
        b.add_tube(
            s * np.array([sign * shoulder_x, shoulder_y, 0]),
            s * np.array([sign * wrist_x, shoulder_y, 0]),
            u, v, arm_profile, _round(14, res), _round(16, res),
            [(bone[f"upperarm_{side}"], 0.0, elbow_t),
             (bone[f"forearm_{side}"], elbow_t, 1.0)],
            f"arm_{side}",
        )
        b.add_tube(
            s * np.array([sign * wrist_x, shoulder_y, 0]),
            s * np.array([sign * hand_tip_x, shoulder_y, 0]),
            u, v,
            lambda t: (s * 0.018, s * 0.042),
            _round(7, res), _round(14, res),
            [(bone[f"hand_{side}"], 0.0, 1.0)], f"hand_{side}",
        )

    # legs: hip to ankle; feet as low forward boxes
    def leg_profile(t):
        return (s * (0.065 - 0.028 * t),) * 2

    for side, sign in (("l", 1.0), ("r", -1.0)):
        knee_t = (hip_y - knee_y) / (hip_y - ankle_y)
        b.add_tube(
            s * np.array([sign * hip_x, hip_y, 0]),
            s * np.array([sign * hip_x, ankle_y, 0]),
            np.array([0, 0, 1.0]), np.array([sign * 1.0, 0, 0]),
            leg_profile, _round(16, res), _round(18, res),
            [(bone[f"thigh_{side}"], 0.0, knee_t),
             (bone[f"shin_{side}"], knee_t, 1.0)],
            f"leg_{side}",
        )
        b.add_tube(
            s * np.array([sign * hip_x, 0.045, heel_z]),
            s * np.array([sign * hip_x, 0.045, toe_z]),
            np.array([sign * 1.0, 0, 0]), np.array([0, 1.0, 0]),
            lambda t: (s * 0.045, s * 0.040),
            _round(8, res), _round(16, res),
            [(bone[f"foot_{side}"], 0.0, 1.0)], f"foot_{side}",
        )

    mesh = b.mesh(len(BONE_NAMES))

    key_vertices = _place_key_vertices(
        b, mesh, n_key_vertices, s, p,
        dict(
            pelvis_y=pelvis_y, spine_y=spine_y, chest_y=chest_y, neck_y=neck_y,
            head_y=head_y, head_top=head_top, shoulder_y=shoulder_y,
            hip_x=hip_x, shoulder_x=shoulder_x, elbow_x=elbow_x, wrist_x=wrist_x,
            hand_tip_x=hand_tip_x, hip_y=hip_y, knee_y=knee_y, ankle_y=ankle_y,
            heel_z=heel_z, toe_z=toe_z,
        ),
    )
    return Character(
        name=name,
        skeleton=skeleton,
        mesh=mesh,
        limbs=dict(BONE_LIMBS),
        key_vertices=key_vertices,
    )


def _place_key_vertices(builder, mesh, n, s, params, g) -> KeyVertexSet:
    belly = params.belly_depth
    spots = [
        # head
        ("head_top", "head", (0, g["head_top"], 0)),
        ("eyes", "head", (0, g["head_y"] + 0.10, 0.09)),
        ("chin", "head", (0, g["head_y"], 0.08)),
        ("ear_l", "head", (0.09, g["head_y"] + 0.06, 0)),
        ("ear_r", "head", (-0.09, g["head_y"] + 0.06, 0)),
        # torso
        ("neck_front", "torso", (0, g["neck_y"], 0.07)),
        ("chest_front", "torso", (0, g["chest_y"] + 0.06, 0.13)),
        ("chest_back", "torso", (0, g["chest_y"] + 0.06, -0.13)),
        ("belly_front", "torso", (0, g["pelvis_y"] + 0.10, 0.13 + 1.6 * belly)),
        ("hips_front", "torso", (0, g["pelvis_y"] - 0.06, 0.12)),
        ("hips_back", "torso", (0, g["pelvis_y"] - 0.06, -0.12)),
        ("waist_l", "torso", (0.17, g["spine_y"], 0)),
        ("waist_r", "torso", (-0.17, g["spine_y"], 0)),
        ("shoulder_back_l", "torso", (0.13, g["shoulder_y"] + 0.02, -0.11)),
        ("shoulder_back_r", "torso", (-0.13, g["shoulder_y"] + 0.02, -0.11)),
    ]
    for side, sign in (("l", 1.0), ("r", -1.0)):
        spots += [
            (f"shoulder_{side}", f"arm_{side}", (sign * (g["shoulder_x"] + 0.02), g["shoulder_y"] + 0.05, 0)),
            (f"elbow_{side}", f"arm_{side}", (sign * g["elbow_x"], g["shoulder_y"], -0.05)),
            (f"forearm_{side}", f"arm_{side}", (sign * (g["elbow_x"] + 0.12), g["shoulder_y"], 0.04)),
            (f"wrist_{side}", f"arm_{side}", (sign * (g["wrist_x"] - 0.01), g["shoulder_y"] - 0.04, 0)),
            (f"palm_{side}", f"hand_{side}", (sign * (g["wrist_x"] + 0.09), g["shoulder_y"] - 0.02, 0)),
            (f"hand_tip_{side}", f"hand_{side}", (sign * g["hand_tip_x"], g["shoulder_y"], 0)),
            (f"knee_{side}", f"leg_{side}", (sign * g["hip_x"], g["knee_y"], 0.06)),
            (f"knee_back_{side}", f"leg_{side}", (sign * g["hip_x"], g["knee_y"], -0.06)),
            (f"thigh_in_{side}", f"leg_{side}", (sign * (g["hip_x"] - 0.07), (g["hip_y"] + g["knee_y"]) / 2, 0)),
            (f"ankle_{side}", f"leg_{side}", (sign * (g["hip_x"] + 0.05), g["ankle_y"], 0)),
            (f"heel_{side}", f"foot_{side}", (sign * g["hip_x"], 0.02, g["heel_z"])),
            (f"toe_{side}", f"foot_{side}", (sign * g["hip_x"], 0.02, g["toe_z"])),
            (f"foot_out_{side}", f"foot_{side}", (sign * (g["hip_x"] + 0.05), 0.045, 0.05)),
        ]
    if n == 96:
        spots += _extended_spots(g, belly)

    labels, limbs, indices = [], [], []
    verts = mesh.vertices
    limb_of = np.array(builder.vert_limb)
    taken = set()
    for label, limb, pos in spots:
        cand = np.flatnonzero(limb_of == limb)
        d = np.linalg.norm(verts[cand] - s * np.asarray(pos, float), axis=1)
        for j in np.argsort(d):
            idx = int(cand[j])
            if idx not in taken:
                taken.add(idx)
                break
        labels.append(label)
        limbs.append(limb)
        indices.append(idx)
    return KeyVertexSet(labels, np.array(indices), limbs)


def _extended_spots(g, belly):
    """55 extra sampling points for the dense 96-vertex variant."""
    out = []
    torso_r = 0.13
    for tag, y in (("low", g["pelvis_y"]), ("mid", g["spine_y"] + 0.05), ("up", g["chest_y"] + 0.10)):
        out += [
            (f"torso_{tag}_f", "torso", (0, y, torso_r + (1.6 * belly if tag == "low" else 0))),
            (f"torso_{tag}_b", "torso", (0, y, -torso_r)),
            (f"torso_{tag}_l", "torso", (0.16, y, 0)),
            (f"torso_{tag}_r", "torso", (-0.16, y, 0)),
        ]
    out.append(("sternum", "torso", (0, g["chest_y"], 0.13)))
    for tag, yv, zv in (
        ("head_f", g["head_y"] + 0.04, 0.09), ("head_b", g["head_y"] + 0.04, -0.09),
        ("brow", g["head_y"] + 0.14, 0.08), ("nape", g["neck_y"] + 0.10, -0.07),
        ("head_l", g["head_y"], 0.0), ("head_r", g["head_y"], 0.0),
    ):
        x = 0.09 if tag == "head_l" else (-0.09 if tag == "head_r" else 0.0)
        out.append((tag, "head", (x, yv, zv)))
    for side, sign in (("l", 1.0), ("r", -1.0)):
        ua_mid = (g["shoulder_x"] + g["elbow_x"]) / 2
        fa_mid = (g["elbow_x"] + g["wrist_x"]) / 2
        out += [
            (f"upperarm_top_{side}", f"arm_{side}", (sign * ua_mid, g["shoulder_y"] + 0.05, 0)),
            (f"upperarm_bot_{side}", f"arm_{side}", (sign * ua_mid, g["shoulder_y"] - 0.05, 0)),
            (f"upperarm_back_{side}", f"arm_{side}", (sign * ua_mid, g["shoulder_y"], -0.05)),
            (f"forearm_top_{side}", f"arm_{side}", (sign * fa_mid, g["shoulder_y"] + 0.04, 0)),
            (f"forearm_bot_{side}", f"arm_{side}", (sign * fa_mid, g["shoulder_y"] - 0.04, 0)),
            (f"forearm_back_{side}", f"arm_{side}", (sign * fa_mid, g["shoulder_y"], -0.04)),
            (f"knuckle_{side}", f"hand_{side}", (sign * (g["wrist_x"] + 0.12), g["shoulder_y"] + 0.02, 0)),
            (f"hand_edge_{side}", f"hand_{side}", (sign * (g["wrist_x"] + 0.10), g["shoulder_y"], 0.04)),
            (f"thigh_f_{side}", f"leg_{side}", (sign * g["hip_x"], (g["hip_y"] + g["knee_y"]) / 2, 0.06)),
            (f"thigh_b_{side}", f"leg_{side}", (sign * g["hip_x"], (g["hip_y"] + g["knee_y"]) / 2, -0.06)),
            (f"thigh_out_{side}", f"leg_{side}", (sign * (g["hip_x"] + 0.06), (g["hip_y"] + g["knee_y"]) / 2, 0)),
            (f"shin_f_{side}", f"leg_{side}", (sign * g["hip_x"], (g["knee_y"] + g["ankle_y"]) / 2, 0.05)),
            (f"shin_b_{side}", f"leg_{side}", (sign * g["hip_x"], (g["knee_y"] + g["ankle_y"]) / 2, -0.05)),
            (f"calf_out_{side}", f"leg_{side}", (sign * (g["hip_x"] + 0.05), (g["knee_y"] + g["ankle_y"]) / 2, 0)),
            (f"shin_in_{side}", f"leg_{side}", (sign * (g["hip_x"] - 0.05), (g["knee_y"] + g["ankle_y"]) / 2, 0)),
            (f"toe_top_{side}", f"foot_{side}", (sign * g["hip_x"], 0.08, g["toe_z"] - 0.03)),
            (f"foot_in_{side}", f"foot_{side}", (sign * (g["hip_x"] - 0.05), 0.045, 0.05)),
            (f"ankle_back_{side}", f"foot_{side}", (sign * g["hip_x"], 0.06, g["heel_z"] + 0.01)),
        ]
    return out


def template_character(n: int = 41, name: str = "template") -> Character:
    """The shipped default-proportion template."""
    return make_template(TemplateParams(), n_key_vertices=n, name=name)
