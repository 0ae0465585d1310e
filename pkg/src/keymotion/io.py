"""JSON serialization for characters, animations, mappings, and terrain.

Loaders raise :class:`ValidationError` with a JSON-path locator for the
offending field; they never partially construct objects.

Character document:
    {"name": str,
     "skeleton": {"bones": [{"name", "parent", "rotation" [w,x,y,z], "position" [x,y,z]}]},
     "mesh": {"vertices": [[x,y,z]], "faces": [[i,j,k]],
              "skin": [{"bones": [..], "weights": [..]}]},
     "limbs": {bone_name: limb_tag},
     "key_vertices": {"labels": [..], "indices": [..], "limbs": [..]}}   # optional

Animation document:
    {"fps": float, "root_positions": [[x,y,z]], "rotations": [[[w,x,y,z]]]}

Bone mapping document:
    {"pairs": [[source_bone_name, target_bone_name], ...]}

Heightfield document:
    {"origin": [x, z], "spacing": float, "heights": [[...], ...]}
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from .types import (
    Animation,
    BoneMapping,
    Character,
    HeightField,
    KeyVertexSet,
    Skeleton,
    SkinnedMesh,
    ValidationError,
)

PathLike = Union[str, Path]


def _load_doc(source: Union[PathLike, dict]) -> dict:
    if isinstance(source, dict):
        return source
    p = Path(source)
    try:
        text = p.read_text()
    except OSError as e:
        raise ValidationError(f"cannot read {p}: {e.strerror}", "$") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"invalid JSON: {e.msg} at line {e.lineno}", "$") from e
    if not isinstance(doc, dict):
        raise ValidationError("top-level value must be an object", "$")
    return doc


def _get(doc: dict, key: str, path: str, kind: Optional[type] = None) -> Any:
    if key not in doc:
        raise ValidationError(f"missing required field {key!r}", path)
    val = doc[key]
    if kind is not None and not isinstance(val, kind):
        raise ValidationError(f"field {key!r} has wrong type {type(val).__name__}", f"{path}.{key}")
    return val


def _array(value: Any, path: str, shape_hint: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(f"expected numeric array {shape_hint}", path) from None
    return arr


def load_skeleton(doc: dict, path: str = "$.skeleton") -> Skeleton:
    bones = _get(doc, "bones", path, list)
    if not bones:
        raise ValidationError("skeleton has no bones", f"{path}.bones")
    up = _array(doc.get("up_axis", [0.0, 0.0, 1.0]), f"{path}.up_axis", "[x,y,z]")
    names, parents, rots, poss = [], [], [], []
    for i, b in enumerate(bones):
        bp = f"{path}.bones[{i}]"
        if not isinstance(b, dict):
            raise ValidationError("bone must be an object", bp)
        names.append(_get(b, "name", bp, str))
        parents.append(int(_get(b, "parent", bp)))
        rots.append(_array(_get(b, "rotation", bp), f"{bp}.rotation", "[w,x,y,z]"))
        poss.append(_array(_get(b, "position", bp), f"{bp}.position", "[x,y,z]"))
        if rots[-1].shape != (4,):
            raise ValidationError("rotation must have 4 components", f"{bp}.rotation")
        if poss[-1].shape != (3,):
            raise ValidationError("position must have 3 components", f"{bp}.position")
    return Skeleton(names, np.array(parents), np.stack(rots), np.stack(poss), up)


def load_mesh(doc: dict, n_bones: int, path: str = "$.mesh") -> SkinnedMesh:
    verts = _array(_get(doc, "vertices", path), f"{path}.vertices", "(V,3)")
    faces_raw = _get(doc, "faces", path, list)
    faces = np.asarray(faces_raw, dtype=int) if faces_raw else np.zeros((0, 3), dtype=int)
    skin = _get(doc, "skin", path, list)
    if len(skin) != len(verts):
        raise ValidationError("skin entries != vertex count", f"{path}.skin")
    dense = np.zeros((len(verts), n_bones))
    for i, entry in enumerate(skin):
        sp = f"{path}.skin[{i}]"
        if not isinstance(entry, dict):
            raise ValidationError("skin entry must be an object", sp)
        bs = _get(entry, "bones", sp, list)
        ws = _get(entry, "weights", sp, list)
        if len(bs) != len(ws):
            raise ValidationError("bones/weights length mismatch", sp)
        for b, w in zip(bs, ws):
            if not 0 <= int(b) < n_bones:
                raise ValidationError(f"bone index {b} out of range", f"{sp}.bones")
            dense[i, int(b)] += float(w)
    return SkinnedMesh(verts, faces, dense)


def load_key_vertices(doc: dict, n_vertices: int, path: str = "$.key_vertices") -> KeyVertexSet:
    labels = _get(doc, "labels", path, list)
    indices = np.asarray(_get(doc, "indices", path, list), dtype=int)
    limbs = _get(doc, "limbs", path, list)
    if indices.size and (indices.min() < 0 or indices.max() >= n_vertices):
        raise ValidationError("key-vertex index out of range", f"{path}.indices")
    return KeyVertexSet(list(labels), indices, list(limbs))


def load_character(source: Union[PathLike, dict]) -> Character:
    doc = _load_doc(source)
    name = str(doc.get("name", "unnamed"))
    skeleton = load_skeleton(_get(doc, "skeleton", "$", dict))
    mesh = load_mesh(_get(doc, "mesh", "$", dict), skeleton.n_bones)
    limbs_raw = _get(doc, "limbs", "$", dict)
    limbs = {str(k): str(v) for k, v in limbs_raw.items()}
    kv = None
    if doc.get("key_vertices") is not None:
        kv = load_key_vertices(doc["key_vertices"], mesh.n_vertices)
    overrides = None
    if doc.get("key_vertex_overrides") is not None:
        raw = _get(doc, "key_vertex_overrides", "$", dict)
        overrides = {str(k): int(v) for k, v in raw.items()}
    return Character(name, skeleton, mesh, limbs, kv, overrides)


def save_character(ch: Character, path: PathLike) -> None:
    bones = [
        {
            "name": ch.skeleton.names[i],
            "parent": int(ch.skeleton.parents[i]),
            "rotation": ch.skeleton.tpose_rotations[i].tolist(),
            "position": ch.skeleton.tpose_positions[i].tolist(),
        }
        for i in range(ch.skeleton.n_bones)
    ]
    skin = []
    for row in ch.mesh.skin_weights:
        nz = np.flatnonzero(row > 1e-12)
        skin.append({"bones": nz.tolist(), "weights": row[nz].tolist()})
    doc: dict[str, Any] = {
        "name": ch.name,
        "skeleton": {"bones": bones, "up_axis": ch.skeleton.up_axis.tolist()},
        "mesh": {
            "vertices": ch.mesh.vertices.tolist(),
            "faces": ch.mesh.faces.tolist(),
            "skin": skin,
        },
        "limbs": ch.limbs,
    }
    if ch.key_vertices is not None:
        doc["key_vertices"] = {
            "labels": ch.key_vertices.labels,
            "indices": ch.key_vertices.indices.tolist(),
            "limbs": ch.key_vertices.limbs,
        }
    if ch.key_vertex_overrides:
        doc["key_vertex_overrides"] = {
            k: int(v) for k, v in ch.key_vertex_overrides.items()
        }
    Path(path).write_text(json.dumps(doc))


def load_animation(source: Union[PathLike, dict]) -> Animation:
    doc = _load_doc(source)
    fps = float(_get(doc, "fps", "$"))
    roots = _array(_get(doc, "root_positions", "$"), "$.root_positions", "(T,3)")
    rots = _array(_get(doc, "rotations", "$"), "$.rotations", "(T,B,4)")
    return Animation(fps, roots, rots)


def save_animation(anim: Animation, path: PathLike) -> None:
    Path(path).write_text(json.dumps(animation_to_doc(anim)))


def animation_to_doc(anim: Animation) -> dict:
    return {
        "fps": anim.fps,
        "root_positions": anim.root_positions.tolist(),
        "rotations": anim.rotations.tolist(),
    }


def load_mapping(
    source: Union[PathLike, dict], source_skel: Skeleton, target_skel: Skeleton
) -> BoneMapping:
    doc = _load_doc(source)
    pairs_raw = _get(doc, "pairs", "$", list)
    pairs = []
    for i, pair in enumerate(pairs_raw):
        pp = f"$.pairs[{i}]"
        if not (isinstance(pair, (list, tuple)) and len(pair) == 2):
            raise ValidationError("pair must be [source_bone, target_bone]", pp)
        sname, tname = pair
        try:
            si = source_skel.index(str(sname))
        except ValidationError:
            raise ValidationError(f"unknown source bone {sname!r}", pp) from None
        try:
            ti = target_skel.index(str(tname))
        except ValidationError:
            raise ValidationError(f"unknown target bone {tname!r}", pp) from None
        pairs.append((si, ti))
    mapping = BoneMapping(pairs)
    mapping.validate_roots(source_skel, target_skel)
    return mapping


def save_mapping(
    mapping: BoneMapping, source_skel: Skeleton, target_skel: Skeleton, path: PathLike
) -> None:
    pairs = [[source_skel.names[a], target_skel.names[b]] for a, b in mapping.pairs]
    Path(path).write_text(json.dumps({"pairs": pairs}))


def load_heightfield(source: Union[PathLike, dict]) -> HeightField:
    doc = _load_doc(source)
    origin = _array(_get(doc, "origin", "$"), "$.origin", "[x,z]")
    spacing = float(_get(doc, "spacing", "$"))
    heights = _array(_get(doc, "heights", "$"), "$.heights", "(H,W)")
    return HeightField(origin, spacing, heights)


def save_heightfield(hf: HeightField, path: PathLike) -> None:
    Path(path).write_text(
        json.dumps(
            {"origin": hf.origin.tolist(), "spacing": hf.spacing, "heights": hf.heights.tolist()}
        )
    )
