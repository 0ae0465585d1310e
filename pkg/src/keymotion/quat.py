"""Unit quaternion helpers on numpy arrays.

Quaternions are stored as ``[w, x, y, z]`` and functions broadcast over
leading dimensions. Rotations act on column vectors: ``rotate(q, v)`` equals
``to_matrix(q) @ v``.
"""
from __future__ import annotations

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def normalize(q: np.ndarray) -> np.ndarray:
    """Rescale to unit norm. Raises on zero quaternions."""
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("cannot normalize zero quaternion")
    return q / n


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b (apply b's rotation first, then a's)."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def conj(q: np.ndarray) -> np.ndarray:
    return np.asarray(q) * np.array([1.0, -1.0, -1.0, -1.0])


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) v by quaternion(s) q."""
    q = np.asarray(q)
    v = np.asarray(v)
    qv = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def to_matrix(q: np.ndarray) -> np.ndarray:
    """Unit quaternion to 3x3 rotation matrix (batched)."""
    w, x, y, z = np.moveaxis(np.asarray(q), -1, 0)
    row0 = np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1)
    row1 = np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1)
    row2 = np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def from_matrix(m: np.ndarray) -> np.ndarray:
    """3x3 rotation matrix to unit quaternion, w >= 0. Shepperd's method."""
    m = np.asarray(m)
    if m.shape[-2:] != (3, 3):
        raise ValueError("expected trailing 3x3 shape")
    batch = m.shape[:-2]
    m = m.reshape((-1, 3, 3))
    out = np.empty((m.shape[0], 4))
    for k in range(m.shape[0]):
        r = m[k]
        tr = np.trace(r)
        if tr > 0:
            s = np.sqrt(tr + 1.0) * 2.0
            q = np.array(
                [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
            )
        elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
            s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
            q = np.array(
                [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
            )
        elif r[1, 1] >= r[2, 2]:
            s = np.sqrt(1.0 - r[0, 0] + r[1, 1] - r[2, 2]) * 2.0
            q = np.array(
                [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 - r[0, 0] - r[1, 1] + r[2, 2]) * 2.0
            q = np.array(
                [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
            )
        if q[0] < 0:
            q = -q
        out[k] = q / np.linalg.norm(q)
    return out.reshape(batch + (4,))


def from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def from_rotvec(v: np.ndarray) -> np.ndarray:
    """Axis-angle 3-vector (angle = norm) to quaternion, batched."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sin(angle/2)/angle, series for small angles
    small = angle < 1e-8
    sinc = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / np.where(small, 1.0, angle))
    return np.concatenate([np.cos(half), sinc * v], axis=-1)


def to_rotvec(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    w = np.clip(q[..., :1], -1.0, 1.0)
    sign = np.where(w < 0, -1.0, 1.0)
    w = w * sign
    xyz = q[..., 1:] * sign
    s = np.linalg.norm(xyz, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, w)
    scale = np.where(s < 1e-12, 2.0, angle / np.where(s < 1e-12, 1.0, s))
    return scale * xyz


def slerp(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    """Spherical interpolation from a to b, shortest arc."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dot = float(np.sum(a * b))
    if dot < 0:
        b = -b
        dot = -dot
    dot = min(dot, 1.0)
    if dot > 1.0 - 1e-12:
        out = a + t * (b - a)
        return out / np.linalg.norm(out)
    theta = np.arccos(dot)
    s = np.sin(theta)
    return (np.sin((1.0 - t) * theta) * a + np.sin(t * theta) * b) / s


def between(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Minimal rotation taking direction u to direction v."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    un = u / np.linalg.norm(u)
    vn = v / np.linalg.norm(v)
    c = float(np.dot(un, vn))
    if c > 1.0 - 1e-14:
        return IDENTITY.copy()
    if c < -1.0 + 1e-14:
        # antiparallel: pick any axis orthogonal to u
        axis = np.cross(un, np.array([1.0, 0.0, 0.0]))
        if np.linalg.norm(axis) < 1e-8:
            axis = np.cross(un, np.array([0.0, 1.0, 0.0]))
        return from_axis_angle(axis, np.pi)
    axis = np.cross(un, vn)
    q = np.concatenate([[1.0 + c], axis])
    return q / np.linalg.norm(q)


def angle_of(q: np.ndarray) -> float:
    """Absolute rotation angle of a unit quaternion, in [0, pi]."""
    w = abs(float(np.clip(q[..., 0], -1.0, 1.0)))
    return 2.0 * float(np.arccos(min(w, 1.0)))
