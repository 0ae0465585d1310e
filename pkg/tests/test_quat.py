import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from keymotion import quat


def rng_quat(rng, n=None):
    shape = (4,) if n is None else (n, 4)
    q = rng.normal(size=shape)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def test_mul_matches_matrix_composition():
    rng = np.random.default_rng(3)
    a, b = rng_quat(rng), rng_quat(rng)
    left = quat.to_matrix(quat.mul(a, b))
    right = quat.to_matrix(a) @ quat.to_matrix(b)
    np.testing.assert_allclose(left, right, atol=1e-12)


def test_rotate_matches_matrix():
    rng = np.random.default_rng(4)
    q = rng_quat(rng, 5)
    v = rng.normal(size=(5, 3))
    np.testing.assert_allclose(
        quat.rotate(q, v), np.einsum("nij,nj->ni", quat.to_matrix(q), v), atol=1e-12
    )


def test_axis_angle_quarter_turn():
    q = quat.from_axis_angle([0, 0, 1], np.pi / 2)
    np.testing.assert_allclose(quat.rotate(q, [1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_matrix_round_trip(seed):
    q = rng_quat(np.random.default_rng(seed))
    back = quat.from_matrix(quat.to_matrix(q))
    # q and -q encode the same rotation
    if np.dot(back, q) < 0:
        back = -back
    np.testing.assert_allclose(back, q, atol=1e-9)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_rotvec_round_trip(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=3)
    v = v / max(np.linalg.norm(v), 1.0) * rng.uniform(0, 3.0)  # angle < pi
    np.testing.assert_allclose(quat.to_rotvec(quat.from_rotvec(v)), v, atol=1e-9)


def test_from_rotvec_zero_is_identity():
    np.testing.assert_allclose(quat.from_rotvec(np.zeros(3)), quat.IDENTITY, atol=1e-15)


def test_slerp_endpoint_and_midpoint():
    a = quat.IDENTITY
    b = quat.from_axis_angle([0, 1, 0], np.pi / 2)
    np.testing.assert_allclose(quat.slerp(a, b, 0.0), a, atol=1e-12)
    np.testing.assert_allclose(quat.slerp(a, b, 1.0), b, atol=1e-12)
    mid = quat.slerp(a, b, 0.5)
    np.testing.assert_allclose(mid, quat.from_axis_angle([0, 1, 0], np.pi / 4), atol=1e-12)


def test_slerp_fraction_composes_back():
    rng = np.random.default_rng(9)
    q = rng_quat(rng)
    k = 5
    f = quat.slerp(quat.IDENTITY, q, 1.0 / k)
    acc = quat.IDENTITY
    for _ in range(k):
        acc = quat.mul(acc, f)
    if np.dot(acc, q) < 0:
        acc = -acc
    np.testing.assert_allclose(acc, q, atol=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_between_aligns(seed):
    rng = np.random.default_rng(seed)
    u, v = rng.normal(size=3), rng.normal(size=3)
    q = quat.between(u, v)
    out = quat.rotate(q, u / np.linalg.norm(u))
    np.testing.assert_allclose(out, v / np.linalg.norm(v), atol=1e-9)


def test_between_antiparallel():
    q = quat.between([1.0, 0.0, 0.0], [-1.0, 0.0, 0.0])
    np.testing.assert_allclose(quat.rotate(q, [1.0, 0.0, 0.0]), [-1.0, 0.0, 0.0], atol=1e-12)


def test_normalize_rejects_zero():
    with pytest.raises(ValueError):
        quat.normalize(np.zeros(4))
