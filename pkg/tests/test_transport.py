import numpy as np
import pytest
from scipy.optimize import linprog

from keymotion.template import TemplateParams, make_template, template_character
from keymotion.transport import (
    normalize_cloud,
    sinkhorn,
    split_limbs,
    transfer_key_vertices,
    vertex_density_weights,
)
from keymotion.types import (
    Character,
    NumericalError,
    SkinnedMesh,
    Skeleton,
    ValidationError,
    character_height,
)
from keymotion import quat


def lp_transport_cost(a, b, cost):
    """Exact transport optimum over the coupling polytope (reference solver)."""
    n, m = cost.shape
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m : (i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    res = linprog(
        cost.ravel(),
        A_eq=a_eq,
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs",
    )
    assert res.status == 0
    return res.fun


# ------------------------------------------------------------------ sinkhorn


def test_sinkhorn_marginals_tight():
    rng = np.random.default_rng(3)
    a_pts = normalize_cloud(rng.normal(size=(6, 3)))
    b_pts = normalize_cloud(rng.normal(size=(9, 3)))
    a_w, b_w = rng.uniform(1, 2, 6), rng.uniform(1, 2, 9)
    plan = sinkhorn(a_pts, a_w, b_pts, b_w, epsilon=0.05)
    assert plan.converged
    assert plan.marginal_residual() < 1e-4
    assert plan.matrix.min() >= 0


def test_sinkhorn_single_source_row_forced():
    a_pts = np.zeros((1, 3))
    b_pts = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    plan = sinkhorn(a_pts, np.array([1.0]), b_pts, np.array([0.3, 0.7]), epsilon=0.1)
    np.testing.assert_allclose(plan.matrix[0], [0.3, 0.7], atol=1e-6)


def test_sinkhorn_identical_clouds_concentrate():
    rng = np.random.default_rng(11)
    pts = normalize_cloud(rng.normal(size=(8, 3)))
    w = np.full(8, 1.0)
    plan = sinkhorn(pts, w, pts, w, epsilon=0.005)
    diag = np.diag(plan.matrix) / plan.matrix.sum(axis=1)
    assert np.all(diag >= 0.9)


@pytest.mark.parametrize("n,m", [(3, 3), (5, 8), (8, 6)])
def test_sinkhorn_cost_near_lp_optimum(n, m):
    rng = np.random.default_rng(n * 10 + m)
    a_pts = normalize_cloud(rng.normal(size=(n, 3)))
    b_pts = normalize_cloud(rng.normal(size=(m, 3)))
    a = rng.uniform(1, 2, n)
    b = rng.uniform(1, 2, m)
    a, b = a / a.sum(), b / b.sum()
    diff = a_pts[:, None] - b_pts[None, :]
    cost = np.einsum("ijk,ijk->ij", diff, diff)
    plan = sinkhorn(a_pts, a, b_pts, b, epsilon=0.001, max_iters=20000)
    exact = lp_transport_cost(a, b, cost)
    assert plan.cost(cost) <= exact * 1.05 + 1e-12


def test_sinkhorn_nan_kernel_raises():
    rng = np.random.default_rng(1)
    a_pts = rng.normal(size=(4, 3))
    b_pts = rng.normal(size=(4, 3)) + 1e6  # drives cost/epsilon past float range
    with pytest.raises(NumericalError, match="epsilon"):
        sinkhorn(a_pts, np.ones(4), b_pts, np.ones(4), epsilon=1e-300)


def test_sinkhorn_nonconvergence_warns():
    rng = np.random.default_rng(2)
    a_pts, b_pts = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    with pytest.warns(UserWarning, match="stopped"):
        sinkhorn(a_pts, np.ones(5), b_pts, np.ones(5), epsilon=0.01, max_iters=1)


def test_sinkhorn_rejects_nonpositive_weights():
    pts = np.zeros((2, 3))
    with pytest.raises(ValidationError):
        sinkhorn(pts, np.array([1.0, 0.0]), pts, np.ones(2))


# ----------------------------------------------------------- normalize_cloud


def test_normalize_cloud_properties():
    rng = np.random.default_rng(9)
    pts = rng.normal(size=(20, 3)) * 3 + 5
    out = normalize_cloud(pts)
    np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose((out**2).mean(), 1.0, atol=1e-12)
    np.testing.assert_allclose(normalize_cloud(out), out, atol=1e-9)
    np.testing.assert_allclose(normalize_cloud(pts + 7.0), out, atol=1e-9)
    np.testing.assert_allclose(normalize_cloud(pts * 3.0), out, atol=1e-9)


def test_normalize_cloud_degenerate():
    with pytest.raises(ValidationError):
        normalize_cloud(np.ones((5, 3)))


# ---------------------------------------------------- vertex_density_weights


def octahedron():
    v = np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float
    )
    f = np.array(
        [[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]]
    )
    skin = np.ones((6, 1))
    return SkinnedMesh(v, f, skin)


def test_density_single_triangle():
    v = np.array([[0, 0, 0], [1.2, 0, 0], [0, 1.0, 0]], float)
    f = np.array([[0, 1, 2]])
    mesh = SkinnedMesh(v, f, np.ones((3, 1)))
    w = vertex_density_weights(mesh, np.arange(3))
    np.testing.assert_allclose(w, 0.2, atol=1e-12)  # area 0.6 split 3 ways


def test_density_sums_to_surface_area():
    mesh = octahedron()
    w = vertex_density_weights(mesh, np.arange(6))
    v, f = mesh.vertices, mesh.faces
    area = 0.5 * np.linalg.norm(
        np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]), axis=1
    ).sum()
    np.testing.assert_allclose(w.sum(), area, atol=1e-9)
    np.testing.assert_allclose(area, 8 * (np.sqrt(3) / 2), atol=1e-12)


def test_density_isolated_vertex_warns():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [9, 9, 9]], float)
    f = np.array([[0, 1, 2]])
    mesh = SkinnedMesh(v, f, np.ones((4, 1)))
    with pytest.warns(UserWarning, match="isolated"):
        w = vertex_density_weights(mesh, np.arange(4))
    assert w[3] == 0


# ----------------------------------------------------------------- split_limbs


def test_split_limbs_argmax_rule():
    sk = Skeleton(
        ["a", "b"],
        np.array([-1, 0]),
        np.tile(quat.IDENTITY, (2, 1)),
        np.array([[0, 0, 0.5], [0, 0, 1.0]]),
    )
    v = np.zeros((2, 3))
    f = np.array([[0, 1, 1]])
    skin = np.array([[0.3, 0.7], [1.0, 0.0]])
    ch = Character("x", sk, SkinnedMesh(v, f, skin), {"a": "torso", "b": "arm_l"})
    limbs = split_limbs(ch)
    assert limbs["arm_l"].tolist() == [0]
    assert limbs["torso"].tolist() == [1]


def test_split_limbs_covers_all_vertices():
    t = template_character()
    limbs = split_limbs(t)
    total = np.concatenate(list(limbs.values()))
    assert len(total) == t.mesh.n_vertices
    assert len(set(total.tolist())) == t.mesh.n_vertices


# --------------------------------------------------------------- transfer


@pytest.fixture(scope="module")
def template():
    return template_character()


def test_self_transfer_is_identity(template):
    out = transfer_key_vertices(template, template)
    np.testing.assert_array_equal(out.indices, template.key_vertices.indices)
    assert out.labels == template.key_vertices.labels


def test_transfer_scale_invariant(template):
    sk = template.skeleton
    scaled = Character(
        "big",
        Skeleton(sk.names, sk.parents, sk.tpose_rotations, sk.tpose_positions * 2, sk.up_axis),
        SkinnedMesh(template.mesh.vertices * 2, template.mesh.faces, template.mesh.skin_weights),
        template.limbs,
    )
    out = transfer_key_vertices(template, scaled)
    np.testing.assert_array_equal(out.indices, template.key_vertices.indices)


def test_transfer_elongated_arm(template):
    stretched = make_template(TemplateParams(arm_length=1.5), name="stretch")
    out = transfer_key_vertices(template, stretched)
    h = character_height(stretched)
    truth = stretched.key_vertices
    got = stretched.mesh.vertices[out.indices[out.labels.index("wrist_l")]]
    want = stretched.mesh.vertices[truth.indices[truth.labels.index("wrist_l")]]
    assert np.linalg.norm(got - want) < 0.05 * h


def test_transfer_missing_limb_errors(template):
    sk = Skeleton(
        ["only"],
        np.array([-1]),
        np.tile(quat.IDENTITY, (1, 1)),
        np.array([[0, 0.5, 0]]),
        up_axis=np.array([0.0, 1.0, 0.0]),
    )
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float)
    mesh = SkinnedMesh(v, np.array([[0, 1, 2]]), np.ones((3, 1)))
    torso_only = Character("stub", sk, mesh, {"only": "torso"})
    with pytest.raises(ValidationError, match="hand_l|arm_l|head"):
        transfer_key_vertices(template, torso_only)


def test_transfer_override_precedence():
    coarse = make_template(TemplateParams(resolution=0.6), name="coarse")
    dest = Character(
        coarse.name,
        coarse.skeleton,
        coarse.mesh,
        coarse.limbs,
        coarse.key_vertices,
        key_vertex_overrides={"palm_l": 7},
    )
    out = transfer_key_vertices(coarse, dest)
    assert out.indices[out.labels.index("palm_l")] == 7


def test_transfer_with_subsampling():
    coarse = make_template(TemplateParams(resolution=0.6), name="coarse")
    out = transfer_key_vertices(coarse, coarse, max_points=120)
    assert len(out.indices) == 41
    assert np.all(out.indices >= 0)
    assert np.all(out.indices < coarse.mesh.n_vertices)
    out2 = transfer_key_vertices(coarse, coarse, max_points=120)
    np.testing.assert_array_equal(out.indices, out2.indices)
