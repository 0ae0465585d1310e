"""Key-vertex transfer between characters via per-limb optimal transport.

Each limb of the template mesh is matched against the same limb of the
destination mesh with an entropy-regularized transport plan on normalized
point clouds; every labeled key-vertex then lands on the destination
vertex that receives most of its row's mass.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .types import Character, KeyVertexSet, NumericalError, SkinnedMesh, ValidationError

DEFAULT_EPSILON = 0.01
MAX_LIMB_POINTS = 4000


@dataclass
class TransportPlan:
    """Coupling between two weighted point clouds."""

    matrix: np.ndarray  # (N_a, N_b), nonnegative
    row_weights: np.ndarray  # (N_a,) target row marginals, sum 1
    col_weights: np.ndarray  # (N_b,) target column marginals, sum 1
    converged: bool
    iterations: int

    def marginal_residual(self) -> float:
        r = np.abs(self.matrix.sum(axis=1) - self.row_weights).max()
        c = np.abs(self.matrix.sum(axis=0) - self.col_weights).max()
        return float(max(r, c))

    def cost(self, cost_matrix: np.ndarray) -> float:
        return float((self.matrix * cost_matrix).sum())


def split_limbs(character: Character) -> dict[str, np.ndarray]:
    """Vertex index sets per limb, each vertex going with its dominant bone."""
    tags = character.bone_limb_tags()
    dominant = np.argmax(character.mesh.skin_weights, axis=1)
    out: dict[str, list[int]] = {}
    for v, b in enumerate(dominant):
        out.setdefault(tags[b], []).append(v)
    return {tag: np.array(idx, dtype=int) for tag, idx in out.items()}


def vertex_density_weights(mesh: SkinnedMesh, indices: np.ndarray) -> np.ndarray:
    """Per-vertex share of surface area: each face spreads A(f)/3 to its corners.

    The weights of a subset sum to the area incident to it; isolated
    vertices get weight 0 with a warning.
    """
    v = mesh.vertices
    f = mesh.faces
    area = 0.5 * np.linalg.norm(
        np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]), axis=1
    )
    per_vertex = np.zeros(len(v))
    np.add.at(per_vertex, f.ravel(), np.repeat(area / 3.0, 3))
    out = per_vertex[np.asarray(indices, dtype=int)]
    if np.any(out <= 0):
        warnings.warn("subset contains isolated vertices with zero density weight")
    return out


def normalize_cloud(points: np.ndarray) -> np.ndarray:
    """Shift to zero mean and divide by the pooled per-axis deviation."""
    pts = np.asarray(points, dtype=float)
    centered = pts - pts.mean(axis=0)
    var = float((centered**2).mean())
    if var < 1e-18:
        raise ValidationError("point cloud is degenerate (zero variance)")
    return centered / np.sqrt(var)


def sinkhorn(
    a_points: np.ndarray,
    a_weights: np.ndarray,
    b_points: np.ndarray,
    b_weights: np.ndarray,
    epsilon: float = DEFAULT_EPSILON,
    max_iters: int = 500,
    tol: float = 1e-6,
) -> TransportPlan:
    """Entropy-regularized transport in the log domain.

    Weights must be positive; both sides are normalized to unit mass.
    Ends when the column-marginal residual drops below ``tol`` (rows are
    balanced exactly by the final update) or after ``max_iters`` sweeps,
    with a warning in the latter case.
    """
    a = np.asarray(a_weights, dtype=float)
    b = np.asarray(b_weights, dtype=float)
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValidationError("transport weights must be positive")
    a = a / a.sum()
    b = b / b.sum()

    diff = a_points[:, None, :] - b_points[None, :, :]
    cost = np.einsum("ijk,ijk->ij", diff, diff)
    neg_c = -cost / epsilon
    log_a, log_b = np.log(a), np.log(b)
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        f = epsilon * (log_a - logsumexp(g[None, :] / epsilon + neg_c, axis=1))
        g = epsilon * (log_b - logsumexp(f[:, None] / epsilon + neg_c, axis=0))
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
            raise NumericalError(
                "transport kernel produced non-finite values; increase epsilon"
            )
        # the g-update balances columns exactly, so convergence is measured
        # on the rows (the final f-update below then makes those exact too)
        if it % 5 == 0 or it == max_iters:
            plan_rows = np.exp((f[:, None] + g[None, :]) / epsilon + neg_c).sum(axis=1)
            if np.abs(plan_rows - a).max() < tol:
                converged = True
                break
    f = epsilon * (log_a - logsumexp(g[None, :] / epsilon + neg_c, axis=1))
    matrix = np.exp((f[:, None] + g[None, :]) / epsilon + neg_c)
    if not np.all(np.isfinite(matrix)):
        raise NumericalError(
            "transport kernel produced non-finite values; increase epsilon"
        )
    if not converged:
        warnings.warn(
            f"transport solve stopped at {max_iters} sweeps with residual "
            f"{np.abs(matrix.sum(axis=0) - b).max():.2e}"
        )
    return TransportPlan(matrix, a, b, converged, it)


def _subsample(indices, weights, limit, rng, keep=()):
    """Density-proportional subsample that always keeps ``keep`` indices."""
    if len(indices) <= limit:
        return indices, weights
    keep_mask = np.isin(indices, list(keep))
    pool = np.flatnonzero(~keep_mask)
    p = weights[pool] / weights[pool].sum()
    n_extra = limit - int(keep_mask.sum())
    chosen = rng.choice(pool, size=n_extra, replace=False, p=p)
    sel = np.sort(np.concatenate([np.flatnonzero(keep_mask), chosen]))
    return indices[sel], weights[sel]


def transfer_key_vertices(
    template: Character,
    destination: Character,
    epsilon: float = DEFAULT_EPSILON,
    max_iters: int = 500,
    tol: float = 1e-6,
    max_points: int = MAX_LIMB_POINTS,
) -> KeyVertexSet:
    """Re-seat the template's labeled key-vertices on the destination mesh."""
    if template.key_vertices is None:
        raise ValidationError("template character has no key vertices", "$.key_vertices")
    keyset = template.key_vertices
    t_limbs = split_limbs(template)
    d_limbs = split_limbs(destination)
    rng = np.random.default_rng(0)

    new_indices = np.zeros(keyset.n, dtype=int)
    for limb in sorted(set(keyset.limbs)):
        rows = keyset.of_limb(limb)
        if limb not in d_limbs or len(d_limbs[limb]) == 0:
            raise ValidationError(f"destination has no vertices for limb {limb!r}")
        t_idx = t_limbs[limb]
        d_idx = d_limbs[limb]
        t_w = vertex_density_weights(template.mesh, t_idx)
        d_w = vertex_density_weights(destination.mesh, d_idx)
        t_keep = t_w > 0
        d_keep = d_w > 0
        t_idx, t_w = t_idx[t_keep], t_w[t_keep]
        d_idx, d_w = d_idx[d_keep], d_w[d_keep]
        t_idx, t_w = _subsample(t_idx, t_w, max_points, rng, keep=keyset.indices[rows])
        d_idx, d_w = _subsample(d_idx, d_w, max_points, rng)

        plan = sinkhorn(
            normalize_cloud(template.mesh.vertices[t_idx]),
            t_w,
            normalize_cloud(destination.mesh.vertices[d_idx]),
            d_w,
            epsilon=epsilon,
            max_iters=max_iters,
            tol=tol,
        )
        row_of = {int(v): r for r, v in enumerate(t_idx)}
        for k in rows:
            new_indices[k] = int(d_idx[np.argmax(plan.matrix[row_of[int(keyset.indices[k])]])])

    labels = list(keyset.labels)
    limbs = list(keyset.limbs)
    for label, idx in (destination.key_vertex_overrides or {}).items():
        if label in labels:
            new_indices[labels.index(label)] = int(idx)
    return KeyVertexSet(labels, new_indices, limbs)
