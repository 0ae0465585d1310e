"""Batched pose optimization over key-vertex descriptors.

The solver refines a naive rotation-copy initialization by descending the
weighted objective (regularization + smoothness + semantic terms) with a
hand-rolled Adam. Variables are per-frame root positions plus per-bone
axis-angle increments composed onto the initial rotations; gradients flow
through forward kinematics and linear blend skinning via reverse-mode
autodiff. Long clips stream through overlapping frame windows whose
variables are blended linearly in the overlap.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, fields
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import torch

from . import tquat
from .descriptors import DescriptorSet, compute_descriptors
from .kinematics import (
    DTYPE,
    SkeletonTensors,
    fk_batch,
    lbs_batch,
    normals_batch,
    rest_normals,
)
from .losses import SEMANTIC_TERMS, loss_reg, loss_semantic, loss_smooth, semantic_terms
from .naive import naive_retarget
from .types import (
    Animation,
    BoneMapping,
    Character,
    HeightField,
    NumericalError,
    ValidationError,
    character_height,
)
from .weighting import blend_weights, alpha_schedule, floor_weights, interaction_mask, interaction_weights

LOSS_ORDER = ("reg", "smooth") + SEMANTIC_TERMS


@dataclass
class BalanceSpec:
    """User-chosen trade-off between two loss terms on one body part.

    ``value`` = 1 gives full priority to ``loss_a``, 0 to ``loss_b``,
    0.5 leaves both untouched.
    """

    part: str
    loss_a: str
    loss_b: str
    value: float = 0.5

    def __post_init__(self) -> None:
        for term in (self.loss_a, self.loss_b):
            if term not in SEMANTIC_TERMS:
                raise ValidationError(f"unknown loss term {term!r}", "$.balance")
        if self.loss_a == self.loss_b:
            raise ValidationError("balance needs two distinct terms", "$.balance")
        if not 0.0 <= self.value <= 1.0:
            raise ValidationError("balance value must be in [0, 1]", "$.balance.value")

    def to_dict(self) -> dict:
        return {"part": self.part, "loss_a": self.loss_a, "loss_b": self.loss_b, "value": self.value}


@dataclass
class RetargetConfig:
    """Solver hyperparameters; mirrors the JSON config file field-for-field."""

    w_reg: float = 1e-2
    w_smooth: float = 1e-4
    w_sem: float = 1.0
    w_dist: float = 1.0
    w_dir: float = 0.5
    w_pen: float = 10.0
    w_height: float = 1.0
    w_sliding: float = 0.5
    learning_rate: float = 1e-2
    iterations: int = 300
    batch_frames: int = 75
    batch_overlap: int = 5
    d_min_frac: float = 0.05
    d_max_frac: float = 0.15
    h_min_frac: float = 0.05
    h_max_frac: float = 0.15
    conflict_threshold: float = -0.5
    dir_loss: str = "aligned"  # "aligned" penalizes 1 - cos; "verbatim" penalizes cos
    balances: list[BalanceSpec] = field(default_factory=list)
    seed: int = 0
    threads: int = 1

    def __post_init__(self) -> None:
        for name in ("w_reg", "w_smooth", "w_sem", "w_dist", "w_dir", "w_pen", "w_height", "w_sliding"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0", f"$.config.{name}")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive", "$.config.learning_rate")
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1", "$.config.iterations")
        if self.batch_frames < 2:
            raise ValidationError("batch_frames must be >= 2", "$.config.batch_frames")
        if not 0 <= self.batch_overlap < self.batch_frames:
            raise ValidationError("need 0 <= batch_overlap < batch_frames", "$.config.batch_overlap")
        for lo, hi in (("d_min_frac", "d_max_frac"), ("h_min_frac", "h_max_frac")):
            if not 0 < getattr(self, lo) < getattr(self, hi):
                raise ValidationError(f"need 0 < {lo} < {hi}", "$.config")
        if not -1.0 <= self.conflict_threshold <= 1.0:
            raise ValidationError("conflict_threshold must be in [-1, 1]", "$.config.conflict_threshold")
        if self.dir_loss not in ("aligned", "verbatim"):
            raise ValidationError("dir_loss must be 'aligned' or 'verbatim'", "$.config.dir_loss")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1", "$.config.threads")
        self.balances = [
            b if isinstance(b, BalanceSpec) else BalanceSpec(**b) for b in self.balances
        ]

    def term_weights(self) -> dict[str, float]:
        return {k: getattr(self, f"w_{k}") for k in SEMANTIC_TERMS}

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = [b.to_dict() for b in v] if f.name == "balances" else v
        return out

    @staticmethod
    def from_dict(data: Mapping) -> "RetargetConfig":
        known = {f.name for f in fields(RetargetConfig)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}", "$.config")
        return RetargetConfig(**dict(data))


@dataclass
class ConflictRecord:
    """Two loss terms pulling one body part in opposing directions."""

    frame_start: int
    frame_end: int
    part: str
    loss_a: str
    loss_b: str
    cosine: float
    character: str = ""

    def __post_init__(self) -> None:
        if not -1.0 - 1e-9 <= self.cosine <= 1.0 + 1e-9:
            raise ValidationError("conflict cosine outside [-1, 1]", "$.conflict.cosine")

    def to_dict(self) -> dict:
        return {
            "frame_start": self.frame_start,
            "frame_end": self.frame_end,
            "part": self.part,
            "loss_a": self.loss_a,
            "loss_b": self.loss_b,
            "cosine": self.cosine,
            "character": self.character,
        }


@dataclass
class OptimVariables:
    """Free variables for one character over one frame window."""

    root_positions: torch.Tensor  # (T, 3)
    increments: torch.Tensor  # (T, B, 3) axis-angle applied over the init rotations

    @property
    def tensors(self) -> list[torch.Tensor]:
        return [self.root_positions, self.increments]

    def detached(self) -> "OptimVariables":
        return OptimVariables(self.root_positions.detach(), self.increments.detach())

    def assert_finite(self) -> None:
        for t in self.tensors:
            if not bool(torch.all(torch.isfinite(t))):
                raise NumericalError("optimization variables became non-finite")


@dataclass
class AdamState:
    """First/second moment accumulators for one variable tensor."""

    m: torch.Tensor
    v: torch.Tensor
    step: int = 0

    @staticmethod
    def zeros_like(x: torch.Tensor) -> "AdamState":
        return AdamState(torch.zeros_like(x), torch.zeros_like(x))


def adam_step(
    variables: torch.Tensor,
    gradients: torch.Tensor,
    state: AdamState,
    lr: float = 1e-2,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[torch.Tensor, AdamState]:
    """One bias-corrected Adam update; returns the new variables and state."""
    with torch.no_grad():
        state.step += 1
        state.m = beta1 * state.m + (1.0 - beta1) * gradients
        state.v = beta2 * state.v + (1.0 - beta2) * gradients * gradients
        m_hat = state.m / (1.0 - beta1**state.step)
        v_hat = state.v / (1.0 - beta2**state.step)
        updated = variables - lr * m_hat / (torch.sqrt(v_hat) + eps)
    return updated, state


def gradient_engine(
    objective: torch.Tensor, variables: Sequence[torch.Tensor], retain_graph: bool = False
) -> list[torch.Tensor]:
    """Reverse-mode gradients of a scalar objective w.r.t. the variables.

    Variables that do not influence the objective get zero gradients.
    """
    if hasattr(variables, "tensors"):
        variables = variables.tensors
    tensors: list[torch.Tensor] = []
    for v in variables:
        tensors.extend(v.tensors if hasattr(v, "tensors") else [v])
    grads = torch.autograd.grad(
        objective, tensors, retain_graph=retain_graph, allow_unused=True
    )
    return [torch.zeros_like(v) if g is None else g for v, g in zip(tensors, grads)]


def apply_conflict_balance(
    balances: Sequence[BalanceSpec],
    part_rows: Mapping[str, np.ndarray],
    n_rows: int,
    dtype=torch.float64,
) -> dict[str, torch.Tensor]:
    """Per-term row multipliers realizing the 2*lam / 2*(1-lam) weight split.

    Scales apply to the squared loss entries whose first key-vertex index
    belongs to the part; value 0.5 leaves everything at 1. Multiple specs
    compose multiplicatively.
    """
    scales: dict[str, torch.Tensor] = {}

    def vec(term: str) -> torch.Tensor:
        if term not in scales:
            scales[term] = torch.ones(n_rows, dtype=dtype)
        return scales[term]

    for spec in balances:
        if spec.part not in part_rows:
            raise ValidationError(f"unknown body part {spec.part!r}", "$.balance.part")
        rows = torch.as_tensor(np.asarray(part_rows[spec.part]), dtype=torch.long)
        vec(spec.loss_a)[rows] *= 2.0 * spec.value
        vec(spec.loss_b)[rows] *= 2.0 * (1.0 - spec.value)
    return scales


def detect_conflicts(
    gradients_by_part: Mapping[str, Mapping[str, torch.Tensor]],
    threshold: float = -0.5,
    frame_range: tuple[int, int] = (0, 0),
    character: str = "",
) -> list[ConflictRecord]:
    """Pairwise gradient-direction conflicts per body part.

    Emits a record for each loss pair whose gradient cosine falls below the
    threshold; pairs with a vanishing gradient on either side are skipped.
    """
    records = []
    for part, grads in gradients_by_part.items():
        terms = [k for k in SEMANTIC_TERMS if k in grads]
        for a_idx in range(len(terms)):
            for b_idx in range(a_idx + 1, len(terms)):
                ka, kb = terms[a_idx], terms[b_idx]
                ga = grads[ka].reshape(-1)
                gb = grads[kb].reshape(-1)
                na = float(torch.linalg.norm(ga))
                nb = float(torch.linalg.norm(gb))
                if na < 1e-12 or nb < 1e-12:
                    continue
                cos = float(torch.dot(ga, gb)) / (na * nb)
                cos = min(max(cos, -1.0), 1.0)
                if cos < threshold:
                    records.append(
                        ConflictRecord(frame_range[0], frame_range[1], part, ka, kb, cos, character)
                    )
    records.sort(key=lambda r: r.cosine)
    return records


@dataclass
class RetargetCase:
    """One source character + animation retargeted onto one target."""

    source: Character
    animation: Animation
    target: Character
    mapping: BoneMapping


@dataclass
class Report:
    """Per-iteration loss curves, detected conflicts, and run statistics."""

    windows: list[dict]
    conflicts: list[dict]
    characters: list[str]
    n_frames: int
    fps: float
    config: dict
    wall_clock_s: float = 0.0
    frames_per_second: float = 0.0

    def to_dict(self) -> dict:
        return {
            "windows": self.windows,
            "conflicts": self.conflicts,
            "characters": self.characters,
            "n_frames": self.n_frames,
            "fps": self.fps,
            "config": self.config,
            "wall_clock_s": self.wall_clock_s,
            "frames_per_second": self.frames_per_second,
        }

    def fingerprint(self) -> dict:
        """Deterministic view: the report minus wall-clock timings."""
        out = self.to_dict()
        del out["wall_clock_s"]
        del out["frames_per_second"]
        return out


@dataclass
class RetargetResult:
    animations: list[Animation]
    report: Report

    @property
    def animation(self) -> Animation:
        return self.animations[0]


def _align_key_vertices(case: RetargetCase) -> tuple[np.ndarray, np.ndarray, list[str], list[str]]:
    """Source key-vertex order and the target rows permuted to match it."""
    src_kv = case.source.key_vertices
    targ_kv = case.target.key_vertices
    if src_kv is None or targ_kv is None:
        raise ValidationError("both characters need key vertices", "$.key_vertices")
    targ_by_label = {label: k for k, label in enumerate(targ_kv.labels)}
    missing = [label for label in src_kv.labels if label not in targ_by_label]
    if missing or targ_kv.n != src_kv.n:
        raise ValidationError(
            f"key-vertex labels do not match (missing {missing[:3]})", "$.key_vertices"
        )
    perm = np.array([targ_by_label[label] for label in src_kv.labels], dtype=int)
    src_tags = list(src_kv.limbs)
    targ_tags = [targ_kv.limbs[k] for k in perm]
    return src_kv.indices.copy(), targ_kv.indices[perm], src_tags, targ_tags


class RetargetProblem:
    """Differentiable objective for one frame window of a retargeting scene.

    Holds the frozen source-side data (descriptors, weights, thresholds) and
    evaluates the objective for candidate target variables. Exposed for
    gradient checking and conflict tooling as well as the run loop.
    """

    def __init__(
        self,
        cases: Sequence[RetargetCase],
        config: RetargetConfig,
        init_animations: Sequence[Animation],
        frame_range: Optional[tuple[int, int]] = None,
        heightfield: Optional[HeightField] = None,
        source_heightfield: Optional[HeightField] = None,
    ):
        if not cases:
            raise ValidationError("at least one retarget case required", "$.cases")
        self.config = config
        self.heightfield = heightfield
        self.source_heightfield = source_heightfield
        self.fps = cases[0].animation.fps
        n_frames = cases[0].animation.n_frames
        for case in cases:
            if case.animation.n_frames != n_frames or case.animation.fps != self.fps:
                raise ValidationError("case animations must share length and fps", "$.cases")
        self.frame_range = frame_range or (0, n_frames)
        s, e = self.frame_range
        if not 0 <= s < e <= n_frames:
            raise ValidationError("frame range outside the animation", "$.frame_range")
        self.n_window = e - s
        self.cases = list(cases)

        up = cases[0].source.skeleton.up_axis
        for case in cases:
            for ch in (case.source, case.target):
                if not np.allclose(ch.skeleton.up_axis, up):
                    raise ValidationError("characters must share an up axis", "$.up_axis")
        self.up = tuple(float(c) for c in up)

        self.skel: list[SkeletonTensors] = []
        self.q_init: list[torch.Tensor] = []
        self.root_init: list[torch.Tensor] = []
        self.kv_verts: list[torch.Tensor] = []
        self.kv_weights: list[torch.Tensor] = []
        self.kv_normals: list[torch.Tensor] = []
        self.row_offsets: list[int] = []
        src_tags_all: list[str] = []
        targ_tags_all: list[str] = []
        char_ids: list[int] = []
        src_pos_blocks = []
        src_nrm_blocks = []
        d_lo_s, d_hi_s, d_lo_t, d_hi_t = [], [], [], []
        h_lo_s, h_hi_s, h_lo_t, h_hi_t = [], [], [], []

        for ci, case in enumerate(cases):
            src_idx, targ_idx, src_tags, targ_tags = _align_key_vertices(case)
            n_kv = len(src_idx)
            self.row_offsets.append(len(src_tags_all))
            src_tags_all.extend(src_tags)
            targ_tags_all.extend(targ_tags)
            char_ids.extend([ci] * n_kv)

            skel_t = SkeletonTensors(case.target.skeleton)
            self.skel.append(skel_t)
            init = init_animations[ci]
            self.q_init.append(torch.tensor(init.rotations[s:e], dtype=DTYPE))
            self.root_init.append(torch.tensor(init.root_positions[s:e], dtype=DTYPE))
            mesh_t = case.target.mesh
            self.kv_verts.append(torch.tensor(mesh_t.vertices[targ_idx], dtype=DTYPE))
            self.kv_weights.append(torch.tensor(mesh_t.skin_weights[targ_idx], dtype=DTYPE))
            self.kv_normals.append(torch.tensor(rest_normals(mesh_t)[targ_idx], dtype=DTYPE))

            skel_s = SkeletonTensors(case.source.skeleton)
            anim = case.animation
            with torch.no_grad():
                w_rot, w_pos = fk_batch(
                    skel_s,
                    torch.tensor(anim.root_positions[s:e], dtype=DTYPE),
                    torch.tensor(anim.rotations[s:e], dtype=DTYPE),
                )
                mesh_s = case.source.mesh
                src_pos_blocks.append(
                    lbs_batch(
                        skel_s,
                        w_rot,
                        w_pos,
                        torch.tensor(mesh_s.vertices[src_idx], dtype=DTYPE),
                        torch.tensor(mesh_s.skin_weights[src_idx], dtype=DTYPE),
                    )
                )
                src_nrm_blocks.append(
                    normals_batch(
                        skel_s,
                        w_rot,
                        torch.tensor(rest_normals(mesh_s)[src_idx], dtype=DTYPE),
                        torch.tensor(mesh_s.skin_weights[src_idx], dtype=DTYPE),
                    )
                )

            h_src = character_height(case.source)
            h_targ = character_height(case.target)
            d_lo_s += [config.d_min_frac * h_src] * n_kv
            d_hi_s += [config.d_max_frac * h_src] * n_kv
            d_lo_t += [config.d_min_frac * h_targ] * n_kv
            d_hi_t += [config.d_max_frac * h_targ] * n_kv
            h_lo_s += [config.h_min_frac * h_src] * n_kv
            h_hi_s += [config.h_max_frac * h_src] * n_kv
            h_lo_t += [config.h_min_frac * h_targ] * n_kv
            h_hi_t += [config.h_max_frac * h_targ] * n_kv

        self.n_rows = len(src_tags_all)
        self.source_tags = src_tags_all
        self.target_tags = targ_tags_all
        self.mask_src = interaction_mask(src_tags_all, char_ids)
        self.mask_targ = interaction_mask(targ_tags_all, char_ids)
        self.thresholds_src = (
            torch.tensor(d_lo_s, dtype=DTYPE),
            torch.tensor(d_hi_s, dtype=DTYPE),
            torch.tensor(h_lo_s, dtype=DTYPE),
            torch.tensor(h_hi_s, dtype=DTYPE),
        )
        self.thresholds_targ = (
            torch.tensor(d_lo_t, dtype=DTYPE),
            torch.tensor(d_hi_t, dtype=DTYPE),
            torch.tensor(h_lo_t, dtype=DTYPE),
            torch.tensor(h_hi_t, dtype=DTYPE),
        )

        src_positions = torch.cat(src_pos_blocks, dim=1)
        src_normals = torch.cat(src_nrm_blocks, dim=1)
        self.source_descriptors = compute_descriptors(
            src_positions, src_normals, self.fps, up=self.up, heightfield=source_heightfield
        )
        d_lo, d_hi, h_lo, h_hi = self.thresholds_src
        self.w_int_src = interaction_weights(
            self.source_descriptors.dist, d_lo, d_hi, mask=self.mask_src
        )
        self.w_floor_src = floor_weights(self.source_descriptors.height, h_lo, h_hi)

        self.part_rows: dict[str, np.ndarray] = {}
        for tag in dict.fromkeys(targ_tags_all):
            self.part_rows[tag] = np.flatnonzero(np.array(targ_tags_all) == np.array(tag))
        self.bone_groups: list[dict[str, np.ndarray]] = []
        for case in cases:
            tags = case.target.bone_limb_tags()
            groups = {}
            for tag in dict.fromkeys(tags):
                groups[tag] = np.flatnonzero(np.array(tags) == np.array(tag))
            self.bone_groups.append(groups)

        if self.n_window < 4:
            warnings.warn("window shorter than 4 frames; smoothness term is 0", RuntimeWarning)
        with torch.no_grad():
            init_vars = self.init_variables(requires_grad=False)
            pos0, _ = self.forward_positions(init_vars)
        self.init_positions = pos0

    def init_variables(self, requires_grad: bool = True) -> list[OptimVariables]:
        out = []
        for ci in range(len(self.cases)):
            root = self.root_init[ci].clone().requires_grad_(requires_grad)
            aa = torch.zeros(
                (self.n_window, self.q_init[ci].shape[1], 3), dtype=DTYPE, requires_grad=requires_grad
            )
            out.append(OptimVariables(root, aa))
        return out

    def variable_tensors(self, variables: Sequence[OptimVariables]) -> list[torch.Tensor]:
        flat: list[torch.Tensor] = []
        for v in variables:
            flat.extend(v.tensors)
        return flat

    def forward_positions(
        self, variables: Sequence[OptimVariables]
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Stacked key-vertex positions and normals for the current variables."""
        pos_blocks = []
        nrm_blocks = []
        for ci in range(len(self.cases)):
            v = variables[ci]
            rot = tquat.mul(self.q_init[ci], tquat.from_rotvec(v.increments))
            w_rot, w_pos = fk_batch(self.skel[ci], v.root_positions, rot)
            pos_blocks.append(
                lbs_batch(self.skel[ci], w_rot, w_pos, self.kv_verts[ci], self.kv_weights[ci])
            )
            nrm_blocks.append(
                normals_batch(self.skel[ci], w_rot, self.kv_normals[ci], self.kv_weights[ci])
            )
        return torch.cat(pos_blocks, dim=1), torch.cat(nrm_blocks, dim=1)

    def target_descriptors(self, variables: Sequence[OptimVariables]) -> DescriptorSet:
        pos, nrm = self.forward_positions(variables)
        return compute_descriptors(pos, nrm, self.fps, up=self.up, heightfield=self.heightfield)

    def weights_at(
        self, target: DescriptorSet, alpha: float
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Blended interaction/floor weights; target side enters detached."""
        d_lo, d_hi, h_lo, h_hi = self.thresholds_targ
        w_int_t = interaction_weights(target.dist.detach(), d_lo, d_hi, mask=self.mask_targ)
        w_floor_t = floor_weights(target.height.detach(), h_lo, h_hi)
        w_int = blend_weights(self.w_int_src, w_int_t, alpha)
        w_floor = blend_weights(self.w_floor_src, w_floor_t, alpha)
        return w_int, w_floor

    def objective(
        self,
        variables: Sequence[OptimVariables],
        alpha: float,
        term_scales: Optional[Mapping[str, torch.Tensor]] = None,
        frozen_weights: Optional[tuple[torch.Tensor, torch.Tensor]] = None,
    ) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
        """Total objective and per-term breakdown at the given variables.

        ``frozen_weights`` fixes (W_interaction, W_floor) instead of
        recomputing them from the target pose; finite-difference checks use
        it to probe the exact function autodiff differentiates.
        """
        cfg = self.config
        pos, nrm = self.forward_positions(variables)
        target = compute_descriptors(pos, nrm, self.fps, up=self.up, heightfield=self.heightfield)
        if frozen_weights is None:
            w_int, w_floor = self.weights_at(target, alpha)
        else:
            w_int, w_floor = frozen_weights
        reg = loss_reg(pos, self.init_positions)
        if self.n_window >= 4:
            smooth = loss_smooth(pos, self.fps)
        else:
            smooth = pos.new_zeros(())
        sem, terms = loss_semantic(
            self.source_descriptors,
            target,
            w_int,
            w_floor,
            cfg.term_weights(),
            dir_verbatim=cfg.dir_loss == "verbatim",
            term_scales=term_scales,
        )
        total = cfg.w_reg * reg + cfg.w_smooth * smooth + cfg.w_sem * sem
        breakdown = {"reg": reg, "smooth": smooth, "sem": sem}
        breakdown.update(terms)
        return total, breakdown

    def first_nan(
        self,
        variables: Sequence[OptimVariables],
        alpha: float,
        term_scales: Optional[Mapping[str, torch.Tensor]] = None,
    ) -> tuple[str, int]:
        """Locate the first non-finite loss term and the frame producing it."""
        with torch.no_grad():
            pos, nrm = self.forward_positions([v.detached() for v in variables])
            target = compute_descriptors(
                pos, nrm, self.fps, up=self.up, heightfield=self.heightfield
            )
            w_int, w_floor = self.weights_at(target, alpha)
            per: dict[str, torch.Tensor] = {
                "reg": loss_reg(pos, self.init_positions, per_frame=True)
            }
            if self.n_window >= 4:
                per["smooth"] = loss_smooth(pos, self.fps, per_frame=True)
            per.update(
                semantic_terms(
                    self.source_descriptors,
                    target,
                    w_int,
                    w_floor,
                    dir_verbatim=self.config.dir_loss == "verbatim",
                    term_scales=term_scales,
                    per_frame=True,
                )
            )
        for term in LOSS_ORDER:
            values = per.get(term)
            if values is None or bool(torch.all(torch.isfinite(values))):
                continue
            frame = int(torch.nonzero(~torch.isfinite(values))[0])
            return term, self.frame_range[0] + frame
        return "total", self.frame_range[0]

    def conflict_gradients(
        self,
        variables: Sequence[OptimVariables],
        alpha: float,
        term_scales: Optional[Mapping[str, torch.Tensor]] = None,
    ) -> list[dict[str, dict[str, torch.Tensor]]]:
        """Per-case, per-part, per-term gradients of the semantic terms
        w.r.t. that part's axis-angle increments."""
        pos, nrm = self.forward_positions(variables)
        target = compute_descriptors(pos, nrm, self.fps, up=self.up, heightfield=self.heightfield)
        w_int, w_floor = self.weights_at(target, alpha)
        terms = semantic_terms(
            self.source_descriptors,
            target,
            w_int,
            w_floor,
            dir_verbatim=self.config.dir_loss == "verbatim",
            term_scales=term_scales,
        )
        increments = [v.increments for v in variables]
        per_term_grads: dict[str, list[torch.Tensor]] = {}
        names = list(SEMANTIC_TERMS)
        for k_idx, term in enumerate(names):
            grads = torch.autograd.grad(
                terms[term],
                increments,
                retain_graph=k_idx < len(names) - 1,
                allow_unused=True,
            )
            per_term_grads[term] = [
                torch.zeros_like(v) if g is None else g for v, g in zip(increments, grads)
            ]
        out = []
        for ci in range(len(self.cases)):
            by_part: dict[str, dict[str, torch.Tensor]] = {}
            for part, bones in self.bone_groups[ci].items():
                by_part[part] = {
                    term: per_term_grads[term][ci][:, bones, :] for term in names
                }
            out.append(by_part)
        return out

    def window_rotations(self, variables: Sequence[OptimVariables]) -> list[np.ndarray]:
        """Final unit rotations per case for this window, (T, B, 4) numpy."""
        out = []
        with torch.no_grad():
            for ci, v in enumerate(variables):
                rot = tquat.mul(self.q_init[ci], tquat.from_rotvec(v.increments.detach()))
                rot = rot / torch.linalg.norm(rot, dim=-1, keepdim=True)
                out.append(rot.numpy())
        return out


def plan_windows(n_frames: int, batch_frames: int, overlap: int) -> list[tuple[int, int]]:
    """Overlapping frame windows covering [0, n_frames)."""
    if n_frames <= batch_frames:
        return [(0, n_frames)]
    windows = []
    start = 0
    while True:
        end = min(start + batch_frames, n_frames)
        windows.append((start, end))
        if end == n_frames:
            return windows
        start = end - overlap


def _float_row(iteration: int, alpha: float, total, breakdown) -> dict:
    row = {"iteration": iteration, "alpha": alpha, "total": float(total.detach())}
    for k, v in breakdown.items():
        row[k] = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
    return row


def run_retarget(
    source: Character,
    animation: Animation,
    target: Character,
    mapping: BoneMapping,
    config: Optional[RetargetConfig] = None,
    heightfield: Optional[HeightField] = None,
    source_heightfield: Optional[HeightField] = None,
    extra_cases: Sequence[RetargetCase] = (),
    on_iteration: Optional[Callable[[dict], Optional[dict]]] = None,
) -> RetargetResult:
    """Optimize a naive-retarget initialization against the full objective.

    Returns the retargeted animation(s) and a report with per-iteration
    loss curves, detected conflicts, and wall-clock statistics. The optional
    ``on_iteration`` callback receives a progress event per iteration and
    may return ``{"balances": [...]}`` to swap the active per-part loss
    balances from the next iteration on.
    """
    cfg = config or RetargetConfig()
    torch.set_num_threads(cfg.threads)
    torch.manual_seed(cfg.seed)

    cases = [RetargetCase(source, animation, target, mapping)] + list(extra_cases)
    inits = [
        naive_retarget(c.source.skeleton, c.target.skeleton, c.mapping, c.animation)
        for c in cases
    ]
    n_frames = animation.n_frames
    windows = plan_windows(n_frames, cfg.batch_frames, cfg.batch_overlap)

    t0 = time.perf_counter()
    balances = list(cfg.balances)
    window_reports: list[dict] = []
    all_conflicts: list[ConflictRecord] = []
    # accumulated full-length variables per case, blended across windows
    roots_full = [np.zeros((n_frames, 3)) for _ in cases]
    incs_full = [np.zeros((n_frames, c.target.skeleton.n_bones, 3)) for c in cases]
    filled = 0  # frames finalized so far

    for w_start, w_end in windows:
        problem = RetargetProblem(
            cases,
            cfg,
            inits,
            frame_range=(w_start, w_end),
            heightfield=heightfield,
            source_heightfield=source_heightfield,
        )
        scales = (
            apply_conflict_balance(balances, problem.part_rows, problem.n_rows)
            if balances
            else None
        )
        variables = problem.init_variables()
        states = [AdamState.zeros_like(t) for t in problem.variable_tensors(variables)]
        rows = []
        balance_updates = []

        for it in range(cfg.iterations):
            alpha = alpha_schedule(it, cfg.iterations)
            total, breakdown = problem.objective(variables, alpha, term_scales=scales)
            if not bool(torch.isfinite(total)):
                term, frame = problem.first_nan(variables, alpha, term_scales=scales)
                raise NumericalError(
                    f"non-finite loss term '{term}' at frame {frame} "
                    f"(iteration {it}, window [{w_start}, {w_end}))"
                )
            rows.append(_float_row(it, alpha, total, breakdown))
            grads = gradient_engine(total, problem.variable_tensors(variables))
            flat = problem.variable_tensors(variables)
            updated = []
            for tensor, grad, state in zip(flat, grads, states):
                new, _ = adam_step(tensor.detach(), grad, state, lr=cfg.learning_rate)
                updated.append(new.requires_grad_(True))
            variables = [
                OptimVariables(updated[2 * ci], updated[2 * ci + 1]) for ci in range(len(cases))
            ]
            if on_iteration is not None:
                event = {
                    "window": [w_start, w_end],
                    "iteration": it,
                    "total_iterations": cfg.iterations,
                    "alpha": alpha,
                    "losses": rows[-1],
                }
                answer = on_iteration(event)
                if answer and "balances" in answer:
                    balances = [
                        b if isinstance(b, BalanceSpec) else BalanceSpec(**b)
                        for b in answer["balances"]
                    ]
                    scales = (
                        apply_conflict_balance(balances, problem.part_rows, problem.n_rows)
                        if balances
                        else None
                    )
                    balance_updates.append(
                        {"iteration": it, "balances": [b.to_dict() for b in balances]}
                    )

        for v in variables:
            v.assert_finite()
        grads_by_case = problem.conflict_gradients(variables, 1.0, term_scales=scales)
        window_conflicts: list[ConflictRecord] = []
        for ci, by_part in enumerate(grads_by_case):
            window_conflicts.extend(
                detect_conflicts(
                    by_part,
                    threshold=cfg.conflict_threshold,
                    frame_range=(w_start, w_end),
                    character=cases[ci].target.name,
                )
            )
        all_conflicts.extend(window_conflicts)

        # blend this window's variables into the full timeline
        for ci, v in enumerate(variables):
            root = v.root_positions.detach().numpy()
            inc = v.increments.detach().numpy()
            if w_start >= filled:  # first window
                roots_full[ci][w_start:w_end] = root
                incs_full[ci][w_start:w_end] = inc
            else:
                ov = filled - w_start
                ramp = np.linspace(0.0, 1.0, ov)
                roots_full[ci][w_start:filled] = (
                    (1 - ramp)[:, None] * roots_full[ci][w_start:filled]
                    + ramp[:, None] * root[:ov]
                )
                incs_full[ci][w_start:filled] = (
                    (1 - ramp)[:, None, None] * incs_full[ci][w_start:filled]
                    + ramp[:, None, None] * inc[:ov]
                )
                roots_full[ci][filled:w_end] = root[ov:]
                incs_full[ci][filled:w_end] = inc[ov:]
        filled = w_end

        window_reports.append(
            {
                "frame_start": w_start,
                "frame_end": w_end,
                "iterations": rows,
                "conflicts": [c.to_dict() for c in window_conflicts],
                "balance_updates": balance_updates,
            }
        )

    wall = time.perf_counter() - t0

    animations = []
    for ci, case in enumerate(cases):
        q_init = torch.tensor(inits[ci].rotations, dtype=DTYPE)
        inc = torch.tensor(incs_full[ci], dtype=DTYPE)
        rot = tquat.mul(q_init, tquat.from_rotvec(inc))
        rot = rot / torch.linalg.norm(rot, dim=-1, keepdim=True)
        animations.append(Animation(animation.fps, roots_full[ci], rot.numpy()))

    report = Report(
        windows=window_reports,
        conflicts=[c.to_dict() for c in all_conflicts],
        characters=[c.target.name for c in cases],
        n_frames=n_frames,
        fps=animation.fps,
        config=cfg.to_dict(),
        wall_clock_s=wall,
        frames_per_second=n_frames / wall if wall > 0 else 0.0,
    )
    return RetargetResult(animations, report)


def build_problem(
    source: Character,
    animation: Animation,
    target: Character,
    mapping: BoneMapping,
    config: Optional[RetargetConfig] = None,
    heightfield: Optional[HeightField] = None,
    source_heightfield: Optional[HeightField] = None,
    extra_cases: Sequence[RetargetCase] = (),
) -> RetargetProblem:
    """One-window problem over the whole clip, for tests and tooling."""
    cfg = config or RetargetConfig()
    cases = [RetargetCase(source, animation, target, mapping)] + list(extra_cases)
    inits = [
        naive_retarget(c.source.skeleton, c.target.skeleton, c.mapping, c.animation)
        for c in cases
    ]
    return RetargetProblem(
        cases,
        cfg,
        inits,
        heightfield=heightfield,
        source_heightfield=source_heightfield,
    )
