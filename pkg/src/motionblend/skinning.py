"""Bind splats to motion graphs and deform them frame-to-frame.

Weights are painted once against the canonical-frame graph, then per-frame
link motions are blended onto each splat with dual quaternion skinning.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _diffpipe as dp
from . import kernels
from .errors import ValidationError
from .geometry import (
    Pose,
    dq_blend,
    matrix_to_quat,
    pose_to_dq,
    quat_between,
    quat_mul,
    quat_normalize,
    quat_rotate,
)
from .graphs import KIND_TREE, GraphTopology, forward_kinematics, link_segments

PAINT_MODES = ("softmax", "normalized")


@dataclass
class Splat:
    """Single point-level primitive."""

    pose: Pose
    scale: np.ndarray = field(default_factory=lambda: np.full(3, 0.01))
    opacity: float = 1.0
    color: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))
    instance_id: int = 0

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(3)
        if np.any(self.scale <= 0):
            raise ValidationError("splat scale must be positive")
        if not (0.0 <= self.opacity <= 1.0):
            raise ValidationError("opacity must lie in [0,1]")


class Splats:
    """Column store of splats; cheap to slice, deterministic to iterate."""

    def __init__(self, positions, rotations=None, scales=None, opacities=None, colors=None, instance_ids=None):
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3).copy()
        n = self.positions.shape[0]
        self.rotations = (
            np.tile([1.0, 0, 0, 0], (n, 1)) if rotations is None else quat_normalize(np.asarray(rotations, dtype=np.float64).reshape(n, 4))
        )
        self.scales = np.full((n, 3), 0.01) if scales is None else np.asarray(scales, dtype=np.float64).reshape(n, 3).copy()
        self.opacities = np.ones(n) if opacities is None else np.asarray(opacities, dtype=np.float64).reshape(n).copy()
        self.colors = np.full((n, 3), 0.5) if colors is None else np.asarray(colors, dtype=np.float64).reshape(n, 3).copy()
        self.instance_ids = (
            np.zeros(n, dtype=np.int64) if instance_ids is None else np.asarray(instance_ids, dtype=np.int64).reshape(n).copy()
        )
        if np.any(self.scales <= 0):
            raise ValidationError("splat scales must be positive")
        if np.any((self.opacities < 0) | (self.opacities > 1)):
            raise ValidationError("opacities must lie in [0,1]")
        if np.any(self.instance_ids < 0):
            raise ValidationError("instance ids must be nonnegative")

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __getitem__(self, i: int) -> Splat:
        return Splat(
            Pose(self.rotations[i], self.positions[i]),
            self.scales[i],
            float(self.opacities[i]),
            self.colors[i],
            int(self.instance_ids[i]),
        )

    @classmethod
    def from_list(cls, splats: Iterable[Splat]) -> "Splats":
        splats = list(splats)
        return cls(
            [s.pose.translation for s in splats],
            [s.pose.rotation for s in splats],
            [s.scale for s in splats],
            [s.opacity for s in splats],
            [s.color for s in splats],
            [s.instance_id for s in splats],
        )

    def copy(self) -> "Splats":
        return Splats(self.positions, self.rotations, self.scales, self.opacities, self.colors, self.instance_ids)

    def instance_count(self) -> int:
        return int(self.instance_ids.max()) + 1 if len(self) else 0


@dataclass
class WeightPainting:
    """Per-splat probability vectors over links plus the kernel radii."""

    gammas: np.ndarray  # (L,)
    weights: np.ndarray  # (N,L), rows on the simplex
    mode: str = "softmax"
    top_k: int | None = None

    def __post_init__(self):
        self.gammas = np.asarray(self.gammas, dtype=np.float64).reshape(-1)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if np.any(self.gammas <= 0):
            raise ValidationError("gammas must be positive")
        if self.mode not in PAINT_MODES:
            raise ValidationError(f"painting mode must be one of {PAINT_MODES}")
        rows = self.weights.sum(axis=-1)
        if np.any(self.weights < 0) or np.any(np.abs(rows - 1.0) > 1e-12):
            raise ValidationError("weight rows must be probability vectors")


def _as_segments(link_segments_0) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(link_segments_0, tuple) and len(link_segments_0) == 2:
        starts, ends = link_segments_0
        return np.asarray(starts, dtype=np.float64).reshape(-1, 3), np.asarray(ends, dtype=np.float64).reshape(-1, 3)
    arr = np.asarray(link_segments_0, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[1:] == (2, 3):
        return arr[:, 0], arr[:, 1]
    raise ValidationError("link segments must be (starts, ends) or an (L,2,3) array")


def paint_weights(x0, link_segments_0, gammas, mode: str = "softmax", top_k: int | None = None) -> np.ndarray:
    """Probability vector(s) over links from the distance kernel exp(-gamma*d).

    softmax mode feeds the kernel values through a softmax (which caps the
    max/min weight ratio at e); normalized mode divides each kernel value by
    their sum. With top_k, links outside the k best kernels get weight zero.
    """
    starts, ends = _as_segments(link_segments_0)
    if starts.shape[0] == 0:
        raise ValidationError("weight painting needs at least one link")
    gammas = np.asarray(gammas, dtype=np.float64).reshape(-1)
    if np.any(gammas <= 0):
        raise ValidationError("gammas must be positive")
    if mode not in PAINT_MODES:
        raise ValidationError(f"painting mode must be one of {PAINT_MODES}")
    x = np.asarray(x0, dtype=np.float64)
    single = x.ndim == 1
    pts = x.reshape(-1, 3)
    dist, _, _ = kernels.segment_distances(pts, starts, ends)
    neg = -gammas[None, :] * dist
    logits = np.exp(neg) if mode == "softmax" else neg
    shift = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - shift)
    if top_k is not None:
        if top_k < 1:
            raise ValidationError("top_k must be positive")
        e = e * dp.topk_mask(logits, int(top_k))
    w = e / e.sum(axis=1, keepdims=True)
    return w[0] if single else w


def default_gammas(topology: GraphTopology, params) -> np.ndarray:
    """Kernel radii matched to graph density: 1 / mean nearest-link spacing."""
    starts, ends = link_segments(topology, params)
    mids = 0.5 * (starts + ends)
    n = mids.shape[0]
    if n >= 2:
        diff = mids[:, None, :] - mids[None, :, :]
        d = np.sqrt(np.einsum("ijd,ijd->ij", diff, diff))
        np.fill_diagonal(d, np.inf)
        spacing = float(d.min(axis=1).mean())
    else:
        spacing = float(np.linalg.norm(ends[0] - starts[0]))
    if spacing <= 1e-12:
        return np.ones(n)
    return np.full(n, 1.0 / spacing)


def paint_splats(splats: Splats, topology: GraphTopology, params0, gammas=None, mode: str = "softmax", top_k=None) -> WeightPainting:
    """Paint every splat against the canonical-frame graph."""
    if gammas is None:
        gammas = default_gammas(topology, params0)
    starts, ends = link_segments(topology, params0)
    w = paint_weights(splats.positions, (starts, ends), gammas, mode, top_k)
    return WeightPainting(np.asarray(gammas, dtype=np.float64), np.atleast_2d(w), mode, top_k)


def blend_motion(relative_link_transforms: Sequence[Pose], weights) -> Pose:
    """Blend relative link transforms with dual quaternion skinning."""
    return dq_blend([pose_to_dq(p) for p in relative_link_transforms], weights)


def _params_equal(topology: GraphTopology, a, b) -> bool:
    if a is b:
        return True
    if topology.kind == KIND_TREE:
        return (
            np.array_equal(a.rotations, b.rotations)
            and np.array_equal(a.root_pose.rotation, b.root_pose.rotation)
            and np.array_equal(a.root_pose.translation, b.root_pose.translation)
            and np.array_equal(a.link_lengths, b.link_lengths)
        )
    return np.array_equal(a.joint_positions, b.joint_positions)


def _link_ups(joints: np.ndarray, links: np.ndarray, apex: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    """Triangle-normal up vectors with the canonical-axis fallback, vectorized."""
    s = joints[links[:, 0]]
    e = joints[links[:, 1]]
    d = e - s
    a = joints[np.where(apex < 0, 0, apex)] - s
    n = np.cross(d, a)
    scale = np.linalg.norm(d, axis=-1) * np.linalg.norm(a, axis=-1)
    usable = (apex >= 0) & (np.linalg.norm(n, axis=-1) > 1e-9 * np.maximum(scale, 1e-30))
    return np.where(usable[:, None], n, fallback)


def _lookat_rotations(dirs: np.ndarray, ups: np.ndarray) -> np.ndarray:
    z = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
    y = ups - np.sum(ups * z, axis=-1, keepdims=True) * z
    y = y / np.linalg.norm(y, axis=-1, keepdims=True)
    x = np.cross(y, z)
    return np.stack([x, y, z], axis=-1)


def relative_tree_transforms(topology: GraphTopology, params0, params_t) -> tuple[np.ndarray, np.ndarray]:
    """Per-link relative rotations (L,4) and translations (L,3) between frames."""
    _, poses0 = forward_kinematics(topology, params0)
    _, posest = forward_kinematics(topology, params_t)
    q0 = np.stack([p.rotation for p in poses0])
    p0 = np.stack([p.translation for p in poses0])
    qt = np.stack([p.rotation for p in posest])
    pt = np.stack([p.translation for p in posest])
    qrel = quat_mul(qt, q0 * np.array([1.0, -1, -1, -1]))
    trel = pt - quat_rotate(qrel, p0)
    return qrel, trel


def relative_deformable_rotations(topology: GraphTopology, params0, params_t) -> np.ndarray:
    """Per-link relative rotation quaternions (L,4) from the look-at frames."""
    j0 = params0.joint_positions
    jt = params_t.joint_positions
    apex = topology.apex_per_link()
    s0, e0 = j0[topology.links[:, 0]], j0[topology.links[:, 1]]
    st, et = jt[topology.links[:, 0]], jt[topology.links[:, 1]]
    d0, dt = e0 - s0, et - st
    # fallback up: a fixed axis at the canonical frame, parallel-transported
    # to frame t by the minimal rotation between link directions
    fb0 = dp.fallback_up_axes(d0)
    transport = quat_between(
        d0 / np.linalg.norm(d0, axis=-1, keepdims=True), dt / np.linalg.norm(dt, axis=-1, keepdims=True)
    )
    fbt = quat_rotate(transport, fb0)
    r0 = _lookat_rotations(d0, _link_ups(j0, topology.links, apex, fb0))
    rt = _lookat_rotations(dt, _link_ups(jt, topology.links, apex, fbt))
    return matrix_to_quat(rt @ np.swapaxes(r0, -1, -2))


def deform_splats(splats: Splats, topology: GraphTopology, params_0, params_t, painting: WeightPainting) -> Splats:
    """Deform splats from the canonical frame to frame t.

    Scale, opacity, color and instance ids pass through bit-identical; only
    poses change. When params_t equals params_0 the input is returned as a
    copy (the blend is the identity by construction).
    """
    if painting.weights.shape != (len(splats), topology.link_count):
        raise ValidationError("painting does not match splats/topology")
    if _params_equal(topology, params_0, params_t):
        return splats.copy()
    if topology.kind == KIND_TREE:
        qrel, trel = relative_tree_transforms(topology, params_0, params_t)
        rot, trans = kernels.blend_tree(qrel, trel, painting.weights)
    else:
        qrel = relative_deformable_rotations(topology, params_0, params_t)
        j0, jt = params_0.joint_positions, params_t.joint_positions
        s0, e0 = j0[topology.links[:, 0]], j0[topology.links[:, 1]]
        st, et = jt[topology.links[:, 0]], jt[topology.links[:, 1]]
        seg0 = e0 - s0
        if np.any(np.einsum("ld,ld->l", seg0, seg0) < 1e-18):
            raise ValidationError("zero-length link in canonical frame")
        n = len(splats)
        if painting.top_k is not None and painting.top_k < topology.link_count:
            k = int(painting.top_k)
            link_idx = np.argsort(-painting.weights, axis=1, kind="stable")[:, :k]
            w = np.take_along_axis(painting.weights, link_idx, axis=1)
        else:
            link_idx = np.broadcast_to(np.arange(topology.link_count), (n, topology.link_count))
            w = painting.weights
        _, ratio_full, foot_full = kernels.segment_distances(splats.positions, s0, e0)
        rows = np.arange(n)[:, None]
        ratio = ratio_full[rows, link_idx]
        n_x0 = foot_full[rows, link_idx]
        n_xt = st[link_idx] + ratio[..., None] * (et - st)[link_idx]
        trans_nk = n_xt - quat_rotate(qrel[link_idx], n_x0)
        rot, trans = kernels.blend_deform(qrel, trans_nk, link_idx, w)
    out = splats.copy()
    out.positions = quat_rotate(rot, splats.positions) + trans
    out.rotations = quat_normalize(quat_mul(rot, splats.rotations))
    return out
