"""Motion graphs: kinematic trees and deformable graphs.

Covers topology validation, forward kinematics, per-splat link frames for
deformable graphs, graph initialization from point clouds, template fitting,
damped-least-squares inverse kinematics, and 2D keypoint lifting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _diffpipe as dp
from . import autodiff as ad
from . import kernels
from .errors import DegenerateLinkError, OptimizationError, TopologyError, ValidationError
from .geometry import Pose, look_at, quat_between, quat_mul, quat_normalize, quat_rotate

KIND_TREE = "kinematic-tree"
KIND_DEFORMABLE = "deformable"


@dataclass
class GraphTopology:
    """Fixed joint/link structure; never receives gradients or time variation."""

    kind: str
    joint_count: int
    links: np.ndarray  # (L,2) int, tree links ordered (parent, child)
    root_index: int | None = None
    up_triangles: np.ndarray | None = None  # (M,2) int rows (link_index, apex_joint)

    def __post_init__(self):
        self.links = np.asarray(self.links, dtype=np.int64).reshape(-1, 2)
        if self.kind not in (KIND_TREE, KIND_DEFORMABLE):
            raise TopologyError(f"unknown graph kind: {self.kind!r}")
        if self.joint_count < 2:
            raise TopologyError("a motion graph needs at least 2 joints")
        if self.links.size and (self.links.min() < 0 or self.links.max() >= self.joint_count):
            raise TopologyError("link indices out of range")
        if np.any(self.links[:, 0] == self.links[:, 1]):
            raise TopologyError("self-loop link")
        if self.up_triangles is not None:
            self.up_triangles = np.asarray(self.up_triangles, dtype=np.int64).reshape(-1, 2)
        if self.kind == KIND_TREE:
            self._validate_tree()

    def _validate_tree(self):
        if self.root_index is None or not (0 <= self.root_index < self.joint_count):
            raise TopologyError("tree requires a valid root_index")
        if self.links.shape[0] != self.joint_count - 1:
            raise TopologyError("tree must have exactly J-1 links")
        seen_child = np.zeros(self.joint_count, dtype=bool)
        for parent, child in self.links:
            if child == self.root_index:
                raise TopologyError("root joint cannot be a link end")
            if seen_child[child]:
                raise TopologyError(f"joint {child} has multiple parents")
            seen_child[child] = True
        # parent-first ordering doubles as a reachability check
        self._order = self._topological_links()

    def _topological_links(self) -> list[int]:
        by_parent: dict[int, list[int]] = {}
        for l, (parent, _) in enumerate(self.links):
            by_parent.setdefault(int(parent), []).append(l)
        order: list[int] = []
        stack = [self.root_index]
        visited = {self.root_index}
        while stack:
            j = stack.pop()
            for l in by_parent.get(int(j), []):
                child = int(self.links[l, 1])
                order.append(l)
                visited.add(child)
                stack.append(child)
        if len(visited) != self.joint_count:
            raise TopologyError("tree links do not connect all joints to the root")
        return order

    @property
    def link_count(self) -> int:
        return int(self.links.shape[0])

    def tree_order(self) -> list[int]:
        if self.kind != KIND_TREE:
            raise TopologyError("tree_order is only defined for kinematic trees")
        return list(self._order)

    def apex_per_link(self) -> np.ndarray:
        """(L,) apex joint per link, -1 where no triangle was assigned."""
        apex = np.full(self.link_count, -1, dtype=np.int64)
        if self.up_triangles is not None:
            for link, joint in self.up_triangles:
                apex[int(link)] = int(joint)
        return apex


@dataclass
class KinematicTreeParams:
    """Per-frame rotations and root pose (theta) plus static link lengths (phi)."""

    rotations: np.ndarray  # (J,4) unit quaternions
    root_pose: Pose
    link_lengths: np.ndarray  # (L,) positive

    def __post_init__(self):
        self.rotations = quat_normalize(np.asarray(self.rotations, dtype=np.float64).reshape(-1, 4))
        self.link_lengths = np.asarray(self.link_lengths, dtype=np.float64).reshape(-1).copy()
        if np.any(self.link_lengths <= 0):
            raise ValidationError("link lengths must be positive")

    @classmethod
    def rest(cls, topology: GraphTopology, lengths) -> "KinematicTreeParams":
        return cls(np.tile([1.0, 0, 0, 0], (topology.joint_count, 1)), Pose.identity(), lengths)

    def copy(self) -> "KinematicTreeParams":
        return KinematicTreeParams(
            self.rotations.copy(), Pose(self.root_pose.rotation, self.root_pose.translation), self.link_lengths.copy()
        )


@dataclass
class DeformableGraphParams:
    """Free joint positions; the whole of theta for a deformable graph."""

    joint_positions: np.ndarray  # (J,3)

    def __post_init__(self):
        self.joint_positions = np.asarray(self.joint_positions, dtype=np.float64).reshape(-1, 3).copy()
        if not np.all(np.isfinite(self.joint_positions)):
            raise ValidationError("joint positions must be finite")

    def copy(self) -> "DeformableGraphParams":
        return DeformableGraphParams(self.joint_positions.copy())


GraphParams = "KinematicTreeParams | DeformableGraphParams"


@dataclass
class MotionSequence:
    """One set of graph parameters per frame over a shared topology."""

    topology: GraphTopology
    thetas: list
    canonical_index: int = 0

    def __post_init__(self):
        if not self.thetas:
            raise ValidationError("motion sequence needs at least one frame")
        if not (0 <= self.canonical_index < len(self.thetas)):
            raise ValidationError("canonical_index out of range")

    @classmethod
    def from_canonical(cls, topology, params, frame_count: int, canonical_index: int = 0):
        return cls(topology, [params.copy() for _ in range(frame_count)], canonical_index)

    @property
    def frame_count(self) -> int:
        return len(self.thetas)

    def canonical(self):
        return self.thetas[self.canonical_index]


# ---------------------------------------------------------------------------
# forward kinematics


def forward_kinematics(topology: GraphTopology, params: KinematicTreeParams):
    """Joint positions and per-link poses of a kinematic tree.

    Each link extends along the local +x axis of its start joint's
    accumulated frame, scaled by the link length; the link pose is that
    accumulated frame.
    """
    if topology.kind != KIND_TREE:
        raise TopologyError("forward kinematics requires a kinematic tree")
    n = topology.joint_count
    acc_q = np.zeros((n, 4))
    acc_p = np.zeros((n, 3))
    root = topology.root_index
    acc_q[root] = quat_mul(params.root_pose.rotation, params.rotations[root])
    acc_p[root] = params.root_pose.translation
    for l in topology.tree_order():
        parent, child = topology.links[l]
        acc_p[child] = acc_p[parent] + quat_rotate(acc_q[parent], [params.link_lengths[l], 0.0, 0.0])
        acc_q[child] = quat_mul(acc_q[parent], params.rotations[child])
    link_poses = [Pose(acc_q[p], acc_p[p]) for p, _ in topology.links]
    return acc_p, link_poses


def link_segments(topology: GraphTopology, params) -> tuple[np.ndarray, np.ndarray]:
    """Segment endpoints (starts (L,3), ends (L,3)) for either graph kind."""
    if topology.kind == KIND_TREE:
        joints, _ = forward_kinematics(topology, params)
    else:
        joints = params.joint_positions
    return joints[topology.links[:, 0]], joints[topology.links[:, 1]]


# ---------------------------------------------------------------------------
# deformable link frames


def projection_point(link_at_0, link_at_t, x0):
    """Closest point on the canonical link and its advected position.

    Returns (n_x0, n_xt, ratio). The ratio is computed on the canonical
    segment and clamped to [0,1]; the time-t point sits at the same
    fractional position, so it moves proportionally to link stretch.
    """
    s0, e0 = (np.asarray(v, dtype=np.float64) for v in link_at_0)
    st, et = (np.asarray(v, dtype=np.float64) for v in link_at_t)
    x0 = np.asarray(x0, dtype=np.float64)
    d0 = e0 - s0
    len2 = float(d0 @ d0)
    if len2 < 1e-18 or float((et - st) @ (et - st)) < 1e-18:
        raise DegenerateLinkError("zero-length link")
    ratio = float(np.clip((x0 - s0) @ d0 / len2, 0.0, 1.0))
    n_x0 = s0 + ratio * d0
    n_xt = st + ratio * (et - st)
    return n_x0, n_xt, ratio


def _link_up(joints: np.ndarray, topology: GraphTopology, apex: np.ndarray, l: int, fallback: np.ndarray) -> np.ndarray:
    s, e = joints[topology.links[l, 0]], joints[topology.links[l, 1]]
    d = e - s
    if apex[l] >= 0:
        a = joints[apex[l]] - s
        n = np.cross(d, a)
        scale = np.linalg.norm(d) * np.linalg.norm(a)
        if np.linalg.norm(n) > 1e-9 * max(scale, 1e-30):
            return n
    return fallback


def deformable_link_frames(topology: GraphTopology, params_0, params_t, x0):
    """Per-link look-at frames at the canonical frame and frame t for one viewpoint.

    The frame position is the projection point of ``x0``; the forward axis is
    the link direction; the up axis is the triangle face normal (or the axis
    fallback). The time-t projection point reuses the canonical ratio.
    """
    if topology.kind != KIND_DEFORMABLE:
        raise TopologyError("deformable link frames require a deformable graph")
    j0 = params_0.joint_positions
    jt = params_t.joint_positions
    apex = topology.apex_per_link()
    poses_0, poses_t = [], []
    for l in range(topology.link_count):
        s0, e0 = j0[topology.links[l, 0]], j0[topology.links[l, 1]]
        st, et = jt[topology.links[l, 0]], jt[topology.links[l, 1]]
        n_x0, n_xt, _ = projection_point((s0, e0), (st, et), x0)
        # fallback up: fixed axis at the canonical frame, parallel-transported
        # to frame t by the minimal rotation between the link directions
        d0, dt = e0 - s0, et - st
        fb0 = dp.fallback_up_axes(d0[None])[0]
        fbt = quat_rotate(quat_between(d0 / np.linalg.norm(d0), dt / np.linalg.norm(dt)), fb0)
        poses_0.append(look_at(n_x0, d0, _link_up(j0, topology, apex, l, fb0)))
        poses_t.append(look_at(n_xt, dt, _link_up(jt, topology, apex, l, fbt)))
    return poses_0, poses_t


# ---------------------------------------------------------------------------
# deformable graph initialization


def _union_find_components(n: int, edges: Sequence[tuple[int, int]]) -> np.ndarray:
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    return np.array([find(i) for i in range(n)])


def _pair_links_into_triangles(links: np.ndarray) -> np.ndarray:
    """Greedy pairing of links sharing a joint; apex = far endpoint of the pair."""
    n_links = links.shape[0]
    paired = np.zeros(n_links, dtype=bool)
    rows = []
    for i in range(n_links):
        if paired[i]:
            continue
        si, ei = links[i]
        for j in range(i + 1, n_links):
            if paired[j]:
                continue
            sj, ej = links[j]
            shared = {si, ei} & {sj, ej}
            if not shared:
                continue
            sh = shared.pop()
            far_j = sj if ej == sh else ej
            far_i = si if ei == sh else ei
            rows.append((i, int(far_j)))
            rows.append((j, int(far_i)))
            paired[i] = paired[j] = True
            break
    return np.asarray(rows, dtype=np.int64).reshape(-1, 2)


def init_deformable(cloud: np.ndarray, joint_count: int, neighbors: int = 4):
    """Build a deformable graph over a point cloud.

    Joints come from farthest-point sampling seeded at the point nearest the
    centroid; links from symmetrized k-nearest-neighbor edges, patched into a
    single component with shortest connecting edges.
    """
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if joint_count < 2:
        raise ValidationError("joint_count must be at least 2")
    if joint_count > cloud.shape[0]:
        raise ValidationError("joint_count exceeds cloud size")
    if neighbors < 1:
        raise ValidationError("neighbors must be at least 1")
    centroid = cloud.mean(axis=0)
    seed = int(np.argmin(np.einsum("nd,nd->n", cloud - centroid, cloud - centroid)))
    # The seed anchors the greedy selection but is not itself a joint, so the
    # first joint lands at the cloud extreme farthest from the centroid.
    if joint_count == cloud.shape[0]:
        idx = kernels.fps_sample(cloud, joint_count, seed)
    else:
        idx = kernels.fps_sample(cloud, joint_count + 1, seed)[1:]
    joints = cloud[idx]

    diff = joints[:, None, :] - joints[None, :, :]
    d2 = np.einsum("ijd,ijd->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    k = min(neighbors, joint_count - 1)
    edges = set()
    for i in range(joint_count):
        for j in np.argsort(d2[i], kind="stable")[:k]:
            edges.add((min(i, int(j)), max(i, int(j))))

    comp = _union_find_components(joint_count, sorted(edges))
    while len(set(comp)) > 1:
        best = None
        for i in range(joint_count):
            for j in range(i + 1, joint_count):
                if comp[i] != comp[j]:
                    cand = (d2[i, j], i, j)
                    if best is None or cand < best:
                        best = cand
        edges.add((best[1], best[2]))
        comp = _union_find_components(joint_count, sorted(edges))

    links = np.asarray(sorted(edges), dtype=np.int64)
    topology = GraphTopology(
        KIND_DEFORMABLE, joint_count, links, up_triangles=_pair_links_into_triangles(links)
    )
    return topology, DeformableGraphParams(joints)


# ---------------------------------------------------------------------------
# template fitting and inverse kinematics


def _tree_param_leaves(params: KinematicTreeParams, learn_lengths: bool):
    leaves = {
        "rot": ad.Var(params.rotations.copy()),
        "root_q": ad.Var(params.root_pose.rotation.copy()),
        "root_t": ad.Var(params.root_pose.translation.copy()),
    }
    if learn_lengths:
        leaves["log_len"] = ad.Var(np.log(params.link_lengths))
    return leaves


def _tree_params_from_leaves(topology, leaves, base: KinematicTreeParams) -> KinematicTreeParams:
    lengths = np.exp(leaves["log_len"].value) if "log_len" in leaves else base.link_lengths.copy()
    return KinematicTreeParams(
        quat_normalize(leaves["rot"].value),
        Pose(leaves["root_q"].value, leaves["root_t"].value),
        lengths,
    )


def _mean_point_to_link_distance(topology, leaves, cloud, lengths_const):
    lengths = ad.exp(leaves["log_len"]) if "log_len" in leaves else lengths_const
    joints, _, _ = dp.d_fk(
        topology.links, topology.tree_order(), topology.root_index,
        leaves["rot"], leaves["root_q"], leaves["root_t"], lengths,
    )
    starts = joints[topology.links[:, 0]]
    ends = joints[topology.links[:, 1]]
    dist, _, _ = dp.d_segment_geometry(cloud, starts, ends)
    nearest = np.argmin(ad.value_of(dist), axis=1)
    picked = dist[(np.arange(cloud.shape[0]), nearest)]
    return ad.amean(picked)


def fit_kinematic_tree(
    template,
    skeleton_cloud: np.ndarray,
    iters: int = 500,
    step: float = 0.03,
    learn_lengths: bool = True,
):
    """Fit tree parameters to a skeleton cloud by gradient descent.

    Minimizes the mean distance from cloud points to their nearest link and
    returns the best parameters seen, so the reported objective never
    increases over accepted iterations.
    """
    topology, params = template
    cloud = np.asarray(skeleton_cloud, dtype=np.float64).reshape(-1, 3)
    if cloud.shape[0] == 0:
        raise ValidationError("skeleton cloud is empty")
    leaves = _tree_param_leaves(params, learn_lengths)
    names = list(leaves)
    sizes = [leaves[n].value.size for n in names]
    opt = ad.Adam(sum(sizes), lr=step)
    flat = np.concatenate([leaves[n].value.reshape(-1) for n in names])
    best_flat, best_obj = flat.copy(), np.inf
    for _ in range(iters):
        offset = 0
        for n, s in zip(names, sizes):
            leaves[n] = ad.Var(flat[offset : offset + s].reshape(leaves[n].value.shape))
            offset += s
        obj = _mean_point_to_link_distance(topology, leaves, cloud, params.link_lengths)
        value = float(obj.value)
        if not np.isfinite(value):
            raise OptimizationError("point-to-link objective diverged")
        if value < best_obj:
            best_obj, best_flat = value, flat.copy()
        gs = ad.grad(obj, [leaves[n] for n in names])
        flat = opt.step(flat, np.concatenate([g.reshape(-1) for g in gs]))
    offset = 0
    for n, s in zip(names, sizes):
        leaves[n] = ad.Var(best_flat[offset : offset + s].reshape(leaves[n].value.shape))
        offset += s
    return _tree_params_from_leaves(topology, leaves, params)


@dataclass
class IKResult:
    params: KinematicTreeParams
    residual: float  # worst per-target position error
    reached: bool
    per_target: dict = field(default_factory=dict)


def inverse_kinematics(
    topology: GraphTopology,
    params: KinematicTreeParams,
    targets: Mapping[int, "Pose | np.ndarray"],
    iters: int = 200,
    damping: float = 1e-2,
    tolerance: float = 1e-8,
) -> IKResult:
    """Damped least squares on joint rotations toward position/pose targets.

    The root pose is held fixed unless the root joint itself is targeted.
    Unreachable targets leave a residual above tolerance with the result
    flagged unreached.
    """
    if topology.kind != KIND_TREE:
        raise TopologyError("inverse kinematics requires a kinematic tree")
    for j in targets:
        if not (0 <= int(j) < topology.joint_count):
            raise ValidationError(f"target joint {j} does not exist")
    target_joints = sorted(int(j) for j in targets)
    learn_root = topology.root_index in target_joints

    rot = params.rotations.copy()
    root_q = params.root_pose.rotation.copy()
    root_t = params.root_pose.translation.copy()

    def residual_and_jac(rv, rq, rt, want_jac: bool):
        leaf_rot = ad.Var(rv)
        leaf_q = ad.Var(rq)
        leaf_t = ad.Var(rt)
        joints, quats, _ = dp.d_fk(
            topology.links, topology.tree_order(), topology.root_index,
            leaf_rot, leaf_q, leaf_t, params.link_lengths,
        )
        acc_rot = _accumulated_joint_quats(topology, leaf_rot, leaf_q)
        parts = []
        for j in target_joints:
            tgt = targets[j]
            if isinstance(tgt, Pose):
                parts.append(ad.sub(np.asarray(tgt.translation), joints[j]))
                qerr = dp.d_quat_mul(tgt.rotation, dp.d_quat_conj(acc_rot[j]))
                sign = 1.0 if float(ad.value_of(qerr)[0]) >= 0 else -1.0
                parts.append(ad.mul(qerr[(slice(1, 4),)], 2.0 * sign))
            else:
                parts.append(ad.sub(np.asarray(tgt, dtype=np.float64), joints[j]))
        err = ad.concatenate(parts, axis=0)
        leaves = [leaf_rot] + ([leaf_q, leaf_t] if learn_root else [])
        if not want_jac:
            return ad.value_of(err), None
        jacs = ad.jacobian(err, leaves)
        return ad.value_of(err), np.concatenate([j for j in jacs], axis=1)

    def position_residual(rv, rq, rt) -> float:
        p = KinematicTreeParams(quat_normalize(rv), Pose(rq, rt), params.link_lengths)
        joints, _ = forward_kinematics(topology, p)
        worst = 0.0
        per = {}
        for j in target_joints:
            tgt = targets[j]
            goal = tgt.translation if isinstance(tgt, Pose) else np.asarray(tgt, dtype=np.float64)
            per[j] = float(np.linalg.norm(joints[j] - goal))
            worst = max(worst, per[j])
        return worst, per

    lam = damping
    best = (rot.copy(), root_q.copy(), root_t.copy())
    best_err = float(np.linalg.norm(residual_and_jac(rot, root_q, root_t, False)[0]))
    for _ in range(iters):
        e, jac = residual_and_jac(rot, root_q, root_t, True)
        m = e.shape[0]
        # residual is target - current, so jac = -d(current)/d(params)
        delta = -jac.T @ np.linalg.solve(jac @ jac.T + lam * lam * np.eye(m), e)
        off = rot.size
        cand_rot = rot + delta[:off].reshape(rot.shape)
        cand_q, cand_t = root_q, root_t
        if learn_root:
            cand_q = root_q + delta[off : off + 4]
            cand_t = root_t + delta[off + 4 : off + 7]
        cand_err = float(np.linalg.norm(residual_and_jac(cand_rot, cand_q, cand_t, False)[0]))
        if cand_err < best_err:
            rot, root_q, root_t = cand_rot, cand_q, cand_t
            best = (rot.copy(), root_q.copy(), root_t.copy())
            best_err = cand_err
            lam = max(lam * 0.5, damping)
        else:
            lam *= 4.0
            if lam > 1e8:
                break
        if best_err < tolerance:
            break
    rot, root_q, root_t = best
    out = KinematicTreeParams(quat_normalize(rot), Pose(root_q, root_t), params.link_lengths)
    residual, per = position_residual(rot, root_q, root_t)
    return IKResult(out, residual, residual <= max(tolerance, 1e-6), per)


def _accumulated_joint_quats(topology, leaf_rot, leaf_root_q):
    rot = dp.d_quat_normalize(leaf_rot)
    acc = [None] * topology.joint_count
    acc[topology.root_index] = dp.d_quat_mul(dp.d_quat_normalize(leaf_root_q), rot[topology.root_index])
    for l in topology.tree_order():
        parent, child = topology.links[l]
        acc[child] = dp.d_quat_mul(acc[int(parent)], rot[int(child)])
    return acc


# ---------------------------------------------------------------------------
# 2D keypoint lifting


def lift_2d_skeleton(keypoints_2d, depth_image, intrinsics):
    """Unproject 2D keypoints through a depth image.

    intrinsics is (fx, fy, cx, cy). Invalid depths are patched with the
    median of the valid 5x5 neighborhood; keypoints with no valid depth
    nearby come back flagged invalid (and positioned at nan).
    """
    fx, fy, cx, cy = (float(v) for v in intrinsics)
    depth = np.asarray(depth_image, dtype=np.float64)
    kps = np.asarray(keypoints_2d, dtype=np.float64).reshape(-1, 2)
    h, w = depth.shape
    points = np.full((kps.shape[0], 3), np.nan)
    valid = np.zeros(kps.shape[0], dtype=bool)
    for i, (u, v) in enumerate(kps):
        col = int(np.floor(u + 0.5))
        row = int(np.floor(v + 0.5))
        if not (0 <= col < w and 0 <= row < h):
            raise ValidationError(f"keypoint {i} at ({u}, {v}) is outside the image")
        d = depth[row, col]
        if not (np.isfinite(d) and d > 0):
            patch = depth[max(row - 2, 0) : row + 3, max(col - 2, 0) : col + 3]
            good = patch[np.isfinite(patch) & (patch > 0)]
            if good.size == 0:
                continue
            d = float(np.median(good))
        points[i] = [d * (u - cx) / fx, d * (v - cy) / fy, d]
        valid[i] = True
    return points, valid
