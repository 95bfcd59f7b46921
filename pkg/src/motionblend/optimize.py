"""Losses, the gradient contract, and the per-frame fitting loop.

The data term is a 3D point loss (correspondence MSE or symmetric chamfer);
canonical, keypoint and mask terms regularize the graph against its
initialization, 2D keypoints, and instance masks. Gradients come from the
reverse-mode scaffold and are certified against central finite differences
by ``check_gradients``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import _diffpipe as dp
from . import autodiff as ad
from . import kernels
from .autodiff import Adam, Var, value_of
from .errors import OptimizationError, ValidationError
from .geometry import Pose, quat_normalize
from .graphs import (
    KIND_TREE,
    DeformableGraphParams,
    KinematicTreeParams,
    MotionSequence,
    forward_kinematics,
)
from .render import Camera, render_instance_mask
from .sceneio import FrameSet, SceneCheckpoint
from .skinning import Splats, WeightPainting


@dataclass
class LossConfig:
    lambda_data: float = 1.0
    lambda_canonical: float = 0.1
    lambda_keypoint: float = 0.1
    lambda_mask: float = 0.1
    learn_gamma: bool = False
    learn_phi: bool = False

    def __post_init__(self):
        lams = (self.lambda_data, self.lambda_canonical, self.lambda_keypoint, self.lambda_mask)
        if any(l < 0 for l in lams):
            raise ValidationError("loss weights must be nonnegative")
        if all(l == 0 for l in lams):
            raise ValidationError("at least one loss weight must be positive")

    def to_dict(self) -> dict:
        return {
            "lambda_data": self.lambda_data,
            "lambda_canonical": self.lambda_canonical,
            "lambda_keypoint": self.lambda_keypoint,
            "lambda_mask": self.lambda_mask,
            "learn_gamma": self.learn_gamma,
            "learn_phi": self.learn_phi,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        return cls(**{k: d[k] for k in cls().to_dict() if k in d})


@dataclass
class OptimSettings:
    iters: int = 2000
    lr: float = 1e-2
    lr_decay: float = 0.05  # cosine decay floor, as a fraction of lr
    seed: int = 0
    strict: bool = False
    grad_check_h: float = 1e-5
    mask_radius: int = 2


class GradientProvider(Protocol):
    def evaluate(self, params: np.ndarray) -> float: ...

    def gradient(self, params: np.ndarray) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# plain loss functions


def data_loss(deformed, observed, correspondence: bool = True) -> float:
    """Mean squared distance (correspondence) or symmetric chamfer (unordered)."""
    pts = deformed.positions if isinstance(deformed, Splats) else np.asarray(deformed, dtype=np.float64)
    obs = np.asarray(observed, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0 or obs.shape[0] == 0:
        raise ValidationError("data loss needs non-empty point sets")
    if correspondence:
        if pts.shape != obs.shape:
            raise ValidationError("correspondence mode needs equal point counts")
        return float(np.mean(np.sum((pts - obs) ** 2, axis=1)))
    idx_ab = kernels.nearest_indices(pts, obs)
    idx_ba = kernels.nearest_indices(obs, pts)
    ab = np.mean(np.sum((pts - obs[idx_ab]) ** 2, axis=1))
    ba = np.mean(np.sum((obs - pts[idx_ba]) ** 2, axis=1))
    return float(ab + ba)


def canonical_reg(joints_now, joints_init) -> float:
    """Sum over joints of Euclidean drift from the pre-training positions."""
    now = np.asarray(joints_now, dtype=np.float64).reshape(-1, 3)
    init = np.asarray(joints_init, dtype=np.float64).reshape(-1, 3)
    if now.shape != init.shape:
        raise ValidationError("joint lists must have equal length")
    return float(np.linalg.norm(now - init, axis=1).sum())


@dataclass
class KeypointRegResult:
    value: float
    valid_count: int
    behind_camera: int

    def __float__(self):
        return self.value


def keypoint_reg(joints_3d, keypoints_2d, camera: Camera, validity=None) -> KeypointRegResult:
    """Mean L1 pixel error between projected joints and 2D keypoints.

    Joints behind the camera are excluded and counted; with no usable
    keypoints the loss is 0 with valid_count 0.
    """
    joints = np.asarray(joints_3d, dtype=np.float64).reshape(-1, 3)
    kps = np.asarray(keypoints_2d, dtype=np.float64).reshape(-1, 2)
    if joints.shape[0] != kps.shape[0]:
        raise ValidationError("keypoints must align with joints")
    mask = np.ones(joints.shape[0], dtype=bool) if validity is None else np.asarray(validity, dtype=bool)
    uv, depth = camera.project(joints)
    in_front = depth > 1e-9
    behind = int(np.count_nonzero(mask & ~in_front))
    use = mask & in_front
    if not np.any(use):
        return KeypointRegResult(0.0, 0, behind)
    l1 = np.abs(uv[use] - kps[use]).sum(axis=1)
    return KeypointRegResult(float(l1.mean()), int(use.sum()), behind)


def mask_loss(splats: Splats, instance_masks, camera: Camera, radius_px: int = 2) -> float:
    """Mean L1 between point-projected instance masks and reference masks."""
    refs = np.asarray(instance_masks)
    if refs.ndim != 3 or refs.shape[1] != camera.height or refs.shape[2] != camera.width:
        raise ValidationError("mask dimensions must match the camera")
    rendered = render_instance_mask(splats, camera, refs.shape[0], radius_px)
    return float(np.mean(np.abs(rendered.astype(np.float64) - refs.astype(np.float64))))


# ---------------------------------------------------------------------------
# scene containers


@dataclass
class SceneState:
    splats: Splats
    sequence: MotionSequence
    painting: WeightPainting
    camera: Camera | None = None


@dataclass
class FitData:
    frames: FrameSet
    keypoints: list | None = None  # per frame (K,3) arrays of x, y, confidence
    masks: list | None = None  # per frame (I,H,W) binary arrays


# ---------------------------------------------------------------------------
# differentiable scene loss


class SceneLossProvider:
    """Flattens learnable parameters and evaluates the total fitting loss.

    Learnables: theta for every frame (canonical included, anchored by the
    canonical regularizer), optionally log-gammas and log link lengths.
    """

    def __init__(self, scene: SceneState, data: FitData, cfg: LossConfig, settings: OptimSettings | None = None):
        if data.frames.frame_count != scene.sequence.frame_count:
            raise ValidationError("observed frames must match the motion sequence length")
        if data.frames.canonical_index != scene.sequence.canonical_index:
            raise ValidationError("canonical indices of data and sequence disagree")
        self.scene = scene
        self.data = data
        self.cfg = cfg
        self.settings = settings or OptimSettings()
        self.topology = scene.sequence.topology
        self.kind = self.topology.kind
        self.x0 = scene.splats.positions
        self.canonical_index = scene.sequence.canonical_index
        canon = scene.sequence.canonical()
        if self.kind == KIND_TREE:
            self.init_joints, _ = forward_kinematics(self.topology, canon)
            self.base_lengths = canon.link_lengths.copy()
        else:
            self.init_joints = canon.joint_positions.copy()
            self.base_lengths = None
        if cfg.lambda_keypoint > 0 and data.keypoints is not None and scene.camera is None:
            raise ValidationError("keypoint regularization needs a camera")
        if cfg.lambda_mask > 0 and data.masks is not None and scene.camera is None:
            raise ValidationError("mask loss needs a camera")
        self._build_layout()

    # parameter layout --------------------------------------------------
    def _build_layout(self):
        topo = self.topology
        blocks = []
        for t in range(self.scene.sequence.frame_count):
            if self.kind == KIND_TREE:
                blocks.append((f"rot{t}", (topo.joint_count, 4)))
                blocks.append((f"rootq{t}", (4,)))
                blocks.append((f"roott{t}", (3,)))
            else:
                blocks.append((f"pos{t}", (topo.joint_count, 3)))
        if self.cfg.learn_gamma:
            blocks.append(("loggamma", (topo.link_count,)))
        if self.cfg.learn_phi and self.kind == KIND_TREE:
            blocks.append(("loglen", (topo.link_count,)))
        self.blocks = blocks
        self.size = sum(int(np.prod(s)) for _, s in blocks)

    def pack(self) -> np.ndarray:
        parts = []
        for name, shape in self.blocks:
            if name.startswith("rot"):
                parts.append(self.scene.sequence.thetas[int(name[3:])].rotations.reshape(-1))
            elif name.startswith("rootq"):
                parts.append(self.scene.sequence.thetas[int(name[5:])].root_pose.rotation)
            elif name.startswith("roott"):
                parts.append(self.scene.sequence.thetas[int(name[5:])].root_pose.translation)
            elif name.startswith("pos"):
                parts.append(self.scene.sequence.thetas[int(name[3:])].joint_positions.reshape(-1))
            elif name == "loggamma":
                parts.append(np.log(self.scene.painting.gammas))
            elif name == "loglen":
                parts.append(np.log(self.base_lengths))
        return np.concatenate(parts)

    def _leaves(self, flat: np.ndarray) -> dict:
        leaves = {}
        offset = 0
        for name, shape in self.blocks:
            size = int(np.prod(shape))
            leaves[name] = Var(flat[offset : offset + size].reshape(shape))
            offset += size
        return leaves

    def unpack(self, flat: np.ndarray) -> tuple[MotionSequence, np.ndarray, np.ndarray | None]:
        """Rebuild (sequence, gammas, lengths) from a flat parameter vector."""
        leaves = self._leaves(flat)
        lengths = (
            np.exp(leaves["loglen"].value) if "loglen" in leaves else self.base_lengths
        )
        thetas = []
        for t in range(self.scene.sequence.frame_count):
            if self.kind == KIND_TREE:
                thetas.append(
                    KinematicTreeParams(
                        quat_normalize(leaves[f"rot{t}"].value),
                        Pose(leaves[f"rootq{t}"].value, leaves[f"roott{t}"].value),
                        lengths,
                    )
                )
            else:
                thetas.append(DeformableGraphParams(leaves[f"pos{t}"].value))
        seq = MotionSequence(self.topology, thetas, self.canonical_index)
        gammas = np.exp(leaves["loggamma"].value) if "loggamma" in leaves else self.scene.painting.gammas.copy()
        return seq, gammas, lengths

    # differentiable forward --------------------------------------------
    def _gammas_var(self, leaves):
        if "loggamma" in leaves:
            return ad.exp(leaves["loggamma"])
        return self.scene.painting.gammas

    def _fk(self, leaves, t):
        lengths = ad.exp(leaves["loglen"]) if "loglen" in leaves else self.base_lengths
        return dp.d_fk(
            self.topology.links,
            self.topology.tree_order(),
            self.topology.root_index,
            leaves[f"rot{t}"],
            leaves[f"rootq{t}"],
            leaves[f"roott{t}"],
            lengths,
        )

    def _positions_tree(self, leaves, t):
        topo = self.topology
        joints0, q0, p0 = self._fk(leaves, self.canonical_index)
        if t == self.canonical_index:
            jointst, qt, pt = joints0, q0, p0
        else:
            jointst, qt, pt = self._fk(leaves, t)
        s0 = joints0[topo.links[:, 0]]
        e0 = joints0[topo.links[:, 1]]
        dist, _, _ = dp.d_segment_geometry(self.x0, s0, e0)
        w = dp.d_paint(dist, self._gammas_var(leaves), self.scene.painting.mode, self.scene.painting.top_k)
        qrel, trel = dp.d_relative_link_quats(q0, qt, p0, pt)
        rot, trans = dp.d_blend_tree(qrel, trel, w)
        xt = ad.add(dp.d_quat_rotate(rot, self.x0), trans)
        return xt, jointst, joints0

    def _positions_deformable(self, leaves, t):
        topo = self.topology
        joints0 = leaves[f"pos{self.canonical_index}"]
        jointst = joints0 if t == self.canonical_index else leaves[f"pos{t}"]
        links = topo.links
        j0v = joints0.value
        s0v, e0v = j0v[links[:, 0]], j0v[links[:, 1]]
        seg = e0v - s0v
        if np.any(np.einsum("ld,ld->l", seg, seg) < 1e-18):
            raise OptimizationError("a canonical link collapsed to zero length")
        dist_values, _, _ = kernels.segment_distances(self.x0, s0v, e0v)
        gammas = self._gammas_var(leaves)
        gv = value_of(gammas)
        logits_values = np.exp(-gv[None, :] * dist_values) if self.scene.painting.mode == "softmax" else -gv[None, :] * dist_values
        top_k = self.scene.painting.top_k
        n = self.x0.shape[0]
        if top_k is not None and top_k < topo.link_count:
            order = np.argsort(-logits_values, axis=1, kind="stable")[:, : int(top_k)]
            link_idx = order
        else:
            link_idx = np.broadcast_to(np.arange(topo.link_count), (n, topo.link_count)).copy()
        # gathered differentiable geometry over the selected links only
        s0k = joints0[links[link_idx, 0]]
        e0k = joints0[links[link_idx, 1]]
        dist_k, ratio_k, foot_k = dp.d_segment_geometry_nk(self.x0, s0k, e0k)
        gk = gammas[link_idx]
        neg = ad.mul(ad.mul(dist_k, gk), -1.0)
        logits = ad.exp(neg) if self.scene.painting.mode == "softmax" else neg
        w = ad.softmax(logits, axis=1)
        # dense per-link relative rotations, then gather per splat
        apex = topo.apex_per_link()
        d0 = ad.sub(joints0[links[:, 1]], joints0[links[:, 0]])
        dt = ad.sub(jointst[links[:, 1]], jointst[links[:, 0]])
        fb0 = dp.fallback_up_axes(e0v - s0v)
        transport = dp.d_quat_between(
            ad.div(d0, ad.norm(d0, axis=-1, keepdims=True)),
            ad.div(dt, ad.norm(dt, axis=-1, keepdims=True)),
        )
        fbt = dp.d_quat_rotate(transport, fb0)
        ups0, _ = dp.d_triangle_ups(links, apex, joints0, fb0)
        upst, _ = dp.d_triangle_ups(links, apex, jointst, fbt)
        r0 = dp.d_lookat_rotations(d0, ups0)
        rt = dp.d_lookat_rotations(dt, upst)
        rrel = ad.matmul(rt, ad.swap_last_axes(r0))
        qrel = dp.d_matrix_to_quat(rrel)
        qrel_k = qrel[link_idx]
        stk = jointst[links[link_idx, 0]]
        etk = jointst[links[link_idx, 1]]
        n_xt = ad.add(stk, ad.mul(ad.expand_dims(ratio_k, -1), ad.sub(etk, stk)))
        trans_nk = ad.sub(n_xt, dp.d_quat_rotate(qrel_k, foot_k))
        rot, trans = dp.d_blend_deform(qrel_k, trans_nk, w)
        xt = ad.add(dp.d_quat_rotate(rot, self.x0), trans)
        return xt, jointst, joints0

    def positions(self, leaves, t):
        if self.kind == KIND_TREE:
            return self._positions_tree(leaves, t)
        return self._positions_deformable(leaves, t)

    def frame_loss(self, leaves, t) -> Var:
        cfg = self.cfg
        xt, jointst, joints0 = self.positions(leaves, t)
        total = Var(0.0)
        if cfg.lambda_data > 0:
            obs = self.data.frames.clouds[t]
            if self.data.frames.correspondence:
                if obs.shape[0] != self.x0.shape[0]:
                    raise ValidationError("correspondence data must match splat count")
                dl = ad.amean(ad.asum((xt - obs) ** 2, axis=-1))
            else:
                xv = value_of(xt)
                idx_ab = kernels.nearest_indices(xv, obs)
                idx_ba = kernels.nearest_indices(obs, xv)
                dl = ad.add(
                    ad.amean(ad.asum((xt - obs[idx_ab]) ** 2, axis=-1)),
                    ad.amean(ad.asum((xt[idx_ba] - obs) ** 2, axis=-1)),
                )
            total = total + cfg.lambda_data * dl
        if cfg.lambda_canonical > 0:
            drift = ad.norm(ad.sub(joints0, self.init_joints), axis=-1)
            total = total + cfg.lambda_canonical * ad.asum(drift)
        if cfg.lambda_keypoint > 0 and self.data.keypoints is not None:
            kp = self.data.keypoints[t]
            cam = self.scene.camera
            uv, depths = dp.d_project_pinhole(
                jointst, cam.fx, cam.fy, cam.cx, cam.cy, cam.pose.rotation, cam.pose.translation
            )
            use = (kp[:, 2] > 0) & (depths > 1e-9)
            count = int(use.sum())
            if count:
                l1 = ad.asum(ad.mul(ad.absolute(ad.sub(uv, kp[:, :2])), use[:, None].astype(float)))
                total = total + cfg.lambda_keypoint * (l1 / count)
        if cfg.lambda_mask > 0 and self.data.masks is not None:
            moved = self.scene.splats.copy()
            moved.positions = value_of(xt)
            ml = mask_loss(moved, self.data.masks[t], self.scene.camera, self.settings.mask_radius)
            total = total + cfg.lambda_mask * ml
        return total

    # GradientProvider surface -------------------------------------------
    def evaluate(self, flat: np.ndarray) -> float:
        # frame-by-frame so each tape can be collected before the next builds
        leaves = self._leaves(flat)
        total = 0.0
        for t in range(self.scene.sequence.frame_count):
            total += float(self.frame_loss(leaves, t).value)
        return total

    def gradient(self, flat: np.ndarray) -> np.ndarray:
        out = np.zeros(flat.size)
        for t in range(self.scene.sequence.frame_count):
            out += self.frame_loss_and_grad(flat, t)[1]
        return out

    def frame_loss_and_grad(self, flat: np.ndarray, t: int) -> tuple[float, np.ndarray]:
        leaves = self._leaves(flat)
        loss = self.frame_loss(leaves, t)
        grads = ad.grad(loss, [leaves[name] for name, _ in self.blocks])
        return float(loss.value), np.concatenate([g.reshape(-1) for g in grads])


# ---------------------------------------------------------------------------
# gradient checking and fitting


def check_gradients(provider: GradientProvider, params: np.ndarray, h: float = 1e-5) -> float:
    """Worst relative error between analytic gradients and central differences."""
    if h <= 0:
        raise ValidationError("h must be positive")
    params = np.asarray(params, dtype=np.float64).copy()
    analytic = provider.gradient(params)
    worst = 0.0
    for i in range(params.size):
        old = params[i]
        params[i] = old + h
        fp = provider.evaluate(params)
        params[i] = old - h
        fm = provider.evaluate(params)
        params[i] = old
        numeric = (fp - fm) / (2.0 * h)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


def fit_sequence(scene: SceneState, data: FitData, cfg: LossConfig, settings: OptimSettings | None = None) -> SceneCheckpoint:
    """Fit per-frame graph parameters (and optionally gamma, phi) to observations.

    Frames are visited in randomized order per epoch under the fixed seed;
    the checkpoint carries the best parameters seen by full-objective value,
    so the final loss never exceeds the initial one.
    """
    settings = settings or OptimSettings()
    if scene.sequence.frame_count < 2:
        raise ValidationError("fitting needs at least two frames")
    provider = SceneLossProvider(scene, data, cfg, settings)
    flat = provider.pack()
    if settings.strict:
        err = check_gradients(provider, flat, settings.grad_check_h)
        if err > 1e-4:
            raise OptimizationError(f"strict gradient check failed: relative error {err:.3e}")
    frame_count = scene.sequence.frame_count
    rng = np.random.default_rng(settings.seed)
    adam = Adam(flat.size, lr=settings.lr)
    full0 = provider.evaluate(flat)
    if not np.isfinite(full0):
        raise OptimizationError("initial loss is not finite")
    history = [full0]
    best_flat, best_loss = flat.copy(), full0
    order = rng.permutation(frame_count)
    eval_every = max(frame_count, settings.iters // 50)
    for it in range(settings.iters):
        if it % frame_count == 0 and it > 0:
            order = rng.permutation(frame_count)
        t = int(order[it % frame_count])
        loss, g = provider.frame_loss_and_grad(flat, t)
        if not np.isfinite(loss):
            raise OptimizationError(f"loss became non-finite at iteration {it} (frame {t})")
        # cosine decay quiets the stochastic tail of the frame sampling
        floor = settings.lr_decay
        adam.lr = settings.lr * (floor + (1.0 - floor) * 0.5 * (1.0 + np.cos(np.pi * it / max(settings.iters - 1, 1))))
        flat = adam.step(flat, g)
        if (it + 1) % eval_every == 0 or it == settings.iters - 1:
            full = provider.evaluate(flat)
            history.append(full)
            if full < best_loss:
                best_loss, best_flat = full, flat.copy()
    # prefer the final (most converged) iterate; fall back to the best seen
    # if the stochastic tail drifted upward, so the final loss never exceeds
    # the initial one
    final_loss = provider.evaluate(flat)
    if final_loss > best_loss:
        flat, final_loss = best_flat, best_loss
    seq, gammas, lengths = provider.unpack(flat)
    history.append(final_loss)
    return SceneCheckpoint(
        topology=scene.sequence.topology,
        thetas=seq.thetas,
        canonical_index=seq.canonical_index,
        gammas=gammas,
        painting_mode=scene.painting.mode,
        top_k=scene.painting.top_k,
        splats=scene.splats,
        loss_config=cfg.to_dict(),
        loss_history=[float(h) for h in history],
        camera=scene.camera,
    )
