"""Differentiable building blocks for the fitting losses.

These mirror the fast kernels in :mod:`motionblend.kernels` using autodiff
``Var`` nodes, so the optimizer can propagate gradients through forward
kinematics, weight painting, link frames and dual-quaternion blending.
Agreement between the two routes is covered by tests.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Var, value_of


def d_quat_normalize(q):
    return ad.div(q, ad.norm(q, axis=-1, keepdims=True))


def d_quat_mul(a, b):
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return ad.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def d_quat_conj(q):
    return ad.mul(q, np.array([1.0, -1.0, -1.0, -1.0]))


def d_quat_rotate(q, v):
    """Rotate vectors by unit quaternions; broadcasts like the numpy twin."""
    qv = q[(Ellipsis, slice(1, 4))]
    w = q[(Ellipsis, slice(0, 1))]
    t = ad.mul(ad.cross(qv, v), 2.0)
    return ad.add(ad.add(v, ad.mul(w, t)), ad.cross(qv, t))


def d_pure_quat_mul(t, q):
    """(0, t) * q."""
    qw = q[(Ellipsis, slice(0, 1))]
    qv = q[(Ellipsis, slice(1, 4))]
    w = ad.mul(ad.asum(ad.mul(t, qv), axis=-1, keepdims=True), -1.0)
    v = ad.add(ad.mul(qw, t), ad.cross(t, qv))
    return ad.concatenate([w, v], axis=-1)


def d_fk(links, order, root_index, rot_raw, root_quat_raw, root_trans, lengths):
    """Differentiable forward kinematics.

    links (L,2) int, order: link indices parent-first, rot_raw (J,4) raw
    joint quaternions, root_quat_raw (4,), root_trans (3,), lengths (L,).
    Returns (joints (J,3), link_quats (L,4), link_positions (L,3)).
    """
    n_joints = int(value_of(rot_raw).shape[0])
    n_links = links.shape[0]
    rot = d_quat_normalize(rot_raw)
    acc_q: list = [None] * n_joints
    acc_p: list = [None] * n_joints
    acc_q[root_index] = d_quat_mul(d_quat_normalize(root_quat_raw), rot[root_index])
    acc_p[root_index] = ad.as_var(root_trans) if not isinstance(root_trans, Var) else root_trans
    zero = Var(0.0)
    for l in order:
        parent, child = int(links[l, 0]), int(links[l, 1])
        step = ad.stack([lengths[l], zero, zero], axis=-1)
        acc_p[child] = ad.add(acc_p[parent], d_quat_rotate(acc_q[parent], step))
        acc_q[child] = d_quat_mul(acc_q[parent], rot[child])
    joints = ad.stack(acc_p, axis=0)
    link_quats = ad.stack([acc_q[int(links[l, 0])] for l in range(n_links)], axis=0)
    link_pos = ad.stack([acc_p[int(links[l, 0])] for l in range(n_links)], axis=0)
    return joints, link_quats, link_pos


def d_segment_geometry(x0: np.ndarray, starts, ends):
    """Projection of constant points onto differentiable segments.

    Returns (dist (N,L), ratio (N,L), foot (N,L,3)).
    """
    d = ad.sub(ends, starts)
    len2 = ad.asum(ad.mul(d, d), axis=-1)  # (L,)
    s_b = ad.expand_dims(starts, 0)
    d_b = ad.expand_dims(d, 0)
    v = ad.sub(x0[:, None, :], s_b)
    t = ad.div(ad.asum(ad.mul(v, d_b), axis=-1), ad.expand_dims(len2, 0))
    ratio = ad.clip(t, 0.0, 1.0)
    foot = ad.add(s_b, ad.mul(ad.expand_dims(ratio, -1), d_b))
    diff = ad.sub(x0[:, None, :], foot)
    dist = ad.sqrt(ad.maximum(ad.asum(ad.mul(diff, diff), axis=-1), 1e-18))
    return dist, ratio, foot


def topk_mask(score_values: np.ndarray, k: int) -> np.ndarray:
    """Boolean (N,L) mask keeping the k best scores per row, ties to lower index."""
    n, nl = score_values.shape
    if k >= nl:
        return np.ones((n, nl), dtype=bool)
    order = np.argsort(-score_values, axis=1, kind="stable")[:, :k]
    mask = np.zeros((n, nl), dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


def d_paint(dist, gammas, mode: str, top_k=None):
    """Weight painting over painted distances; both modes share a softmax.

    softmax mode feeds the kernel values K = exp(-gamma*dist) through a
    softmax; normalized mode is equivalent to a softmax over -gamma*dist.
    top_k restricts the support (excluded links get zero weight).
    """
    g = ad.expand_dims(gammas, 0) if isinstance(gammas, Var) else np.asarray(gammas)[None, :]
    neg = ad.mul(ad.mul(dist, g), -1.0)
    if mode == "softmax":
        logits = ad.exp(neg)
    elif mode == "normalized":
        logits = neg
    else:
        raise ValueError(f"unknown painting mode: {mode!r}")
    mask = None
    if top_k is not None:
        mask = topk_mask(value_of(logits), int(top_k))
    return ad.softmax(logits, axis=1, mask=mask)


def d_quat_between(a, b):
    """Differentiable minimal rotation between unit vector rows.

    Assumes no pair is antipodal (checked by value upstream); the fitting
    scenes never reverse a link within one frame step.
    """
    c = ad.cross(a, b)
    w = ad.add(ad.asum(ad.mul(a, b), axis=-1, keepdims=True), 1.0)
    q = ad.concatenate([w, c], axis=-1)
    return ad.div(q, ad.norm(q, axis=-1, keepdims=True))


_FALLBACK_AXES = np.eye(3)


def fallback_up_axes(dir_values: np.ndarray) -> np.ndarray:
    """Global axis least parallel to each direction; ties prefer z, then y.

    Preferring z keeps the fallback frame consistent for links that rotate
    within the xy plane, so a pure rotation about a joint stays a pure
    rotation after the relative-transform round trip.
    """
    a = np.abs(np.asarray(dir_values, dtype=np.float64))
    idx = 2 - np.argmin(a[..., ::-1], axis=-1)
    return _FALLBACK_AXES[idx]


def d_triangle_ups(links: np.ndarray, apex: np.ndarray, joints, fallback: np.ndarray):
    """Per-link up vectors from triangle face normals with axis fallback.

    apex (L,) holds the apex joint index or -1 for unpaired links. Unpaired
    or collinear links use the supplied fallback axes (derived once from the
    canonical link directions, so the choice is stable across frames).
    """
    s = joints[links[:, 0]]
    e = joints[links[:, 1]]
    d = ad.sub(e, s)
    apex_safe = np.where(apex < 0, 0, apex)
    a = joints[apex_safe]
    n = ad.cross(d, ad.sub(a, s))
    dv = value_of(d)
    nv = value_of(n)
    av = value_of(a) - value_of(s)
    scale = np.linalg.norm(dv, axis=-1) * np.linalg.norm(av, axis=-1)
    usable = (apex >= 0) & (np.linalg.norm(nv, axis=-1) > 1e-9 * np.maximum(scale, 1e-30))
    return ad.where(usable[:, None], n, fallback), usable


def d_lookat_rotations(dirs, ups):
    """Rotation matrices (L,3,3) with columns x,y,z; z follows dirs, y the ups."""
    z = ad.div(dirs, ad.norm(dirs, axis=-1, keepdims=True))
    proj = ad.asum(ad.mul(ups, z), axis=-1, keepdims=True)
    y = ad.sub(ups, ad.mul(proj, z))
    y = ad.div(y, ad.norm(y, axis=-1, keepdims=True))
    x = ad.cross(y, z)
    return ad.stack([x, y, z], axis=-1)


def d_matrix_to_quat(m):
    """Differentiable Shepperd conversion for (L,3,3) rotation matrices."""
    def e(i, j):
        return m[(Ellipsis, i, j)]

    tr = e(0, 0) + e(1, 1) + e(2, 2)
    cands = []
    c0 = ad.sqrt(ad.maximum(1.0 + tr, 1e-12))
    cands.append(
        ad.stack(
            [0.5 * c0, 0.5 * (e(2, 1) - e(1, 2)) / c0, 0.5 * (e(0, 2) - e(2, 0)) / c0, 0.5 * (e(1, 0) - e(0, 1)) / c0],
            axis=-1,
        )
    )
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        ci = ad.sqrt(ad.maximum(1.0 + e(i, i) - e(j, j) - e(k, k), 1e-12))
        comp = [None] * 4
        comp[0] = 0.5 * (e(k, j) - e(j, k)) / ci
        comp[1 + i] = 0.5 * ci
        comp[1 + j] = 0.5 * (e(j, i) + e(i, j)) / ci
        comp[1 + k] = 0.5 * (e(k, i) + e(i, k)) / ci
        cands.append(ad.stack(comp, axis=-1))

    trv = value_of(tr)
    diag = np.stack([value_of(e(i, i)) for i in range(3)], axis=-1)
    choice = np.where(trv > 0.0, 0, np.argmax(diag, axis=-1) + 1)
    out = cands[3]
    for c in (2, 1, 0):
        out = ad.where((choice == c)[..., None], cands[c], out)
    return d_quat_normalize(out)


def d_relative_link_quats(q0, qt, p0, pt):
    """Per-link relative rotations and translations from link poses."""
    qrel = d_quat_mul(qt, d_quat_conj(q0))
    trel = ad.sub(pt, d_quat_rotate(qrel, p0))
    return qrel, trel


def blend_signs(qrel_values: np.ndarray, weight_values: np.ndarray, link_idx=None) -> np.ndarray:
    """Antipodal alignment signs against the maximum-weight link per splat."""
    if link_idx is None:
        pivot = np.argmax(weight_values, axis=1)
        dots = qrel_values @ qrel_values.T
        return np.where(dots[pivot] < 0.0, -1.0, 1.0)
    q = qrel_values[link_idx]
    pivot = np.argmax(weight_values, axis=1)
    qp = q[np.arange(q.shape[0]), pivot]
    return np.where(np.sum(q * qp[:, None, :], axis=-1) < 0.0, -1.0, 1.0)


def d_blend_tree(qrel, trel, weights):
    """Blend shared per-link transforms; returns (rot (N,4), trans (N,3))."""
    signs = blend_signs(value_of(qrel), value_of(weights))
    ws = ad.mul(weights, signs)
    qd = ad.mul(d_pure_quat_mul(trel, qrel), 0.5)
    real = ad.matmul(ws, qrel)
    dual = ad.matmul(ws, qd)
    return _d_finalize(real, dual)


def d_blend_deform(qrel_nk, trans_nk, weights):
    """Blend gathered per-splat link rotations (N,K,4) and translations (N,K,3)."""
    qv = value_of(qrel_nk)
    wv = value_of(weights)
    pivot = np.argmax(wv, axis=1)
    qp = qv[np.arange(qv.shape[0]), pivot]
    signs = np.where(np.sum(qv * qp[:, None, :], axis=-1) < 0.0, -1.0, 1.0)
    ws = ad.expand_dims(ad.mul(weights, signs), -1)
    qd = ad.mul(d_pure_quat_mul(trans_nk, qrel_nk), 0.5)
    real = ad.asum(ad.mul(ws, qrel_nk), axis=1)
    dual = ad.asum(ad.mul(ws, qd), axis=1)
    return _d_finalize(real, dual)


def d_segment_geometry_nk(x0: np.ndarray, s_nk, e_nk):
    """Segment projection against per-splat gathered segments (N,K,3)."""
    d = ad.sub(e_nk, s_nk)
    len2 = ad.asum(ad.mul(d, d), axis=-1)
    v = ad.sub(x0[:, None, :], s_nk)
    t = ad.div(ad.asum(ad.mul(v, d), axis=-1), len2)
    ratio = ad.clip(t, 0.0, 1.0)
    foot = ad.add(s_nk, ad.mul(ad.expand_dims(ratio, -1), d))
    diff = ad.sub(x0[:, None, :], foot)
    dist = ad.sqrt(ad.maximum(ad.asum(ad.mul(diff, diff), axis=-1), 1e-18))
    return dist, ratio, foot


def _d_finalize(real, dual):
    n = ad.norm(real, axis=-1, keepdims=True)
    rot = ad.div(real, n)
    dual = ad.div(dual, n)
    dot = ad.asum(ad.mul(rot, dual), axis=-1, keepdims=True)
    dual = ad.sub(dual, ad.mul(dot, rot))
    rw = rot[(Ellipsis, slice(0, 1))]
    rv = rot[(Ellipsis, slice(1, 4))]
    dw = dual[(Ellipsis, slice(0, 1))]
    dv = dual[(Ellipsis, slice(1, 4))]
    trans = ad.mul(ad.sub(ad.add(ad.mul(ad.mul(dw, rv), -1.0), ad.mul(rw, dv)), ad.cross(dv, rv)), 2.0)
    return rot, trans


def d_project_pinhole(points, fx, fy, cx, cy, cam_quat, cam_trans):
    """Project world points (J,3) through a world-to-camera pose; returns (uv (J,2), depth values)."""
    cam = d_quat_rotate(np.broadcast_to(cam_quat, (value_of(points).shape[0], 4)), points)
    cam = ad.add(cam, cam_trans)
    z = cam[(Ellipsis, slice(2, 3))]
    depths = value_of(z)[..., 0]
    zsafe = ad.where(np.abs(depths[..., None]) > 1e-12, z, np.full_like(depths[..., None], 1e-12))
    u = ad.add(ad.mul(ad.div(cam[(Ellipsis, slice(0, 1))], zsafe), fx), cx)
    v = ad.add(ad.mul(ad.div(cam[(Ellipsis, slice(1, 2))], zsafe), fy), cy)
    return ad.concatenate([u, v], axis=-1), depths
