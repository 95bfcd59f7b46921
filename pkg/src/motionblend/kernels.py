"""Hot numeric kernels: numba ``@njit`` implementations with numpy fallbacks.

Every kernel exists twice. The compiled variant runs when numba imports
cleanly and ``MBGS_DISABLE_NUMBA`` is unset; otherwise the vectorized numpy
variant runs. Both variants use fixed-order reductions per output element,
so results are deterministic under any parallel schedule. Numeric agreement
between the two paths is covered by tests and the benchmark script.
"""

from __future__ import annotations

import numpy as np

from . import _backend

# ---------------------------------------------------------------------------
# numpy implementations


def segment_distances_numpy(points, starts, ends):
    """Distances from points to segments.

    Returns (dist (N,L), ratio (N,L), foot (N,L,3)) where ratio is the
    clamped parameter of the closest point along each segment.
    """
    points = np.asarray(points, dtype=np.float64)
    starts = np.asarray(starts, dtype=np.float64)
    ends = np.asarray(ends, dtype=np.float64)
    d = ends - starts
    len2 = np.einsum("ld,ld->l", d, d)
    v = points[:, None, :] - starts[None, :, :]
    t = np.einsum("nld,ld->nl", v, d) / len2[None, :]
    ratio = np.clip(t, 0.0, 1.0)
    foot = starts[None, :, :] + ratio[:, :, None] * d[None, :, :]
    diff = points[:, None, :] - foot
    dist = np.sqrt(np.einsum("nld,nld->nl", diff, diff))
    return dist, ratio, foot


def fps_sample_numpy(points, count, seed_index):
    """Greedy farthest-point sampling; ties resolved to the lowest index."""
    points = np.asarray(points, dtype=np.float64)
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = seed_index
    diff = points - points[seed_index]
    d2 = np.einsum("nd,nd->n", diff, diff)
    for i in range(1, count):
        nxt = int(np.argmax(d2))
        chosen[i] = nxt
        diff = points - points[nxt]
        d2 = np.minimum(d2, np.einsum("nd,nd->n", diff, diff))
    return chosen


def nearest_indices_numpy(queries, refs, block: int = 2048):
    """Index of the nearest reference point for every query (brute force)."""
    queries = np.asarray(queries, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    out = np.empty(queries.shape[0], dtype=np.int64)
    for lo in range(0, queries.shape[0], block):
        q = queries[lo : lo + block]
        diff = q[:, None, :] - refs[None, :, :]
        d2 = np.einsum("nmd,nmd->nm", diff, diff)
        out[lo : lo + block] = np.argmin(d2, axis=1)
    return out


def _dq_finalize_numpy(real, dual):
    n = np.linalg.norm(real, axis=-1, keepdims=True)
    rot = real / n
    dual = dual / n
    dual = dual - np.sum(rot * dual, axis=-1, keepdims=True) * rot
    rw, rv = rot[..., :1], rot[..., 1:]
    dw, dv = dual[..., :1], dual[..., 1:]
    trans = 2.0 * (-dw * rv + rw * dv - np.cross(dv, rv))
    return rot, trans


def blend_tree_numpy(qrel, trel, weights):
    """DQS blend with per-link transforms shared by all splats.

    qrel (L,4) relative link rotations, trel (L,3) relative translations,
    weights (N,L) on the simplex. Returns (rot (N,4), trans (N,3)).
    """
    qrel = np.asarray(qrel, dtype=np.float64)
    trel = np.asarray(trel, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    pivot = np.argmax(weights, axis=1)
    dots = qrel @ qrel.T
    signs = np.where(dots[pivot] < 0.0, -1.0, 1.0)
    ws = weights * signs
    qd = 0.5 * _pure_quat_mul_numpy(trel, qrel)
    real = ws @ qrel
    dual = ws @ qd
    return _dq_finalize_numpy(real, dual)


def _pure_quat_mul_numpy(t, q):
    """(0, t) * q for translation vectors t (...,3) and quaternions q (...,4)."""
    qw, qv = q[..., :1], q[..., 1:]
    w = -np.sum(t * qv, axis=-1, keepdims=True)
    v = qw * t + np.cross(t, qv)
    return np.concatenate([w, v], axis=-1)


def blend_deform_numpy(qrel, trans, link_idx, weights):
    """DQS blend with per-splat translations over a per-splat link subset.

    qrel (L,4); trans (N,K,3); link_idx (N,K) integer columns into qrel;
    weights (N,K) rows on the simplex. Returns (rot (N,4), trans (N,3)).
    """
    qrel = np.asarray(qrel, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    q = qrel[link_idx]  # (N,K,4)
    kmax = np.argmax(weights, axis=1)
    qpivot = q[np.arange(q.shape[0]), kmax]
    signs = np.where(np.sum(q * qpivot[:, None, :], axis=-1) < 0.0, -1.0, 1.0)
    ws = (weights * signs)[..., None]
    qd = 0.5 * _pure_quat_mul_numpy(trans, q)
    real = np.sum(ws * q, axis=1)
    dual = np.sum(ws * qd, axis=1)
    return _dq_finalize_numpy(real, dual)


def zbuffer_numpy(rows, cols, depths, height, width, radius):
    """Front-most candidate per pixel over circular footprints.

    Returns an (H,W) int64 image of candidate indices, -1 where empty.
    Depth ties resolve to the lower candidate index.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    depths = np.asarray(depths, dtype=np.float64)
    winner = np.full((height, width), -1, dtype=np.int64)
    if rows.size == 0:
        return winner
    offs = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1) if dy * dy + dx * dx <= radius * radius]
    offs = np.asarray(offs, dtype=np.int64)
    rr = rows[:, None] + offs[None, :, 0]
    cc = cols[:, None] + offs[None, :, 1]
    ok = (rr >= 0) & (rr < height) & (cc >= 0) & (cc < width)
    idx = np.broadcast_to(np.arange(rows.shape[0], dtype=np.int64)[:, None], rr.shape)[ok]
    pix = (rr * width + cc)[ok]
    dep = np.broadcast_to(depths[:, None], rr.shape)[ok]
    order = np.lexsort((idx, dep, pix))
    pix, idx = pix[order], idx[order]
    _, first = np.unique(pix, return_index=True)
    winner.reshape(-1)[pix[first]] = idx[first]
    return winner


# ---------------------------------------------------------------------------
# numba implementations

if _backend.HAVE_NUMBA:
    from numba import njit, prange

    @njit(cache=True, parallel=True)
    def _segment_distances_numba(points, starts, ends):
        n = points.shape[0]
        nl = starts.shape[0]
        dist = np.empty((n, nl))
        ratio = np.empty((n, nl))
        foot = np.empty((n, nl, 3))
        for i in prange(n):
            px, py, pz = points[i, 0], points[i, 1], points[i, 2]
            for l in range(nl):
                sx, sy, sz = starts[l, 0], starts[l, 1], starts[l, 2]
                dx = ends[l, 0] - sx
                dy = ends[l, 1] - sy
                dz = ends[l, 2] - sz
                len2 = dx * dx + dy * dy + dz * dz
                t = ((px - sx) * dx + (py - sy) * dy + (pz - sz) * dz) / len2
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
                fx = sx + t * dx
                fy = sy + t * dy
                fz = sz + t * dz
                ratio[i, l] = t
                foot[i, l, 0] = fx
                foot[i, l, 1] = fy
                foot[i, l, 2] = fz
                dist[i, l] = np.sqrt((px - fx) ** 2 + (py - fy) ** 2 + (pz - fz) ** 2)
        return dist, ratio, foot

    @njit(cache=True)
    def _fps_sample_numba(points, count, seed_index):
        n = points.shape[0]
        chosen = np.empty(count, dtype=np.int64)
        chosen[0] = seed_index
        d2 = np.empty(n)
        for i in range(n):
            dx = points[i, 0] - points[seed_index, 0]
            dy = points[i, 1] - points[seed_index, 1]
            dz = points[i, 2] - points[seed_index, 2]
            d2[i] = dx * dx + dy * dy + dz * dz
        for k in range(1, count):
            nxt = np.argmax(d2)
            chosen[k] = nxt
            for i in range(n):
                dx = points[i, 0] - points[nxt, 0]
                dy = points[i, 1] - points[nxt, 1]
                dz = points[i, 2] - points[nxt, 2]
                dd = dx * dx + dy * dy + dz * dz
                if dd < d2[i]:
                    d2[i] = dd
        return chosen

    @njit(cache=True, parallel=True)
    def _nearest_indices_numba(queries, refs):
        n = queries.shape[0]
        m = refs.shape[0]
        out = np.empty(n, dtype=np.int64)
        for i in prange(n):
            best = np.inf
            bi = 0
            for j in range(m):
                dx = queries[i, 0] - refs[j, 0]
                dy = queries[i, 1] - refs[j, 1]
                dz = queries[i, 2] - refs[j, 2]
                dd = dx * dx + dy * dy + dz * dz
                if dd < best:
                    best = dd
                    bi = j
            out[i] = bi
        return out

    @njit(cache=True, inline="always")
    def _finalize_one(rw, rx, ry, rz, dw, dx, dy, dz, rot, trans, s):
        n = np.sqrt(rw * rw + rx * rx + ry * ry + rz * rz)
        rw, rx, ry, rz = rw / n, rx / n, ry / n, rz / n
        dw, dx, dy, dz = dw / n, dx / n, dy / n, dz / n
        dot = rw * dw + rx * dx + ry * dy + rz * dz
        dw -= dot * rw
        dx -= dot * rx
        dy -= dot * ry
        dz -= dot * rz
        rot[s, 0], rot[s, 1], rot[s, 2], rot[s, 3] = rw, rx, ry, rz
        trans[s, 0] = 2.0 * (-dw * rx + rw * dx - (dy * rz - dz * ry))
        trans[s, 1] = 2.0 * (-dw * ry + rw * dy - (dz * rx - dx * rz))
        trans[s, 2] = 2.0 * (-dw * rz + rw * dz - (dx * ry - dy * rx))

    @njit(cache=True, parallel=True)
    def _blend_tree_numba(qrel, trel, weights):
        n = weights.shape[0]
        nl = weights.shape[1]
        rot = np.empty((n, 4))
        trans = np.empty((n, 3))
        qd = np.empty((nl, 4))
        for l in range(nl):
            qw, qx, qy, qz = qrel[l, 0], qrel[l, 1], qrel[l, 2], qrel[l, 3]
            tx, ty, tz = trel[l, 0], trel[l, 1], trel[l, 2]
            qd[l, 0] = 0.5 * (-(tx * qx + ty * qy + tz * qz))
            qd[l, 1] = 0.5 * (qw * tx + ty * qz - tz * qy)
            qd[l, 2] = 0.5 * (qw * ty + tz * qx - tx * qz)
            qd[l, 3] = 0.5 * (qw * tz + tx * qy - ty * qx)
        for s in prange(n):
            pivot = 0
            best = weights[s, 0]
            for l in range(1, nl):
                if weights[s, l] > best:
                    best = weights[s, l]
                    pivot = l
            rw = rx = ry = rz = 0.0
            dw = dx = dy = dz = 0.0
            for l in range(nl):
                dot = (
                    qrel[l, 0] * qrel[pivot, 0]
                    + qrel[l, 1] * qrel[pivot, 1]
                    + qrel[l, 2] * qrel[pivot, 2]
                    + qrel[l, 3] * qrel[pivot, 3]
                )
                ws = -weights[s, l] if dot < 0.0 else weights[s, l]
                rw += ws * qrel[l, 0]
                rx += ws * qrel[l, 1]
                ry += ws * qrel[l, 2]
                rz += ws * qrel[l, 3]
                dw += ws * qd[l, 0]
                dx += ws * qd[l, 1]
                dy += ws * qd[l, 2]
                dz += ws * qd[l, 3]
            _finalize_one(rw, rx, ry, rz, dw, dx, dy, dz, rot, trans, s)
        return rot, trans

    @njit(cache=True, parallel=True)
    def _blend_deform_numba(qrel, tr_nk, link_idx, weights):
        n = weights.shape[0]
        k = weights.shape[1]
        rot = np.empty((n, 4))
        trans = np.empty((n, 3))
        for s in prange(n):
            pivot = 0
            best = weights[s, 0]
            for j in range(1, k):
                if weights[s, j] > best:
                    best = weights[s, j]
                    pivot = j
            lp = link_idx[s, pivot]
            rw = rx = ry = rz = 0.0
            dw = dx = dy = dz = 0.0
            for j in range(k):
                l = link_idx[s, j]
                qw, qx, qy, qz = qrel[l, 0], qrel[l, 1], qrel[l, 2], qrel[l, 3]
                dot = qw * qrel[lp, 0] + qx * qrel[lp, 1] + qy * qrel[lp, 2] + qz * qrel[lp, 3]
                ws = -weights[s, j] if dot < 0.0 else weights[s, j]
                tx, ty, tz = tr_nk[s, j, 0], tr_nk[s, j, 1], tr_nk[s, j, 2]
                rw += ws * qw
                rx += ws * qx
                ry += ws * qy
                rz += ws * qz
                dw += ws * 0.5 * (-(tx * qx + ty * qy + tz * qz))
                dx += ws * 0.5 * (qw * tx + ty * qz - tz * qy)
                dy += ws * 0.5 * (qw * ty + tz * qx - tx * qz)
                dz += ws * 0.5 * (qw * tz + tx * qy - ty * qx)
            _finalize_one(rw, rx, ry, rz, dw, dx, dy, dz, rot, trans, s)
        return rot, trans

    @njit(cache=True)
    def _zbuffer_numba(rows, cols, depths, height, width, radius):
        winner = np.full((height, width), -1, dtype=np.int64)
        zbuf = np.full((height, width), np.inf)
        r2 = radius * radius
        for i in range(rows.shape[0]):
            r0 = rows[i]
            c0 = cols[i]
            d = depths[i]
            for dy in range(-radius, radius + 1):
                yy = r0 + dy
                if yy < 0 or yy >= height:
                    continue
                for dx in range(-radius, radius + 1):
                    if dy * dy + dx * dx > r2:
                        continue
                    xx = c0 + dx
                    if xx < 0 or xx >= width:
                        continue
                    if d < zbuf[yy, xx]:
                        zbuf[yy, xx] = d
                        winner[yy, xx] = i
        return winner

    def segment_distances_numba(points, starts, ends):
        return _segment_distances_numba(
            np.ascontiguousarray(points, dtype=np.float64),
            np.ascontiguousarray(starts, dtype=np.float64),
            np.ascontiguousarray(ends, dtype=np.float64),
        )

    def fps_sample_numba(points, count, seed_index):
        return _fps_sample_numba(np.ascontiguousarray(points, dtype=np.float64), count, seed_index)

    def nearest_indices_numba(queries, refs):
        return _nearest_indices_numba(
            np.ascontiguousarray(queries, dtype=np.float64),
            np.ascontiguousarray(refs, dtype=np.float64),
        )

    def blend_tree_numba(qrel, trel, weights):
        return _blend_tree_numba(
            np.ascontiguousarray(qrel, dtype=np.float64),
            np.ascontiguousarray(trel, dtype=np.float64),
            np.ascontiguousarray(weights, dtype=np.float64),
        )

    def blend_deform_numba(qrel, trans, link_idx, weights):
        return _blend_deform_numba(
            np.ascontiguousarray(qrel, dtype=np.float64),
            np.ascontiguousarray(trans, dtype=np.float64),
            np.ascontiguousarray(link_idx, dtype=np.int64),
            np.ascontiguousarray(weights, dtype=np.float64),
        )

    def zbuffer_numba(rows, cols, depths, height, width, radius):
        return _zbuffer_numba(
            np.ascontiguousarray(rows, dtype=np.int64),
            np.ascontiguousarray(cols, dtype=np.int64),
            np.ascontiguousarray(depths, dtype=np.float64),
            height,
            width,
            radius,
        )

else:  # pragma: no cover - exercised via MBGS_DISABLE_NUMBA run
    segment_distances_numba = None
    fps_sample_numba = None
    nearest_indices_numba = None
    blend_tree_numba = None
    blend_deform_numba = None
    zbuffer_numba = None


# ---------------------------------------------------------------------------
# dispatch

if _backend.HAVE_NUMBA:
    segment_distances = segment_distances_numba
    fps_sample = fps_sample_numba
    nearest_indices = nearest_indices_numba
    blend_tree = blend_tree_numba
    blend_deform = blend_deform_numba
    zbuffer = zbuffer_numba
else:
    segment_distances = segment_distances_numpy
    fps_sample = fps_sample_numpy
    nearest_indices = nearest_indices_numpy
    blend_tree = blend_tree_numpy
    blend_deform = blend_deform_numpy
    zbuffer = zbuffer_numpy
