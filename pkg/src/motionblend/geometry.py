"""Rigid-body math: quaternions, dual quaternions, SE(3) poses, look-at frames.

Quaternions are stored as ``[w, x, y, z]`` float64 arrays. All functions
broadcast over leading axes unless noted. Every operation here is a pure
function on value types.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateBlendError, DegenerateFrameError, DegenerateTransformError

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise DegenerateTransformError("quaternion norm below 1e-12")
    return q / n


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    out = q.copy()
    out[..., 1:] *= -1.0
    return out


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product, broadcasting over leading axes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w1, x1, y1, z1 = (a[..., i] for i in range(4))
    w2, x2, y2, z2 = (b[..., i] for i in range(4))
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors ``v`` by unit quaternions ``q`` (broadcasting)."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    qv = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        raise DegenerateTransformError("rotation axis has zero norm")
    half = 0.5 * float(angle)
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


def quat_angle(q: np.ndarray) -> float:
    """Rotation angle in radians of a unit quaternion, in [0, pi]."""
    q = quat_normalize(q)
    return float(2.0 * np.arccos(np.clip(abs(q[0]), -1.0, 1.0)))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of unit quaternions; shape (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = (q[..., i] for i in range(4))
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    row0 = np.stack([1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)], axis=-1)
    row1 = np.stack([2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)], axis=-1)
    row2 = np.stack([2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Unit quaternion of rotation matrices; shape (..., 4).

    Branch selection follows Shepperd's method so the square root argument
    is always well above zero.
    """
    m = np.asarray(m, dtype=np.float64)
    single = m.ndim == 2
    if single:
        m = m[None]
    tr = m[..., 0, 0] + m[..., 1, 1] + m[..., 2, 2]
    q = np.empty(m.shape[:-2] + (4,), dtype=np.float64)

    c0 = np.sqrt(np.maximum(1.0 + tr, 1e-30))
    cand0 = np.stack(
        [
            0.5 * c0,
            0.5 * (m[..., 2, 1] - m[..., 1, 2]) / c0,
            0.5 * (m[..., 0, 2] - m[..., 2, 0]) / c0,
            0.5 * (m[..., 1, 0] - m[..., 0, 1]) / c0,
        ],
        axis=-1,
    )
    cands = [cand0]
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        ci = np.sqrt(np.maximum(1.0 + m[..., i, i] - m[..., j, j] - m[..., k, k], 1e-30))
        quat = np.empty_like(cand0)
        quat[..., 0] = 0.5 * (m[..., k, j] - m[..., j, k]) / ci
        quat[..., 1 + i] = 0.5 * ci
        quat[..., 1 + j] = 0.5 * (m[..., j, i] + m[..., i, j]) / ci
        quat[..., 1 + k] = 0.5 * (m[..., k, i] + m[..., i, k]) / ci
        cands.append(quat)

    diag = np.stack([m[..., 0, 0], m[..., 1, 1], m[..., 2, 2]], axis=-1)
    best_diag = np.argmax(diag, axis=-1)
    use_tr = tr > 0.0
    choice = np.where(use_tr, 0, best_diag + 1)
    stacked = np.stack(cands, axis=0)
    q = np.take_along_axis(stacked, choice[None, ..., None], axis=0)[0]
    q = quat_normalize(q)
    return q[0] if single else q


def quat_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal rotation taking unit vectors ``a`` onto ``b`` (broadcasting).

    Antipodal pairs get a 180-degree rotation about an arbitrary fixed
    perpendicular (the twist is inherently ambiguous there).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.cross(a, b)
    w = 1.0 + np.sum(a * b, axis=-1, keepdims=True)
    q = np.concatenate([w, c], axis=-1)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    ok = n[..., 0] > 1e-9
    if not np.all(ok):
        perp = np.cross(a, np.where(np.abs(a[..., :1]) < 0.9, [1.0, 0, 0], [0, 1.0, 0]))
        perp = perp / np.linalg.norm(perp, axis=-1, keepdims=True)
        flip = np.concatenate([np.zeros_like(w), perp], axis=-1)
        q = np.where(ok[..., None], q, flip)
        n = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / n


def quat_slerp(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    """Spherical interpolation along the shorter arc between unit quaternions."""
    a = quat_normalize(a)
    b = quat_normalize(b)
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    dot = min(dot, 1.0)
    if dot > 1.0 - 1e-12:
        return quat_normalize(a + t * (b - a))
    theta = np.arccos(dot)
    s = np.sin(theta)
    return (np.sin((1.0 - t) * theta) / s) * a + (np.sin(t * theta) / s) * b


@dataclass
class Pose:
    """Element of SE(3): unit quaternion rotation plus translation."""

    rotation: np.ndarray = field(default_factory=lambda: QUAT_IDENTITY.copy())
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = quat_normalize(np.asarray(self.rotation, dtype=np.float64).reshape(4))
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: returns self * other."""
        return Pose(
            quat_mul(self.rotation, other.rotation),
            quat_rotate(self.rotation, other.translation) + self.translation,
        )

    def inverse(self) -> "Pose":
        inv = quat_conj(self.rotation)
        return Pose(inv, -quat_rotate(inv, self.translation))

    def transform_point(self, p: np.ndarray) -> np.ndarray:
        return quat_rotate(self.rotation, np.asarray(p, dtype=np.float64)) + self.translation

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(matrix_to_quat(m[:3, :3]), m[:3, 3])

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        qa, qb = self.rotation, other.rotation
        if np.dot(qa, qb) < 0:
            qb = -qb
        return bool(
            np.allclose(qa, qb, atol=atol) and np.allclose(self.translation, other.translation, atol=atol)
        )


@dataclass
class DualQuaternion:
    """Rigid transform as real + dual quaternion parts."""

    real: np.ndarray
    dual: np.ndarray

    def __post_init__(self):
        self.real = np.asarray(self.real, dtype=np.float64).reshape(4).copy()
        self.dual = np.asarray(self.dual, dtype=np.float64).reshape(4).copy()

    def normalized(self) -> "DualQuaternion":
        n = np.linalg.norm(self.real)
        if n < 1e-12:
            raise DegenerateTransformError("dual quaternion real part has near-zero norm")
        real = self.real / n
        dual = self.dual / n
        dual = dual - np.dot(real, dual) * real
        return DualQuaternion(real, dual)


def pose_to_dq(p: Pose) -> DualQuaternion:
    real = p.rotation
    t = np.concatenate([[0.0], p.translation])
    return DualQuaternion(real, 0.5 * quat_mul(t, real))


def dq_to_pose(d: DualQuaternion) -> Pose:
    dn = d.normalized()
    t = 2.0 * quat_mul(dn.dual, quat_conj(dn.real))
    return Pose(dn.real, t[1:])


def dq_blend(transforms: Sequence[DualQuaternion], weights: np.ndarray) -> Pose:
    """Blend rigid transforms by a normalized weighted dual-quaternion sum.

    ``weights`` must be a probability vector matching ``transforms``. Before
    summation every entry is sign-aligned against the maximum-weight entry,
    making the result invariant to antipodal input flips.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or len(transforms) != w.shape[0]:
        raise ValueError("weights length must match transforms")
    if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be nonnegative and sum to 1")
    reals = np.stack([d.real for d in transforms])
    duals = np.stack([d.dual for d in transforms])
    pivot = int(np.argmax(w))
    signs = np.where(reals @ reals[pivot] < 0.0, -1.0, 1.0)
    ws = w * signs
    real = ws @ reals
    dual = ws @ duals
    if np.linalg.norm(real) < 1e-12:
        raise DegenerateBlendError("weighted dual-quaternion sum vanished")
    return dq_to_pose(DualQuaternion(real, dual))


def relative_transform(p0: Pose, pt: Pose) -> Pose:
    """The unique rigid T with T * p0 = pt, i.e. pt composed with p0 inverse."""
    q = quat_mul(pt.rotation, quat_conj(p0.rotation))
    return Pose(q, pt.translation - quat_rotate(q, p0.translation))


def look_at(position: np.ndarray, forward: np.ndarray, up: np.ndarray) -> Pose:
    """Pose whose local +z maps to ``forward`` and local +y follows ``up``.

    ``up`` is orthonormalized against ``forward``; local +x completes the
    right-handed frame. Raises when forward and up are parallel.
    """
    position = np.asarray(position, dtype=np.float64)
    f = np.asarray(forward, dtype=np.float64)
    u = np.asarray(up, dtype=np.float64)
    fn = np.linalg.norm(f)
    un = np.linalg.norm(u)
    if fn < 1e-12 or un < 1e-12:
        raise DegenerateFrameError("forward/up must be nonzero")
    z = f / fn
    u = u / un
    if abs(np.dot(u, z)) > 1.0 - 1e-9:
        raise DegenerateFrameError("forward and up are parallel")
    y = u - np.dot(u, z) * z
    y = y / np.linalg.norm(y)
    x = np.cross(y, z)
    return Pose(matrix_to_quat(np.column_stack([x, y, z])), position)
