import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from motionblend import geometry as geo
from motionblend.errors import DegenerateFrameError, DegenerateTransformError


def random_pose(rng):
    q = Rotation.random(random_state=rng).as_quat()  # x,y,z,w
    rot = np.array([q[3], q[0], q[1], q[2]])
    return geo.Pose(rot, rng.uniform(-5, 5, 3))


def pose_matrix_oracle(p):
    """4x4 matrix built through scipy, independent of geometry internals."""
    m = np.eye(4)
    r = p.rotation
    m[:3, :3] = Rotation.from_quat([r[1], r[2], r[3], r[0]]).as_matrix()
    m[:3, 3] = p.translation
    return m


def assert_valid_rotation(q, atol=1e-9):
    m = geo.quat_to_matrix(q)
    assert np.allclose(m.T @ m, np.eye(3), atol=atol)
    assert abs(np.linalg.det(m) - 1.0) < atol


class TestQuaternion:
    def test_mul_matches_scipy(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = Rotation.random(random_state=rng)
            b = Rotation.random(random_state=rng)
            qa = np.roll(a.as_quat(), 1)
            qb = np.roll(b.as_quat(), 1)
            ours = geo.quat_mul(qa, qb)
            theirs = np.roll((a * b).as_quat(), 1)
            if np.dot(ours, theirs) < 0:
                theirs = -theirs
            assert np.allclose(ours, theirs, atol=1e-12)

    def test_rotate_matches_matrix(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            q = np.roll(Rotation.random(random_state=rng).as_quat(), 1)
            v = rng.normal(size=3)
            assert np.allclose(geo.quat_rotate(q, v), geo.quat_to_matrix(q) @ v, atol=1e-12)

    def test_matrix_round_trip(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            q = np.roll(Rotation.random(random_state=rng).as_quat(), 1)
            back = geo.matrix_to_quat(geo.quat_to_matrix(q))
            if np.dot(back, q) < 0:
                back = -back
            assert np.allclose(back, q, atol=1e-9)

    def test_matrix_round_trip_batched(self):
        rng = np.random.default_rng(3)
        qs = np.stack([np.roll(Rotation.random(random_state=rng).as_quat(), 1) for _ in range(64)])
        back = geo.matrix_to_quat(geo.quat_to_matrix(qs))
        sign = np.where(np.sum(back * qs, axis=-1, keepdims=True) < 0, -1.0, 1.0)
        assert np.allclose(back * sign, qs, atol=1e-9)

    def test_slerp_midpoint(self):
        a = geo.QUAT_IDENTITY
        b = geo.quat_from_axis_angle([0, 0, 1], np.pi / 2)
        mid = geo.quat_slerp(a, b, 0.5)
        expected = geo.quat_from_axis_angle([0, 0, 1], np.pi / 4)
        assert np.allclose(mid, expected, atol=1e-12)


class TestDualQuaternion:
    def test_identity(self):
        d = geo.pose_to_dq(geo.Pose.identity())
        assert np.allclose(d.real, [1, 0, 0, 0])
        assert np.allclose(d.dual, 0)

    def test_pure_translation(self):
        d = geo.pose_to_dq(geo.Pose(geo.QUAT_IDENTITY, [2, 0, 0]))
        assert np.allclose(d.dual, [0, 1, 0, 0], atol=1e-15)
        # matrix oracle on the way back
        p = geo.dq_to_pose(d)
        assert np.allclose(pose_matrix_oracle(p)[:3, 3], [2, 0, 0], atol=1e-12)

    def test_pure_rotation(self):
        d = geo.pose_to_dq(geo.Pose(geo.quat_from_axis_angle([0, 0, 1], np.pi / 2), [0, 0, 0]))
        s = np.sqrt(2) / 2
        assert np.allclose(d.real, [s, 0, 0, s], atol=1e-12)
        assert np.allclose(d.dual, 0, atol=1e-15)

    def test_round_trip_random(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            p = random_pose(rng)
            back = geo.dq_to_pose(geo.pose_to_dq(p))
            assert back.allclose(p, atol=1e-9)

    def test_invariants_of_pose_dq(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            d = geo.pose_to_dq(random_pose(rng))
            assert abs(np.linalg.norm(d.real) - 1) < 1e-9
            assert abs(np.dot(d.real, d.dual)) < 1e-9

    def test_degenerate_real_part(self):
        with pytest.raises(DegenerateTransformError):
            geo.dq_to_pose(geo.DualQuaternion(np.zeros(4), np.zeros(4)))


class TestBlend:
    def test_one_hot(self):
        rng = np.random.default_rng(6)
        poses = [random_pose(rng) for _ in range(4)]
        dqs = [geo.pose_to_dq(p) for p in poses]
        for j in range(4):
            w = np.zeros(4)
            w[j] = 1.0
            out = geo.dq_blend(dqs, w)
            assert out.allclose(poses[j], atol=1e-12)

    def test_equal_weights_same_transform(self):
        rng = np.random.default_rng(7)
        p = random_pose(rng)
        dqs = [geo.pose_to_dq(p)] * 5
        out = geo.dq_blend(dqs, np.full(5, 0.2))
        assert out.allclose(p, atol=1e-12)

    def test_rotation_midpoint_is_slerp(self):
        a = geo.Pose.identity()
        b = geo.Pose(geo.quat_from_axis_angle([0, 0, 1], np.pi / 2), [0, 0, 0])
        out = geo.dq_blend([geo.pose_to_dq(a), geo.pose_to_dq(b)], [0.5, 0.5])
        expected = geo.quat_slerp(a.rotation, b.rotation, 0.5)
        got = out.rotation if np.dot(out.rotation, expected) >= 0 else -out.rotation
        assert np.allclose(got, expected, atol=1e-12)
        assert np.allclose(out.translation, 0, atol=1e-12)

    def test_antipodal_invariance(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            poses = [random_pose(rng) for _ in range(4)]
            dqs = [geo.pose_to_dq(p) for p in poses]
            w = rng.uniform(0.05, 1.0, 4)
            w /= w.sum()
            ref = geo.dq_blend(dqs, w)
            for j in range(4):
                flipped = [
                    geo.DualQuaternion(-d.real, -d.dual) if i == j else d for i, d in enumerate(dqs)
                ]
                assert geo.dq_blend(flipped, w).allclose(ref, atol=1e-9)

    def test_blend_output_valid_rotation(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            dqs = [geo.pose_to_dq(random_pose(rng)) for _ in range(5)]
            w = rng.uniform(0, 1, 5)
            w /= w.sum()
            out = geo.dq_blend(dqs, w)
            assert_valid_rotation(out.rotation)

    def test_weight_validation(self):
        d = geo.pose_to_dq(geo.Pose.identity())
        with pytest.raises(ValueError):
            geo.dq_blend([d, d], [0.7, 0.7])


class TestRelativeTransform:
    def test_same_pose_identity(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            p = random_pose(rng)
            rel = geo.relative_transform(p, p)
            assert rel.allclose(geo.Pose.identity(), atol=1e-9)

    def test_identity_base(self):
        rng = np.random.default_rng(11)
        p = random_pose(rng)
        assert geo.relative_transform(geo.Pose.identity(), p).allclose(p, atol=1e-12)

    def test_composition_oracle(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            p0, pt = random_pose(rng), random_pose(rng)
            rel = geo.relative_transform(p0, pt)
            m = pose_matrix_oracle(rel) @ pose_matrix_oracle(p0)
            assert np.allclose(m, pose_matrix_oracle(pt), atol=1e-9)


class TestLookAt:
    def test_identity_anchor(self):
        p = geo.look_at([0, 0, 0], [0, 0, 1], [0, 1, 0])
        assert p.allclose(geo.Pose.identity(), atol=1e-12)

    def test_gram_schmidt_oracle(self):
        p = geo.look_at([1, 2, 3], [1, 0, 0], [0, 0, 1])
        m = geo.quat_to_matrix(p.rotation)
        # local z -> +x, local y -> +z, local x -> right-handed completion (+y)
        assert np.allclose(m @ [0, 0, 1], [1, 0, 0], atol=1e-12)
        assert np.allclose(m @ [0, 1, 0], [0, 0, 1], atol=1e-12)
        assert np.allclose(m @ [1, 0, 0], np.cross([0, 0, 1], [1, 0, 0]), atol=1e-12)
        assert abs(np.linalg.det(m) - 1.0) < 1e-12
        assert np.allclose(p.translation, [1, 2, 3])

    def test_random_frames_orthonormal(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            f = rng.normal(size=3)
            u = rng.normal(size=3)
            if abs(np.dot(f, u)) / (np.linalg.norm(f) * np.linalg.norm(u)) > 0.99:
                continue
            p = geo.look_at(rng.normal(size=3), f, u)
            assert_valid_rotation(p.rotation)
            m = geo.quat_to_matrix(p.rotation)
            assert np.allclose(m @ [0, 0, 1], f / np.linalg.norm(f), atol=1e-9)

    def test_parallel_up_error(self):
        with pytest.raises(DegenerateFrameError):
            geo.look_at([0, 0, 0], [0, 0, 1], [0, 0, 1])
