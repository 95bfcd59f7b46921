import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from motionblend import geometry as geo
from motionblend import graphs as gr
from motionblend import skinning as sk
from motionblend.errors import ValidationError


def chain_topology(n):
    return gr.GraphTopology(gr.KIND_TREE, n, [(i, i + 1) for i in range(n - 1)], root_index=0)


def random_motion(rng):
    q = np.roll(Rotation.random(random_state=rng).as_quat(), 1)
    return geo.Pose(q, rng.uniform(-2, 2, 3))


class TestPaintWeights:
    def test_single_link(self):
        w = sk.paint_weights([0.5, 1.0, 0.0], (np.zeros((1, 3)), np.eye(3)[:1]), [1.0])
        assert np.allclose(w, [1.0])

    def test_equidistant_symmetry(self):
        starts = np.array([[0, 1, 0], [0, -1, 0]], dtype=float)
        ends = starts + [1, 0, 0]
        w = sk.paint_weights([0.5, 0.0, 0.0], (starts, ends), [2.0, 2.0])
        assert np.allclose(w, [0.5, 0.5], atol=1e-12)

    def test_softmax_of_kernel_caps_ratio_at_e(self):
        # far link underflows to kernel 0; near link has kernel 1
        starts = np.array([[0, 0, 0], [0, 1e6, 0]], dtype=float)
        ends = starts + [1, 0, 0]
        w = sk.paint_weights([0.0, 0.0, 0.0], (starts, ends), [1.0, 1.0], mode="softmax")
        e = np.e
        assert np.allclose(w, [e / (e + 1), 1 / (e + 1)], atol=1e-9)

    def test_normalized_mode_concentrates(self):
        starts = np.array([[0, 0, 0], [0, 100, 0]], dtype=float)
        ends = starts + [1, 0, 0]
        w = sk.paint_weights([0.0, 0.0, 0.0], (starts, ends), [1.0, 1.0], mode="normalized")
        assert w[0] > 1 - 1e-12

    def test_simplex_and_monotonicity_random(self):
        rng = np.random.default_rng(0)
        for mode in sk.PAINT_MODES:
            for top_k in (None, 3):
                starts = rng.normal(size=(6, 3))
                ends = starts + rng.normal(size=(6, 3))
                pts = rng.normal(size=(40, 3))
                w = sk.paint_weights(pts, (starts, ends), np.full(6, 1.7), mode, top_k)
                assert np.all(w >= 0)
                assert np.allclose(w.sum(axis=1), 1.0, atol=1e-12)
                dist = np.stack(
                    [[np.linalg.norm(p - f) for f in _feet(p, starts, ends)] for p in pts]
                )
                nearest = np.argmin(dist, axis=1)
                assert np.all(w[np.arange(40), nearest] >= w.max(axis=1) - 1e-12)

    def test_top_k_zeroes_support(self):
        rng = np.random.default_rng(1)
        starts = rng.normal(size=(8, 3))
        ends = starts + rng.normal(size=(8, 3))
        w = sk.paint_weights(rng.normal(size=(10, 3)), (starts, ends), np.ones(8), top_k=3)
        assert np.all((w > 0).sum(axis=1) == 3)

    def test_empty_links_error(self):
        with pytest.raises(ValidationError):
            sk.paint_weights([0, 0, 0], (np.zeros((0, 3)), np.zeros((0, 3))), [])


def _feet(p, starts, ends):
    for s, e in zip(starts, ends):
        d = e - s
        t = np.clip(np.dot(p - s, d) / np.dot(d, d), 0, 1)
        yield s + t * d


class TestBlendMotion:
    def test_one_hot(self):
        rng = np.random.default_rng(2)
        poses = [random_motion(rng) for _ in range(3)]
        for j in range(3):
            w = np.eye(3)[j]
            assert sk.blend_motion(poses, w).allclose(poses[j], atol=1e-12)

    def test_shared_transform(self):
        rng = np.random.default_rng(3)
        p = random_motion(rng)
        assert sk.blend_motion([p, p, p], np.full(3, 1 / 3)).allclose(p, atol=1e-12)

    def test_half_translation(self):
        out = sk.blend_motion(
            [geo.Pose.identity(), geo.Pose(geo.QUAT_IDENTITY, [2, 0, 0])], [0.5, 0.5]
        )
        assert out.allclose(geo.Pose(geo.QUAT_IDENTITY, [1, 0, 0]), atol=1e-12)


def tree_scene(rng, n_splats=50):
    topo = chain_topology(4)
    params = gr.KinematicTreeParams.rest(topo, [1.0, 1.0, 1.0])
    pts = rng.uniform([-0.5, -0.5, -0.5], [3.5, 0.5, 0.5], size=(n_splats, 3))
    splats = sk.Splats(pts, colors=rng.uniform(0, 1, (n_splats, 3)))
    painting = sk.paint_splats(splats, topo, params)
    return topo, params, splats, painting


def deformable_scene(rng, n_splats=50):
    topo = gr.GraphTopology(
        gr.KIND_DEFORMABLE, 4,
        [(0, 1), (1, 2), (2, 3)],
        up_triangles=[(0, 2), (1, 3), (2, 0)],
    )
    params = gr.DeformableGraphParams([[0, 0, 0], [1, 0.2, 0], [2, 0, 0.3], [3, 0.1, 0]])
    pts = rng.uniform([-0.5, -0.8, -0.8], [3.5, 0.8, 0.8], size=(n_splats, 3))
    splats = sk.Splats(pts, colors=rng.uniform(0, 1, (n_splats, 3)))
    painting = sk.paint_splats(splats, topo, params)
    return topo, params, splats, painting


def apply_motion_tree(params, motion):
    out = params.copy()
    out.root_pose = motion.compose(params.root_pose)
    return out


def apply_motion_deformable(params, motion):
    j = params.joint_positions
    return gr.DeformableGraphParams(
        geo.quat_rotate(np.broadcast_to(motion.rotation, (j.shape[0], 4)), j) + motion.translation
    )


class TestDeformSplats:
    def test_canonical_frame_identity(self):
        rng = np.random.default_rng(4)
        topo, params, splats, painting = tree_scene(rng)
        out = sk.deform_splats(splats, topo, params, params.copy(), painting)
        assert np.array_equal(out.positions, splats.positions)
        assert np.array_equal(out.rotations, splats.rotations)

    def test_rigid_equivariance_tree(self):
        rng = np.random.default_rng(5)
        topo, params, splats, painting = tree_scene(rng)
        for _ in range(5):
            motion = random_motion(rng)
            moved = apply_motion_tree(params, motion)
            out = sk.deform_splats(splats, topo, params, moved, painting)
            expected = geo.quat_rotate(np.broadcast_to(motion.rotation, (len(splats), 4)), splats.positions) + motion.translation
            assert np.max(np.abs(out.positions - expected)) < 1e-9

    def test_rigid_equivariance_deformable(self):
        rng = np.random.default_rng(6)
        topo, params, splats, painting = deformable_scene(rng)
        for _ in range(5):
            motion = random_motion(rng)
            moved = apply_motion_deformable(params, motion)
            out = sk.deform_splats(splats, topo, params, moved, painting)
            expected = geo.quat_rotate(np.broadcast_to(motion.rotation, (len(splats), 4)), splats.positions) + motion.translation
            assert np.max(np.abs(out.positions - expected)) < 1e-9

    def test_single_link_one_hot_follows_link(self):
        rng = np.random.default_rng(7)
        topo = gr.GraphTopology(gr.KIND_DEFORMABLE, 2, [(0, 1)])
        p0 = gr.DeformableGraphParams([[0, 0, 0], [1, 0, 0]])
        pt = gr.DeformableGraphParams([[1, 1, 0], [2, 1, 0]])  # pure translation
        splats = sk.Splats(rng.normal(size=(10, 3)))
        painting = sk.paint_splats(splats, topo, p0)
        out = sk.deform_splats(splats, topo, p0, pt, painting)
        assert np.max(np.abs(out.positions - (splats.positions + [1, 1, 0]))) < 1e-9

    def test_attributes_bit_identical(self):
        rng = np.random.default_rng(8)
        topo, params, splats, painting = deformable_scene(rng)
        moved = apply_motion_deformable(params, random_motion(rng))
        out = sk.deform_splats(splats, topo, params, moved, painting)
        assert np.array_equal(out.scales, splats.scales)
        assert np.array_equal(out.opacities, splats.opacities)
        assert np.array_equal(out.colors, splats.colors)
        assert np.array_equal(out.instance_ids, splats.instance_ids)

    def test_top_k_matches_full_when_weights_sparse(self):
        rng = np.random.default_rng(9)
        topo, params, splats, _ = deformable_scene(rng)
        painting = sk.paint_splats(splats, topo, params, top_k=2)
        moved = apply_motion_deformable(params, random_motion(rng))
        sparse = sk.deform_splats(splats, topo, params, moved, painting)
        dense_painting = sk.WeightPainting(painting.gammas, painting.weights, painting.mode, None)
        dense = sk.deform_splats(splats, topo, params, moved, dense_painting)
        assert np.max(np.abs(sparse.positions - dense.positions)) < 1e-9

    def test_painting_shape_mismatch(self):
        rng = np.random.default_rng(10)
        topo, params, splats, painting = tree_scene(rng)
        bad = sk.WeightPainting(painting.gammas, painting.weights[:, :2] / painting.weights[:, :2].sum(axis=1, keepdims=True), "softmax")
        with pytest.raises(ValidationError):
            sk.deform_splats(splats, topo, params, params, bad)

    def test_deterministic_repeat(self):
        rng = np.random.default_rng(11)
        topo, params, splats, painting = deformable_scene(rng)
        moved = apply_motion_deformable(params, random_motion(rng))
        a = sk.deform_splats(splats, topo, params, moved, painting)
        b = sk.deform_splats(splats, topo, params, moved, painting)
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.rotations, b.rotations)


class TestSplatsContainer:
    def test_round_trip_list(self):
        rng = np.random.default_rng(12)
        splats = sk.Splats(rng.normal(size=(5, 3)), instance_ids=[0, 1, 0, 2, 1])
        back = sk.Splats.from_list([splats[i] for i in range(5)])
        assert np.allclose(back.positions, splats.positions)
        assert np.array_equal(back.instance_ids, splats.instance_ids)
        assert splats.instance_count() == 3

    def test_validation(self):
        with pytest.raises(ValidationError):
            sk.Splats(np.zeros((2, 3)), scales=np.zeros((2, 3)))
        with pytest.raises(ValidationError):
            sk.Splats(np.zeros((2, 3)), opacities=[2.0, 0.5])
