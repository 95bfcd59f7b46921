import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from motionblend import geometry as geo
from motionblend import graphs as gr
from motionblend.errors import DegenerateLinkError, TopologyError, ValidationError


def chain_topology(n_joints):
    links = [(i, i + 1) for i in range(n_joints - 1)]
    return gr.GraphTopology(gr.KIND_TREE, n_joints, links, root_index=0)


def random_tree(rng, max_joints=12):
    n = int(rng.integers(2, max_joints + 1))
    links = [(int(rng.integers(0, j)), j) for j in range(1, n)]
    topo = gr.GraphTopology(gr.KIND_TREE, n, links, root_index=0)
    rots = np.stack([np.roll(Rotation.random(random_state=rng).as_quat(), 1) for _ in range(n)])
    root = geo.Pose(np.roll(Rotation.random(random_state=rng).as_quat(), 1), rng.uniform(-2, 2, 3))
    lengths = rng.uniform(0.2, 2.0, n - 1)
    return topo, gr.KinematicTreeParams(rots, root, lengths)


def fk_matrix_oracle(topo, params):
    """Independent FK through scipy 4x4 homogeneous composition."""
    def rot_m(q):
        return Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()

    def trans_m(t):
        m = np.eye(4)
        m[:3, 3] = t
        return m

    def rmat4(q):
        m = np.eye(4)
        m[:3, :3] = rot_m(q)
        return m

    acc = {topo.root_index: trans_m(params.root_pose.translation) @ rmat4(params.root_pose.rotation) @ rmat4(params.rotations[topo.root_index])}
    joints = np.zeros((topo.joint_count, 3))
    joints[topo.root_index] = params.root_pose.translation
    for l in topo.tree_order():
        p, c = topo.links[l]
        m = acc[int(p)] @ trans_m([params.link_lengths[l], 0, 0]) @ rmat4(params.rotations[int(c)])
        acc[int(c)] = m
        joints[int(c)] = m[:3, 3]
    return joints


class TestForwardKinematics:
    def test_straight_chain_anchor(self):
        topo = chain_topology(3)
        params = gr.KinematicTreeParams.rest(topo, [1.0, 1.0])
        joints, poses = gr.forward_kinematics(topo, params)
        assert np.allclose(joints, [[0, 0, 0], [1, 0, 0], [2, 0, 0]])
        assert len(poses) == 2

    def test_bent_elbow_anchor(self):
        topo = chain_topology(3)
        rots = np.tile([1.0, 0, 0, 0], (3, 1))
        rots[1] = geo.quat_from_axis_angle([0, 0, 1], np.pi / 2)
        params = gr.KinematicTreeParams(rots, geo.Pose.identity(), [1.0, 1.0])
        joints, _ = gr.forward_kinematics(topo, params)
        assert np.allclose(joints[2], [1, 1, 0], atol=1e-12)

    def test_root_translation_shifts_everything(self):
        topo = chain_topology(4)
        base = gr.KinematicTreeParams.rest(topo, [1.0, 0.5, 2.0])
        shifted = base.copy()
        shifted.root_pose = geo.Pose(geo.QUAT_IDENTITY, [0, 0, 5])
        j0, _ = gr.forward_kinematics(topo, base)
        j1, _ = gr.forward_kinematics(topo, shifted)
        assert np.allclose(j1, j0 + [0, 0, 5], atol=1e-12)

    def test_random_trees_match_matrix_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            topo, params = random_tree(rng)
            joints, _ = gr.forward_kinematics(topo, params)
            assert np.max(np.abs(joints - fk_matrix_oracle(topo, params))) < 1e-9

    def test_rejects_deformable(self):
        topo = gr.GraphTopology(gr.KIND_DEFORMABLE, 3, [(0, 1), (1, 2)])
        with pytest.raises(TopologyError):
            gr.forward_kinematics(topo, gr.KinematicTreeParams.rest(chain_topology(3), [1, 1]))


class TestTopologyValidation:
    def test_cycle_rejected(self):
        with pytest.raises(TopologyError):
            gr.GraphTopology(gr.KIND_TREE, 3, [(0, 1), (1, 2), (2, 0)], root_index=0)

    def test_two_parents_rejected(self):
        with pytest.raises(TopologyError):
            gr.GraphTopology(gr.KIND_TREE, 4, [(0, 1), (0, 2), (1, 2)], root_index=0)

    def test_disconnected_rejected(self):
        with pytest.raises(TopologyError):
            gr.GraphTopology(gr.KIND_TREE, 4, [(0, 1), (2, 3), (1, 3)], root_index=0)

    def test_self_loop_rejected(self):
        with pytest.raises(TopologyError):
            gr.GraphTopology(gr.KIND_DEFORMABLE, 3, [(1, 1)])


class TestProjectionPoint:
    def test_midpoint_follows_stretch(self):
        n0, nt, ratio = gr.projection_point(
            (np.zeros(3), [1, 0, 0]), (np.zeros(3), [2, 0, 0]), [0.5, 0.3, 0]
        )
        assert ratio == pytest.approx(0.5)
        assert np.allclose(n0, [0.5, 0, 0])
        assert np.allclose(nt, [1.0, 0, 0])

    def test_start_coincident(self):
        n0, nt, ratio = gr.projection_point(((1, 1, 1), (2, 1, 1)), ((4, 4, 4), (9, 4, 4)), (1, 1, 1))
        assert ratio == 0.0
        assert np.allclose(nt, [4, 4, 4])

    def test_clamped_beyond_end(self):
        n0, nt, ratio = gr.projection_point(((0, 0, 0), (1, 0, 0)), ((0, 0, 0), (3, 0, 0)), (5, 0, 0))
        assert ratio == 1.0
        assert np.allclose(nt, [3, 0, 0])

    def test_zero_length_link(self):
        with pytest.raises(DegenerateLinkError):
            gr.projection_point(((0, 0, 0), (0, 0, 0)), ((0, 0, 0), (1, 0, 0)), (1, 1, 1))

    def test_ratio_invariance_random(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            s0, e0 = rng.normal(size=3), rng.normal(size=3)
            st, et = rng.normal(size=3), rng.normal(size=3)
            x = rng.normal(size=3) * 2
            if np.linalg.norm(e0 - s0) < 1e-3 or np.linalg.norm(et - st) < 1e-3:
                continue
            _, nt, ratio = gr.projection_point((s0, e0), (st, et), x)
            recomputed = np.linalg.norm(nt - st) / np.linalg.norm(et - st)
            assert abs(recomputed - ratio) < 1e-9


def triangle_graph():
    """Deformable graph whose two links both carry a real up triangle."""
    topo = gr.GraphTopology(
        gr.KIND_DEFORMABLE, 3, [(0, 1), (1, 2)], up_triangles=[(0, 2), (1, 0)]
    )
    params = gr.DeformableGraphParams([[0, 0, 0], [1, 0, 0], [1, 1, 0]])
    return topo, params


class TestDeformableFrames:
    def test_same_params_identity(self):
        topo, params = triangle_graph()
        poses0, posest = gr.deformable_link_frames(topo, params, params.copy(), [0.3, 0.2, 0.1])
        for p0, pt in zip(poses0, posest):
            rel = geo.relative_transform(p0, pt)
            assert rel.allclose(geo.Pose.identity(), atol=1e-12)

    def test_rigid_equivariance(self):
        rng = np.random.default_rng(2)
        topo, params = triangle_graph()
        for _ in range(25):
            q = np.roll(Rotation.random(random_state=rng).as_quat(), 1)
            motion = geo.Pose(q, rng.uniform(-2, 2, 3))
            moved = gr.DeformableGraphParams(
                geo.quat_rotate(np.broadcast_to(motion.rotation, (3, 4)), params.joint_positions) + motion.translation
            )
            x0 = rng.normal(size=3)
            poses0, posest = gr.deformable_link_frames(topo, params, moved, x0)
            for p0, pt in zip(poses0, posest):
                rel = geo.relative_transform(p0, pt)
                assert rel.allclose(motion, atol=1e-9)

    def test_single_link_rotation_about_start(self):
        # one link along +x rotated 90 deg about z at its start joint
        topo = gr.GraphTopology(gr.KIND_DEFORMABLE, 2, [(0, 1)])
        p0 = gr.DeformableGraphParams([[0, 0, 0], [1, 0, 0]])
        pt = gr.DeformableGraphParams([[0, 0, 0], [0, 1, 0]])
        poses0, posest = gr.deformable_link_frames(topo, p0, pt, [0, 0, 0])
        rel = geo.relative_transform(poses0[0], posest[0])
        expected = geo.Pose(geo.quat_from_axis_angle([0, 0, 1], np.pi / 2), [0, 0, 0])
        assert rel.allclose(expected, atol=1e-12)
        assert np.allclose(posest[0].translation, [0, 0, 0], atol=1e-12)


class TestInitDeformable:
    def test_square_corners_all_selected(self):
        cloud = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
        topo, params = gr.init_deformable(cloud, 4, neighbors=2)
        got = {tuple(p) for p in params.joint_positions}
        assert got == {tuple(p) for p in cloud}

    def test_minimum_joint_count(self):
        with pytest.raises(ValidationError):
            gr.init_deformable(np.zeros((10, 3)), 1)

    def test_too_many_joints(self):
        with pytest.raises(ValidationError):
            gr.init_deformable(np.zeros((3, 3)), 5)

    def test_line_extremes(self):
        xs = np.linspace(0, 1, 100)
        cloud = np.stack([xs, np.zeros(100), np.zeros(100)], axis=1)
        topo, params = gr.init_deformable(cloud, 2, neighbors=1)
        got = np.sort(params.joint_positions[:, 0])
        assert got[0] < 0.02 and got[1] > 0.98

    def test_graph_is_connected_and_covered(self):
        rng = np.random.default_rng(3)
        cloud = np.concatenate([rng.normal(size=(40, 3)), rng.normal(size=(40, 3)) + 20])
        topo, params = gr.init_deformable(cloud, 12, neighbors=2)
        comp = gr._union_find_components(12, [tuple(l) for l in topo.links])
        assert len(set(comp)) == 1
        assert topo.up_triangles is not None and topo.up_triangles.shape[0] > 0

    def test_fps_greedy_exhaustive_small(self):
        rng = np.random.default_rng(4)
        cloud = rng.normal(size=(30, 3))
        _, params = gr.init_deformable(cloud, 6, neighbors=2)
        centroid = cloud.mean(axis=0)
        seed = int(np.argmin(np.sum((cloud - centroid) ** 2, axis=1)))
        chosen = [seed]
        for _ in range(6):
            d2 = np.min(
                np.stack([np.sum((cloud - cloud[c]) ** 2, axis=1) for c in chosen]), axis=0
            )
            chosen.append(int(np.argmax(d2)))
        assert np.allclose(params.joint_positions, cloud[chosen[1:]])


class TestFitKinematicTree:
    def sample_on_links(self, topo, params, per_link=30):
        joints, _ = gr.forward_kinematics(topo, params)
        pts = []
        for s, e in topo.links:
            for t in np.linspace(0, 1, per_link):
                pts.append(joints[s] * (1 - t) + joints[e] * t)
        return np.asarray(pts)

    def test_already_optimal_stays_put(self):
        topo = chain_topology(3)
        params = gr.KinematicTreeParams.rest(topo, [1.0, 1.0])
        cloud = self.sample_on_links(topo, params)
        fitted = gr.fit_kinematic_tree((topo, params), cloud, iters=50, step=1e-3)
        j0, _ = gr.forward_kinematics(topo, params)
        j1, _ = gr.forward_kinematics(topo, fitted)
        assert np.max(np.abs(j0 - j1)) < 1e-3

    def test_recovers_rigid_rotation(self):
        topo = chain_topology(4)
        true = gr.KinematicTreeParams.rest(topo, [1.0, 1.0, 1.0])
        true.root_pose = geo.Pose(geo.quat_from_axis_angle([0, 0, 1], np.pi / 6), [0, 0, 0])
        cloud = self.sample_on_links(topo, true)
        init = gr.KinematicTreeParams.rest(topo, [1.0, 1.0, 1.0])
        fitted = gr.fit_kinematic_tree((topo, init), cloud, iters=800, step=0.02, learn_lengths=False)
        # gauge-invariant check: recovered accumulated root rotation
        recovered = geo.quat_mul(fitted.root_pose.rotation, fitted.rotations[0])
        expected = geo.quat_mul(true.root_pose.rotation, true.rotations[0])
        err = geo.quat_angle(geo.quat_mul(recovered, geo.quat_conj(expected)))
        assert np.degrees(err) < 1.0

    def test_empty_cloud_error(self):
        topo = chain_topology(3)
        with pytest.raises(ValidationError):
            gr.fit_kinematic_tree((topo, gr.KinematicTreeParams.rest(topo, [1, 1])), np.zeros((0, 3)))


class TestInverseKinematics:
    def test_already_satisfied(self):
        topo = chain_topology(3)
        params = gr.KinematicTreeParams.rest(topo, [1.0, 1.0])
        res = gr.inverse_kinematics(topo, params, {2: np.array([2.0, 0, 0])})
        assert res.residual < 1e-9
        assert res.reached
        assert np.allclose(res.params.rotations, params.rotations, atol=1e-9)

    def test_right_angle_target(self):
        topo = chain_topology(3)
        params = gr.KinematicTreeParams.rest(topo, [1.0, 1.0])
        res = gr.inverse_kinematics(topo, params, {2: np.array([1.0, 1.0, 0.0])}, iters=300)
        joints, _ = gr.forward_kinematics(topo, res.params)
        assert np.linalg.norm(joints[2] - [1, 1, 0]) < 1e-6
        assert res.reached

    def test_unreachable_flagged_with_closest_residual(self):
        topo = chain_topology(3)
        params = gr.KinematicTreeParams.rest(topo, [1.0, 1.0])
        res = gr.inverse_kinematics(topo, params, {2: np.array([5.0, 0, 0])}, iters=300)
        assert not res.reached
        assert abs(res.residual - 3.0) < 1e-6

    def test_fk_ik_round_trip_random(self):
        rng = np.random.default_rng(5)
        for trial in range(20):
            n = int(rng.integers(3, 7))
            topo = chain_topology(n)
            lengths = rng.uniform(0.5, 1.5, n - 1)
            true = gr.KinematicTreeParams(
                np.stack([np.roll(Rotation.random(random_state=rng).as_quat(), 1) for _ in range(n)]),
                geo.Pose.identity(),
                lengths,
            )
            target, _ = gr.forward_kinematics(topo, true)
            init = gr.KinematicTreeParams.rest(topo, lengths)
            res = gr.inverse_kinematics(topo, init, {n - 1: target[n - 1]}, iters=300)
            assert res.residual < 1e-6, f"trial {trial}: residual {res.residual}"

    def test_pose_target_matches_orientation(self):
        rng = np.random.default_rng(6)
        topo = chain_topology(4)
        lengths = np.array([1.0, 0.8, 1.2])
        true = gr.KinematicTreeParams(
            np.stack([np.roll(Rotation.random(random_state=rng).as_quat(), 1) for _ in range(4)]),
            geo.Pose.identity(),
            lengths,
        )
        joints, _ = gr.forward_kinematics(topo, true)
        # accumulated orientation of the end joint
        acc = geo.quat_mul(true.root_pose.rotation, true.rotations[0])
        for l in topo.tree_order():
            acc = geo.quat_mul(acc, true.rotations[topo.links[l, 1]])
        target = geo.Pose(acc, joints[3])
        res = gr.inverse_kinematics(topo, gr.KinematicTreeParams.rest(topo, lengths), {3: target}, iters=400)
        fk, _ = gr.forward_kinematics(topo, res.params)
        assert np.linalg.norm(fk[3] - joints[3]) < 1e-6
        got = geo.quat_mul(res.params.root_pose.rotation, res.params.rotations[0])
        for l in topo.tree_order():
            got = geo.quat_mul(got, res.params.rotations[topo.links[l, 1]])
        assert np.degrees(geo.quat_angle(geo.quat_mul(got, geo.quat_conj(acc)))) < 1e-3

    def test_missing_target_joint(self):
        topo = chain_topology(3)
        with pytest.raises(ValidationError):
            gr.inverse_kinematics(topo, gr.KinematicTreeParams.rest(topo, [1, 1]), {7: np.zeros(3)})


class TestLift2dSkeleton:
    def test_principal_point(self):
        depth = np.full((10, 10), 2.0)
        pts, valid = gr.lift_2d_skeleton([(5, 5)], depth, (100, 100, 5, 5))
        assert valid[0]
        assert np.allclose(pts[0], [0, 0, 2])

    def test_pinhole_arithmetic(self):
        depth = np.full((60, 60), 2.0)
        pts, valid = gr.lift_2d_skeleton([(50, 0)], depth, (100, 100, 0, 0))
        assert np.allclose(pts[0], [1, 0, 2])

    def test_hole_patched_by_median(self):
        depth = np.full((20, 20), 3.0)
        depth[10, 10] = 0.0
        pts, valid = gr.lift_2d_skeleton([(10, 10)], depth, (100, 100, 10, 10))
        assert valid[0]
        assert np.allclose(pts[0], [0, 0, 3])

    def test_no_valid_depth_marks_missing(self):
        depth = np.zeros((20, 20))
        pts, valid = gr.lift_2d_skeleton([(10, 10)], depth, (100, 100, 10, 10))
        assert not valid[0]
        assert np.all(np.isnan(pts[0]))

    def test_out_of_bounds_rejected(self):
        with pytest.raises(ValidationError):
            gr.lift_2d_skeleton([(100, 5)], np.ones((10, 10)), (1, 1, 0, 0))
