"""Sparse explicit motion representation for dynamic splat clouds.

Splat clouds bind to motion graphs (kinematic trees or deformable graphs),
per-link rigid motions blend onto points through dual quaternion skinning
with learnable weight painting, and graph parameters fit observed frame
sequences by gradient descent. An editing server and CLI drive novel-pose
animation and retargeting.
"""

from .errors import (
    DegenerateBlendError,
    DegenerateFrameError,
    DegenerateLinkError,
    DegenerateTransformError,
    MotionBlendError,
    OptimizationError,
    PlyParseError,
    ProtocolError,
    TopologyError,
    ValidationError,
)
from .geometry import (
    DualQuaternion,
    Pose,
    dq_blend,
    dq_to_pose,
    look_at,
    pose_to_dq,
    relative_transform,
)
from .graphs import (
    KIND_DEFORMABLE,
    KIND_TREE,
    DeformableGraphParams,
    GraphTopology,
    IKResult,
    KinematicTreeParams,
    MotionSequence,
    deformable_link_frames,
    fit_kinematic_tree,
    forward_kinematics,
    init_deformable,
    inverse_kinematics,
    lift_2d_skeleton,
    projection_point,
)
from .optimize import (
    FitData,
    LossConfig,
    OptimSettings,
    SceneState,
    canonical_reg,
    check_gradients,
    data_loss,
    fit_sequence,
    keypoint_reg,
    mask_loss,
)
from .render import Camera, render_instance_mask, render_points, write_image
from .sceneio import (
    FrameSet,
    KeyframeTrack,
    Manifest,
    SceneCheckpoint,
    interpolate_keyframes,
    load_checkpoint,
    load_frames,
    load_graph,
    load_manifest,
    load_track,
    read_ply,
    save_checkpoint,
    save_frames,
    save_graph,
    save_manifest,
    save_track,
    write_ply,
)
from .skinning import Splat, Splats, WeightPainting, blend_motion, deform_splats, paint_splats, paint_weights

__version__ = "0.1.0"
