"""Batch command line: graph init, fitting, animation, rendering, serving.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Outputs are written atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import animation
from . import graphs as gr
from . import optimize as op
from . import sceneio as io
from .errors import (
    DegenerateBlendError,
    DegenerateFrameError,
    DegenerateLinkError,
    DegenerateTransformError,
    MotionBlendError,
    OptimizationError,
)
from .render import render_points, write_image
from .skinning import Splats, paint_splats

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_NUMERIC_ERRORS = (
    OptimizationError,
    DegenerateTransformError,
    DegenerateBlendError,
    DegenerateFrameError,
    DegenerateLinkError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for all stochastic choices")

    parser = _Parser(prog="motionblend", description="Motion-graph splat deformation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-graph", parents=[common], help="build a graph spec from a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["deformable", "tree"], default="deformable")
    p.add_argument("--joints", type=int, default=32, help="deformable joint count")
    p.add_argument("--knn", type=int, default=4, help="deformable neighbor count")
    p.add_argument("--graph", help="tree template spec (required for --kind tree)")
    p.add_argument("--iters", type=int, default=500, help="tree fitting iterations")
    p.add_argument("--lr", type=float, default=0.03, help="tree fitting step size")

    p = sub.add_parser("fit", parents=[common], help="fit a motion sequence to observed frames")
    p.add_argument("--manifest", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--lambda-data", type=float, default=1.0)
    p.add_argument("--lambda-canon", type=float, default=0.1)
    p.add_argument("--lambda-kp", type=float, default=0.1)
    p.add_argument("--lambda-mask", type=float, default=0.1)
    p.add_argument("--mode", choices=["softmax", "normalized"], default="softmax")
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None, help="uniform kernel radius override (default: graph density)")
    p.add_argument("--learn-gamma", action="store_true")
    p.add_argument("--learn-phi", action="store_true")
    p.add_argument("--strict", action="store_true", help="abort if the initial gradient check fails")

    p = sub.add_parser("animate", parents=[common], help="render an animation from keyframes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--keyframes", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--radius", type=int, default=2)

    p = sub.add_parser("render", parents=[common], help="render one frame of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--out", required=True, help="output image (.png or .ppm)")
    p.add_argument("--radius", type=int, default=2)

    p = sub.add_parser("check-grad", parents=[common], help="verify gradients against central differences")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = sub.add_parser("serve", parents=[common], help="run the interactive editing server")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--scene", required=True, help="checkpoint file to serve")
    p.add_argument("--host", default="127.0.0.1")
    return parser


def _splats_from_cloud(frames: io.FrameSet) -> Splats:
    cloud = frames.canonical_cloud()
    colors = None
    instances = None
    if frames.colors is not None:
        colors = frames.colors[frames.canonical_index].astype(np.float64) / 255.0
    if frames.instance_ids is not None:
        instances = frames.instance_ids[frames.canonical_index]
    return Splats(cloud, colors=colors, instance_ids=instances)


def _cmd_init_graph(args) -> int:
    manifest = io.load_manifest(args.manifest)
    frames = manifest.load_frame_set()
    cloud = frames.canonical_cloud()
    if args.kind == "deformable":
        topo, params = gr.init_deformable(cloud, args.joints, args.knn)
    else:
        if not args.graph:
            print("error: --kind tree requires --graph template", file=sys.stderr)
            return EXIT_USAGE
        topo, template = io.load_graph(args.graph)
        skeleton = cloud
        kps = manifest.load_keypoints()
        if kps is not None and manifest.camera is not None:
            depth = manifest.load_depths()
            if depth is not None:
                cam = manifest.camera
                lifted, valid = gr.lift_2d_skeleton(
                    kps[manifest.canonical_index][:, :2],
                    depth[manifest.canonical_index],
                    (cam.fx, cam.fy, cam.cx, cam.cy),
                )
                if np.any(valid):
                    skeleton = lifted[valid]
        params = gr.fit_kinematic_tree((topo, template), skeleton, iters=args.iters, step=args.lr)
    io.save_graph(args.out, topo, params)
    print(f"graph spec written to {args.out} ({topo.kind}, {topo.joint_count} joints, {topo.link_count} links)")
    return EXIT_OK


def _cmd_fit(args) -> int:
    manifest = io.load_manifest(args.manifest)
    frames = manifest.load_frame_set()
    topo, params0 = io.load_graph(args.graph)
    splats = _splats_from_cloud(frames)
    gammas = None if args.gamma is None else np.full(topo.link_count, args.gamma)
    painting = paint_splats(splats, topo, params0, gammas, mode=args.mode, top_k=args.top_k)
    sequence = gr.MotionSequence.from_canonical(topo, params0, frames.frame_count, frames.canonical_index)
    scene = op.SceneState(splats, sequence, painting, manifest.camera)
    keypoints = manifest.load_keypoints()
    masks = manifest.load_masks()
    cfg = op.LossConfig(
        lambda_data=args.lambda_data,
        lambda_canonical=args.lambda_canon,
        lambda_keypoint=args.lambda_kp if keypoints is not None else 0.0,
        lambda_mask=args.lambda_mask if masks is not None else 0.0,
        learn_gamma=args.learn_gamma,
        learn_phi=args.learn_phi,
    )
    settings = op.OptimSettings(iters=args.iters, lr=args.lr, seed=args.seed, strict=args.strict)
    cp = op.fit_sequence(scene, op.FitData(frames, keypoints, masks), cfg, settings)
    io.save_checkpoint(args.out, cp)
    print(f"checkpoint written to {args.out}; final loss {cp.loss_history[-1]:.6e}")
    return EXIT_OK


def _cmd_animate(args) -> int:
    cp = io.load_checkpoint(args.checkpoint)
    track = io.load_track(args.keyframes)
    paths = animation.render_animation(cp, track, args.frames, args.out, radius_px=args.radius)
    print(f"wrote {len(paths) - 1} frames and track to {args.out}")
    return EXIT_OK


def _cmd_render(args) -> int:
    cp = io.load_checkpoint(args.checkpoint)
    if not (0 <= args.frame < cp.frame_count):
        print(f"error: frame {args.frame} outside [0, {cp.frame_count})", file=sys.stderr)
        return EXIT_DATA
    from .skinning import deform_splats

    painting = animation.checkpoint_painting(cp)
    moved = deform_splats(cp.splats, cp.topology, cp.canonical_theta(), cp.thetas[args.frame], painting)
    image = render_points(moved, animation.checkpoint_camera(cp), args.radius)
    write_image(args.out, image)
    print(f"image written to {args.out}")
    return EXIT_OK


class _SabotagedProvider:
    """Test hook: doubles the analytic gradient so check-grad must fail."""

    def __init__(self, inner):
        self.inner = inner

    def evaluate(self, params):
        return self.inner.evaluate(params)

    def gradient(self, params):
        return 2.0 * self.inner.gradient(params)


def _cmd_check_grad(args) -> int:
    cp = io.load_checkpoint(args.checkpoint)
    manifest = io.load_manifest(args.manifest)
    frames = manifest.load_frame_set()
    painting = animation.checkpoint_painting(cp)
    sequence = gr.MotionSequence(cp.topology, [t.copy() for t in cp.thetas], cp.canonical_index)
    scene = op.SceneState(cp.splats, sequence, painting, manifest.camera or cp.camera)
    cfg = op.LossConfig.from_dict(cp.loss_config) if cp.loss_config else op.LossConfig()
    keypoints = manifest.load_keypoints()
    masks = manifest.load_masks()
    if keypoints is None:
        cfg.lambda_keypoint = 0.0
    if masks is None:
        cfg.lambda_mask = 0.0
    provider = op.SceneLossProvider(scene, op.FitData(frames, keypoints, masks), cfg)
    params = provider.pack()
    if os.environ.get("MBGS_CHECKGRAD_SABOTAGE", "") == "1":
        provider = _SabotagedProvider(provider)
    err = op.check_gradients(provider, params, args.h)
    print(f"max relative gradient error: {err:.6e}")
    if err > args.tolerance:
        print(f"error: exceeds tolerance {args.tolerance}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _cmd_serve(args) -> int:
    from .server import SceneServer

    server = SceneServer(args.host, args.port, args.scene)
    print(f"serving {args.scene} on {args.host}:{args.port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return EXIT_OK


_COMMANDS = {
    "init-graph": _cmd_init_graph,
    "fit": _cmd_fit,
    "animate": _cmd_animate,
    "render": _cmd_render,
    "check-grad": _cmd_check_grad,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except _NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MotionBlendError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
