"""Shared animation export used by both the CLI and the edit server.

Keeping one code path guarantees the two surfaces emit byte-identical
frame and track files for identical inputs.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ValidationError
from .render import Camera, image_bytes, render_points
from .sceneio import KeyframeTrack, SceneCheckpoint, interpolate_keyframes, track_bytes, write_atomic
from .skinning import deform_splats, paint_splats


def checkpoint_camera(cp: SceneCheckpoint) -> Camera:
    return cp.camera if cp.camera is not None else Camera.default_for(cp.splats.positions)


def checkpoint_painting(cp: SceneCheckpoint):
    return paint_splats(cp.splats, cp.topology, cp.canonical_theta(), cp.gammas, cp.painting_mode, cp.top_k)


def render_animation(
    cp: SceneCheckpoint,
    track: KeyframeTrack,
    frame_count: int,
    out_dir,
    radius_px: int = 2,
    image_format: str = "png",
) -> list[str]:
    """Sample the track uniformly, deform, render, and write frames + track.

    Returns the written paths (frame images first, then the track copy).
    """
    if track.keyframe_count < 2:
        raise ValidationError("animation export needs at least 2 keyframes")
    if frame_count < 2:
        raise ValidationError("frame_count must be at least 2 to span the track")
    if track.kind != cp.topology.kind:
        raise ValidationError("keyframe track kind does not match the checkpoint graph")
    os.makedirs(out_dir, exist_ok=True)
    camera = checkpoint_camera(cp)
    painting = checkpoint_painting(cp)
    canonical = cp.canonical_theta()
    times = np.linspace(track.times[0], track.times[-1], frame_count)
    times[0], times[-1] = track.times[0], track.times[-1]
    paths = []
    for i, t in enumerate(times):
        params = interpolate_keyframes(track, float(t))
        moved = deform_splats(cp.splats, cp.topology, canonical, params, painting)
        image = render_points(moved, camera, radius_px)
        path = os.path.join(out_dir, f"frame_{i:04d}.{image_format}")
        write_atomic(path, image_bytes(image, image_format))
        paths.append(path)
    track_path = os.path.join(out_dir, "track.json")
    write_atomic(track_path, track_bytes(track))
    paths.append(track_path)
    return paths
