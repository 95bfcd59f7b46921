"""Non-differentiable point-splat projector for inspection images and masks.

A hard z-buffer stands in for the out-of-scope rasterizer: per pixel the
front-most splat within a circular footprint wins, ties broken by lower
splat index for determinism.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ValidationError
from .geometry import Pose, quat_rotate
from .skinning import Splats

OPACITY_CUTOFF = 0.05


@dataclass
class Camera:
    """Pinhole camera; ``pose`` maps world coordinates into the camera frame."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("image dimensions must be positive")

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(u,v) pixel coordinates and camera-space depths of world points."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        cam = quat_rotate(np.broadcast_to(self.pose.rotation, (pts.shape[0], 4)), pts) + self.pose.translation
        z = cam[:, 2]
        safe = np.where(np.abs(z) < 1e-12, 1e-12, z)
        u = self.fx * cam[:, 0] / safe + self.cx
        v = self.fy * cam[:, 1] / safe + self.cy
        return np.stack([u, v], axis=1), z

    @classmethod
    def default_for(cls, positions: np.ndarray, width: int = 256, height: int = 256) -> "Camera":
        """Deterministic camera framing a point cloud from along -z."""
        pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        center = pts.mean(axis=0) if pts.size else np.zeros(3)
        diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))) if pts.size else 1.0
        diag = max(diag, 1e-6)
        eye = center - np.array([0.0, 0.0, 2.5 * diag])
        return cls(
            float(min(width, height)),
            float(min(width, height)),
            (width - 1) / 2.0,
            (height - 1) / 2.0,
            width,
            height,
            Pose(np.array([1.0, 0, 0, 0]), -eye),
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "rotation": list(map(float, self.pose.rotation)),
            "translation": list(map(float, self.pose.translation)),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
            int(d["width"]), int(d["height"]),
            Pose(np.asarray(d.get("rotation", [1, 0, 0, 0]), dtype=np.float64),
                 np.asarray(d.get("translation", [0, 0, 0]), dtype=np.float64)),
        )


def _winner_image(splats: Splats, camera: Camera, radius_px: int) -> tuple[np.ndarray, np.ndarray]:
    """Z-buffer winner image of original splat indices (-1 where empty)."""
    uv, depth = camera.project(splats.positions)
    cols = np.floor(uv[:, 0] + 0.5).astype(np.int64)
    rows = np.floor(uv[:, 1] + 0.5).astype(np.int64)
    keep = (
        (depth > 1e-9)
        & (splats.opacities >= OPACITY_CUTOFF)
        & (rows >= -radius_px)
        & (rows < camera.height + radius_px)
        & (cols >= -radius_px)
        & (cols < camera.width + radius_px)
    )
    original = np.nonzero(keep)[0]
    winner = kernels.zbuffer(rows[keep], cols[keep], depth[keep], camera.height, camera.width, radius_px)
    return winner, original


def render_points(splats: Splats, camera: Camera, radius_px: int = 2) -> np.ndarray:
    """Project splats into an (H,W,3) uint8 image over a black background."""
    image = np.zeros((camera.height, camera.width, 3), dtype=np.uint8)
    winner, original = _winner_image(splats, camera, radius_px)
    hit = winner >= 0
    if np.any(hit):
        colors = np.clip(splats.colors * 255.0 + 0.5, 0, 255).astype(np.uint8)
        image[hit] = colors[original[winner[hit]]]
    return image


def render_instance_mask(splats: Splats, camera: Camera, instance_count: int, radius_px: int = 2) -> np.ndarray:
    """Per-instance binary masks (I,H,W) from the same projection rule."""
    if len(splats) and int(splats.instance_ids.max()) >= instance_count:
        raise ValidationError("instance_id out of range for instance_count")
    masks = np.zeros((instance_count, camera.height, camera.width), dtype=np.uint8)
    winner, original = _winner_image(splats, camera, radius_px)
    hit = winner >= 0
    if np.any(hit):
        ids = splats.instance_ids[original[winner[hit]]]
        ys, xs = np.nonzero(hit)
        masks[ids, ys, xs] = 1
    return masks


# ---------------------------------------------------------------------------
# image files


def _png_bytes(image: np.ndarray) -> bytes:
    h, w = image.shape[:2]
    raw = b"".join(b"\x00" + image[r].tobytes() for r in range(h))

    def chunk(tag: bytes, data: bytes) -> bytes:
        return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data))

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(raw, 9))
        + chunk(b"IEND", b"")
    )


def image_bytes(image: np.ndarray, fmt: str) -> bytes:
    """Encode an (H,W,3) uint8 image; fmt is 'png' or 'ppm'."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError("expected an (H,W,3) image")
    if fmt == "png":
        return _png_bytes(image)
    if fmt == "ppm":
        h, w = image.shape[:2]
        return f"P6\n{w} {h}\n255\n".encode() + image.tobytes()
    raise ValidationError(f"unsupported image format: {fmt!r}")


def write_image(path, image: np.ndarray) -> None:
    """Write PNG or PPM selected by the file extension."""
    p = str(path)
    fmt = "png" if p.lower().endswith(".png") else "ppm" if p.lower().endswith(".ppm") else None
    if fmt is None:
        raise ValidationError("image path must end in .png or .ppm")
    with open(p, "wb") as f:
        f.write(image_bytes(image, fmt))


def read_pgm(path) -> np.ndarray:
    """Read a P2/P5 PGM image into (H,W) uint8; used for mask ingestion."""
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    i = 0
    while len(tokens) < 4:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        tokens.append(data[start:i])
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P5":
        pixels = np.frombuffer(data[i + 1 : i + 1 + w * h], dtype=np.uint8)
    elif magic == b"P2":
        pixels = np.array(data[i:].split()[: w * h], dtype=np.uint8)
    else:
        raise ValidationError(f"unsupported PGM magic {magic!r} in {path}")
    if pixels.size != w * h:
        raise ValidationError(f"truncated PGM data in {path}")
    if maxval != 255:
        pixels = (pixels.astype(np.float64) * 255.0 / maxval + 0.5).astype(np.uint8)
    return pixels.reshape(h, w)


def write_pgm(path, image: np.ndarray) -> None:
    image = np.ascontiguousarray(image, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode() + image.tobytes())
