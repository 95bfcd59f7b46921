"""Ingestion and persistence: PLY frames, manifests, graph specs, checkpoints,
keyframe tracks and 2D keypoints.

All structured files are JSON with a ``version`` field and canonical
serialization (sorted keys, no whitespace), so identical state produces
identical bytes. PLY supports ascii and binary little-endian with the
properties x,y,z (float32), red,green,blue (uchar) and optional
instance_id (int32).
"""

from __future__ import annotations

import json
import os
import tempfile
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PlyParseError, ValidationError
from .geometry import Pose, quat_slerp
from .graphs import (
    KIND_DEFORMABLE,
    KIND_TREE,
    DeformableGraphParams,
    GraphTopology,
    KinematicTreeParams,
)
from .render import Camera
from .skinning import PAINT_MODES, Splats

FORMAT_VERSION = 1

_PLY_DTYPES = {
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
}


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_atomic(path, data: bytes) -> None:
    """Write via a temp file + rename so failures leave no partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path, obj) -> None:
    write_atomic(path, (dumps_canonical(obj) + "\n").encode())


def _read_json(path) -> dict:
    try:
        with open(path, "r") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ValidationError(f"missing file: {path}")
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON in {path}: {exc}")


# ---------------------------------------------------------------------------
# PLY


def read_ply(path):
    """Parse a PLY vertex cloud; returns dict(positions, colors?, instance_ids?)."""
    with open(path, "rb") as f:
        data = f.read()
    lines = []
    offset = 0
    lineno = 0
    while True:
        end = data.find(b"\n", offset)
        if end < 0:
            raise PlyParseError(f"{path}:{lineno + 1}: header never ends")
        line = data[offset:end].decode("ascii", errors="replace").strip()
        offset = end + 1
        lineno += 1
        lines.append((lineno, line))
        if line == "end_header":
            break
    if not lines or lines[0][1] != "ply":
        raise PlyParseError(f"{path}:1: not a PLY file")
    fmt = None
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for ln, line in lines[1:]:
        if not line or line.startswith("comment"):
            continue
        parts = line.split()
        if parts[0] == "format":
            if parts[1] not in ("ascii", "binary_little_endian"):
                raise PlyParseError(f"{path}:{ln}: unsupported format {parts[1]}")
            fmt = parts[1]
        elif parts[0] == "element":
            if parts[1] == "vertex":
                count = int(parts[2])
                in_vertex = True
            else:
                if int(parts[2]) != 0:
                    raise PlyParseError(f"{path}:{ln}: unsupported element {parts[1]}")
                in_vertex = False
        elif parts[0] == "property":
            if in_vertex:
                if parts[1] == "list":
                    raise PlyParseError(f"{path}:{ln}: list properties unsupported")
                if parts[1] not in _PLY_DTYPES:
                    raise PlyParseError(f"{path}:{ln}: unknown property type {parts[1]}")
                props.append((parts[2], parts[1]))
        elif parts[0] == "end_header":
            break
        else:
            raise PlyParseError(f"{path}:{ln}: unexpected header line {line!r}")
    if fmt is None or count is None:
        raise PlyParseError(f"{path}: header missing format or vertex element")
    names = [n for n, _ in props]
    for need in ("x", "y", "z"):
        if need not in names:
            raise PlyParseError(f"{path}: missing vertex property {need!r}")
    dtype = np.dtype([(n, _PLY_DTYPES[t]) for n, t in props])
    if fmt == "binary_little_endian":
        expected = count * dtype.itemsize
        body = data[offset : offset + expected]
        if len(body) != expected:
            raise PlyParseError(f"{path}: binary body truncated ({len(body)} of {expected} bytes)")
        table = np.frombuffer(body, dtype=dtype, count=count)
    else:
        rows = data[offset:].decode("ascii", errors="replace").split("\n")
        values = []
        for i in range(count):
            if i >= len(rows) or not rows[i].strip():
                raise PlyParseError(f"{path}:{lineno + i + 1}: missing vertex row")
            parts = rows[i].split()
            if len(parts) != len(props):
                raise PlyParseError(f"{path}:{lineno + i + 1}: expected {len(props)} values, got {len(parts)}")
            values.append(parts)
        table = np.zeros(count, dtype=dtype)
        cols = np.asarray(values)
        for j, (n, t) in enumerate(props):
            table[n] = cols[:, j].astype(_PLY_DTYPES[t])
    out = {
        "positions": np.stack([table["x"], table["y"], table["z"]], axis=1).astype(np.float64)
    }
    if all(c in names for c in ("red", "green", "blue")):
        out["colors"] = np.stack([table["red"], table["green"], table["blue"]], axis=1).astype(np.uint8)
    if "instance_id" in names:
        out["instance_ids"] = table["instance_id"].astype(np.int64)
    return out


def write_ply(path, positions, colors=None, instance_ids=None, binary: bool = True) -> None:
    positions = np.asarray(positions, dtype=np.float32).reshape(-1, 3)
    n = positions.shape[0]
    props = [("x", "float"), ("y", "float"), ("z", "float")]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8).reshape(n, 3)
        props += [("red", "uchar"), ("green", "uchar"), ("blue", "uchar")]
    if instance_ids is not None:
        instance_ids = np.asarray(instance_ids, dtype=np.int32).reshape(n)
        props += [("instance_id", "int")]
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0", f"element vertex {n}"]
    header += [f"property {t} {name}" for name, t in props]
    header.append("end_header")
    table = np.zeros(n, dtype=np.dtype([(name, _PLY_DTYPES[t]) for name, t in props]))
    table["x"], table["y"], table["z"] = positions[:, 0], positions[:, 1], positions[:, 2]
    if colors is not None:
        table["red"], table["green"], table["blue"] = colors[:, 0], colors[:, 1], colors[:, 2]
    if instance_ids is not None:
        table["instance_id"] = instance_ids
    if binary:
        body = table.tobytes()
    else:
        rows = []
        for i in range(n):
            cells = []
            for name, t in props:
                v = table[name][i]
                if t == "float":
                    cells.append(np.format_float_positional(np.float32(v), unique=True, trim="0"))
                else:
                    cells.append(str(int(v)))
            rows.append(" ".join(cells))
        body = ("\n".join(rows) + "\n").encode("ascii")
    write_atomic(path, ("\n".join(header) + "\n").encode("ascii") + body)


# ---------------------------------------------------------------------------
# frame sets


@dataclass
class FrameSet:
    """Ordered point-cloud frames, optionally in point correspondence."""

    clouds: list
    colors: list | None = None
    instance_ids: list | None = None
    correspondence: bool = False
    canonical_index: int = 0

    def __post_init__(self):
        self.clouds = [np.asarray(c, dtype=np.float64).reshape(-1, 3) for c in self.clouds]
        if not self.clouds:
            raise ValidationError("frame set needs at least one frame")
        if not (0 <= self.canonical_index < len(self.clouds)):
            raise ValidationError("canonical_index out of range")
        if self.correspondence:
            counts = {c.shape[0] for c in self.clouds}
            if len(counts) != 1:
                raise ValidationError("correspondence mode requires identical point counts per frame")

    @property
    def frame_count(self) -> int:
        return len(self.clouds)

    def canonical_cloud(self) -> np.ndarray:
        return self.clouds[self.canonical_index]


def frame_path(pattern: str, index: int) -> str:
    return pattern.format(t=index)


def load_frames(pattern: str, count: int, correspondence: bool = False, canonical_index: int = 0) -> FrameSet:
    clouds, colors, instances = [], [], []
    for t in range(count):
        p = frame_path(pattern, t)
        if not os.path.exists(p):
            raise ValidationError(f"frame {t} missing: {p}")
        data = read_ply(p)
        clouds.append(data["positions"])
        colors.append(data.get("colors"))
        instances.append(data.get("instance_ids"))
    has_colors = all(c is not None for c in colors)
    has_instances = all(i is not None for i in instances)
    return FrameSet(
        clouds,
        colors if has_colors else None,
        instances if has_instances else None,
        correspondence,
        canonical_index,
    )


def save_frames(frames: FrameSet, pattern: str, binary: bool = True) -> list[str]:
    paths = []
    for t, cloud in enumerate(frames.clouds):
        p = frame_path(pattern, t)
        write_ply(
            p,
            cloud,
            None if frames.colors is None else frames.colors[t],
            None if frames.instance_ids is None else frames.instance_ids[t],
            binary=binary,
        )
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# manifest


@dataclass
class Manifest:
    """Dataset description: frames, canonical frame, camera, annotation files."""

    frame_pattern: str
    frame_count: int
    canonical_index: int = 0
    correspondence: bool = False
    camera: Camera | None = None
    keypoints_pattern: str | None = None
    masks_pattern: str | None = None
    depth_pattern: str | None = None  # per-frame .npy depth arrays
    instance_count: int | None = None
    base_dir: str = "."

    def resolve(self, pattern: str) -> str:
        return pattern if os.path.isabs(pattern) else os.path.join(self.base_dir, pattern)

    def load_frame_set(self) -> FrameSet:
        return load_frames(
            self.resolve(self.frame_pattern), self.frame_count, self.correspondence, self.canonical_index
        )

    def load_keypoints(self) -> list | None:
        if self.keypoints_pattern is None:
            return None
        out = []
        for t in range(self.frame_count):
            p = frame_path(self.resolve(self.keypoints_pattern), t)
            rows = _read_json(p)
            out.append(np.asarray(rows, dtype=np.float64).reshape(-1, 3))
        return out

    def load_depths(self) -> list | None:
        if self.depth_pattern is None:
            return None
        return [
            np.load(frame_path(self.resolve(self.depth_pattern), t)) for t in range(self.frame_count)
        ]

    def load_masks(self) -> list | None:
        """Per-frame (I,H,W) binary masks from label images (value = id + 1)."""
        if self.masks_pattern is None or self.instance_count is None:
            return None
        from .render import read_pgm

        out = []
        for t in range(self.frame_count):
            label = read_pgm(frame_path(self.resolve(self.masks_pattern), t))
            planes = np.zeros((self.instance_count, *label.shape), dtype=np.uint8)
            for i in range(self.instance_count):
                planes[i] = (label == i + 1).astype(np.uint8)
            out.append(planes)
        return out


def load_manifest(path) -> Manifest:
    d = _read_json(path)
    if d.get("version", FORMAT_VERSION) != FORMAT_VERSION:
        raise ValidationError(f"unsupported manifest version in {path}")
    for key in ("frame_pattern", "frame_count"):
        if key not in d:
            raise ValidationError(f"manifest {path} missing {key!r}")
    return Manifest(
        frame_pattern=d["frame_pattern"],
        frame_count=int(d["frame_count"]),
        canonical_index=int(d.get("canonical_index", 0)),
        correspondence=bool(d.get("correspondence", False)),
        camera=Camera.from_dict(d["camera"]) if "camera" in d else None,
        keypoints_pattern=d.get("keypoints_pattern"),
        masks_pattern=d.get("masks_pattern"),
        depth_pattern=d.get("depth_pattern"),
        instance_count=d.get("instance_count"),
        base_dir=str(Path(path).parent),
    )


def save_manifest(path, manifest: Manifest) -> None:
    d = {
        "version": FORMAT_VERSION,
        "frame_pattern": manifest.frame_pattern,
        "frame_count": manifest.frame_count,
        "canonical_index": manifest.canonical_index,
        "correspondence": manifest.correspondence,
    }
    if manifest.camera is not None:
        d["camera"] = manifest.camera.to_dict()
    if manifest.keypoints_pattern is not None:
        d["keypoints_pattern"] = manifest.keypoints_pattern
    if manifest.masks_pattern is not None:
        d["masks_pattern"] = manifest.masks_pattern
    if manifest.depth_pattern is not None:
        d["depth_pattern"] = manifest.depth_pattern
    if manifest.instance_count is not None:
        d["instance_count"] = manifest.instance_count
    _write_json(path, d)


# ---------------------------------------------------------------------------
# graph specs


def _params_to_dict(kind: str, params) -> dict:
    if kind == KIND_TREE:
        return {
            "joint_rotations": params.rotations.tolist(),
            "root_rotation": params.root_pose.rotation.tolist(),
            "root_translation": params.root_pose.translation.tolist(),
        }
    return {"joint_positions": params.joint_positions.tolist()}


def _params_from_dict(kind: str, d: dict, link_lengths=None):
    if kind == KIND_TREE:
        return KinematicTreeParams(
            np.asarray(d["joint_rotations"], dtype=np.float64),
            Pose(np.asarray(d["root_rotation"], dtype=np.float64), np.asarray(d["root_translation"], dtype=np.float64)),
            np.asarray(link_lengths, dtype=np.float64),
        )
    return DeformableGraphParams(np.asarray(d["joint_positions"], dtype=np.float64))


def save_graph(path, topology: GraphTopology, params) -> None:
    d = {
        "version": FORMAT_VERSION,
        "kind": topology.kind,
        "joint_count": topology.joint_count,
        "links": topology.links.tolist(),
    }
    if topology.kind == KIND_TREE:
        d["root_index"] = topology.root_index
        d["link_lengths"] = params.link_lengths.tolist()
        d["joint_rotations"] = params.rotations.tolist()
        d["root_rotation"] = params.root_pose.rotation.tolist()
        d["root_translation"] = params.root_pose.translation.tolist()
    else:
        d["joint_positions"] = params.joint_positions.tolist()
        if topology.up_triangles is not None:
            d["up_triangles"] = topology.up_triangles.tolist()
    _write_json(path, d)


def load_graph(path):
    d = _read_json(path)
    if d.get("version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported graph spec version in {path}")
    kind = d["kind"]
    if kind == KIND_TREE:
        topo = GraphTopology(kind, int(d["joint_count"]), d["links"], root_index=int(d["root_index"]))
        rots = d.get("joint_rotations") or np.tile([1.0, 0, 0, 0], (topo.joint_count, 1)).tolist()
        params = KinematicTreeParams(
            np.asarray(rots, dtype=np.float64),
            Pose(
                np.asarray(d.get("root_rotation", [1, 0, 0, 0]), dtype=np.float64),
                np.asarray(d.get("root_translation", [0, 0, 0]), dtype=np.float64),
            ),
            np.asarray(d["link_lengths"], dtype=np.float64),
        )
    elif kind == KIND_DEFORMABLE:
        topo = GraphTopology(kind, int(d["joint_count"]), d["links"], up_triangles=d.get("up_triangles"))
        params = DeformableGraphParams(np.asarray(d["joint_positions"], dtype=np.float64))
    else:
        raise ValidationError(f"unknown graph kind {kind!r} in {path}")
    return topo, params


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class SceneCheckpoint:
    """Full persisted scene: splats, graph, per-frame theta, painting, history."""

    topology: GraphTopology
    thetas: list
    canonical_index: int
    gammas: np.ndarray
    painting_mode: str
    top_k: int | None
    splats: Splats
    loss_config: dict = field(default_factory=dict)
    loss_history: list = field(default_factory=list)
    camera: Camera | None = None
    version: int = FORMAT_VERSION

    def __post_init__(self):
        self.gammas = np.asarray(self.gammas, dtype=np.float64).reshape(-1)
        if self.painting_mode not in PAINT_MODES:
            raise ValidationError("unknown painting mode in checkpoint")
        if not (0 <= self.canonical_index < len(self.thetas)):
            raise ValidationError("canonical_index out of range")

    def canonical_theta(self):
        return self.thetas[self.canonical_index]

    @property
    def frame_count(self) -> int:
        return len(self.thetas)


def save_checkpoint(path, cp: SceneCheckpoint) -> None:
    topo = cp.topology
    d = {
        "version": cp.version,
        "kind": topo.kind,
        "topology": {
            "joint_count": topo.joint_count,
            "links": topo.links.tolist(),
            "root_index": topo.root_index,
            "up_triangles": None if topo.up_triangles is None else topo.up_triangles.tolist(),
        },
        "canonical_index": cp.canonical_index,
        "gammas": cp.gammas.tolist(),
        "painting_mode": cp.painting_mode,
        "top_k": cp.top_k,
        "loss_config": cp.loss_config,
        "loss_history": cp.loss_history,
        "thetas": [_params_to_dict(topo.kind, p) for p in cp.thetas],
        "splats": {
            "positions": cp.splats.positions.tolist(),
            "rotations": cp.splats.rotations.tolist(),
            "scales": cp.splats.scales.tolist(),
            "opacities": cp.splats.opacities.tolist(),
            "colors": cp.splats.colors.tolist(),
            "instance_ids": cp.splats.instance_ids.tolist(),
        },
    }
    if topo.kind == KIND_TREE:
        d["link_lengths"] = cp.thetas[0].link_lengths.tolist()
    if cp.camera is not None:
        d["camera"] = cp.camera.to_dict()
    _write_json(path, d)


def load_checkpoint(path) -> SceneCheckpoint:
    d = _read_json(path)
    if d.get("version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported checkpoint version in {path}")
    t = d["topology"]
    kind = d["kind"]
    topo = GraphTopology(
        kind,
        int(t["joint_count"]),
        t["links"],
        root_index=t.get("root_index"),
        up_triangles=t.get("up_triangles"),
    )
    lengths = d.get("link_lengths")
    thetas = [_params_from_dict(kind, p, lengths) for p in d["thetas"]]
    sp = d["splats"]
    splats = Splats(
        sp["positions"], sp["rotations"], sp["scales"], sp["opacities"], sp["colors"], sp["instance_ids"]
    )
    return SceneCheckpoint(
        topology=topo,
        thetas=thetas,
        canonical_index=int(d["canonical_index"]),
        gammas=np.asarray(d["gammas"], dtype=np.float64),
        painting_mode=d["painting_mode"],
        top_k=d.get("top_k"),
        splats=splats,
        loss_config=d.get("loss_config", {}),
        loss_history=d.get("loss_history", []),
        camera=Camera.from_dict(d["camera"]) if "camera" in d else None,
    )


# ---------------------------------------------------------------------------
# keyframe tracks


@dataclass
class KeyframeTrack:
    """Time-stamped theta snapshots; rotations slerp, positions lerp."""

    kind: str
    times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.times) != len(self.snapshots):
            raise ValidationError("times and snapshots must align")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValidationError("keyframe times must strictly increase")

    def append(self, time: float, params) -> None:
        if self.times and time <= self.times[-1]:
            raise ValidationError("keyframe time must exceed the previous keyframe")
        self.times.append(float(time))
        self.snapshots.append(params.copy())

    @property
    def keyframe_count(self) -> int:
        return len(self.times)


def interpolate_keyframes(track: KeyframeTrack, t: float):
    """Theta at time t: spherical for rotations, linear for positions/lengths."""
    if not track.times:
        raise ValidationError("empty keyframe track")
    if t < track.times[0] or t > track.times[-1]:
        raise ValidationError(f"time {t} outside keyframe range [{track.times[0]}, {track.times[-1]}]")
    for i, kt in enumerate(track.times):
        if t == kt:
            return track.snapshots[i].copy()
    hi = bisect_right(track.times, t)
    lo = hi - 1
    u = (t - track.times[lo]) / (track.times[hi] - track.times[lo])
    a, b = track.snapshots[lo], track.snapshots[hi]
    if track.kind == KIND_TREE:
        rots = np.stack([quat_slerp(a.rotations[j], b.rotations[j], u) for j in range(a.rotations.shape[0])])
        root = Pose(
            quat_slerp(a.root_pose.rotation, b.root_pose.rotation, u),
            (1 - u) * a.root_pose.translation + u * b.root_pose.translation,
        )
        lengths = (1 - u) * a.link_lengths + u * b.link_lengths
        return KinematicTreeParams(rots, root, lengths)
    return DeformableGraphParams((1 - u) * a.joint_positions + u * b.joint_positions)


def save_track(path, track: KeyframeTrack, link_lengths=None) -> None:
    write_atomic(path, track_bytes(track, link_lengths))


def track_bytes(track: KeyframeTrack, link_lengths=None) -> bytes:
    d = {
        "version": FORMAT_VERSION,
        "kind": track.kind,
        "times": [float(t) for t in track.times],
        "snapshots": [_params_to_dict(track.kind, p) for p in track.snapshots],
        "interpolation": {"rotations": "slerp", "positions": "lerp"},
    }
    if track.kind == KIND_TREE:
        lengths = link_lengths if link_lengths is not None else track.snapshots[0].link_lengths
        d["link_lengths"] = np.asarray(lengths, dtype=np.float64).tolist()
    return (dumps_canonical(d) + "\n").encode()


def load_track(path) -> KeyframeTrack:
    d = _read_json(path)
    if d.get("version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported keyframe track version in {path}")
    kind = d["kind"]
    lengths = d.get("link_lengths")
    snapshots = [_params_from_dict(kind, s, lengths) for s in d["snapshots"]]
    return KeyframeTrack(kind, [float(t) for t in d["times"]], snapshots)
