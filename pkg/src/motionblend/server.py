"""Interactive editing server: live graph edits, previews, keyframes, export.

One process serves one or more scene checkpoints. Edits are serialized per
session behind a lock with optimistic concurrency (requests carry the
revision they were based on; mismatches are rejected as conflicts), so the
revision history is linearizable and reads never observe partial edits.
"""

from __future__ import annotations

import json
import socketserver
import threading
from dataclasses import dataclass, field

import numpy as np

from . import animation
from .errors import MotionBlendError, ProtocolError, ValidationError
from .geometry import Pose
from .graphs import KIND_DEFORMABLE, KIND_TREE
from .protocol import PROTOCOL_VERSION, MessageSocket, accept_key
from .sceneio import KeyframeTrack, SceneCheckpoint, load_checkpoint
from .skinning import deform_splats

PREVIEW_BUDGET = 100_000


@dataclass
class EditSession:
    session_id: str
    checkpoint: SceneCheckpoint
    painting: object
    working_theta: object
    revision: int = 0
    track: KeyframeTrack = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    def __post_init__(self):
        if self.track is None:
            self.track = KeyframeTrack(self.checkpoint.topology.kind)


def _decimate(positions: np.ndarray, budget: int = PREVIEW_BUDGET) -> np.ndarray:
    n = positions.shape[0]
    if n <= budget:
        return positions
    stride = int(np.ceil(n / budget))
    return positions[::stride]


class SceneServer:
    """Threaded TCP server speaking HTTP (scene listing) and WebSocket (editing)."""

    def __init__(self, host: str, port: int, scene_path: str):
        self.scenes = {"default": str(scene_path)}
        self.sessions: dict[str, EditSession] = {}
        self._session_counter = 0
        self._state_lock = threading.Lock()
        handler = self._make_handler()
        socketserver.ThreadingTCPServer.allow_reuse_address = True
        self._tcp = socketserver.ThreadingTCPServer((host, port), handler)
        self._tcp.daemon_threads = True
        self.host, self.port = self._tcp.server_address

    # lifecycle ----------------------------------------------------------
    def serve_forever(self):
        self._tcp.serve_forever()

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self._tcp.serve_forever, daemon=True)
        thread.start()
        return thread

    def shutdown(self):
        self._tcp.shutdown()
        self._tcp.server_close()

    # session plumbing ----------------------------------------------------
    def _open_session(self, scene_id: str) -> EditSession:
        with self._state_lock:
            if scene_id not in self.scenes:
                raise ValidationError(f"unknown scene {scene_id!r}")
            cp = load_checkpoint(self.scenes[scene_id])
            painting = animation.checkpoint_painting(cp)
            self._session_counter += 1
            session = EditSession(
                session_id=f"s{self._session_counter}",
                checkpoint=cp,
                painting=painting,
                working_theta=cp.canonical_theta().copy(),
            )
            self.sessions[session.session_id] = session
            return session

    def _session(self, msg) -> EditSession:
        sid = msg.get("session_id")
        with self._state_lock:
            if sid not in self.sessions:
                raise ValidationError(f"unknown session {sid!r}")
            return self.sessions[sid]

    def _preview_positions(self, session: EditSession) -> np.ndarray:
        cp = session.checkpoint
        moved = deform_splats(cp.splats, cp.topology, cp.canonical_theta(), session.working_theta, session.painting)
        return _decimate(moved.positions)

    def _joint_positions(self, session: EditSession, theta=None) -> np.ndarray:
        from .graphs import forward_kinematics

        theta = session.working_theta if theta is None else theta
        cp = session.checkpoint
        if cp.topology.kind == KIND_TREE:
            joints, _ = forward_kinematics(cp.topology, theta)
            return joints
        return theta.joint_positions

    # message handlers ----------------------------------------------------
    def _handle(self, msg: dict) -> dict:
        if not isinstance(msg, dict) or "type" not in msg:
            raise ProtocolError("message must be an object with a 'type' field")
        kind = msg["type"]
        handlers = {
            "list_scenes": self._msg_list_scenes,
            "load_scene": self._msg_load_scene,
            "get_state": self._msg_get_state,
            "apply_edit": self._msg_apply_edit,
            "capture_keyframe": self._msg_capture_keyframe,
            "preview_time": self._msg_preview_time,
            "export_animation": self._msg_export_animation,
        }
        if kind not in handlers:
            raise ProtocolError(f"unknown message type {kind!r}")
        return handlers[kind](msg)

    def scene_listing(self) -> dict:
        rows = []
        with self._state_lock:
            for scene_id, path in self.scenes.items():
                cp = load_checkpoint(path)
                rows.append(
                    {
                        "id": scene_id,
                        "path": path,
                        "kind": cp.topology.kind,
                        "joint_count": cp.topology.joint_count,
                        "splat_count": len(cp.splats),
                        "frame_count": cp.frame_count,
                    }
                )
        return {"version": PROTOCOL_VERSION, "scenes": rows}

    def _msg_list_scenes(self, msg) -> dict:
        out = self.scene_listing()
        out["type"] = "scenes"
        return out

    def _msg_load_scene(self, msg) -> dict:
        session = self._open_session(msg.get("scene_id", "default"))
        cp = session.checkpoint
        with session.lock:
            positions = self._preview_positions(session)
            camera = animation.checkpoint_camera(cp)
            return {
                "type": "scene",
                "version": PROTOCOL_VERSION,
                "session_id": session.session_id,
                "revision": session.revision,
                "kind": cp.topology.kind,
                "joint_count": cp.topology.joint_count,
                "links": cp.topology.links.tolist(),
                "joint_positions": self._joint_positions(session).tolist(),
                "positions": positions.tolist(),
                "colors": _decimate(cp.splats.colors).tolist(),
                "instance_ids": _decimate(cp.splats.instance_ids[:, None])[:, 0].tolist(),
                "camera": camera.to_dict(),
            }

    def _msg_get_state(self, msg) -> dict:
        session = self._session(msg)
        with session.lock:
            return {
                "type": "state",
                "session_id": session.session_id,
                "revision": session.revision,
                "joint_positions": self._joint_positions(session).tolist(),
                "positions": self._preview_positions(session).tolist(),
                "keyframe_times": list(session.track.times),
            }

    def _apply_edit_to_theta(self, session: EditSession, edit: dict):
        cp = session.checkpoint
        kind = cp.topology.kind
        theta = session.working_theta
        editk = edit.get("kind")
        if editk == "set_joint_rotation":
            if kind != KIND_TREE:
                raise ValidationError("set_joint_rotation requires a kinematic tree")
            index = int(edit["index"])
            if not (0 <= index < cp.topology.joint_count):
                raise ValidationError(f"joint index {index} out of range")
            theta.rotations[index] = np.asarray(edit["quaternion"], dtype=np.float64)
            theta.rotations = theta.rotations / np.linalg.norm(theta.rotations, axis=1, keepdims=True)
        elif editk == "set_root_pose":
            if kind != KIND_TREE:
                raise ValidationError("set_root_pose requires a kinematic tree")
            theta.root_pose = Pose(
                np.asarray(edit["rotation"], dtype=np.float64), np.asarray(edit["translation"], dtype=np.float64)
            )
        elif editk == "set_joint_position":
            if kind != KIND_DEFORMABLE:
                raise ValidationError("set_joint_position requires a deformable graph")
            index = int(edit["index"])
            if not (0 <= index < cp.topology.joint_count):
                raise ValidationError(f"joint index {index} out of range")
            theta.joint_positions[index] = np.asarray(edit["position"], dtype=np.float64)
        elif editk == "drag_joint_group":
            if kind != KIND_DEFORMABLE:
                raise ValidationError("drag_joint_group requires a deformable graph")
            indices = [int(i) for i in edit["indices"]]
            if any(not (0 <= i < cp.topology.joint_count) for i in indices):
                raise ValidationError("joint index out of range")
            theta.joint_positions[indices] += np.asarray(edit["delta"], dtype=np.float64)
        else:
            raise ValidationError(f"unknown edit kind {editk!r}")

    def _msg_apply_edit(self, msg) -> dict:
        session = self._session(msg)
        with session.lock:
            base = msg.get("revision")
            if base is not None and int(base) != session.revision:
                return {
                    "type": "error",
                    "code": "conflict",
                    "reason": f"revision {base} is stale (current {session.revision})",
                    "revision": session.revision,
                }
            try:
                self._apply_edit_to_theta(session, msg.get("edit") or {})
            except ValidationError as exc:
                return {"type": "error", "code": "rejected", "reason": str(exc), "revision": session.revision}
            session.revision += 1
            return {
                "type": "edit_applied",
                "session_id": session.session_id,
                "revision": session.revision,
                "joint_positions": self._joint_positions(session).tolist(),
                "positions": self._preview_positions(session).tolist(),
            }

    def _msg_capture_keyframe(self, msg) -> dict:
        session = self._session(msg)
        with session.lock:
            session.track.append(float(msg["time"]), session.working_theta)
            return {
                "type": "keyframe_captured",
                "session_id": session.session_id,
                "count": session.track.keyframe_count,
                "times": list(session.track.times),
            }

    def _msg_preview_time(self, msg) -> dict:
        from .sceneio import interpolate_keyframes

        session = self._session(msg)
        with session.lock:
            theta = interpolate_keyframes(session.track, float(msg["time"]))
            cp = session.checkpoint
            moved = deform_splats(cp.splats, cp.topology, cp.canonical_theta(), theta, session.painting)
            return {
                "type": "time_preview",
                "session_id": session.session_id,
                "time": float(msg["time"]),
                "joint_positions": self._joint_positions(session, theta).tolist(),
                "positions": _decimate(moved.positions).tolist(),
            }

    def _msg_export_animation(self, msg) -> dict:
        session = self._session(msg)
        with session.lock:
            frame_count = int(msg.get("frame_count", 24))
            out_dir = msg["out_dir"]
            paths = animation.render_animation(session.checkpoint, session.track, frame_count, out_dir)
            return {
                "type": "export_done",
                "session_id": session.session_id,
                "paths": paths,
            }

    # transport ------------------------------------------------------------
    def _make_handler(server_self):
        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                request_line = self.rfile.readline()
                if not request_line:
                    return
                parts = request_line.decode("latin1").split()
                if len(parts) < 2:
                    return
                method, path = parts[0], parts[1]
                headers = {}
                while True:
                    line = self.rfile.readline()
                    if line in (b"\r\n", b"\n", b""):
                        break
                    name, _, value = line.decode("latin1").partition(":")
                    headers[name.strip().lower()] = value.strip()
                upgrade = headers.get("upgrade", "").lower() == "websocket"
                if method == "GET" and not upgrade:
                    body = json.dumps(server_self.scene_listing(), sort_keys=True).encode()
                    status = b"200 OK"
                    if path != "/scenes":
                        body = json.dumps({"error": "only /scenes is served over plain HTTP"}).encode()
                        status = b"404 Not Found"
                    self.wfile.write(
                        b"HTTP/1.1 " + status + b"\r\nContent-Type: application/json\r\n"
                        b"Access-Control-Allow-Origin: *\r\n"
                        + f"Content-Length: {len(body)}\r\n\r\n".encode()
                        + body
                    )
                    return
                if not upgrade or "sec-websocket-key" not in headers:
                    self.wfile.write(b"HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\n\r\n")
                    return
                accept = accept_key(headers["sec-websocket-key"])
                self.wfile.write(
                    (
                        "HTTP/1.1 101 Switching Protocols\r\n"
                        "Upgrade: websocket\r\n"
                        "Connection: Upgrade\r\n"
                        f"Sec-WebSocket-Accept: {accept}\r\n\r\n"
                    ).encode()
                )
                ws = MessageSocket(self.connection, client_side=False)
                ws.reader = self.rfile
                while True:
                    try:
                        msg = ws.recv_json()
                    except (ProtocolError, OSError):
                        break
                    if msg is None:
                        break
                    try:
                        reply = server_self._handle(msg)
                    except (MotionBlendError, KeyError, TypeError, ValueError) as exc:
                        reply = {"type": "error", "code": "bad_request", "reason": str(exc)}
                    try:
                        ws.send_json(reply)
                    except OSError:
                        break

        return Handler
