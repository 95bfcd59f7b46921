/**
 * Client-side session state: orbit camera, selection, revision tracking,
 * timeline, and the displayed geometry.
 *
 * Deformed positions are never computed here. The only mutators of
 * displayed geometry are the ingest* methods, each consuming a validated
 * server message and appending to the provenance log, so every rendered
 * point is attributable to a protocol message.
 */

import {
  EditAppliedMessage,
  SceneMessage,
  ServerMessage,
  StateMessage,
  TimePreviewMessage,
  Vec3,
} from "./protocol.js";

export interface OrbitCamera {
  target: Vec3;
  distance: number;
  yaw: number;
  pitch: number;
}

export interface CameraBasis {
  eye: Vec3;
  right: Vec3;
  up: Vec3;
  forward: Vec3;
}

const clamp = (x: number, lo: number, hi: number) => Math.min(hi, Math.max(lo, x));

export function cameraBasis(cam: OrbitCamera): CameraBasis {
  const cy = Math.cos(cam.yaw);
  const sy = Math.sin(cam.yaw);
  const cp = Math.cos(cam.pitch);
  const sp = Math.sin(cam.pitch);
  const forward: Vec3 = [cp * cy, cp * sy, sp]; // from eye toward target
  const eye: Vec3 = [
    cam.target[0] - forward[0] * cam.distance,
    cam.target[1] - forward[1] * cam.distance,
    cam.target[2] - forward[2] * cam.distance,
  ];
  const right: Vec3 = [-sy, cy, 0];
  const up: Vec3 = [
    right[1] * forward[2] - right[2] * forward[1],
    right[2] * forward[0] - right[0] * forward[2],
    right[0] * forward[1] - right[1] * forward[0],
  ];
  return { eye, right, up, forward };
}

/** Perspective projection into pixel coordinates; returns null behind the eye. */
export function projectPoint(
  basis: CameraBasis,
  p: Vec3,
  width: number,
  height: number,
  focal = 1.2,
): [number, number, number] | null {
  const d: Vec3 = [p[0] - basis.eye[0], p[1] - basis.eye[1], p[2] - basis.eye[2]];
  const z = d[0] * basis.forward[0] + d[1] * basis.forward[1] + d[2] * basis.forward[2];
  if (z <= 1e-9) return null;
  const x = d[0] * basis.right[0] + d[1] * basis.right[1] + d[2] * basis.right[2];
  const y = d[0] * basis.up[0] + d[1] * basis.up[1] + d[2] * basis.up[2];
  const scale = (focal * Math.min(width, height)) / z;
  return [width / 2 + x * scale, height / 2 - y * scale, z];
}

export type ConnectionStatus = "disconnected" | "connecting" | "connected" | "error";

export interface ProvenanceEntry {
  messageType: string;
  revision: number | null;
  pointCount: number;
}

export class ViewState {
  camera: OrbitCamera = { target: [0, 0, 0], distance: 6, yaw: -1.2, pitch: 0.4 };
  connection: ConnectionStatus = "disconnected";
  sessionId: string | null = null;
  kind: string | null = null;
  revision = -1;
  selection: Set<number> = new Set();
  links: [number, number][] = [];
  jointPositions: Vec3[] = [];
  positions: Vec3[] = [];
  colors: Vec3[] = [];
  instanceIds: number[] = [];
  keyframeTimes: number[] = [];
  timelinePosition = 0;
  banner: string | null = null;
  /** Audit log: every geometry update and the message that caused it. */
  provenance: ProvenanceEntry[] = [];

  private record(type: string, revision: number | null, points: Vec3[]) {
    this.provenance.push({ messageType: type, revision, pointCount: points.length });
  }

  ingestScene(msg: SceneMessage): void {
    this.sessionId = msg.session_id;
    this.kind = msg.kind;
    this.revision = msg.revision;
    this.links = msg.links;
    this.jointPositions = msg.joint_positions;
    this.positions = msg.positions;
    this.colors = msg.colors;
    this.instanceIds = msg.instance_ids;
    this.selection.clear();
    this.record("scene", msg.revision, msg.positions);
    this.frameToContent();
  }

  ingestState(msg: StateMessage): void {
    this.revision = msg.revision;
    this.jointPositions = msg.joint_positions;
    this.positions = msg.positions;
    this.keyframeTimes = msg.keyframe_times;
    this.record("state", msg.revision, msg.positions);
  }

  ingestEditApplied(msg: EditAppliedMessage): void {
    if (msg.revision <= this.revision) {
      // replies must arrive in revision order; stale previews are dropped
      return;
    }
    this.revision = msg.revision;
    this.jointPositions = msg.joint_positions;
    this.positions = msg.positions;
    this.record("edit_applied", msg.revision, msg.positions);
  }

  ingestTimePreview(msg: TimePreviewMessage): void {
    this.timelinePosition = msg.time;
    this.jointPositions = msg.joint_positions;
    this.positions = msg.positions;
    this.record("time_preview", null, msg.positions);
  }

  ingest(msg: ServerMessage): void {
    switch (msg.type) {
      case "scene":
        return this.ingestScene(msg);
      case "state":
        return this.ingestState(msg);
      case "edit_applied":
        return this.ingestEditApplied(msg);
      case "time_preview":
        return this.ingestTimePreview(msg);
      case "keyframe_captured":
        this.keyframeTimes = msg.times;
        return;
      case "error":
        this.banner = `${msg.code}: ${msg.reason}`;
        return;
      default:
        return;
    }
  }

  frameToContent(): void {
    if (this.positions.length === 0) return;
    const lo: Vec3 = [Infinity, Infinity, Infinity];
    const hi: Vec3 = [-Infinity, -Infinity, -Infinity];
    for (const p of this.positions) {
      for (let i = 0; i < 3; i++) {
        lo[i] = Math.min(lo[i], p[i]);
        hi[i] = Math.max(hi[i], p[i]);
      }
    }
    this.camera.target = [(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2];
    const diag = Math.hypot(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]);
    this.camera.distance = Math.max(diag * 1.6, 1e-3);
  }

  orbit(dx: number, dy: number): void {
    this.camera.yaw -= dx * 0.008;
    this.camera.pitch = clamp(this.camera.pitch + dy * 0.008, -1.5, 1.5);
  }

  zoom(factor: number): void {
    this.camera.distance = clamp(this.camera.distance * factor, 1e-3, 1e6);
  }

  toggleSelect(index: number, additive: boolean): void {
    if (!additive) this.selection.clear();
    if (this.selection.has(index)) this.selection.delete(index);
    else if (index >= 0 && index < this.jointPositions.length) this.selection.add(index);
  }

  /** Joints whose projections land inside a screen rectangle. */
  pickJointsInRect(x0: number, y0: number, x1: number, y1: number, width: number, height: number): number[] {
    const basis = cameraBasis(this.camera);
    const [lox, hix] = x0 < x1 ? [x0, x1] : [x1, x0];
    const [loy, hiy] = y0 < y1 ? [y0, y1] : [y1, y0];
    const hits: number[] = [];
    this.jointPositions.forEach((p, i) => {
      const proj = projectPoint(basis, p, width, height);
      if (proj && proj[0] >= lox && proj[0] <= hix && proj[1] >= loy && proj[1] <= hiy) hits.push(i);
    });
    return hits;
  }

  /** Joint index under the cursor within pickRadius pixels, or -1. */
  pickJoint(px: number, py: number, width: number, height: number, pickRadius = 10): number {
    const basis = cameraBasis(this.camera);
    let best = -1;
    let bestDist = pickRadius;
    this.jointPositions.forEach((p, i) => {
      const proj = projectPoint(basis, p, width, height);
      if (!proj) return;
      const d = Math.hypot(proj[0] - px, proj[1] - py);
      if (d < bestDist) {
        bestDist = d;
        best = i;
      }
    });
    return best;
  }
}
