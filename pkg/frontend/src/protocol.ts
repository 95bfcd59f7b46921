/**
 * Editing protocol types and validators, mirroring docs/protocol.md.
 * Every message the UI sends or accepts passes through these checks.
 */

export const PROTOCOL_VERSION = 1;

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number];

export interface CameraInfo {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
  rotation: Quat;
  translation: Vec3;
}

export interface SceneMessage {
  type: "scene";
  session_id: string;
  revision: number;
  kind: string;
  joint_count: number;
  links: [number, number][];
  joint_positions: Vec3[];
  positions: Vec3[];
  colors: Vec3[];
  instance_ids: number[];
  camera: CameraInfo;
}

export interface StateMessage {
  type: "state";
  session_id: string;
  revision: number;
  joint_positions: Vec3[];
  positions: Vec3[];
  keyframe_times: number[];
}

export interface EditAppliedMessage {
  type: "edit_applied";
  session_id: string;
  revision: number;
  joint_positions: Vec3[];
  positions: Vec3[];
}

export interface KeyframeCapturedMessage {
  type: "keyframe_captured";
  session_id: string;
  count: number;
  times: number[];
}

export interface TimePreviewMessage {
  type: "time_preview";
  session_id: string;
  time: number;
  joint_positions: Vec3[];
  positions: Vec3[];
}

export interface ExportDoneMessage {
  type: "export_done";
  session_id: string;
  paths: string[];
}

export interface ScenesMessage {
  type: "scenes";
  scenes: { id: string; kind: string; joint_count: number; splat_count: number }[];
}

export interface ErrorMessage {
  type: "error";
  code: string;
  reason: string;
  revision?: number;
}

export type ServerMessage =
  | SceneMessage
  | StateMessage
  | EditAppliedMessage
  | KeyframeCapturedMessage
  | TimePreviewMessage
  | ExportDoneMessage
  | ScenesMessage
  | ErrorMessage;

export type Edit =
  | { kind: "set_joint_rotation"; index: number; quaternion: Quat }
  | { kind: "set_root_pose"; rotation: Quat; translation: Vec3 }
  | { kind: "set_joint_position"; index: number; position: Vec3 }
  | { kind: "drag_joint_group"; indices: number[]; delta: Vec3 };

export type ClientMessage =
  | { type: "list_scenes" }
  | { type: "load_scene"; scene_id: string }
  | { type: "get_state"; session_id: string }
  | { type: "apply_edit"; session_id: string; revision: number; edit: Edit }
  | { type: "capture_keyframe"; session_id: string; time: number }
  | { type: "preview_time"; session_id: string; time: number }
  | { type: "export_animation"; session_id: string; frame_count: number; out_dir: string };

function isNumber(x: unknown): x is number {
  return typeof x === "number" && Number.isFinite(x);
}

function isVec3(x: unknown): x is Vec3 {
  return Array.isArray(x) && x.length === 3 && x.every(isNumber);
}

function isVec3List(x: unknown): x is Vec3[] {
  return Array.isArray(x) && x.every(isVec3);
}

function isQuat(x: unknown): x is Quat {
  return Array.isArray(x) && x.length === 4 && x.every(isNumber);
}

function fail(reason: string): never {
  throw new Error(`protocol violation: ${reason}`);
}

export function validateServerMessage(raw: unknown): ServerMessage {
  if (typeof raw !== "object" || raw === null) fail("message is not an object");
  const msg = raw as Record<string, unknown>;
  switch (msg.type) {
    case "scene": {
      if (typeof msg.session_id !== "string") fail("scene.session_id");
      if (!isNumber(msg.revision)) fail("scene.revision");
      if (typeof msg.kind !== "string") fail("scene.kind");
      if (!isNumber(msg.joint_count)) fail("scene.joint_count");
      if (!Array.isArray(msg.links)) fail("scene.links");
      if (!isVec3List(msg.joint_positions)) fail("scene.joint_positions");
      if (!isVec3List(msg.positions)) fail("scene.positions");
      if (!isVec3List(msg.colors)) fail("scene.colors");
      if (!Array.isArray(msg.instance_ids) || !msg.instance_ids.every(isNumber)) fail("scene.instance_ids");
      return msg as unknown as SceneMessage;
    }
    case "state": {
      if (!isNumber(msg.revision)) fail("state.revision");
      if (!isVec3List(msg.positions)) fail("state.positions");
      if (!isVec3List(msg.joint_positions)) fail("state.joint_positions");
      return msg as unknown as StateMessage;
    }
    case "edit_applied": {
      if (!isNumber(msg.revision)) fail("edit_applied.revision");
      if (!isVec3List(msg.positions)) fail("edit_applied.positions");
      if (!isVec3List(msg.joint_positions)) fail("edit_applied.joint_positions");
      return msg as unknown as EditAppliedMessage;
    }
    case "keyframe_captured": {
      if (!isNumber(msg.count)) fail("keyframe_captured.count");
      if (!Array.isArray(msg.times) || !msg.times.every(isNumber)) fail("keyframe_captured.times");
      return msg as unknown as KeyframeCapturedMessage;
    }
    case "time_preview": {
      if (!isNumber(msg.time)) fail("time_preview.time");
      if (!isVec3List(msg.positions)) fail("time_preview.positions");
      if (!isVec3List(msg.joint_positions)) fail("time_preview.joint_positions");
      return msg as unknown as TimePreviewMessage;
    }
    case "export_done": {
      if (!Array.isArray(msg.paths) || !msg.paths.every((p) => typeof p === "string")) fail("export_done.paths");
      return msg as unknown as ExportDoneMessage;
    }
    case "scenes": {
      if (!Array.isArray(msg.scenes)) fail("scenes.scenes");
      return msg as unknown as ScenesMessage;
    }
    case "error": {
      if (typeof msg.code !== "string" || typeof msg.reason !== "string") fail("error fields");
      return msg as unknown as ErrorMessage;
    }
    default:
      fail(`unknown type ${String(msg.type)}`);
  }
}

export function validateClientMessage(msg: ClientMessage): ClientMessage {
  switch (msg.type) {
    case "list_scenes":
      return msg;
    case "load_scene":
      if (typeof msg.scene_id !== "string") fail("load_scene.scene_id");
      return msg;
    case "get_state":
      if (typeof msg.session_id !== "string") fail("get_state.session_id");
      return msg;
    case "apply_edit": {
      if (typeof msg.session_id !== "string") fail("apply_edit.session_id");
      if (!isNumber(msg.revision)) fail("apply_edit.revision");
      const e = msg.edit as Edit;
      if (e.kind === "set_joint_rotation" && !(isNumber(e.index) && isQuat(e.quaternion))) fail("set_joint_rotation");
      if (e.kind === "set_root_pose" && !(isQuat(e.rotation) && isVec3(e.translation))) fail("set_root_pose");
      if (e.kind === "set_joint_position" && !(isNumber(e.index) && isVec3(e.position))) fail("set_joint_position");
      if (e.kind === "drag_joint_group" && !(Array.isArray(e.indices) && isVec3(e.delta))) fail("drag_joint_group");
      return msg;
    }
    case "capture_keyframe":
      if (!isNumber(msg.time)) fail("capture_keyframe.time");
      return msg;
    case "preview_time":
      if (!isNumber(msg.time)) fail("preview_time.time");
      return msg;
    case "export_animation":
      if (!isNumber(msg.frame_count)) fail("export_animation.frame_count");
      if (typeof msg.out_dir !== "string") fail("export_animation.out_dir");
      return msg;
    default:
      fail("unknown client message");
  }
}
