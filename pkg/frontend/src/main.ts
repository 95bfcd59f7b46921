/**
 * DOM wiring for the editor: connect form, viewport with orbit controls and
 * joint gizmos, timeline with capture/scrub/play/export.
 *
 * All deformed geometry on screen comes from server replies ingested into
 * the ViewState store; nothing here computes a deformation.
 */

import { EditQueue, dragDelta, dragEdit, rotationDialEdit } from "./gizmo.js";
import { Edit, ServerMessage } from "./protocol.js";
import { drawScene } from "./render2d.js";
import { Timeline } from "./timeline.js";
import { ViewState } from "./viewState.js";
import { EditorConnection } from "./wsClient.js";

const canvas = document.getElementById("viewport") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const banner = document.getElementById("banner")!;
const statusEl = document.getElementById("status")!;
const timelineEl = document.getElementById("timeline") as HTMLInputElement;
const state = new ViewState();
const timeline = new Timeline();
let conn: EditorConnection | null = null;
let queue: EditQueue | null = null;

function setBanner(text: string | null): void {
  banner.textContent = text ?? "";
  banner.style.display = text ? "block" : "none";
}

function toast(text: string): void {
  statusEl.textContent = text;
  window.setTimeout(() => {
    if (statusEl.textContent === text) statusEl.textContent = "";
  }, 4000);
}

function redraw(): void {
  canvas.width = canvas.clientWidth;
  canvas.height = canvas.clientHeight;
  drawScene(ctx, state, canvas.width, canvas.height);
  const rev = document.getElementById("revision")!;
  rev.textContent = state.revision >= 0 ? `rev ${state.revision}` : "";
}

function ingest(msg: ServerMessage): void {
  state.ingest(msg);
  if (msg.type === "error") {
    if (msg.code === "conflict") {
      // stale revision: refetch and show the newer state, replay nothing
      void refreshState();
      toast("edit conflicted with a newer revision; state refreshed");
    } else {
      toast(`${msg.code}: ${msg.reason}`);
    }
  }
  if (msg.type === "keyframe_captured") timeline.recordCaptured(msg.times);
  redraw();
}

async function refreshState(): Promise<void> {
  if (!conn || !state.sessionId) return;
  ingest(await conn.request({ type: "get_state", session_id: state.sessionId }));
}

async function connect(): Promise<void> {
  const host = (document.getElementById("host") as HTMLInputElement).value || "127.0.0.1:8765";
  state.connection = "connecting";
  setBanner(null);
  try {
    conn = await EditorConnection.connect(`ws://${host}/ws`);
  } catch (exc) {
    state.connection = "error";
    setBanner(`cannot reach server at ${host} - is \`motionblend serve\` running?`);
    return;
  }
  conn.onStatus = (status) => {
    state.connection = status;
    if (status !== "connected") {
      setBanner("connection lost - edits disabled until reconnect");
    }
  };
  state.connection = "connected";
  queue = new EditQueue(async (edit: Edit) => {
    if (!conn || !state.sessionId) return;
    ingest(
      await conn.request({
        type: "apply_edit",
        session_id: state.sessionId,
        revision: state.revision,
        edit,
      }),
    );
  });
  ingest(await conn.request({ type: "load_scene", scene_id: "default" }));
  toast(`loaded scene (${state.kind}, ${state.positions.length} points shown)`);
}

// pointer interaction: left drag = orbit, shift+click = select joint,
// ctrl/cmd drag = box multi-select, drag on a selected joint = move it
// (deformable graphs)
let pointer: { x: number; y: number; mode: "orbit" | "drag" | "box"; startX: number; startY: number } | null = null;

function canvasXY(ev: PointerEvent): [number, number] {
  const rect = canvas.getBoundingClientRect();
  return [ev.clientX - rect.left, ev.clientY - rect.top];
}

canvas.addEventListener("pointerdown", (ev) => {
  const [px, py] = canvasXY(ev);
  if (ev.ctrlKey || ev.metaKey) {
    pointer = { x: px, y: py, mode: "box", startX: px, startY: py };
    canvas.setPointerCapture(ev.pointerId);
    return;
  }
  const hit = state.pickJoint(px, py, canvas.width, canvas.height);
  if (hit >= 0 && (ev.shiftKey || state.selection.size === 0)) {
    state.toggleSelect(hit, ev.shiftKey);
    redraw();
  }
  const dragging = hit >= 0 && state.selection.has(hit) && state.kind === "deformable" && !ev.shiftKey;
  pointer = { x: ev.clientX, y: ev.clientY, mode: dragging ? "drag" : "orbit", startX: ev.clientX, startY: ev.clientY };
  canvas.setPointerCapture(ev.pointerId);
});

canvas.addEventListener("pointermove", (ev) => {
  if (!pointer) return;
  if (pointer.mode === "box") {
    const [px, py] = canvasXY(ev);
    pointer.x = px;
    pointer.y = py;
    redraw();
    ctx.strokeStyle = "#ffcc33";
    ctx.setLineDash([4, 3]);
    ctx.strokeRect(pointer.startX, pointer.startY, px - pointer.startX, py - pointer.startY);
    ctx.setLineDash([]);
    return;
  }
  const dx = ev.clientX - pointer.x;
  const dy = ev.clientY - pointer.y;
  pointer.x = ev.clientX;
  pointer.y = ev.clientY;
  if (pointer.mode === "orbit") {
    state.orbit(dx, dy);
    redraw();
  } else if (queue && state.selection.size > 0 && state.connection === "connected") {
    const delta = dragDelta(state.camera, dx, dy, canvas.width, canvas.height);
    queue.submit(dragEdit(state.selection, delta));
  }
});

canvas.addEventListener("pointerup", () => {
  if (pointer?.mode === "box") {
    const hits = state.pickJointsInRect(pointer.startX, pointer.startY, pointer.x, pointer.y, canvas.width, canvas.height);
    state.selection = new Set(hits);
    redraw();
  }
  pointer = null;
});
canvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  state.zoom(ev.deltaY > 0 ? 1.1 : 0.9);
  redraw();
});

// rotation dials for tree joints
for (const axis of ["x", "y", "z"] as const) {
  document.getElementById(`dial-${axis}`)!.addEventListener("click", () => {
    if (!queue || state.kind !== "kinematic-tree" || state.selection.size !== 1) {
      toast("rotation dials need a kinematic tree and exactly one selected joint");
      return;
    }
    const joint = [...state.selection][0];
    queue.submit(rotationDialEdit(joint, [1, 0, 0, 0], axis, Math.PI / 12));
  });
}

document.getElementById("connect")!.addEventListener("click", () => void connect());

document.getElementById("capture")!.addEventListener("click", async () => {
  if (!conn || !state.sessionId) return;
  ingest(
    await conn.request({
      type: "capture_keyframe",
      session_id: state.sessionId,
      time: timeline.nextCaptureTime(),
    }),
  );
  updateExportGate();
});

timelineEl.addEventListener("input", async () => {
  if (!conn || !state.sessionId) return;
  const t = timeline.scrubTarget(Number(timelineEl.value) / 1000);
  if (t === null) return;
  ingest(await conn.request({ type: "preview_time", session_id: state.sessionId, time: t }));
});

document.getElementById("play")!.addEventListener("click", () => {
  if (!timeline.canExport) return;
  timeline.playing = true;
  timeline.position = timeline.span![0];
  const tick = async () => {
    const t = timeline.step(0.05);
    if (t === null || !conn || !state.sessionId) return;
    ingest(await conn.request({ type: "preview_time", session_id: state.sessionId, time: t }));
    timelineEl.value = String((1000 * (t - timeline.span![0])) / (timeline.span![1] - timeline.span![0]));
    if (timeline.playing) window.setTimeout(tick, 50);
  };
  void tick();
});

function updateExportGate(): void {
  const btn = document.getElementById("export") as HTMLButtonElement;
  btn.disabled = !timeline.canExport;
  btn.title = timeline.canExport ? "" : "capture at least 2 keyframes first";
}

document.getElementById("export")!.addEventListener("click", async () => {
  if (!conn || !state.sessionId || !timeline.canExport) return;
  const outDir = (document.getElementById("outdir") as HTMLInputElement).value || "exported_animation";
  const reply = await conn.request({
    type: "export_animation",
    session_id: state.sessionId,
    frame_count: 24,
    out_dir: outDir,
  });
  ingest(reply);
  if (reply.type === "export_done") toast(`exported ${reply.paths.length} files to ${outDir}`);
});

updateExportGate();
redraw();
