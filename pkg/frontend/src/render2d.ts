/**
 * Canvas renderer: point cloud colored per instance, graph overlay with
 * joints as discs and links as segments, selection highlights.
 */

import { Vec3 } from "./protocol.js";
import { ViewState, cameraBasis, projectPoint } from "./viewState.js";

const INSTANCE_PALETTE = [
  "#66c2a5",
  "#fc8d62",
  "#8da0cb",
  "#e78ac3",
  "#a6d854",
  "#ffd92f",
  "#e5c494",
  "#b3b3b3",
];

export function instanceColor(id: number): string {
  return INSTANCE_PALETTE[((id % INSTANCE_PALETTE.length) + INSTANCE_PALETTE.length) % INSTANCE_PALETTE.length];
}

export function drawScene(ctx: CanvasRenderingContext2D, state: ViewState, width: number, height: number): void {
  ctx.fillStyle = "#101014";
  ctx.fillRect(0, 0, width, height);
  const basis = cameraBasis(state.camera);

  ctx.save();
  for (let i = 0; i < state.positions.length; i++) {
    const proj = projectPoint(basis, state.positions[i], width, height);
    if (!proj) continue;
    ctx.fillStyle = instanceColor(state.instanceIds[i] ?? 0);
    ctx.fillRect(proj[0] - 1, proj[1] - 1, 2, 2);
  }
  ctx.restore();

  // graph overlay: full link set on top of the decimated cloud
  ctx.strokeStyle = "#f5f5f5";
  ctx.lineWidth = 1.5;
  for (const [a, b] of state.links) {
    const pa = projectPoint(basis, state.jointPositions[a], width, height);
    const pb = projectPoint(basis, state.jointPositions[b], width, height);
    if (!pa || !pb) continue;
    ctx.beginPath();
    ctx.moveTo(pa[0], pa[1]);
    ctx.lineTo(pb[0], pb[1]);
    ctx.stroke();
  }
  state.jointPositions.forEach((p: Vec3, i: number) => {
    const proj = projectPoint(basis, p, width, height);
    if (!proj) return;
    ctx.beginPath();
    ctx.arc(proj[0], proj[1], state.selection.has(i) ? 7 : 4.5, 0, Math.PI * 2);
    ctx.fillStyle = state.selection.has(i) ? "#ffcc33" : "#4da3ff";
    ctx.fill();
    ctx.strokeStyle = "#10101477";
    ctx.stroke();
  });
}
