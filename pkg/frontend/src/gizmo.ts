/**
 * Gizmo math: turn pointer input into edit requests.
 *
 * Deformable joints get translation handles (screen-space drag mapped into
 * the camera plane); tree joints get per-axis rotation dials. The UI layer
 * disables the gizmo that does not match the graph kind.
 */

import { Edit, Quat, Vec3 } from "./protocol.js";
import { CameraBasis, OrbitCamera, cameraBasis } from "./viewState.js";

/** World-space translation for a pixel drag in the camera plane. */
export function dragDelta(cam: OrbitCamera, dxPx: number, dyPx: number, width: number, height: number): Vec3 {
  const basis: CameraBasis = cameraBasis(cam);
  const unitsPerPixel = cam.distance / (1.2 * Math.min(width, height));
  const sx = dxPx * unitsPerPixel;
  const sy = -dyPx * unitsPerPixel;
  return [
    basis.right[0] * sx + basis.up[0] * sy,
    basis.right[1] * sx + basis.up[1] * sy,
    basis.right[2] * sx + basis.up[2] * sy,
  ];
}

export function dragEdit(selection: Set<number>, delta: Vec3): Edit {
  return { kind: "drag_joint_group", indices: [...selection].sort((a, b) => a - b), delta };
}

export function axisAngleQuat(axis: "x" | "y" | "z", radians: number): Quat {
  const half = radians / 2;
  const s = Math.sin(half);
  const v: Vec3 = axis === "x" ? [s, 0, 0] : axis === "y" ? [0, s, 0] : [0, 0, s];
  return [Math.cos(half), v[0], v[1], v[2]];
}

export function quatMultiply(a: Quat, b: Quat): Quat {
  return [
    a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
    a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
    a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
    a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
  ];
}

export function rotationDialEdit(jointIndex: number, current: Quat, axis: "x" | "y" | "z", radians: number): Edit {
  return {
    kind: "set_joint_rotation",
    index: jointIndex,
    quaternion: quatMultiply(current, axisAngleQuat(axis, radians)),
  };
}

/**
 * Coalescing queue: at most one edit request in flight; while waiting,
 * newer edits replace the queued one instead of piling up.
 */
export class EditQueue {
  private inFlight = false;
  private pending: Edit | null = null;

  constructor(private send: (edit: Edit) => Promise<void>) {}

  submit(edit: Edit): void {
    if (this.inFlight) {
      this.pending = edit;
      return;
    }
    void this.dispatch(edit);
  }

  private async dispatch(edit: Edit): Promise<void> {
    this.inFlight = true;
    try {
      await this.send(edit);
    } finally {
      this.inFlight = false;
      if (this.pending) {
        const next = this.pending;
        this.pending = null;
        void this.dispatch(next);
      }
    }
  }

  get busy(): boolean {
    return this.inFlight;
  }
}
