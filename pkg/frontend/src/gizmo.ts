// Gizmo math, kept pure so it is testable headless: screen-space drags on
// an axis handle become transform deltas applied to the selected object.

import { composeSim3, normalizeQuat, quatFromAxisAngle, Sim3, Vec3 } from './sim3.js';
import type { CameraJson } from './types.js';
import { quatToRot, rotate } from './sim3.js';

export type GizmoMode = 'translate' | 'rotate' | 'scale';

export const AXES: { name: string; dir: Vec3; color: string }[] = [
  { name: 'x', dir: [1, 0, 0], color: '#e05555' },
  { name: 'y', dir: [0, 1, 0], color: '#55c065' },
  { name: 'z', dir: [0, 0, 1], color: '#5577e0' },
];

/** World point -> continuous pixel coords, or null when behind the camera. */
export function projectPoint(cam: CameraJson, p: Vec3): [number, number] | null {
  const R = quatToRot(cam.q);
  const rx = p[0] - cam.t[0];
  const ry = p[1] - cam.t[1];
  const rz = p[2] - cam.t[2];
  const x = R[0] * rx + R[3] * ry + R[6] * rz;
  const y = R[1] * rx + R[4] * ry + R[7] * rz;
  const z = R[2] * rx + R[5] * ry + R[8] * rz;
  if (z <= 0.01) return null;
  return [cam.fx * (x / z) + cam.cx - 0.5, cam.cy - cam.fy * (y / z) - 0.5];
}

/** Screen direction (pixels) of a world axis at the object's position. */
export function axisScreenDir(cam: CameraJson, origin: Vec3, axis: Vec3):
    [number, number] | null {
  const p0 = projectPoint(cam, origin);
  const p1 = projectPoint(cam, [origin[0] + axis[0] * 0.25,
                                origin[1] + axis[1] * 0.25,
                                origin[2] + axis[2] * 0.25]);
  if (!p0 || !p1) return null;
  const d: [number, number] = [p1[0] - p0[0], p1[1] - p0[1]];
  const n = Math.hypot(d[0], d[1]);
  return n < 1e-6 ? null : [d[0] / n, d[1] / n];
}

/** Meters of world motion along `axis` per pixel of screen drag. */
export function dragScale(cam: CameraJson, origin: Vec3, axis: Vec3): number {
  const p0 = projectPoint(cam, origin);
  const p1 = projectPoint(cam, [origin[0] + axis[0] * 0.25,
                                origin[1] + axis[1] * 0.25,
                                origin[2] + axis[2] * 0.25]);
  if (!p0 || !p1) return 0;
  const px = Math.hypot(p1[0] - p0[0], p1[1] - p0[1]);
  return px < 1e-6 ? 0 : 0.25 / px;
}

export function applyTranslateDrag(t: Sim3, cam: CameraJson, axis: Vec3,
                                   dxPx: number, dyPx: number): Sim3 {
  const dir = axisScreenDir(cam, t.t, axis);
  if (!dir) return t;
  const along = dxPx * dir[0] + dyPx * dir[1];
  const meters = along * dragScale(cam, t.t, axis);
  return {
    q: t.q,
    t: [t.t[0] + axis[0] * meters, t.t[1] + axis[1] * meters, t.t[2] + axis[2] * meters],
    s: t.s,
  };
}

/** Rotation drags spin the object about a world axis through its origin. */
export function applyRotateDrag(t: Sim3, axis: Vec3, dxPx: number): Sim3 {
  const angle = dxPx * 0.01;
  const dq = quatFromAxisAngle(axis, angle);
  const spun = composeSim3({ q: dq, t: [0, 0, 0], s: 1 }, { q: t.q, t: [0, 0, 0], s: 1 });
  return { q: normalizeQuat(spun.q), t: t.t, s: t.s };
}

export function applyScaleDrag(t: Sim3, dxPx: number): Sim3 {
  const factor = Math.exp(dxPx * 0.005);
  return { q: t.q, t: t.t, s: Math.max(1e-6, t.s * factor) };
}

/** Ray/axis-aligned-box hit test used for click selection. The bbox is in
 *  the object's canonical frame; the ray is transformed into that frame. */
export function rayHitsBox(cam: CameraJson, px: number, py: number, transform: Sim3,
                           bbox: { min: Vec3 | number[]; max: Vec3 | number[] }): number | null {
  const R = quatToRot(cam.q);  // camera -> world: world dir = R * cam dir
  const dirCam: Vec3 = [(px + 0.5 - cam.cx) / cam.fx, (cam.cy - (py + 0.5)) / cam.fy, 1];
  const dirWorld = rotate(R, dirCam);
  // into canonical frame: undo translation, rotation, scale
  const Rt = quatToRot(transform.q);
  const RtT = transposed(Rt);
  const o = rotate(RtT, [cam.t[0] - transform.t[0], cam.t[1] - transform.t[1],
                         cam.t[2] - transform.t[2]]).map((v) => v / transform.s) as Vec3;
  const d = rotate(RtT, dirWorld).map((v) => v / transform.s) as Vec3;

  let t0 = -Infinity;
  let t1 = Infinity;
  for (let a = 0; a < 3; a++) {
    const inv = 1 / (Math.abs(d[a]) > 1e-12 ? d[a] : 1e-12);
    const ta = (bbox.min[a] - o[a]) * inv;
    const tb = (bbox.max[a] - o[a]) * inv;
    t0 = Math.max(t0, Math.min(ta, tb));
    t1 = Math.min(t1, Math.max(ta, tb));
  }
  return t1 >= t0 && t1 > 0 ? Math.max(t0, 0) : null;
}

function transposed(m: number[]): number[] {
  return [m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]];
}
