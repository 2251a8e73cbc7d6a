// Similarity-transform math matching the server: x -> scale * R(q) * x + t,
// quaternions stored (w, x, y, z).

import type { TransformJson } from './types.js';

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number];

export interface Sim3 {
  q: Quat;
  t: Vec3;
  s: number;
}

export function identity(): Sim3 {
  return { q: [1, 0, 0, 0], t: [0, 0, 0], s: 1 };
}

export function quatNorm(q: Quat): number {
  return Math.hypot(q[0], q[1], q[2], q[3]);
}

export function normalizeQuat(q: Quat): Quat {
  const n = quatNorm(q);
  if (n === 0) throw new Error('zero quaternion');
  return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
}

export function quatMultiply(a: Quat, b: Quat): Quat {
  return [
    a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
    a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
    a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
    a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
  ];
}

export function quatFromAxisAngle(axis: Vec3, angle: number): Quat {
  const n = Math.hypot(axis[0], axis[1], axis[2]);
  if (n === 0) return [1, 0, 0, 0];
  const half = angle / 2;
  const s = Math.sin(half) / n;
  return [Math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s];
}

/** Rotation matrix as row-major 9-array. */
export function quatToRot(q: Quat): number[] {
  const [w, x, y, z] = normalizeQuat(q);
  return [
    1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
    2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
    2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
  ];
}

export function rotate(R: number[], v: Vec3): Vec3 {
  return [
    R[0] * v[0] + R[1] * v[1] + R[2] * v[2],
    R[3] * v[0] + R[4] * v[1] + R[5] * v[2],
    R[6] * v[0] + R[7] * v[1] + R[8] * v[2],
  ];
}

export function applySim3(t: Sim3, p: Vec3): Vec3 {
  const R = quatToRot(t.q);
  const sp: Vec3 = [p[0] * t.s, p[1] * t.s, p[2] * t.s];
  const r = rotate(R, sp);
  return [r[0] + t.t[0], r[1] + t.t[1], r[2] + t.t[2]];
}

/** a o b: apply b first, then a. */
export function composeSim3(a: Sim3, b: Sim3): Sim3 {
  const R = quatToRot(a.q);
  const rt = rotate(R, b.t);
  return {
    q: normalizeQuat(quatMultiply(a.q, b.q)),
    t: [a.s * rt[0] + a.t[0], a.s * rt[1] + a.t[1], a.s * rt[2] + a.t[2]],
    s: a.s * b.s,
  };
}

/** Validation mirroring the server's 422 rules; throws naming the field. */
export function validateSim3(t: Sim3): void {
  if (t.t.length !== 3 || t.t.some((v) => !Number.isFinite(v))) {
    throw new Error('t: must be 3 finite numbers');
  }
  if (t.q.length !== 4 || t.q.some((v) => !Number.isFinite(v))) {
    throw new Error('q: must be 4 finite numbers');
  }
  if (Math.abs(quatNorm(t.q) - 1) > 1e-3) {
    throw new Error('q: must be unit length within 1e-3');
  }
  if (!Number.isFinite(t.s) || t.s <= 0) {
    throw new Error('s: must be a positive finite scalar');
  }
}

export function toJson(t: Sim3): TransformJson {
  // renormalize before POST so the server never sees drift from gizmo math
  const q = normalizeQuat(t.q);
  return { t: [...t.t] as Vec3, q: [...q] as Quat, s: t.s };
}

export function fromJson(j: TransformJson): Sim3 {
  return { q: [...j.q] as Quat, t: [...j.t] as Vec3, s: j.s };
}

export function sim3Equal(a: Sim3, b: Sim3, tol = 0): boolean {
  const d = Math.max(
    ...a.t.map((v, i) => Math.abs(v - b.t[i])),
    ...a.q.map((v, i) => Math.abs(v - b.q[i])),
    Math.abs(a.s - b.s),
  );
  return d <= tol;
}
