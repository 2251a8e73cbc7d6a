// Orbit camera producing the server's camera JSON: R columns are the
// camera's (right, up, forward) axes in world space, y-up image frame.

import type { CameraJson } from './types.js';
import { Vec3 } from './sim3.js';

export class OrbitCamera {
  target: Vec3 = [0, 0, 0];
  distance = 3.0;
  yaw = 0;      // radians, 0 faces +Z
  pitch = 0;    // radians, positive looks up
  fovDeg = 70;

  constructor(public width: number, public height: number) {}

  position(): Vec3 {
    const cp = Math.cos(this.pitch);
    const fwd: Vec3 = [cp * Math.sin(this.yaw), Math.sin(this.pitch), cp * Math.cos(this.yaw)];
    return [
      this.target[0] - fwd[0] * this.distance,
      this.target[1] - fwd[1] * this.distance,
      this.target[2] - fwd[2] * this.distance,
    ];
  }

  orbit(dYaw: number, dPitch: number): void {
    this.yaw += dYaw;
    const lim = Math.PI / 2 - 0.05;
    this.pitch = Math.max(-lim, Math.min(lim, this.pitch + dPitch));
  }

  dolly(factor: number): void {
    this.distance = Math.max(0.05, this.distance * factor);
  }

  pan(dx: number, dy: number): void {
    const { right, up } = this.axes();
    const k = this.distance * 0.002;
    for (let i = 0; i < 3; i++) {
      this.target[i] += right[i] * -dx * k + up[i] * dy * k;
    }
  }

  axes(): { right: Vec3; up: Vec3; forward: Vec3 } {
    const cp = Math.cos(this.pitch);
    const forward: Vec3 = [cp * Math.sin(this.yaw), Math.sin(this.pitch), cp * Math.cos(this.yaw)];
    const worldUp: Vec3 = [0, 1, 0];
    let right: Vec3 = [
      worldUp[1] * forward[2] - worldUp[2] * forward[1],
      worldUp[2] * forward[0] - worldUp[0] * forward[2],
      worldUp[0] * forward[1] - worldUp[1] * forward[0],
    ];
    const rn = Math.hypot(...right) || 1;
    right = [right[0] / rn, right[1] / rn, right[2] / rn];
    const up: Vec3 = [
      forward[1] * right[2] - forward[2] * right[1],
      forward[2] * right[0] - forward[0] * right[2],
      forward[0] * right[1] - forward[1] * right[0],
    ];
    return { right, up, forward };
  }

  toJson(): CameraJson {
    const { right, up, forward } = this.axes();
    const f = 0.5 * this.width / Math.tan((this.fovDeg * Math.PI) / 360);
    const q = rotToQuat(right, up, forward);
    return {
      width: this.width,
      height: this.height,
      fx: f,
      fy: f,
      cx: this.width / 2,
      cy: this.height / 2,
      q,
      t: this.position(),
    };
  }
}

/** Quaternion (w,x,y,z) from column axes of the rotation matrix. */
export function rotToQuat(r: Vec3, u: Vec3, f: Vec3): [number, number, number, number] {
  const m = [r[0], u[0], f[0], r[1], u[1], f[1], r[2], u[2], f[2]];
  const tr = m[0] + m[4] + m[8];
  let q: [number, number, number, number];
  if (tr > 0) {
    const s = Math.sqrt(tr + 1) * 2;
    q = [0.25 * s, (m[7] - m[5]) / s, (m[2] - m[6]) / s, (m[3] - m[1]) / s];
  } else if (m[0] > m[4] && m[0] > m[8]) {
    const s = Math.sqrt(1 + m[0] - m[4] - m[8]) * 2;
    q = [(m[7] - m[5]) / s, 0.25 * s, (m[1] + m[3]) / s, (m[2] + m[6]) / s];
  } else if (m[4] > m[8]) {
    const s = Math.sqrt(1 + m[4] - m[0] - m[8]) * 2;
    q = [(m[2] - m[6]) / s, (m[1] + m[3]) / s, 0.25 * s, (m[5] + m[7]) / s];
  } else {
    const s = Math.sqrt(1 + m[8] - m[0] - m[4]) * 2;
    q = [(m[3] - m[1]) / s, (m[2] + m[6]) / s, (m[5] + m[7]) / s, 0.25 * s];
  }
  const n = Math.hypot(...q);
  return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
}
