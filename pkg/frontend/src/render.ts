// Approximate client-side splat renderer: depth-sorted alpha compositing of
// projected Gaussians, DC color only. Mirrors the server's forward model
// (same camera convention, low-pass bound, cutoff rules) without tiling or
// gradients; close enough for interaction, while GET /api/render remains the
// ground truth.

import { dcToRgb, sigmoid, SplatBuffers } from './ply.js';
import { applySim3, quatToRot, Sim3 } from './sim3.js';
import type { CameraJson } from './types.js';

const Z_NEAR = 0.01;
const ALPHA_CULL = 1 / 255;
const LOWPASS = 0.3;

export interface Framebuffer {
  width: number;
  height: number;
  data: Float32Array; // RGB triples in [0, 1]
}

interface ProjectedSplat {
  u: number; v: number; z: number;
  a: number; b: number; c: number; // conic (inverse 2D covariance)
  radius: number;
  opacity: number;
  r: number; g: number; bl: number;
}

export function renderScene(
  parts: { splats: SplatBuffers; transform: Sim3 }[],
  cam: CameraJson,
  background: [number, number, number] = [0, 0, 0],
): Framebuffer {
  const projected: ProjectedSplat[] = [];
  for (const part of parts) projectPart(part.splats, part.transform, cam, projected);
  projected.sort((p, q) => p.z - q.z);

  const { width, height } = cam;
  const color = new Float32Array(width * height * 3);
  const trans = new Float32Array(width * height).fill(1);

  for (const s of projected) {
    const x0 = Math.max(Math.ceil(s.u - s.radius), 0);
    const x1 = Math.min(Math.floor(s.u + s.radius), width - 1);
    const y0 = Math.max(Math.ceil(s.v - s.radius), 0);
    const y1 = Math.min(Math.floor(s.v + s.radius), height - 1);
    for (let py = y0; py <= y1; py++) {
      for (let px = x0; px <= x1; px++) {
        const dx = px - s.u;
        const dy = py - s.v;
        const rho = s.a * dx * dx + 2 * s.b * dx * dy + s.c * dy * dy;
        let alpha = s.opacity * Math.exp(-0.5 * rho);
        if (alpha > 0.99) alpha = 0.99;
        if (alpha < ALPHA_CULL) continue;
        const idx = py * width + px;
        const w = alpha * trans[idx];
        color[idx * 3] += s.r * w;
        color[idx * 3 + 1] += s.g * w;
        color[idx * 3 + 2] += s.bl * w;
        trans[idx] *= 1 - alpha;
      }
    }
  }

  for (let i = 0; i < width * height; i++) {
    for (let ch = 0; ch < 3; ch++) {
      const v = color[i * 3 + ch] + trans[i] * background[ch];
      color[i * 3 + ch] = v < 0 ? 0 : v > 1 ? 1 : v;
    }
  }
  return { width, height, data: color };
}

function projectPart(splats: SplatBuffers, transform: Sim3, cam: CameraJson,
                     out: ProjectedSplat[]): void {
  const camR = quatToRot(cam.q);
  const limX = 1.3 * (cam.width / (2 * cam.fx));
  const limY = 1.3 * (cam.height / (2 * cam.fy));
  const Tq = quatToRot(transform.q);

  for (let i = 0; i < splats.count; i++) {
    const opacity = sigmoid(splats.logitOpacities[i]);
    if (Math.min(opacity, 0.99) < ALPHA_CULL) continue;

    const p = applySim3(transform, [
      splats.positions[i * 3], splats.positions[i * 3 + 1], splats.positions[i * 3 + 2],
    ]);
    // world -> camera: R^T (p - t)
    const rx = p[0] - cam.t[0];
    const ry = p[1] - cam.t[1];
    const rz = p[2] - cam.t[2];
    const x = camR[0] * rx + camR[3] * ry + camR[6] * rz;
    const y = camR[1] * rx + camR[4] * ry + camR[7] * rz;
    const z = camR[2] * rx + camR[5] * ry + camR[8] * rz;
    if (z <= Z_NEAR) continue;

    const u = cam.fx * (x / z) + cam.cx - 0.5;
    const v = cam.cy - cam.fy * (y / z) - 0.5;

    // world covariance M M^T with M = (R_transform R_splat) * (s * S)
    const q = [
      splats.rotations[i * 4], splats.rotations[i * 4 + 1],
      splats.rotations[i * 4 + 2], splats.rotations[i * 4 + 3],
    ] as [number, number, number, number];
    const Rg = quatToRot(q);
    const Rw = matMul3(Tq, Rg);
    const sx = transform.s * Math.exp(splats.logScales[i * 3]);
    const sy = transform.s * Math.exp(splats.logScales[i * 3 + 1]);
    const sz = transform.s * Math.exp(splats.logScales[i * 3 + 2]);
    const M = [
      Rw[0] * sx, Rw[1] * sy, Rw[2] * sz,
      Rw[3] * sx, Rw[4] * sy, Rw[5] * sz,
      Rw[6] * sx, Rw[7] * sy, Rw[8] * sz,
    ];
    const cov = matMulT3(M, M);

    // camera-frame covariance: R_cam^T cov R_cam
    const covCam = matMul3(transpose3(camR), matMul3(cov, camR));

    const xc = clamp(x / z, -limX, limX) * z;
    const yc = clamp(y / z, -limY, limY) * z;
    const j00 = cam.fx / z;
    const j02 = -cam.fx * xc / (z * z);
    const j11 = -cam.fy / z;
    const j12 = cam.fy * yc / (z * z);

    const s00 = covCam[0], s01 = covCam[1], s02 = covCam[2];
    const s11 = covCam[4], s12 = covCam[5], s22 = covCam[8];
    const a = j00 * j00 * s00 + 2 * j00 * j02 * s02 + j02 * j02 * s22 + LOWPASS;
    const b = j00 * (j11 * s01 + j12 * s02) + j02 * (j11 * s12 + j12 * s22);
    const c = j11 * j11 * s11 + 2 * j11 * j12 * s12 + j12 * j12 * s22 + LOWPASS;
    const det = a * c - b * b;
    if (det <= 0) continue;

    const lamMax = 0.5 * (a + c) + Math.sqrt(Math.max(0.25 * (a - c) * (a - c) + b * b, 0));
    const radius = 3 * Math.sqrt(lamMax);
    if (u + radius < 0 || u - radius > cam.width - 1 ||
        v + radius < 0 || v - radius > cam.height - 1) continue;

    out.push({
      u, v, z,
      a: c / det, b: -b / det, c: a / det,
      radius,
      opacity,
      r: dcToRgb(splats.dc[i * 3]),
      g: dcToRgb(splats.dc[i * 3 + 1]),
      bl: dcToRgb(splats.dc[i * 3 + 2]),
    });
  }
}

function clamp(v: number, lo: number, hi: number): number {
  return v < lo ? lo : v > hi ? hi : v;
}

function matMul3(a: number[], b: number[]): number[] {
  const out = new Array(9).fill(0);
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      out[i * 3 + j] = a[i * 3] * b[j] + a[i * 3 + 1] * b[3 + j] + a[i * 3 + 2] * b[6 + j];
    }
  }
  return out;
}

function matMulT3(a: number[], b: number[]): number[] {
  // a b^T
  const out = new Array(9).fill(0);
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      out[i * 3 + j] = a[i * 3] * b[j * 3] + a[i * 3 + 1] * b[j * 3 + 1] + a[i * 3 + 2] * b[j * 3 + 2];
    }
  }
  return out;
}

function transpose3(a: number[]): number[] {
  return [a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]];
}

export function framebufferToImageData(fb: Framebuffer): ImageData {
  const out = new ImageData(fb.width, fb.height);
  for (let i = 0; i < fb.width * fb.height; i++) {
    out.data[i * 4] = Math.round(fb.data[i * 3] * 255);
    out.data[i * 4 + 1] = Math.round(fb.data[i * 3 + 1] * 255);
    out.data[i * 4 + 2] = Math.round(fb.data[i * 3 + 2] * 255);
    out.data[i * 4 + 3] = 255;
  }
  return out;
}
