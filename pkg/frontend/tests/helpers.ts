// Test helpers: a tiny canonical-layout PLY writer and a minimal PNG
// decoder (8-bit RGB, non-interlaced) for comparing server renders.

import * as zlib from 'node:zlib';

export interface SplatRecord {
  position: [number, number, number];
  rotation: [number, number, number, number];
  logScale: [number, number, number];
  logitOpacity: number;
  dc: [number, number, number];
}

export function writePly(records: SplatRecord[]): ArrayBuffer {
  const props = ['x', 'y', 'z', 'nx', 'ny', 'nz', 'f_dc_0', 'f_dc_1', 'f_dc_2',
    'opacity', 'scale_0', 'scale_1', 'scale_2', 'rot_0', 'rot_1', 'rot_2', 'rot_3'];
  const header = ['ply', 'format binary_little_endian 1.0',
    `element vertex ${records.length}`,
    ...props.map((p) => `property float ${p}`), 'end_header', ''].join('\n');
  const headerBytes = new TextEncoder().encode(header);
  const stride = props.length * 4;
  const buf = new ArrayBuffer(headerBytes.length + records.length * stride);
  new Uint8Array(buf).set(headerBytes);
  const view = new DataView(buf, headerBytes.length);
  records.forEach((r, i) => {
    const at = i * stride;
    const vals = [...r.position, 0, 0, 0, ...r.dc, r.logitOpacity, ...r.logScale, ...r.rotation];
    vals.forEach((v, k) => view.setFloat32(at + k * 4, v, true));
  });
  return buf;
}

export interface DecodedPng {
  width: number;
  height: number;
  rgb: Float64Array; // 3 per pixel, [0, 1]
}

export function decodePng(data: Uint8Array): DecodedPng {
  const sig = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];
  sig.forEach((b, i) => {
    if (data[i] !== b) throw new Error('not a PNG');
  });
  let off = 8;
  let width = 0;
  let height = 0;
  let bitDepth = 0;
  let colorType = 0;
  const idat: Uint8Array[] = [];
  while (off < data.length) {
    const len = readU32(data, off);
    const type = new TextDecoder('ascii').decode(data.subarray(off + 4, off + 8));
    const body = data.subarray(off + 8, off + 8 + len);
    if (type === 'IHDR') {
      width = readU32(body, 0);
      height = readU32(body, 4);
      bitDepth = body[8];
      colorType = body[9];
      if (body[12] !== 0) throw new Error('interlaced PNG unsupported');
    } else if (type === 'IDAT') {
      idat.push(body);
    } else if (type === 'IEND') {
      break;
    }
    off += 12 + len;
  }
  if (bitDepth !== 8 || colorType !== 2) {
    throw new Error(`unsupported PNG (bit depth ${bitDepth}, color type ${colorType})`);
  }
  const raw = zlib.inflateSync(Buffer.concat(idat.map((b) => Buffer.from(b))));
  const bpp = 3;
  const stride = width * bpp;
  const rgb = new Float64Array(width * height * 3);
  const prev = new Uint8Array(stride);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const line = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const cur = new Uint8Array(stride);
    for (let x = 0; x < stride; x++) {
      const a = x >= bpp ? cur[x - bpp] : 0;
      const b = prev[x];
      const c = x >= bpp ? prev[x - bpp] : 0;
      let v = line[x];
      if (filter === 1) v += a;
      else if (filter === 2) v += b;
      else if (filter === 3) v += Math.floor((a + b) / 2);
      else if (filter === 4) v += paeth(a, b, c);
      cur[x] = v & 0xff;
    }
    prev.set(cur);
    for (let x = 0; x < stride; x++) rgb[y * stride + x] = cur[x] / 255;
  }
  return { width, height, rgb };
}

function readU32(d: Uint8Array, at: number): number {
  return ((d[at] << 24) | (d[at + 1] << 16) | (d[at + 2] << 8) | d[at + 3]) >>> 0;
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  return pa <= pb && pa <= pc ? a : pb <= pc ? b : c;
}
