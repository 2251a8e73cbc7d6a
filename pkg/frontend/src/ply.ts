// Binary PLY parser for the 3DGS layout the backend writes
// (float32 properties, binary little-endian).

export interface SplatBuffers {
  count: number;
  positions: Float32Array;      // 3 per splat
  rotations: Float32Array;      // 4 per splat, (w, x, y, z)
  logScales: Float32Array;      // 3 per splat
  logitOpacities: Float32Array; // 1 per splat
  dc: Float32Array;             // 3 per splat
}

const SH_C0 = 0.28209479177387814;

const TYPE_SIZES: Record<string, number> = {
  float: 4, float32: 4, double: 8, float64: 8,
  char: 1, int8: 1, uchar: 1, uint8: 1,
  short: 2, int16: 2, ushort: 2, uint16: 2,
  int: 4, int32: 4, uint: 4, uint32: 4,
};

export function parsePly(buffer: ArrayBuffer): SplatBuffers {
  const bytes = new Uint8Array(buffer);
  const headerEnd = findHeaderEnd(bytes);
  const header = new TextDecoder('ascii').decode(bytes.subarray(0, headerEnd));
  const lines = header.split('\n');

  if (lines[0].trim() !== 'ply') throw new Error('not a PLY file');
  if (!lines.some((l) => l.trim() === 'format binary_little_endian 1.0')) {
    throw new Error('unsupported PLY format (need binary_little_endian 1.0)');
  }

  let count = -1;
  const props: { name: string; size: number; offset: number; type: string }[] = [];
  let offset = 0;
  let inVertex = false;
  for (const raw of lines) {
    const parts = raw.trim().split(/\s+/);
    if (parts[0] === 'element') {
      inVertex = parts[1] === 'vertex';
      if (inVertex) count = parseInt(parts[2], 10);
    } else if (parts[0] === 'property' && inVertex) {
      const size = TYPE_SIZES[parts[1]];
      if (size === undefined) throw new Error(`unsupported property type ${parts[1]}`);
      props.push({ name: parts[2], size, offset, type: parts[1] });
      offset += size;
    }
  }
  if (count < 0) throw new Error('PLY header missing vertex element');
  const stride = offset;

  const need = ['x', 'y', 'z', 'f_dc_0', 'f_dc_1', 'f_dc_2', 'opacity',
    'scale_0', 'scale_1', 'scale_2', 'rot_0', 'rot_1', 'rot_2', 'rot_3'];
  const byName = new Map(props.map((p) => [p.name, p]));
  for (const name of need) {
    if (!byName.has(name)) throw new Error(`PLY missing property ${name}`);
  }

  const view = new DataView(buffer, headerEnd);
  if (view.byteLength < count * stride) throw new Error('PLY payload truncated');

  const read = (name: string, i: number): number => {
    const p = byName.get(name)!;
    const at = i * stride + p.offset;
    if (p.size === 4 && p.type.startsWith('f')) return view.getFloat32(at, true);
    if (p.size === 8) return view.getFloat64(at, true);
    if (p.type === 'uchar' || p.type === 'uint8') return view.getUint8(at);
    if (p.type === 'char' || p.type === 'int8') return view.getInt8(at);
    if (p.size === 2) return view.getUint16(at, true);
    return view.getFloat32(at, true);
  };

  const out: SplatBuffers = {
    count,
    positions: new Float32Array(count * 3),
    rotations: new Float32Array(count * 4),
    logScales: new Float32Array(count * 3),
    logitOpacities: new Float32Array(count),
    dc: new Float32Array(count * 3),
  };
  for (let i = 0; i < count; i++) {
    out.positions[i * 3] = read('x', i);
    out.positions[i * 3 + 1] = read('y', i);
    out.positions[i * 3 + 2] = read('z', i);
    for (let k = 0; k < 4; k++) out.rotations[i * 4 + k] = read(`rot_${k}`, i);
    for (let k = 0; k < 3; k++) {
      out.logScales[i * 3 + k] = read(`scale_${k}`, i);
      out.dc[i * 3 + k] = read(`f_dc_${k}`, i);
    }
    out.logitOpacities[i] = read('opacity', i);
  }
  return out;
}

function findHeaderEnd(bytes: Uint8Array): number {
  const marker = new TextEncoder().encode('end_header\n');
  outer: for (let i = 0; i <= bytes.length - marker.length; i++) {
    for (let j = 0; j < marker.length; j++) {
      if (bytes[i + j] !== marker[j]) continue outer;
    }
    return i + marker.length;
  }
  throw new Error('PLY header has no end_header');
}

export function dcToRgb(dc: number): number {
  return SH_C0 * dc + 0.5;
}

export function sigmoid(x: number): number {
  return 1 / (1 + Math.exp(-x));
}
