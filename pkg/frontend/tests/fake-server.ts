// In-memory stand-in for the scene server, implementing the same routes and
// validation rules the python side exposes.

import type { FetchLike } from '../src/api';
import type { ManifestJson, TransformJson } from '../src/types';
import { SplatRecord, writePly } from './helpers';

export function record3(n: number): SplatRecord[] {
  return Array.from({ length: n }, (_, i) => ({
    position: [i * 0.2, -1.2, 2 + i * 0.1] as [number, number, number],
    rotation: [1, 0, 0, 0] as [number, number, number, number],
    logScale: [-2.2, -2.2, -3.2] as [number, number, number],
    logitOpacity: 2.0,
    dc: [0.3, -0.2, 0.5] as [number, number, number],
  }));
}

export function makeFakeServer() {
  const manifest: ManifestJson = {
    scene_id: 'fake',
    background: 'background.ply',
    objects: [
      {
        id: 'obj00', label: 'crate', ply: 'objects/obj00.ply',
        transform: { t: [0, -1, 2], q: [1, 0, 0, 0], s: 1 },
        bbox: { min: [-0.5, -0.5, -0.5], max: [0.5, 0.5, 0.5] },
      },
      {
        id: 'obj01', label: 'ball', ply: 'objects/obj01.ply',
        transform: { t: [1, -1, 2], q: [1, 0, 0, 0], s: 0.8 },
        bbox: { min: [-0.5, -0.5, -0.5], max: [0.5, 0.5, 0.5] },
      },
    ],
    planes: [{ n: [0, 1, 0], d: -1.5, kind: 'FLOOR' }],
    light: { dir: [0, -1, 0], shadow_strength: 0.45 },
  };
  const assets: Record<string, ArrayBuffer> = {
    background: writePly(record3(3)),
    obj00: writePly(record3(2)),
    obj01: writePly(record3(2)),
  };
  const transforms: Record<string, TransformJson> = {};

  const fetchFn: FetchLike = async (input, init) => {
    const url = new URL(input, 'http://fake');
    const path = url.pathname;
    if (path === '/api/manifest') {
      return jsonResponse(200, manifest);
    }
    const asset = path.match(/^\/api\/asset\/(.+)$/);
    if (asset) {
      const blob = assets[decodeURIComponent(asset[1])];
      return blob
        ? new Response(blob, { status: 200 })
        : jsonResponse(404, { error: 'unknown asset' });
    }
    const action = path.match(/^\/api\/objects\/([^/]+)\/(transform|snap)$/);
    if (action && init?.method === 'POST') {
      const id = decodeURIComponent(action[1]);
      const obj = manifest.objects.find((o) => o.id === id);
      if (!obj) return jsonResponse(404, { error: 'unknown object' });
      if (action[2] === 'transform') {
        const body = JSON.parse(String(init.body)) as TransformJson;
        const norm = Math.hypot(...body.q);
        if (Math.abs(norm - 1) > 1e-3) return jsonResponse(422, { field: 'q', error: 'not unit' });
        if (!(body.s > 0)) return jsonResponse(422, { field: 's', error: 'not positive' });
        transforms[id] = body;
        obj.transform = body;
        return jsonResponse(200, { transform: body });
      }
      const snapped = { ...obj.transform, t: [obj.transform.t[0], -1.0, obj.transform.t[2]] as [number, number, number] };
      obj.transform = snapped;
      transforms[id] = snapped;
      return jsonResponse(200, { transform: snapped });
    }
    if (path === '/api/recompose' && init?.method === 'POST') {
      return jsonResponse(200, { asset: 'merged' });
    }
    return jsonResponse(404, { error: 'not found' });
  };

  return { fetch: fetchFn, manifest, transforms };
}

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'Content-Type': 'application/json' },
  });
}
