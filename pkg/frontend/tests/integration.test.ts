// Against the live python scene server (started by global-setup on :8917).

import * as fs from 'node:fs';
import * as path from 'node:path';
import { describe, expect, it } from 'vitest';

import { SceneApi } from '../src/api';
import { renderScene } from '../src/render';
import { ClientScene } from '../src/scene';
import { fromJson, toJson } from '../src/sim3';
import type { CameraJson, TransformJson } from '../src/types';
import { decodePng } from './helpers';

const BASE = 'http://127.0.0.1:8917';
const SCENE_DIR = path.resolve(__dirname, '..', '.test-scene');

function api(): SceneApi {
  return new SceneApi(BASE);
}

const FIXTURE_CAM: CameraJson = {
  width: 160, height: 160, fx: 120, fy: 120, cx: 80, cy: 80,
  q: [1, 0, 0, 0], t: [0, 0, 0],
};

describe('editor against the live scene server', () => {
  it('loads the fixture scene and lists all objects', async () => {
    const scene = await ClientScene.load(api());
    expect(scene.entities.length).toBe(3);
    expect(scene.entities.map((e) => e.label).sort()).toEqual(['ball', 'crate', 'pillar']);
    expect(scene.hasPlanes()).toBe(true);
  });

  it('parsed gaussian count equals the PLY header count for every asset', async () => {
    const scene = await ClientScene.load(api());
    const ids = ['background', ...scene.entities.map((e) => e.id)];
    for (const id of ids) {
      const buf = await api().getAsset(id);
      const header = new TextDecoder('ascii').decode(new Uint8Array(buf).subarray(0, 400));
      const declared = parseInt(header.match(/element vertex (\d+)/)![1], 10);
      const parsed = id === 'background' ? scene.background : scene.entity(id).splats;
      expect(parsed.count).toBe(declared);
    }
  });

  it('a committed transform persists across a reload', async () => {
    const scene = await ClientScene.load(api());
    const id = scene.entities[1].id;
    const edited = { ...scene.entity(id).transform };
    edited.t = [edited.t[0] + 1.0, edited.t[1], edited.t[2]];
    scene.setLocalTransform(id, edited);
    await scene.commit(id);

    const fresh = await ClientScene.load(api());
    const persisted = fresh.entity(id).transform;
    expect(persisted.t[0]).toBeCloseTo(edited.t[0], 12);
    expect(persisted.t[1]).toBeCloseTo(edited.t[1], 12);
    expect(persisted.t[2]).toBeCloseTo(edited.t[2], 12);
  });

  it('snap matches the in-process snap_to_plane oracle within 1e-9', async () => {
    const oracle = JSON.parse(fs.readFileSync(path.join(SCENE_DIR, 'oracle.json'), 'utf8')) as {
      object: string; start: TransformJson; expected: TransformJson;
    };
    const scene = await ClientScene.load(api());
    scene.setLocalTransform(oracle.object, fromJson(oracle.start));
    await scene.commit(oracle.object);
    await scene.snapAndRecompose(oracle.object);
    const got = toJson(scene.entity(oracle.object).transform);
    for (let i = 0; i < 3; i++) {
      expect(Math.abs(got.t[i] - oracle.expected.t[i])).toBeLessThan(1e-9);
    }
    for (let i = 0; i < 4; i++) {
      expect(Math.abs(got.q[i] - oracle.expected.q[i])).toBeLessThan(1e-9);
    }
    expect(Math.abs(got.s - oracle.expected.s)).toBeLessThan(1e-9);
    // idempotence mirrors the server: snapping again changes nothing
    await scene.snapAndRecompose(oracle.object);
    const again = toJson(scene.entity(oracle.object).transform);
    for (let i = 0; i < 3; i++) {
      expect(Math.abs(again.t[i] - got.t[i])).toBeLessThan(1e-9);
    }
  });

  it('client approximate render is within 0.05 mean abs of the server render', async () => {
    const scene = await ClientScene.load(api());
    const png = decodePng(new Uint8Array(await api().getRenderPng(FIXTURE_CAM)));
    expect(png.width).toBe(160);

    const fb = renderScene(scene.renderParts(), FIXTURE_CAM);
    let sum = 0;
    for (let i = 0; i < fb.data.length; i++) sum += Math.abs(fb.data[i] - png.rgb[i]);
    const meanAbs = sum / fb.data.length;
    expect(meanAbs).toBeLessThan(0.05);
  }, 60000);
});
