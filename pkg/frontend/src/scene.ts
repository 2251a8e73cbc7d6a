// Client scene state: manifest mirror, loaded splat buffers, local edits
// with undo history, optimistic commits reconciled against the server.
// Splat payloads are never mutated locally; only transforms flow upstream.

import { SceneApi } from './api.js';
import { parsePly, SplatBuffers } from './ply.js';
import { fromJson, identity, Sim3, sim3Equal, toJson, validateSim3 } from './sim3.js';
import type { ManifestJson, ManifestObject } from './types.js';

export interface SceneEntity {
  id: string;
  label: string;
  splats: SplatBuffers;
  transform: Sim3;
  bbox?: { min: [number, number, number]; max: [number, number, number] };
  dirty: boolean;
}

export class ClientScene {
  manifest!: ManifestJson;
  background!: SplatBuffers;
  entities: SceneEntity[] = [];
  private history = new Map<string, Sim3[]>();

  constructor(private api: SceneApi) {}

  static async load(api: SceneApi): Promise<ClientScene> {
    const scene = new ClientScene(api);
    await scene.reload();
    return scene;
  }

  async reload(): Promise<void> {
    this.manifest = await this.api.getManifest();
    this.background = parsePly(await this.api.getAsset('background'));
    this.entities = [];
    for (const obj of this.manifest.objects) {
      this.entities.push({
        id: obj.id,
        label: obj.label,
        splats: parsePly(await this.api.getAsset(obj.id)),
        transform: fromJson(obj.transform),
        bbox: obj.bbox,
        dirty: false,
      });
    }
    this.history.clear();
  }

  entity(id: string): SceneEntity {
    const e = this.entities.find((x) => x.id === id);
    if (!e) throw new Error(`unknown object ${id}`);
    return e;
  }

  hasPlanes(): boolean {
    return this.manifest.planes.length > 0;
  }

  renderParts(): { splats: SplatBuffers; transform: Sim3 }[] {
    return [
      { splats: this.background, transform: identity() },
      ...this.entities.map((e) => ({ splats: e.splats, transform: e.transform })),
    ];
  }

  /** Local (viewport-only) edit; records undo history on first touch. */
  setLocalTransform(id: string, transform: Sim3): void {
    const e = this.entity(id);
    const stack = this.history.get(id) ?? [];
    if (stack.length === 0 || !sim3Equal(stack[stack.length - 1], e.transform)) {
      stack.push(e.transform);
      this.history.set(id, stack);
    }
    e.transform = transform;
    e.dirty = true;
  }

  undo(id: string): boolean {
    const stack = this.history.get(id);
    if (!stack || stack.length === 0) return false;
    const e = this.entity(id);
    e.transform = stack.pop()!;
    e.dirty = stack.length > 0;
    return true;
  }

  /** Validate client-side, POST the transform, reconcile from the response.
   *  On a 422 the local state reverts to the server's last accepted value. */
  async commit(id: string): Promise<void> {
    const e = this.entity(id);
    try {
      validateSim3(e.transform);
      const resp = await this.api.postTransform(id, toJson(e.transform));
      e.transform = fromJson(resp.transform);
      e.dirty = false;
      this.history.delete(id);
      const obj = this.manifestObject(id);
      obj.transform = resp.transform;
    } catch (err) {
      this.undo(id);
      throw err;
    }
  }

  async snapAndRecompose(id: string): Promise<void> {
    if (!this.hasPlanes()) throw new Error('no support planes in the manifest');
    const e = this.entity(id);
    const resp = await this.api.postSnap(id);
    e.transform = fromJson(resp.transform);
    e.dirty = false;
    this.manifestObject(id).transform = resp.transform;
    await this.api.postRecompose();
  }

  private manifestObject(id: string): ManifestObject {
    const obj = this.manifest.objects.find((o) => o.id === id);
    if (!obj) throw new Error(`unknown object ${id}`);
    return obj;
  }
}
