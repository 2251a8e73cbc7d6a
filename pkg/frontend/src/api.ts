// REST client for the scene server. fetch is injectable for tests.

import type { CameraJson, ManifestJson, TransformJson } from './types.js';

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, public field: string | undefined, message: string) {
    super(message);
  }
}

export class SceneApi {
  constructor(private baseUrl: string, private fetchFn: FetchLike = fetch.bind(globalThis)) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, init);
    const body = await resp.text();
    if (!resp.ok) {
      let field: string | undefined;
      let message = body;
      try {
        const parsed = JSON.parse(body);
        field = parsed.field;
        message = parsed.error ?? body;
      } catch {
        // non-JSON error body; keep raw text
      }
      throw new ApiError(resp.status, field, message);
    }
    return JSON.parse(body) as T;
  }

  getManifest(): Promise<ManifestJson> {
    return this.json<ManifestJson>('/api/manifest');
  }

  async getAsset(id: string): Promise<ArrayBuffer> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/asset/${encodeURIComponent(id)}`);
    if (!resp.ok) throw new ApiError(resp.status, undefined, await resp.text());
    return resp.arrayBuffer();
  }

  postTransform(objectId: string, transform: TransformJson): Promise<{ transform: TransformJson }> {
    return this.json(`/api/objects/${encodeURIComponent(objectId)}/transform`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(transform),
    });
  }

  postSnap(objectId: string): Promise<{ transform: TransformJson }> {
    return this.json(`/api/objects/${encodeURIComponent(objectId)}/snap`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: '{}',
    });
  }

  postRecompose(): Promise<{ asset: string }> {
    return this.json('/api/recompose', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: '{}',
    });
  }

  async getRenderPng(cam: CameraJson): Promise<ArrayBuffer> {
    const q = encodeURIComponent(JSON.stringify(cam));
    const resp = await this.fetchFn(`${this.baseUrl}/api/render?cam=${q}`);
    if (!resp.ok) throw new ApiError(resp.status, undefined, await resp.text());
    return resp.arrayBuffer();
  }
}
