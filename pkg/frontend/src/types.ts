// DTOs mirroring the scene server's JSON schema.

export interface TransformJson {
  t: [number, number, number];
  q: [number, number, number, number]; // (w, x, y, z)
  s: number;
}

export interface ManifestObject {
  id: string;
  label: string;
  ply: string;
  transform: TransformJson;
  mask_id?: string;
  bbox?: { min: [number, number, number]; max: [number, number, number] };
}

export interface PlaneJson {
  n: [number, number, number];
  d: number;
  kind?: string;
  inliers?: number;
}

export interface LightJson {
  dir: [number, number, number];
  shadow_strength: number;
}

export interface ManifestJson {
  scene_id: string;
  background: string;
  objects: ManifestObject[];
  planes: PlaneJson[];
  light: LightJson;
  merged?: string;
}

export interface CameraJson {
  width: number;
  height: number;
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  q: [number, number, number, number];
  t: [number, number, number];
}
