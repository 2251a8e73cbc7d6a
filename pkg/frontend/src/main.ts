// Editor entry point: viewport, object list, gizmos, snap/recompose/save.

import { ApiError, SceneApi } from './api.js';
import { OrbitCamera } from './camera.js';
import {
  AXES,
  GizmoMode,
  applyRotateDrag,
  applyScaleDrag,
  applyTranslateDrag,
  axisScreenDir,
  projectPoint,
  rayHitsBox,
} from './gizmo.js';
import { framebufferToImageData, renderScene } from './render.js';
import { ClientScene } from './scene.js';
import { Sim3 } from './sim3.js';

const RENDER_SIZE = 384;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function start() {
  const params = new URLSearchParams(location.search);
  const base = params.get('server') ?? '';
  const api = new SceneApi(base);
  const status = el<HTMLDivElement>('status');
  const canvas = el<HTMLCanvasElement>('viewport');
  canvas.width = RENDER_SIZE;
  canvas.height = RENDER_SIZE;
  const ctx = canvas.getContext('2d')!;
  const camera = new OrbitCamera(RENDER_SIZE, RENDER_SIZE);
  camera.distance = 0.01; // start near the panorama origin and look around
  camera.target = [0, 0, 0.01];

  let scene: ClientScene;
  try {
    status.textContent = 'loading scene...';
    scene = await ClientScene.load(api);
  } catch (err) {
    status.textContent = `failed to load scene: ${err}. retry?`;
    status.onclick = () => start();
    return;
  }

  let selected: string | null = null;
  let mode: GizmoMode = 'translate';
  let needsRedraw = true;

  const list = el<HTMLUListElement>('objects');
  const snapBtn = el<HTMLButtonElement>('snap');
  const saveBtn = el<HTMLButtonElement>('save');
  const undoBtn = el<HTMLButtonElement>('undo');
  const serverViewBtn = el<HTMLButtonElement>('server-view');

  function refreshList() {
    list.innerHTML = '';
    for (const e of scene.entities) {
      const item = document.createElement('li');
      item.textContent = `${e.id} (${e.label})${e.dirty ? ' *' : ''}`;
      item.className = e.id === selected ? 'selected' : '';
      item.onclick = () => {
        selected = e.id;
        needsRedraw = true;
        refreshList();
      };
      list.appendChild(item);
    }
    snapBtn.disabled = !scene.hasPlanes() || selected === null;
    saveBtn.disabled = selected === null;
    undoBtn.disabled = selected === null;
  }

  for (const m of ['translate', 'rotate', 'scale'] as GizmoMode[]) {
    el<HTMLButtonElement>(`mode-${m}`).onclick = () => {
      mode = m;
      status.textContent = `gizmo: ${m}`;
    };
  }

  snapBtn.onclick = async () => {
    if (!selected) return;
    try {
      status.textContent = 'snapping...';
      await scene.snapAndRecompose(selected);
      status.textContent = 'snapped and recomposed';
      needsRedraw = true;
      refreshList();
    } catch (err) {
      status.textContent = `snap failed: ${err}`;
    }
  };

  saveBtn.onclick = async () => {
    if (!selected) return;
    try {
      await scene.commit(selected);
      status.textContent = `saved ${selected}`;
    } catch (err) {
      status.textContent = err instanceof ApiError && err.field
        ? `rejected (${err.field}): ${err.message}`
        : `save failed: ${err}`;
    }
    needsRedraw = true;
    refreshList();
  };

  undoBtn.onclick = () => {
    if (selected && scene.undo(selected)) {
      needsRedraw = true;
      refreshList();
      status.textContent = 'undone';
    }
  };

  serverViewBtn.onclick = async () => {
    try {
      status.textContent = 'requesting server render...';
      const png = await api.getRenderPng(camera.toJson());
      const blob = new Blob([png], { type: 'image/png' });
      const url = URL.createObjectURL(blob);
      const img = new Image();
      img.onload = () => {
        ctx.drawImage(img, 0, 0);
        URL.revokeObjectURL(url);
        status.textContent = 'server render (move to refresh)';
      };
      img.src = url;
    } catch (err) {
      status.textContent = `server render failed: ${err}`;
    }
  };

  // pointer interaction: left-drag orbits, or drags the active gizmo axis;
  // wheel dollies; shift-drag pans; click selects by bbox ray test
  let dragging: { axis: [number, number, number] | null; lastX: number; lastY: number } | null = null;

  canvas.addEventListener('pointerdown', (ev) => {
    const rect = canvas.getBoundingClientRect();
    const px = ((ev.clientX - rect.left) / rect.width) * RENDER_SIZE;
    const py = ((ev.clientY - rect.top) / rect.height) * RENDER_SIZE;
    const cam = camera.toJson();

    if (selected) {
      const e = scene.entity(selected);
      const origin = projectPoint(cam, e.transform.t);
      if (origin) {
        for (const axis of AXES) {
          const dir = axisScreenDir(cam, e.transform.t, axis.dir);
          if (!dir) continue;
          const hx = origin[0] + dir[0] * 46;
          const hy = origin[1] + dir[1] * 46;
          if (Math.hypot(px - hx, py - hy) < 12) {
            dragging = { axis: axis.dir, lastX: px, lastY: py };
            canvas.setPointerCapture(ev.pointerId);
            return;
          }
        }
      }
    }

    // selection: nearest bbox hit wins
    let bestT = Infinity;
    let bestId: string | null = null;
    for (const e of scene.entities) {
      if (!e.bbox) continue;
      const hit = rayHitsBox(cam, px, py, e.transform, e.bbox);
      if (hit !== null && hit < bestT) {
        bestT = hit;
        bestId = e.id;
      }
    }
    if (bestId) {
      selected = bestId;
      refreshList();
      needsRedraw = true;
    }
    dragging = { axis: null, lastX: px, lastY: py };
    canvas.setPointerCapture(ev.pointerId);
  });

  canvas.addEventListener('pointermove', (ev) => {
    if (!dragging) return;
    const rect = canvas.getBoundingClientRect();
    const px = ((ev.clientX - rect.left) / rect.width) * RENDER_SIZE;
    const py = ((ev.clientY - rect.top) / rect.height) * RENDER_SIZE;
    const dx = px - dragging.lastX;
    const dy = py - dragging.lastY;
    dragging.lastX = px;
    dragging.lastY = py;

    if (dragging.axis && selected) {
      const e = scene.entity(selected);
      let next: Sim3 = e.transform;
      if (mode === 'translate') {
        next = applyTranslateDrag(e.transform, camera.toJson(), dragging.axis, dx, dy);
      } else if (mode === 'rotate') {
        next = applyRotateDrag(e.transform, dragging.axis, dx);
      } else {
        next = applyScaleDrag(e.transform, dx);
      }
      scene.setLocalTransform(selected, next);
      refreshList();
    } else if (ev.shiftKey) {
      camera.pan(dx, dy);
    } else {
      camera.orbit(-dx * 0.008, dy * 0.008);
    }
    needsRedraw = true;
  });

  canvas.addEventListener('pointerup', () => {
    dragging = null;
  });

  canvas.addEventListener('wheel', (ev) => {
    ev.preventDefault();
    camera.dolly(Math.exp(ev.deltaY * 0.001));
    needsRedraw = true;
  });

  function drawGizmo(cam: ReturnType<OrbitCamera['toJson']>) {
    if (!selected) return;
    const e = scene.entity(selected);
    const origin = projectPoint(cam, e.transform.t);
    if (!origin) return;
    for (const axis of AXES) {
      const dir = axisScreenDir(cam, e.transform.t, axis.dir);
      if (!dir) continue;
      ctx.strokeStyle = axis.color;
      ctx.lineWidth = 2.5;
      ctx.beginPath();
      ctx.moveTo(origin[0], origin[1]);
      ctx.lineTo(origin[0] + dir[0] * 46, origin[1] + dir[1] * 46);
      ctx.stroke();
      ctx.fillStyle = axis.color;
      ctx.beginPath();
      ctx.arc(origin[0] + dir[0] * 46, origin[1] + dir[1] * 46, 5, 0, Math.PI * 2);
      ctx.fill();
    }
  }

  function frame() {
    if (needsRedraw) {
      needsRedraw = false;
      const cam = camera.toJson();
      const fb = renderScene(scene.renderParts(), cam);
      ctx.putImageData(framebufferToImageData(fb), 0, 0);
      drawGizmo(cam);
    }
    requestAnimationFrame(frame);
  }

  refreshList();
  status.textContent = `loaded ${scene.manifest.scene_id}: ${scene.entities.length} objects`;
  frame();
}

start();
