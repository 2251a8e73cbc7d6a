"""Photometric splat optimization: Adam over the five parameter groups,
deterministic supervision schedules, and a simplified relocation-based
densification (dead splats teleport to high-gradient donors; the cloud
never grows or shrinks).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .cameras import PerspectiveCamera
from .cloud import SplatCloud, sigmoid
from .disocclusion import compute_inpaint_mask
from .errors import DomainError, PortError
from .render import (
    RenderGradients,
    backprop_image_gradient,
    equirect_loss_and_gradients,
    render_perspective,
    render_with_gradients,
)

log = logging.getLogger(__name__)

PANORAMA = "PANORAMA"
INPAINTED = "INPAINTED"
RANDOM_VIEW = "RANDOM_VIEW"
SDS_VIEW = "SDS_VIEW"

PRETUNE_CYCLE = (PANORAMA,) * 9 + (RANDOM_VIEW,)          # 90 / 10
FINETUNE_CYCLE = (PANORAMA, INPAINTED, SDS_VIEW, SDS_VIEW)  # 25 / 25 / 50


@dataclass(frozen=True)
class ViewSamplerConfig:
    offset_radius_factor: float = 0.3
    width: int = 256
    height: int = 256
    fov_deg: float = 75.0
    pitch_limit_deg: float = 30.0


@dataclass(frozen=True)
class SupervisionSchedule:
    cycle: tuple
    iterations: int
    seed: int = 0
    sampler: ViewSamplerConfig = field(default_factory=ViewSamplerConfig)

    def __post_init__(self):
        if not self.cycle:
            raise DomainError("schedule cycle must be non-empty")
        if self.iterations <= 0:
            raise DomainError("schedule needs a positive iteration count")

    def tags(self):
        for i in range(self.iterations):
            yield i, self.cycle[i % len(self.cycle)]


def pretune_schedule(iterations: int, seed: int = 0,
                     sampler: ViewSamplerConfig | None = None) -> SupervisionSchedule:
    return SupervisionSchedule(PRETUNE_CYCLE, iterations, seed,
                               sampler or ViewSamplerConfig())


def finetune_schedule(iterations: int, seed: int = 0,
                      sampler: ViewSamplerConfig | None = None) -> SupervisionSchedule:
    return SupervisionSchedule(FINETUNE_CYCLE, iterations, seed,
                               sampler or ViewSamplerConfig())


@dataclass(frozen=True)
class OptimConfig:
    lr_position: float = 1.6e-4     # multiplied by the scene extent
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    loss_weights: tuple = (0.8, 0.2)
    densify_interval: int = 200
    opacity_floor: float = 0.005
    relocation_jitter: float = 0.05
    checkpoint_every: int = 50
    backend: str | None = None

    def config_hash(self) -> str:
        blob = json.dumps(self.__dict__, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class OptimResult:
    cloud: SplatCloud
    loss_history: list
    view_stats: list            # (iteration, disoccluded mask area) per random view
    rate_halvings: int = 0


class _Adam:
    def __init__(self, shapes, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params, grads, lrs):
        self.t += 1
        b1c = 1 - self.beta1 ** self.t
        b2c = 1 - self.beta2 ** self.t
        for p, g, m, v, lr in zip(params, grads, self.m, self.v, lrs):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def reset_rows(self, rows):
        for m, v in zip(self.m, self.v):
            m[rows] = 0.0
            v[rows] = 0.0


class SplatOptimizer:
    """Owns a working copy of the cloud for the duration of a run."""

    def __init__(self, cloud: SplatCloud, cfg: OptimConfig, seed: int = 0):
        self.cloud = cloud.copy()
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        extent = self.cloud.scene_extent()
        self.lrs = [cfg.lr_position * extent, cfg.lr_scale, cfg.lr_rotation,
                    cfg.lr_opacity, cfg.lr_color]
        n = len(self.cloud)
        self.adam = _Adam([(n, 3), (n, 3), (n, 4), (n,), (n, 3)])
        self.pos_grad_accum = np.zeros(n)
        self.rate_halvings = 0
        self._checkpoint = None

    def _params(self):
        c = self.cloud
        return [c.positions, c.log_scales, c.rotations, c.logit_opacities, c.dc]

    def apply(self, grads: RenderGradients):
        g = [grads.d_positions, grads.d_log_scales, grads.d_rotations,
             grads.d_logit_opacities, grads.d_dc]
        self.adam.step(self._params(), g, self.lrs)
        q = self.cloud.rotations
        norms = np.linalg.norm(q, axis=1, keepdims=True)
        off = np.abs(norms - 1.0)[:, 0] > 1e-12  # leave untouched rows bit-stable
        if off.any():
            q[off] /= norms[off]
        self.pos_grad_accum += np.linalg.norm(grads.d_positions, axis=1)

    def snapshot(self):
        self._checkpoint = self.cloud.copy()

    def recover_divergence(self):
        """Halve all rates and restore the last checkpoint; False after 3 uses."""
        self.rate_halvings += 1
        if self.rate_halvings > 3:
            return False
        self.lrs = [lr * 0.5 for lr in self.lrs]
        if self._checkpoint is not None:
            self.cloud = self._checkpoint.copy()
        return True

    def maybe_densify(self, iteration: int):
        if self.cfg.densify_interval <= 0 or iteration == 0:
            return
        if iteration % self.cfg.densify_interval == 0:
            self.cloud, moved = relocate_densify(self.cloud, self.pos_grad_accum,
                                                 self.cfg, rng=self.rng)
            if len(moved):
                self.adam.reset_rows(moved)
            self.pos_grad_accum[:] = 0.0

    def sample_view(self, sampler: ViewSamplerConfig) -> PerspectiveCamera:
        dists = np.linalg.norm(self.cloud.positions, axis=1)
        radius = sampler.offset_radius_factor * float(np.median(dists))
        v = self.rng.standard_normal(3)
        v /= max(np.linalg.norm(v), 1e-12)
        pos = v * radius * self.rng.uniform() ** (1 / 3)
        yaw = self.rng.uniform(0, 2 * np.pi)
        pitch = np.radians(self.rng.uniform(-sampler.pitch_limit_deg,
                                            sampler.pitch_limit_deg))
        fwd = np.array([np.cos(pitch) * np.sin(yaw), np.sin(pitch),
                        np.cos(pitch) * np.cos(yaw)])
        return PerspectiveCamera.looking_at(pos, fwd, sampler.fov_deg,
                                            sampler.width, sampler.height)


def relocate_densify(cloud: SplatCloud, grads_accum: np.ndarray, cfg: OptimConfig,
                     rng=None):
    """Teleport dead splats (opacity below the floor) onto donors sampled
    proportionally to accumulated positional gradient magnitude.

    The dead splat takes the donor's position (plus scale-proportional
    jitter), scale, rotation and color; both splats get opacity
    1 - sqrt(1 - alpha_donor) so their combined peak alpha approximates the
    donor's. Total count never changes. Returns (cloud, touched row indices).
    """
    rng = rng or np.random.default_rng(0)
    op = sigmoid(cloud.logit_opacities)
    dead = np.nonzero(op < cfg.opacity_floor)[0]
    if len(dead) == 0:
        return cloud, np.zeros(0, dtype=np.int64)
    alive = np.ones(len(cloud), dtype=bool)
    alive[dead] = False
    weights = np.where(alive, grads_accum, 0.0)
    total = weights.sum()
    if total <= 0:
        return cloud, np.zeros(0, dtype=np.int64)
    donors = rng.choice(len(cloud), size=len(dead), p=weights / total)

    out = cloud.copy()
    scale = np.exp(cloud.log_scales[donors])
    jitter = rng.standard_normal((len(dead), 3)) * cfg.relocation_jitter * scale
    out.positions[dead] = cloud.positions[donors] + jitter
    out.rotations[dead] = cloud.rotations[donors]
    out.log_scales[dead] = cloud.log_scales[donors]
    out.dc[dead] = cloud.dc[donors]

    alpha_donor = np.clip(sigmoid(cloud.logit_opacities[donors]), 1e-6, 1 - 1e-6)
    shared = np.clip(1.0 - np.sqrt(1.0 - alpha_donor), 1e-6, 1 - 1e-6)
    new_logit = np.log(shared / (1.0 - shared))
    out.logit_opacities[dead] = new_logit
    out.logit_opacities[donors] = new_logit
    return out, np.unique(np.concatenate([dead, donors]))


def pretune(cloud: SplatCloud, panorama_target: np.ndarray, schedule: SupervisionSchedule,
            cfg: OptimConfig = OptimConfig(), origin=(0.0, 0.0, 0.0)) -> OptimResult:
    """Panorama-supervised pretuning with interleaved disocclusion probes.

    Panorama steps optimize the equirect render against the (upscaled)
    background panorama; random-view steps only render and record the
    disoccluded mask area, feeding later keyframe selection.
    """
    target = np.asarray(panorama_target, dtype=np.float64)
    opt = SplatOptimizer(cloud, cfg, seed=schedule.seed)
    history, stats = [], []
    opt.snapshot()
    for it, tag in schedule.tags():
        if it % cfg.checkpoint_every == 0 and it > 0:
            opt.snapshot()
        if tag == PANORAMA:
            loss, grads = equirect_loss_and_gradients(
                opt.cloud, target, origin=origin, loss_weights=cfg.loss_weights,
                backend=cfg.backend)
            if not np.isfinite(loss):
                if not opt.recover_divergence():
                    raise DomainError("pretune diverged after 3 rate halvings")
                log.warning("pretune: non-finite loss at iteration %d, rates halved", it)
                continue
            opt.apply(grads)
            history.append((it, loss))
        else:
            cam = opt.sample_view(schedule.sampler)
            out = render_perspective(opt.cloud, cam, backend=cfg.backend)
            mask = compute_inpaint_mask(1.0 - out.transmittance)
            stats.append((it, int(mask.area())))
        opt.maybe_densify(it + 1)
    return OptimResult(opt.cloud, history, stats, opt.rate_halvings)


def multiview_finetune(cloud: SplatCloud, panorama_target: np.ndarray, inpainted_keyframes,
                       schedule: SupervisionSchedule, cfg: OptimConfig = OptimConfig(),
                       sds_port=None, origin=(0.0, 0.0, 0.0), strict_ports: bool = False) -> OptimResult:
    """Consolidation pass mixing panorama, masked inpainted-view, and
    distillation supervision (deterministic 25/25/50 cycle).

    Inpainted supervision is restricted to each keyframe's mask region.
    Distillation steps render a random view near an inpainted keyframe, ask
    the port for a per-pixel image-space gradient and push it through the
    renderer's backward pass; an all-zero response is a no-op step.
    """
    target = np.asarray(panorama_target, dtype=np.float64)
    keyframes = list(inpainted_keyframes)
    opt = SplatOptimizer(cloud, cfg, seed=schedule.seed)
    history, stats = [], []
    opt.snapshot()
    kf_cursor = 0
    for it, tag in schedule.tags():
        if it % cfg.checkpoint_every == 0 and it > 0:
            opt.snapshot()
        if tag == PANORAMA:
            loss, grads = equirect_loss_and_gradients(
                opt.cloud, target, origin=origin, loss_weights=cfg.loss_weights,
                backend=cfg.backend)
            if not np.isfinite(loss):
                if not opt.recover_divergence():
                    raise DomainError("finetune diverged after 3 rate halvings")
                continue
            opt.apply(grads)
            history.append((it, loss))
        elif tag == INPAINTED:
            if not keyframes:
                continue
            cam, image, mask = keyframes[kf_cursor % len(keyframes)]
            kf_cursor += 1
            loss, grads = render_with_gradients(
                opt.cloud, cam, image, loss_weights=cfg.loss_weights,
                pixel_weight=mask.data.astype(np.float64), backend=cfg.backend)
            if not np.isfinite(loss):
                if not opt.recover_divergence():
                    raise DomainError("finetune diverged after 3 rate halvings")
                continue
            opt.apply(grads)
            history.append((it, loss))
        elif tag == SDS_VIEW:
            cam = _view_near_keyframes(opt, keyframes, schedule.sampler)
            if cam is None:
                continue
            out = render_perspective(opt.cloud, cam, backend=cfg.backend)
            try:
                grad_img = None if sds_port is None else sds_port(out.color, cam)
            except PortError:
                if strict_ports:
                    raise
                log.warning("distillation port failed at iteration %d, step skipped", it)
                continue
            if grad_img is None or not np.any(grad_img):
                continue
            _, grads = backprop_image_gradient(opt.cloud, cam, grad_img,
                                               backend=cfg.backend)
            opt.apply(grads)
        opt.maybe_densify(it + 1)
    return OptimResult(opt.cloud, history, stats, opt.rate_halvings)


def _view_near_keyframes(opt: SplatOptimizer, keyframes, sampler: ViewSamplerConfig):
    if not keyframes:
        return None
    base_cam = keyframes[opt.rng.integers(len(keyframes))][0]
    dists = np.linalg.norm(opt.cloud.positions, axis=1)
    jitter_r = 0.1 * sampler.offset_radius_factor * float(np.median(dists))
    v = opt.rng.standard_normal(3)
    v /= max(np.linalg.norm(v), 1e-12)
    pos = base_cam.t + v * jitter_r * opt.rng.uniform() ** (1 / 3)
    fwd = base_cam.R[:, 2]
    return PerspectiveCamera.looking_at(pos, fwd, sampler.fov_deg,
                                        sampler.width, sampler.height)


def save_checkpoint(cloud: SplatCloud, directory, iteration: int, cfg: OptimConfig,
                    loss_history) -> None:
    """PLY + JSON sidecar + loss CSV, the checkpoint interchange format."""
    from pathlib import Path

    from .ply import write_ply

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_ply(cloud, d / "cloud.ply")
    (d / "meta.json").write_text(json.dumps(
        {"iteration": iteration, "config_hash": cfg.config_hash()}, sort_keys=True))
    with open(d / "loss.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "loss"])
        writer.writerows(loss_history)
