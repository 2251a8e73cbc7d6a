"""Finite-difference validation of the analytic backward pass."""

import numpy as np
import pytest

from panosplat.cameras import PerspectiveCamera
from panosplat.render import equirect_loss_and_gradients, render_with_gradients
from panosplat.render.loss import photometric_loss
from tests.test_render import scene_cloud, single_splat

CAM32 = PerspectiveCamera.from_fov(60, 32, 32)
H = 1e-4


def param_arrays(cloud):
    return {
        "positions": cloud.positions,
        "log_scales": cloud.log_scales,
        "rotations": cloud.rotations,
        "logit_opacities": cloud.logit_opacities,
        "dc": cloud.dc,
    }


def grad_arrays(grads):
    return {
        "positions": grads.d_positions,
        "log_scales": grads.d_log_scales,
        "rotations": grads.d_rotations,
        "logit_opacities": grads.d_logit_opacities,
        "dc": grads.d_dc,
    }


def fd_check(cloud, loss_fn, grads, h=H, min_grad=1e-6, rel_tol=1e-3):
    """Central finite differences on every parameter; returns (checked, failed)."""
    checked = failed = 0
    ga = grad_arrays(grads)
    for name, arr in param_arrays(cloud).items():
        flat = arr.reshape(-1)
        gflat = ga[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp = loss_fn(cloud)
            flat[i] = old - h
            lm = loss_fn(cloud)
            flat[i] = old
            fd = (lp - lm) / (2 * h)
            ana = gflat[i]
            if max(abs(ana), abs(fd)) <= min_grad:
                continue
            checked += 1
            rel = abs(ana - fd) / max(abs(ana), abs(fd))
            if rel >= rel_tol:
                failed += 1
    return checked, failed


def test_l1_zero_at_target():
    cloud = single_splat(opacity_logit=1.5, z=4.0, sigma=0.5)
    from panosplat.render import render_perspective

    target = render_perspective(cloud, CAM32).raw_color
    loss, grads = render_with_gradients(cloud, CAM32, target, loss_weights=(1.0, 0.0))
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert grads.max_abs() < 1e-10


def test_single_gaussian_finite_difference():
    cloud = single_splat(opacity_logit=1.0, z=4.0, sigma=0.5, color=(0.7, 0.3, 0.5))
    cloud.rotations[:] = np.array([[0.8, 0.36, 0.3, 0.37]])
    cloud.rotations /= np.linalg.norm(cloud.rotations, axis=1, keepdims=True)
    cloud.log_scales[:] = [[-0.7, -1.1, -0.9]]
    rng = np.random.default_rng(0)
    target = rng.uniform(0, 1, (32, 32, 3))

    def loss_fn(c):
        return render_with_gradients(c, CAM32, target)[0]

    _, grads = render_with_gradients(cloud, CAM32, target)
    checked, failed = fd_check(cloud, loss_fn, grads)
    assert checked > 0
    assert failed == 0


def test_ten_gaussian_scene_95_percent():
    cloud = scene_cloud(10, seed=42, spread=0.9, depth_range=(3.5, 6.0),
                        sigma=(-1.2, -0.6), opacity=(-1.0, 1.8))
    rng = np.random.default_rng(1)
    target = rng.uniform(0, 1, (32, 32, 3))

    def loss_fn(c):
        return render_with_gradients(c, CAM32, target)[0]

    _, grads = render_with_gradients(cloud, CAM32, target)
    checked, failed = fd_check(cloud, loss_fn, grads)
    assert checked >= 50
    assert failed <= 0.05 * checked


def test_masked_loss_gradients():
    cloud = scene_cloud(4, seed=7, spread=0.6, sigma=(-1.0, -0.6), opacity=(0.0, 1.5))
    rng = np.random.default_rng(2)
    target = rng.uniform(0, 1, (32, 32, 3))
    weight = np.zeros((32, 32))
    weight[8:24, 10:28] = 1.0

    def loss_fn(c):
        return render_with_gradients(c, CAM32, target, pixel_weight=weight)[0]

    _, grads = render_with_gradients(cloud, CAM32, target, pixel_weight=weight)
    checked, failed = fd_check(cloud, loss_fn, grads)
    assert checked > 0
    assert failed <= 0.05 * max(checked, 1)


def test_equirect_gradients():
    cloud = scene_cloud(3, seed=11, spread=1.5, depth_range=(2.5, 4.0),
                        sigma=(-1.4, -1.0), opacity=(0.5, 1.5))
    rng = np.random.default_rng(3)
    target = rng.uniform(0, 1, (16, 32, 3))

    def loss_fn(c):
        return equirect_loss_and_gradients(c, target)[0]

    _, grads = equirect_loss_and_gradients(cloud, target)
    checked, failed = fd_check(cloud, loss_fn, grads)
    assert checked > 0
    assert failed <= 0.05 * max(checked, 1)


def test_photometric_loss_direct_fd():
    rng = np.random.default_rng(4)
    render = rng.uniform(0.2, 0.8, (24, 24, 3))
    target = rng.uniform(0, 1, (24, 24, 3))
    loss, grad = photometric_loss(render, target, 0.8, 0.2)
    h = 1e-5
    idx = [(3, 5, 0), (12, 12, 1), (20, 7, 2), (0, 0, 0), (23, 23, 2)]
    for (i, j, c) in idx:
        render[i, j, c] += h
        lp = photometric_loss(render, target, 0.8, 0.2)[0]
        render[i, j, c] -= 2 * h
        lm = photometric_loss(render, target, 0.8, 0.2)[0]
        render[i, j, c] += h
        fd = (lp - lm) / (2 * h)
        assert grad[i, j, c] == pytest.approx(fd, rel=1e-4, abs=1e-9)


def test_backends_gradient_agreement():
    cloud = scene_cloud(12, seed=17, spread=0.8, sigma=(-1.2, -0.7))
    rng = np.random.default_rng(5)
    target = rng.uniform(0, 1, (32, 32, 3))
    _, g_np = render_with_gradients(cloud, CAM32, target, backend="numpy")
    _, g_nb = render_with_gradients(cloud, CAM32, target, backend="numba")
    assert np.abs(g_np.d_positions - g_nb.d_positions).max() < 1e-9
    assert np.abs(g_np.d_rotations - g_nb.d_rotations).max() < 1e-9
    assert np.abs(g_np.d_dc - g_nb.d_dc).max() < 1e-9


def test_external_image_gradient_zero_is_noop():
    from panosplat.render import backprop_image_gradient

    cloud = scene_cloud(5, seed=19)
    _, grads = backprop_image_gradient(cloud, CAM32, np.zeros((32, 32, 3)))
    assert grads.max_abs() == 0.0
