"""Image fitting: adjust a fixed set of splats until their rendering
matches a target, using adaptive moment estimation on reparameterized
coordinates (log for scale, logit for opacity) so hard constraints never
need projection.
"""

from dataclasses import dataclass

import numpy as np

from .core import Camera, Gaussian3D
from .proj_backward import scene_backward
from .raster_forward import render


@dataclass
class FitConfig:
    """Knobs for fit(). Learning rates are per parameter class; scale and
    opacity rates apply in log and logit space respectively."""

    n_gaussians: int = 100
    iterations: int = 1000
    lr_mean: float = 2e-3
    lr_scale: float = 5e-3
    lr_quat: float = 2e-3
    lr_opacity: float = 2e-2
    lr_color: float = 1e-2
    seed: int = 0
    background: tuple = (0.0, 0.0, 0.0)
    loss: str = "l2"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_random(config: FitConfig, camera: Camera, target):
    """Seeded starting scene for a fit.

    Splats are backprojected from uniformly drawn pixels at depths in a
    band past the near plane, sized so their footprints roughly tile the
    image area, colored from the target pixel under their center, and
    given opacity 0.5.
    """
    rng = np.random.default_rng(config.seed)
    target = np.asarray(target, dtype=np.float64)
    depth_lo = camera.near + 2.0
    depth_hi = min(camera.far, depth_lo + 4.0)
    n = config.n_gaussians
    if n > 0:
        sigma_px = 0.5 * np.sqrt(camera.width * camera.height / n / np.pi)
    scene = []
    for _ in range(n):
        px = rng.uniform(0.0, camera.width)
        py = rng.uniform(0.0, camera.height)
        depth = rng.uniform(depth_lo, depth_hi)
        t_cam = np.array(
            [
                (px - 0.5 - camera.cx) * depth / camera.fx,
                (py - 0.5 - camera.cy) * depth / camera.fy,
                depth,
            ]
        )
        mean = camera.rotation.T @ (t_cam - camera.translation)
        row = min(camera.height - 1, max(0, int(py)))
        col = min(camera.width - 1, max(0, int(px)))
        scene.append(
            Gaussian3D(
                mean=mean,
                scale=np.full(3, sigma_px * depth / camera.fx),
                quat=np.array([1.0, 0.0, 0.0, 0.0]),
                opacity=0.5,
                color=target[row, col].copy(),
            )
        )
    return scene


@dataclass
class _AdamState:
    m: np.ndarray
    v: np.ndarray


def _adam_step(param, grad, state, lr, step, config):
    state.m = config.beta1 * state.m + (1.0 - config.beta1) * grad
    state.v = config.beta2 * state.v + (1.0 - config.beta2) * grad * grad
    m_hat = state.m / (1.0 - config.beta1 ** step)
    v_hat = state.v / (1.0 - config.beta2 ** step)
    return param - lr * m_hat / (np.sqrt(v_hat) + config.eps)


def _logit(p):
    return np.log(p) - np.log1p(-p)


def fit(target, camera: Camera, config: FitConfig, init=None):
    """Fit splats to a target image.

    Each iteration renders, forms the summed squared pixel error, runs the
    analytic backward pass, maps gradients into the optimization space
    (scale via d_log_s = s * d_s, opacity via the logit chain), and takes
    one adaptive-moment step per parameter class. Colors are clipped back
    to [0, 1] after each step.

    Args:
        target: (height, width, 3) array in [0, 1] matching the camera.
        camera: fixed viewpoint; its parameters are not optimized.
        config: FitConfig.
        init: optional starting scene; defaults to init_random(config, ...).
            Opacities must stay inside (0, 1) for the logit map.

    Returns:
        (scene, loss_history) with one loss value per iteration, measured
        before that iteration's update.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (camera.height, camera.width, 3):
        raise ValueError(
            f"target shape {target.shape} does not match camera "
            f"{(camera.height, camera.width, 3)}"
        )
    if config.loss.lower() != "l2":
        raise ValueError(f"unsupported loss {config.loss!r}")
    background = np.asarray(config.background, dtype=np.float64)

    scene = init_random(config, camera, target) if init is None else list(init)
    n = len(scene)
    means = np.array([g.mean for g in scene]).reshape(n, 3)
    log_scales = np.log(np.array([g.scale for g in scene]).reshape(n, 3))
    quats = np.array([g.quat for g in scene]).reshape(n, 4)
    logits = _logit(np.clip(np.array([g.opacity for g in scene]), 1e-4, 1.0 - 1e-4))
    colors = np.array([g.color for g in scene]).reshape(n, 3)

    adam = {
        name: _AdamState(np.zeros_like(p), np.zeros_like(p))
        for name, p in (
            ("mean", means), ("scale", log_scales), ("quat", quats),
            ("opacity", logits), ("color", colors),
        )
    }

    history = []
    for it in range(config.iterations):
        scales = np.exp(log_scales)
        opacities = 1.0 / (1.0 + np.exp(-logits))
        scene = [
            Gaussian3D(
                mean=means[i],
                scale=scales[i],
                quat=quats[i],
                opacity=opacities[i],
                color=colors[i],
            )
            for i in range(n)
        ]
        result = render(scene, camera, background)
        resid = result.image.channels - target
        loss = float(np.sum(resid * resid))
        if not np.isfinite(loss):
            raise FloatingPointError(f"loss diverged at iteration {it}")
        history.append(loss)

        grads = scene_backward(scene, camera, result, 2.0 * resid)
        step = it + 1
        means = _adam_step(means, grads.d_mean, adam["mean"],
                           config.lr_mean, step, config)
        log_scales = _adam_step(log_scales, grads.d_scale * scales, adam["scale"],
                                config.lr_scale, step, config)
        quats = _adam_step(quats, grads.d_quat, adam["quat"],
                           config.lr_quat, step, config)
        logits = _adam_step(logits,
                            grads.d_opacity * opacities * (1.0 - opacities),
                            adam["opacity"], config.lr_opacity, step, config)
        colors = _adam_step(colors, grads.d_color, adam["color"],
                            config.lr_color, step, config)
        colors = np.clip(colors, 0.0, 1.0)

    scales = np.exp(log_scales)
    opacities = 1.0 / (1.0 + np.exp(-logits))
    scene = [
        Gaussian3D(
            mean=means[i],
            scale=scales[i],
            quat=quats[i],
            opacity=opacities[i],
            color=colors[i],
        )
        for i in range(n)
    ]
    return scene, history
