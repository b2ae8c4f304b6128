"""Shared scene builders and the independent reference compositor used
across the test modules."""

import numpy as np

from splatgrad import Camera, Gaussian3D, project_gaussian
from splatgrad.raster_forward import ALPHA_MAX, ALPHA_MIN, SIGMA_CUT, T_MIN


def frustum_camera(width, height, fx=None, near=0.1, far=100.0):
    """Identity-view pinhole camera with the principal point at the
    image center."""
    if fx is None:
        fx = float(max(width, height))
    return Camera(
        view=np.eye(4), fx=fx, fy=fx,
        cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
        width=width, height=height, near=near, far=far,
    )


def rotated_camera(rng, width, height):
    """Camera with a small random rotation and translation."""
    axis = rng.normal(size=3)
    axis = axis / np.linalg.norm(axis)
    angle = rng.uniform(0.05, 0.4)
    w = np.cos(angle / 2.0)
    v = np.sin(angle / 2.0) * axis
    q = np.array([w, v[0], v[1], v[2]])
    from splatgrad import quat_to_rotmat

    view = np.eye(4)
    view[:3, :3] = quat_to_rotmat(q)
    view[:3, 3] = rng.uniform(-0.2, 0.2, size=3)
    cam = frustum_camera(width, height)
    cam.view = view
    return cam


def frustum_scene(rng, n, camera, depth_range=(2.0, 8.0),
                  scale_px=(1.0, 3.0), opacity=(0.2, 0.95)):
    """Random splats backprojected onto the image so footprints land on
    visible pixels."""
    scene = []
    for _ in range(n):
        px = rng.uniform(1.0, camera.width - 1.0)
        py = rng.uniform(1.0, camera.height - 1.0)
        depth = rng.uniform(*depth_range)
        t_cam = np.array(
            [
                (px - 0.5 - camera.cx) * depth / camera.fx,
                (py - 0.5 - camera.cy) * depth / camera.fy,
                depth,
            ]
        )
        mean = camera.rotation.T @ (t_cam - camera.translation)
        scene.append(
            Gaussian3D(
                mean=mean,
                scale=rng.uniform(*scale_px, size=3) * depth / camera.fx,
                quat=rng.normal(size=4),
                opacity=rng.uniform(*opacity),
                color=rng.uniform(0.0, 1.0, size=3),
            )
        )
    return scene


def naive_render(scene, camera, background, early_termination=True):
    """Reference renderer: no tiles, one python loop per pixel.

    Projection reuses the library ops (each has its own oracle tests);
    everything after that point is written independently. Splats are
    sorted globally, the quadratic form goes through numpy's linear
    solver rather than a hand-inverted 2x2, and compositing walks every
    splat for every pixel. Agreement with render() is expected to ~1e-12,
    not bitwise, because the solver path rounds differently.
    """
    background = np.asarray(background, dtype=np.float64)
    projected = []
    for i, g in enumerate(scene):
        p = project_gaussian(g, camera, source_index=i)
        if p is not None:
            projected.append(p)
    projected.sort(key=lambda p: (p.depth, p.source_index))

    image = np.empty((camera.height, camera.width, 3))
    final_t = np.empty((camera.height, camera.width))
    for row in range(camera.height):
        for col in range(camera.width):
            center = np.array([col + 0.5, row + 0.5])
            color = np.zeros(3)
            trans = 1.0
            for p in projected:
                delta = center - p.mean2d
                sigma = 0.5 * float(delta @ np.linalg.solve(p.cov2d, delta))
                if sigma > SIGMA_CUT:
                    continue
                alpha = min(
                    scene[p.source_index].opacity * float(np.exp(-sigma)),
                    ALPHA_MAX,
                )
                if alpha < ALPHA_MIN:
                    continue
                next_trans = trans * (1.0 - alpha)
                if early_termination and next_trans < T_MIN:
                    break
                color = color + alpha * trans * scene[p.source_index].color
                trans = next_trans
            image[row, col] = color + background * trans
            final_t[row, col] = trans
    return image, final_t
