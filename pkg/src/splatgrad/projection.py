"""Perspective projection of 3D splats onto the image plane.

The camera-space mean goes through the perspective matrix to pixel
coordinates. The covariance is mapped by the Jacobian of that projection
(a first-order approximation) and then inflated by a small diagonal
dilation so the 2x2 result stays invertible even for sub-pixel splats.
"""

from dataclasses import dataclass

import numpy as np

from .core import Camera, Gaussian3D, compose_covariance_3d

# Added to both diagonal entries of the projected covariance. Keeps the
# footprint at least about one pixel wide and its determinant positive.
DILATION = 0.3


@dataclass
class ProjectedGaussian:
    """Per-view footprint of one splat.

    radius is a conservative integer half-width in pixels covering the
    3-sigma extent of cov2d; depth is the camera-space z used as sort key.
    """

    t_cam: np.ndarray
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    radius: int
    source_index: int


def world_to_camera(mean, camera: Camera):
    """Map a world-space point to homogeneous camera space.

    Returns a 4-vector with last component 1 for any rigid view matrix.
    """
    q = np.array([mean[0], mean[1], mean[2], 1.0])
    return camera.view @ q


def camera_to_pixel(t_cam, camera: Camera):
    """Pixel coordinates of a camera-space point.

    Applies the perspective matrix, divides by the homogeneous component,
    and maps the [-1, 1] range onto the image with the principal point
    added in pixels.
    """
    t_prime = camera.projection_matrix() @ t_cam
    t_w = t_prime[3]
    if abs(t_w) < 1e-12:
        raise ValueError("degenerate projection: homogeneous component is ~0")
    return np.array(
        [
            (camera.width * t_prime[0] / t_w + 1.0) / 2.0 + camera.cx,
            (camera.height * t_prime[1] / t_w + 1.0) / 2.0 + camera.cy,
        ]
    )


def projection_jacobian(t_cam, camera: Camera):
    """Derivative of the camera-to-pixel map at t_cam, as a 2x3 matrix.

    Args:
        t_cam: homogeneous camera-space point with positive depth.
        camera: supplies the focal lengths.

    Returns:
        [[fx/tz, 0, -fx*tx/tz^2], [0, fy/tz, -fy*ty/tz^2]].
    """
    tx, ty, tz = t_cam[0], t_cam[1], t_cam[2]
    if tz <= 0.0:
        raise ValueError("point is behind the camera")
    return np.array(
        [
            [camera.fx / tz, 0.0, -camera.fx * tx / (tz * tz)],
            [0.0, camera.fy / tz, -camera.fy * ty / (tz * tz)],
        ]
    )


def project_covariance(J, R_cw, sigma):
    """Push a world covariance through the linearized projection.

    Computes J R_cw sigma R_cw^T J^T and adds the diagonal dilation. The
    backward pass treats the dilation as a constant, so gradients flow
    through this map unchanged.
    """
    t = J @ R_cw
    cov2d = t @ sigma @ t.T
    cov2d[0, 0] += DILATION
    cov2d[1, 1] += DILATION
    return cov2d


def bounding_radius(cov2d):
    """Integer pixel half-width covering the 3-sigma ellipse of cov2d.

    Uses the closed-form larger eigenvalue of the symmetric 2x2 matrix and
    rounds up, so the square [mean - r, mean + r] contains the whole
    ellipse on both axes.
    """
    a, b, c = cov2d[0, 0], cov2d[0, 1], cov2d[1, 1]
    det = a * c - b * b
    if not (det > 0.0 and a + c > 0.0):
        raise ValueError("2d covariance must be positive definite")
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(0.25 * (a - c) * (a - c) + b * b)
    return int(np.ceil(3.0 * np.sqrt(lam_max)))


def project_gaussian(g: Gaussian3D, camera: Camera, source_index=0):
    """Run the full projection pipeline for one splat.

    Returns a ProjectedGaussian, or None when the splat is culled: depth
    outside (near, far), or a footprint that cannot touch any pixel.
    Culling is a normal outcome, not an error.
    """
    t_cam = world_to_camera(g.mean, camera)
    depth = float(t_cam[2])
    if depth <= camera.near or depth >= camera.far:
        return None
    bundle = compose_covariance_3d(g.quat, g.scale)
    jac = projection_jacobian(t_cam, camera)
    cov2d = project_covariance(jac, camera.rotation, bundle.sigma)
    mean2d = camera_to_pixel(t_cam, camera)
    radius = bounding_radius(cov2d)
    if (
        mean2d[0] + radius < 0.0
        or mean2d[0] - radius >= camera.width
        or mean2d[1] + radius < 0.0
        or mean2d[1] - radius >= camera.height
    ):
        return None
    return ProjectedGaussian(
        t_cam=t_cam,
        mean2d=mean2d,
        cov2d=cov2d,
        depth=depth,
        radius=radius,
        source_index=source_index,
    )
