"""Backward pass through the projection: screen-space gradients become
gradients for the 3D mean, covariance factors (scale and quaternion), and
the camera's world-to-camera transform.

Matrix-valued chain rules are written with Frobenius contractions: for a
scalar loss, d<X> means the array of sensitivities dL/dX_ij, and the
gradient through a product is read off by pairing terms under Tr(A^T B).
"""

from dataclasses import dataclass

import numpy as np

from .core import (
    QUAT_NORM_EPS,
    Camera,
    Cov3DBundle,
    compose_covariance_3d,
    frobenius_inner,
)
from .projection import projection_jacobian
from .raster_backward import accumulate_image_backward


@dataclass
class SceneGradients:
    """Loss gradients for every optimizable quantity.

    Per-gaussian arrays are indexed like the scene list; d_view is the
    4x4 gradient of the world-to-camera matrix summed over all splats
    (its bottom row is structurally zero).
    """

    d_mean: np.ndarray
    d_scale: np.ndarray
    d_quat: np.ndarray
    d_opacity: np.ndarray
    d_color: np.ndarray
    d_view: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(
            d_mean=np.zeros((n, 3)),
            d_scale=np.zeros((n, 3)),
            d_quat=np.zeros((n, 4)),
            d_opacity=np.zeros(n),
            d_color=np.zeros((n, 3)),
            d_view=np.zeros((4, 4)),
        )


def mean2d_backward(d_mean2d, t_cam, camera: Camera):
    """Pull a pixel-coordinate gradient back to the camera-space point.

    Differentiates the pixel mapping through the perspective divide: with
    t' = P t, the x pixel coordinate is (width * t'_x / t'_w + 1) / 2 plus
    a constant, and likewise for y with the height.

    Returns dL/dt as a 4-vector.
    """
    proj = camera.projection_matrix()
    t_prime = proj @ t_cam
    t_w = t_prime[3]
    if abs(t_w) < 1e-12:
        raise ValueError("degenerate projection: homogeneous component is ~0")
    wdx = camera.width * d_mean2d[0]
    hdy = camera.height * d_mean2d[1]
    d_t_prime = np.array(
        [
            0.5 * wdx / t_w,
            0.5 * hdy / t_w,
            0.0,
            -0.5 * (wdx * t_prime[0] + hdy * t_prime[1]) / (t_w * t_w),
        ]
    )
    return proj.T @ d_t_prime


def _cov_transform_grad(d_cov2d, T_proj, sigma):
    # dL/dT for cov2d = T sigma T^T: G T sigma^T + G^T T sigma. Shared by
    # cov2d_backward (continuing to J and t) and scene_backward (continuing
    # to the view rotation block), so the two consumers cannot drift apart.
    g = np.asarray(d_cov2d, dtype=np.float64)
    return g @ T_proj @ sigma.T + g.T @ T_proj @ sigma


def cov2d_backward(d_cov2d, T_proj, sigma, J, R_cw, t_cam, camera: Camera):
    """Pull a 2D-covariance gradient back to the 3D covariance and point.

    T_proj must be the forward pass's J @ R_cw. The gradient reaches t_cam
    only through J's dependence on it; the diagonal dilation added in the
    forward pass is constant and drops out.

    Returns (d_sigma 3x3, d_t 4-vector).
    """
    g = np.asarray(d_cov2d, dtype=np.float64)
    d_sigma = T_proj.T @ g @ T_proj
    d_T = _cov_transform_grad(g, T_proj, sigma)
    d_J = d_T @ R_cw.T

    tx, ty, tz = t_cam[0], t_cam[1], t_cam[2]
    fx, fy = camera.fx, camera.fy
    tz2 = tz * tz
    tz3 = tz2 * tz
    # Contractions of d_J with dJ/dt_x, dJ/dt_y, dJ/dt_z; J does not
    # depend on the homogeneous component.
    d_t = np.array(
        [
            -fx / tz2 * d_J[0, 2],
            -fy / tz2 * d_J[1, 2],
            (
                -fx / tz2 * d_J[0, 0]
                + 2.0 * fx * tx / tz3 * d_J[0, 2]
                - fy / tz2 * d_J[1, 1]
                + 2.0 * fy * ty / tz3 * d_J[1, 2]
            ),
            0.0,
        ]
    )
    return d_sigma, d_t


def world_backward(d_t_total, camera: Camera, mean):
    """Distribute a camera-space point gradient to the world mean and view.

    t = view @ [mean, 1], so the view gradient is the outer product of
    d_t with the homogeneous point, and the mean feels d_t through the
    rotation block.

    Returns (d_mean 3-vector, d_view 4x4).
    """
    q = np.array([mean[0], mean[1], mean[2], 1.0])
    d_view = np.outer(d_t_total, q)
    d_mean = camera.rotation.T @ d_t_total[:3]
    return d_mean, d_view


def _rotmat_quat_jacobians(w, x, y, z):
    """Stacked dR/d(w, x, y, z) for a unit quaternion, shape (4, 3, 3)."""
    return 2.0 * np.array(
        [
            [[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]],
            [[0.0, y, z], [y, -2.0 * x, -w], [z, w, -2.0 * x]],
            [[-2.0 * y, x, w], [x, 0.0, z], [-w, z, -2.0 * y]],
            [[-2.0 * z, -w, x], [w, -2.0 * z, y], [x, y, 0.0]],
        ]
    )


def covariance3d_backward(d_sigma, bundle: Cov3DBundle, quat, scale):
    """Pull a world-covariance gradient back to scale and quaternion.

    Walks sigma = M M^T with M = R S: the scale gradient reads off the
    diagonal of R^T dM, and the quaternion gradient contracts dR with the
    rotation's per-component Jacobians, then goes through the
    normalization map q / |q| so it is valid for unnormalized storage.

    Returns (d_quat 4-vector in (w, x, y, z) order, d_scale 3-vector).
    """
    g = np.asarray(d_sigma, dtype=np.float64)
    d_M = g @ bundle.M + g.T @ bundle.M
    d_R = d_M @ bundle.S.T
    d_S = bundle.R.T @ d_M
    d_scale = np.diagonal(d_S).copy()

    q = np.asarray(quat, dtype=np.float64)
    norm = np.sqrt(np.dot(q, q))
    if norm <= QUAT_NORM_EPS:
        raise ValueError("quaternion norm is too small to define an orientation")
    q_hat = q / norm
    jacs = _rotmat_quat_jacobians(*q_hat)
    d_q_hat = np.array([frobenius_inner(d_R, jacs[k]) for k in range(4)])
    d_quat = (d_q_hat - q_hat * np.dot(q_hat, d_q_hat)) / norm
    return d_quat, d_scale


def scene_backward(scene, camera: Camera, result, d_image):
    """Full backward pass: image gradient to every scene parameter.

    Runs the compositing backward pass, then for each non-culled splat
    joins the two camera-point contributions (one through the projected
    mean, one through the projected covariance) and continues to the world
    mean, scale, quaternion and view matrix. Culled splats keep exactly
    zero gradients.

    Args:
        scene: list of Gaussian3D, as rendered.
        camera: the render's camera.
        result: RenderResult from render() on identical inputs.
        d_image: upstream gradient, shape (height, width, 3).

    Returns:
        SceneGradients.
    """
    splat = accumulate_image_backward(scene, result, d_image)
    grads = SceneGradients.zeros(len(scene))
    grads.d_color = splat.d_color
    grads.d_opacity = splat.d_opacity
    for p in result.projected:
        i = p.source_index
        g = scene[i]
        bundle = compose_covariance_3d(g.quat, g.scale)
        jac = projection_jacobian(p.t_cam, camera)
        t_proj = jac @ camera.rotation
        d_t_mean = mean2d_backward(splat.d_mean2d[i], p.t_cam, camera)
        d_sigma, d_t_cov = cov2d_backward(
            splat.d_cov2d[i], t_proj, bundle.sigma, jac, camera.rotation,
            p.t_cam, camera,
        )
        d_t = d_t_mean + d_t_cov
        d_mean, d_view = world_backward(d_t, camera, g.mean)
        d_quat, d_scale = covariance3d_backward(d_sigma, bundle, g.quat, g.scale)
        grads.d_mean[i] = d_mean
        grads.d_scale[i] = d_scale
        grads.d_quat[i] = d_quat
        grads.d_view += d_view
        # The view's rotation block also enters the covariance projection
        # directly through T_proj = J R_cw; the point-gradient outer
        # product in world_backward cannot see that path.
        d_T = _cov_transform_grad(splat.d_cov2d[i], t_proj, bundle.sigma)
        grads.d_view[:3, :3] += jac.T @ d_T
    return grads
