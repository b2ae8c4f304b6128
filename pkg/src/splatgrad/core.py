"""Shared value types and the orientation/scale covariance kernels.

Everything downstream (projection, rasterization, gradients) builds on the
types here. All math is in 64-bit floats. Quaternions are stored in
(w, x, y, z) order and may be unnormalized; they are normalized on use so
optimizer steps need no constraint handling.
"""

from dataclasses import dataclass

import numpy as np

QUAT_NORM_EPS = 1e-12


def _as_f64(value, shape, name):
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    return arr


@dataclass
class Gaussian3D:
    """One splat: position, per-axis extent, orientation, opacity and color.

    Fields are kept as plain arrays so tests and the optimizer can poke
    individual coordinates. Use validate() at trust boundaries; the math
    paths deliberately do not re-validate per call.
    """

    mean: np.ndarray
    scale: np.ndarray
    quat: np.ndarray
    opacity: float
    color: np.ndarray

    def __post_init__(self):
        self.mean = _as_f64(self.mean, (3,), "mean")
        self.scale = _as_f64(self.scale, (3,), "scale")
        self.quat = _as_f64(self.quat, (4,), "quat")
        self.opacity = float(self.opacity)
        self.color = _as_f64(self.color, (3,), "color")

    def validate(self):
        """Raise ValueError when a field is outside its documented domain."""
        if not np.all(np.isfinite(self.mean)):
            raise ValueError("mean must be finite")
        if not np.all(np.isfinite(self.scale)) or np.any(self.scale <= 0.0):
            raise ValueError("scale components must be positive")
        if np.sqrt(np.dot(self.quat, self.quat)) <= QUAT_NORM_EPS:
            raise ValueError("quat norm is too small")
        if not 0.0 <= self.opacity <= 1.0:
            raise ValueError("opacity must lie in [0, 1]")
        if np.any(self.color < 0.0) or np.any(self.color > 1.0):
            raise ValueError("color channels must lie in [0, 1]")


@dataclass
class Camera:
    """Pinhole camera: a rigid world-to-camera transform plus intrinsics.

    view is the 4x4 world-to-camera matrix. fx, fy, cx, cy are in pixels;
    near and far are positive clip depths in world units.
    """

    view: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self):
        self.view = _as_f64(self.view, (4, 4), "view")
        self.fx = float(self.fx)
        self.fy = float(self.fy)
        self.cx = float(self.cx)
        self.cy = float(self.cy)
        self.width = int(self.width)
        self.height = int(self.height)
        self.near = float(self.near)
        self.far = float(self.far)

    @property
    def rotation(self):
        """The 3x3 rotation block of the view matrix."""
        return self.view[:3, :3]

    @property
    def translation(self):
        return self.view[:3, 3]

    def projection_matrix(self):
        """Perspective matrix taking camera space to clip space.

        Focal lengths are rescaled by the image size so the visible frustum
        maps x and y into [-1, 1]; the third row encodes the near/far depth
        remap and the last row copies z into the homogeneous slot.
        """
        n, f = self.near, self.far
        p = np.zeros((4, 4))
        p[0, 0] = 2.0 * self.fx / self.width
        p[1, 1] = 2.0 * self.fy / self.height
        p[2, 2] = (f + n) / (f - n)
        p[2, 3] = -2.0 * f * n / (f - n)
        p[3, 2] = 1.0
        return p

    def validate(self):
        """Raise ValueError unless the camera is rigid and well-formed."""
        if not np.all(np.isfinite(self.view)):
            raise ValueError("view must be finite")
        r = self.rotation
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-9:
            raise ValueError("view rotation block must be orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("view rotation block must have determinant +1")
        if np.max(np.abs(self.view[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > 1e-12:
            raise ValueError("view bottom row must be [0, 0, 0, 1]")
        if not 0.0 < self.near < self.far:
            raise ValueError("clip planes must satisfy 0 < near < far")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be at least 1 pixel")
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")


@dataclass
class Cov3DBundle:
    """World-space covariance with the factors the backward pass reuses.

    R is the rotation from the quaternion, S the diagonal scale matrix,
    M their product, and sigma = M M^T the covariance itself.
    """

    R: np.ndarray
    S: np.ndarray
    M: np.ndarray
    sigma: np.ndarray


def quat_to_rotmat(quat):
    """Rotation matrix for a quaternion given in (w, x, y, z) order.

    The input is normalized first, so any positive rescaling of the same
    quaternion produces the identical matrix.

    Args:
        quat: length-4 array-like with nonzero norm.

    Returns:
        3x3 orthonormal matrix with determinant +1.
    """
    q = np.asarray(quat, dtype=np.float64)
    if q.shape != (4,):
        raise ValueError(f"quat must have shape (4,), got {q.shape}")
    norm = np.sqrt(np.dot(q, q))
    if norm <= QUAT_NORM_EPS:
        raise ValueError("quaternion norm is too small to define an orientation")
    w, x, y, z = q / norm
    return np.array(
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    )


def compose_covariance_3d(quat, scale):
    """Build the world-space covariance of a splat from orientation and scale.

    The covariance factors as M M^T with M = R diag(scale), which keeps it
    symmetric positive semi-definite for any inputs.

    Args:
        quat: length-4 orientation, (w, x, y, z), nonzero norm.
        scale: length-3 per-axis extents, strictly positive.

    Returns:
        Cov3DBundle holding R, S, M and sigma.
    """
    s = np.asarray(scale, dtype=np.float64)
    if s.shape != (3,):
        raise ValueError(f"scale must have shape (3,), got {s.shape}")
    if np.any(s <= 0.0):
        raise ValueError("scale components must be positive")
    rot = quat_to_rotmat(quat)
    smat = np.diag(s)
    m = rot @ smat
    return Cov3DBundle(R=rot, S=smat, M=m, sigma=m @ m.T)


def frobenius_inner(x, y):
    """Matrix dot product: the sum of elementwise products, Tr(X^T Y)."""
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sum(a * b))
