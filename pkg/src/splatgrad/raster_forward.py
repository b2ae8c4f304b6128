"""Front-to-back alpha compositing of depth-sorted splats, tile by tile.

One vectorized kernel evaluates a splat against every pixel of a tile at
once; the per-pixel operations run the same kernel on a single pixel, so
both views of the math agree bitwise. The brute-force renderer reuses the
kernel with the tile bins replaced by the full globally sorted list, which
is what makes the tiled-versus-brute-force equivalence checks meaningful.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .binning import TileGrid, assign_tiles, sort_bins
from .core import Camera
from .projection import project_gaussian

# Contributions below one quantization step are skipped (and receive zero
# gradient); alpha is clamped below 1 so transmittance never hits exact 0.
ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.999
# Early termination: a pixel stops compositing once transmittance would
# drop below this.
T_MIN = 1e-4
# Per-pixel footprint cutoff on the exponent. Any pixel outside a splat's
# bounding square has sigma > 4.5 (the square covers the 3-sigma ellipse),
# so with this cutoff the set of contributing splats at a pixel does not
# depend on tile membership, and tiled and untiled rendering match exactly.
SIGMA_CUT = 4.5


@dataclass
class ImageBuffer:
    """Rendered pixels: channels has shape (height, width, 3), values in
    [0, 1] before quantization."""

    width: int
    height: int
    channels: np.ndarray


@dataclass
class RenderAux:
    """Per-pixel state saved by the forward pass for the backward pass.

    final_T is the transmittance left after the last composited splat.
    n_contrib is the number of bin entries processed up to and including
    the last splat that contributed; entries past it were skipped or cut
    off by early termination and get zero gradient.
    """

    final_T: np.ndarray
    n_contrib: np.ndarray


class PixelAux(NamedTuple):
    final_T: float
    n_contrib: int


@dataclass
class RenderResult:
    """Everything the backward pass consumes, bundled."""

    image: ImageBuffer
    aux: RenderAux
    grid: TileGrid
    projected: list
    background: np.ndarray


@dataclass
class _PackedSplats:
    """Per-splat scalars gathered out of the dataclasses once per pass."""

    mean_x: np.ndarray
    mean_y: np.ndarray
    inv_a: np.ndarray
    inv_b: np.ndarray
    inv_c: np.ndarray
    opacity: np.ndarray
    color: np.ndarray


def _cov2d_inverse_terms(cov2d):
    """Entries (A, B, C) of the symmetric 2x2 inverse [[A, B], [B, C]]."""
    a, b, c = cov2d[0, 0], cov2d[0, 1], cov2d[1, 1]
    det = a * c - b * b
    if not det > 0.0:
        raise ValueError("2d covariance is not invertible")
    return c / det, -b / det, a / det


def _pack_splats(projected, scene):
    n = len(projected)
    packed = _PackedSplats(
        mean_x=np.empty(n),
        mean_y=np.empty(n),
        inv_a=np.empty(n),
        inv_b=np.empty(n),
        inv_c=np.empty(n),
        opacity=np.empty(n),
        color=np.empty((n, 3)),
    )
    for j, p in enumerate(projected):
        packed.mean_x[j] = p.mean2d[0]
        packed.mean_y[j] = p.mean2d[1]
        packed.inv_a[j], packed.inv_b[j], packed.inv_c[j] = _cov2d_inverse_terms(p.cov2d)
        g = scene[p.source_index]
        packed.opacity[j] = g.opacity
        packed.color[j] = g.color
    return packed


def _composite_tile(xs, ys, order, packed, background, early_termination):
    """Composite the splats in `order` onto the pixel centers (xs, ys).

    Every operation is elementwise over the pixel axis, so the result at a
    pixel does not depend on which other pixels share the call.

    Returns (color (P, 3), final_T (P,), n_contrib (P,)).
    """
    n_px = xs.shape[0]
    color = np.zeros((n_px, 3))
    trans = np.ones(n_px)
    n_contrib = np.zeros(n_px, dtype=np.int64)
    done = np.zeros(n_px, dtype=bool)
    for pos, j in enumerate(order):
        dx = xs - packed.mean_x[j]
        dy = ys - packed.mean_y[j]
        sigma = (
            0.5 * (packed.inv_a[j] * dx * dx + packed.inv_c[j] * dy * dy)
            + packed.inv_b[j] * dx * dy
        )
        alpha = np.minimum(packed.opacity[j] * np.exp(-sigma), ALPHA_MAX)
        visible = (sigma <= SIGMA_CUT) & (alpha >= ALPHA_MIN) & ~done
        if not visible.any():
            continue
        next_trans = trans * (1.0 - alpha)
        if early_termination:
            stops = visible & (next_trans < T_MIN)
            done |= stops
            commit = visible & ~stops
        else:
            commit = visible
        weight = np.where(commit, alpha * trans, 0.0)
        color += weight[:, None] * packed.color[j]
        trans = np.where(commit, next_trans, trans)
        n_contrib = np.where(commit, pos + 1, n_contrib)
        if done.all():
            break
    color += background[None, :] * trans[:, None]
    return color, trans, n_contrib


def _iter_tiles(grid: TileGrid, width, height):
    """Yield (tile index, row slice, col slice, xs, ys) over the image.

    Pixel centers sit at integer + 0.5; edge tiles are clipped to the
    image rectangle.
    """
    ts = grid.tile_size
    for ty in range(grid.tiles_y):
        r0, r1 = ty * ts, min((ty + 1) * ts, height)
        for tx in range(grid.tiles_x):
            c0, c1 = tx * ts, min((tx + 1) * ts, width)
            cols = np.arange(c0, c1, dtype=np.float64) + 0.5
            rows = np.arange(r0, r1, dtype=np.float64) + 0.5
            xs = np.tile(cols, r1 - r0)
            ys = np.repeat(rows, c1 - c0)
            yield ty * grid.tiles_x + tx, slice(r0, r1), slice(c0, c1), xs, ys


def eval_alpha(g, opacity, pixel_center):
    """Evaluate one splat's opacity contribution at a pixel center.

    Args:
        g: ProjectedGaussian supplying mean2d and cov2d.
        opacity: the splat's opacity in [0, 1].
        pixel_center: length-2 pixel coordinates.

    Returns:
        (alpha, delta, sigma) where delta = pixel_center - mean2d and
        sigma is half the squared Mahalanobis distance. alpha is 0.0 when
        the contribution falls below ALPHA_MIN or past the SIGMA_CUT
        footprint cutoff, marking the splat as skipped at this pixel.
    """
    inv_a, inv_b, inv_c = _cov2d_inverse_terms(g.cov2d)
    dx = pixel_center[0] - g.mean2d[0]
    dy = pixel_center[1] - g.mean2d[1]
    sigma = 0.5 * (inv_a * dx * dx + inv_c * dy * dy) + inv_b * dx * dy
    alpha = np.minimum(opacity * np.exp(-sigma), ALPHA_MAX)
    if sigma > SIGMA_CUT or alpha < ALPHA_MIN:
        alpha = 0.0
    return float(alpha), np.array([dx, dy]), float(sigma)


def composite_pixel(sorted_bin, projected, scene, pixel_center, background,
                    early_termination=True):
    """Composite one pixel against its tile's depth-ordered splats.

    sorted_bin holds indices into `projected` in front-to-back order, and
    scene supplies opacity and color via each splat's source_index. Splats
    whose alpha falls below ALPHA_MIN are skipped without counting toward
    n_contrib; compositing stops once transmittance would drop below T_MIN
    (the stopping splat is not composited). The background, attenuated by
    the final transmittance, is added after the loop.

    Returns (color 3-vector, PixelAux(final_T, n_contrib)).
    """
    packed = _pack_splats(projected, scene)
    xs = np.array([float(pixel_center[0])])
    ys = np.array([float(pixel_center[1])])
    bg = np.asarray(background, dtype=np.float64)
    color, trans, n_contrib = _composite_tile(
        xs, ys, list(sorted_bin), packed, bg, early_termination
    )
    return color[0], PixelAux(float(trans[0]), int(n_contrib[0]))


def _render_with_grid(scene, camera, background, projected, grid, early_termination):
    packed = _pack_splats(projected, scene)
    h, w = camera.height, camera.width
    img = np.zeros((h, w, 3))
    final_t = np.ones((h, w))
    n_contrib = np.zeros((h, w), dtype=np.int64)
    for b, rows, cols, xs, ys in _iter_tiles(grid, w, h):
        color, trans, contrib = _composite_tile(
            xs, ys, grid.bins[b], packed, background, early_termination
        )
        nr = rows.stop - rows.start
        nc = cols.stop - cols.start
        img[rows, cols] = color.reshape(nr, nc, 3)
        final_t[rows, cols] = trans.reshape(nr, nc)
        n_contrib[rows, cols] = contrib.reshape(nr, nc)
    return RenderResult(
        image=ImageBuffer(width=w, height=h, channels=img),
        aux=RenderAux(final_T=final_t, n_contrib=n_contrib),
        grid=grid,
        projected=projected,
        background=background,
    )


def _project_scene(scene, camera):
    projected = []
    for idx, g in enumerate(scene):
        p = project_gaussian(g, camera, source_index=idx)
        if p is not None:
            projected.append(p)
    return projected


def render(scene, camera: Camera, background, *, early_termination=True):
    """Render a scene: project, bin, sort, then composite every pixel.

    Args:
        scene: list of Gaussian3D.
        camera: the viewpoint; not re-validated here.
        background: 3-vector composited behind the splats.
        early_termination: stop per-pixel compositing below T_MIN. Disable
            to compare renderers bitwise.

    Returns:
        RenderResult with the image and everything the backward pass needs.
    """
    background = np.asarray(background, dtype=np.float64)
    projected = _project_scene(scene, camera)
    grid = sort_bins(assign_tiles(projected, camera.width, camera.height), projected)
    return _render_with_grid(scene, camera, background, projected, grid, early_termination)


def render_brute_force(scene, camera: Camera, background, *, early_termination=True):
    """Reference renderer: every pixel composites against every splat.

    Identical to render() except that binning is bypassed: each tile's bin
    is the full list of non-culled splats in global front-to-back order.
    Any disagreement with render() therefore isolates a binning bug.
    """
    background = np.asarray(background, dtype=np.float64)
    projected = _project_scene(scene, camera)
    grid = assign_tiles(projected, camera.width, camera.height)
    order = sorted(
        range(len(projected)),
        key=lambda i: (projected[i].depth, projected[i].source_index),
    )
    grid = TileGrid(
        tile_size=grid.tile_size,
        tiles_x=grid.tiles_x,
        tiles_y=grid.tiles_y,
        bins=[list(order) for _ in grid.bins],
    )
    return _render_with_grid(scene, camera, background, projected, grid, early_termination)
