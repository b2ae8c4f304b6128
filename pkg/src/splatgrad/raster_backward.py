"""Reverse-mode compositing.

Walks each pixel's splat list back to front, rebuilding the transmittance
sequence from its saved endpoint (T_before = T_after / (1 - alpha)) instead
of storing per-splat state, and pushes the pixel's loss gradient onto each
contributor's color, opacity, 2D mean and 2D covariance. Alpha and sigma
are recomputed with exactly the forward expressions, so skip decisions and
clamping replay identically.
"""

from dataclasses import dataclass

import numpy as np

from .raster_forward import (
    ALPHA_MAX,
    ALPHA_MIN,
    SIGMA_CUT,
    _iter_tiles,
    _pack_splats,
)


@dataclass
class Splat2DGrads:
    """Screen-space gradients, one row per scene gaussian.

    Rows of splats that contributed to no pixel stay zero. d_cov2d is
    symmetric by construction.
    """

    d_color: np.ndarray
    d_opacity: np.ndarray
    d_mean2d: np.ndarray
    d_cov2d: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(
            d_color=np.zeros((n, 3)),
            d_opacity=np.zeros(n),
            d_mean2d=np.zeros((n, 2)),
            d_cov2d=np.zeros((n, 2, 2)),
        )


def _backward_tile(xs, ys, order, packed, sources, background, final_t,
                   n_contrib, d_pixels, grads, t_log=None):
    """Accumulate screen-space gradients for one tile's pixels.

    final_t and n_contrib are the forward pass's per-pixel aux values for
    these pixels; d_pixels is the upstream gradient, shape (P, 3). When
    t_log is a list, (bin position, reconstructed T) snapshots are appended
    for diagnostics, with non-contributing pixels masked to NaN.
    """
    max_n = int(n_contrib.max()) if len(order) else 0
    trans = final_t.astype(np.float64, copy=True)
    suffix = background[None, :] * trans[:, None]
    for pos in range(max_n - 1, -1, -1):
        j = order[pos]
        active = n_contrib > pos
        dx = xs - packed.mean_x[j]
        dy = ys - packed.mean_y[j]
        sigma = (
            0.5 * (packed.inv_a[j] * dx * dx + packed.inv_c[j] * dy * dy)
            + packed.inv_b[j] * dx * dy
        )
        exp_neg = np.exp(-sigma)
        alpha_raw = packed.opacity[j] * exp_neg
        alpha = np.minimum(alpha_raw, ALPHA_MAX)
        contrib = active & (sigma <= SIGMA_CUT) & (alpha >= ALPHA_MIN)
        if not contrib.any():
            continue
        one_minus = 1.0 - alpha
        t_here = np.where(contrib, trans / one_minus, trans)
        if t_log is not None:
            t_log.append((pos, np.where(contrib, t_here, np.nan)))

        src = sources[j]
        weight = np.where(contrib, alpha * t_here, 0.0)
        grads.d_color[src] += np.sum(weight[:, None] * d_pixels, axis=0)

        # dC/dalpha per channel is c * T - suffix / (1 - alpha); splats
        # clamped at ALPHA_MAX keep their color gradient but have a flat
        # alpha, so the opacity/mean/covariance paths go dead there.
        d_alpha = np.sum(
            (packed.color[j][None, :] * t_here[:, None]
             - suffix / one_minus[:, None]) * d_pixels,
            axis=1,
        )
        live = contrib & (alpha_raw < ALPHA_MAX)
        grads.d_opacity[src] += np.sum(np.where(live, d_alpha * exp_neg, 0.0))
        d_sig = np.where(live, -alpha_raw * d_alpha, 0.0)

        y0 = packed.inv_a[j] * dx + packed.inv_b[j] * dy
        y1 = packed.inv_b[j] * dx + packed.inv_c[j] * dy
        grads.d_mean2d[src, 0] += np.sum(-d_sig * y0)
        grads.d_mean2d[src, 1] += np.sum(-d_sig * y1)
        c00 = np.sum(-0.5 * d_sig * y0 * y0)
        c01 = np.sum(-0.5 * d_sig * y0 * y1)
        c11 = np.sum(-0.5 * d_sig * y1 * y1)
        grads.d_cov2d[src, 0, 0] += c00
        grads.d_cov2d[src, 0, 1] += c01
        grads.d_cov2d[src, 1, 0] += c01
        grads.d_cov2d[src, 1, 1] += c11

        suffix = suffix + weight[:, None] * packed.color[j][None, :]
        trans = t_here


def composite_pixel_backward(sorted_bin, projected, scene, pixel_center,
                             background, aux_entry, d_pixel):
    """Gradients of one pixel's composited color, per scene gaussian.

    aux_entry must come from composite_pixel on identical inputs; the
    transmittance walk starts from its final_T and only the first
    n_contrib bin entries are revisited. Returns a Splat2DGrads with one
    row per gaussian in `scene`.
    """
    grads = Splat2DGrads.zeros(len(scene))
    packed = _pack_splats(projected, scene)
    sources = np.array([p.source_index for p in projected], dtype=np.int64)
    _backward_tile(
        xs=np.array([float(pixel_center[0])]),
        ys=np.array([float(pixel_center[1])]),
        order=list(sorted_bin),
        packed=packed,
        sources=sources,
        background=np.asarray(background, dtype=np.float64),
        final_t=np.array([aux_entry.final_T]),
        n_contrib=np.array([aux_entry.n_contrib], dtype=np.int64),
        d_pixels=np.asarray(d_pixel, dtype=np.float64).reshape(1, 3),
        grads=grads,
    )
    return grads


def transmittance_replay(sorted_bin, projected, scene, pixel_center,
                         background, aux_entry):
    """Transmittance values the backward pass reconstructs at one pixel.

    Returns (bin position, T) pairs in back-to-front order, one per splat
    that contributed in the forward pass. Exposed so the recurrence can be
    checked against independently recomputed forward values.
    """
    grads = Splat2DGrads.zeros(len(scene))
    packed = _pack_splats(projected, scene)
    sources = np.array([p.source_index for p in projected], dtype=np.int64)
    t_log = []
    _backward_tile(
        xs=np.array([float(pixel_center[0])]),
        ys=np.array([float(pixel_center[1])]),
        order=list(sorted_bin),
        packed=packed,
        sources=sources,
        background=np.asarray(background, dtype=np.float64),
        final_t=np.array([aux_entry.final_T]),
        n_contrib=np.array([aux_entry.n_contrib], dtype=np.int64),
        d_pixels=np.zeros((1, 3)),
        grads=grads,
        t_log=t_log,
    )
    return [(pos, float(t[0])) for pos, t in t_log if np.isfinite(t[0])]


def accumulate_image_backward(scene, result, d_image):
    """Sum per-pixel compositing gradients over the whole image.

    Args:
        scene: the gaussian list the render used.
        result: RenderResult from render() on identical inputs.
        d_image: upstream gradient, shape (height, width, 3).

    Returns:
        Splat2DGrads totals, one row per scene gaussian, accumulated tile
        by tile in a fixed order so repeated runs agree bitwise.
    """
    d_image = np.asarray(d_image, dtype=np.float64)
    h, w = result.image.height, result.image.width
    if d_image.shape != (h, w, 3):
        raise ValueError(
            f"d_image must have shape {(h, w, 3)}, got {d_image.shape}"
        )
    grads = Splat2DGrads.zeros(len(scene))
    packed = _pack_splats(result.projected, scene)
    sources = np.array(
        [p.source_index for p in result.projected], dtype=np.int64
    )
    for b, rows, cols, xs, ys in _iter_tiles(result.grid, w, h):
        order = result.grid.bins[b]
        if not order:
            continue
        _backward_tile(
            xs=xs,
            ys=ys,
            order=order,
            packed=packed,
            sources=sources,
            background=result.background,
            final_t=result.aux.final_T[rows, cols].ravel(),
            n_contrib=result.aux.n_contrib[rows, cols].ravel(),
            d_pixels=d_image[rows, cols].reshape(-1, 3),
            grads=grads,
        )
    return grads
