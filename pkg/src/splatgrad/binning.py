"""Tile binning: map projected splats to the 16x16-pixel tiles their
bounding boxes may touch, then order each tile's list front to back."""

from dataclasses import dataclass

import numpy as np

TILE_SIZE = 16


@dataclass
class TileGrid:
    """Per-tile lists of indices into a projected-splat list.

    bins is row-major: the bin for tile (tx, ty) sits at ty * tiles_x + tx.
    """

    tile_size: int
    tiles_x: int
    tiles_y: int
    bins: list

    def bin_at(self, tx, ty):
        return self.bins[ty * self.tiles_x + tx]


def assign_tiles(projected, width, height):
    """Bin splats by bounding-box overlap; bins come back unsorted.

    A splat lands in every tile whose pixel rectangle intersects the closed
    square [mean2d - radius, mean2d + radius]. Tile rectangles are treated
    as half-open ([16*tx, 16*tx + 16) and likewise in y), which makes the
    floor arithmetic below exact at shared edges.
    """
    tiles_x = (width + TILE_SIZE - 1) // TILE_SIZE
    tiles_y = (height + TILE_SIZE - 1) // TILE_SIZE
    bins = [[] for _ in range(tiles_x * tiles_y)]
    for i, p in enumerate(projected):
        r = p.radius
        tx0 = max(0, int(np.floor((p.mean2d[0] - r) / TILE_SIZE)))
        tx1 = min(tiles_x - 1, int(np.floor((p.mean2d[0] + r) / TILE_SIZE)))
        ty0 = max(0, int(np.floor((p.mean2d[1] - r) / TILE_SIZE)))
        ty1 = min(tiles_y - 1, int(np.floor((p.mean2d[1] + r) / TILE_SIZE)))
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                bins[ty * tiles_x + tx].append(i)
    return TileGrid(tile_size=TILE_SIZE, tiles_x=tiles_x, tiles_y=tiles_y, bins=bins)


def sort_bins(grid: TileGrid, projected):
    """Front-to-back ordering per bin: depth ascending, ties by source index.

    The tie-break keeps the ordering fully deterministic, which both the
    compositing passes and the golden-image tests rely on.
    """
    def key(i):
        return (projected[i].depth, projected[i].source_index)

    bins = [sorted(b, key=key) for b in grid.bins]
    return TileGrid(
        tile_size=grid.tile_size,
        tiles_x=grid.tiles_x,
        tiles_y=grid.tiles_y,
        bins=bins,
    )
