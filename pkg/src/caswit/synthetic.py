"""Procedural fixtures: a context-dependent shape dataset and a constant-colour corpus.

Shape dataset classes: 0 background, 1 centred disk, 2 frame stripe,
3 corner square. Inside the HR tile a frame stripe and a corner square look
identical (a block in each corner); only the surroundings differ — stripe
blocks are the visible corners of a frame running around the tile just
outside its border, which only the LR context image can see. Scenes come in
twins that share the exact HR tile and differ only in that cue.
"""

from __future__ import annotations

import numpy as np

from .tiling import GeoTile, TileDataset

BACKGROUND, DISK, STRIPE, SQUARE = 0, 1, 2, 3
CUE_CLASSES = (STRIPE, SQUARE)

_COLORS = {
    "background": (0.35, 0.45, 0.30),
    "disk": (0.85, 0.30, 0.25),
    "block": (0.20, 0.30, 0.85),
}

GSD = 0.5
_WORLD_STRIDE = 4  # grid cells between scene centres, so neighbourhoods never overlap


def render_scene(p: int, radius: int, stripe: bool, block: int | None = None):
    """One ``3p x 3p`` canvas (image, labels); the centre tile is the labelled HR tile."""
    block = block or p // 4
    img = np.empty((3 * p, 3 * p, 3), dtype=np.float32)
    img[:] = _COLORS["background"]
    lab = np.full((3 * p, 3 * p), BACKGROUND, dtype=np.uint8)
    yy, xx = np.mgrid[0:3 * p, 0:3 * p]
    c = 1.5 * p - 0.5
    disk = (yy - c) ** 2 + (xx - c) ** 2 <= radius**2
    img[disk] = _COLORS["disk"]
    lab[disk] = DISK
    for top in (p, 2 * p - block):
        for left in (p, 2 * p - block):
            img[top:top + block, left:left + block] = _COLORS["block"]
            lab[top:top + block, left:left + block] = STRIPE if stripe else SQUARE
    if stripe:
        ring = np.zeros_like(disk)
        ring[p - block:2 * p + block, p - block:2 * p + block] = True
        ring[p:2 * p, p:2 * p] = False
        img[ring] = _COLORS["block"]
        lab[ring] = STRIPE
    return img, lab


def split_scene(img: np.ndarray, lab: np.ndarray, scene_id: str, row: int, col: int, p: int) -> list[GeoTile]:
    """Cut a canvas into 9 georeferenced tiles; only the centre keeps its labels."""
    tiles = []
    step = p * GSD
    for i in range(3):
        for j in range(3):
            centre = i == 1 and j == 1
            tid = scene_id if centre else f"{scene_id}_n{i}{j}"
            tiles.append(GeoTile(
                tid,
                img[i * p:(i + 1) * p, j * p:(j + 1) * p].copy(),
                lab[i * p:(i + 1) * p, j * p:(j + 1) * p].copy() if centre else None,
                (col + j - 1) * step,
                -(row + i - 1) * step,
                GSD,
            ))
    return tiles


def shape_tiles(n: int = 16, p: int = 64, seed: int = 0) -> list[GeoTile]:
    """``n`` labelled scenes (``n`` even) plus their unlabelled neighbours, as twins."""
    if n % 2:
        raise ValueError("the shape dataset is built from twins, n must be even")
    rng = np.random.default_rng(seed)
    tiles = []
    for k in range(n // 2):
        radius = int(rng.integers(p // 6, p // 4 + 1))
        for twin, stripe in enumerate((True, False)):
            idx = 2 * k + twin
            img, lab = render_scene(p, radius, stripe)
            tiles += split_scene(img, lab, f"scene{idx:03d}", idx * _WORLD_STRIDE, 0, p)
    return tiles


def shape_dataset(n: int = 16, p: int = 64, seed: int = 0) -> TileDataset:
    return TileDataset(shape_tiles(n, p, seed))


def constant_color_tiles(n: int = 8, p: int = 64, seed: int = 0) -> list[GeoTile]:
    """``n`` scenes, each one flat random colour over its whole 3x3 neighbourhood."""
    rng = np.random.default_rng(seed)
    tiles = []
    for k in range(n):
        img = np.empty((3 * p, 3 * p, 3), dtype=np.float32)
        img[:] = rng.uniform(0.05, 0.95, size=3).astype(np.float32)
        lab = np.zeros((3 * p, 3 * p), dtype=np.uint8)
        tiles += split_scene(img, lab, f"flat{k:03d}", k * _WORLD_STRIDE, 0, p)
    return tiles


def labelled_pairs(ds: TileDataset) -> list:
    return [ds.pair(i) for i, t in enumerate(ds.tiles) if t.labels is not None]
