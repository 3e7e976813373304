"""Co-registered HR/LR pair construction from a georeferenced tile grid.

Each HR tile is ``P x P`` pixels. Its 3x3 neighbourhood is assembled into a
``3P x 3P`` mosaic (missing neighbours are black), the central ``2P x 2P``
window is cut out and area-downsampled by two, giving a ``P x P`` LR context
image in which the HR tile occupies rows/cols ``[P/4, 3P/4)``.

World coordinates: ``origin_x/origin_y`` is a tile's north-west corner. Row
index grows southward, i.e. as world y decreases.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from . import netpbm
from .losses import DataError
from .tensor import DimensionError, UsageError

GRID_TOL = 1e-6


class ManifestError(DataError):
    pass


@dataclass
class TileDescriptor:
    tile_id: str
    image_path: str
    label_path: str | None
    origin_x: float
    origin_y: float
    gsd: float

    def load(self, root=None) -> "GeoTile":
        root = Path(root) if root is not None else Path(".")
        img = netpbm.read(root / self.image_path)
        if img.ndim != 3:
            raise DataError(f"tile {self.tile_id}: image is not RGB")
        labels = None
        if self.label_path is not None:
            labels = netpbm.read(root / self.label_path)
            if labels.shape != img.shape[:2]:
                raise DataError(f"tile {self.tile_id}: label map {labels.shape} does not match image {img.shape[:2]}")
        return GeoTile(self.tile_id, netpbm.to_unit(img), labels, self.origin_x, self.origin_y, self.gsd)


@dataclass
class GeoTile:
    tile_id: str
    image: np.ndarray
    labels: np.ndarray | None
    origin_x: float
    origin_y: float
    gsd: float

    @property
    def size(self) -> int:
        return self.image.shape[0]


@dataclass
class TilePair:
    hr: np.ndarray
    lr: np.ndarray
    labels: np.ndarray | None
    neighbor_presence: np.ndarray
    tile_id: str = ""


# ---------------------------------------------------------------------------
# manifest I/O
# ---------------------------------------------------------------------------


def parse_manifest(text: str) -> list[TileDescriptor]:
    tiles = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 6:
            raise ManifestError(f"line {lineno}: expected 6 tab-separated fields, got {len(fields)}")
        tid, img, lab, ox, oy, gsd = fields
        try:
            ox, oy, gsd = float(ox), float(oy), float(gsd)
        except ValueError as exc:
            raise ManifestError(f"line {lineno}: bad coordinate ({exc})") from exc
        if gsd <= 0:
            raise ManifestError(f"line {lineno}: gsd must be positive")
        tiles.append(TileDescriptor(tid, img, None if lab == "-" else lab, ox, oy, gsd))
    return tiles


def read_manifest(path) -> list[TileDescriptor]:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def format_manifest(tiles: Iterable[TileDescriptor]) -> str:
    rows = ["# tile_id\timage_path\tlabel_path\torigin_x\torigin_y\tgsd"]
    for t in tiles:
        rows.append("\t".join([
            t.tile_id, t.image_path, t.label_path or "-", repr(float(t.origin_x)), repr(float(t.origin_y)), repr(float(t.gsd)),
        ]))
    return "\n".join(rows) + "\n"


def write_manifest(tiles: Iterable[TileDescriptor], path) -> None:
    Path(path).write_text(format_manifest(tiles), encoding="utf-8")


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


class TileIndex:
    """Lookup of tiles by integer grid cell ``(row, col)``."""

    def __init__(self, tiles: Iterable, tile_size: int):
        self.tile_size = tile_size
        self.cells: dict[tuple, object] = {}
        for t in tiles:
            key = self.cell(t)
            if key in self.cells:
                raise DataError(f"tiles {self.cells[key].tile_id} and {t.tile_id} share grid cell {key}")
            self.cells[key] = t

    def cell(self, t) -> tuple:
        step = self.tile_size * t.gsd
        fx, fy = t.origin_x / step, -t.origin_y / step
        col, row = round(fx), round(fy)
        if abs(fx - col) > GRID_TOL or abs(fy - row) > GRID_TOL:
            raise DataError(f"tile {t.tile_id} origin ({t.origin_x}, {t.origin_y}) is not aligned to a {step} grid")
        return row, col

    def get(self, row: int, col: int):
        return self.cells.get((row, col))


def find_neighbors(center, index) -> list:
    """3x3 nested list; entry ``[di+1][dj+1]`` is the tile ``di`` rows south and ``dj`` cols east, or None."""
    if not isinstance(index, TileIndex):
        index = TileIndex(index, center.size)
    row, col = index.cell(center)
    return [[index.get(row + di, col + dj) for dj in (-1, 0, 1)] for di in (-1, 0, 1)]


def assemble_context(neigh: list) -> np.ndarray:
    """``3P x 3P x 3`` mosaic, north-west at top-left; absent neighbours are zeros."""
    center = neigh[1][1]
    if center is None:
        raise UsageError("the centre tile must be present")
    p = center.image.shape[0]
    mosaic = np.zeros((3 * p, 3 * p, center.image.shape[2]), dtype=center.image.dtype)
    for i in range(3):
        for j in range(3):
            t = neigh[i][j]
            if t is not None:
                if t.image.shape != center.image.shape:
                    raise DataError(f"tile {t.tile_id} size {t.image.shape} differs from centre {center.image.shape}")
                mosaic[i * p:(i + 1) * p, j * p:(j + 1) * p] = t.image
    return mosaic


def downsample_area2(x: np.ndarray) -> np.ndarray:
    """Mean of each 2x2 block."""
    h, w = x.shape[:2]
    if h % 2 or w % 2:
        raise DimensionError(f"area downsampling needs even dims, got {h}x{w}")
    y = x.reshape(h // 2, 2, w // 2, 2, *x.shape[2:])
    return (y[:, 0, :, 0] + y[:, 1, :, 0] + y[:, 0, :, 1] + y[:, 1, :, 1]) / 4


def context_window(mosaic: np.ndarray) -> np.ndarray:
    """Central ``2P x 2P`` window of a ``3P x 3P`` mosaic."""
    p = mosaic.shape[0] // 3
    if p % 2:
        raise DimensionError(f"tile size {p} must be even")
    lo, hi = p // 2, 5 * p // 2
    return mosaic[lo:hi, lo:hi]


def make_pair(center: GeoTile, index) -> TilePair:
    neigh = find_neighbors(center, index)
    presence = np.array([[t is not None for t in row] for row in neigh])
    lr = downsample_area2(context_window(assemble_context(neigh)))
    return TilePair(center.image, lr.astype(center.image.dtype), center.labels, presence, center.tile_id)


class TileDataset:
    """All tiles of a manifest loaded in memory, with pairs built on demand."""

    def __init__(self, tiles: list[GeoTile]):
        if not tiles:
            raise DataError("empty tile set")
        self.tiles = tiles
        self.index = TileIndex(tiles, tiles[0].size)

    @classmethod
    def from_manifest(cls, path) -> "TileDataset":
        path = Path(path)
        descs = read_manifest(path)
        tiles = []
        for d in descs:
            try:
                tiles.append(d.load(path.parent))
            except (OSError, netpbm.NetpbmError) as exc:
                raise DataError(f"tile {d.tile_id}: {exc}") from exc
        return cls(tiles)

    def __len__(self) -> int:
        return len(self.tiles)

    def pair(self, i: int) -> TilePair:
        return make_pair(self.tiles[i], self.index)

    def pairs(self) -> list[TilePair]:
        return [self.pair(i) for i in range(len(self))]


def save_tiles(tiles: list[GeoTile], root, manifest_name: str = "manifest.tsv") -> Path:
    """Write tiles as PPM/PGM files plus a manifest; returns the manifest path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    descs = []
    for t in tiles:
        img_name = f"{t.tile_id}.ppm"
        netpbm.write_ppm(root / img_name, netpbm.from_unit(t.image))
        lab_name = None
        if t.labels is not None:
            lab_name = f"{t.tile_id}_label.pgm"
            netpbm.write_pgm(root / lab_name, np.asarray(t.labels, dtype=np.uint8))
        descs.append(TileDescriptor(t.tile_id, img_name, lab_name, t.origin_x, t.origin_y, t.gsd))
    out = root / manifest_name
    write_manifest(descs, out)
    return out
