"""Image pyramids and the inter-layer / intra-layer tile groups built on them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import AlignmentError, GeometryError, ParameterError
from .raster import FracRect, TileCoord, downsample_area, sample_bilinear, as_grid

_ROUNDTRIP_TOL = 1e-9


@dataclass(frozen=True)
class PyramidSpec:
    rates: tuple[int, ...] = (1, 5, 25)
    tile: int = 512

    def __post_init__(self):
        rates = tuple(int(r) for r in self.rates)
        object.__setattr__(self, "rates", rates)
        if not rates or rates[0] != 1:
            raise ParameterError(f"first pyramid rate must be 1, got {rates}")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ParameterError(f"pyramid rates must be strictly increasing, got {rates}")
        if self.tile < 1:
            raise ParameterError(f"tile must be >= 1, got {self.tile}")

    @property
    def n_layers(self) -> int:
        return len(self.rates)

    def layer_sides(self, height: int, width: int | None = None) -> list[tuple[int, int]]:
        """Per-layer ``(height, width)``; raises unless every layer tiles exactly."""
        width = height if width is None else width
        sides = []
        for k, rate in enumerate(self.rates, start=1):
            dims = []
            for axis, n in (("height", height), ("width", width)):
                if n % rate:
                    raise AlignmentError(
                        f"layer {k}: image {axis} {n} is not divisible by rate {rate} "
                        f"({n / rate:g})")
                side = n // rate
                if side < self.tile or side % self.tile:
                    raise AlignmentError(
                        f"layer {k}: {axis} {side} is not a multiple of tile {self.tile}")
                dims.append(side)
            sides.append(tuple(dims))
        return sides

    def validate(self, height: int, width: int | None = None) -> None:
        self.layer_sides(height, width)


def build_pyramid(image, spec: PyramidSpec) -> list[np.ndarray]:
    """Layer ``k`` is the image area-downsampled by ``spec.rates[k]``."""
    image = as_grid(image)
    spec.validate(image.shape[0], image.shape[1])
    return [image if r == 1 else downsample_area(image, r) for r in spec.rates]


@dataclass(frozen=True)
class InterLayerGroup:
    """A layer-1 anchor tile plus the tile covering it on every coarser layer.

    ``footprints[k]`` is the anchor's ground extent in the local pixel frame of
    ``tiles[k]``; index 0 is the anchor itself.
    """
    tiles: tuple[TileCoord, ...]
    footprints: tuple[FracRect, ...]
    rates: tuple[int, ...]

    @property
    def x_1st(self) -> TileCoord:
        return self.tiles[0]

    @property
    def x_2nd(self) -> TileCoord:
        return self.tiles[1]

    @property
    def x_3rd(self) -> TileCoord:
        return self.tiles[2]

    @property
    def footprint_2(self) -> FracRect:
        return self.footprints[1]

    @property
    def footprint_3(self) -> FracRect:
        return self.footprints[2]

    def to_original(self, k: int) -> FracRect:
        """Footprint ``k`` mapped back into layer-1 pixel coordinates."""
        t, fp, r = self.tiles[k], self.footprints[k], self.rates[k]
        return FracRect((t.row0 + fp.top) * r, (t.col0 + fp.left) * r,
                        fp.height * r, fp.width * r)


def _containing(start: float, length: float, tile: int, n_tiles: int, what: str) -> tuple[int, float]:
    idx = math.floor(start / tile)
    local = start - idx * tile
    if idx < 0 or idx >= n_tiles or local + length > tile + _ROUNDTRIP_TOL:
        raise GeometryError(f"{what} footprint [{start}, {start + length}) straddles tiles")
    return idx, local


def inter_group_for(anchor: TileCoord, spec: PyramidSpec, image_side: int | tuple[int, int]) -> InterLayerGroup:
    if isinstance(image_side, tuple):
        height, width = image_side
    else:
        height = width = image_side
    sides = spec.layer_sides(height, width)
    if anchor.size != spec.tile:
        raise GeometryError(f"anchor size {anchor.size} differs from tile {spec.tile}")
    if (anchor.row0 < 0 or anchor.col0 < 0 or anchor.row0 + anchor.size > height
            or anchor.col0 + anchor.size > width):
        raise GeometryError(f"anchor {tuple(anchor)} lies outside a {height}x{width} image")
    tiles, footprints = [anchor], [FracRect(0, 0, anchor.size, anchor.size)]
    for k, rate in enumerate(spec.rates[1:], start=2):
        lh, lw = sides[k - 1]
        size = anchor.size / rate
        ri, top = _containing(anchor.row0 / rate, size, spec.tile, lh // spec.tile, f"layer {k} row")
        ci, left = _containing(anchor.col0 / rate, size, spec.tile, lw // spec.tile, f"layer {k} column")
        tiles.append(TileCoord(ri * spec.tile, ci * spec.tile, spec.tile))
        footprints.append(FracRect(top, left, size, size))
    return InterLayerGroup(tuple(tiles), tuple(footprints), spec.rates)


def extract_group_views(group: InterLayerGroup, pyramid: list[np.ndarray], tile: int | None = None) -> list[np.ndarray]:
    """Model inputs for a group: the anchor tile, then each full coarser-layer tile."""
    views = []
    for t, layer in zip(group.tiles, pyramid):
        if tile is not None and t.size != tile:
            raise GeometryError(f"group tile size {t.size} differs from {tile}")
        if t.row0 + t.size > layer.shape[0] or t.col0 + t.size > layer.shape[1]:
            raise GeometryError(f"tile {tuple(t)} lies outside layer of shape {layer.shape[:2]}")
        views.append(layer[t.slices])
    return views


def align_confidence(conf, footprint: FracRect, out: int) -> np.ndarray:
    """Upsample the anchor footprint of a coarse-layer confidence map to ``out``²."""
    conf = np.asarray(conf, dtype=np.float64)
    return sample_bilinear(conf, footprint, out)


@dataclass(frozen=True)
class IntraLayerGroup:
    """Four overlapping layer-1 tiles in a 2x2 arrangement.

    Tile order is (0,0), (0,s), (s,0), (s,s) relative to the anchor.
    ``pairs`` holds ``(i, j, rect_in_i, rect_in_j)`` for every ``i < j``
    (0-based), the rectangles being the shared overlap in each tile's frame.
    """
    tiles: tuple[TileCoord, ...]
    pairs: tuple[tuple[int, int, FracRect, FracRect], ...]
    stride: int = field(default=0)

    @property
    def region(self) -> TileCoord:
        t = self.tiles[0]
        return TileCoord(t.row0, t.col0, t.size + self.stride)

    def overlap_global(self, i: int, j: int, frame: int) -> FracRect:
        for a, b, ri, rj in self.pairs:
            if (a, b) == (i, j):
                t = self.tiles[i if frame == i else j]
                rect = ri if frame == i else rj
                return rect.shifted(t.row0, t.col0)
        raise KeyError((i, j))


def _intersect(a: TileCoord, b: TileCoord) -> tuple[int, int, int, int]:
    top, left = max(a.row0, b.row0), max(a.col0, b.col0)
    bottom = min(a.row0 + a.size, b.row0 + b.size)
    right = min(a.col0 + a.size, b.col0 + b.size)
    return top, left, bottom - top, right - left


def intra_group_sample(image_side: int | tuple[int, int], tile: int, anchor: tuple[int, int],
                       overlap_stride: int | None = None) -> IntraLayerGroup:
    if isinstance(image_side, tuple):
        height, width = image_side
    else:
        height = width = image_side
    s = tile // 2 if overlap_stride is None else overlap_stride
    r0, c0 = anchor
    if not 0 < s < tile:
        raise GeometryError(f"overlap stride must satisfy 0 < s < tile, got s={s}, tile={tile}")
    if r0 < 0 or c0 < 0 or r0 + s + tile > height or c0 + s + tile > width:
        raise GeometryError(
            f"intra group at {anchor} with stride {s} and tile {tile} exceeds a {height}x{width} image")
    tiles = tuple(TileCoord(r0 + dr, c0 + dc, tile) for dr, dc in ((0, 0), (0, s), (s, 0), (s, s)))
    pairs = []
    for i, j in combinations(range(4), 2):
        top, left, h, w = _intersect(tiles[i], tiles[j])
        if h <= 0 or w <= 0:
            raise GeometryError(f"tiles {i + 1} and {j + 1} do not overlap")
        pairs.append((i, j,
                      FracRect(top - tiles[i].row0, left - tiles[i].col0, h, w),
                      FracRect(top - tiles[j].row0, left - tiles[j].col0, h, w)))
    return IntraLayerGroup(tiles, tuple(pairs), s)


def intra_anchors(image_side: int | tuple[int, int], tile: int, overlap_stride: int | None = None) -> list[tuple[int, int]]:
    """Regular lattice (spacing ``tile``) of valid intra-group anchors."""
    if isinstance(image_side, tuple):
        height, width = image_side
    else:
        height = width = image_side
    s = tile // 2 if overlap_stride is None else overlap_stride
    return [(r, c)
            for r in range(0, height - tile - s + 1, tile)
            for c in range(0, width - tile - s + 1, tile)]
