"""Grid primitives: tiling, area downsampling and bilinear footprint sampling.

Rasters are plain numpy arrays of shape ``(H, W)`` or ``(H, W, C)``.
Images are stored as float32 (or uint8 straight from disk); confidence maps
and everything that feeds a loss is float64.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import AlignmentError, GeometryError, ParameterError, ShapeError

EPS = 1e-7
_BOUNDS_TOL = 1e-9


class TileCoord(NamedTuple):
    row0: int
    col0: int
    size: int

    @property
    def slices(self) -> tuple[slice, slice]:
        return (slice(self.row0, self.row0 + self.size),
                slice(self.col0, self.col0 + self.size))


class FracRect(NamedTuple):
    """Axis-aligned rectangle in continuous pixel coordinates.

    Pixel ``k`` covers ``[k, k + 1)``, so an integer rectangle
    ``(top, left, h, w)`` covers exactly ``src[top:top+h, left:left+w]``.
    """
    top: float
    left: float
    height: float
    width: float

    def shifted(self, dy: float, dx: float) -> "FracRect":
        return FracRect(self.top + dy, self.left + dx, self.height, self.width)

    @property
    def slices(self) -> tuple[slice, slice]:
        vals = (self.top, self.left, self.height, self.width)
        if any(v != int(v) for v in vals):
            raise GeometryError(f"rectangle {tuple(self)} is not integer aligned")
        t, l, h, w = (int(v) for v in vals)
        return slice(t, t + h), slice(l, l + w)

    @property
    def area(self) -> float:
        return self.height * self.width


def as_grid(arr) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim not in (2, 3):
        raise ShapeError(f"expected a 2-D or 3-D raster, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1 or (arr.ndim == 3 and arr.shape[2] < 1):
        raise ShapeError(f"empty raster of shape {arr.shape}")
    return arr


def as_confidence(values) -> np.ndarray:
    """Return a float64 copy of ``values`` clamped to ``[EPS, 1 - EPS]``."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"confidence map must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError("confidence map contains non-finite values")
    return np.clip(arr, EPS, 1.0 - EPS)


def check_mask(mask) -> np.ndarray:
    """Validate a binary single-channel mask, returning it as uint8."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ShapeError(f"mask must be single-channel 2-D, got shape {mask.shape}")
    if not np.all((mask == 0) | (mask == 1)):
        raise ParameterError("mask values must be 0 or 1")
    return mask.astype(np.uint8, copy=False)


def tile_grid(height: int, width: int, tile: int, stride: int | None = None) -> list[TileCoord]:
    """All ``tile``-sized square tiles at ``stride`` spacing, row-major."""
    stride = tile if stride is None else stride
    if tile < 1 or stride < 1:
        raise ParameterError(f"tile and stride must be >= 1 (tile={tile}, stride={stride})")
    for axis, n in (("height", height), ("width", width)):
        if tile > n:
            raise AlignmentError(f"tile {tile} exceeds raster {axis} {n}")
        if (n - tile) % stride:
            raise AlignmentError(
                f"raster {axis} {n} minus tile {tile} is not divisible by stride {stride}")
    return [TileCoord(r, c, tile)
            for r in range(0, height - tile + 1, stride)
            for c in range(0, width - tile + 1, stride)]


def downsample_area(src, factor: int) -> np.ndarray:
    """Box-filter downsample by an integer ``factor`` (per-channel block means)."""
    src = as_grid(src)
    if factor < 1 or int(factor) != factor:
        raise ParameterError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    h, w = src.shape[:2]
    for axis, n in (("height", h), ("width", w)):
        if n % factor:
            raise AlignmentError(f"raster {axis} {n} is not divisible by factor {factor}")
    if factor == 1:
        return src.copy()
    out_dtype = np.float64 if src.dtype == np.float64 else np.float32
    rest = src.shape[2:]
    rows = src.reshape(h // factor, factor, w, *rest).sum(axis=1, dtype=np.float64)
    blocks = rows.reshape(h // factor, w // factor, factor, *rest).sum(axis=2)
    blocks /= factor * factor
    return blocks.astype(out_dtype, copy=False)


def _check_region(region: FracRect, shape: tuple[int, ...]) -> None:
    h, w = shape[:2]
    if region.height <= 0 or region.width <= 0:
        raise GeometryError(f"region {tuple(region)} has non-positive extent")
    if (region.top < -_BOUNDS_TOL or region.left < -_BOUNDS_TOL
            or region.top + region.height > h + _BOUNDS_TOL
            or region.left + region.width > w + _BOUNDS_TOL):
        raise GeometryError(f"region {tuple(region)} lies outside a {h}x{w} grid")


def _axis_taps(start: float, length: float, n_src: int, n_out: int):
    # Integer part kept apart so translating by whole pixels is bit-exact.
    base = math.floor(start)
    pos = (start - base) + (np.arange(n_out) + 0.5) * (length / n_out) - 0.5
    fl = np.floor(pos)
    t = pos - fl
    i0 = fl.astype(np.int64) + base
    i1 = np.clip(i0 + 1, 0, n_src - 1)
    i0 = np.clip(i0, 0, n_src - 1)
    return i0, i1, t


def sample_bilinear(src, region: FracRect, out_size: int) -> np.ndarray:
    """Resample ``region`` of ``src`` onto an ``out_size`` square grid.

    Output pixel centres are mapped affinely onto the region and read with
    bilinear interpolation; samples in the half-pixel border strip use the
    edge value. Returns float64.
    """
    src = as_grid(src)
    _check_region(region, src.shape)
    if out_size < 1:
        raise ParameterError(f"out_size must be >= 1, got {out_size}")
    src = np.asarray(src, dtype=np.float64)
    y0, y1, ty = _axis_taps(region.top, region.height, src.shape[0], out_size)
    x0, x1, tx = _axis_taps(region.left, region.width, src.shape[1], out_size)
    extra = (None,) * (src.ndim - 2)
    ty = ty[(slice(None), None) + extra]
    tx = tx[(None, slice(None)) + extra]
    rows = (1.0 - ty) * src[y0] + ty * src[y1]
    return (1.0 - tx) * rows[:, x0] + tx * rows[:, x1]


def _interp_matrix(start, length, n_src, n_out) -> np.ndarray:
    i0, i1, t = _axis_taps(start, length, n_src, n_out)
    m = np.zeros((n_out, n_src))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - t)
    np.add.at(m, (rows, i1), t)
    return m


def sample_bilinear_adjoint(grad_out, region: FracRect, src_shape: tuple[int, int]) -> np.ndarray:
    """Transpose of :func:`sample_bilinear` for a single-channel source.

    Maps a gradient on the sampled grid back onto the source grid.
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.ndim != 2 or grad_out.shape[0] != grad_out.shape[1]:
        raise ShapeError(f"expected a square 2-D gradient, got {grad_out.shape}")
    _check_region(region, src_shape)
    n = grad_out.shape[0]
    my = _interp_matrix(region.top, region.height, src_shape[0], n)
    mx = _interp_matrix(region.left, region.width, src_shape[1], n)
    return my.T @ grad_out @ mx
