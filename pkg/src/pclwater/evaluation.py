"""Segmentation metrics, tile stitching and the seam-disagreement diagnostic."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import CoverageError, ParameterError, ShapeError
from .raster import TileCoord


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp,
                         self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def accumulate(conf, gt, threshold: float = 0.5, into: Confusion | None = None) -> Confusion:
    """Add the confusion counts of ``conf >= threshold`` against ``gt``."""
    conf, gt = np.asarray(conf), np.asarray(gt)
    if conf.shape != gt.shape:
        raise ShapeError(f"prediction {conf.shape} and ground truth {gt.shape} differ")
    if not 0.0 < threshold < 1.0:
        raise ParameterError(f"threshold must lie in (0, 1), got {threshold}")
    pred = conf >= threshold
    truth = gt.astype(bool)
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred)) - tp
    fn = int(np.count_nonzero(truth)) - tp
    tn = pred.size - tp - fp - fn
    c = Confusion(tp, fp, fn, tn)
    return c if into is None else into + c


def iou(c: Confusion) -> float:
    denom = c.tp + c.fp + c.fn
    # No water in either prediction or ground truth counts as full agreement.
    return 1.0 if denom == 0 else c.tp / denom


def f1(c: Confusion) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else 2 * c.tp / denom


class Stitcher:
    """Running per-pixel sum and count planes for mean blending."""

    def __init__(self, height: int, width: int):
        self.height, self.width = height, width
        self.total = np.zeros((height, width))
        self.count = np.zeros((height, width), dtype=np.uint32)

    def add(self, t: TileCoord, values) -> None:
        values = np.asarray(values)
        if values.shape != (t.size, t.size):
            raise ShapeError(f"tile {tuple(t)} carries a map of shape {values.shape}")
        if (t.row0 < 0 or t.col0 < 0 or t.row0 + t.size > self.height
                or t.col0 + t.size > self.width):
            raise ShapeError(f"tile {tuple(t)} lies outside {self.height}x{self.width}")
        self.total[t.slices] += values
        self.count[t.slices] += 1

    def result(self) -> np.ndarray:
        gaps = np.flatnonzero(self.count == 0)
        if gaps.size:
            r, c = divmod(int(gaps[0]), self.width)
            raise CoverageError(
                f"{gaps.size} pixels are not covered by any tile; first gap at row {r}, col {c}")
        return self.total / self.count


def stitch(tiles: Iterable[tuple[TileCoord, np.ndarray]], height: int, width: int) -> np.ndarray:
    """Average overlapping tile maps into a ``height x width`` map."""
    acc = Stitcher(height, width)
    for t, values in tiles:
        acc.add(t, values)
    return acc.result()


def _overlap(a: TileCoord, b: TileCoord):
    top, left = max(a.row0, b.row0), max(a.col0, b.col0)
    bottom = min(a.row0 + a.size, b.row0 + b.size)
    right = min(a.col0 + a.size, b.col0 + b.size)
    if bottom <= top or right <= left:
        return None
    return top, left, bottom, right


class SeamAccumulator:
    """Streaming seam disagreement over tiles arriving in row-major order.

    Only tiles that can still overlap later arrivals are kept.
    """

    def __init__(self):
        self.active: list[tuple[TileCoord, np.ndarray]] = []
        self.total = 0.0
        self.count = 0
        self._last_row = None

    def add(self, t: TileCoord, values) -> None:
        if self._last_row is not None and t.row0 < self._last_row:
            raise ParameterError("streamed tiles must arrive in row-major order")
        self._last_row = t.row0
        values = np.asarray(values, dtype=np.float64)
        self.active = [(a, v) for a, v in self.active if a.row0 + a.size > t.row0]
        for a, v in self.active:
            ov = _overlap(a, t)
            if ov is None:
                continue
            top, left, bottom, right = ov
            pa = v[top - a.row0:bottom - a.row0, left - a.col0:right - a.col0]
            pb = values[top - t.row0:bottom - t.row0, left - t.col0:right - t.col0]
            self.total += float(np.sum(np.abs(pa - pb)))
            self.count += pa.size
        self.active.append((t, values))

    def value(self) -> float:
        if self.count == 0:
            raise ParameterError("no overlapping tile pairs; seam disagreement is undefined")
        return self.total / self.count


def seam_disagreement(tiles: Iterable[tuple[TileCoord, np.ndarray]]) -> float:
    """Mean ``|p_i - p_j|`` over every overlap pixel of every overlapping pair.

    Lists are sorted first; other iterables must already be row-major.
    """
    if isinstance(tiles, Sequence):
        tiles = sorted(tiles, key=lambda tv: (tv[0].row0, tv[0].col0))
    acc = SeamAccumulator()
    for t, values in tiles:
        acc.add(t, values)
    return acc.value()


CSV_HEADER = ["name", "tp", "fp", "fn", "tn", "iou", "f1"]


def write_metrics_csv(rows: Sequence[tuple[str, Confusion]], fh: TextIO) -> Confusion:
    """One row per raster plus a ``TOTAL`` row of pooled (micro) counts."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    pooled = Confusion()
    for name, c in rows:
        writer.writerow([name, c.tp, c.fp, c.fn, c.tn, repr(iou(c)), repr(f1(c))])
        pooled = pooled + c
    writer.writerow(["TOTAL", pooled.tp, pooled.fp, pooled.fn, pooled.tn,
                     repr(iou(pooled)), repr(f1(pooled))])
    return pooled
