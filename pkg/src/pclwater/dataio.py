"""File formats and dataset manifests.

* images: 8-bit RGB PNG
* masks: 8-bit greyscale PNG, 0 = background, 255 = water
* confidence maps: PCM1 (``b"PCM1"``, uint32 LE width, uint32 LE height,
  then width*height float32 LE values, row-major)
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, ManifestError
from .grouping import PyramidSpec

log = logging.getLogger(__name__)

PCM_MAGIC = b"PCM1"
_PCM_HEADER = struct.Struct("<4sII")


def write_pcm(path, conf) -> None:
    conf = np.asarray(conf)
    if conf.ndim != 2:
        raise FormatError(f"confidence map must be 2-D, got shape {conf.shape}")
    h, w = conf.shape
    with open(path, "wb") as fh:
        fh.write(_PCM_HEADER.pack(PCM_MAGIC, w, h))
        fh.write(np.ascontiguousarray(conf, dtype="<f4").tobytes())


def read_pcm(path) -> np.ndarray:
    """Read a PCM1 file as a float32 ``(height, width)`` array."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != PCM_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}", offset=0)
    if len(data) < _PCM_HEADER.size:
        raise FormatError(f"{path}: truncated header", offset=len(data))
    _, w, h = _PCM_HEADER.unpack_from(data)
    expected = _PCM_HEADER.size + 4 * w * h
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {w}x{h}, found {len(data)}",
                          offset=min(len(data), expected))
    return np.frombuffer(data, dtype="<f4", offset=_PCM_HEADER.size).reshape(h, w).astype(np.float32)


def write_image(path, image) -> None:
    image = np.asarray(image)
    if image.dtype != np.uint8:
        image = np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise FormatError(f"images are written as RGB, got shape {image.shape}")
    Image.fromarray(image, mode="RGB").save(path)


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "RGB":
            raise FormatError(f"{path}: expected an 8-bit RGB PNG, got mode {im.mode}")
        return np.asarray(im, dtype=np.uint8).copy()


def write_mask(path, mask) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2 or not np.all((mask == 0) | (mask == 1)):
        raise FormatError(f"{path}: masks must be 2-D with values 0/1")
    Image.fromarray((mask.astype(np.uint8) * 255), mode="L").save(path)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "L":
            raise FormatError(f"{path}: expected an 8-bit single-channel PNG, got mode {im.mode}")
        raw = np.asarray(im, dtype=np.uint8)
    bad = np.flatnonzero((raw != 0) & (raw != 255))
    if bad.size:
        r, c = divmod(int(bad[0]), raw.shape[1])
        raise FormatError(f"{path}: non-binary mask value {raw[r, c]} at row {r}, col {c}")
    return (raw // 255).astype(np.uint8)


# ----------------------------------------------------------------- manifests

SPLIT_NAMES = ("train", "val", "test")


def split_counts(n: int) -> tuple[int, int, int]:
    """80/10/10 with the validation then test shares rounded up."""
    n_val = -(-n // 10)
    n_test = min(-(-n // 10), n - n_val)
    return n - n_val - n_test, n_val, n_test


def make_split(ids, seed: int) -> dict[str, str]:
    ids = list(ids)
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ManifestError(f"duplicate ids: {dupes[:5]}")
    if len(ids) < 10:
        log.warning("only %d ids; the split is degenerate and test may be empty", len(ids))
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train, n_val, _ = split_counts(len(ids))
    split = {}
    for rank, k in enumerate(order):
        split[ids[k]] = ("train" if rank < n_train else
                         "val" if rank < n_train + n_val else "test")
    return {i: split[i] for i in ids}


@dataclass
class Entry:
    id: str
    image: str
    mask: str
    width: int
    height: int
    flagged: bool = False


@dataclass
class Manifest:
    entries: list[Entry] = field(default_factory=list)
    split: dict[str, str] = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def build(cls, entries: list[Entry], seed: int, spec: PyramidSpec | None = None) -> "Manifest":
        paths = [e.image for e in entries] + [e.mask for e in entries]
        if len(set(paths)) != len(paths):
            raise ManifestError("image and mask paths must be unique")
        if spec is not None:
            for e in entries:
                try:
                    spec.validate(e.height, e.width)
                except ValueError:
                    e.flagged = True
        return cls(list(entries), make_split([e.id for e in entries], seed), seed)

    def counts(self) -> dict[str, int]:
        return {name: sum(1 for v in self.split.values() if v == name) for name in SPLIT_NAMES}

    def ids(self, which: str) -> list[str]:
        return [e.id for e in self.entries if self.split.get(e.id) == which]

    def summary(self, tile: int = 512) -> dict:
        """Non-overlapping tile and labelled-pixel totals over all entries."""
        tiles = sum((e.height // tile) * (e.width // tile) for e in self.entries)
        pixels = sum(e.height * e.width for e in self.entries)
        return {"images": len(self.entries), "tile": tile, "tiles": tiles,
                "labeled_pixels": pixels, **self.counts()}

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed,
                           "entries": [asdict(e) for e in self.entries],
                           "split": self.split}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        try:
            raw = json.loads(text)
            entries = [Entry(**e) for e in raw["entries"]]
            m = cls(entries, dict(raw["split"]), int(raw["seed"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"malformed manifest: {exc}") from None
        unknown = set(m.split) - {e.id for e in entries}
        if unknown or any(v not in SPLIT_NAMES for v in m.split.values()):
            raise ManifestError("split references unknown ids or split names")
        return m

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        return cls.from_json(Path(path).read_text())
