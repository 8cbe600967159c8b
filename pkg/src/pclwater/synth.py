"""Procedural water scenes: meandering rivers, elliptical lakes and pond clusters
over textured, unevenly lit land.

Shape sizes scale with the image side, so water fractions do not depend on
resolution. Scenes are generated lazily and deterministically per index.
"""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .grouping import PyramidSpec
from .raster import FracRect, sample_bilinear

DEFAULT_SPEC = PyramidSpec((1, 5, 25), 256)
DEFAULT_SIDE = 6400

_LAND_PALETTES = (
    (0.22, 0.34, 0.16),   # vegetation
    (0.52, 0.45, 0.34),   # bare soil
    (0.44, 0.44, 0.45),   # urban
    (0.36, 0.40, 0.22),   # cropland
)


@dataclass(frozen=True)
class SceneParams:
    water_color: tuple[float, float, float] = (0.10, 0.20, 0.28)
    noise: float = 0.05
    illumination: float = 0.35
    texture: float = 0.25
    min_fraction: float = 0.02
    max_fraction: float = 0.40


def _disc(mask, cy, cx, radius):
    h, w = mask.shape
    r0, r1 = max(int(cy - radius), 0), min(int(cy + radius) + 2, h)
    c0, c1 = max(int(cx - radius), 0), min(int(cx + radius) + 2, w)
    if r0 >= r1 or c0 >= c1:
        return
    yy = np.arange(r0, r1)[:, None] + 0.5 - cy
    xx = np.arange(c0, c1)[None, :] + 0.5 - cx
    mask[r0:r1, c0:c1] |= (yy * yy + xx * xx) <= radius * radius


def _ellipse(mask, cy, cx, a, b, theta):
    h, w = mask.shape
    ext = max(a, b)
    r0, r1 = max(int(cy - ext), 0), min(int(cy + ext) + 2, h)
    c0, c1 = max(int(cx - ext), 0), min(int(cx + ext) + 2, w)
    if r0 >= r1 or c0 >= c1:
        return
    yy = np.arange(r0, r1)[:, None] + 0.5 - cy
    xx = np.arange(c0, c1)[None, :] + 0.5 - cx
    ct, st = math.cos(theta), math.sin(theta)
    u = (xx * ct + yy * st) / a
    v = (-xx * st + yy * ct) / b
    mask[r0:r1, c0:c1] |= (u * u + v * v) <= 1.0


def _river(mask, rng, side):
    width = side * rng.uniform(0.004, 0.015)
    step = max(width * 0.6, 1.0)
    edge = rng.integers(4)
    pos = rng.uniform(0.1, 0.9) * side
    y, x, heading = {0: (0.0, pos, math.pi / 2), 1: (pos, 0.0, 0.0),
                     2: (side, pos, -math.pi / 2), 3: (pos, side, math.pi)}[int(edge)]
    heading += rng.normal(0, 0.3)
    base = heading
    for _ in range(int(3 * side / step)):
        _disc(mask, y, x, width)
        heading += rng.normal(0, 0.08) + 0.05 * (base - heading)
        y += step * math.sin(heading)
        x += step * math.cos(heading)
        if not (-width <= y <= side + width and -width <= x <= side + width):
            break


def scene_mask(rng: np.random.Generator, side: int) -> np.ndarray:
    mask = np.zeros((side, side), dtype=bool)
    for _ in range(rng.integers(0, 3)):
        _river(mask, rng, side)
    for _ in range(rng.integers(1, 4)):
        a = side * rng.uniform(0.04, 0.14)
        _ellipse(mask, rng.uniform(0, side), rng.uniform(0, side),
                 a, a * rng.uniform(0.4, 1.0), rng.uniform(0, math.pi))
    for _ in range(rng.integers(0, 3)):
        cy, cx = rng.uniform(0, side, 2)
        for _ in range(rng.integers(5, 20)):
            _disc(mask, cy + rng.normal(0, 0.04 * side), cx + rng.normal(0, 0.04 * side),
                  side * rng.uniform(0.003, 0.01))
    return mask


def _smooth_field(rng, side, cells):
    """Unit-variance-ish random field with correlation length ``side / cells``."""
    coarse = rng.standard_normal((cells + 1, cells + 1))
    return sample_bilinear(coarse, FracRect(0, 0, cells + 1, cells + 1), side).astype(np.float32)


def _upsample(a, f):
    if f == 1:
        return a
    return np.repeat(np.repeat(a, f, axis=0), f, axis=1)


def synth_scene(rng: np.random.Generator, side: int, params: SceneParams = SceneParams()):
    """Return ``(image, mask)``: uint8 RGB image and uint8 {0, 1} mask."""
    for _ in range(50):
        mask = scene_mask(rng, side)
        frac = mask.mean()
        if params.min_fraction <= frac <= params.max_fraction:
            break
    else:
        # Fallback keeps the water fraction in range by construction: one lake
        # whose area is the midpoint of the allowed range.
        mask = np.zeros((side, side), dtype=bool)
        target = 0.5 * (params.min_fraction + params.max_fraction) * side * side
        a = math.sqrt(target / (0.6 * math.pi))
        _ellipse(mask, side / 2, side / 2, a, 0.6 * a, rng.uniform(0, math.pi))
    land = np.asarray(_LAND_PALETTES[rng.integers(len(_LAND_PALETTES))])
    land = land * rng.uniform(0.85, 1.15, 3)
    water = np.asarray(params.water_color) * rng.uniform(0.8, 1.2, 3)

    # Smooth fields are built at reduced resolution and block-upsampled; the
    # per-pixel noise hides the block structure.
    f = 4 if side % 4 == 0 else 1
    low = side // f
    coords = (np.arange(low, dtype=np.float32) + 0.5) / low - 0.5
    gy, gx = (float(v) for v in rng.normal(0, 1, 2))
    ramp = coords[:, None] * gy + coords[None, :] * gx
    # Large-scale uneven illumination (haze / sun angle), shared by all channels.
    light = 1.0 + params.illumination * np.clip(0.6 * ramp + 0.4 * _smooth_field(rng, low, 3), -1.5, 1.5)
    land_gain = _upsample((1.0 + params.texture * _smooth_field(rng, low, 24)) * light, f)
    water_gain = _upsample((1.0 + 0.5 * params.texture * _smooth_field(rng, low, 8)) * light, f)
    noise = rng.standard_normal((side, side), dtype=np.float32)
    noise *= params.noise * 255.0
    noise += 0.5

    image = np.empty((side, side, 3), dtype=np.uint8)
    plane = np.empty((side, side), dtype=np.float32)
    for ch in range(3):
        np.multiply(land_gain, float(land[ch]) * 255.0, out=plane)
        np.multiply(water_gain, float(water[ch]) * 255.0, out=plane, where=mask)
        # Channels reuse one noise draw at different offsets.
        plane += np.roll(noise, (ch * 97, ch * 193), axis=(0, 1))
        np.clip(plane, 0.0, 255.0, out=plane)
        image[:, :, ch] = plane
    return image, mask.astype(np.uint8)


class SynthCorpus(Sequence):
    """Lazily generated, seed-deterministic list of ``(image, mask)`` pairs."""

    def __init__(self, seed: int, count: int, side: int = DEFAULT_SIDE,
                 spec: PyramidSpec | None = DEFAULT_SPEC, params: SceneParams = SceneParams()):
        if spec is not None:
            spec.validate(side, side)
        self.seed, self.count, self.side, self.spec, self.params = seed, count, side, spec, params

    def __len__(self):
        return self.count

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(self.count))]
        if i < 0:
            i += self.count
        if not 0 <= i < self.count:
            raise IndexError(i)
        return synth_scene(np.random.default_rng([self.seed, i]), self.side, self.params)

    def subset(self, indices) -> list:
        """Lazy view over selected indices."""
        return _Subset(self, list(indices))


class _Subset(Sequence):
    def __init__(self, corpus, indices):
        self.corpus, self.indices = corpus, indices

    def __len__(self):
        return len(self.indices)

    def __getitem__(self, k):
        return self.corpus[self.indices[k]]


def synth_corpus(seed: int, count: int, side: int = DEFAULT_SIDE,
                 spec: PyramidSpec | None = DEFAULT_SPEC, params: SceneParams = SceneParams()) -> SynthCorpus:
    return SynthCorpus(seed, count, side, spec, params)
