"""Forward values and analytic gradients of the segmentation and pyramid
consistency losses.

Every function returns a :class:`LossResult` whose ``grads`` are keyed by a
caller-chosen name per confidence map, so terms that share a map can be
combined by :func:`total_loss`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ParameterError, ShapeError
from .grouping import IntraLayerGroup
from .raster import EPS


@dataclass(frozen=True)
class LossParams:
    alpha_inter: float = 1.0
    alpha_intra: float = 1.0
    r: float = 2.0
    lam: float = 0.2

    def __post_init__(self):
        if self.alpha_inter < 0 or self.alpha_intra < 0:
            raise ParameterError("trade-off weights must be >= 0")
        if self.r < 0:
            raise ParameterError(f"focusing parameter r must be >= 0, got {self.r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ParameterError(f"lambda must lie in [0, 1], got {self.lam}")


@dataclass
class LossResult:
    value: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)


def _f64(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def _same_shape(**arrays):
    shapes = {k: v.shape for k, v in arrays.items()}
    if len(set(shapes.values())) != 1:
        raise ShapeError(f"shape mismatch: {shapes}")


def focal_weight(p, y, r, lam):
    """Per-pixel weight ``(1-p)^r (1-lam) y + lam p^r (1-y)`` and its derivative in ``p``."""
    q = 1.0 - p
    w = q ** r * (1.0 - lam) * y + lam * p ** r * (1.0 - y)
    if r == 0:
        dw = np.zeros_like(p)
    else:
        dw = -r * q ** (r - 1) * (1.0 - lam) * y + lam * r * p ** (r - 1) * (1.0 - y)
    return w, dw


def bce_loss(p, y, name: str = "p") -> LossResult:
    p = np.clip(_f64(p, "p"), EPS, 1.0 - EPS)
    y = _f64(y, "y")
    _same_shape(p=p, y=y)
    n = p.size
    value = -np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)) / n
    grad = (p - y) / (p * (1.0 - p)) / n
    return LossResult(float(value), {name: grad})


def _pair_term(p, q, y, r, lam):
    """Sum of ``w(p, y) * (p - q)^2`` with gradients w.r.t. ``p`` and ``q``."""
    w, dw = focal_weight(p, y, r, lam)
    d = p - q
    sq = d * d
    return np.sum(w * sq), dw * sq + 2.0 * w * d, -2.0 * w * d


def inter_loss(p_1st, aligned: Sequence, y_1st, params: LossParams = LossParams(),
               names: Sequence[str] | None = None) -> LossResult:
    """Inter-layer consistency between the anchor map and each aligned coarser map.

    ``aligned`` holds the coarser-layer maps already upsampled onto the anchor
    tile (normally two: layers 2 and 3). Each layer contributes its own term
    normalised by the tile area.
    """
    p1 = _f64(p_1st, "p_1st")
    y = _f64(y_1st, "y_1st")
    qs = [_f64(q, f"aligned[{k}]") for k, q in enumerate(aligned)]
    _same_shape(p_1st=p1, y_1st=y, **{f"aligned_{k}": q for k, q in enumerate(qs)})
    if names is None:
        names = ["p_1st", "p_2nd", "p_3rd"][:len(qs) + 1]
        names += [f"p_layer{k + 1}" for k in range(len(names), len(qs) + 1)]
    if len(names) != len(qs) + 1:
        raise ParameterError(f"expected {len(qs) + 1} names, got {len(names)}")
    n = p1.size
    total = 0.0
    g1 = np.zeros_like(p1)
    grads = {}
    for name, q in zip(names[1:], qs):
        s, gp, gq = _pair_term(p1, q, y, params.r, params.lam)
        total += s / n
        g1 += gp / n
        grads[name] = gq / n
    grads = {names[0]: g1, **grads}
    return LossResult(float(total), grads)


def intra_loss(maps: Sequence, masks: Sequence, group: IntraLayerGroup,
               params: LossParams = LossParams(), normalize: str = "tile",
               names: Sequence[str] | None = None) -> LossResult:
    """Intra-layer consistency summed over the six overlapping tile pairs.

    ``normalize="tile"`` divides the total by the tile area; ``"overlap"``
    divides each pair's sum by that pair's overlap area instead.
    """
    if len(maps) != 4 or len(masks) != 4:
        raise ShapeError(f"need four maps and four masks, got {len(maps)} and {len(masks)}")
    if normalize not in ("tile", "overlap"):
        raise ParameterError(f"normalize must be 'tile' or 'overlap', got {normalize!r}")
    ps = [_f64(m, f"maps[{k}]") for k, m in enumerate(maps)]
    ys = [_f64(m, f"masks[{k}]") for k, m in enumerate(masks)]
    _same_shape(**{f"maps_{k}": p for k, p in enumerate(ps)},
                **{f"masks_{k}": y for k, y in enumerate(ys)})
    size = group.tiles[0].size
    if ps[0].shape != (size, size):
        raise ShapeError(f"maps of shape {ps[0].shape} do not match tile size {size}")
    names = names or [f"p_{k + 1}" for k in range(4)]
    grads = [np.zeros_like(p) for p in ps]
    total = 0.0
    for i, j, ri, rj in group.pairs:
        si, sj = ri.slices, rj.slices
        norm = ps[0].size if normalize == "tile" else ri.area
        s, gi, gj = _pair_term(ps[i][si], ps[j][sj], ys[i][si], params.r, params.lam)
        total += s / norm
        grads[i][si] += gi / norm
        grads[j][sj] += gj / norm
    return LossResult(float(total), dict(zip(names, grads)))


def total_loss(seg: LossResult, inter: LossResult, intra: LossResult,
               params: LossParams = LossParams()) -> LossResult:
    """``seg + alpha_inter * inter + alpha_intra * intra``, gradients merged by name."""
    value = seg.value + params.alpha_inter * inter.value + params.alpha_intra * intra.value
    grads = {k: v.copy() for k, v in seg.grads.items()}
    for weight, part in ((params.alpha_inter, inter), (params.alpha_intra, intra)):
        if weight == 0:
            continue
        for k, g in part.grads.items():
            if k in grads:
                if grads[k].shape != g.shape:
                    raise ShapeError(f"gradient {k!r}: {grads[k].shape} vs {g.shape}")
                grads[k] += weight * g
            else:
                grads[k] = weight * g
    return LossResult(float(value), grads)
