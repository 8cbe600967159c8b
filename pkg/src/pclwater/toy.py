"""A linear-logistic pixel classifier trained with the pyramid consistency objective.

Per-pixel features are the raw channels, the channels minus the tile mean,
the tile mean and the tile standard deviation. The tile statistics make a
pixel's prediction depend on which tile (and which pyramid layer) it was seen
in, which is exactly the inconsistency the consistency terms penalise.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FormatError, ParameterError, ShapeError
from .evaluation import (Confusion, SeamAccumulator, Stitcher, accumulate, iou,
                         seam_disagreement, stitch)
from .grouping import (InterLayerGroup, IntraLayerGroup, PyramidSpec, build_pyramid,
                       inter_group_for, intra_anchors, intra_group_sample)
from .losses import LossParams, LossResult, bce_loss, inter_loss, intra_loss, total_loss
from .raster import EPS, TileCoord, as_grid, sample_bilinear, sample_bilinear_adjoint, tile_grid

CHECKPOINT_MAGIC = "PCLTOY v1"


def to_float_image(img) -> np.ndarray:
    """uint8 rasters are rescaled to [0, 1]; other dtypes pass through as float."""
    img = as_grid(img)
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    return img.astype(np.float64, copy=False)


def _tile_stats(x):
    """Per-channel mean and population std of an ``(H, W, C)`` tile."""
    flat = x.reshape(-1, x.shape[2])
    ones = np.ones(flat.shape[0])
    mean = ones @ flat / flat.shape[0]
    d = flat - mean
    return mean, np.sqrt(ones @ (d * d) / flat.shape[0])


def featurize(tile) -> np.ndarray:
    """``(H, W, 4C)`` features: raw, centred, tile mean, tile std (per channel)."""
    x = to_float_image(tile)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.size == 0:
        raise ShapeError("cannot featurize an empty tile")
    mean, std = _tile_stats(x)
    shape = x.shape
    return np.concatenate([x, x - mean, np.broadcast_to(mean, shape),
                           np.broadcast_to(std, shape)], axis=2)


@dataclass
class ToyModel:
    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        self.bias = float(self.bias)
        if not (np.all(np.isfinite(self.weights)) and math.isfinite(self.bias)):
            raise ParameterError("model parameters must be finite")

    @classmethod
    def zeros(cls, n_features: int) -> "ToyModel":
        return cls(np.zeros(n_features), 0.0)

    @property
    def n_features(self) -> int:
        return self.weights.size

    @property
    def params(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    @classmethod
    def from_params(cls, params) -> "ToyModel":
        params = np.asarray(params, dtype=np.float64)
        return cls(params[:-1].copy(), float(params[-1]))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def forward(model: ToyModel, features) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3 or features.shape[2] != model.n_features:
        raise ShapeError(f"features {features.shape} do not match a {model.n_features}-feature model")
    z = features @ model.weights + model.bias
    return np.clip(_sigmoid(z), EPS, 1.0 - EPS)


def param_grad(model: ToyModel, features, grad_p) -> np.ndarray:
    """Gradient w.r.t. ``model.params`` given the loss gradient on ``forward``'s output."""
    features = np.asarray(features, dtype=np.float64)
    s = _sigmoid(features @ model.weights + model.bias)
    gz = grad_p * s * (1.0 - s) * ((s > EPS) & (s < 1.0 - EPS))
    f = features.reshape(-1, features.shape[2])
    return np.append(f.T @ gz.ravel(), gz.sum())


class _Tile:
    """Per-tile quantities for the fast path (same maths as featurize+forward)."""

    __slots__ = ("x", "mean", "std", "s", "p")

    def __init__(self, model: ToyModel, tile):
        x = to_float_image(tile)
        if x.ndim == 2:
            x = x[:, :, None]
        c = x.shape[2]
        if 4 * c != model.n_features:
            raise ShapeError(f"{c}-channel tile does not match a {model.n_features}-feature model")
        w = model.weights
        self.x = x
        self.mean, self.std = _tile_stats(x)
        const = model.bias + (w[2 * c:3 * c] - w[c:2 * c]) @ self.mean + w[3 * c:] @ self.std
        self.s = _sigmoid(x @ (w[:c] + w[c:2 * c]) + const)
        self.p = np.clip(self.s, EPS, 1.0 - EPS)

    def backward(self, grad_p) -> np.ndarray:
        s = self.s
        gz = grad_p * s * (1.0 - s) * ((s > EPS) & (s < 1.0 - EPS))
        c = self.x.shape[2]
        gsum = gz.sum()
        graw = np.tensordot(gz, self.x, axes=2)
        return np.concatenate([graw, graw - self.mean * gsum, self.mean * gsum,
                               self.std * gsum, [gsum]])


def forward_tile(model: ToyModel, tile) -> np.ndarray:
    """Confidence map of one image tile (equivalent to ``forward(featurize(tile))``)."""
    return _Tile(model, tile).p


# ---------------------------------------------------------------- group bank

@dataclass
class InterItem:
    image: int
    anchor: np.ndarray
    mask: np.ndarray
    group: InterLayerGroup


@dataclass
class IntraItem:
    region: np.ndarray
    mask: np.ndarray
    group: IntraLayerGroup


@dataclass
class GroupBank:
    """Training groups drawn from a corpus, holding only the pixels they need.

    Coarse pyramid layers are kept whole per image (they are small); layer-1
    pixels are kept only for the sampled anchor tiles and intra regions.
    """
    spec: PyramidSpec
    overlap_stride: int
    inter: list[InterItem] = field(default_factory=list)
    intra: list[IntraItem] = field(default_factory=list)
    layers: list[list[np.ndarray]] = field(default_factory=list)
    n_channels: int = 0

    @classmethod
    def build(cls, corpus: Iterable, spec: PyramidSpec, seed: int = 0,
              inter_per_image: int | None = None, intra_per_image: int | None = None,
              overlap_stride: int | None = None) -> "GroupBank":
        tile = spec.tile
        s = tile // 2 if overlap_stride is None else overlap_stride
        bank = cls(spec, s)
        rng = np.random.default_rng([seed, 0x6B])
        for idx, (image, mask) in enumerate(corpus):
            image = as_grid(image)
            mask = np.asarray(mask)
            h, w = image.shape[:2]
            if mask.shape != (h, w):
                raise ShapeError(f"image {idx}: mask {mask.shape} does not match image {(h, w)}")
            spec.validate(h, w)
            bank.n_channels = 1 if image.ndim == 2 else image.shape[2]
            pyramid = build_pyramid(image, spec)
            # Coarse layers must share the [0, 1] scale to_float_image gives anchors.
            gain = 1.0 / 255.0 if image.dtype == np.uint8 else 1.0
            bank.layers.append([(np.asarray(l, dtype=np.float64) * gain).astype(np.float32)
                                for l in pyramid[1:]])
            anchors = _pick(rng, tile_grid(h, w, tile), inter_per_image)
            for a in anchors:
                group = inter_group_for(a, spec, (h, w))
                bank.inter.append(InterItem(idx, image[a.slices].copy(), mask[a.slices].copy(), group))
            local = intra_group_sample(tile + s, tile, (0, 0), s)
            for r, c in _pick(rng, intra_anchors((h, w), tile, s), intra_per_image):
                sl = (slice(r, r + tile + s), slice(c, c + tile + s))
                bank.intra.append(IntraItem(image[sl].copy(), mask[sl].copy(), local))
            del pyramid
        if not bank.inter:
            raise ShapeError("corpus produced no training groups")
        return bank


def feature_moments(bank: GroupBank) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and standard deviation over the bank's anchor tiles."""
    total = sq = 0.0
    n = 0
    for item in bank.inter:
        f = featurize(item.anchor).reshape(-1, 4 * bank.n_channels)
        total = total + f.sum(axis=0)
        sq = sq + (f * f).sum(axis=0)
        n += f.shape[0]
    mean = total / n
    std = np.sqrt(np.maximum(sq / n - mean * mean, 0.0))
    return mean, np.where(std > 1e-12, std, 1.0)


def _pick(rng, items: list, k: int | None) -> list:
    if k is None or k >= len(items):
        return list(items)
    idx = np.sort(rng.choice(len(items), size=k, replace=False))
    return [items[i] for i in idx]


# ------------------------------------------------------------------ training

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.2
    epochs: int = 10
    seed: int = 0
    loss_params: LossParams = field(default_factory=LossParams)
    use_inter: bool = True
    use_intra: bool = True
    batch: int = 8
    momentum: float = 0.9
    weight_decay: float = 5e-4
    poly_power: float | None = None
    spec: PyramidSpec = field(default_factory=lambda: PyramidSpec((1, 5, 25), 256))
    overlap_stride: int | None = None
    inter_per_image: int | None = 24
    intra_per_image: int | None = 24
    intra_normalize: str = "tile"
    workers: int = 1
    init_scale: float = 0.01

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ParameterError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.batch < 1 or self.workers < 1:
            raise ParameterError("batch and workers must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    seg: float
    inter: float
    intra: float
    total: float
    heldout_iou: float | None = None


def _inter_step(model: ToyModel, item: InterItem, bank: GroupBank, cfg: TrainConfig):
    params = cfg.loss_params
    t1 = _Tile(model, item.anchor)
    y = item.mask.astype(np.float64)
    seg = bce_loss(t1.p, y, name="p_1st")
    coarse, aligned = [], []
    if cfg.use_inter:
        size = item.anchor.shape[0]
        for k, layer in enumerate(bank.layers[item.image], start=1):
            tk = _Tile(model, layer[item.group.tiles[k].slices])
            coarse.append(tk)
            aligned.append(sample_bilinear(tk.p, item.group.footprints[k], size))
        inter = inter_loss(t1.p, aligned, y, params,
                           names=["p_1st"] + [f"layer{k}" for k in range(1, len(aligned) + 1)])
    else:
        inter = LossResult(0.0)
    tot = total_loss(seg, inter, LossResult(0.0), replace(params, alpha_intra=0.0))
    grad = t1.backward(tot.grads["p_1st"])
    for k, tk in enumerate(coarse, start=1):
        g = tot.grads.get(f"layer{k}")
        if g is None:
            continue
        fp = item.group.footprints[k]
        grad = grad + tk.backward(sample_bilinear_adjoint(g, fp, tk.p.shape))
    return seg.value, inter.value, grad


def _intra_step(model: ToyModel, item: IntraItem, cfg: TrainConfig):
    tiles = [_Tile(model, item.region[t.slices]) for t in item.group.tiles]
    masks = [item.mask[t.slices] for t in item.group.tiles]
    res = intra_loss([t.p for t in tiles], masks, item.group, cfg.loss_params,
                     normalize=cfg.intra_normalize)
    grad = 0.0
    for t, name in zip(tiles, ("p_1", "p_2", "p_3", "p_4")):
        grad = grad + t.backward(res.grads[name])
    return res.value, grad


def heldout_confusion(model: ToyModel, tiles: Sequence[tuple[np.ndarray, np.ndarray]]) -> Confusion:
    c = Confusion()
    for img, mask in tiles:
        c = accumulate(forward_tile(model, img), mask, into=c)
    return c


def train(corpus, config: TrainConfig = TrainConfig(), heldout=None):
    """Gradient descent with momentum on the total objective.

    ``corpus`` is a sequence of ``(image, mask)`` pairs or a prebuilt
    :class:`GroupBank`. ``heldout`` (pairs or bank) supplies the anchor tiles
    scored for IoU after every epoch. Returns ``(model, history)``.
    """
    cfg = config
    bank = corpus if isinstance(corpus, GroupBank) else GroupBank.build(
        corpus, cfg.spec, cfg.seed, cfg.inter_per_image, cfg.intra_per_image, cfg.overlap_stride)
    held = None
    if heldout is not None:
        hb = heldout if isinstance(heldout, GroupBank) else GroupBank.build(
            heldout, cfg.spec, cfg.seed + 1, cfg.inter_per_image, 0, cfg.overlap_stride)
        held = [(it.anchor, it.mask) for it in hb.inter]

    rng = np.random.default_rng([cfg.seed, 0x7A])
    n_feat = 4 * bank.n_channels
    # Optimise over standardised features: raw weights = v / scale,
    # raw bias = c - v . (shift / scale). The returned model is in raw form.
    shift, scale = feature_moments(bank)
    theta = np.append(rng.normal(0.0, cfg.init_scale, n_feat), 0.0)

    def to_raw(th):
        v = th[:-1] / scale
        return np.append(v, th[-1] - v @ shift)

    params = to_raw(theta)
    velocity = np.zeros_like(theta)
    decay_mask = np.append(np.ones(n_feat), 0.0)
    lp = cfg.loss_params
    n_inter, n_intra = len(bank.inter), len(bank.intra)
    steps = math.ceil(n_inter / cfg.batch)
    total_steps = steps * cfg.epochs
    history: list[EpochRecord] = []
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    mapper = pool.map if pool else map
    it = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(n_inter)
            intra_order = rng.permutation(n_intra) if n_intra else np.zeros(0, dtype=int)
            sums = np.zeros(3)
            for step in range(steps):
                model = ToyModel.from_params(params)
                batch = order[step * cfg.batch:(step + 1) * cfg.batch]
                results = list(mapper(lambda i: _inter_step(model, bank.inter[i], bank, cfg), batch))
                seg_v = sum(r[0] for r in results) / len(batch)
                inter_v = sum(r[1] for r in results) / len(batch)
                grad = sum(r[2] for r in results) / len(batch)
                intra_v = 0.0
                if cfg.use_intra and n_intra:
                    ib = [intra_order[(step * cfg.batch + k) % n_intra] for k in range(len(batch))]
                    iresults = list(mapper(lambda i: _intra_step(model, bank.intra[i], cfg), ib))
                    intra_v = sum(r[0] for r in iresults) / len(ib)
                    if lp.alpha_intra != 0:
                        grad = grad + lp.alpha_intra * (sum(r[1] for r in iresults) / len(ib))
                sums += (seg_v, inter_v, intra_v)
                lr = cfg.learning_rate
                if cfg.poly_power is not None:
                    lr *= (1.0 - it / total_steps) ** cfg.poly_power
                gtheta = np.append(grad[:-1] / scale - grad[-1] * shift / scale, grad[-1])
                velocity = cfg.momentum * velocity + gtheta + cfg.weight_decay * decay_mask * theta
                theta = theta - lr * velocity
                params = to_raw(theta)
                it += 1
            seg_m, inter_m, intra_m = sums / steps
            rec = EpochRecord(epoch, seg_m, inter_m, intra_m,
                              seg_m + lp.alpha_inter * inter_m + lp.alpha_intra * intra_m)
            if held:
                rec.heldout_iou = iou(heldout_confusion(ToyModel.from_params(params), held))
            history.append(rec)
    finally:
        if pool:
            pool.shutdown()
    return ToyModel.from_params(params), history


# ---------------------------------------------------------------- inference

def predict_tiles(model: ToyModel, image, tile: int, stride: int | None = None):
    """Yield ``(TileCoord, confidence map)`` in row-major order.

    Works one band of tile rows at a time; tile statistics come from column
    sums, so each tile costs one sigmoid over its pixels.
    """
    image = as_grid(image)
    h, w = image.shape[:2]
    coords = tile_grid(h, w, tile, stride)
    c = 1 if image.ndim == 2 else image.shape[2]
    if 4 * c != model.n_features:
        raise ShapeError(f"{c}-channel image does not match a {model.n_features}-feature model")
    wt = model.weights
    proj_w = wt[:c] + wt[c:2 * c]
    mean_w = wt[2 * c:3 * c] - wt[c:2 * c]
    std_w = wt[3 * c:]
    n = tile * tile
    band_row = None
    for t in coords:
        if t.row0 != band_row:
            band_row = t.row0
            band = to_float_image(image[t.row0:t.row0 + tile])
            if band.ndim == 2:
                band = band[:, :, None]
            proj = band @ proj_w
            # Offsets from a reference pixel keep the running sums small, so
            # flat regions get exactly zero spread.
            ref = band[0, 0].copy()
            dev = band - ref
            zero = np.zeros((1, c))
            csum = np.concatenate([zero, np.cumsum(dev.sum(axis=0), axis=0)])
            csq = np.concatenate([zero, np.cumsum((dev * dev).sum(axis=0), axis=0)])
        dmean = (csum[t.col0 + tile] - csum[t.col0]) / n
        var = (csq[t.col0 + tile] - csq[t.col0]) / n - dmean * dmean
        mean = ref + dmean
        std = np.sqrt(np.maximum(var, 0.0))
        const = model.bias + mean_w @ mean + std_w @ std
        s = _sigmoid(proj[:, t.col0:t.col0 + tile] + const)
        yield t, np.clip(s, EPS, 1.0 - EPS)


def predict_full(model: ToyModel, image, tile: int, stride: int | None = None) -> np.ndarray:
    image = as_grid(image)
    return stitch(predict_tiles(model, image, tile, stride), image.shape[0], image.shape[1])


def seam_report(model: ToyModel, image, tile: int, stride: int | None = None) -> float:
    stride = tile // 2 if stride is None else stride
    return seam_disagreement(predict_tiles(model, image, tile, stride))


def evaluate_image(model: ToyModel, image, mask, tile: int, stride: int | None = None,
                   threshold: float = 0.5) -> tuple[Confusion, float]:
    """Confusion of the stitched prediction and seam disagreement, in one pass."""
    stride = tile // 2 if stride is None else stride
    image = as_grid(image)
    acc = Stitcher(image.shape[0], image.shape[1])
    seam = SeamAccumulator()
    for t, p in predict_tiles(model, image, tile, stride):
        acc.add(t, p)
        seam.add(t, p)
    return accumulate(acc.result(), mask, threshold), seam.value()


# --------------------------------------------------------------- checkpoint

def save_checkpoint(model: ToyModel, path) -> None:
    lines = [CHECKPOINT_MAGIC, str(model.n_features)]
    lines += [repr(float(v)) for v in model.params]
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> ToyModel:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: missing '{CHECKPOINT_MAGIC}' header", offset=0)
    try:
        n = int(lines[1])
        values = [float(v) for v in lines[2:]]
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed checkpoint ({exc})") from None
    if len(values) != n + 1:
        raise FormatError(f"{path}: expected {n + 1} parameters, found {len(values)}")
    return ToyModel.from_params(values)
