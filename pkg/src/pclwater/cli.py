"""Command-line interface: ``pclwater <command> [options]``.

Results go to stdout as JSON (CSV for ``eval``); progress and errors go to
stderr. Exit status is 0 on success, 2 on invalid input and 1 on an internal
error or a failed gradient check.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import dataio, gradcheck
from .errors import ParameterError, PCLError
from .evaluation import iou, seam_disagreement, write_metrics_csv
from .grouping import (PyramidSpec, build_pyramid, inter_group_for, intra_anchors,
                       intra_group_sample)
from .losses import LossParams, LossResult, bce_loss, inter_loss, intra_loss, total_loss
from .raster import TileCoord
from .synth import SceneParams, synth_scene
from .toy import (TrainConfig, evaluate_image, load_checkpoint, predict_full, predict_tiles,
                  save_checkpoint, train)

log = logging.getLogger("pclwater")

_LOSS_FIELDS = {f.name for f in dataclasses.fields(LossParams)}
_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)} - {"loss_params", "spec"}
_SCENE_FIELDS = {f.name for f in dataclasses.fields(SceneParams)}


def load_config(path, seed: int | None = None) -> tuple[TrainConfig, SceneParams]:
    """Build a TrainConfig (and scene parameters) from a flat JSON object.

    Loss fields (``alpha_inter``, ``r``, ...) may sit at top level or under
    ``loss_params``; the pyramid is given by ``rates`` and ``tile``; scene
    fields go under ``scene``.
    """
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParameterError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ParameterError(f"{path}: config must be a JSON object")
    raw = dict(raw)
    loss = dict(raw.pop("loss_params", {}))
    loss.update({k: raw.pop(k) for k in list(raw) if k in _LOSS_FIELDS})
    scene = raw.pop("scene", {})
    spec_kw = {k: raw.pop(k) for k in ("rates", "tile") if k in raw}
    unknown = (set(raw) - _TRAIN_FIELDS) | (set(loss) - _LOSS_FIELDS) | (set(scene) - _SCENE_FIELDS)
    if unknown:
        raise ParameterError(f"unknown config keys: {sorted(unknown)}")
    spec = TrainConfig().spec
    if spec_kw:
        spec = PyramidSpec(tuple(spec_kw.get("rates", spec.rates)), int(spec_kw.get("tile", spec.tile)))
    if "water_color" in scene:
        scene["water_color"] = tuple(scene["water_color"])
    if seed is not None:
        raw["seed"] = seed
    try:
        cfg = TrainConfig(loss_params=LossParams(**loss), spec=spec, **raw)
        return cfg, SceneParams(**scene)
    except TypeError as exc:
        raise ParameterError(str(exc)) from None


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _manifest_pairs(manifest_path, which=None):
    """Lazy ``(image, mask)`` loader over manifest entries of one split."""
    root = Path(manifest_path).parent
    m = dataio.Manifest.load(manifest_path)
    entries = [e for e in m.entries if which is None or m.split.get(e.id) == which]

    class Pairs:
        def __len__(self):
            return len(entries)

        def __getitem__(self, k):
            e = entries[k]
            return dataio.read_image(root / e.image), dataio.read_mask(root / e.mask)

    return m, entries, Pairs()


# ------------------------------------------------------------------ commands

def cmd_synth(args, cfg, scene):
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    spec = cfg.spec
    spec.validate(args.side, args.side)

    def make(i):
        image, mask = synth_scene(np.random.default_rng([args.seed, i]), args.side, scene)
        name = f"scene_{i:04d}"
        dataio.write_image(out / "images" / f"{name}.png", image)
        dataio.write_mask(out / "masks" / f"{name}.png", mask)
        log.info("wrote %s (water %.3f)", name, float(mask.mean()))
        return dataio.Entry(name, f"images/{name}.png", f"masks/{name}.png", args.side, args.side)

    with ThreadPoolExecutor(args.workers) as pool:
        entries = list(pool.map(make, range(args.count)))
    manifest = dataio.Manifest.build(entries, args.seed, spec)
    manifest.save(out / "manifest.json")
    _emit({"manifest": str(out / "manifest.json"), **manifest.summary(spec.tile)})


def cmd_split(args, cfg, scene):
    if args.manifest:
        m = dataio.Manifest.load(args.manifest)
        m = dataio.Manifest(m.entries, dataio.make_split([e.id for e in m.entries], args.seed), args.seed)
        if args.out:
            m.save(args.out)
        counts = m.counts()
    elif args.n is not None:
        if args.n < 0:
            raise ParameterError(f"--n must be >= 0, got {args.n}")
        split = dataio.make_split([str(i) for i in range(args.n)], args.seed)
        counts = {name: sum(1 for v in split.values() if v == name) for name in dataio.SPLIT_NAMES}
    else:
        raise ParameterError("give --n or --manifest")
    _emit({"seed": args.seed, **counts})


def cmd_pyramid(args, cfg, scene):
    image = dataio.read_image(args.image)
    layers = build_pyramid(image, cfg.spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sides = []
    for k, layer in enumerate(layers, start=1):
        path = out / f"layer{k}.png"
        img = np.clip(np.rint(np.asarray(layer, dtype=np.float64)), 0, 255).astype(np.uint8)
        dataio.write_image(path, img)
        sides.append({"layer": k, "rate": cfg.spec.rates[k - 1], "height": layer.shape[0],
                      "width": layer.shape[1], "path": str(path)})
    _emit({"layers": sides})


def _rect(r):
    return {"top": r.top, "left": r.left, "height": r.height, "width": r.width}


def _tile(t):
    return {"row0": t.row0, "col0": t.col0, "size": t.size}


def cmd_groups(args, cfg, scene):
    spec = cfg.spec
    side = args.side
    spec.validate(side, side)
    row, col = args.anchor
    out = {"side": side, "tile": spec.tile, "rates": list(spec.rates)}
    if args.kind in ("inter", "both"):
        g = inter_group_for(TileCoord(row, col, spec.tile), spec, side)
        out["inter"] = {"tiles": [_tile(t) for t in g.tiles],
                        "footprints": [_rect(f) for f in g.footprints]}
    if args.kind in ("intra", "both"):
        g = intra_group_sample(side, spec.tile, (row, col), cfg.overlap_stride)
        out["intra"] = {"stride": g.stride, "tiles": [_tile(t) for t in g.tiles],
                        "pairs": [{"i": i + 1, "j": j + 1, "rect_i": _rect(ri), "rect_j": _rect(rj)}
                                  for i, j, ri, rj in g.pairs],
                        "lattice_anchors": len(intra_anchors(side, spec.tile, cfg.overlap_stride))}
    _emit(out)


def cmd_loss(args, cfg, scene):
    maps = [np.asarray(dataio.read_pcm(p), dtype=np.float64) for p in args.maps]
    masks = [dataio.read_mask(p).astype(np.float64) for p in args.masks]
    if len(maps) not in (1, 4):
        raise ParameterError(f"give 1 or 4 maps, got {len(maps)}")
    if len(masks) == 1:
        masks = masks * len(maps)
    if len(masks) != len(maps):
        raise ParameterError(f"give one mask or one per map ({len(maps)}), got {len(masks)}")
    aligned = [np.asarray(dataio.read_pcm(p), dtype=np.float64) for p in args.aligned]
    lp = cfg.loss_params
    seg = bce_loss(maps[0], masks[0], name="p_1st")
    inter = inter_loss(maps[0], aligned, masks[0], lp) if aligned else None
    intra = None
    if len(maps) == 4:
        h, w = maps[0].shape
        if h != w:
            raise ParameterError(f"intra tiles must be square, got {h}x{w}")
        stride = cfg.overlap_stride or h // 2
        group = intra_group_sample(h + stride, h, (0, 0), stride)
        intra = intra_loss(maps, masks, group, lp, normalize=cfg.intra_normalize,
                           names=["p_1st", "p_2", "p_3", "p_4"])
    zero = LossResult(0.0, {})
    total = total_loss(seg, inter or zero, intra or zero, lp)
    _emit({"seg": seg.value, "inter": inter.value if inter else 0.0,
           "intra": intra.value if intra else 0.0, "total": total.value,
           "alpha_inter": lp.alpha_inter, "alpha_intra": lp.alpha_intra, "r": lp.r, "lam": lp.lam})


def cmd_gradcheck(args, cfg, scene):
    results = gradcheck.run_suite(args.seeds, args.size, cfg.loss_params, start=args.seed)
    worst = {}
    for r in results:
        if r.case not in worst or r.rel_error > worst[r.case].rel_error:
            worst[r.case] = r
    failed = [r for r in results if not r.rel_error <= args.tol]
    for r in failed:
        log.error("gradient mismatch: case=%s seed=%d rel_error=%.3e", r.case, r.seed, r.rel_error)
    _emit({"seeds": args.seeds, "size": args.size, "tol": args.tol, "passed": not failed,
           "failures": len(failed),
           "max_rel_error": {c: r.rel_error for c, r in worst.items()},
           "worst_seed": {c: r.seed for c, r in worst.items()}})
    return 1 if failed else 0


def cmd_train(args, cfg, scene):
    _, _, train_pairs = _manifest_pairs(args.manifest, "train")
    _, _, val_pairs = _manifest_pairs(args.manifest, "val")
    if len(train_pairs) == 0:
        raise ParameterError(f"{args.manifest}: no training images")
    model, history = train(train_pairs, cfg, heldout=val_pairs if len(val_pairs) else None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "model.ckpt")
    with open(out / "history.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "seg", "inter", "intra", "total", "heldout_iou"])
        for h in history:
            writer.writerow([h.epoch, repr(h.seg), repr(h.inter), repr(h.intra), repr(h.total),
                             "" if h.heldout_iou is None else repr(h.heldout_iou)])
            log.info("epoch %d total %.5f", h.epoch, h.total)
    _emit({"checkpoint": str(out / "model.ckpt"), "history": str(out / "history.csv"),
           "epochs": len(history), "final": dataclasses.asdict(history[-1])})


def cmd_predict(args, cfg, scene):
    model = load_checkpoint(args.model)
    image = dataio.read_image(args.image)
    tile = cfg.spec.tile
    stride = args.stride or tile
    conf = predict_full(model, image, tile, stride)
    dataio.write_pcm(args.out, conf)
    _emit({"out": args.out, "height": conf.shape[0], "width": conf.shape[1],
           "tile": tile, "stride": stride, "mean_confidence": float(conf.mean())})


def cmd_eval(args, cfg, scene):
    model = load_checkpoint(args.model)
    _, entries, pairs = _manifest_pairs(args.manifest, None if args.split == "all" else args.split)
    tile = cfg.spec.tile
    stride = args.stride or tile // 2
    rows = []
    for e, k in zip(entries, range(len(pairs))):
        image, mask = pairs[k]
        conf, seam = evaluate_image(model, image, mask, tile, stride, args.threshold)
        log.info("%s iou %.4f seam %.5f", e.id, iou(conf), seam)
        rows.append((e.id, conf))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            write_metrics_csv(rows, fh)
    write_metrics_csv(rows, sys.stdout)


def cmd_seam(args, cfg, scene):
    model = load_checkpoint(args.model)
    tile = cfg.spec.tile
    stride = args.stride or tile // 2
    report = {}
    for path in args.images:
        report[path] = seam_disagreement(predict_tiles(model, dataio.read_image(path), tile, stride))
    _emit({"tile": tile, "stride": stride, "images": report,
           "mean": float(np.mean(list(report.values())))})


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pclwater", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="JSON file with TrainConfig / LossParams fields")
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings")

    def add(name, func, help):
        p = sub.add_parser(name, parents=[common], help=help)
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate a synthetic corpus and manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--side", type=int, default=6400)
    p.add_argument("--workers", type=int, default=1)

    p = add("split", cmd_split, "80/10/10 split of n ids or of a manifest")
    p.add_argument("--n", type=int)
    p.add_argument("--manifest")
    p.add_argument("--out", help="write the re-split manifest here")

    p = add("pyramid", cmd_pyramid, "write the pyramid layers of an image as PNGs")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)

    p = add("groups", cmd_groups, "print inter/intra group geometry for one anchor")
    p.add_argument("--side", type=int, default=6400)
    p.add_argument("--anchor", type=int, nargs=2, default=(0, 0), metavar=("ROW", "COL"))
    p.add_argument("--kind", choices=("inter", "intra", "both"), default="both")

    p = add("loss", cmd_loss, "evaluate the loss terms on PCM1 maps")
    p.add_argument("--maps", nargs="+", required=True, help="anchor map, or four intra tiles")
    p.add_argument("--masks", nargs="+", required=True, help="one mask, or one per map")
    p.add_argument("--aligned", nargs="*", default=[], help="coarser maps aligned to the anchor")

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of all gradients")
    p.add_argument("--seeds", type=int, default=200)
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--tol", type=float, default=1e-4)

    p = add("train", cmd_train, "train the toy model on a manifest's train split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = add("predict", cmd_predict, "stitched full-image confidence map (PCM1)")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int)

    p = add("eval", cmd_eval, "metrics CSV over a manifest split")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--stride", type=int)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--csv", help="also write the CSV here")

    p = add("seam", cmd_seam, "seam disagreement of overlapping tile predictions")
    p.add_argument("--model", required=True)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--stride", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        cfg, scene = load_config(args.config, args.seed)
        return args.func(args, cfg, scene) or 0
    except (PCLError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
