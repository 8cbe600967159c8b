"""Print layer sizes, tile counts and the groups of one anchor tile.

    python scripts/geometry_demo.py --side 12800 --tile 512 --anchor 3 7
"""
import argparse

from pclwater.grouping import PyramidSpec, inter_group_for, intra_group_sample
from pclwater.raster import TileCoord, tile_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--side", type=int, default=12800)
    ap.add_argument("--tile", type=int, default=512)
    ap.add_argument("--rates", type=int, nargs="+", default=[1, 5, 25])
    ap.add_argument("--anchor", type=int, nargs=2, default=[0, 0], metavar=("ROW", "COL"))
    args = ap.parse_args()
    spec = PyramidSpec(tuple(args.rates), args.tile)
    for k, (h, w) in enumerate(spec.layer_sides(args.side), start=1):
        print(f"layer {k}: {h} x {w}, {len(tile_grid(h, w, args.tile))} tiles")
    row, col = args.anchor
    anchor = TileCoord(row * args.tile, col * args.tile, args.tile)
    group = inter_group_for(anchor, spec, args.side)
    print("inter-layer group:")
    for t, fp, rate in zip(group.tiles, group.footprints, group.rates):
        print(f"  rate {rate}: tile {tuple(t)}, footprint {tuple(fp)}")
    intra = intra_group_sample(args.side, args.tile, (row * args.tile, col * args.tile))
    print("intra-layer group tiles:", [tuple(t) for t in intra.tiles])


if __name__ == "__main__":
    main()
