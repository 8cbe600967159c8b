"""Train BCE-only and consistency-trained toy models and compare seams.

    python scripts/pcl_effect.py --count 16 --side 6400 --seed 2024
"""
import argparse
import json
import logging
from dataclasses import replace

from pclwater.cli import load_config
from pclwater.experiment import pcl_effect


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=2024, help="corpus seed")
    ap.add_argument("--count", type=int, default=16)
    ap.add_argument("--side", type=int, default=6400)
    ap.add_argument("--config", help="JSON training config, as accepted by the CLI")
    ap.add_argument("--epochs", type=int)
    ap.add_argument("--stride", type=int, help="evaluation stride (default half a tile)")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    config, scene = load_config(args.config)
    if args.epochs is not None:
        config = replace(config, epochs=args.epochs)
    report = pcl_effect(args.seed, args.count, args.side, config, scene, args.stride)
    out = report.as_dict()
    out.pop("history_bce")
    out.pop("history_pcl")
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
