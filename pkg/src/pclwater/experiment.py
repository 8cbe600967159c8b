"""BCE-only versus consistency-trained comparison on a synthetic corpus.

Both runs share the corpus, split, training groups, seed and epoch budget;
they differ only in whether the consistency terms are switched on.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

from .dataio import make_split
from .errors import ParameterError
from .evaluation import Confusion, iou
from .synth import DEFAULT_SIDE, SceneParams, synth_corpus
from .toy import GroupBank, TrainConfig, evaluate_image, train

log = logging.getLogger(__name__)


@dataclass
class RunSummary:
    seam: float
    iou: float
    confusion: Confusion
    history: list = field(default_factory=list)


@dataclass
class EffectReport:
    bce: RunSummary
    pcl: RunSummary
    seconds: float
    split: dict

    @property
    def seam_reduction(self) -> float:
        """Relative drop in mean seam disagreement (0.2 means 20% lower)."""
        return 1.0 - self.pcl.seam / self.bce.seam

    @property
    def iou_delta(self) -> float:
        return self.pcl.iou - self.bce.iou

    def as_dict(self) -> dict:
        return {"seam_bce": self.bce.seam, "seam_pcl": self.pcl.seam,
                "seam_reduction": self.seam_reduction, "iou_bce": self.bce.iou,
                "iou_pcl": self.pcl.iou, "iou_delta": self.iou_delta, "seconds": self.seconds,
                "split": self.split,
                "history_bce": [asdict(h) for h in self.bce.history],
                "history_pcl": [asdict(h) for h in self.pcl.history]}


def pcl_effect(corpus_seed: int = 2024, count: int = 16, side: int = DEFAULT_SIDE,
               config: TrainConfig = TrainConfig(), scene: SceneParams = SceneParams(),
               stride: int | None = None) -> EffectReport:
    """Train BCE-only and full-objective models, then score the test split.

    Seam disagreement is averaged per test image over tiles at ``stride``
    (half a tile by default); IoU pools the stitched predictions.
    """
    start = time.perf_counter()
    spec = config.spec
    corpus = synth_corpus(corpus_seed, count, side, spec, scene)
    split = make_split(list(range(count)), corpus_seed)
    ids = {name: [i for i, s in split.items() if s == name] for name in ("train", "val", "test")}
    if not ids["test"]:
        raise ParameterError(f"a corpus of {count} images leaves no test images")
    bank = GroupBank.build(corpus.subset(ids["train"]), spec, config.seed,
                           config.inter_per_image, config.intra_per_image, config.overlap_stride)
    held = None
    if ids["val"]:
        held = GroupBank.build(corpus.subset(ids["val"]), spec, config.seed + 1,
                               config.inter_per_image, 0, config.overlap_stride)
    log.info("group bank ready: %d inter, %d intra", len(bank.inter), len(bank.intra))

    runs = {}
    for name, cfg in (("bce", replace(config, use_inter=False, use_intra=False)), ("pcl", config)):
        model, history = train(bank, cfg, heldout=held)
        runs[name] = (model, history)
        log.info("%s trained, final total %.5f", name, history[-1].total)

    stride = spec.tile // 2 if stride is None else stride
    scores = {name: [Confusion(), 0.0] for name in runs}
    for i in ids["test"]:
        image, mask = corpus[i]
        for name, (model, _) in runs.items():
            c, seam = evaluate_image(model, image, mask, spec.tile, stride)
            scores[name][0] = scores[name][0] + c
            scores[name][1] += seam / len(ids["test"])
    summaries = {name: RunSummary(seam, iou(conf), conf, runs[name][1])
                 for name, (conf, seam) in scores.items()}
    return EffectReport(summaries["bce"], summaries["pcl"], time.perf_counter() - start, ids)
