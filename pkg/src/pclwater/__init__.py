"""Pyramid consistency losses for tiled water segmentation of very large rasters.

The package covers tile and pyramid geometry, the consistency losses with
analytic gradients, a small trainable toy classifier, stitched evaluation and
the file formats and CLI around them.
"""
from .errors import (AlignmentError, CoverageError, FormatError, GeometryError, ManifestError,
                     ParameterError, PCLError, ShapeError)
from .evaluation import Confusion, accumulate, f1, iou, seam_disagreement, stitch
from .grouping import (InterLayerGroup, IntraLayerGroup, PyramidSpec, align_confidence,
                       build_pyramid, inter_group_for, intra_group_sample)
from .losses import LossParams, LossResult, bce_loss, inter_loss, intra_loss, total_loss
from .raster import FracRect, TileCoord, downsample_area, sample_bilinear, tile_grid

__version__ = "0.1.0"
