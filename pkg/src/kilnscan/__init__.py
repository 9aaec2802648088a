"""Coarse-to-fine brick-kiln detection.

Stage 1 classifies low-resolution multi-spectral pixels with a fused
spectral-index rule; stage 2 hands the surviving high-resolution patches to
an external orientation-aware detector, then geo-references and
deduplicates its boxes.
"""

__version__ = "0.1.0"

from .classifier import (
    CandidateMask,
    CandidateRegion,
    ClassifierThresholds,
    PatchRequest,
    candidate_patches,
    classify,
    classify_pixel,
    connected_components,
    filter_rate,
)
from .evaluation import EvaluationReport, GroundTruthSet, MatchCriterion, benchmark, compute_metrics, match_detections
from .geometry import OrientedBox, ThetaClass, box_corners, nearest_theta_class, oriented_nms, rotated_iou, theta_class_to_box
from .indices import IndexRaster, bai, compute_all_indices, evi, ndbi, ndmi, ndvi, normalized_difference
from .pipeline import Detection, GeoDetection, dedup, geo_reference, ingest_detections, run_pipeline
from .raster import BandRaster, GeoTransform, MultiSpectralTile, geo_to_pixel, load_band, load_tile, normalize_reflectance, pixel_to_geo, resample_nearest, save_band
