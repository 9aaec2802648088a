"""Two-stage orchestration: spectral candidates, external detector, geo dedup.

The stage-2 detector runs as a subprocess.  It receives a JSON file listing
the candidate patches::

    [{"patch_id": "r0_c256", "col0": 256, "row0": 0, "size": 256,
      "geo_window": [x0, y0, x1, y1], "geotransform": [...]}]

and must write JSON lines to stdout (or to ``{output}`` when the command
template names it), one detection per line::

    {"patch_id": "r0_c256", "cx": 128, "cy": 128, "w": 40, "h": 20,
     "class": "K20", "conf": 0.9}

Box coordinates are patch-local pixels.
"""

from __future__ import annotations

import json
import logging
import shlex
import subprocess
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .classifier import (
    DEFAULT_PATCH_SIZE,
    CandidateRegion,
    ClassifierThresholds,
    PatchRequest,
    candidate_patches,
    classify,
    connected_components,
    filter_rate,
)
from .geometry import OrientedBox, ThetaClass, box_corners, convex_iou, nms_order, theta_class_to_box
from .indices import compute_all_indices
from .raster import GeoTransform, MultiSpectralTile, pixel_to_geo

log = logging.getLogger(__name__)

DEFAULT_NMS_IOU = 0.5
DEFAULT_DEDUP_IOU = 0.3


class DetectionFormatError(ValueError):
    """Detector output that does not follow the JSON-lines schema."""


class DetectorError(RuntimeError):
    """The external detector could not be run or exited with an error."""


@dataclass(frozen=True)
class Detection:
    patch_id: str
    box: OrientedBox
    confidence: float
    theta_class: ThetaClass

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        if self.box.theta != self.theta_class.degrees:
            raise ValueError(f"box theta {self.box.theta} does not match class {self.theta_class.name}")


@dataclass(frozen=True)
class GeoDetection:
    detection_id: str
    polygon: tuple[tuple[float, float], ...]
    centroid_geo: tuple[float, float]
    confidence: float
    patch_id: str
    crs: str = ""
    theta_class: ThetaClass | None = None

    def to_feature(self) -> dict:
        ring = [list(p) for p in self.polygon]
        ring.append(list(self.polygon[0]))
        props = {
            "detection_id": self.detection_id,
            "patch_id": self.patch_id,
            "confidence": self.confidence,
            "centroid": list(self.centroid_geo),
        }
        if self.theta_class is not None:
            props["class"] = self.theta_class.name
        return {"type": "Feature", "geometry": {"type": "Polygon", "coordinates": [ring]}, "properties": props}


@dataclass
class DedupReport:
    kept: list[GeoDetection]
    merge_log: list[tuple[str, str]] = field(default_factory=list)

    @property
    def duplicate_count(self) -> int:
        return len(self.merge_log)


def _record_error(lineno: int, msg: str) -> str:
    return f"line {lineno}: {msg}"


def ingest_detections(stream: Iterable[str]) -> list[Detection]:
    """Parse detector JSON lines.

    Every bad line is collected and reported in a single
    :class:`DetectionFormatError`.  Blank lines are ignored.
    """
    detections = []
    errors = []
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            errors.append(_record_error(lineno, f"malformed JSON ({exc.msg})"))
            continue
        if not isinstance(rec, dict):
            errors.append(_record_error(lineno, "record must be a JSON object"))
            continue
        try:
            cls = ThetaClass.parse(str(rec["class"]))
            conf = float(rec["conf"])
            if not 0.0 <= conf <= 1.0:
                raise ValueError(f"confidence {conf} outside [0, 1]")
            axis_box = OrientedBox(float(rec["cx"]), float(rec["cy"]), float(rec["w"]), float(rec["h"]), 0.0)
            detections.append(Detection(str(rec["patch_id"]), theta_class_to_box(axis_box, cls), conf, cls))
        except KeyError as exc:
            errors.append(_record_error(lineno, f"missing field {exc.args[0]!r}"))
        except (TypeError, ValueError) as exc:
            errors.append(_record_error(lineno, str(exc)))
    if errors:
        raise DetectionFormatError("invalid detector output:\n  " + "\n  ".join(errors))
    return detections


def geo_reference(d: Detection, patch_gt: GeoTransform, detection_id: str = "") -> GeoDetection:
    polygon = tuple((float(x), float(y)) for x, y in (pixel_to_geo(patch_gt, cx, cy) for cx, cy in box_corners(d.box)))
    cx, cy = pixel_to_geo(patch_gt, d.box.cx, d.box.cy)
    return GeoDetection(
        detection_id=detection_id,
        polygon=polygon,
        centroid_geo=(float(cx), float(cy)),
        confidence=d.confidence,
        patch_id=d.patch_id,
        crs=patch_gt.crs,
        theta_class=d.theta_class,
    )


def dedup(dets: Sequence[GeoDetection], iou_thresh: float = DEFAULT_DEDUP_IOU) -> DedupReport:
    """Drop detections of the same kiln reported by neighbouring patches.

    Detections are visited by descending confidence (ties: ``patch_id``, then
    ``detection_id``).  One whose geo IoU with a kept detection from a
    *different* patch exceeds ``iou_thresh`` is logged as a duplicate of the
    best-overlapping such detection.  Same-patch overlaps are left to NMS.
    """
    crs_ids = {d.crs for d in dets}
    if len(crs_ids) > 1:
        raise ValueError(f"detections mix CRS ids: {sorted(crs_ids)}")
    order = sorted(dets, key=lambda d: (-d.confidence, d.patch_id, d.detection_id))
    kept: list[GeoDetection] = []
    merge_log = []
    for det in order:
        best, best_iou = None, iou_thresh
        for k in kept:
            if k.patch_id == det.patch_id:
                continue
            iou = convex_iou(k.polygon, det.polygon)
            if iou > best_iou:
                best, best_iou = k, iou
        if best is None:
            kept.append(det)
        else:
            merge_log.append((best.detection_id, det.detection_id))
    return DedupReport(kept, merge_log)


def detections_to_geojson(dets: Sequence[GeoDetection]) -> dict:
    out = {"type": "FeatureCollection", "features": [d.to_feature() for d in dets]}
    crs = dets[0].crs if dets else ""
    if crs:
        out["crs"] = {"type": "name", "properties": {"name": crs}}
    return out


def read_geo_detections(path) -> list[GeoDetection]:
    """Load detections written by :func:`detections_to_geojson`."""
    with open(path) as fh:
        data = json.load(fh)
    crs = data.get("crs", {}).get("properties", {}).get("name", "")
    out = []
    for i, feat in enumerate(data.get("features", [])):
        props = feat.get("properties", {})
        ring = feat["geometry"]["coordinates"][0]
        if len(ring) > 1 and ring[0] == ring[-1]:
            ring = ring[:-1]
        polygon = tuple((float(x), float(y)) for x, y in ring)
        centroid = props.get("centroid")
        if centroid is None:
            centroid = (sum(p[0] for p in polygon) / len(polygon), sum(p[1] for p in polygon) / len(polygon))
        cls = props.get("class")
        out.append(
            GeoDetection(
                detection_id=str(props.get("detection_id", i)),
                polygon=polygon,
                centroid_geo=(float(centroid[0]), float(centroid[1])),
                confidence=float(props.get("confidence", 1.0)),
                patch_id=str(props.get("patch_id", "")),
                crs=crs,
                theta_class=ThetaClass.parse(cls) if cls else None,
            )
        )
    return out


# --------------------------------------------------------------------------
# Orchestration


@dataclass
class PipelineReport:
    tile_id: str
    filter_rate: float
    regions: list[CandidateRegion]
    patches: list[PatchRequest]
    skipped_regions: list[int] = field(default_factory=list)
    detections: list[Detection] = field(default_factory=list)
    geo_detections: list[GeoDetection] = field(default_factory=list)
    dedup: DedupReport | None = None
    detector_invoked: bool = False
    detector_calls: int = 0
    error: str | None = None
    timings_ms: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def kept(self) -> list[GeoDetection]:
        return self.dedup.kept if self.dedup is not None else []

    def to_dict(self) -> dict:
        return {
            "tile_id": self.tile_id,
            "status": "ok" if self.ok else "detector_failed",
            "error": self.error,
            "stage1": {
                "filter_rate": self.filter_rate,
                "region_count": len(self.regions),
                "skipped_regions": list(self.skipped_regions),
            },
            "stage2": {
                "patch_count": len(self.patches),
                "patches": [p.patch_id for p in self.patches],
                "detector_invoked": self.detector_invoked,
                "detection_count": len(self.detections),
                "post_nms_count": len(self.geo_detections),
            },
            "dedup": {
                "kept_count": len(self.kept),
                "duplicate_count": self.dedup.duplicate_count if self.dedup else 0,
                "merge_log": [list(p) for p in self.dedup.merge_log] if self.dedup else [],
            },
            "timings": dict(self.timings_ms),
        }


class _Timer:
    def __init__(self, sink: dict, name: str):
        self.sink, self.name = sink, name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.sink[self.name] = (time.perf_counter() - self.t0) * 1000.0


def run_detector(detector_cmd: str | Sequence[str], patches: Sequence[PatchRequest], stage2_gt: GeoTransform,
                 workdir=None, timeout: float | None = None) -> list[str]:
    """Write the patch list, run the detector once and return its output lines.

    ``detector_cmd`` is a command template; ``{patches}`` is replaced by the
    patch-list path and ``{output}`` (optional) by a path the detector writes
    its JSON lines to.  Without ``{output}`` the detector's stdout is read.
    """
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        patch_file = Path(tmp) / "patches.json"
        out_file = Path(tmp) / "detections.jsonl"
        patch_file.write_text(json.dumps([p.to_dict(stage2_gt) for p in patches], indent=2))
        template = shlex.split(detector_cmd) if isinstance(detector_cmd, str) else list(detector_cmd)
        if not template:
            raise DetectorError("empty detector command")
        uses_output = any("{output}" in part for part in template)
        if not any("{patches}" in part for part in template):
            template.append("{patches}")
        args = [part.replace("{patches}", str(patch_file)).replace("{output}", str(out_file)) for part in template]
        log.info("running detector on %d patches: %s", len(patches), " ".join(args))
        try:
            proc = subprocess.run(args, capture_output=True, text=True, timeout=timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise DetectorError(f"could not run detector {args[0]!r}: {exc}") from exc
        if proc.returncode != 0:
            raise DetectorError(f"detector exited with status {proc.returncode}: {proc.stderr.strip()[-2000:]}")
        if uses_output:
            if not out_file.exists():
                raise DetectorError(f"detector did not write {out_file.name}")
            return out_file.read_text().splitlines()
        return proc.stdout.splitlines()


def _postprocess_patch(patch: PatchRequest, dets: list[Detection], stage2_gt: GeoTransform, nms_iou: float):
    keep = nms_order([(d.box, d.confidence) for d in dets], nms_iou)
    gt = patch.geotransform(stage2_gt)
    return [geo_reference(dets[i], gt, f"{patch.patch_id}#{n}") for n, i in enumerate(keep)]


def run_pipeline(tile: MultiSpectralTile, thresholds: ClassifierThresholds = ClassifierThresholds(),
                 detector_cmd: str | Sequence[str] | None = None, stage2_gt: GeoTransform | None = None, *,
                 stage2_shape: tuple[int, int] | None = None, patch_size: int = DEFAULT_PATCH_SIZE,
                 connectivity: int = 8, nms_iou: float = DEFAULT_NMS_IOU, dedup_iou: float = DEFAULT_DEDUP_IOU,
                 ndmi_variant: str = "green_swir", threads: int | None = None, workdir=None,
                 detector_timeout: float | None = None) -> PipelineReport:
    """Run both stages on one tile.

    With ``detector_cmd=None`` only stage 1 runs.  A detector failure does not
    raise: the report keeps the stage-1 results and carries the error.
    """
    timings: dict[str, float] = {}
    if stage2_gt is None:
        stage2_gt = tile.geotransform

    with _Timer(timings, "indices"):
        indices = compute_all_indices(tile, ndmi_variant)
    with _Timer(timings, "classify"):
        mask = classify(indices, thresholds, tile.tile_id, tile.geotransform)
    with _Timer(timings, "components"):
        regions = connected_components(mask, connectivity)
    with _Timer(timings, "patches"):
        patches, skipped = candidate_patches(regions, stage2_gt, patch_size, stage2_shape)
    report = PipelineReport(tile.tile_id, filter_rate(mask), regions, patches, skipped, timings_ms=timings)
    if skipped:
        log.warning("%d region(s) fall outside the stage-2 raster: %s", len(skipped), skipped)

    if detector_cmd is None or not patches:
        report.dedup = DedupReport([])
        return report

    report.detector_invoked = True
    report.detector_calls = 1
    try:
        with _Timer(timings, "detector"):
            lines = run_detector(detector_cmd, patches, stage2_gt, workdir, detector_timeout)
        detections = ingest_detections(lines)
        known = {p.patch_id for p in patches}
        unknown = sorted({d.patch_id for d in detections} - known)
        if unknown:
            raise DetectionFormatError(f"detections reference unrequested patches: {unknown}")
    except (DetectorError, DetectionFormatError) as exc:
        report.error = str(exc)
        log.error("stage 2 failed: %s", exc)
        return report
    report.detections = detections

    with _Timer(timings, "postprocess"):
        by_patch: dict[str, list[Detection]] = {p.patch_id: [] for p in patches}
        for d in detections:
            by_patch[d.patch_id].append(d)
        jobs = [(p, by_patch[p.patch_id]) for p in patches if by_patch[p.patch_id]]
        if threads is not None and threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                results = list(pool.map(lambda job: _postprocess_patch(job[0], job[1], stage2_gt, nms_iou), jobs))
        else:
            results = [_postprocess_patch(p, ds, stage2_gt, nms_iou) for p, ds in jobs]
        report.geo_detections = [g for res in results for g in res]
    with _Timer(timings, "dedup"):
        report.dedup = dedup(report.geo_detections, dedup_iou)
    return report
