"""Detection matching, precision/recall/F1 and workload accounting."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import fmean
from typing import Sequence

import numpy as np

from .geometry import convex_iou
from .pipeline import GeoDetection, PipelineReport


@dataclass(frozen=True)
class GroundTruth:
    gt_id: str
    centroid_geo: tuple[float, float]
    polygon: tuple[tuple[float, float], ...] | None = None
    theta: float | None = None


class GroundTruthSet(list):
    """List of :class:`GroundTruth` with unique ids."""

    def __init__(self, items: Sequence[GroundTruth] = ()):
        super().__init__(items)
        ids = [g.gt_id for g in self]
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate gt_id values: {dupes}")

    @property
    def has_polygons(self) -> bool:
        return bool(self) and all(g.polygon is not None for g in self)


@dataclass(frozen=True)
class MatchCriterion:
    """``kind="iou"`` matches when IoU >= value; ``kind="distance"`` when center distance <= value."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind == "iou":
            if not 0.0 < self.value <= 1.0:
                raise ValueError(f"IoU criterion needs 0 < tau <= 1, got {self.value}")
        elif self.kind == "distance":
            if not self.value > 0.0:
                raise ValueError(f"distance criterion needs delta > 0, got {self.value}")
        else:
            raise ValueError(f"criterion kind must be 'iou' or 'distance', got {self.kind!r}")

    @classmethod
    def default_for(cls, gts: GroundTruthSet) -> "MatchCriterion":
        return cls("iou", 0.5) if gts.has_polygons else cls("distance", 100.0)


@dataclass
class MatchResult:
    assignment: dict[str, str]
    tp: int
    fp: int
    fn: int
    duplicates: int
    duplicate_ids: list[str] = field(default_factory=list)
    false_positive_ids: list[str] = field(default_factory=list)


def _score(pred: GeoDetection, gt: GroundTruth, criterion: MatchCriterion):
    """Return a sortable quality (higher is better) or None if the pair does not match."""
    if criterion.kind == "iou":
        if gt.polygon is None:
            raise ValueError(f"ground truth {gt.gt_id!r} has no polygon; use a distance criterion")
        iou = convex_iou(pred.polygon, gt.polygon)
        return iou if iou >= criterion.value else None
    dist = math.hypot(pred.centroid_geo[0] - gt.centroid_geo[0], pred.centroid_geo[1] - gt.centroid_geo[1])
    return -dist if dist <= criterion.value else None


def match_detections(preds: Sequence[GeoDetection], gts: GroundTruthSet,
                     criterion: MatchCriterion | None = None) -> MatchResult:
    """Greedy one-to-one matching by descending confidence.

    Each prediction takes the best still-unmatched ground truth that satisfies
    the criterion.  A prediction whose only matching ground truths are already
    taken counts as a duplicate rather than a false positive.
    """
    if criterion is None:
        criterion = MatchCriterion.default_for(gts)
    order = sorted(preds, key=lambda d: (-d.confidence, d.patch_id, d.detection_id))
    matched: dict[str, str] = {}
    taken: set[str] = set()
    dup_ids, fp_ids = [], []
    for pred in order:
        best, best_score = None, None
        any_match = False
        for gt in sorted(gts, key=lambda g: g.gt_id):
            score = _score(pred, gt, criterion)
            if score is None:
                continue
            any_match = True
            if gt.gt_id in taken:
                continue
            if best_score is None or score > best_score:
                best, best_score = gt, score
        if best is not None:
            matched[pred.detection_id] = best.gt_id
            taken.add(best.gt_id)
        elif any_match:
            dup_ids.append(pred.detection_id)
        else:
            fp_ids.append(pred.detection_id)
    tp = len(matched)
    return MatchResult(matched, tp, len(fp_ids), len(gts) - tp, len(dup_ids), dup_ids, fp_ids)


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float


def compute_metrics(tp: int, fp: int, fn: int) -> Metrics:
    """Precision, recall and F1; any zero denominator yields 0."""
    if min(tp, fp, fn) < 0:
        raise ValueError(f"counts must be nonnegative, got tp={tp}, fp={fp}, fn={fn}")
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return Metrics(precision, recall, f1)


@dataclass
class EvaluationReport:
    tp: int
    fp: int
    fn: int
    duplicates: int
    precision: float
    recall: float
    f1: float
    time_seconds: dict[str, float] = field(default_factory=dict)
    label: str = ""

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, duplicates: int = 0, label: str = "",
                    time_seconds: dict[str, float] | None = None) -> "EvaluationReport":
        m = compute_metrics(tp, fp, fn)
        return cls(tp, fp, fn, duplicates, m.precision, m.recall, m.f1, dict(time_seconds or {}), label)

    @classmethod
    def from_match(cls, result: MatchResult, label: str = "", time_seconds=None) -> "EvaluationReport":
        return cls.from_counts(result.tp, result.fp, result.fn, result.duplicates, label, time_seconds)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["TN"] = None
        data["time_total_seconds"] = sum(self.time_seconds.values())
        return data


_COLUMNS = ("TP", "TN", "FP", "FN", "Duplicates", "Precision", "Recall", "F1 score", "Time (s)")


def format_table(reports: Sequence[EvaluationReport]) -> str:
    """Aligned text table: TP, TN, FP, FN, duplicates, P/R/F1, time. TN is shown as ``-``."""
    rows = []
    for r in reports:
        total = sum(r.time_seconds.values())
        rows.append([
            r.label or "-",
            str(r.tp),
            "-",
            str(r.fp),
            str(r.fn),
            str(r.duplicates),
            f"{r.precision:.3f}",
            f"{r.recall:.3f}",
            f"{r.f1:.3f}",
            f"{total:.3f}" if r.time_seconds else "-",
        ])
    header = ["Run", *_COLUMNS]
    widths = [max(len(header[i]), *(len(row[i]) for row in rows)) if rows else len(header[i]) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))))
    return "\n".join(lines)


def mask_confusion(predicted: np.ndarray, truth: np.ndarray) -> dict[str, int]:
    """Pixel-level confusion counts for a stage-1 mask (the only place TN is computed)."""
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if predicted.shape != truth.shape:
        raise ValueError(f"mask shapes differ: {predicted.shape} vs {truth.shape}")
    return {
        "tp": int((predicted & truth).sum()),
        "tn": int((~predicted & ~truth).sum()),
        "fp": int((predicted & ~truth).sum()),
        "fn": int((~predicted & truth).sum()),
    }


# --------------------------------------------------------------------------
# Workload


@dataclass
class WorkloadReport:
    patches_examined: int
    patches_total: int
    reduction_ratio: float
    repeats: int
    timings_ms: dict[str, float]

    def to_dict(self) -> dict:
        return asdict(self)


def benchmark(reports: PipelineReport | Sequence[PipelineReport], baseline: int) -> WorkloadReport:
    """Patch-count reduction versus full coverage, with stage timings averaged over runs.

    ``baseline`` is the number of patches a full-coverage detector would
    examine.  ``reduction_ratio = baseline / max(examined, 1)``.
    """
    if isinstance(reports, PipelineReport):
        reports = [reports]
    if not reports:
        raise ValueError("benchmark needs at least one pipeline report")
    examined = len(reports[0].patches)
    if any(len(r.patches) != examined for r in reports):
        raise ValueError("repeated runs examined different patch sets")
    if baseline < examined:
        raise ValueError(f"baseline {baseline} is smaller than the {examined} examined patches")
    stages = sorted({k for r in reports for k in r.timings_ms})
    timings = {k: fmean(r.timings_ms.get(k, 0.0) for r in reports) for k in stages}
    return WorkloadReport(examined, baseline, baseline / max(examined, 1), len(reports), timings)


def repeat_runs(run, repeats: int = 5) -> list[PipelineReport]:
    """Call ``run()`` ``repeats`` times (timings are averaged by :func:`benchmark`)."""
    if repeats < 1:
        raise ValueError(f"repeats must be at least 1, got {repeats}")
    return [run() for _ in range(repeats)]


# --------------------------------------------------------------------------
# Ground-truth IO


def read_ground_truth(path) -> GroundTruthSet:
    """Load ground truth from GeoJSON (Point or Polygon features) or CSV (gt_id, lon, lat)."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"gt_id", "lon", "lat"} - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: missing CSV column(s) {sorted(missing)}")
            return GroundTruthSet(
                GroundTruth(row["gt_id"], (float(row["lon"]), float(row["lat"])),
                            theta=float(row["theta"]) if row.get("theta") not in (None, "") else None)
                for row in reader
            )
    with open(path) as fh:
        data = json.load(fh)
    items = []
    for i, feat in enumerate(data.get("features", [])):
        props = feat.get("properties") or {}
        geom = feat["geometry"]
        gt_id = str(props.get("gt_id", i))
        theta = props.get("theta")
        if geom["type"] == "Point":
            x, y = geom["coordinates"][:2]
            items.append(GroundTruth(gt_id, (float(x), float(y)), theta=theta))
        elif geom["type"] == "Polygon":
            ring = [tuple(map(float, p[:2])) for p in geom["coordinates"][0]]
            if len(ring) > 1 and ring[0] == ring[-1]:
                ring = ring[:-1]
            cx = sum(p[0] for p in ring) / len(ring)
            cy = sum(p[1] for p in ring) / len(ring)
            items.append(GroundTruth(gt_id, (cx, cy), tuple(ring), theta))
        else:
            raise ValueError(f"{path}: unsupported geometry type {geom['type']!r}")
    return GroundTruthSet(items)
