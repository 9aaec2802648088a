"""Threshold fusion of spectral indices into a kiln candidate mask.

A pixel is a candidate iff every conjunct holds strictly::

    NDVI < ndvi_max and EVI < evi_max and NDMI < ndmi_max
    and NDBI > ndbi_min and BAI > bai_min

Candidate pixels are grouped into connected regions whose centroids select
the high-resolution patches examined by the stage-2 detector.

.. note::
   ``bai_min = 5e-8`` only separates anything when BAI is computed from raw
   digital numbers (values around 1e3, BAI around 1e-7).  On unit-scaled
   reflectance BAI is of order 1-100 and the conjunct is almost always true.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .indices import INDEX_KINDS, IndexRaster
from .raster import IDENTITY, GeoTransform, geo_to_pixel, pixel_to_geo

DEFAULT_PATCH_SIZE = 256


@dataclass(frozen=True)
class ClassifierThresholds:
    ndvi_max: float = 0.2
    evi_max: float = 0.2
    ndmi_max: float = 0.0
    ndbi_min: float = 0.0
    bai_min: float = 5e-8

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise ValueError(f"threshold {f.name} must be finite, got {value}")

    @classmethod
    def from_mapping(cls, data: Mapping) -> "ClassifierThresholds":
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown threshold keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class CandidateMask:
    bits: np.ndarray
    tile_id: str = "tile"
    geotransform: GeoTransform = IDENTITY

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise ValueError("candidate mask must be 2-D")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def count(self) -> int:
        return int(self.bits.sum())


@dataclass(frozen=True)
class CandidateRegion:
    region_id: int
    pixel_count: int
    bbox_px: tuple[int, int, int, int]  # min_col, min_row, max_col, max_row (inclusive)
    centroid_px: tuple[float, float]
    centroid_geo: tuple[float, float]


@dataclass(frozen=True)
class PatchRequest:
    patch_id: str
    col0: int
    row0: int
    size: int
    geo_window: tuple[float, float, float, float]
    region_ids: tuple[int, ...] = field(default=(), compare=False)

    def geotransform(self, stage2_gt: GeoTransform) -> GeoTransform:
        """Transform from patch-local pixels to CRS coordinates."""
        return stage2_gt.shifted(self.col0, self.row0)

    def to_dict(self, stage2_gt: GeoTransform | None = None) -> dict:
        out = {
            "patch_id": self.patch_id,
            "col0": self.col0,
            "row0": self.row0,
            "size": self.size,
            "geo_window": list(self.geo_window),
        }
        if stage2_gt is not None:
            out["geotransform"] = list(self.geotransform(stage2_gt).coefficients)
        return out


def classify_pixel(ndvi: float, evi: float, ndmi: float, ndbi: float, bai: float,
                   t: ClassifierThresholds = ClassifierThresholds()) -> int:
    return int(
        ndvi < t.ndvi_max
        and evi < t.evi_max
        and ndmi < t.ndmi_max
        and ndbi > t.ndbi_min
        and bai > t.bai_min
    )


def classify(indices: Mapping[str, IndexRaster], t: ClassifierThresholds = ClassifierThresholds(),
             tile_id: str = "tile", geotransform: GeoTransform = IDENTITY) -> CandidateMask:
    missing = [k for k in INDEX_KINDS if k not in indices]
    if missing:
        raise KeyError(f"missing index raster(s): {', '.join(missing)}")
    shapes = {k: indices[k].shape for k in INDEX_KINDS}
    if len(set(shapes.values())) != 1:
        raise ValueError(f"index rasters differ in shape: {shapes}")
    # float64 so thresholds are not rounded to the rasters' float32
    v = {k: indices[k].values.astype(np.float64) for k in INDEX_KINDS}
    bits = (
        (v["NDVI"] < t.ndvi_max)
        & (v["EVI"] < t.evi_max)
        & (v["NDMI"] < t.ndmi_max)
        & (v["NDBI"] > t.ndbi_min)
        & (v["BAI"] > t.bai_min)
    )
    for k in INDEX_KINDS:
        bits &= ~indices[k].nodata_mask
    return CandidateMask(bits, tile_id, geotransform)


def connected_components(mask: CandidateMask, connectivity: int = 8) -> list[CandidateRegion]:
    """Group candidate pixels into regions ordered by ``(min_row, min_col)`` of their bbox.

    Centroids are the mean of member pixel centers.
    """
    if connectivity == 4:
        structure = ndimage.generate_binary_structure(2, 1)
    elif connectivity == 8:
        structure = ndimage.generate_binary_structure(2, 2)
    else:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    labels, n = ndimage.label(mask.bits, structure=structure)
    if n == 0:
        return []
    slices = ndimage.find_objects(labels)
    idx = np.arange(1, n + 1)
    counts = ndimage.sum_labels(np.ones_like(labels), labels, idx)
    rows, cols = np.indices(labels.shape)
    mean_row = ndimage.mean(rows + 0.5, labels, idx)
    mean_col = ndimage.mean(cols + 0.5, labels, idx)
    order = sorted(range(n), key=lambda i: (slices[i][0].start, slices[i][1].start, i))
    regions = []
    for region_id, i in enumerate(order):
        rs, cs = slices[i]
        cx, cy = float(mean_col[i]), float(mean_row[i])
        gx, gy = pixel_to_geo(mask.geotransform, cx, cy)
        regions.append(
            CandidateRegion(
                region_id=region_id,
                pixel_count=int(counts[i]),
                bbox_px=(cs.start, rs.start, cs.stop - 1, rs.stop - 1),
                centroid_px=(cx, cy),
                centroid_geo=(float(gx), float(gy)),
            )
        )
    return regions


def filter_rate(mask: CandidateMask) -> float:
    """Fraction of pixels rejected by the classifier."""
    total = mask.bits.size
    if total == 0:
        raise ValueError("filter rate of an empty mask is undefined")
    return (total - mask.count) / total


def candidate_patches(regions: Sequence[CandidateRegion], stage2_gt: GeoTransform,
                      patch_size: int = DEFAULT_PATCH_SIZE,
                      stage2_shape: tuple[int, int] | None = None):
    """Snap region centroids onto the stage-2 patch grid.

    The grid is anchored at the stage-2 raster origin; a centroid at stage-2
    pixel ``(c, r)`` lands in the window starting at
    ``(floor(c / size) * size, floor(r / size) * size)``.  Regions sharing a
    window are merged into one request.

    ``stage2_shape`` is ``(width, height)`` of the stage-2 raster; centroids
    outside it (or at negative pixel coordinates) are skipped.

    Returns ``(patches, skipped_region_ids)`` with patches sorted by
    ``(row0, col0)``.
    """
    if patch_size <= 0:
        raise ValueError(f"patch size must be positive, got {patch_size}")
    windows: dict[tuple[int, int], list[int]] = {}
    skipped = []
    for region in regions:
        col, row = geo_to_pixel(stage2_gt, *region.centroid_geo)
        inside = col >= 0 and row >= 0
        if stage2_shape is not None:
            inside = inside and col < stage2_shape[0] and row < stage2_shape[1]
        if not inside:
            skipped.append(region.region_id)
            continue
        col0 = math.floor(col / patch_size) * patch_size
        row0 = math.floor(row / patch_size) * patch_size
        windows.setdefault((row0, col0), []).append(region.region_id)
    patches = []
    for (row0, col0), ids in sorted(windows.items()):
        x0, y0 = pixel_to_geo(stage2_gt, col0, row0)
        x1, y1 = pixel_to_geo(stage2_gt, col0 + patch_size, row0 + patch_size)
        patches.append(
            PatchRequest(
                patch_id=f"r{row0}_c{col0}",
                col0=col0,
                row0=row0,
                size=patch_size,
                geo_window=(float(x0), float(y0), float(x1), float(y1)),
                region_ids=tuple(ids),
            )
        )
    return patches, skipped


def grid_patch_count(stage2_shape: tuple[int, int], patch_size: int = DEFAULT_PATCH_SIZE) -> int:
    """Number of grid windows needed to cover a ``(width, height)`` raster."""
    width, height = stage2_shape
    return math.ceil(width / patch_size) * math.ceil(height / patch_size)


# --------------------------------------------------------------------------
# Export


def regions_to_geojson(regions: Sequence[CandidateRegion], crs: str = "") -> dict:
    features = [
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": list(r.centroid_geo)},
            "properties": {"region_id": r.region_id, "pixel_count": r.pixel_count},
        }
        for r in regions
    ]
    out = {"type": "FeatureCollection", "features": features}
    if crs:
        out["crs"] = {"type": "name", "properties": {"name": crs}}
    return out


def write_regions(regions: Sequence[CandidateRegion], out_dir, crs: str = "") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    geojson = out_dir / "regions.geojson"
    geojson.write_text(json.dumps(regions_to_geojson(regions, crs), indent=2))
    table = out_dir / "regions.csv"
    with open(table, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region_id", "lon", "lat", "pixel_count"])
        for r in regions:
            writer.writerow([r.region_id, repr(r.centroid_geo[0]), repr(r.centroid_geo[1]), r.pixel_count])
    return geojson, table
