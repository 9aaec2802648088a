"""Seeded synthetic scenes: vegetated background with planted kiln signatures.

Stage-1 pixels are 10 m, the SWIR band is stored at 20 m, and the stage-2
grid uses 0.5 m pixels so that one 256-pixel patch spans 128 m (12.8 stage-1
pixels).  Ordinary kilns are placed inside a single stage-2 patch; the
optional straddling kiln sits on a patch boundary and shows up in stage 1 as
two separate blobs, one on each side.
"""

from __future__ import annotations

import json
import math
import shlex
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import DEFAULT_PATCH_SIZE
from .geometry import THETA_CLASSES, OrientedBox, box_corners
from .raster import BandRaster, GeoTransform, MultiSpectralTile, normalize_reflectance, pixel_to_geo, resample_nearest, save_band

# Digital numbers (reflectance x 10000): mean and noise amplitude per band.
BACKGROUND_DN = {"Blue": (400, 40), "Green": (700, 60), "Red": (500, 50), "NIR": (4000, 300), "SWIR": (2000, 150)}
KILN_DN = {"Blue": (1500, 50), "Green": (2000, 50), "Red": (2500, 50), "NIR": (2800, 50), "SWIR": (3500, 50)}

STAGE1_PIXEL_M = 10.0
STAGE2_PIXEL_M = 0.5
DEFAULT_ORIGIN = (500000.0, 3500000.0)
DEFAULT_CRS = "EPSG:32643"


@dataclass
class PlantedKiln:
    kiln_id: str
    blocks: list[tuple[int, int, int, int]]  # (row0, col0, height, width) in stage-1 pixels
    stage2_box: OrientedBox  # global stage-2 pixel frame
    straddles: bool = False

    @property
    def pixel_count(self) -> int:
        return sum(h * w for _, _, h, w in self.blocks)


@dataclass
class SyntheticScene:
    raw_bands: dict[str, BandRaster]
    geotransform: GeoTransform
    swir_geotransform: GeoTransform
    stage2_gt: GeoTransform
    stage2_shape: tuple[int, int]
    kilns: list[PlantedKiln]
    seed: int
    patch_size: int = DEFAULT_PATCH_SIZE
    tile_id: str = "synthetic"
    extra: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.raw_bands["Red"].shape

    def truth_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for kiln in self.kilns:
            for r0, c0, h, w in kiln.blocks:
                mask[r0:r0 + h, c0:c0 + w] = True
        return mask

    def planted_fraction(self) -> float:
        return float(self.truth_mask().mean())

    def tile(self, scale: float = 10000.0) -> MultiSpectralTile:
        """Reflectance tile with SWIR upsampled to the 10 m grid."""
        height, width = self.shape
        bands = {}
        for role, raw in self.raw_bands.items():
            band = normalize_reflectance(raw, scale)
            if band.shape != (height, width):
                band = resample_nearest(band, width, height)
            bands[role] = band
        return MultiSpectralTile(bands, self.geotransform, self.tile_id)

    def truth_geojson(self) -> dict:
        features = []
        for kiln in self.kilns:
            b = kiln.stage2_box
            ring = [list(map(float, pixel_to_geo(self.stage2_gt, x, y))) for x, y in box_corners(b)]
            ring.append(ring[0])
            cx, cy = pixel_to_geo(self.stage2_gt, b.cx, b.cy)
            features.append({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": {
                    "gt_id": kiln.kiln_id,
                    "centroid": [float(cx), float(cy)],
                    "stage2_box": [b.cx, b.cy, b.w, b.h, b.theta],
                    "straddles": kiln.straddles,
                },
            })
        return {
            "type": "FeatureCollection",
            "crs": {"type": "name", "properties": {"name": self.geotransform.crs}},
            "features": features,
        }

    def write(self, out_dir) -> dict[str, Path]:
        """Write band files, ground truth and a run config; returns their paths."""
        out_dir = Path(out_dir)
        tile_dir = out_dir / "tile"
        for role, band in self.raw_bands.items():
            gt = self.swir_geotransform if role == "SWIR" else self.geotransform
            save_band(tile_dir / role.lower(), band, geotransform=gt, band_role=role)
        truth = out_dir / "truth.geojson"
        truth.write_text(json.dumps(self.truth_geojson(), indent=2))
        detector = " ".join([shlex.quote(sys.executable), "-m", "kilnscan.stub_detector",
                             "--truth", shlex.quote(str(truth.resolve())), "{patches}"])
        config = {
            "tile": "tile",
            "scale": 10000.0,
            "stage2_geotransform": list(self.stage2_gt.coefficients),
            "stage2_crs": self.stage2_gt.crs,
            "stage2_shape": list(self.stage2_shape),
            "patch_size": self.patch_size,
            "detector": detector,
            "ground_truth": "truth.geojson",
            "out_dir": "out",
        }
        config_path = out_dir / "run.json"
        config_path.write_text(json.dumps(config, indent=2))
        return {"tile": tile_dir, "truth": truth, "config": config_path}


def _noisy(rng, shape, mean, amp):
    return rng.uniform(mean - amp, mean + amp, size=shape)


def generate_scene(seed: int, width: int = 1024, height: int = 1024, n_kilns: int = 40, kiln_px: int = 4,
                   straddle: bool = False, origin=DEFAULT_ORIGIN, crs: str = DEFAULT_CRS,
                   patch_size: int = DEFAULT_PATCH_SIZE) -> SyntheticScene:
    """Build a scene with ``n_kilns`` square ``kiln_px`` blobs on a vegetated background.

    Kilns occupy distinct, mutually non-adjacent stage-2 patches.  Blob
    positions and sizes are even so they align with the 20 m SWIR grid.
    """
    if width % 2 or height % 2 or kiln_px % 2 or kiln_px <= 0:
        raise ValueError("width, height and kiln_px must be positive even numbers")
    rng = np.random.default_rng(seed)
    gt = GeoTransform(origin[0], STAGE1_PIXEL_M, 0.0, origin[1], 0.0, -STAGE1_PIXEL_M, crs)
    swir_gt = GeoTransform(origin[0], 2 * STAGE1_PIXEL_M, 0.0, origin[1], 0.0, -2 * STAGE1_PIXEL_M, crs)
    zoom = STAGE1_PIXEL_M / STAGE2_PIXEL_M
    stage2_gt = GeoTransform(origin[0], STAGE2_PIXEL_M, 0.0, origin[1], 0.0, -STAGE2_PIXEL_M, crs)
    stage2_shape = (int(width * zoom), int(height * zoom))
    cell = patch_size / zoom  # patch size in stage-1 pixels

    n_cols = int(width // cell)
    n_rows = int(height // cell)
    # even-indexed cells are never adjacent to each other
    cells = [(r, c) for r in range(0, n_rows - 1, 2) for c in range(0, n_cols - 1, 2)]
    straddle_cell = None
    if straddle:
        # odd row, boundary between odd column j and j + 1
        straddle_cell = (1, 1)
        cells = [rc for rc in cells if max(abs(rc[0] - 1), min(abs(rc[1] - 1), abs(rc[1] - 2))) > 1]
    if n_kilns > len(cells):
        raise ValueError(f"scene fits at most {len(cells)} kilns, asked for {n_kilns}")
    chosen = sorted(cells[i] for i in rng.choice(len(cells), size=n_kilns, replace=False))

    kilns = []
    half = kiln_px // 2
    for k, (r, c) in enumerate(chosen):
        cy = (r + 0.5) * cell
        cx = (c + 0.5) * cell
        row0 = 2 * round((cy - half) / 2)
        col0 = 2 * round((cx - half) / 2)
        theta = float(THETA_CLASSES[int(rng.integers(len(THETA_CLASSES)))].value)
        center = ((col0 + half) * zoom, (row0 + half) * zoom)
        box = OrientedBox(center[0], center[1], kiln_px * zoom * 1.1, kiln_px * zoom * 0.6, theta)
        kilns.append(PlantedKiln(f"kiln-{k:03d}", [(row0, col0, kiln_px, kiln_px)], box))

    if straddle_cell is not None:
        r, c = straddle_cell
        boundary = (c + 1) * cell
        col_a = 2 * math.floor((boundary - 3) / 2)
        col_b = 2 * math.ceil((boundary + 1) / 2)
        row0 = 2 * round(((r + 0.5) * cell - half) / 2)
        blocks = [(row0, col_a, kiln_px, 2), (row0, col_b, kiln_px, 2)]
        x0, x1 = col_a * zoom, (col_b + 2) * zoom
        box = OrientedBox((x0 + x1) / 2, (row0 + half) * zoom, x1 - x0, kiln_px * zoom, 0.0)
        kilns.append(PlantedKiln("kiln-straddle", blocks, box, straddles=True))

    truth = np.zeros((height, width), dtype=bool)
    for kiln in kilns:
        for r0, c0, h, w in kiln.blocks:
            truth[r0:r0 + h, c0:c0 + w] = True
    raw = {}
    for role in ("Blue", "Green", "Red", "NIR", "SWIR"):
        values = _noisy(rng, (height, width), *BACKGROUND_DN[role])
        kiln_values = _noisy(rng, (height, width), *KILN_DN[role])
        values = np.where(truth, kiln_values, values)
        if role == "SWIR":
            values = values.reshape(height // 2, 2, width // 2, 2).mean(axis=(1, 3))
        raw[role] = BandRaster(np.rint(values).astype(np.uint16), None, None)
    return SyntheticScene(raw, gt, swir_gt, stage2_gt, stage2_shape, kilns, seed, patch_size)
