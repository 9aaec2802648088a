"""Per-pixel spectral indices used by the kiln classifier.

All arithmetic runs in float64; results are stored as float32.  Pixels where
a denominator falls below :data:`EPS_DEN` in magnitude, or where any input
band is nodata, are marked nodata in the output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import BandRaster, GeoTransform, MultiSpectralTile, RasterFormatError, read_header, load_band, payload_path, save_band

EPS_DEN = 1e-12

INDEX_KINDS = ("NDVI", "EVI", "NDBI", "NDMI", "BAI")
BOUNDED_KINDS = frozenset({"NDVI", "NDBI", "NDMI"})

NDMI_VARIANTS = ("green_swir", "nir_swir")

# Written into index files for nodata pixels.
INDEX_NODATA = float(np.finfo(np.float32).min)


@dataclass(frozen=True, eq=False)
class IndexRaster:
    values: np.ndarray
    nodata_mask: np.ndarray
    index_kind: str

    def __post_init__(self):
        if self.index_kind not in INDEX_KINDS and self.index_kind != "ND":
            raise ValueError(f"unknown index kind {self.index_kind!r}")
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        mask = np.ascontiguousarray(self.nodata_mask, dtype=bool)
        if values.shape != mask.shape or values.ndim != 2:
            raise ValueError(f"values {values.shape} and mask {mask.shape} must be equal 2-D shapes")
        valid = values[~mask]
        if not np.all(np.isfinite(valid)):
            raise ValueError(f"{self.index_kind}: non-nodata values must be finite")
        if self.index_kind in BOUNDED_KINDS or self.index_kind == "ND":
            if valid.size and (valid.min() < -1.0 or valid.max() > 1.0):
                raise ValueError(f"{self.index_kind} values outside [-1, 1]")
        if self.index_kind == "BAI" and valid.size and valid.min() <= 0.0:
            raise ValueError("BAI values must be strictly positive")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "nodata_mask", mask)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _f64(band: BandRaster) -> np.ndarray:
    return band.values.astype(np.float64)


def _finish(num: np.ndarray, den: np.ndarray, mask: np.ndarray, kind: str) -> IndexRaster:
    singular = np.abs(den) < EPS_DEN
    mask = mask | singular
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(mask, 0.0, num / np.where(singular, 1.0, den))
    return IndexRaster(out, mask, kind)


def normalized_difference(a: BandRaster, b: BandRaster, kind: str = "ND") -> IndexRaster:
    """``(a - b) / (a + b)`` per pixel.

    Results outside ``[-1, 1]`` can only come from negative inputs; those
    pixels are treated as undefined and masked.
    """
    if a.shape != b.shape:
        raise ValueError(f"band dimensions differ: {a.shape} vs {b.shape}")
    av, bv = _f64(a), _f64(b)
    out = _finish(av - bv, av + bv, a.nodata_mask | b.nodata_mask, "ND")
    values = out.values
    mask = out.nodata_mask | (values < -1.0) | (values > 1.0)
    return IndexRaster(np.where(mask, 0.0, values), mask, kind)


def ndvi(tile: MultiSpectralTile) -> IndexRaster:
    nir, red = tile.require("NIR", "Red")
    return normalized_difference(nir, red, "NDVI")


def evi(tile: MultiSpectralTile) -> IndexRaster:
    """Enhanced vegetation index, ``2.5 (NIR - Red) / (NIR + 6 Red - 7.5 Blue + 1)``.

    The constant ``1`` assumes unit-scaled reflectance, so EVI is not scale
    invariant.
    """
    nir, red, blue = tile.require("NIR", "Red", "Blue")
    n, r, b = _f64(nir), _f64(red), _f64(blue)
    mask = nir.nodata_mask | red.nodata_mask | blue.nodata_mask
    return _finish(2.5 * (n - r), n + 6.0 * r - 7.5 * b + 1.0, mask, "EVI")


def ndbi(tile: MultiSpectralTile) -> IndexRaster:
    swir, nir = tile.require("SWIR", "NIR")
    return normalized_difference(swir, nir, "NDBI")


def ndmi(tile: MultiSpectralTile, variant: str = "green_swir") -> IndexRaster:
    """Moisture index.

    ``variant="green_swir"`` is ``(Green - SWIR) / (Green + SWIR)``, the form the
    classifier thresholds were set for.  ``"nir_swir"`` gives the more common
    ``(NIR - SWIR) / (NIR + SWIR)``.
    """
    if variant == "green_swir":
        first, swir = tile.require("Green", "SWIR")
    elif variant == "nir_swir":
        first, swir = tile.require("NIR", "SWIR")
    else:
        raise ValueError(f"ndmi_variant must be one of {NDMI_VARIANTS}, got {variant!r}")
    return normalized_difference(first, swir, "NDMI")


def bai(tile: MultiSpectralTile) -> IndexRaster:
    """Burned area index: inverse squared distance to the charcoal point (Red 0.1, NIR 0.06)."""
    red, nir = tile.require("Red", "NIR")
    r, n = _f64(red), _f64(nir)
    den = (0.1 - r) ** 2 + (0.06 - n) ** 2
    return _finish(np.ones_like(den), den, red.nodata_mask | nir.nodata_mask, "BAI")


def compute_all_indices(tile: MultiSpectralTile, ndmi_variant: str = "green_swir") -> dict[str, IndexRaster]:
    """All five indices; a pixel nodata in any band is nodata in every output."""
    tile.require(*("Blue", "Green", "Red", "NIR", "SWIR"))
    raw = {
        "NDVI": ndvi(tile),
        "EVI": evi(tile),
        "NDBI": ndbi(tile),
        "NDMI": ndmi(tile, ndmi_variant),
        "BAI": bai(tile),
    }
    band_mask = tile.nodata_union()
    out = {}
    for kind, index in raw.items():
        mask = index.nodata_mask | band_mask
        out[kind] = IndexRaster(np.where(mask, 0.0, index.values), mask, kind)
    return out


def save_index(path, index: IndexRaster, geotransform: GeoTransform | None = None):
    band = BandRaster(
        np.where(index.nodata_mask, INDEX_NODATA, index.values).astype(np.float32),
        index.nodata_mask,
        INDEX_NODATA,
    )
    return save_band(path, band, geotransform=geotransform, index_kind=index.index_kind)


def read_index(sidecar) -> IndexRaster:
    header = read_header(sidecar)
    kind = header.get("index_kind")
    if kind not in INDEX_KINDS:
        raise RasterFormatError(f"{sidecar}: missing or unknown index_kind {kind!r}")
    band = load_band(payload_path(sidecar), header)
    return IndexRaster(np.where(band.nodata_mask, 0.0, band.values), band.nodata_mask, kind)
