"""Band rasters, affine geotransforms and multi-spectral tiles.

Bands are stored on disk as a raw little-endian payload (``.bin``) next to a
JSON sidecar (``.json``) with the same stem::

    {"width": 2, "height": 2, "dtype": "f32", "nodata": null,
     "geotransform": [0, 1, 0, 0, 0, 1], "crs": "EPSG:32643",
     "band_role": "NIR"}

Pixel coordinates follow the pixel-corner convention: pixel ``(col, row)``
covers ``[col, col + 1) x [row, row + 1)`` and its center is at
``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

BAND_ROLES = ("Blue", "Green", "Red", "NIR", "SWIR")

DTYPES = {"f32": np.dtype("<f4"), "u16": np.dtype("<u2")}

DEFAULT_REFLECTANCE_SCALE = 10000.0


class RasterFormatError(ValueError):
    """Raised for malformed sidecars or payloads."""


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class BandRaster:
    """A single band of values with a nodata mask.

    ``values`` and ``nodata_mask`` are read-only ``(height, width)`` arrays.
    Values keep the dtype they were loaded with (raw ``uint16`` DN or
    ``float32`` reflectance) until :func:`normalize_reflectance` is applied.
    """

    values: np.ndarray
    nodata_mask: np.ndarray | None = None
    nodata: float | None = None

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2 or values.size == 0:
            raise ValueError(f"band values must be a non-empty 2-D array, got shape {values.shape}")
        if self.nodata_mask is None:
            mask = np.zeros(values.shape, dtype=bool)
        else:
            mask = np.asarray(self.nodata_mask, dtype=bool)
        if mask.shape != values.shape:
            raise ValueError(f"nodata mask shape {mask.shape} != values shape {values.shape}")
        if values.dtype.kind == "f":
            mask = mask | ~np.isfinite(values)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "nodata_mask", _frozen(mask))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class GeoTransform:
    """Six-coefficient affine map from pixel to CRS coordinates (GDAL order)."""

    origin_x: float
    pixel_width: float
    row_rotation: float
    origin_y: float
    col_rotation: float
    pixel_height: float
    crs: str = ""

    def __post_init__(self):
        coeffs = self.coefficients
        if not all(math.isfinite(c) for c in coeffs):
            raise ValueError(f"geotransform coefficients must be finite: {coeffs}")
        if self.determinant == 0.0:
            raise ValueError(f"geotransform linear part is singular: {coeffs}")

    @classmethod
    def from_sequence(cls, coeffs, crs: str = "") -> "GeoTransform":
        coeffs = [float(c) for c in coeffs]
        if len(coeffs) != 6:
            raise ValueError(f"geotransform needs 6 coefficients, got {len(coeffs)}")
        return cls(*coeffs, crs=crs)

    @property
    def coefficients(self) -> tuple[float, ...]:
        return (
            self.origin_x,
            self.pixel_width,
            self.row_rotation,
            self.origin_y,
            self.col_rotation,
            self.pixel_height,
        )

    @property
    def determinant(self) -> float:
        return self.pixel_width * self.pixel_height - self.row_rotation * self.col_rotation

    def shifted(self, col0: float, row0: float) -> "GeoTransform":
        """Transform whose pixel (0, 0) is this transform's pixel (col0, row0)."""
        x0, y0 = pixel_to_geo(self, col0, row0)
        return GeoTransform(
            x0, self.pixel_width, self.row_rotation, y0, self.col_rotation, self.pixel_height, self.crs
        )


IDENTITY = GeoTransform(0.0, 1.0, 0.0, 0.0, 0.0, 1.0)


def pixel_to_geo(gt: GeoTransform, col, row):
    """Map fractional pixel coordinates to CRS coordinates.

    Works on scalars or numpy arrays.
    """
    geo_x = gt.origin_x + col * gt.pixel_width + row * gt.row_rotation
    geo_y = gt.origin_y + col * gt.col_rotation + row * gt.pixel_height
    return geo_x, geo_y


def geo_to_pixel(gt: GeoTransform, geo_x, geo_y):
    """Inverse of :func:`pixel_to_geo`."""
    dx = geo_x - gt.origin_x
    dy = geo_y - gt.origin_y
    det = gt.determinant
    col = (gt.pixel_height * dx - gt.row_rotation * dy) / det
    row = (gt.pixel_width * dy - gt.col_rotation * dx) / det
    return col, row


@dataclass(frozen=True, eq=False)
class MultiSpectralTile:
    """Co-registered bands keyed by role, sharing one geotransform."""

    bands: Mapping[str, BandRaster]
    geotransform: GeoTransform = IDENTITY
    tile_id: str = "tile"
    _shape: tuple[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.bands:
            raise ValueError("a tile needs at least one band")
        unknown = set(self.bands) - set(BAND_ROLES)
        if unknown:
            raise ValueError(f"unknown band roles {sorted(unknown)}; valid roles are {BAND_ROLES}")
        shapes = {role: band.shape for role, band in self.bands.items()}
        if len(set(shapes.values())) != 1:
            raise ValueError(f"bands are not co-registered: {shapes}")
        object.__setattr__(self, "bands", dict(self.bands))
        object.__setattr__(self, "_shape", next(iter(shapes.values())))

    @property
    def shape(self) -> tuple[int, int]:
        return self._shape

    @property
    def width(self) -> int:
        return self._shape[1]

    @property
    def height(self) -> int:
        return self._shape[0]

    def require(self, *roles: str) -> list[BandRaster]:
        missing = [r for r in roles if r not in self.bands]
        if missing:
            raise KeyError(f"tile {self.tile_id!r} is missing band(s): {', '.join(missing)}")
        return [self.bands[r] for r in roles]

    def nodata_union(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for band in self.bands.values():
            mask |= band.nodata_mask
        return mask


# --------------------------------------------------------------------------
# Band file IO


def _parse_header(header: Mapping) -> tuple[int, int, np.dtype, float | None]:
    try:
        width = int(header["width"])
        height = int(header["height"])
        dtype_name = header["dtype"]
    except (KeyError, TypeError, ValueError) as exc:
        raise RasterFormatError(f"malformed band header: {exc!r}") from exc
    if width <= 0 or height <= 0:
        raise RasterFormatError(f"band dimensions must be positive, got {width}x{height}")
    if dtype_name not in DTYPES:
        raise RasterFormatError(f"unsupported dtype {dtype_name!r}; expected one of {sorted(DTYPES)}")
    nodata = header.get("nodata")
    if nodata is not None and not isinstance(nodata, (int, float)):
        raise RasterFormatError(f"nodata must be a number or null, got {nodata!r}")
    return width, height, DTYPES[dtype_name], nodata


def load_band(path, header: Mapping) -> BandRaster:
    """Read a raw band payload described by ``header``.

    Pixels equal to the header's nodata sentinel are masked; stored values are
    left untouched.
    """
    width, height, dtype, nodata = _parse_header(header)
    try:
        payload = Path(path).read_bytes()
    except OSError as exc:
        raise RasterFormatError(f"cannot read band payload {path}: {exc}") from exc
    expected = width * height * dtype.itemsize
    if len(payload) != expected:
        raise RasterFormatError(
            f"{path}: header declares {width}x{height} {header['dtype']} "
            f"({expected} bytes) but payload has {len(payload)} bytes"
        )
    values = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    mask = np.zeros(values.shape, dtype=bool) if nodata is None else values == nodata
    return BandRaster(values, mask, nodata)


def read_header(sidecar) -> dict:
    try:
        with open(sidecar) as fh:
            header = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise RasterFormatError(f"cannot read sidecar {sidecar}: {exc}") from exc
    if not isinstance(header, dict):
        raise RasterFormatError(f"sidecar {sidecar} must hold a JSON object")
    return header


def payload_path(sidecar) -> Path:
    return Path(sidecar).with_suffix(".bin")


def read_band(sidecar) -> tuple[BandRaster, dict]:
    """Load ``<stem>.bin`` using the ``<stem>.json`` sidecar; returns band and header."""
    header = read_header(sidecar)
    return load_band(payload_path(sidecar), header), header


def save_band(path, band: BandRaster, **header_fields) -> Path:
    """Write ``band`` as ``<stem>.bin`` plus ``<stem>.json``; returns the sidecar path.

    Extra keyword arguments (``geotransform``, ``crs``, ``band_role`` ...) are
    copied into the sidecar.
    """
    sidecar = Path(path).with_suffix(".json")
    sidecar.parent.mkdir(parents=True, exist_ok=True)
    kind = band.values.dtype
    if kind == np.uint16:
        dtype_name = "u16"
    elif kind == np.float32:
        dtype_name = "f32"
    else:
        raise RasterFormatError(f"band dtype {kind} has no file encoding; cast to float32 or uint16")
    values = band.values
    if band.nodata_mask.any():
        if band.nodata is None:
            raise RasterFormatError("band has masked pixels but no nodata sentinel to write")
        values = np.where(band.nodata_mask, band.nodata, values).astype(kind)
    gt = header_fields.pop("geotransform", None)
    if isinstance(gt, GeoTransform):
        header_fields.setdefault("crs", gt.crs)
        gt = list(gt.coefficients)
    header = {
        "width": band.width,
        "height": band.height,
        "dtype": dtype_name,
        "nodata": band.nodata,
        "geotransform": gt if gt is not None else list(IDENTITY.coefficients),
        "crs": header_fields.pop("crs", ""),
    }
    header.update(header_fields)
    payload_path(sidecar).write_bytes(values.astype(DTYPES[dtype_name], copy=False).tobytes())
    sidecar.write_text(json.dumps(header, indent=2))
    return sidecar


# --------------------------------------------------------------------------
# Radiometry and resampling


def normalize_reflectance(raw: BandRaster, scale: float = DEFAULT_REFLECTANCE_SCALE) -> BandRaster:
    """Divide digital numbers by ``scale`` to get surface reflectance (float32)."""
    if not scale > 0 or not math.isfinite(scale):
        raise ValueError(f"reflectance scale must be positive, got {scale}")
    values = raw.values.astype(np.float64) / scale
    values[raw.nodata_mask] = 0.0
    nodata = None if raw.nodata is None else float(np.float32(raw.nodata / scale))
    return BandRaster(values.astype(np.float32), raw.nodata_mask, nodata)


def resample_nearest(src: BandRaster, target_width: int, target_height: int) -> BandRaster:
    """Nearest-neighbour resample; target pixel ``i`` samples ``floor(i * src / target)``."""
    if target_width <= 0 or target_height <= 0:
        raise ValueError(f"target dimensions must be positive, got {target_width}x{target_height}")
    cols = (np.arange(target_width) * src.width) // target_width
    rows = (np.arange(target_height) * src.height) // target_height
    index = np.ix_(rows, cols)
    return BandRaster(src.values[index], src.nodata_mask[index], src.nodata)


# --------------------------------------------------------------------------
# Tiles


def load_tile(directory, scale: float | None = DEFAULT_REFLECTANCE_SCALE, tile_id: str | None = None) -> MultiSpectralTile:
    """Load every band sidecar in ``directory`` into a co-registered tile.

    Bands are normalized by ``scale`` (pass ``None`` for payloads that already
    hold reflectance) and coarser bands are upsampled onto the finest grid.
    The geotransform of the finest band is used for the tile.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise RasterFormatError(f"tile directory {directory} does not exist")
    bands: dict[str, BandRaster] = {}
    headers: dict[str, dict] = {}
    for sidecar in sorted(directory.glob("*.json")):
        header = read_header(sidecar)
        role = header.get("band_role")
        if role is None:
            continue
        if role not in BAND_ROLES:
            raise RasterFormatError(f"{sidecar}: unknown band_role {role!r}")
        if role in bands:
            raise RasterFormatError(f"{directory}: duplicate band_role {role!r}")
        band = load_band(payload_path(sidecar), header)
        bands[role] = normalize_reflectance(band, scale) if scale is not None else band
        headers[role] = header
    if not bands:
        raise RasterFormatError(f"no band sidecars found in {directory}")
    finest = max(bands, key=lambda r: bands[r].width * bands[r].height)
    height, width = bands[finest].shape
    for role, band in bands.items():
        if band.shape != (height, width):
            bands[role] = resample_nearest(band, width, height)
    header = headers[finest]
    gt = GeoTransform.from_sequence(header.get("geotransform", IDENTITY.coefficients), header.get("crs", ""))
    return MultiSpectralTile(bands, gt, tile_id or directory.name)


def save_tile(directory, tile: MultiSpectralTile, band_geotransforms: Mapping[str, GeoTransform] | None = None) -> list[Path]:
    directory = Path(directory)
    paths = []
    for role, band in tile.bands.items():
        gt = (band_geotransforms or {}).get(role, tile.geotransform)
        paths.append(save_band(directory / role.lower(), band, geotransform=gt, band_role=role))
    return paths
