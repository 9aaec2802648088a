"""Hand-built tiles for pipeline and CLI tests."""

import numpy as np

from kilnscan.raster import BandRaster, GeoTransform, MultiSpectralTile, save_band
from kilnscan.synthetic import BACKGROUND_DN, KILN_DN

ROLES = ("Blue", "Green", "Red", "NIR", "SWIR")
GT10 = GeoTransform(500000.0, 10.0, 0.0, 3500000.0, 0.0, -10.0, "EPSG:32643")
GT_HI = GeoTransform(500000.0, 0.5, 0.0, 3500000.0, 0.0, -0.5, "EPSG:32643")


def paint_dn(blocks, shape=(64, 64), seed=0):
    """Vegetated DN bands with kiln signatures painted into ``(row0, col0, h, w)`` blocks."""
    rng = np.random.default_rng(seed)
    kiln = np.zeros(shape, bool)
    for r0, c0, h, w in blocks:
        kiln[r0:r0 + h, c0:c0 + w] = True
    out = {}
    for role in ROLES:
        mean, amp = BACKGROUND_DN[role]
        bg = rng.uniform(mean - amp, mean + amp, shape)
        out[role] = np.rint(np.where(kiln, KILN_DN[role][0], bg)).astype(np.uint16)
    return out


def paint_tile(blocks, shape=(64, 64), seed=0):
    bands = {r: BandRaster((v / 10000.0).astype(np.float32)) for r, v in paint_dn(blocks, shape, seed).items()}
    return MultiSpectralTile(bands, GT10, "painted")


def write_dn_tile(directory, blocks, shape=(64, 64), seed=0, roles=ROLES):
    for role, values in paint_dn(blocks, shape, seed).items():
        if role in roles:
            save_band(directory / role.lower(), BandRaster(values, None, None), geotransform=GT10, band_role=role)
    return directory
