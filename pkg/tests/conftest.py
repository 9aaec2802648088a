import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kilnscan.raster import BandRaster, GeoTransform, MultiSpectralTile  # noqa: E402

CRITERIA: dict[str, tuple[bool, str]] = {}


def record(name: str, ok: bool, detail: str = ""):
    CRITERIA[name] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(CRITERIA):
        ok, detail = CRITERIA[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


def constant_tile(shape=(3, 3), **values):
    """Float64 tile of constant bands so decimal examples stay exact; unspecified roles are 0.5."""
    bands = {}
    for role in ("Blue", "Green", "Red", "NIR", "SWIR"):
        v = values.get(role, 0.5)
        if v is None:
            continue
        bands[role] = BandRaster(np.full(shape, v, dtype=np.float64))
    return MultiSpectralTile(bands, GeoTransform(100.0, 10.0, 0.0, 500.0, 0.0, -10.0, "EPSG:32643"), "const")


@pytest.fixture
def utm_gt():
    return GeoTransform(100.0, 10.0, 0.0, 500.0, 0.0, -10.0, "EPSG:32643")
