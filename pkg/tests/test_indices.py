import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import constant_tile
from kilnscan.indices import (
    IndexRaster,
    bai,
    compute_all_indices,
    evi,
    ndbi,
    ndmi,
    ndvi,
    normalized_difference,
    read_index,
    save_index,
)
from kilnscan.raster import BandRaster, MultiSpectralTile
from oracles import scalar_index


def band(v, shape=(1, 1)):
    return BandRaster(np.full(shape, v, dtype=np.float32))


def approx(x):
    # inputs are float32, so compare at float32 precision
    return pytest.approx(x, rel=1e-6)


def test_normalized_difference_examples():
    assert normalized_difference(band(0.5), band(0.3)).values[0, 0] == approx(0.25)
    assert normalized_difference(band(0.4), band(0.4)).values[0, 0] == 0.0
    out = normalized_difference(band(0.0), band(0.0))
    assert out.nodata_mask[0, 0]


def test_normalized_difference_dimension_mismatch():
    with pytest.raises(ValueError, match="dimensions"):
        normalized_difference(band(0.1, (2, 2)), band(0.1, (2, 3)))


def test_ndvi_examples():
    assert ndvi(constant_tile(NIR=0.5, Red=0.3)).values[0, 0] == approx(0.25)
    assert ndvi(constant_tile(NIR=0.3, Red=0.3)).values[0, 0] == 0.0
    assert ndvi(constant_tile(NIR=0.5, Red=0.0)).values[0, 0] == 1.0


def test_evi_examples():
    assert evi(constant_tile(NIR=0.5, Red=0.3, Blue=0.1)).values[0, 0] == approx(0.19607843137254904)
    assert evi(constant_tile(NIR=0.3, Red=0.3, Blue=0.2)).values[0, 0] == 0.0
    # 0.5 + 6 * 0.25 - 7.5 * 0.4 + 1 == 0
    assert evi(constant_tile(NIR=0.5, Red=0.25, Blue=0.4)).nodata_mask.all()


def test_ndbi_examples():
    assert ndbi(constant_tile(SWIR=0.4, NIR=0.2)).values[0, 0] == approx(1 / 3)
    assert ndbi(constant_tile(SWIR=0.3, NIR=0.3)).values[0, 0] == 0.0
    assert ndbi(constant_tile(SWIR=0.0, NIR=0.3)).values[0, 0] == -1.0


def test_ndmi_examples():
    assert ndmi(constant_tile(Green=0.2, SWIR=0.4)).values[0, 0] == approx(-1 / 3)
    assert ndmi(constant_tile(Green=0.3, SWIR=0.3)).values[0, 0] == 0.0
    assert ndmi(constant_tile(Green=0.4, SWIR=0.0)).values[0, 0] == 1.0


def test_ndmi_variant():
    tile = constant_tile(Green=0.2, NIR=0.6, SWIR=0.2)
    assert ndmi(tile).values[0, 0] == 0.0
    assert ndmi(tile, "nir_swir").values[0, 0] == approx(0.5)
    with pytest.raises(ValueError, match="ndmi_variant"):
        ndmi(tile, "nir")


def test_bai_examples():
    assert bai(constant_tile(Red=0.3, NIR=0.5)).values[0, 0] == approx(4.28082191780822)
    assert bai(constant_tile(Red=0.1, NIR=0.06)).nodata_mask.all()
    assert bai(constant_tile(Red=1.1, NIR=0.06)).values[0, 0] == 1.0


def test_compute_all_constant_tile():
    out = compute_all_indices(constant_tile())
    assert set(out) == {"NDVI", "EVI", "NDBI", "NDMI", "BAI"}
    for kind in ("NDVI", "EVI", "NDBI", "NDMI"):
        assert np.all(out[kind].values == 0.0)
    # 1 / (0.4**2 + 0.44**2)
    assert out["BAI"].values.tolist() == [[approx(2.8280542986425337)] * 3] * 3


def test_compute_all_propagates_band_nodata():
    tile = constant_tile()
    mask = np.zeros((3, 3), bool)
    mask[1, 2] = True
    bands = dict(tile.bands)
    bands["Blue"] = BandRaster(bands["Blue"].values, mask)
    out = compute_all_indices(MultiSpectralTile(bands, tile.geotransform))
    for index in out.values():
        assert index.nodata_mask.tolist() == mask.tolist()


def test_compute_all_missing_band():
    with pytest.raises(KeyError, match="SWIR"):
        compute_all_indices(constant_tile(SWIR=None))


def test_index_raster_invariants():
    with pytest.raises(ValueError, match="outside"):
        IndexRaster(np.array([[1.5]]), np.array([[False]]), "NDVI")
    with pytest.raises(ValueError, match="positive"):
        IndexRaster(np.array([[0.0]]), np.array([[False]]), "BAI")
    IndexRaster(np.array([[5.0]]), np.array([[False]]), "EVI")


def _random_tile(seed, shape=(24, 17), low=0.0):
    rng = np.random.default_rng(seed)
    bands = {r: BandRaster(rng.uniform(low, 1.0, shape).astype(np.float32)) for r in ("Blue", "Green", "Red", "NIR", "SWIR")}
    return MultiSpectralTile(bands)


@pytest.mark.parametrize("seed", range(5))
def test_vectorized_matches_scalar_reference(seed):
    tile = _random_tile(seed)
    out = compute_all_indices(tile)
    b = {r: tile.bands[r].values for r in tile.bands}
    for kind, index in out.items():
        for r in range(tile.height):
            for c in range(tile.width):
                ref = scalar_index(kind, *(float(b[k][r, c]) for k in ("Blue", "Green", "Red", "NIR", "SWIR")))
                if ref is None:
                    assert index.nodata_mask[r, c]
                else:
                    assert not index.nodata_mask[r, c]
                    assert index.values[r, c] == np.float32(ref)


@settings(max_examples=50)
@given(arrays(np.float32, (4, 5), elements=st.floats(0, 1.25, width=32)),
       arrays(np.float32, (4, 5), elements=st.floats(0, 1.25, width=32)))
def test_nd_range_and_antisymmetry(a, b):
    ab = normalized_difference(BandRaster(a), BandRaster(b))
    ba = normalized_difference(BandRaster(b), BandRaster(a))
    valid = ~ab.nodata_mask
    assert np.array_equal(ab.nodata_mask, ba.nodata_mask)
    assert np.all(np.abs(ab.values[valid]) <= 1.0)
    np.testing.assert_array_equal(ab.values[valid], -ba.values[valid])


@pytest.mark.parametrize("seed", range(3))
def test_scale_sensitivity(seed):
    tile = _random_tile(seed, low=0.01)
    scaled = MultiSpectralTile({r: BandRaster(b.values * np.float32(7.0)) for r, b in tile.bands.items()})
    for fn in (ndvi, ndbi, ndmi):
        np.testing.assert_allclose(fn(tile).values, fn(scaled).values, atol=1e-6)
    for fn in (evi, bai):
        assert not np.allclose(fn(tile).values, fn(scaled).values, rtol=1e-3)


def test_index_file_roundtrip(tmp_path, utm_gt):
    index = compute_all_indices(_random_tile(1))["EVI"]
    mask = index.nodata_mask.copy()
    mask[0, 0] = True
    index = IndexRaster(np.where(mask, 0, index.values), mask, "EVI")
    sidecar = save_index(tmp_path / "evi", index, utm_gt)
    back = read_index(sidecar)
    assert back.index_kind == "EVI"
    np.testing.assert_array_equal(back.nodata_mask, index.nodata_mask)
    np.testing.assert_array_equal(back.values, index.values)
