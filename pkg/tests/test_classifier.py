import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kilnscan.classifier import (
    CandidateMask,
    ClassifierThresholds,
    candidate_patches,
    classify,
    classify_pixel,
    connected_components,
    filter_rate,
    grid_patch_count,
    regions_to_geojson,
    write_regions,
)
from kilnscan.indices import IndexRaster
from kilnscan.raster import GeoTransform, pixel_to_geo
from oracles import flood_fill_regions, scalar_classify


def rasters(ndvi, evi, ndmi, ndbi, bai, nodata=None):
    vals = dict(NDVI=ndvi, EVI=evi, NDMI=ndmi, NDBI=ndbi, BAI=bai)
    out = {}
    for kind, v in vals.items():
        v = np.asarray(v, dtype=np.float32)
        mask = np.zeros(v.shape, bool) if nodata is None else nodata
        out[kind] = IndexRaster(v, mask, kind)
    return out


def random_rasters(rng, shape, nodata_frac=0.0):
    mask = rng.random(shape) < nodata_frac
    return rasters(
        rng.uniform(-0.2, 0.6, shape), rng.uniform(-0.2, 0.6, shape), rng.uniform(-0.4, 0.4, shape),
        rng.uniform(-0.4, 0.4, shape), rng.choice([1e-9, 5e-8, 1e-7, 3.0], size=shape), mask,
    )


def test_classify_pixel_examples():
    assert classify_pixel(0.1, 0.1, -0.1, 0.1, 1e-6) == 1
    assert classify_pixel(0.3, 0.1, -0.1, 0.1, 1e-6) == 0
    assert classify_pixel(0.2, 0.1, -0.1, 0.1, 1e-6) == 0


@pytest.mark.parametrize("args", [
    (0.1, 0.2, -0.1, 0.1, 1e-6),
    (0.1, 0.1, 0.0, 0.1, 1e-6),
    (0.1, 0.1, -0.1, 0.0, 1e-6),
    (0.1, 0.1, -0.1, 0.1, 5e-8),
])
def test_classify_pixel_boundaries_excluded(args):
    assert classify_pixel(*args) == 0


def test_thresholds_validation():
    with pytest.raises(ValueError):
        ClassifierThresholds(ndvi_max=float("nan"))
    with pytest.raises(ValueError, match="unknown"):
        ClassifierThresholds.from_mapping({"ndvi": 0.1})
    assert ClassifierThresholds.from_mapping({"bai_min": 1}).bai_min == 1.0


def test_all_zero_rasters_give_empty_mask():
    z = np.zeros((4, 4))
    # BAI is strictly positive by construction, so it is the one non-zero raster
    assert classify(rasters(z, z, z, z, np.ones((4, 4)))).count == 0


def test_single_crafted_pixel():
    shape = (6, 6)
    ndvi = np.full(shape, 0.7)
    ndvi[2, 3] = 0.05
    r = rasters(ndvi, np.full(shape, 0.1), np.full(shape, -0.2), np.full(shape, 0.1), np.full(shape, 10.0))
    mask = classify(r)
    assert mask.count == 1 and mask.bits[2, 3]
    np.testing.assert_array_equal(mask.bits, scalar_classify(r))


def test_nodata_is_not_a_candidate():
    shape = (2, 2)
    nodata = np.array([[True, False], [False, False]])
    r = rasters(np.zeros(shape), np.zeros(shape), np.full(shape, -1), np.full(shape, 1), np.full(shape, 1), nodata)
    assert classify(r).bits.tolist() == [[False, True], [True, True]]


def test_classify_errors():
    r = random_rasters(np.random.default_rng(0), (3, 3))
    del r["BAI"]
    with pytest.raises(KeyError, match="BAI"):
        classify(r)
    r = random_rasters(np.random.default_rng(0), (3, 3))
    r["BAI"] = IndexRaster(np.ones((3, 4)), np.zeros((3, 4), bool), "BAI")
    with pytest.raises(ValueError, match="shape"):
        classify(r)


def test_classify_matches_scalar_oracle_100():
    r = random_rasters(np.random.default_rng(42), (100, 100), nodata_frac=0.05)
    np.testing.assert_array_equal(classify(r).bits, scalar_classify(r))


_tighten = st.tuples(*(st.floats(0, 0.3) for _ in range(5)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), _tighten)
def test_monotone_in_thresholds(seed, deltas):
    r = random_rasters(np.random.default_rng(seed), (20, 20))
    base = classify(r).bits
    t = ClassifierThresholds(0.2 - deltas[0], 0.2 - deltas[1], 0.0 - deltas[2], 0.0 + deltas[3], 5e-8 + deltas[4])
    tight = classify(r, t).bits
    assert not np.any(tight & ~base)


def _mask(rows, shape=(6, 6), gt=GeoTransform(0, 1, 0, 0, 0, 1)):
    bits = np.zeros(shape, bool)
    for r, c in rows:
        bits[r, c] = True
    return CandidateMask(bits, "t", gt)


def test_components_single_pixel():
    (region,) = connected_components(_mask([(2, 3)]))
    assert region.pixel_count == 1
    assert region.bbox_px == (3, 2, 3, 2)
    assert region.centroid_px == (3.5, 2.5)


def test_components_diagonal_connectivity():
    m = _mask([(1, 1), (2, 2)])
    assert len(connected_components(m, 4)) == 2 == len(flood_fill_regions(m.bits, 4))
    assert len(connected_components(m, 8)) == 1 == len(flood_fill_regions(m.bits, 8))


def test_components_l_shape_centroid():
    m = _mask([(1, 1), (2, 1), (2, 2)], gt=GeoTransform(100, 10, 0, 500, 0, -10))
    (region,) = connected_components(m, 4)
    cx = (1.5 + 1.5 + 2.5) / 3
    cy = (1.5 + 2.5 + 2.5) / 3
    assert region.centroid_px == pytest.approx((cx, cy), abs=1e-12)
    assert region.centroid_geo == pytest.approx(pixel_to_geo(m.geotransform, cx, cy), abs=1e-9)


def test_components_bad_connectivity():
    with pytest.raises(ValueError):
        connected_components(_mask([]), 6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([4, 8]), st.floats(0.05, 0.6))
def test_components_match_flood_fill(seed, connectivity, density):
    bits = np.random.default_rng(seed).random((15, 13)) < density
    mask = CandidateMask(bits)
    regions = connected_components(mask, connectivity)
    oracle = flood_fill_regions(bits, connectivity)
    assert len(regions) == len(oracle)
    assert sum(r.pixel_count for r in regions) == bits.sum()
    keys = sorted((min(p[0] for p in s), min(p[1] for p in s), len(s)) for s in oracle)
    got = [(r.bbox_px[1], r.bbox_px[0], r.pixel_count) for r in regions]
    assert got == sorted(got) and sorted(got) == keys
    assert [r.region_id for r in regions] == list(range(len(regions)))
    for r in regions:
        assert r.bbox_px[0] <= r.centroid_px[0] <= r.bbox_px[2] + 1
        assert r.bbox_px[1] <= r.centroid_px[1] <= r.bbox_px[3] + 1


def test_filter_rate():
    assert filter_rate(CandidateMask(np.zeros((10, 10), bool))) == 1.0
    bits = np.zeros((1, 1000), bool)
    bits[0, 5] = True
    assert filter_rate(CandidateMask(bits)) == pytest.approx(0.999, abs=1e-15)
    with pytest.raises(ValueError):
        filter_rate(CandidateMask(np.zeros((0, 0), bool)))


def _region_at(rid, gx, gy):
    from kilnscan.classifier import CandidateRegion
    return CandidateRegion(rid, 1, (0, 0, 0, 0), (0.5, 0.5), (gx, gy))


STAGE2 = GeoTransform(1000.0, 0.5, 0.0, 2000.0, 0.0, -0.5)


def test_patches_single_region():
    # stage-2 pixel (300, 10) -> window col0=256, row0=0
    x, y = pixel_to_geo(STAGE2, 300, 10)
    patches, skipped = candidate_patches([_region_at(0, x, y)], STAGE2)
    assert skipped == [] and len(patches) == 1
    p = patches[0]
    assert (p.col0, p.row0, p.size) == (256, 0, 256)
    assert p.geo_window == (1128.0, 2000.0, 1256.0, 1872.0)
    assert p.region_ids == (0,)


def test_patches_merge_same_cell():
    a = pixel_to_geo(STAGE2, 300, 10)
    b = pixel_to_geo(STAGE2, 500, 200)
    patches, _ = candidate_patches([_region_at(0, *a), _region_at(1, *b)], STAGE2)
    assert len(patches) == 1 and patches[0].region_ids == (0, 1)


def test_patches_boundary_half_open():
    # geo x of stage-2 column 256 exactly: 1000 + 256 * 0.5
    patches, _ = candidate_patches([_region_at(0, 1128.0, 1990.0)], STAGE2)
    assert patches[0].col0 == 256
    patches, _ = candidate_patches([_region_at(0, 1127.999, 1990.0)], STAGE2)
    assert patches[0].col0 == 0


def test_patches_sorted_and_skipped():
    pts = [pixel_to_geo(STAGE2, c, r) for c, r in [(700, 600), (10, 600), (600, 10), (-5, 10), (10, 5000)]]
    patches, skipped = candidate_patches([_region_at(i, *p) for i, p in enumerate(pts)], STAGE2, stage2_shape=(1024, 1024))
    assert [(p.row0, p.col0) for p in patches] == [(0, 512), (512, 0), (512, 512)]
    assert skipped == [3, 4]
    assert len(patches) <= 5


def test_patch_geotransform():
    x, y = pixel_to_geo(STAGE2, 300, 10)
    (p,), _ = candidate_patches([_region_at(0, x, y)], STAGE2)
    assert pixel_to_geo(p.geotransform(STAGE2), 44, 10) == pixel_to_geo(STAGE2, 300, 10)


def test_grid_patch_count():
    assert grid_patch_count((20480, 20480)) == 6400
    assert grid_patch_count((257, 256)) == 2


def test_region_exports(tmp_path):
    regions = [_region_at(0, 1.5, 2.5), _region_at(1, 3.0, 4.0)]
    gj = regions_to_geojson(regions, "EPSG:4326")
    assert gj["features"][1]["geometry"] == {"type": "Point", "coordinates": [3.0, 4.0]}
    assert gj["features"][0]["properties"] == {"region_id": 0, "pixel_count": 1}
    gpath, cpath = write_regions(regions, tmp_path)
    assert json.loads(gpath.read_text())["type"] == "FeatureCollection"
    rows = list(csv.DictReader(open(cpath)))
    assert rows[1] == {"region_id": "1", "lon": "3.0", "lat": "4.0", "pixel_count": "1"}
