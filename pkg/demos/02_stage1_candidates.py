"""Stage 1: fuse index thresholds into a mask, group pixels, and pick stage-2 patches.

Run:  python3 demos/02_stage1_candidates.py
"""

from kilnscan.classifier import (
    ClassifierThresholds,
    candidate_patches,
    classify,
    connected_components,
    filter_rate,
    grid_patch_count,
)
from kilnscan.indices import compute_all_indices
from kilnscan.synthetic import generate_scene

scene = generate_scene(seed=2, n_kilns=40, straddle=True)
tile = scene.tile()
indices = compute_all_indices(tile)

thresholds = ClassifierThresholds()
print("thresholds:", thresholds.to_dict())
mask = classify(indices, thresholds, tile.tile_id, tile.geotransform)
print(f"filter rate: {filter_rate(mask):.5f} of {mask.bits.size} pixels rejected")

regions = connected_components(mask)
print(f"{len(regions)} candidate regions; first: {regions[0]}")

# The straddling kiln shows up as two blobs in neighbouring patch windows.
patches, skipped = candidate_patches(regions, scene.stage2_gt, scene.patch_size, scene.stage2_shape)
total = grid_patch_count(scene.stage2_shape, scene.patch_size)
print(f"{len(patches)} of {total} high-resolution patches need the detector ({total / len(patches):.0f}x fewer)")
print("skipped regions:", skipped)

# Tightening a bound can only shrink the mask.
strict = classify(indices, ClassifierThresholds(ndbi_min=0.1), tile.tile_id, tile.geotransform)
print("pixels kept with ndbi_min=0.1:", strict.count, "vs", mask.count)
