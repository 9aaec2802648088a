"""Stand-in stage-2 detector for tests and demos.

Reads a patch list and a ground-truth GeoJSON written by
:mod:`kilnscan.synthetic` and prints one JSON-lines detection for every truth
kiln that overlaps each requested patch.  A kiln crossing a patch boundary is
therefore reported by both patches, as a real detector would.

Usage::

    python -m kilnscan.stub_detector --truth truth.geojson patches.json
"""

from __future__ import annotations

import argparse
import json
import sys

from .geometry import OrientedBox, box_corners, clip_convex, nearest_theta_class, polygon_area


def _window(col0, row0, size):
    return [(col0, row0), (col0 + size, row0), (col0 + size, row0 + size), (col0, row0 + size)]


def detect(patches: list[dict], truth: dict, conf: float = 0.9) -> list[dict]:
    boxes = [OrientedBox(*feat["properties"]["stage2_box"]) for feat in truth["features"]]
    out = []
    for patch in patches:
        col0, row0, size = patch["col0"], patch["row0"], patch["size"]
        window = _window(col0, row0, size)
        for box in boxes:
            overlap = clip_convex(box_corners(box), window)
            if len(overlap) < 3 or polygon_area(overlap) <= 0.0:
                continue
            cls = nearest_theta_class(box.theta)
            out.append({
                "patch_id": patch["patch_id"],
                "cx": box.cx - col0,
                "cy": box.cy - row0,
                "w": box.w,
                "h": box.h,
                "class": cls.name,
                "conf": conf,
            })
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="kilnscan.stub_detector", description=__doc__.splitlines()[0])
    parser.add_argument("patches", help="patch-list JSON written by the pipeline")
    parser.add_argument("--truth", required=True, help="ground-truth GeoJSON with stage2_box properties")
    parser.add_argument("--conf", type=float, default=0.9)
    parser.add_argument("--log", help="append the received patch ids to this file (one JSON list per call)")
    parser.add_argument("--fail", action="store_true", help="exit with status 1 without output")
    args = parser.parse_args(argv)

    with open(args.patches) as fh:
        patches = json.load(fh)
    if args.log:
        with open(args.log, "a") as fh:
            fh.write(json.dumps([p["patch_id"] for p in patches]) + "\n")
    if args.fail:
        print("stub detector asked to fail", file=sys.stderr)
        return 1
    with open(args.truth) as fh:
        truth = json.load(fh)
    for rec in detect(patches, truth, args.conf):
        print(json.dumps(rec))
    return 0


if __name__ == "__main__":
    sys.exit(main())
