"""End-to-end two-stage run with the bundled stub detector, then scoring against truth.

Run:  python3 demos/04_end_to_end.py
"""

import json
import sys
import tempfile
from pathlib import Path

from kilnscan.classifier import grid_patch_count
from kilnscan.evaluation import EvaluationReport, benchmark, format_table, match_detections, read_ground_truth
from kilnscan.pipeline import run_pipeline
from kilnscan.synthetic import generate_scene

work = Path(tempfile.mkdtemp(prefix="kilnscan-demo-"))
scene = generate_scene(seed=4, n_kilns=20, straddle=True)
paths = scene.write(work)
print("fixture written to", work)

# Any executable works as the detector: it gets a patch-list JSON and prints JSON lines.
cmd = [sys.executable, "-m", "kilnscan.stub_detector", "--truth", str(paths["truth"]), "{patches}"]
report = run_pipeline(scene.tile(), detector_cmd=cmd, stage2_gt=scene.stage2_gt, stage2_shape=scene.stage2_shape)
print(json.dumps(report.to_dict()["stage2"], indent=2))

# The kiln on the patch boundary was detected twice; dedup keeps one.
print("merge log:", report.dedup.merge_log)

result = match_detections(report.kept, read_ground_truth(paths["truth"]))
seconds = {k: v / 1000 for k, v in report.timings_ms.items()}
duplicates = result.duplicates + report.dedup.duplicate_count
row = EvaluationReport.from_counts(result.tp, result.fp, result.fn, duplicates, "synthetic", seconds)
print(format_table([row]))

workload = benchmark(report, grid_patch_count(scene.stage2_shape))
print(f"reduction ratio: {workload.reduction_ratio:.0f}x")
