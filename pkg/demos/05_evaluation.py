"""Score published count vectors and show how duplicates are counted.

Run:  python3 demos/05_evaluation.py
"""

from kilnscan.evaluation import (
    EvaluationReport,
    GroundTruth,
    GroundTruthSet,
    MatchCriterion,
    format_table,
    match_detections,
)
from kilnscan.geometry import OrientedBox, box_corners
from kilnscan.pipeline import GeoDetection

rows = [
    EvaluationReport.from_counts(52, 1, 0, 12, "India two-stage"),
    EvaluationReport.from_counts(198, 17, 66, 142, "Afghanistan two-stage"),
    EvaluationReport.from_counts(21, 303, 0, 2, "Pakistan indices only"),
]
print(format_table(rows))


def det(det_id, x, conf):
    box = OrientedBox(x, 0, 10, 6)
    return GeoDetection(det_id, tuple(box_corners(box)), (x, 0.0), conf, "p", "")


# Two predictions on one kiln: the second is a duplicate, not a false positive.
truth = GroundTruthSet([GroundTruth("kiln", (0.0, 0.0))])
result = match_detections([det("a", 0, 0.9), det("b", 2, 0.6), det("c", 500, 0.5)], truth, MatchCriterion("distance", 5))
print(f"tp={result.tp} fp={result.fp} fn={result.fn} duplicates={result.duplicates} ({result.duplicate_ids})")
