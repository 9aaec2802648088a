"""Command-line entry point: ``kilnscan <subcommand>``.

Exit codes: 0 success (empty results included), 1 usage error, 2 data
error, 3 external detector failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import (
    ClassifierThresholds,
    classify,
    connected_components,
    filter_rate,
    grid_patch_count,
    write_regions,
)
from .evaluation import (
    EvaluationReport,
    MatchCriterion,
    benchmark,
    format_table,
    match_detections,
    read_ground_truth,
    repeat_runs,
)
from .indices import NDMI_VARIANTS, compute_all_indices, save_index
from .pipeline import detections_to_geojson, read_geo_detections, run_pipeline
from .raster import BandRaster, GeoTransform, RasterFormatError, load_tile, save_band
from .synthetic import generate_scene

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DETECTOR = 0, 1, 2, 3

log = logging.getLogger("kilnscan")

THRESHOLD_FLAGS = ("ndvi_max", "evi_max", "ndmi_max", "ndbi_min", "bai_min")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    tile: str | None = None
    scale: float | None = 10000.0
    thresholds: dict = field(default_factory=dict)
    connectivity: int = 8
    ndmi_variant: str = "green_swir"
    patch_size: int = 256
    nms_iou: float = 0.5
    dedup_iou: float = 0.3
    detector: str | None = None
    stage2_geotransform: list | None = None
    stage2_crs: str | None = None
    stage2_shape: list | None = None
    ground_truth: str | None = None
    out_dir: str = "out"
    repeats: int = 5
    threads: int | None = None

    PATH_KEYS = ("tile", "ground_truth", "out_dir")

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError(f"config {path} must be a JSON object")
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise UsageError(f"unknown config key(s) in {path}: {', '.join(unknown)}")
        for key in cls.PATH_KEYS:
            if data.get(key) is not None:
                data[key] = str((path.parent / data[key]).resolve())
        return cls(**data)

    def override(self, args: argparse.Namespace) -> "RunConfig":
        for f in fields(self):
            value = getattr(args, f.name, None)
            if value is None or f.name == "thresholds":
                continue
            if f.name in self.PATH_KEYS:
                value = str(Path(value).resolve())
            setattr(self, f.name, value)
        overrides = {k: getattr(args, k) for k in THRESHOLD_FLAGS if getattr(args, k, None) is not None}
        self.thresholds = {**self.thresholds, **overrides}
        return self

    def classifier_thresholds(self) -> ClassifierThresholds:
        try:
            return ClassifierThresholds.from_mapping(self.thresholds)
        except (TypeError, ValueError) as exc:
            raise UsageError(str(exc)) from exc

    def stage2(self, fallback: GeoTransform) -> GeoTransform:
        if self.stage2_geotransform is None:
            return fallback
        return GeoTransform.from_sequence(self.stage2_geotransform, self.stage2_crs or fallback.crs)

    def to_dict(self) -> dict:
        return asdict(self)


def _add_threshold_flags(p):
    g = p.add_argument_group("classifier thresholds")
    g.add_argument("--ndvi-max", dest="ndvi_max", type=float)
    g.add_argument("--evi-max", dest="evi_max", type=float)
    g.add_argument("--ndmi-max", dest="ndmi_max", type=float)
    g.add_argument("--ndbi-min", dest="ndbi_min", type=float)
    g.add_argument("--bai-min", dest="bai_min", type=float)


def _add_run_flags(p):
    p.add_argument("--config", help="JSON run config; flags override its values")
    p.add_argument("--tile", help="directory of band sidecars")
    p.add_argument("--scale", type=float, help="DN-to-reflectance divisor (default 10000)")
    p.add_argument("--connectivity", type=int, choices=(4, 8))
    p.add_argument("--ndmi-variant", dest="ndmi_variant", choices=NDMI_VARIANTS)
    p.add_argument("--patch-size", dest="patch_size", type=int)
    p.add_argument("--nms-iou", dest="nms_iou", type=float)
    p.add_argument("--dedup-iou", dest="dedup_iou", type=float)
    p.add_argument("--detector", help="detector command template; {patches} is the patch-list path")
    p.add_argument("--stage2-geotransform", dest="stage2_geotransform", type=float, nargs=6, metavar="C")
    p.add_argument("--stage2-crs", dest="stage2_crs")
    p.add_argument("--stage2-shape", dest="stage2_shape", type=int, nargs=2, metavar=("WIDTH", "HEIGHT"))
    p.add_argument("--ground-truth", dest="ground_truth")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--threads", type=int, help="worker threads (default: CPU count)")
    p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    _add_threshold_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kilnscan", description="Two-stage brick-kiln detection pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("indices", help="write the five spectral index rasters")
    p.add_argument("tile")
    p.add_argument("out_dir")
    p.add_argument("--scale", type=float, default=10000.0)
    p.add_argument("--ndmi-variant", dest="ndmi_variant", choices=NDMI_VARIANTS, default="green_swir")

    p = sub.add_parser("classify", help="candidate mask, regions and filter rate")
    _add_run_flags(p)

    p = sub.add_parser("run", help="end-to-end two-stage run")
    _add_run_flags(p)

    p = sub.add_parser("bench", help="repeat the run and report workload reduction")
    _add_run_flags(p)
    p.add_argument("--repeats", type=int)

    p = sub.add_parser("evaluate", help="match detections to ground truth, or score raw counts")
    p.add_argument("--detections", help="GeoJSON written by 'run'")
    p.add_argument("--ground-truth", dest="ground_truth")
    crit = p.add_mutually_exclusive_group()
    crit.add_argument("--iou", type=float, help="match when IoU >= value")
    crit.add_argument("--distance", type=float, help="match when center distance <= value (CRS units)")
    p.add_argument("--counts", type=int, nargs=3, action="append", metavar=("TP", "FP", "FN"))
    p.add_argument("--counts-file", dest="counts_file",
                   help="lines of 'TP FP FN [label]' ('-' reads standard input)")
    p.add_argument("--json", dest="json_out", help="write the report JSON here")

    p = sub.add_parser("gen-fixture", help="write a seeded synthetic tile, truth and run config")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--size", type=int, default=1024)
    p.add_argument("--kilns", type=int, default=40)
    p.add_argument("--kiln-px", dest="kiln_px", type=int, default=4)
    p.add_argument("--straddle", action="store_true", help="add one kiln crossing a patch boundary")
    return parser


# --------------------------------------------------------------------------


def _resolve(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    config.override(args)
    if config.ndmi_variant not in NDMI_VARIANTS:
        raise UsageError(f"ndmi_variant must be one of {NDMI_VARIANTS}")
    return config


def _stage1(config: RunConfig):
    if config.tile is None:
        raise UsageError("no tile given (--tile or 'tile' in the config)")
    tile = load_tile(config.tile, config.scale)
    thresholds = config.classifier_thresholds()
    indices = compute_all_indices(tile, config.ndmi_variant)
    mask = classify(indices, thresholds, tile.tile_id, tile.geotransform)
    regions = connected_components(mask, config.connectivity)
    return tile, mask, regions


def _write_mask(out_dir: Path, mask, gt: GeoTransform):
    band = BandRaster(mask.bits.astype(np.uint16), None, None)
    return save_band(out_dir / "mask", band, geotransform=gt, mask_of=mask.tile_id)


def cmd_indices(args) -> int:
    tile = load_tile(args.tile, args.scale)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for kind, index in compute_all_indices(tile, args.ndmi_variant).items():
        path = save_index(out_dir / kind.lower(), index, tile.geotransform)
        print(path)
    return EXIT_OK


def cmd_classify(args) -> int:
    config = _resolve(args)
    if args.print_config:
        print(json.dumps(config.to_dict(), indent=2))
        return EXIT_OK
    tile, mask, regions = _stage1(config)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_mask(out_dir, mask, tile.geotransform)
    write_regions(regions, out_dir, tile.geotransform.crs)
    print(json.dumps({"tile_id": tile.tile_id, "filter_rate": filter_rate(mask), "region_count": len(regions)}))
    return EXIT_OK


def _pipeline_kwargs(config: RunConfig, tile):
    return dict(
        detector_cmd=config.detector,
        stage2_gt=config.stage2(tile.geotransform),
        stage2_shape=tuple(config.stage2_shape) if config.stage2_shape else None,
        patch_size=config.patch_size,
        connectivity=config.connectivity,
        nms_iou=config.nms_iou,
        dedup_iou=config.dedup_iou,
        ndmi_variant=config.ndmi_variant,
        threads=config.threads or os.cpu_count(),
    )


def _summary_rows(report, config: RunConfig) -> list[EvaluationReport]:
    seconds = {k: v / 1000.0 for k, v in report.timings_ms.items()}
    if config.ground_truth and report.ok:
        gts = read_ground_truth(config.ground_truth)
        result = match_detections(report.kept, gts)
        dup = result.duplicates + (report.dedup.duplicate_count if report.dedup else 0)
        return [EvaluationReport.from_counts(result.tp, result.fp, result.fn, dup, report.tile_id, seconds)]
    return []


def cmd_run(args) -> int:
    config = _resolve(args)
    if args.print_config:
        print(json.dumps(config.to_dict(), indent=2))
        return EXIT_OK
    if config.tile is None:
        raise UsageError("no tile given (--tile or 'tile' in the config)")
    tile = load_tile(config.tile, config.scale)
    report = run_pipeline(tile, config.classifier_thresholds(), **_pipeline_kwargs(config, tile))
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_regions(report.regions, out_dir, tile.geotransform.crs)
    (out_dir / "detections.geojson").write_text(json.dumps(detections_to_geojson(report.kept), indent=2))
    doc = report.to_dict()
    rows = _summary_rows(report, config)
    if rows:
        doc["evaluation"] = rows[0].to_dict()
    (out_dir / "report.json").write_text(json.dumps(doc, indent=2))
    print(f"filter rate {report.filter_rate:.6f}  regions {len(report.regions)}  patches {len(report.patches)}  "
          f"kept {len(report.kept)}  duplicates {doc['dedup']['duplicate_count']}")
    if rows:
        print(format_table(rows))
    if not report.ok:
        print(f"kilnscan: detector failed: {report.error}", file=sys.stderr)
        return EXIT_DETECTOR
    return EXIT_OK


def cmd_bench(args) -> int:
    config = _resolve(args)
    if args.print_config:
        print(json.dumps(config.to_dict(), indent=2))
        return EXIT_OK
    if config.tile is None:
        raise UsageError("no tile given (--tile or 'tile' in the config)")
    tile = load_tile(config.tile, config.scale)
    kwargs = _pipeline_kwargs(config, tile)
    thresholds = config.classifier_thresholds()
    reports = repeat_runs(lambda: run_pipeline(tile, thresholds, **kwargs), config.repeats)
    failed = [r for r in reports if not r.ok]
    if failed:
        print(f"kilnscan: detector failed: {failed[0].error}", file=sys.stderr)
        return EXIT_DETECTOR
    if config.stage2_shape:
        baseline = grid_patch_count(tuple(config.stage2_shape), config.patch_size)
    else:
        baseline = grid_patch_count((tile.width, tile.height), config.patch_size)
    workload = benchmark(reports, baseline)
    print(json.dumps(workload.to_dict(), indent=2))
    return EXIT_OK


def _read_counts(source) -> list[tuple[int, int, int, str]]:
    fh = sys.stdin if source == "-" else open(source)
    try:
        rows = []
        for lineno, line in enumerate(fh, start=1):
            parts = line.replace(",", " ").split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                tp, fp, fn = (int(x) for x in parts[:3])
            except ValueError:
                raise ValueError(f"counts line {lineno}: expected 'TP FP FN [label]', got {line.strip()!r}") from None
            rows.append((tp, fp, fn, " ".join(parts[3:])))
        return rows
    finally:
        if fh is not sys.stdin:
            fh.close()


def cmd_evaluate(args) -> int:
    reports = []
    for tp, fp, fn in args.counts or ():
        reports.append(EvaluationReport.from_counts(tp, fp, fn))
    if args.counts_file:
        for tp, fp, fn, label in _read_counts(args.counts_file):
            reports.append(EvaluationReport.from_counts(tp, fp, fn, label=label))
    if args.detections or args.ground_truth:
        if not (args.detections and args.ground_truth):
            raise UsageError("--detections and --ground-truth must be given together")
        preds = read_geo_detections(args.detections)
        gts = read_ground_truth(args.ground_truth)
        if args.iou is not None:
            criterion = MatchCriterion("iou", args.iou)
        elif args.distance is not None:
            criterion = MatchCriterion("distance", args.distance)
        else:
            criterion = MatchCriterion.default_for(gts)
        result = match_detections(preds, gts, criterion)
        reports.append(EvaluationReport.from_match(result, label=Path(args.detections).stem))
    if not reports:
        raise UsageError("nothing to evaluate: give --counts, --counts-file or --detections/--ground-truth")
    print(format_table(reports))
    if args.json_out:
        Path(args.json_out).write_text(json.dumps([r.to_dict() for r in reports], indent=2))
    return EXIT_OK


def cmd_gen_fixture(args) -> int:
    scene = generate_scene(args.seed, args.size, args.size, args.kilns, args.kiln_px, straddle=args.straddle)
    paths = scene.write(args.out_dir)
    print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))
    return EXIT_OK


COMMANDS = {
    "indices": cmd_indices,
    "classify": cmd_classify,
    "run": cmd_run,
    "bench": cmd_bench,
    "evaluate": cmd_evaluate,
    "gen-fixture": cmd_gen_fixture,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"kilnscan: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RasterFormatError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"kilnscan: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
