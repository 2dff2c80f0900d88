"""
Command-line entry point.

    python cli.py synth --output-dir outputs/scene --seed 3
    python cli.py calibrate --poses outputs/scene/scene_000.json \\
        --intrinsics outputs/scene/intrinsics.json --output outputs/report.json
    python cli.py evaluate --report outputs/report.json --ground-truth outputs/scene/scene_000.gt.json
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from config import APP_NAME, APP_VERSION, load_pipeline_config, settings
from errors import EXIT_NUMERICAL, EXIT_OK, CalibrationError, ConfigError
from metrics import metrics_table
from pipeline import (
    TRIANGULATION_SOURCES,
    evaluate_reports,
    load_ground_truth,
    load_intrinsics,
    load_poses,
    load_report,
    run_calibration,
    triangulate_sequence,
)
from schemas import (
    CalibrationReport,
    GroundTruthDocument,
    IntrinsicsDocument,
    NoiseSpec,
    SequenceDocument,
    TriangulationResult,
)
from utils import atomic_write_text, write_json

logger = logging.getLogger(__name__)

SCHEMA_MODELS = {
    "sequence": SequenceDocument,
    "intrinsics": IntrinsicsDocument,
    "report": CalibrationReport,
    "ground_truth": GroundTruthDocument,
    "triangulation": TriangulationResult,
}


# ============================================
# COMMANDS
# ============================================
def cmd_calibrate(args: argparse.Namespace) -> int:
    overrides = {
        "min_confidence": args.min_confidence,
        "baselines": args.baselines,
        "ransac": {
            "threshold": args.ransac_threshold,
            "iterations": args.ransac_iterations,
            "rng_seed": args.seed,
            "workers": args.workers,
        },
    }
    config = load_pipeline_config(args.config, overrides)
    K = load_intrinsics(args.intrinsics)
    pair = load_poses(args.poses, K, config)
    truth = load_ground_truth(args.ground_truth) if args.ground_truth else None

    run = run_calibration(pair, K, config, args.skip_refine, args.skip_ransac, truth)
    write_json(args.output, run.report)
    logger.info(f"✅ Report written to {args.output}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    from synth import DEFAULT_INTRINSICS, generate_benchmark_suite, generate_suite_scenes, write_scene

    K = load_intrinsics(args.intrinsics) if args.intrinsics else DEFAULT_INTRINSICS
    noise = NoiseSpec(mean=args.noise_mean, std=args.noise_std)
    out_dir = Path(args.output_dir)

    specs = generate_benchmark_suite(
        args.suite or 1, args.seed, frames=args.frames, intrinsics=K, noise=noise,
        dropout=args.dropout, bone_length_jitter=args.jitter,
    )

    scenes = generate_suite_scenes(specs, workers=args.workers or settings.MAX_WORKERS)
    write_json(out_dir / "intrinsics.json", IntrinsicsDocument(**K.model_dump()))
    for number, scene in enumerate(scenes):
        write_json(out_dir / f"{args.name}_{number:03d}.spec.json", scene.spec)
        write_scene(scene, out_dir, f"{args.name}_{number:03d}")
    logger.info(f"✅ Wrote {len(scenes)} scene(s) to {out_dir}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    if len(args.report) != len(args.ground_truth):
        raise ConfigError("--report and --ground-truth must be given the same number of times")
    triples = [
        (Path(report).stem, load_report(report), load_ground_truth(truth))
        for report, truth in zip(args.report, args.ground_truth)
    ]
    result = evaluate_reports(triples)

    if args.output_json:
        write_json(args.output_json, result)
    if args.output_csv:
        atomic_write_text(args.output_csv, metrics_table(result.rows).to_csv(index=False, float_format="%.9g"))
    if not (args.output_json or args.output_csv):
        print(json.dumps(json.loads(result.model_dump_json()), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_triangulate(args: argparse.Namespace) -> int:
    config = load_pipeline_config(args.config, {"min_confidence": args.min_confidence})
    K = load_intrinsics(args.intrinsics)
    pair = load_poses(args.poses, K, config)
    report = load_report(args.report)
    truth = load_ground_truth(args.ground_truth) if args.ground_truth else None

    result = triangulate_sequence(pair, K, report, args.source, truth, config.min_confidence)
    write_json(args.output, result)
    if result.pa_mpjpe_mm is not None:
        print(f"PA-MPJPE ({args.source}): {result.pa_mpjpe_mm:.3f}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run(
        "main:app",
        host=args.host or settings.HOST,
        port=args.port or settings.PORT,
        reload=settings.ENVIRONMENT == "development",
        log_level=settings.LOG_LEVEL.lower(),
    )
    return EXIT_OK


def cmd_schema(args: argparse.Namespace) -> int:
    out_dir = Path(args.output_dir)
    for name, model in SCHEMA_MODELS.items():
        write_json(out_dir / f"{name}.schema.json", model.model_json_schema())
    logger.info(f"✅ JSON schemas written to {out_dir}")
    return EXIT_OK


# ============================================
# PARSER
# ============================================
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=APP_NAME, description="Mirror virtual-camera calibration from 2D human joints")
    parser.add_argument("--version", action="version", version=f"%(prog)s {APP_VERSION}")
    parser.add_argument("--log-level", default=None, help="Overrides LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="Estimate the virtual camera from a pose sequence")
    p.add_argument("--poses", required=True, help="Generic sequence JSON or OpenPose JSON directory")
    p.add_argument("--intrinsics", required=True, help="JSON {fx, fy, cx, cy, skew}")
    p.add_argument("--config", default=None, help="TOML pipeline config")
    p.add_argument("--output", default="report.json")
    p.add_argument("--ground-truth", default=None, help="Sidecar JSON; adds per-stage errors to the report")
    p.add_argument("--skip-refine", action="store_true")
    p.add_argument("--skip-ransac", action="store_true")
    p.add_argument("--min-confidence", type=float, default=None)
    p.add_argument("--ransac-threshold", type=float, default=None)
    p.add_argument("--ransac-iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="RANSAC seed")
    p.add_argument("--workers", type=int, default=None, help="RANSAC worker threads")
    p.add_argument("--baselines", nargs="*", choices=["baseline1", "baseline2"], default=None)
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser("synth", help="Generate synthetic scenes with ground truth")
    p.add_argument("--output-dir", default=str(Path(settings.OUTPUT_DIR) / "synth"))
    p.add_argument("--name", default="scene")
    p.add_argument("--suite", type=int, default=0, help="Number of scenes (0: a single scene)")
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-mean", type=float, default=0.076)
    p.add_argument("--noise-std", type=float, default=4.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--jitter", type=float, default=0.1, help="Bone length jitter (fraction)")
    p.add_argument("--intrinsics", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("evaluate", help="Compare reports with ground-truth sidecars")
    p.add_argument("--report", action="append", required=True)
    p.add_argument("--ground-truth", action="append", required=True)
    p.add_argument("--output-json", default=None)
    p.add_argument("--output-csv", default=None)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("triangulate", help="Triangulate 3D joints with a calibrated report")
    p.add_argument("--poses", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--source", choices=TRIANGULATION_SOURCES, default="full")
    p.add_argument("--ground-truth", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--min-confidence", type=float, default=None)
    p.add_argument("--output", default="joints3d.json")
    p.set_defaults(handler=cmd_triangulate)

    p = sub.add_parser("serve", help="Run the HTTP API")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(handler=cmd_serve)

    p = sub.add_parser("schema", help="Write JSON schemas of the file formats")
    p.add_argument("--output-dir", default="schemas")
    p.set_defaults(handler=cmd_schema)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, (args.log_level or settings.LOG_LEVEL).upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        return args.handler(args)
    except CalibrationError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.error(f"❌ Unexpected failure: {e}", exc_info=True)
        print(f"error: internal failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
