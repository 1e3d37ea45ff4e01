# backend/cli.py
"""
posekernel simulate|kernel|encode|localize|train|eval|export --config <file> [--seed N] [--out DIR]

Exit codes: 0 success, 1 configuration/validation error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from common.errors import ConfigError, PoseKernelError
from common.logging_utils import configure_logging
from schemas.experiment import ExperimentConfig, apply_overrides, load_experiment
from services import pipeline_service

logger = logging.getLogger("posekernel")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posekernel", description="Acoustic pose-kernel pipeline.")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default from POSEKERNEL_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
        p.add_argument("--config", required=config_required, help="experiment JSON file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the config output directory")

    _common(sub.add_parser("simulate", help="render empty-room and with-body recordings"))

    p = sub.add_parser("kernel", help="extract per-pair pose kernels from recordings")
    _common(p)
    p.add_argument("--wavs", default=None, help="recording directory (default <out>/simulate)")

    p = sub.add_parser("encode", help="spatially encode pose kernels into a PKVX field")
    _common(p)
    p.add_argument("--kernels", default=None, help="kernel directory (default <out>/kernel)")

    p = sub.add_parser("localize", help="geometric localization from pose kernels")
    _common(p)
    p.add_argument("--kernels", default=None, help="kernel directory (default <out>/kernel)")
    p.add_argument("--heatmaps", default=None, help="optional PKHM heatmap file (needs vision.camera)")

    _common(sub.add_parser("train", help="train the toy 3D network on synthetic scenes"))

    p = sub.add_parser("eval", help="evaluate a checkpoint on a synthetic test set")
    _common(p)
    p.add_argument("--checkpoint", default=None, help="PKNN file (default <out>/train/posenet.pknn)")

    p = sub.add_parser("export", help="PGM z-slices and CSV of a PKVX field")
    _common(p, config_required=False)
    p.add_argument("--field", required=True, help="PKVX file")
    p.add_argument("--channel", type=int, default=0)
    return parser


def _config(args: argparse.Namespace) -> ExperimentConfig:
    return apply_overrides(load_experiment(args.config), seed=args.seed, out=args.out)


def run(args: argparse.Namespace) -> int:
    if args.command == "export":
        out = args.out
        if out is None:
            out = str(pipeline_service.command_dir(_config(args), "export")) if args.config else "out/export"
        paths = pipeline_service.cmd_export(args.field, out, args.channel)
        logger.info("🖼️ exported %d slices to %s", len(paths), out)
        return EXIT_OK

    cfg = _config(args)
    if args.command == "simulate":
        result = pipeline_service.cmd_simulate(cfg)
        logger.info("✅ wrote %d recordings and %s", len(result.wavs), result.truth)
    elif args.command == "kernel":
        result = pipeline_service.cmd_kernel(cfg, args.wavs)
        if result.no_target:
            logger.warning("no target")
        logger.info("✅ extracted %d pose kernels into %s", len(result.kernels), result.out_dir)
    elif args.command == "encode":
        path = pipeline_service.cmd_encode(cfg, args.kernels)
        logger.info("✅ wrote %s", path)
    elif args.command == "localize":
        result = pipeline_service.cmd_localize(cfg, args.kernels, args.heatmaps)
        for c, est in enumerate(result.estimates):
            logger.info("📍 channel %d estimate: (%.3f, %.3f, %.3f) m", c, *est)
    elif args.command == "train":
        result = pipeline_service.cmd_train(cfg)
        logger.info("✅ checkpoint %s, final loss %.4e", result.checkpoint, result.log.losses[-1])
    elif args.command == "eval":
        checkpoint = args.checkpoint or str(pipeline_service.command_dir(cfg, "train") / "posenet.pknn")
        report = pipeline_service.cmd_eval(cfg, checkpoint)
        logger.info("✅ MPJPE %.2f cm over %d samples", report.mpjpe_cm, report.n_samples)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return run(args)
    except (ConfigError, ValidationError) as e:
        logger.error("❌ invalid configuration:\n%s", e)
        return EXIT_CONFIG
    except PoseKernelError as e:
        logger.error("❌ %s failed: %s", args.command, e)
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception("❌ %s failed unexpectedly: %s", args.command, e)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
