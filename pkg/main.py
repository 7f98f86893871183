# main.py
import sys
import os
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '.')))
import argparse
import logging
from typing import Any, Dict, List, Optional

from src.core.config import PipelineConfig, dump_config, load_config
from src.core.errors import PipelineError
from src.core.task_manager import STAGE_ORDER, StageManager
from src.ingestion.synthetic import generate_mini_dataset
from src.pipeline.reports import REPORT_FORMATS, REPORT_KINDS, emit_report, replication_summary, write_replication_summary
from src.pipeline.stages import (
    RunManifest, derive_thresholds_step, estimate_radius_step, extract_long_step, run_stage,
)
from src.utils.utils import setup_logging

logger = logging.getLogger(__name__)

# sub-command -> pipeline stage
STAGE_COMMANDS = {
    "ingest": "ingest",
    "extract-relations": "relations",
    "build-forest": "forest",
    "mine-short": "mine",
    "cluster-regions": "regions",
    "mine-long": "longterm",
    "report": "report",
}
# global flags that are shorter spellings of a config field
FLAG_ALIASES = {"rng_seed": "--seed", "out_dir": "--out"}


def _add_global_flags(parser: argparse.ArgumentParser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="Flat key=value config file; flags override its values.")
    parser.add_argument("--print-config", action="store_true", default=argparse.SUPPRESS if suppress else False,
                        help="Print the effective configuration as key=value lines and exit.")
    group = parser.add_argument_group("configuration fields")
    for name, field in PipelineConfig.model_fields.items():
        flags = [f"--{name.replace('_', '-')}"]
        if name in FLAG_ALIASES:
            flags.append(FLAG_ALIASES[name])
        group.add_argument(*flags, dest=name, default=default, metavar="VALUE",
                           help=field.description)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Geo-spatiotemporal pattern discovery: short-term propagation patterns and long-term impact.")
    _add_global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _add_global_flags(common, suppress=True)

    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    helps = {
        "ingest": "Parse, validate and deduplicate raw entities; build the station index.",
        "derive-thresholds": "Derive weather intensity thresholds from raw observations.",
        "extract-relations": "Extract child-parent relations between weakly dependent entities.",
        "build-forest": "Resolve parents and build per-city relation forests.",
        "mine-short": "Mine frequent propagation patterns per city.",
        "cluster-regions": "Cluster states by their propagation patterns.",
        "extract-long": "Extract long-duration entity candidates (before merging).",
        "estimate-radius": "Estimate the vicinity radius with DBSCAN over sampled traffic entities.",
        "mine-long": "Merge long entities, count vicinity activity and run the significance tests.",
        "report": "Emit the final reports.",
        "run-all": "Run every pipeline stage, reusing cached outputs.",
        "make-mini-dataset": "Write the deterministic synthetic mini dataset.",
        "summary": "Compare run statistics with the published reference values.",
    }
    commands = {}
    for name, text in helps.items():
        commands[name] = sub.add_parser(name, help=text, description=text, parents=[common])
    commands["report"].add_argument("--kind", choices=REPORT_KINDS, help="Emit only this report kind.")
    commands["report"].add_argument("--format", choices=REPORT_FORMATS, help="Emit only this format.")
    commands["make-mini-dataset"].add_argument("--dest", help="Target directory (default: <out>/mini_dataset).")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {name: getattr(args, name) for name in PipelineConfig.model_fields if getattr(args, name, None) is not None}


def _print_stage_banner(manifest: RunManifest, stages: List[str]):
    print("\n" + "=" * 20 + " Pipeline Result " + "=" * 20)
    for stage in stages:
        record = manifest.stages.get(stage)
        if record is None:
            continue
        print(f"Stage: {stage:<10} Status: {record.status.upper():<7} Wall time: {record.wall_time:.2f}s")
        for key, value in sorted(record.result.items()):
            if isinstance(value, (int, float, str)):
                print(f"  {key}: {value}")
    print(f"Output directory: {manifest.out_dir}")
    print("=" * 57)


def run_all(cfg: PipelineConfig) -> RunManifest:
    manifest = RunManifest.load(cfg.out_dir)
    manager = StageManager(list(STAGE_ORDER))
    while not manager.is_complete():
        stage = manager.get_next_stage()
        if stage is None:
            break
        name = stage["name"]
        try:
            manifest = run_stage(name, manifest, cfg)
        except PipelineError as e:
            manager.update_stage_status(name, "failed", error=str(e))
            raise
        record = manifest.stages[name]
        manager.update_stage_status(name, record.status, result=record.result)
    for row in manager.summary():
        logger.info(f"{row['stage']}: {row['status']}")
    return manifest


def dispatch(args: argparse.Namespace, cfg: PipelineConfig) -> int:
    command = args.command
    if command == "make-mini-dataset":
        dest = args.dest or os.path.join(cfg.out_dir, "mini_dataset")
        paths = generate_mini_dataset(dest, seed=cfg.rng_seed)
        print("\n" + "=" * 20 + " Mini Dataset " + "=" * 20)
        for key, path in sorted(paths.items()):
            print(f"{key}: {path}")
        print(f"Run it with: python main.py --config {paths['config_path']} run-all")
        print("=" * 54)
        return 0

    if command == "run-all":
        manifest = run_all(cfg)
        _print_stage_banner(manifest, STAGE_ORDER)
        return 0

    manifest = RunManifest.load(cfg.out_dir)
    if command == "report" and (args.kind or args.format):
        kinds = [args.kind] if args.kind else list(REPORT_KINDS)
        formats = [args.format] if args.format else list(REPORT_FORMATS)
        written = [emit_report(k, f, manifest) for k in kinds for f in formats]
        print("\n" + "=" * 20 + " Reports " + "=" * 20)
        for name in written:
            print(f"Report saved to: {manifest.path(name)}")
        print("=" * 49)
        return 0

    if command in STAGE_COMMANDS:
        stage = STAGE_COMMANDS[command]
        manifest = run_stage(stage, manifest, cfg)
        _print_stage_banner(manifest, [stage])
        return 0

    if command == "derive-thresholds":
        result = derive_thresholds_step(cfg, cfg.out_dir)
    elif command == "extract-long":
        result = extract_long_step(cfg, manifest)
    elif command == "estimate-radius":
        result = estimate_radius_step(cfg, manifest)
    elif command == "summary":
        path = write_replication_summary(manifest)
        print("\n" + "=" * 20 + " Replication Summary " + "=" * 20)
        print(f"{'statistic':<22}{'observed':>16}{'reference':>16}{'ratio':>10}")
        for row in replication_summary(manifest):
            observed = "n/a" if row["observed"] is None else f"{row['observed']:.6g}"
            ratio = "n/a" if row["ratio"] is None else f"{row['ratio']:.3g}"
            print(f"{row['statistic']:<22}{observed:>16}{row['reference']:>16,}{ratio:>10}")
        print(f"Saved to: {path}")
        print("=" * 61)
        return 0
    else:
        raise PipelineError(f"Unhandled command {command}")

    print("\n" + "=" * 20 + f" {command} " + "=" * 20)
    for key, value in result.items():
        print(f"{key}: {value}")
    print("=" * (42 + len(command)))
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level or "INFO")

    try:
        cfg = load_config(args.config, _overrides(args))
        if args.print_config:
            sys.stdout.write(dump_config(cfg))
            return 0
        if not args.command:
            parser.error("a command is required unless --print-config is given")
        logging.getLogger().setLevel(getattr(logging, cfg.log_level.upper(), logging.INFO))
        logger.info(f"Running '{args.command}' with output directory {cfg.out_dir}")
        return dispatch(args, cfg)
    except PipelineError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"Error: {e}")
        return e.exit_code
    except Exception as e:
        logger.critical(f"An unexpected error occurred in main: {e}", exc_info=True)
        print(f"A critical unexpected error occurred: {e}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
