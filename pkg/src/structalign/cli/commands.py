"""Individual command handler functions."""
import argparse
import asyncio
import json
import logging
import shutil
import sys
from pathlib import Path
from typing import Any

import pandas as pd

from structalign.config import AblationArm, ExperimentConfig, apply_ablation, load_config
from structalign.harness import ExperimentResult, run_continual, run_sweep
from structalign.reporting import (
    GEOMETRY_FILE,
    SUMMARY_FILE,
    aggregate_runs,
    discover_run_dirs,
    prepare_output_dir,
    publish_output_dir,
    write_run,
    write_sweep,
)
from structalign.exceptions import ConfigError
from structalign.verify import run_checks

logger = logging.getLogger("structalign")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3

DEFAULT_JOBS = 1


def _json_response(data: Any) -> str:
    """Helper to format JSON output."""
    return json.dumps(data, indent=2)


def _load(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config)
    arm = getattr(args, "ablation", None)
    if arm is not None:
        config = apply_ablation(config, arm)
    return config


def _seed_dir_name(seed: int) -> str:
    return f"seed-{seed}"


async def _run_seeds(config: ExperimentConfig, seeds: list[int], jobs: int) -> list[ExperimentResult]:
    sem = asyncio.Semaphore(max(1, jobs))

    async def execute(seed: int) -> ExperimentResult:
        async with sem:
            return await asyncio.to_thread(run_continual, config, seed)

    return list(await asyncio.gather(*(execute(seed) for seed in seeds)))


def cmd_run(args: argparse.Namespace) -> int:
    """Run the continual experiment for each seed and write the run directory."""
    config = _load(args)
    seeds = args.seed or [config.seed]
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"Duplicate seeds: {seeds}")
    staging = prepare_output_dir(args.out, overwrite=args.overwrite)
    try:
        results = asyncio.run(_run_seeds(config, seeds, args.jobs))
        for seed, result in zip(seeds, results):
            directory = staging if len(seeds) == 1 else staging / _seed_dir_name(seed)
            write_run(result, directory, dump_similarity=args.dump_sim)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    target = publish_output_dir(staging, args.out, overwrite=args.overwrite)
    for seed, result in zip(seeds, results):
        print(
            f"seed={seed} arm={result.config['ablation']} final_r1={result.final_r1:.2f} "
            f"mean_task_r1={result.final_mean_r1:.2f} bwf={result.final_bwf:.2f}"
        )
    logger.info(f"Results written to {target}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    """Run the oracle suite; exit 1 if any check fails."""
    results = run_checks(group_filter=args.filter, fault=args.inject_fault)
    if not results:
        raise ConfigError(f"No checks match filter {args.filter!r}")
    for result in results:
        print(result.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    """Aggregate run directories into mean/std tables and plot-ready trajectories."""
    run_dirs = discover_run_dirs(args.run_dirs)
    aggregate, trajectory = aggregate_runs(run_dirs)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        aggregate.to_csv(out / "aggregate.csv", index=False, lineterminator="\n")
        trajectory.to_csv(out / "trajectory.csv", index=False, lineterminator="\n")
        logger.info(f"Report for {len(run_dirs)} run(s) written to {out}")
    else:
        sys.stdout.write(aggregate.to_csv(index=False, lineterminator="\n"))
    return EXIT_OK


def cmd_geometry_report(args: argparse.Namespace) -> int:
    """Print the geometry diagnostics of one run as key-value text and its CSV rows."""
    run_dir = discover_run_dirs([args.run_dir])[0]
    try:
        geometry = pd.read_csv(run_dir / GEOMETRY_FILE)
        summary = json.loads((run_dir / SUMMARY_FILE).read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ConfigError(f"Malformed run directory {run_dir}: {e}")
    final = summary.get("geometry") or {}
    for key in ("eta", "epsilon", "gamma", "micd"):
        print(f"{key}={final.get(key)}")
    for category, delta in sorted((final.get("per_category_delta") or {}).items(), key=lambda kv: int(kv[0])):
        print(f"delta[{category}]={delta}")
    sys.stdout.write(geometry.to_csv(index=False, lineterminator="\n"))
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    """Grid over lambda1 x lambda2 on one stream and seed."""
    config = _load(args)
    out = Path(args.out)
    if out.exists() and not args.overwrite:
        raise ConfigError(f"{out} exists; pass --overwrite to replace it")
    cells = run_sweep(config, args.lambda1, args.lambda2, seed=args.seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_sweep(cells, out)
    print(_json_response([cell.__dict__ for cell in cells]))
    return EXIT_OK


COMMAND_HANDLERS = {
    "run": cmd_run,
    "verify": cmd_verify,
    "report": cmd_report,
    "geometry-report": cmd_geometry_report,
    "sweep": cmd_sweep,
}

ABLATION_CHOICES = [arm.value for arm in AblationArm]
