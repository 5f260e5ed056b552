"""Run-directory writers and multi-run aggregation."""
import json
import logging
import os
import shutil
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

from structalign.config import AblationArm
from structalign.encoders import save_checkpoint
from structalign.exceptions import ConfigError, OutputExistsError
from structalign.harness import ExperimentResult, SweepCell

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
GEOMETRY_FILE = "geometry.csv"
TRAIN_LOG_FILE = "train_log.csv"
PROTOTYPE_SIMILARITY_FILE = "prototype_similarity.csv"
SIMILARITY_FILE = "similarity.csv"
SUMMARY_FILE = "summary.json"
CHECKPOINT_FILE = "model.saln"

METRIC_COLUMNS = ["r1", "r5", "r10", "medr", "meanr"]
GEOMETRY_COLUMNS = ["step", "eta", "epsilon", "gamma", "micd"]
TRAIN_LOG_COLUMNS = ["task", "epoch", "step", "scl", "etf", "crp", "total"]
OVERALL_LABEL = "all"


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")


def metrics_frame(result: ExperimentResult) -> pd.DataFrame:
    rows = []
    for record in result.steps:
        for i, report in enumerate(record.per_task, start=1):
            rows.append({"after_task": record.after_task, "eval_task": str(i), **report.to_dict()})
        rows.append({"after_task": record.after_task, "eval_task": OVERALL_LABEL, **record.overall.to_dict()})
    return pd.DataFrame(rows, columns=["after_task", "eval_task", *METRIC_COLUMNS])


def geometry_frame(result: ExperimentResult) -> pd.DataFrame:
    rows = []
    for record in result.steps:
        g = record.geometry
        if g is None:
            rows.append({"step": record.after_task, "eta": np.nan, "epsilon": np.nan, "gamma": np.nan, "micd": np.nan})
        else:
            rows.append({"step": record.after_task, "eta": g.eta, "epsilon": g.epsilon, "gamma": g.gamma, "micd": g.micd})
    return pd.DataFrame(rows, columns=GEOMETRY_COLUMNS)


def train_log_frame(result: ExperimentResult) -> pd.DataFrame:
    return pd.DataFrame([log.to_dict() for log in result.train_log], columns=TRAIN_LOG_COLUMNS)


def prototype_similarity_frame(result: ExperimentResult) -> pd.DataFrame:
    rows = []
    for source, (categories, matrix) in result.steps[-1].prototype_similarity.items():
        for a, row_category in enumerate(categories):
            for b, col_category in enumerate(categories):
                rows.append({
                    "source": source,
                    "row_category": row_category,
                    "col_category": col_category,
                    "value": float(matrix[a, b]),
                })
    return pd.DataFrame(rows, columns=["source", "row_category", "col_category", "value"])


def similarity_frame(result: ExperimentResult) -> pd.DataFrame:
    values = result.steps[-1].similarity
    frame = pd.DataFrame(values, columns=[f"v{j}" for j in range(values.shape[1])])
    frame.insert(0, "query", np.arange(values.shape[0]))
    return frame


def summary_record(result: ExperimentResult) -> dict:
    final = result.steps[-1]
    return {
        "config": result.config,
        "seed": result.config["seed"],
        "ablation": result.config["ablation"],
        "k_tasks": result.k_tasks,
        "bwf": result.final_bwf,
        "bwf_defined": result.bwf_defined,
        "bwf_by_step": result.bwf_by_step,
        "final_r1": result.final_r1,
        "final_mean_r1": result.final_mean_r1,
        "recall_matrix": [[None if np.isnan(x) else float(x) for x in row] for row in result.recall_matrix],
        "geometry": final.geometry.to_dict() if final.geometry else None,
        "frozen_base_intact": result.frozen_intact,
        "wall_clock_seconds": result.wall_clock,
    }


def prepare_output_dir(out: str | os.PathLike, overwrite: bool = False) -> Path:
    """Fresh temporary sibling of ``out``; publish_output_dir moves it into place."""
    target = Path(out)
    if target.exists() and not overwrite:
        raise OutputExistsError(f"Output directory {target} exists; pass --overwrite to replace it")
    target.parent.mkdir(parents=True, exist_ok=True)
    return Path(tempfile.mkdtemp(prefix=f".{target.name}-", dir=target.parent))


def publish_output_dir(staging: Path, out: str | os.PathLike, overwrite: bool = False) -> Path:
    target = Path(out)
    if target.exists():
        if not overwrite:
            shutil.rmtree(staging, ignore_errors=True)
            raise OutputExistsError(f"Output directory {target} appeared while writing")
        shutil.rmtree(target)
    os.replace(staging, target)
    return target


def write_run(result: ExperimentResult, directory: Path, dump_similarity: bool = False) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    _write_csv(metrics_frame(result), directory / METRICS_FILE)
    _write_csv(geometry_frame(result), directory / GEOMETRY_FILE)
    _write_csv(train_log_frame(result), directory / TRAIN_LOG_FILE)
    _write_csv(prototype_similarity_frame(result), directory / PROTOTYPE_SIMILARITY_FILE)
    if dump_similarity:
        _write_csv(similarity_frame(result), directory / SIMILARITY_FILE)
    (directory / SUMMARY_FILE).write_text(json.dumps(summary_record(result), indent=2) + "\n", encoding="utf-8")
    save_checkpoint(directory / CHECKPOINT_FILE, result.final_state)


def write_sweep(cells: Iterable[SweepCell], path: Path) -> None:
    frame = pd.DataFrame(
        [
            {
                "lambda1": c.lambda1,
                "lambda2": c.lambda2,
                "final_r1": c.final_r1,
                "final_mean_r1": c.final_mean_r1,
                "final_bwf": c.final_bwf,
            }
            for c in cells
        ]
    )
    _write_csv(frame, path)


def discover_run_dirs(paths: Iterable[str | os.PathLike]) -> list[Path]:
    """Run directories named directly, or one level below a multi-seed output directory."""
    found = []
    for raw in paths:
        path = Path(raw)
        if not path.is_dir():
            raise ConfigError(f"Not a directory: {path}")
        if (path / METRICS_FILE).is_file():
            found.append(path)
            continue
        children = sorted(p for p in path.iterdir() if p.is_dir() and (p / METRICS_FILE).is_file())
        if not children:
            raise ConfigError(f"No {METRICS_FILE} in {path} or its subdirectories")
        found.extend(children)
    return found


def _read_run_csv(directory: Path, name: str, columns: list[str]) -> pd.DataFrame:
    path = directory / name
    dtype = {"eval_task": str} if "eval_task" in columns else None
    try:
        frame = pd.read_csv(path, dtype=dtype)
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise ConfigError(f"Malformed run directory {directory}: cannot read {name}: {e}")
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ConfigError(f"Malformed run directory {directory}: {name} lacks columns {missing}")
    return frame


def _mean_std(frame: pd.DataFrame, keys: list[str], values: list[str]) -> pd.DataFrame:
    grouped = frame.groupby(keys, sort=True)[values]
    means = grouped.mean().add_suffix("_mean")
    stds = grouped.std(ddof=0).add_suffix("_std")
    counts = grouped.size().rename("runs")
    merged = pd.concat([means, stds, counts], axis=1).reset_index()
    ordered = keys + [c for v in values for c in (f"{v}_mean", f"{v}_std")] + ["runs"]
    return merged[ordered]


def _trajectory_rows(metrics: pd.DataFrame, geometry: pd.DataFrame) -> list[dict]:
    rows = []
    for step in sorted(metrics["after_task"].unique()):
        at_step = metrics[metrics["after_task"] == step]
        tasks = at_step[at_step["eval_task"] != OVERALL_LABEL]
        overall = at_step[at_step["eval_task"] == OVERALL_LABEL]
        micd_row = geometry[geometry["step"] == step]
        rows.append({
            "after_task": int(step),
            "mean_task_r1": float(tasks["r1"].mean()),
            "overall_r1": float(overall["r1"].iloc[0]) if len(overall) else np.nan,
            "micd": float(micd_row["micd"].iloc[0]) if len(micd_row) else np.nan,
        })
    return rows


def aggregate_runs(run_dirs: list[Path]) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Mean/std over runs per metric per step, and the plot-ready R@1 and MICD trajectories.

    Returns:
        (aggregate over (after_task, eval_task), trajectory over after_task)
    """
    if not run_dirs:
        raise ConfigError("No run directories to aggregate")
    metric_frames, trajectory_rows = [], []
    for run_dir in run_dirs:
        metrics = _read_run_csv(run_dir, METRICS_FILE, ["after_task", "eval_task", *METRIC_COLUMNS])
        geometry = _read_run_csv(run_dir, GEOMETRY_FILE, GEOMETRY_COLUMNS)
        if metrics.empty:
            raise ConfigError(f"Malformed run directory {run_dir}: {METRICS_FILE} has no rows")
        metric_frames.append(metrics)
        trajectory_rows.extend(_trajectory_rows(metrics, geometry))

    aggregate = _mean_std(
        pd.concat(metric_frames, ignore_index=True), ["after_task", "eval_task"], METRIC_COLUMNS
    )
    trajectory = _mean_std(pd.DataFrame(trajectory_rows), ["after_task"], ["mean_task_r1", "overall_r1", "micd"])
    logger.info(f"Aggregated {len(run_dirs)} run(s)")
    return aggregate, trajectory


ABLATION_COLUMNS = ["arm", "seed", "final_mean_r1", "final_bwf", "micd_first", "micd_last", "epsilon", "gamma"]
# share of seeds on which the full arm must concentrate without collapsing
MICD_SEED_SHARE = 0.8
MICD_FLOOR = 0.01
MIN_FULL_GAIN = 1.0


def ablation_frame(results_by_seed: dict[int, dict[AblationArm, ExperimentResult]]) -> pd.DataFrame:
    """One row per (arm, seed) with the final recall, BWF and first/last geometry."""
    rows = []
    for seed, results in results_by_seed.items():
        for arm, result in results.items():
            first, last = result.steps[0].geometry, result.steps[-1].geometry
            rows.append({
                "arm": str(arm),
                "seed": seed,
                "final_mean_r1": result.final_mean_r1,
                "final_bwf": result.final_bwf,
                "micd_first": first.micd if first else np.nan,
                "micd_last": last.micd if last else np.nan,
                "epsilon": last.epsilon if last else np.nan,
                "gamma": last.gamma if last else np.nan,
            })
    return pd.DataFrame(rows, columns=ABLATION_COLUMNS)


def ablation_criteria(frame: pd.DataFrame) -> dict[str, bool]:
    """Expected orderings of the ablation grid, averaged over seeds.

    Recall orderings allow ties; the full arm must still beat the framework by
    MIN_FULL_GAIN points. MICD is judged per seed on the full arm.
    """
    means = frame.groupby("arm").mean(numeric_only=True)
    r1, bwf_mean = means["final_mean_r1"], means["final_bwf"]
    full, crp, cetf, framework = (
        str(arm) for arm in (AblationArm.FULL, AblationArm.CRP, AblationArm.CETF, AblationArm.FRAMEWORK)
    )

    full_runs = frame[frame["arm"] == full]
    concentrated = (full_runs["micd_last"] < full_runs["micd_first"]) & (full_runs["micd_last"] > MICD_FLOOR)
    return {
        "R@1 full >= cetf": bool(r1[full] >= r1[cetf]),
        "R@1 cetf >= framework": bool(r1[cetf] >= r1[framework]),
        "R@1 full >= crp": bool(r1[full] >= r1[crp]),
        "R@1 crp >= framework": bool(r1[crp] >= r1[framework]),
        f"R@1 full - framework >= {MIN_FULL_GAIN:g}": bool(r1[full] - r1[framework] >= MIN_FULL_GAIN),
        "BWF full < framework": bool(bwf_mean[full] < bwf_mean[framework]),
        f"MICD falls and stays > {MICD_FLOOR:g} on full": bool(
            len(full_runs) > 0 and concentrated.sum() >= np.ceil(MICD_SEED_SHARE * len(full_runs))
        ),
        "epsilon full < framework": bool(means.loc[full, "epsilon"] < means.loc[framework, "epsilon"]),
        "gamma full < framework": bool(means.loc[full, "gamma"] < means.loc[framework, "gamma"]),
    }
