import json
import logging
import os
from time import monotonic
from typing import List

from .densities import Trajectory
from .pmbm import FULL_WINDOW
from .simulation import MonteCarloReport
from .utils import rows_to_csv_buffer

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("scenario", "N", "L", "trials", "total", "loc", "missed", "false", "mean_trial_seconds")
PER_SCAN_COLUMNS = ("time", "total", "loc", "missed", "false")
CONVERGENCE_COLUMNS = ("trial", "scan", "iteration", "dual", "best_primal", "gap")
TIMING_COLUMNS = ("trial", "seconds", "total")

SUMMARY_FILE = "summary.csv"
PER_SCAN_FILE = "per_scan.csv"
TRAJECTORIES_FILE = "trajectories.json"
CONVERGENCE_FILE = "convergence.csv"
TIMING_FILE = "timing.csv"


def summary_rows(report: MonteCarloReport, record_timing: bool = False) -> List[tuple]:
    mean = report.mean
    if mean is None:
        return []
    window = report.filter.window
    return [
        (
            report.name,
            report.filter.n_scan,
            window if window == FULL_WINDOW else int(window),
            len(report.trials),
            mean.total,
            mean.localization,
            mean.missed,
            mean.false_,
            report.mean_trial_seconds if record_timing else None,
        )
    ]


def per_scan_rows(report: MonteCarloReport) -> List[tuple]:
    return [
        (time, result.total, result.localization, result.missed, result.false_)
        for time, result in enumerate(report.per_scan, start=1)
    ]


def convergence_rows(report: MonteCarloReport) -> List[tuple]:
    return [
        (trial.trial, scan, row.iteration, row.dual, row.best_primal, row.gap)
        for trial in report.trials
        for scan, row in trial.convergence
    ]


def timing_rows(report: MonteCarloReport) -> List[tuple]:
    rows = []
    for trial in report.trials:
        total = sum(result.total for result in trial.per_scan) / max(len(trial.per_scan), 1)
        rows.append((trial.trial, trial.seconds, total))
    return rows


def _trajectory_dict(trajectory: Trajectory) -> dict:
    return dict(birth=trajectory.birth, last=trajectory.last, states=trajectory.states.tolist())


def trajectories_document(report: MonteCarloReport) -> List[dict]:
    return [
        dict(
            trial=trial.trial,
            filtered=[_trajectory_dict(trajectory) for trajectory in trial.filtered],
            smoothed=[_trajectory_dict(trajectory) for trajectory in trial.smoothed],
        )
        for trial in report.trials
    ]


def _write(path: str, content: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(content)


def emit_results(
    report: MonteCarloReport, directory: str, *, record_timing: bool = False, debug_dual: bool = False
) -> List[str]:
    """
    Write the result files of a run into `directory` (created if needed):
    summary.csv, per_scan.csv, trajectories.json, timing.csv and, with debug_dual,
    convergence.csv. Only timing.csv (and mean_trial_seconds when record_timing is set)
    depends on wall-clock time.

    :param report: Completed Monte Carlo report
    :param directory: Output directory
    :param record_timing: Fill the mean_trial_seconds column of summary.csv
    :param debug_dual: Also write the dual decomposition convergence rows
    :return: Paths of the written files
    """
    start_time = monotonic()
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as e:
        raise ValueError(f"Output directory '{directory}' cannot be created: {e}")

    if not report.trials:
        logger.warning("No trials in report, writing headers only")

    tables = [
        (SUMMARY_FILE, SUMMARY_COLUMNS, summary_rows(report, record_timing)),
        (PER_SCAN_FILE, PER_SCAN_COLUMNS, per_scan_rows(report)),
        (TIMING_FILE, TIMING_COLUMNS, timing_rows(report)),
    ]
    if debug_dual:
        tables.append((CONVERGENCE_FILE, CONVERGENCE_COLUMNS, convergence_rows(report)))

    paths = []
    try:
        for file_name, columns, rows in tables:
            path = os.path.join(directory, file_name)
            _write(path, rows_to_csv_buffer(rows, columns).getvalue())
            paths.append(path)

        path = os.path.join(directory, TRAJECTORIES_FILE)
        _write(path, json.dumps(trajectories_document(report), indent=2))
        paths.append(path)
    except OSError as e:
        raise ValueError(f"Output directory '{directory}' is not writable: {e}")

    logger.info(
        "Finished writing results",
        extra=dict(directory=directory, files=len(paths), duration=monotonic() - start_time),
    )
    return paths
