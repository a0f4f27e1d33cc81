"""Monte Carlo evaluation harness.

A campaign iterates ground-truth points times trials. Each trial synthesizes
one measurement set and runs every requested estimator variant on that
identical set, so per-trial comparisons are paired:

* ``init``: the full pipeline. Both initializers run, their variances gate
  the modalities, and the refinement starts from the fused initial point
  with the initializers' per-locator weights.
* ``no_init_1``: refinement from the center of the investigation area with
  unit weights and all locators active.
* ``no_init_2``: refinement from the true position perturbed horizontally by
  a Gaussian with the configured standard deviation (a stand-in for rough
  prior knowledge, e.g. from tracking), again with unit weights.

Per-trial seeds derive from the campaign seed via
``SeedSequence([campaign_seed, trial_index])``, which makes results
bit-identical regardless of how trials are distributed over workers.

Accuracy is reported on horizontal (x-y) errors: mean, median, 95th and 99th
percentiles (linear interpolation between order statistics), full CDF
samples, and mean/max over the central-area subset of ground-truth points.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import Scenario, validate_scenario
from .fusion import initialize_joint, reweighted_aoa, reweighted_toa
from .optimizer import OptimizerConfig, maximize
from .simulator import synthesize

log = logging.getLogger(__name__)

METHODS = ("toa", "aoa", "joint")
VARIANTS = ("init", "no_init_1", "no_init_2")

RECORD_COLUMNS = (
    "trial_id",
    "point_index",
    "seed",
    "method",
    "variant",
    "gt_x",
    "gt_y",
    "gt_z",
    "est_x",
    "est_y",
    "est_z",
    "error_2d",
    "converged",
    "active_modalities",
    "failed",
)

CENTRAL_SUBSET_SIZE = 6


@dataclass(frozen=True, eq=False)
class TrialRecord:
    """One estimator's outcome on one synthesized measurement set."""

    trial_id: int
    point_index: int
    seed: int
    method: str
    variant: str
    ground_truth: np.ndarray
    estimate: np.ndarray
    error_2d: float
    converged: bool
    active_modalities: str
    failed: bool


@dataclass(frozen=True, eq=False)
class MethodSummary:
    """Aggregate 2D-error statistics for one method/variant pair.

    Statistics are ``None`` when no trial produced a usable estimate. CDF
    samples pair sorted errors with cumulative probabilities reaching 1.
    """

    n_records: int
    n_failed: int
    n_flagged: int
    mean: float | None
    median: float | None
    p95: float | None
    p99: float | None
    central_mean: float | None
    central_max: float | None
    cdf_errors: list[float]
    cdf_probabilities: list[float]


@dataclass(frozen=True, eq=False)
class CampaignSummary:
    campaign_seed: int | None
    trials_per_point: int | None
    n_trials: int
    central_point_indices: list[int]
    methods: dict[str, MethodSummary]


def default_method_list() -> list[tuple[str, str]]:
    """All nine method/variant combinations."""
    return [(m, v) for m in METHODS for v in VARIANTS]


def trial_seed(campaign_seed: int, trial_index: int) -> int:
    """Per-trial seed: first word of ``SeedSequence([campaign_seed, trial_index])``."""
    seq = np.random.SeedSequence([int(campaign_seed), int(trial_index)])
    return int(seq.generate_state(1)[0])


def area_center(scenario: Scenario) -> np.ndarray:
    """Center of the ground-truth bounding box (the investigation area)."""
    points = scenario.ground_truth_points
    return 0.5 * (points.min(axis=0) + points.max(axis=0))


def central_indices_from_points(points: np.ndarray, count: int = CENTRAL_SUBSET_SIZE) -> list[int]:
    """Indices of the ``count`` points nearest the layout centroid.

    Ties break toward the lower index, so the subset is deterministic.
    """
    points = np.asarray(points, dtype=float)
    if len(points) == 0:
        return []
    centroid = points.mean(axis=0)
    distances = np.linalg.norm(points - centroid, axis=1)
    order = np.lexsort((np.arange(len(points)), distances))
    return sorted(int(i) for i in order[: min(count, len(points))])


def central_point_indices(scenario: Scenario) -> list[int]:
    if scenario.central_point_indices is not None:
        return list(scenario.central_point_indices)
    return central_indices_from_points(scenario.ground_truth_points)


def _failed_record(trial_id, point_index, seed, method, variant, x_true, active) -> TrialRecord:
    return TrialRecord(
        trial_id=trial_id,
        point_index=point_index,
        seed=seed,
        method=method,
        variant=variant,
        ground_truth=np.asarray(x_true, dtype=float),
        estimate=np.full(3, np.nan),
        error_2d=float("nan"),
        converged=False,
        active_modalities=active,
        failed=True,
    )


def run_trial(
    scenario: Scenario,
    x_true,
    seed: int,
    methods: Sequence[tuple[str, str]] | None = None,
    trial_id: int = 0,
    point_index: int = 0,
) -> list[TrialRecord]:
    """Synthesize one measurement set and run each requested estimator on it.

    Estimator failures never abort the trial; they yield records with
    ``failed=True`` and NaN estimates.
    """
    methods = list(methods) if methods is not None else default_method_list()
    x_true = np.asarray(x_true, dtype=float)
    params = scenario.algorithm_params

    root = np.random.SeedSequence(int(seed))
    measurement_seq, perturb_seq = root.spawn(2)
    toa, aoa, _truth = synthesize(scenario, x_true, measurement_seq)

    # One horizontal perturbation per trial, shared by every no_init_2 run.
    perturb_rng = np.random.default_rng(perturb_seq)
    offset = perturb_rng.normal(0.0, scenario.baseline_params.sigma_init, size=2)
    perturbed_start = x_true + np.array([offset[0], offset[1], 0.0])

    init = None
    init_error: Exception | None = None
    if any(variant == "init" for _, variant in methods):
        try:
            init = initialize_joint(scenario.locators, toa, aoa, params)
        except Exception as exc:  # recorded per-record below
            init_error = exc
            log.warning("trial %d: initialization failed: %s", trial_id, exc)

    center = area_center(scenario)
    config = OptimizerConfig()

    records: list[TrialRecord] = []
    for method, variant in methods:
        single_modality = {"toa": "toa_only", "aoa": "aoa_only"}
        try:
            if variant == "init":
                if init is None:
                    raise init_error or RuntimeError("initialization unavailable")
                active = init.active_modalities if method == "joint" else single_modality[method]
                if method == "toa":
                    if init.estimate_toa is None:
                        raise RuntimeError("range initializer unavailable")
                    estimate = maximize(
                        "toa",
                        init.estimate_toa,
                        scenario.locators,
                        toa_measurements=reweighted_toa(toa, init.weights_toa),
                        config=config,
                    )
                elif method == "aoa":
                    if init.estimate_aoa is None:
                        raise RuntimeError("bearing initializer unavailable")
                    estimate = maximize(
                        "aoa",
                        init.estimate_aoa,
                        scenario.locators,
                        aoa_measurements=reweighted_aoa(aoa, init.weights_aoa, params.kappa_max),
                        config=config,
                    )
                else:
                    objective = {
                        "both": "joint",
                        "none_flagged": "joint",
                        "toa_only": "toa",
                        "aoa_only": "aoa",
                    }[init.active_modalities]
                    estimate = maximize(
                        objective,
                        init.initial_point,
                        scenario.locators,
                        toa_measurements=reweighted_toa(toa, init.weights_toa),
                        aoa_measurements=reweighted_aoa(aoa, init.weights_aoa, params.kappa_max),
                        config=config,
                    )
            else:
                active = single_modality.get(method, "both")
                start = center if variant == "no_init_1" else perturbed_start
                estimate = maximize(
                    method,
                    start,
                    scenario.locators,
                    toa_measurements=toa,
                    aoa_measurements=aoa,
                    config=config,
                )
            error_2d = float(np.linalg.norm((estimate.position - x_true)[:2]))
            records.append(
                TrialRecord(
                    trial_id=trial_id,
                    point_index=point_index,
                    seed=seed,
                    method=method,
                    variant=variant,
                    ground_truth=x_true,
                    estimate=estimate.position,
                    error_2d=error_2d,
                    converged=estimate.converged,
                    active_modalities=active,
                    failed=False,
                )
            )
        except Exception as exc:
            log.warning("trial %d %s/%s failed: %s", trial_id, method, variant, exc)
            records.append(
                _failed_record(trial_id, point_index, seed, method, variant, x_true,
                               single_modality.get(method, "both"))
            )
    return records


def _trial_task(args) -> list[TrialRecord]:
    scenario, methods, trial_id, point_index, seed, x_true = args
    return run_trial(
        scenario, x_true, seed, methods=methods, trial_id=trial_id, point_index=point_index
    )


def run_campaign(
    scenario: Scenario,
    trials_per_point: int,
    campaign_seed: int,
    methods: Sequence[tuple[str, str]] | None = None,
    workers: int = 1,
) -> tuple[CampaignSummary, list[TrialRecord]]:
    """Run the full grid of ground-truth points times trials.

    Results are independent of ``workers``: per-trial seeds depend only on
    the campaign seed and the trial index, and records are assembled in
    trial order.
    """
    validate_scenario(scenario)
    if trials_per_point < 1:
        raise ValueError("trials_per_point must be >= 1")
    methods = list(methods) if methods is not None else default_method_list()

    points = scenario.ground_truth_points
    tasks = []
    for point_index in range(len(points)):
        for rep in range(trials_per_point):
            trial_id = point_index * trials_per_point + rep
            tasks.append(
                (scenario, methods, trial_id, point_index,
                 trial_seed(campaign_seed, trial_id), points[point_index])
            )

    records: list[TrialRecord] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for batch in pool.map(_trial_task, tasks, chunksize=8):
                records.extend(batch)
    else:
        for task in tasks:
            records.extend(_trial_task(task))

    summary = summarize(
        records,
        central_indices=central_point_indices(scenario),
        campaign_seed=campaign_seed,
        trials_per_point=trials_per_point,
    )
    return summary, records


def summarize(
    records: Sequence[TrialRecord],
    central_indices: Sequence[int] | None = None,
    campaign_seed: int | None = None,
    trials_per_point: int | None = None,
) -> CampaignSummary:
    """Aggregate records into per-method statistics.

    ``central_indices`` defaults to the six ground-truth points nearest the
    centroid of the points present in the records.
    """
    if central_indices is None:
        central_indices = _central_indices_from_records(records)
    central_set = set(central_indices)

    grouped: dict[str, list[TrialRecord]] = {}
    for record in records:
        grouped.setdefault(f"{record.method}:{record.variant}", []).append(record)

    methods: dict[str, MethodSummary] = {}
    for key in sorted(grouped):
        group = grouped[key]
        errors = np.array([r.error_2d for r in group if np.isfinite(r.error_2d)])
        central_errors = np.array(
            [
                r.error_2d
                for r in group
                if np.isfinite(r.error_2d) and r.point_index in central_set
            ]
        )
        if errors.size:
            ordered = np.sort(errors)
            mean = float(np.mean(ordered))
            median, p95, p99 = (float(v) for v in np.percentile(ordered, [50, 95, 99]))
            cdf_errors = [float(v) for v in ordered]
            cdf_probs = [float(v) for v in (np.arange(1, ordered.size + 1) / ordered.size)]
        else:
            mean = median = p95 = p99 = None
            cdf_errors = []
            cdf_probs = []
        methods[key] = MethodSummary(
            n_records=len(group),
            n_failed=sum(1 for r in group if r.failed),
            n_flagged=sum(1 for r in group if r.active_modalities == "none_flagged"),
            mean=mean,
            median=median,
            p95=p95,
            p99=p99,
            central_mean=float(np.mean(central_errors)) if central_errors.size else None,
            central_max=float(np.max(central_errors)) if central_errors.size else None,
            cdf_errors=cdf_errors,
            cdf_probabilities=cdf_probs,
        )

    trial_ids = {r.trial_id for r in records}
    return CampaignSummary(
        campaign_seed=campaign_seed,
        trials_per_point=trials_per_point,
        n_trials=len(trial_ids),
        central_point_indices=list(central_indices),
        methods=methods,
    )


def _central_indices_from_records(records: Sequence[TrialRecord]) -> list[int]:
    by_point: dict[int, np.ndarray] = {}
    for record in records:
        by_point.setdefault(record.point_index, record.ground_truth)
    if not by_point:
        return []
    indices = sorted(by_point)
    points = np.array([by_point[i] for i in indices])
    nearest = central_indices_from_points(points)
    return sorted(indices[i] for i in nearest)


# --- serialization ------------------------------------------------------------

SUMMARY_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "Campaign summary",
    "type": "object",
    "required": ["n_trials", "central_point_indices", "methods"],
    "properties": {
        "campaign_seed": {"type": ["integer", "null"]},
        "trials_per_point": {"type": ["integer", "null"]},
        "n_trials": {"type": "integer", "minimum": 0},
        "central_point_indices": {"type": "array", "items": {"type": "integer"}},
        "methods": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": [
                    "n_records",
                    "n_failed",
                    "n_flagged",
                    "mean",
                    "median",
                    "p95",
                    "p99",
                    "central_mean",
                    "central_max",
                    "cdf",
                ],
                "properties": {
                    "n_records": {"type": "integer", "minimum": 0},
                    "n_failed": {"type": "integer", "minimum": 0},
                    "n_flagged": {"type": "integer", "minimum": 0},
                    "mean": {"type": ["number", "null"]},
                    "median": {"type": ["number", "null"]},
                    "p95": {"type": ["number", "null"]},
                    "p99": {"type": ["number", "null"]},
                    "central_mean": {"type": ["number", "null"]},
                    "central_max": {"type": ["number", "null"]},
                    "cdf": {
                        "type": "object",
                        "required": ["error_m", "probability"],
                        "properties": {
                            "error_m": {"type": "array", "items": {"type": "number"}},
                            "probability": {"type": "array", "items": {"type": "number"}},
                        },
                    },
                },
            },
        },
    },
}


def summary_to_dict(summary: CampaignSummary) -> dict:
    return {
        "campaign_seed": summary.campaign_seed,
        "trials_per_point": summary.trials_per_point,
        "n_trials": summary.n_trials,
        "central_point_indices": list(summary.central_point_indices),
        "methods": {
            key: {
                "n_records": ms.n_records,
                "n_failed": ms.n_failed,
                "n_flagged": ms.n_flagged,
                "mean": ms.mean,
                "median": ms.median,
                "p95": ms.p95,
                "p99": ms.p99,
                "central_mean": ms.central_mean,
                "central_max": ms.central_max,
                "cdf": {
                    "error_m": ms.cdf_errors,
                    "probability": ms.cdf_probabilities,
                },
            }
            for key, ms in summary.methods.items()
        },
    }


def record_to_row(record: TrialRecord) -> dict:
    return {
        "trial_id": record.trial_id,
        "point_index": record.point_index,
        "seed": record.seed,
        "method": record.method,
        "variant": record.variant,
        "gt_x": repr(float(record.ground_truth[0])),
        "gt_y": repr(float(record.ground_truth[1])),
        "gt_z": repr(float(record.ground_truth[2])),
        "est_x": repr(float(record.estimate[0])),
        "est_y": repr(float(record.estimate[1])),
        "est_z": repr(float(record.estimate[2])),
        "error_2d": repr(float(record.error_2d)),
        "converged": record.converged,
        "active_modalities": record.active_modalities,
        "failed": record.failed,
    }


def record_from_row(row: dict) -> TrialRecord:
    return TrialRecord(
        trial_id=int(row["trial_id"]),
        point_index=int(row["point_index"]),
        seed=int(row["seed"]),
        method=row["method"],
        variant=row["variant"],
        ground_truth=np.array([float(row["gt_x"]), float(row["gt_y"]), float(row["gt_z"])]),
        estimate=np.array([float(row["est_x"]), float(row["est_y"]), float(row["est_z"])]),
        error_2d=float(row["error_2d"]),
        converged=str(row["converged"]) == "True",
        active_modalities=row["active_modalities"],
        failed=str(row["failed"]) == "True",
    )


def emit_report(
    summary: CampaignSummary,
    records: Sequence[TrialRecord],
    out_dir: str | Path,
    fmt: str = "csv",
) -> dict[str, Path]:
    """Write the record table and the JSON summary into ``out_dir``.

    ``fmt`` selects the record serialization (``csv`` or ``json``); the
    summary is always JSON. Floats are written with full round-trip
    precision, so identical inputs yield byte-identical files.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if fmt == "csv":
        records_path = out_dir / "records.csv"
        with open(records_path, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=RECORD_COLUMNS)
            writer.writeheader()
            for record in records:
                writer.writerow(record_to_row(record))
    else:
        records_path = out_dir / "records.json"
        rows = [record_to_row(record) for record in records]
        with open(records_path, "w") as handle:
            json.dump(rows, handle, indent=2)
            handle.write("\n")

    summary_path = out_dir / "summary.json"
    with open(summary_path, "w") as handle:
        json.dump(summary_to_dict(summary), handle, indent=2)
        handle.write("\n")

    return {"records": records_path, "summary": summary_path}


def load_records(path: str | Path) -> list[TrialRecord]:
    """Read a record table written by :func:`emit_report` (csv or json)."""
    path = Path(path)
    if path.suffix == ".json":
        with open(path) as handle:
            rows = json.load(handle)
    else:
        with open(path, newline="") as handle:
            rows = list(csv.DictReader(handle))
    return [record_from_row(row) for row in rows]
