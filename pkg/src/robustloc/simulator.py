"""Synthetic measurement generation for positioning trials.

For a ground-truth point the simulator draws one unknown transmit time per
trial (uniform), then per locator: a pseudo-range equal to the true distance
plus the transmit-time offset plus Gaussian noise, and a unit direction drawn
from a von Mises-Fisher distribution about the true bearing. Each locator is
independently obstructed with probability ``p_nlos``; obstructed ranges gain
a positive uniform bias (reflected paths are longer) and obstructed bearings
use a degraded concentration about a mean tilted away from the true bearing
by at least 15 degrees.

Everything is driven by one rng, so a fixed seed reproduces the measurement
set bit for bit. Campaigns derive per-trial seeds from a campaign seed with
the splitting rule in :mod:`robustloc.harness`, which keeps results
independent of worker count.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    SPEED_OF_LIGHT,
    AlgorithmParams,
    AoaMeasurement,
    BaselineParams,
    Locator,
    NoiseModel,
    Scenario,
    ToaMeasurement,
    sorted_locators,
)

MEASUREMENT_COLUMNS = ("trial", "locator_id", "range_m", "ux", "uy", "uz", "is_nlos", "tau_s")

_NLOS_TILT_MIN = math.radians(15.0)
_NLOS_TILT_MAX = math.radians(90.0)


@dataclass(frozen=True, eq=False)
class TruthRecord:
    """Ground truth behind one synthesized measurement set."""

    position: np.ndarray
    transmit_time: float
    locator_ids: tuple[int, ...]
    nlos: tuple[bool, ...]


def _tangent_basis(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing ``direction`` to an orthonormal triad."""
    helper = np.zeros(3)
    helper[np.argmin(np.abs(direction))] = 1.0
    t1 = np.cross(direction, helper)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(direction, t1)
    return t1, t2


def sample_vmf(rng: np.random.Generator, mean_direction, kappa: float, size: int | None = None):
    """Draw unit vectors from a von Mises-Fisher distribution on the sphere.

    Uses the standard rejection scheme for the cosine of the polar angle
    (envelope built from a transformed Beta variate) plus a uniform azimuth
    in the tangent plane. ``kappa = 0`` gives the uniform sphere;
    ``kappa = inf`` returns the mean direction exactly.

    Returns a (3,) array for ``size=None``, else an (n, 3) array.
    """
    mu = np.asarray(mean_direction, dtype=float)
    mu = mu / np.linalg.norm(mu)
    n = 1 if size is None else int(size)

    if np.isinf(kappa):
        samples = np.tile(mu, (n, 1))
        return samples[0] if size is None else samples

    if kappa < 0:
        raise ValueError("kappa must be >= 0")

    # rejection envelope constants (sphere dimension p = 3, so p - 1 = 2)
    b = math.sqrt(kappa * kappa + 1.0) - kappa
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + 2.0 * math.log(1.0 - x0 * x0)

    cosines = np.empty(n)
    filled = 0
    while filled < n:
        remaining = n - filled
        z = rng.uniform(size=remaining)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(size=remaining)
        accept = kappa * w + 2.0 * np.log1p(-x0 * w) - c >= np.log(u)
        kept = w[accept]
        cosines[filled : filled + kept.size] = kept
        filled += kept.size

    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    t1, t2 = _tangent_basis(mu)
    sines = np.sqrt(np.clip(1.0 - cosines * cosines, 0.0, None))
    samples = (
        cosines[:, None] * mu
        + (sines * np.cos(phi))[:, None] * t1
        + (sines * np.sin(phi))[:, None] * t2
    )
    samples /= np.linalg.norm(samples, axis=1)[:, None]
    return samples[0] if size is None else samples


def _tilted_mean(rng: np.random.Generator, direction: np.ndarray) -> np.ndarray:
    """Rotate ``direction`` by a random angle in [15, 90] degrees."""
    angle = rng.uniform(_NLOS_TILT_MIN, _NLOS_TILT_MAX)
    azimuth = rng.uniform(0.0, 2.0 * np.pi)
    t1, t2 = _tangent_basis(direction)
    return (
        math.cos(angle) * direction
        + math.sin(angle) * (math.cos(azimuth) * t1 + math.sin(azimuth) * t2)
    )


def synthesize(
    scenario: Scenario,
    x_true,
    seed: int | np.random.SeedSequence,
) -> tuple[list[ToaMeasurement], list[AoaMeasurement], TruthRecord]:
    """Generate one trial's measurement set for a ground-truth position.

    All emitted measurements carry unit weight and the scenario's maximum
    concentration; downstream stages assign their own weights. The same seed
    always reproduces the identical measurement set.
    """
    rng = np.random.default_rng(seed)
    noise = scenario.noise_params
    x_true = np.asarray(x_true, dtype=float)
    locators = sorted_locators(scenario.locators)

    tau = rng.uniform(noise.tau_range[0], noise.tau_range[1])
    offset_m = tau * SPEED_OF_LIGHT

    toa: list[ToaMeasurement] = []
    aoa: list[AoaMeasurement] = []
    nlos_flags: list[bool] = []
    for loc in locators:
        vec = x_true - loc.position
        dist = float(np.linalg.norm(vec))
        if dist < 1e-9:
            raise ValueError(f"ground-truth point coincides with locator {loc.id}")
        is_nlos = bool(rng.random() < noise.p_nlos)

        measured = dist + offset_m + rng.normal(0.0, noise.range_sigma)
        if is_nlos:
            measured += rng.uniform(noise.nlos_bias_range[0], noise.nlos_bias_range[1])

        true_dir = vec / dist
        if is_nlos:
            mean_dir = _tilted_mean(rng, true_dir)
            global_dir = sample_vmf(rng, mean_dir, noise.nlos_aoa_kappa)
        else:
            global_dir = sample_vmf(rng, true_dir, noise.aoa_kappa)
        local_dir = loc.orientation.T @ global_dir
        local_dir = local_dir / np.linalg.norm(local_dir)

        toa.append(ToaMeasurement(locator_id=loc.id, range=measured, weight=1.0))
        aoa.append(
            AoaMeasurement(
                locator_id=loc.id,
                direction=local_dir,
                weight=1.0,
                concentration=scenario.algorithm_params.kappa_max,
            )
        )
        nlos_flags.append(is_nlos)

    truth = TruthRecord(
        position=x_true,
        transmit_time=float(tau),
        locator_ids=tuple(loc.id for loc in locators),
        nlos=tuple(nlos_flags),
    )
    return toa, aoa, truth


# --- default geometry ---------------------------------------------------------


def orientation_toward(position, target) -> np.ndarray:
    """Orthonormal locator orientation whose first axis points at ``target``."""
    position = np.asarray(position, dtype=float)
    boresight = np.asarray(target, dtype=float) - position
    boresight = boresight / np.linalg.norm(boresight)
    up = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(boresight, up)) > 0.99:
        up = np.array([1.0, 0.0, 0.0])
    side = np.cross(up, boresight)
    side /= np.linalg.norm(side)
    third = np.cross(boresight, side)
    return np.column_stack([boresight, side, third])


def noiseless_model() -> NoiseModel:
    """Noise configuration that reproduces geometry exactly."""
    return NoiseModel(
        range_sigma=0.0,
        aoa_kappa=np.inf,
        p_nlos=0.0,
        tau_range=(0.0, 0.0),
    )


def default_scenario(
    noise: NoiseModel | None = None,
    algorithm: AlgorithmParams | None = None,
    baseline: BaselineParams | None = None,
) -> Scenario:
    """Six ceiling-mounted locators around a 20 m x 10 m hall.

    Locators sit at roughly 7 m height on the hall's corners and long-edge
    midpoints, tilted toward the hall center. Mounting heights vary around
    7 m on purpose: a perfectly coplanar anchor set leaves the vertical
    coordinate unobservable to the linearized range-difference solver.
    Ground truth is a 7 x 4 grid of 28 points at 1.5 m height. The exact
    coordinates are this library's choice of a representative
    industrial-hall layout.
    """
    center = np.array([10.0, 5.0, 1.5])
    mounts = [
        (0.0, 0.0, 5.8),
        (10.0, 0.0, 8.2),
        (20.0, 0.0, 6.2),
        (20.0, 10.0, 7.8),
        (10.0, 10.0, 6.0),
        (0.0, 10.0, 8.0),
    ]
    locators = tuple(
        Locator(
            id=idx + 1,
            position=np.array([x, y, z]),
            orientation=orientation_toward(np.array([x, y, z]), center),
        )
        for idx, (x, y, z) in enumerate(mounts)
    )
    grid_x = np.linspace(2.5, 17.5, 7)
    grid_y = np.linspace(2.0, 8.0, 4)
    points = np.array([[x, y, 1.5] for y in grid_y for x in grid_x])
    return Scenario(
        locators=locators,
        ground_truth_points=points,
        algorithm_params=algorithm or AlgorithmParams(),
        noise_params=noise or NoiseModel(),
        baseline_params=baseline or BaselineParams(),
    )


def measurement_rows(
    trial: int,
    toa_measurements: Sequence[ToaMeasurement],
    aoa_measurements: Sequence[AoaMeasurement],
    truth: TruthRecord,
) -> list[dict]:
    """Flatten one trial's measurements into CSV-ready row dicts."""
    aoa_by_id = {m.locator_id: m for m in aoa_measurements}
    nlos_by_id = dict(zip(truth.locator_ids, truth.nlos))
    rows = []
    for toa in sorted(toa_measurements, key=lambda m: m.locator_id):
        direction = aoa_by_id[toa.locator_id].direction
        rows.append(
            {
                "trial": trial,
                "locator_id": toa.locator_id,
                "range_m": toa.range,
                "ux": direction[0],
                "uy": direction[1],
                "uz": direction[2],
                "is_nlos": nlos_by_id[toa.locator_id],
                "tau_s": truth.transmit_time,
            }
        )
    return rows


def write_measurement_csv(path: str | Path, rows: Sequence[dict]) -> None:
    """Write measurement rows with the documented column order."""
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=MEASUREMENT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {
                    "trial": row["trial"],
                    "locator_id": row["locator_id"],
                    "range_m": repr(float(row["range_m"])),
                    "ux": repr(float(row["ux"])),
                    "uy": repr(float(row["uy"])),
                    "uz": repr(float(row["uz"])),
                    "is_nlos": bool(row["is_nlos"]),
                    "tau_s": repr(float(row["tau_s"])),
                }
            )
