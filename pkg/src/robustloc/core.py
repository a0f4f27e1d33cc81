"""Domain types, geometric primitives, and scenario configuration.

Everything downstream (initializers, likelihoods, the simulation harness)
works in a single global right-handed frame with z up, SI units throughout.
A locator's orientation matrix holds its local axes as columns, expressed in
global coordinates, so mapping a locator-frame direction to the global frame
is a plain matrix product.

All types are immutable after construction (frozen dataclasses with
read-only numpy buffers) and safe to share between concurrent workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299792458.0
"""Propagation speed used to convert transmit-time offsets to meters [m/s]."""

MIN_LOCATORS = 5
"""Smallest usable anchor count: the range-difference linear system has
K-1 rows and four unknowns, so K-1 >= 4 is required."""


class ScenarioError(ValueError):
    """A scenario violates one or more invariants; carries the full list."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class DegenerateGeometryError(RuntimeError):
    """The measurement geometry does not determine a position."""


class AllRejectedError(RuntimeError):
    """Every measurement was rejected by the reweighting loop.

    The ``state`` attribute holds the last valid iteration state, when one
    exists, so callers can inspect how the loop failed.
    """

    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state


class NotAtMaximumError(RuntimeError):
    """A Hessian-based confidence was requested away from a local maximum."""


class NoInitializerError(RuntimeError):
    """Neither measurement modality produced a usable initial estimate."""


def _frozen_array(value, shape: tuple[int, ...] | None = None) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"expected array of shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Locator:
    """A fixed measuring anchor with known position and orientation.

    Attributes:
        id: Integer label, unique within one deployment.
        position: Global 3D position [m].
        orientation: 3x3 matrix whose columns are the locator's local axes
            expressed in global coordinates. Must be orthonormal; checked by
            :func:`validate_scenario`.
    """

    id: int
    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _frozen_array(self.position, (3,)))
        object.__setattr__(self, "orientation", _frozen_array(self.orientation, (3, 3)))


@dataclass(frozen=True, eq=False)
class ToaMeasurement:
    """A pseudo-range measurement from one locator.

    ``range`` is the measured arrival time converted to meters. It includes
    the unknown transmit-time offset shared by all locators in a trial, so it
    can be negative and has no lower bound.
    """

    locator_id: int
    range: float
    weight: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.range):
            raise ValueError("range must be finite")
        if not (self.weight >= 0.0):
            raise ValueError("weight must be >= 0")


@dataclass(frozen=True, eq=False)
class AoaMeasurement:
    """A direction-of-arrival measurement from one locator.

    ``direction`` is a unit vector in the locator's own frame pointing from
    the locator toward the transmitter. ``concentration`` controls how
    sharply the angular likelihood peaks and must equal the scenario's
    maximum concentration scaled by ``weight``.
    """

    locator_id: int
    direction: np.ndarray
    weight: float
    concentration: float

    def __post_init__(self):
        object.__setattr__(self, "direction", _frozen_array(self.direction, (3,)))
        norm = float(np.linalg.norm(self.direction))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"direction must be a unit vector, got norm {norm}")
        if not (0.0 <= self.weight <= 1.0):
            raise ValueError("weight must be in [0, 1]")
        if not (self.concentration >= 0.0):
            raise ValueError("concentration must be >= 0")


@dataclass(frozen=True, eq=False)
class PositionEstimate:
    """Result of one positioning run.

    ``variance`` is a scalar confidence proxy in m^2 (mean diagonal of the
    inverted negative likelihood curvature); it is ``None`` when the
    producing stage does not evaluate curvature and ``inf`` when the
    curvature check failed. ``transmit_time`` is only present for range-based
    objectives.
    """

    position: np.ndarray
    variance: float | None = None
    weights_toa: np.ndarray | None = None
    weights_aoa: np.ndarray | None = None
    iterations: int = 0
    converged: bool = False
    transmit_time: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "position", _frozen_array(self.position, (3,)))
        for name in ("weights_toa", "weights_aoa"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _frozen_array(value))


@dataclass(frozen=True)
class AlgorithmParams:
    """Tuning constants for the reweighted initializers and the modality gate.

    Attributes:
        N_it: Maximum reweighting rounds of either initializer.
        e_max: Range-residual cutoff [m]; larger residuals get weight 0.
        epsilon: Convergence threshold on successive estimates [m].
        sigma_max_sq: Variance gate [m^2]; a modality whose confidence proxy
            exceeds it is dropped from the joint objective.
        kappa_max: Largest angular concentration; per-locator concentrations
            are this value scaled by the angular weight.
        e_max_aoa: Angular-residual cutoff for the bearing initializer [rad].
        subset_size: Optional preselection: keep only this many locators with
            the smallest measured ranges before the range initializer runs.
    """

    N_it: int = 10
    e_max: float = 2.5
    epsilon: float = 1e-5
    sigma_max_sq: float = 10.0
    kappa_max: float = 10.0
    e_max_aoa: float = 0.5
    subset_size: int | None = None


@dataclass(frozen=True)
class NoiseModel:
    """Measurement-noise configuration for synthetic trials.

    Ranges get zero-mean Gaussian noise plus, with probability ``p_nlos`` per
    locator, a positive uniform bias (obstructed paths are longer, never
    shorter). Directions get von Mises-Fisher noise about the true bearing;
    obstructed bearings use the degraded ``nlos_aoa_kappa`` and a randomly
    tilted mean. The unknown transmit time is drawn uniformly once per trial.
    ``aoa_kappa`` may be ``inf`` for exact (noise-free) bearings.
    """

    range_sigma: float = 0.3
    aoa_kappa: float = 100.0
    p_nlos: float = 0.15
    nlos_bias_range: tuple[float, float] = (2.0, 10.0)
    nlos_aoa_kappa: float = 5.0
    tau_range: tuple[float, float] = (0.0, 1e-6)

    def __post_init__(self):
        object.__setattr__(self, "nlos_bias_range", tuple(float(v) for v in self.nlos_bias_range))
        object.__setattr__(self, "tau_range", tuple(float(v) for v in self.tau_range))


@dataclass(frozen=True)
class BaselineParams:
    """Parameters of the no-initialization baselines.

    ``sigma_init`` is the standard deviation [m] of the horizontal Gaussian
    perturbation applied to the true position for the informed baseline.
    """

    sigma_init: float = 3.0


@dataclass(frozen=True, eq=False)
class Scenario:
    """A full experiment description: geometry, truth, noise, and tuning.

    ``central_point_indices`` optionally pins which ground-truth points form
    the central-area subset in reports; when ``None`` the six points nearest
    the layout centroid are used.
    """

    locators: tuple[Locator, ...]
    ground_truth_points: np.ndarray
    algorithm_params: AlgorithmParams = field(default_factory=AlgorithmParams)
    noise_params: NoiseModel = field(default_factory=NoiseModel)
    baseline_params: BaselineParams = field(default_factory=BaselineParams)
    central_point_indices: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "locators", tuple(self.locators))
        points = np.array(self.ground_truth_points, dtype=float)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError("ground_truth_points must have shape (N, 3)")
        points.setflags(write=False)
        object.__setattr__(self, "ground_truth_points", points)
        if self.central_point_indices is not None:
            object.__setattr__(
                self, "central_point_indices", tuple(int(i) for i in self.central_point_indices)
            )

    @property
    def num_locators(self) -> int:
        return len(self.locators)


def scenario_errors(scenario: Scenario) -> list[str]:
    """Collect every violated invariant of ``scenario`` (empty list if valid)."""
    errors: list[str] = []

    ids = [loc.id for loc in scenario.locators]
    if len(set(ids)) != len(ids):
        errors.append("locator ids are not unique")
    if len(ids) < MIN_LOCATORS:
        errors.append(f"need at least {MIN_LOCATORS} locators, got {len(ids)}")

    for loc in scenario.locators:
        if not np.all(np.isfinite(loc.position)):
            errors.append(f"locator {loc.id}: position has non-finite coordinates")
        gram = loc.orientation.T @ loc.orientation
        if not np.all(np.abs(gram - np.eye(3)) <= 1e-9):
            errors.append(f"locator {loc.id}: orientation not orthonormal")

    if scenario.ground_truth_points.shape[0] == 0:
        errors.append("no ground-truth points")
    if not np.all(np.isfinite(scenario.ground_truth_points)):
        errors.append("ground-truth points contain non-finite coordinates")

    p = scenario.algorithm_params
    if p.N_it < 1:
        errors.append("N_it must be >= 1")
    if not p.e_max > 0:
        errors.append("e_max must be > 0")
    if not p.epsilon > 0:
        errors.append("epsilon must be > 0")
    if not p.sigma_max_sq > 0:
        errors.append("sigma_max_sq must be > 0")
    if not p.kappa_max > 0:
        errors.append("kappa_max must be > 0")
    if not p.e_max_aoa > 0:
        errors.append("e_max_aoa must be > 0")
    if p.subset_size is not None and p.subset_size < MIN_LOCATORS:
        errors.append(f"subset_size must be >= {MIN_LOCATORS} when set")

    n = scenario.noise_params
    if n.range_sigma < 0:
        errors.append("range_sigma must be >= 0")
    if not (0.0 <= n.p_nlos <= 1.0):
        errors.append("p_nlos must be in [0, 1]")
    if n.nlos_bias_range[0] < 0 or n.nlos_bias_range[1] < n.nlos_bias_range[0]:
        errors.append("nlos_bias_range must satisfy 0 <= min <= max")
    if not n.aoa_kappa > 0:
        errors.append("aoa_kappa must be > 0")
    if not n.nlos_aoa_kappa > 0:
        errors.append("nlos_aoa_kappa must be > 0")
    if n.tau_range[1] < n.tau_range[0]:
        errors.append("tau_range must satisfy min <= max")

    if not scenario.baseline_params.sigma_init > 0:
        errors.append("sigma_init must be > 0")

    if scenario.central_point_indices is not None:
        n_points = scenario.ground_truth_points.shape[0]
        for idx in scenario.central_point_indices:
            if not (0 <= idx < n_points):
                errors.append(f"central point index {idx} out of range")

    return errors


def validate_scenario(scenario: Scenario) -> Scenario:
    """Return ``scenario`` unchanged if valid, else raise with every violation."""
    errors = scenario_errors(scenario)
    if errors:
        raise ScenarioError(errors)
    return scenario


def direction_global(locator: Locator, direction_local: np.ndarray) -> np.ndarray:
    """Map a unit direction from the locator's frame into the global frame."""
    return locator.orientation @ np.asarray(direction_local, dtype=float)


def sorted_locators(locators: Sequence[Locator]) -> list[Locator]:
    """Locators in ascending-id order, the canonical order of all K-vectors."""
    return sorted(locators, key=lambda loc: loc.id)


def locator_positions(locators: Sequence[Locator]) -> np.ndarray:
    """(K, 3) position matrix in ascending-id order."""
    return np.array([loc.position for loc in sorted_locators(locators)])


def toa_arrays(
    measurements: Sequence[ToaMeasurement], locators: Sequence[Locator]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Align range measurements with locators.

    Returns ``(positions, ranges, weights)``, each in ascending locator-id
    order. Requires exactly one measurement per locator.
    """
    by_id = {m.locator_id: m for m in measurements}
    ordered = sorted_locators(locators)
    if len(by_id) != len(measurements) or set(by_id) != {loc.id for loc in ordered}:
        raise ValueError("need exactly one range measurement per locator")
    positions = np.array([loc.position for loc in ordered])
    ranges = np.array([by_id[loc.id].range for loc in ordered])
    weights = np.array([by_id[loc.id].weight for loc in ordered])
    return positions, ranges, weights


def aoa_arrays(
    measurements: Sequence[AoaMeasurement], locators: Sequence[Locator]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Align bearing measurements with locators.

    Returns ``(positions, directions, concentrations)`` in ascending
    locator-id order, with directions rotated into the global frame.
    """
    by_id = {m.locator_id: m for m in measurements}
    ordered = sorted_locators(locators)
    if len(by_id) != len(measurements) or set(by_id) != {loc.id for loc in ordered}:
        raise ValueError("need exactly one bearing measurement per locator")
    positions = np.array([loc.position for loc in ordered])
    directions = np.array(
        [direction_global(loc, by_id[loc.id].direction) for loc in ordered]
    )
    concentrations = np.array([by_id[loc.id].concentration for loc in ordered])
    return positions, directions, concentrations


# --- JSON serialization -----------------------------------------------------
#
# The document layout mirrors the dataclasses field-for-field; see the README
# for the schema. Non-finite floats (e.g. an exact-bearing "aoa_kappa") are
# accepted using Python's JSON Infinity extension.


def scenario_to_dict(scenario: Scenario) -> dict:
    doc = {
        "locators": [
            {
                "id": loc.id,
                "position": loc.position.tolist(),
                "orientation": loc.orientation.tolist(),
            }
            for loc in scenario.locators
        ],
        "ground_truth_points": scenario.ground_truth_points.tolist(),
        "algorithm_params": {
            "N_it": scenario.algorithm_params.N_it,
            "e_max": scenario.algorithm_params.e_max,
            "epsilon": scenario.algorithm_params.epsilon,
            "sigma_max_sq": scenario.algorithm_params.sigma_max_sq,
            "kappa_max": scenario.algorithm_params.kappa_max,
            "e_max_aoa": scenario.algorithm_params.e_max_aoa,
            "subset_size": scenario.algorithm_params.subset_size,
        },
        "noise_params": {
            "range_sigma": scenario.noise_params.range_sigma,
            "aoa_kappa": scenario.noise_params.aoa_kappa,
            "p_nlos": scenario.noise_params.p_nlos,
            "nlos_bias_range": list(scenario.noise_params.nlos_bias_range),
            "nlos_aoa_kappa": scenario.noise_params.nlos_aoa_kappa,
            "tau_range": list(scenario.noise_params.tau_range),
        },
        "baseline_params": {
            "sigma_init": scenario.baseline_params.sigma_init,
        },
    }
    if scenario.central_point_indices is not None:
        doc["central_point_indices"] = list(scenario.central_point_indices)
    return doc


def scenario_from_dict(doc: dict) -> Scenario:
    locators = tuple(
        Locator(id=int(entry["id"]), position=entry["position"], orientation=entry["orientation"])
        for entry in doc["locators"]
    )
    algo = doc.get("algorithm_params", {})
    noise = doc.get("noise_params", {})
    baseline = doc.get("baseline_params", {})
    central = doc.get("central_point_indices")
    return Scenario(
        locators=locators,
        ground_truth_points=doc["ground_truth_points"],
        algorithm_params=AlgorithmParams(
            N_it=int(algo.get("N_it", AlgorithmParams.N_it)),
            e_max=float(algo.get("e_max", AlgorithmParams.e_max)),
            epsilon=float(algo.get("epsilon", AlgorithmParams.epsilon)),
            sigma_max_sq=float(algo.get("sigma_max_sq", AlgorithmParams.sigma_max_sq)),
            kappa_max=float(algo.get("kappa_max", AlgorithmParams.kappa_max)),
            e_max_aoa=float(algo.get("e_max_aoa", AlgorithmParams.e_max_aoa)),
            subset_size=(
                None if algo.get("subset_size") is None else int(algo["subset_size"])
            ),
        ),
        noise_params=NoiseModel(
            range_sigma=float(noise.get("range_sigma", NoiseModel.range_sigma)),
            aoa_kappa=float(noise.get("aoa_kappa", NoiseModel.aoa_kappa)),
            p_nlos=float(noise.get("p_nlos", NoiseModel.p_nlos)),
            nlos_bias_range=tuple(noise.get("nlos_bias_range", NoiseModel.nlos_bias_range)),
            nlos_aoa_kappa=float(noise.get("nlos_aoa_kappa", NoiseModel.nlos_aoa_kappa)),
            tau_range=tuple(noise.get("tau_range", NoiseModel.tau_range)),
        ),
        baseline_params=BaselineParams(
            sigma_init=float(baseline.get("sigma_init", BaselineParams.sigma_init)),
        ),
        central_point_indices=None if central is None else tuple(central),
    )


def load_scenario(path: str | Path) -> Scenario:
    """Read and validate a scenario from a JSON document."""
    with open(path) as handle:
        doc = json.load(handle)
    return validate_scenario(scenario_from_dict(doc))


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    with open(path, "w") as handle:
        json.dump(scenario_to_dict(scenario), handle, indent=2)
        handle.write("\n")
