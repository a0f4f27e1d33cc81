"""Reweighted bearing-only initialization.

Each locator's measured direction defines a ray in space; with perfect
measurements all rays meet at the transmitter. The inner solver finds the
weighted least-squares point minimizing the sum of squared perpendicular
distances to the rays' supporting lines, which has a closed form through the
per-line projector ``I - u u^T``. Around it runs the same reweighting pattern
as the range-difference initializer: angular residuals between each bearing
and the direction to the current estimate feed the redescending sine window
(cutoff ``e_max_aoa``, in radians), and the solve repeats until the estimate
settles. Bearings deviating more than the cutoff are dropped entirely, so
gross reflections cannot drag the initial point.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    AllRejectedError,
    AoaMeasurement,
    DegenerateGeometryError,
    Locator,
    PositionEstimate,
    aoa_arrays,
)
from .irls_tdoa import MAX_NORMAL_CONDITION, IrlsState, andrews_weight


@dataclass(frozen=True, eq=False)
class BearingLine:
    """A weighted ray: anchor point and unit direction in the global frame."""

    anchor: np.ndarray
    direction: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        anchor = np.array(self.anchor, dtype=float)
        direction = np.array(self.direction, dtype=float)
        if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
            raise ValueError("direction must be a unit vector")
        anchor.setflags(write=False)
        direction.setflags(write=False)
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "direction", direction)


def _bearing_solve(
    anchors: np.ndarray, directions: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """Weighted least-squares point closest to all lines, via normal equations."""
    weights = np.asarray(weights, dtype=float)
    dots = np.sum(directions * anchors, axis=1)
    normal = weights.sum() * np.eye(3) - (directions * weights[:, None]).T @ directions
    rhs = weights @ anchors - (weights * dots) @ directions
    if not np.all(np.isfinite(normal)) or np.linalg.cond(normal) >= MAX_NORMAL_CONDITION:
        raise DegenerateGeometryError("degenerate bearing geometry")
    return np.linalg.solve(normal, rhs)


def bearing_ls_position(lines: Sequence[BearingLine]) -> np.ndarray:
    """Point minimizing the weighted squared distances to the given lines.

    Needs at least two non-parallel lines with positive weight; raises
    :class:`DegenerateGeometryError` otherwise (all-parallel lines leave the
    along-line coordinate unobservable).
    """
    anchors = np.array([line.anchor for line in lines])
    directions = np.array([line.direction for line in lines])
    weights = np.array([line.weight for line in lines])
    return _bearing_solve(anchors, directions, weights)


def angular_residual(line: BearingLine, x: np.ndarray) -> float:
    """Angle [rad] between the bearing and the direction from anchor to ``x``."""
    offset = np.asarray(x, dtype=float) - line.anchor
    distance = np.linalg.norm(offset)
    if distance < 1e-12:
        raise ValueError("undefined direction")
    cosine = float(np.dot(line.direction, offset) / distance)
    return float(np.arccos(np.clip(cosine, -1.0, 1.0)))


def _angular_residuals(
    anchors: np.ndarray, directions: np.ndarray, x: np.ndarray
) -> np.ndarray:
    offsets = np.asarray(x, float)[None, :] - anchors
    distances = np.linalg.norm(offsets, axis=1)
    if np.any(distances < 1e-12):
        raise ValueError("undefined direction")
    cosines = np.sum(directions * offsets, axis=1) / distances
    return np.arccos(np.clip(cosines, -1.0, 1.0))


_MAX_CONSENSUS_SUBSETS = 64


def _consensus_start(anchors: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """Outlier-tolerant starting point for the reweighting loop.

    The all-bearing equal-weight solve has breakdown point zero: a single
    wild bearing can drag it far enough that every residual lands beyond the
    rejection cutoff and the loop starves. Minimal three-bearing subsets are
    immune to bearings they exclude, so each subset fit is scored by a low
    order statistic (the third-smallest angular residual over all bearings:
    a sound fit is backed by at least three concordant bearings, and
    corrupted bearings cannot inflate that statistic) and the best fit wins;
    the all-bearing solve competes under the same score. Subset enumeration
    is deterministic, keeping results reproducible and rotation-equivariant.
    """
    count = len(anchors)
    candidates = []
    equal = np.full(count, 1.0 / count)
    try:
        candidates.append(_bearing_solve(anchors, directions, equal))
    except DegenerateGeometryError:
        pass
    subsets = itertools.combinations(range(count), 3)
    for subset in itertools.islice(subsets, _MAX_CONSENSUS_SUBSETS):
        mask = np.zeros(count)
        mask[list(subset)] = 1.0
        try:
            candidates.append(_bearing_solve(anchors, directions, mask))
        except DegenerateGeometryError:
            continue
    if not candidates:
        raise DegenerateGeometryError("degenerate bearing geometry")

    rank = min(2, count - 1)
    best = None
    best_score = np.inf
    for candidate in candidates:
        try:
            residuals = _angular_residuals(anchors, directions, candidate)
        except ValueError:
            continue
        score = float(np.sort(residuals)[rank])
        if score < best_score:
            best, best_score = candidate, score
    if best is None:
        raise DegenerateGeometryError("degenerate bearing geometry")
    return best


def irls_aoa(
    locators: Sequence[Locator],
    aoa_measurements: Sequence[AoaMeasurement],
    params,
) -> tuple[PositionEstimate, np.ndarray]:
    """Run the reweighted bearing initializer.

    Mirrors the range-difference loop: a consensus starting point, then
    rounds of angular residuals through the redescending window with cutoff
    ``params.e_max_aoa`` and a reweighted line intersection solve, until
    successive estimates differ by at most ``params.epsilon`` (at most
    ``params.N_it`` rounds). Within the solve, each bearing's weight is
    divided by its squared range to the current estimate so that equal
    angular confidence means equal influence regardless of distance.

    Returns ``(estimate, weights)`` with final weights in [0, 1] aligned with
    ascending locator id, ready to scale angular concentrations.

    Raises:
        DegenerateGeometryError: fewer than two usable bearings, or all
            usable bearings parallel.
        AllRejectedError: every bearing exceeded the residual cutoff.
    """
    anchors, directions, _ = aoa_arrays(aoa_measurements, locators)
    count = len(anchors)
    if count < 2:
        raise DegenerateGeometryError("degenerate bearing geometry")

    weights = np.full(count, 1.0 / count)
    x_prev = _consensus_start(anchors, directions)

    delta = np.inf
    iteration = 0
    for iteration in range(1, params.N_it + 1):
        residuals = _angular_residuals(anchors, directions, x_prev)
        weights = andrews_weight(residuals, params.e_max_aoa)
        if not np.any(weights > 0):
            raise AllRejectedError(
                "all bearings rejected",
                state=IrlsState(x_prev, weights, residuals, iteration, delta),
            )
        # Perpendicular distance grows with range for a fixed angular error,
        # so the solver sees range-normalized weights; the angular confidence
        # weights reported to the caller are the plain window outputs.
        ranges = np.linalg.norm(x_prev[None, :] - anchors, axis=1)
        solver_weights = weights / np.maximum(ranges, 1e-6) ** 2
        x_new = _bearing_solve(anchors, directions, solver_weights)
        delta = float(np.linalg.norm(x_new - x_prev))
        x_prev = x_new
        if delta <= params.epsilon:
            break

    estimate = PositionEstimate(
        position=x_prev,
        weights_aoa=weights,
        iterations=iteration,
        converged=delta <= params.epsilon,
    )
    return estimate, weights
