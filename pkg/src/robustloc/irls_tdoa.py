"""Reference-free reweighted TDoA initialization.

Differencing two pseudo-ranges cancels the unknown transmit time, and for a
fixed reference locator the differenced measurements satisfy a linear system
in the offset from that reference plus the (unknown) reference distance. A
single-reference solution is fragile: if the reference's own range is an
outlier, every equation is poisoned. This module instead solves the system
once per candidate reference, averages the per-reference solutions with
confidence weights, and alternates that averaging with residual-driven
reweighting:

1. seed the loop with an outlier-tolerant consensus point: the equal-weight
   average of all per-reference solutions competes against every
   leave-one-out subset solution under a robust range-consistency score
   (a single corrupted range cannot poison every candidate);
2. score each locator by the mean absolute disagreement between its measured
   range differences and those predicted by the current estimate;
3. convert scores to weights with a redescending sine window (full weight at
   zero residual, zero weight beyond the cutoff), re-solve every reference's
   system with those weights, and form the reweighted average, until the
   estimate moves less than the convergence threshold.

The result is a robust initial position plus per-locator weights in [0, 1]
suitable for seeding and weighting a maximum-likelihood refinement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    MIN_LOCATORS,
    AllRejectedError,
    DegenerateGeometryError,
    Locator,
    PositionEstimate,
    ToaMeasurement,
    toa_arrays,
)

MAX_NORMAL_CONDITION = 1e12
"""Condition-number bound above which a normal matrix is treated as singular."""


@dataclass(frozen=True, eq=False)
class TdoaLinearSystem:
    """The per-reference linear system in [x - p_ref; dist_ref].

    Rows are ordered by ascending locator index with the reference excluded.
    Row k is ``[(p_k - p_ref)^T, delta_k]`` where ``delta_k`` is the measured
    range difference to the reference; the right-hand side entry is
    ``(||p_k - p_ref||^2 - delta_k^2) / 2``.
    """

    reference_index: int
    matrix_a: np.ndarray
    vector_b: np.ndarray
    row_weights: np.ndarray


@dataclass(frozen=True, eq=False)
class IrlsState:
    """Snapshot of one reweighting round, attached to failure reports."""

    estimate: np.ndarray
    weights: np.ndarray
    residuals: np.ndarray
    iteration: int
    delta: float


def distance_differences(ranges: np.ndarray, reference_index: int) -> np.ndarray:
    """Range differences to the reference, ascending index, reference excluded.

    Any constant offset common to all ranges (the transmit time expressed in
    meters) cancels exactly.
    """
    ranges = np.asarray(ranges, dtype=float)
    return np.delete(ranges, reference_index) - ranges[reference_index]


def build_system(
    positions: np.ndarray,
    ranges: np.ndarray,
    weights: np.ndarray,
    reference_index: int,
) -> TdoaLinearSystem:
    """Assemble the weighted linear system for one reference locator."""
    positions = np.asarray(positions, dtype=float)
    offsets = np.delete(positions - positions[reference_index], reference_index, axis=0)
    deltas = distance_differences(ranges, reference_index)
    matrix_a = np.hstack([offsets, deltas[:, None]])
    vector_b = 0.5 * (np.sum(offsets * offsets, axis=1) - deltas * deltas)
    row_weights = np.delete(np.asarray(weights, dtype=float), reference_index)
    return TdoaLinearSystem(reference_index, matrix_a, vector_b, row_weights)


def normal_condition(system: TdoaLinearSystem) -> float:
    """Condition number of the weighted 4x4 normal matrix (inf if singular)."""
    a, w = system.matrix_a, system.row_weights
    normal = a.T @ (w[:, None] * a)
    if not np.all(np.isfinite(normal)):
        return np.inf
    return float(np.linalg.cond(normal))


def wls_reference_estimate(system: TdoaLinearSystem, positions: np.ndarray) -> np.ndarray:
    """Solve one reference's system by weighted least squares.

    The solve runs on the row-scaled system via SVD, which is stable for the
    ill-conditioned normal matrices that near-coplanar anchor sets produce.
    An exactly rank-deficient direction (all anchors at one height leaves the
    vertical unobservable) gets the minimum-norm convention: no offset from
    the reference along it. The solution's fourth component (the reference
    distance) is discarded.

    Raises :class:`DegenerateGeometryError` when fewer than four rows carry
    positive weight or the weighted system has rank below three; such a
    reference cannot locate anything and should contribute nothing.
    """
    a, b, w = system.matrix_a, system.vector_b, system.row_weights
    if np.sum(w > 0) < 4 or not np.all(np.isfinite(a)):
        raise DegenerateGeometryError(
            f"degenerate geometry for reference {system.reference_index}"
        )
    scale = np.sqrt(w)
    theta, _, rank, _ = np.linalg.lstsq(scale[:, None] * a, scale * b, rcond=None)
    if rank < 3:
        raise DegenerateGeometryError(
            f"degenerate geometry for reference {system.reference_index}"
        )
    return np.asarray(positions, dtype=float)[system.reference_index] + theta[:3]


def normalize_weights(weights: np.ndarray) -> np.ndarray:
    """Scale non-negative weights to sum to one."""
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise ValueError("weights must be >= 0")
    total = weights.sum()
    if total <= 0.0:
        raise AllRejectedError("all locators rejected")
    return weights / total


def weighted_average(estimates: np.ndarray, normalized_weights: np.ndarray) -> np.ndarray:
    """Convex combination of per-reference position estimates."""
    return np.asarray(normalized_weights, dtype=float) @ np.asarray(estimates, dtype=float)


def residual_errors(
    ranges: np.ndarray,
    positions: np.ndarray,
    x_wa: np.ndarray,
    kept: np.ndarray | None = None,
) -> np.ndarray:
    """Per-locator disagreement between measured and predicted range differences.

    Entry r is the mean over the other locators of
    ``|measured_diff(k, r) - predicted_diff(k, r)|`` at the current estimate
    ``x_wa``. Adding a common offset to all ranges leaves the result
    unchanged.

    ``kept`` optionally restricts which locators count as comparison partners
    (every locator still receives a residual): once the loop discards a
    locator, its corrupted range must not keep inflating everyone else's
    residuals.
    """
    ranges = np.asarray(ranges, dtype=float)
    surplus = ranges - np.linalg.norm(np.asarray(x_wa, float)[None, :] - positions, axis=1)
    count = len(ranges)
    if kept is None:
        kept = np.ones(count, dtype=bool)
    kept = np.asarray(kept, dtype=bool)
    gaps = np.abs(surplus[:, None] - surplus[None, :])  # [k, r]
    partners = kept[:, None] & ~np.eye(count, dtype=bool)
    counts = np.maximum(partners.sum(axis=0), 1)
    return (gaps * partners).sum(axis=0) / counts


def andrews_weight(residual, e_max: float):
    """Redescending sine weight: 1 at zero residual, 0 at and beyond ``e_max``.

    Implemented as ``sinc(residual / e_max)`` (normalized sinc) on
    ``[0, e_max]``, which is continuous, equals 1 at 0, and decreases to 0 at
    the cutoff.
    """
    if e_max <= 0:
        raise ValueError("e_max must be > 0")
    residual = np.asarray(residual, dtype=float)
    weights = np.where(residual <= e_max, np.sinc(residual / e_max), 0.0)
    if weights.ndim == 0:
        return float(weights)
    return weights


def _all_reference_estimates(
    positions: np.ndarray, ranges: np.ndarray, weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Solve every reference's system; mask out degenerate references."""
    count = len(ranges)
    estimates = np.zeros((count, 3))
    valid = np.ones(count, dtype=bool)
    for r in range(count):
        system = build_system(positions, ranges, weights, r)
        try:
            estimates[r] = wls_reference_estimate(system, positions)
        except DegenerateGeometryError:
            valid[r] = False
    return estimates, valid


def _surplus_deviations(positions: np.ndarray, ranges: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-locator deviation of the range surplus from the common level.

    The surplus (measured range minus predicted distance) is the same for
    every locator at the true position, because the unknown transmit offset
    is common; a corrupted range stands out as a large deviation from the
    median surplus.
    """
    surplus = ranges - np.linalg.norm(np.asarray(x, float)[None, :] - positions, axis=1)
    return np.abs(surplus - np.median(surplus))


def _surplus_spread_score(positions: np.ndarray, ranges: np.ndarray, x: np.ndarray) -> float:
    """Outlier-tolerant misfit score: third-smallest surplus deviation.

    A candidate point consistent with at least three locators scores by
    those locators alone, so corrupted ranges cannot inflate it.
    """
    deviations = _surplus_deviations(positions, ranges, x)
    return float(np.sort(deviations)[min(2, len(deviations) - 1)])


def _polish_vertical(positions: np.ndarray, ranges: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Replace a candidate's vertical coordinate by the most consistent one.

    Flat-ish anchor layouts observe the vertical axis weakly, so solved
    candidates wobble by meters vertically while their horizontal part is
    sound; the wobble then leaks into every consistency residual. A coarse
    one-dimensional sweep picks the height that minimizes the robust
    surplus-spread score.
    """
    x = np.asarray(x, dtype=float)
    heights = x[2] + np.linspace(-10.0, 10.0, 81)
    best_z, best_score = x[2], np.inf
    for z in heights:
        score = _surplus_spread_score(positions, ranges, np.array([x[0], x[1], z]))
        if score < best_score:
            best_z, best_score = z, score
    return np.array([x[0], x[1], best_z])


def _consensus_start(
    positions: np.ndarray,
    ranges: np.ndarray,
    equal_estimates: np.ndarray,
    valid: np.ndarray,
    e_max: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Outlier-tolerant seed and initial keep-mask for the reweighting loop.

    The equal-weight average inherits every measurement's corruption, and a
    single large range bias can push it far enough that all residuals exceed
    the rejection cutoff and the loop starves. Each leave-one-out locator
    subset is immune to the range it excludes, so its solution (averaged
    over the subset's references) competes with the equal-weight average
    under the surplus-spread score, after a vertical consistency polish, and
    the best candidate seeds the loop. Locators whose surplus deviation at
    the seed already exceeds the paired-residual range are excluded from the
    first round's residual partners, mirroring the loop's own discard rule.
    With only five locators no subset is solvable and the equal-weight
    average is the only candidate.
    """
    candidates = []
    normalized = np.full(len(ranges), 1.0 / len(ranges)) * valid
    if normalized.sum() > 0:
        candidates.append((normalized / normalized.sum()) @ equal_estimates)

    count = len(ranges)
    if count - 1 >= MIN_LOCATORS:
        for left_out in range(count):
            subset = np.delete(np.arange(count), left_out)
            sub_pos, sub_rng = positions[subset], ranges[subset]
            solutions = []
            for reference in range(len(subset)):
                system = build_system(sub_pos, sub_rng, np.ones(len(subset)), reference)
                try:
                    solutions.append(wls_reference_estimate(system, sub_pos))
                except DegenerateGeometryError:
                    continue
            if solutions:
                candidates.append(np.mean(solutions, axis=0))

    if not candidates:
        raise DegenerateGeometryError("degenerate geometry for every usable reference")
    # Candidates compete as solved; the vertical polish happens only after
    # selection, otherwise the free vertical parameter lets a horizontally
    # corrupted candidate fake a competitive consistency score.
    scores = [_surplus_spread_score(positions, ranges, c) for c in candidates]
    seed = _polish_vertical(positions, ranges, candidates[int(np.argmin(scores))])
    kept = _surplus_deviations(positions, ranges, seed) <= e_max
    if kept.sum() < 3:
        kept = np.ones(len(ranges), dtype=bool)
    return seed, kept


def _masked_average(
    estimates: np.ndarray, normalized_weights: np.ndarray, valid: np.ndarray
) -> np.ndarray:
    """Weighted average over valid references, renormalized over the mask."""
    usable = normalized_weights * valid
    total = usable.sum()
    if total <= 0.0:
        raise DegenerateGeometryError("degenerate geometry for every usable reference")
    return (usable / total) @ estimates


def irls_tdoa(
    locators: Sequence[Locator],
    toa_measurements: Sequence[ToaMeasurement],
    params,
) -> tuple[PositionEstimate, np.ndarray]:
    """Run the reference-free reweighted TDoA initializer.

    Args:
        locators: Anchor set (at least five).
        toa_measurements: One pseudo-range per locator; incoming weights are
            ignored, the loop assigns its own.
        params: :class:`~robustloc.core.AlgorithmParams` (iteration budget,
            residual cutoff, convergence threshold, optional subset size).

    Returns:
        ``(estimate, weights)`` where ``weights`` are the final unnormalized
        per-locator weights in [0, 1], aligned with ascending locator id.
        Locators excluded by subset preselection get weight 0.

    Raises:
        AllRejectedError: every locator's weight was driven to zero; the last
            valid loop state is attached.
        DegenerateGeometryError: no reference admitted a usable solution.
    """
    positions, ranges, _ = toa_arrays(toa_measurements, locators)
    total = len(ranges)
    if total < MIN_LOCATORS:
        raise ValueError(f"need at least {MIN_LOCATORS} locators, got {total}")

    active = np.arange(total)
    if params.subset_size is not None and params.subset_size < total:
        if params.subset_size < MIN_LOCATORS:
            raise ValueError(f"subset_size must be >= {MIN_LOCATORS}")
        active = np.sort(np.argsort(ranges, kind="stable")[: params.subset_size])
    pos_a, rng_a = positions[active], ranges[active]
    count = len(active)

    weights = np.full(count, 1.0 / count)
    estimates, valid = _all_reference_estimates(pos_a, rng_a, weights)
    x_prev, kept = _consensus_start(pos_a, rng_a, estimates, valid, params.e_max)

    delta = np.inf
    iteration = 0
    for iteration in range(1, params.N_it + 1):
        residuals = residual_errors(rng_a, pos_a, x_prev, kept=kept)
        weights = andrews_weight(residuals, params.e_max)
        if not np.any(weights > 0):
            raise AllRejectedError(
                "all locators rejected",
                state=IrlsState(x_prev, weights, residuals, iteration, delta),
            )
        kept = weights > 0
        estimates, valid = _all_reference_estimates(pos_a, rng_a, weights)
        x_new = _masked_average(estimates, normalize_weights(weights), valid)
        delta = float(np.linalg.norm(x_new - x_prev))
        x_prev = x_new
        if delta <= params.epsilon:
            break

    full_weights = np.zeros(total)
    full_weights[active] = weights
    converged = delta <= params.epsilon and bool(np.all(valid))
    estimate = PositionEstimate(
        position=x_prev,
        weights_toa=full_weights,
        iterations=iteration,
        converged=converged,
    )
    return estimate, full_weights
