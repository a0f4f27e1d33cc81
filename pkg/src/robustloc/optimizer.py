"""Gradient ascent on the positioning objectives.

The search runs over position only: at every evaluation the transmit time is
set to its closed-form optimum for the current position, which removes the
nuisance dimension without changing the maximizer. Because the objective is
stationary in the transmit time at that optimum, the gradient of the profiled
objective equals the position gradient of the full objective there.

The ascent itself is plain steepest ascent with a backtracking line search:
a step along the gradient is accepted only if it improves the objective by at
least a fixed fraction of the predicted first-order gain, otherwise the step
shrinks geometrically. Accepted step lengths are carried over (doubled) into
the next iteration, so the search adapts to the local curvature without any
second-order information. The objective value is non-decreasing across
accepted steps by construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import (
    AoaMeasurement,
    Locator,
    NotAtMaximumError,
    PositionEstimate,
    ToaMeasurement,
    aoa_arrays,
    locator_positions,
    toa_arrays,
)
from .likelihood import (
    MODELS,
    aoa_grad,
    aoa_hessian,
    aoa_value,
    profile_tau_arrays,
    toa_grad,
    toa_hessian,
    toa_value,
    variance_from_hessian,
)

log = logging.getLogger(__name__)

_MIN_STEP = 1e-16  # line-search step length [m] below which we give up


@dataclass(frozen=True)
class OptimizerConfig:
    """Ascent tuning knobs.

    ``gradient_tolerance`` is in objective units per meter; the loop stops
    once the gradient norm falls below it. ``initial_step`` seeds the very
    first line search; later searches start from twice the last accepted
    step.
    """

    max_iterations: int = 200
    gradient_tolerance: float = 1e-8
    shrink: float = 0.5
    sufficient_increase: float = 1e-4
    initial_step: float = 1.0

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be > 0")
        if not (0.0 < self.shrink < 1.0):
            raise ValueError("shrink must be in (0, 1)")
        if not self.sufficient_increase > 0:
            raise ValueError("sufficient_increase must be > 0")
        if not self.initial_step > 0:
            raise ValueError("initial_step must be > 0")


@dataclass(frozen=True, eq=False)
class AscentResult:
    position: np.ndarray
    value: float
    gradient_norm: float
    iterations: int
    converged: bool


def gradient_ascent(
    value_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    config: OptimizerConfig | None = None,
) -> AscentResult:
    """Maximize a smooth function of a 3-vector by backtracking steepest ascent.

    ``value_and_grad`` may signal an undefined point by returning a
    non-finite value; such trial points are rejected by the line search.
    """
    config = config or OptimizerConfig()
    x = np.array(x0, dtype=float)
    value, grad = value_and_grad(x)
    if not np.isfinite(value):
        raise ValueError("objective undefined at the starting point")

    step = config.initial_step
    iterations = 0
    converged = False
    for _ in range(config.max_iterations):
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= config.gradient_tolerance:
            converged = True
            break
        grad_sq = grad_norm * grad_norm
        alpha = step
        accepted = False
        while alpha * grad_norm >= _MIN_STEP:
            trial = x + alpha * grad
            trial_value, trial_grad = value_and_grad(trial)
            if np.isfinite(trial_value) and trial_value >= value + config.sufficient_increase * alpha * grad_sq:
                x, value, grad = trial, trial_value, trial_grad
                accepted = True
                break
            alpha *= config.shrink
        if not accepted:
            break
        iterations += 1
        step = 2.0 * alpha

    grad_norm = float(np.linalg.norm(grad))
    if grad_norm <= config.gradient_tolerance:
        converged = True
    return AscentResult(
        position=x,
        value=value,
        gradient_norm=grad_norm,
        iterations=iterations,
        converged=converged and config.max_iterations > 0,
    )


def maximize(
    objective: str,
    x0: np.ndarray,
    locators: Sequence[Locator],
    toa_measurements: Sequence[ToaMeasurement] = (),
    aoa_measurements: Sequence[AoaMeasurement] = (),
    config: OptimizerConfig | None = None,
) -> PositionEstimate:
    """Maximize one of the positioning objectives from a given starting point.

    Args:
        objective: ``"toa"``, ``"aoa"``, or ``"joint"``.
        x0: Initial position [m]. If it coincides with a locator that has
            positive weight, it is nudged 1e-6 m toward the locator centroid.
        locators: Anchor set.
        toa_measurements: Required for ``"toa"``/``"joint"``.
        aoa_measurements: Required for ``"aoa"``/``"joint"``.
        config: Ascent parameters; defaults apply when omitted.

    Returns:
        A :class:`PositionEstimate` whose ``variance`` is the curvature-based
        proxy at the solution (``inf`` if the curvature check fails),
        ``transmit_time`` the profiled optimum for range-bearing objectives,
        and ``converged`` the gradient criterion.
    """
    if objective not in MODELS:
        raise ValueError(f"objective must be one of {MODELS}, got {objective!r}")
    config = config or OptimizerConfig()
    x0 = np.array(x0, dtype=float)

    use_toa = objective in ("toa", "joint")
    use_aoa = objective in ("aoa", "joint")

    toa_pos = toa_rng = toa_w = None
    if use_toa:
        toa_pos, toa_rng, toa_w = toa_arrays(toa_measurements, locators)
        if objective == "toa" and not np.sum(toa_w) > 0:
            raise ValueError("no ToA information")
    has_toa = use_toa and float(np.sum(toa_w)) > 0

    aoa_pos = aoa_dir = aoa_kappa = None
    aoa_weights = None
    if use_aoa:
        aoa_pos, aoa_dir, aoa_kappa = aoa_arrays(aoa_measurements, locators)
        aoa_weights = np.array(
            [m.weight for m in sorted(aoa_measurements, key=lambda m: m.locator_id)]
        )

    x0 = _separate_from_locators(x0, locators, toa_w if use_toa else None,
                                 aoa_kappa if use_aoa else None)

    def profiled(x: np.ndarray) -> tuple[float, np.ndarray]:
        value = 0.0
        grad = np.zeros(3)
        try:
            if has_toa:
                tau = profile_tau_arrays(x, toa_pos, toa_rng, toa_w)
                value += toa_value(x, tau, toa_pos, toa_rng, toa_w)
                grad_x, _ = toa_grad(x, tau, toa_pos, toa_rng, toa_w)
                grad = grad + grad_x
            if use_aoa:
                value += aoa_value(x, aoa_pos, aoa_dir, aoa_kappa)
                grad = grad + aoa_grad(x, aoa_pos, aoa_dir, aoa_kappa)
        except ValueError:
            return -np.inf, np.zeros(3)
        return value, grad

    result = gradient_ascent(profiled, x0, config)

    tau_final = None
    hessian = np.zeros((3, 3))
    if has_toa:
        tau_final = profile_tau_arrays(result.position, toa_pos, toa_rng, toa_w)
        hessian += toa_hessian(result.position, tau_final, toa_pos, toa_rng, toa_w)
    if use_aoa:
        hessian += aoa_hessian(result.position, aoa_pos, aoa_dir, aoa_kappa)
    try:
        variance = variance_from_hessian(hessian)
    except NotAtMaximumError:
        variance = np.inf

    return PositionEstimate(
        position=result.position,
        variance=variance,
        weights_toa=toa_w if use_toa else None,
        weights_aoa=aoa_weights,
        iterations=result.iterations,
        converged=result.converged,
        transmit_time=tau_final,
    )


def _separate_from_locators(x0, locators, toa_weights, aoa_kappas) -> np.ndarray:
    """Nudge a start point off any locator position it coincides with."""
    positions = locator_positions(locators)
    active = np.zeros(len(positions), dtype=bool)
    if toa_weights is not None:
        active |= np.asarray(toa_weights) > 0
    if aoa_kappas is not None:
        active |= np.asarray(aoa_kappas) > 0
    distances = np.linalg.norm(positions - x0[None, :], axis=1)
    if not np.any((distances < 1e-9) & active):
        return x0
    centroid = positions.mean(axis=0)
    direction = centroid - x0
    norm = np.linalg.norm(direction)
    direction = direction / norm if norm > 0 else np.array([0.0, 0.0, 1.0])
    log.info("start point coincides with a locator; nudging 1e-6 m toward centroid")
    return x0 + 1e-6 * direction
