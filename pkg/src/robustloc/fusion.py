"""Combining the two initializers into one starting point.

The range-based and bearing-based initial estimates are treated as
independent measurements of the same position with isotropic Gaussian errors,
so the combined starting point is their inverse-variance weighted average.
Each variance is a scalar proxy: the mean diagonal of the inverted negative
curvature of the corresponding log-likelihood, evaluated at that modality's
initial estimate with its final per-locator weights.

A modality whose variance proxy exceeds ``sigma_max_sq`` is gated out of both
the fusion and the downstream joint objective. When both exceed the gate the
pipeline still proceeds with both, but the result carries the
``none_flagged`` marker so reports can count unreliable estimates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import (
    SPEED_OF_LIGHT,
    AllRejectedError,
    AoaMeasurement,
    DegenerateGeometryError,
    Locator,
    NoInitializerError,
    NotAtMaximumError,
    ToaMeasurement,
    aoa_arrays,
    toa_arrays,
)
from .irls_aoa import irls_aoa
from .irls_tdoa import irls_tdoa
from .likelihood import evaluate_with_derivatives, profile_tau, variance_from_hessian

log = logging.getLogger(__name__)

ACTIVE_MODALITIES = ("both", "toa_only", "aoa_only", "none_flagged")


@dataclass(frozen=True, eq=False)
class InitializationResult:
    """Everything the refinement stage needs to start.

    ``estimate_toa`` / ``estimate_aoa`` are the raw per-modality initial
    estimates (``None`` when that initializer failed outright); variances are
    ``inf`` in that case or when the curvature check failed.
    """

    initial_point: np.ndarray
    variance_toa: float
    variance_aoa: float
    active_modalities: str
    weights_toa: np.ndarray
    weights_aoa: np.ndarray
    estimate_toa: np.ndarray | None = None
    estimate_aoa: np.ndarray | None = None


def fuse_estimates(x_toa, var_toa: float, x_aoa, var_aoa: float) -> np.ndarray:
    """Inverse-variance weighted average of the two initial estimates.

    The output always lies on the segment between the inputs; an infinite
    variance gives that side zero weight. Raises
    :class:`NoInitializerError` when both variances are infinite.
    """
    if not (var_toa > 0 and var_aoa > 0):
        raise ValueError("variances must be > 0")
    if np.isinf(var_toa) and np.isinf(var_aoa):
        raise NoInitializerError("no reliable initializer")
    inv_toa = 0.0 if np.isinf(var_toa) else 1.0 / var_toa
    inv_aoa = 0.0 if np.isinf(var_aoa) else 1.0 / var_aoa
    x_toa = np.asarray(x_toa, dtype=float)
    x_aoa = np.asarray(x_aoa, dtype=float)
    return (inv_toa * x_toa + inv_aoa * x_aoa) / (inv_toa + inv_aoa)


def gate_modalities(var_toa: float, var_aoa: float, sigma_max_sq: float) -> str:
    """Classify which modalities stay active given the variance gate.

    A modality survives when its variance proxy is at most ``sigma_max_sq``;
    NaN or infinite variances never survive. Raising a variance can only
    deactivate its modality, never re-activate it.
    """
    toa_ok = var_toa <= sigma_max_sq
    aoa_ok = var_aoa <= sigma_max_sq
    if toa_ok and aoa_ok:
        return "both"
    if toa_ok:
        return "toa_only"
    if aoa_ok:
        return "aoa_only"
    return "none_flagged"


# The reweighting loops emit relative weights, so the raw inverse curvature
# of either objective carries an arbitrary scale and says nothing about how
# well the estimate explains the data (curvature at a wrong point can be
# sharp). Each proxy is therefore calibrated by the fit's own error scale:
# the weighted mean squared range residual, and the weighted mean angular
# deficit (whose inverse estimates the actual bearing concentration). A
# confidently wrong fit then reports a large variance and gets gated or
# down-weighted in the fusion.


def _toa_variance_proxy(
    x: np.ndarray,
    measurements: Sequence[ToaMeasurement],
    locators: Sequence[Locator],
) -> float:
    try:
        tau = profile_tau(x, measurements, locators)
        evaluation = evaluate_with_derivatives(
            "toa", x, tau, toa_measurements=measurements, locators=locators
        )
        raw = variance_from_hessian(evaluation)
        positions, ranges, weights = toa_arrays(measurements, locators)
        residuals = ranges - np.linalg.norm(positions - np.asarray(x)[None, :], axis=1)
        residuals -= tau * SPEED_OF_LIGHT
        scale_sq = float(np.sum(weights * residuals**2) / np.sum(weights))
        return raw * max(scale_sq, 1e-12)
    except (NotAtMaximumError, ValueError):
        return np.inf


def _aoa_variance_proxy(
    x: np.ndarray,
    measurements: Sequence[AoaMeasurement],
    locators: Sequence[Locator],
    kappa_max: float,
) -> float:
    try:
        evaluation = evaluate_with_derivatives(
            "aoa", x, 0.0, aoa_measurements=measurements, locators=locators
        )
        raw = variance_from_hessian(evaluation)
        positions, directions, concentrations = aoa_arrays(measurements, locators)
        offsets = np.asarray(x)[None, :] - positions
        distances = np.linalg.norm(offsets, axis=1)
        cosines = np.sum(directions * offsets, axis=1) / distances
        total = float(np.sum(concentrations))
        if total <= 0:
            return np.inf
        # mean angular deficit approximates the inverse of the true
        # concentration; ratio to the nominal maximum rescales the curvature
        deficit = float(np.sum(concentrations * (1.0 - cosines)) / total)
        return raw * kappa_max * max(deficit, 1e-12)
    except (NotAtMaximumError, ValueError):
        return np.inf


def reweighted_toa(
    measurements: Sequence[ToaMeasurement], weights: np.ndarray
) -> list[ToaMeasurement]:
    """Copy of the range measurements carrying the initializer's weights."""
    ordered = sorted(measurements, key=lambda m: m.locator_id)
    return [replace(m, weight=float(w)) for m, w in zip(ordered, weights)]


def reweighted_aoa(
    measurements: Sequence[AoaMeasurement], weights: np.ndarray, kappa_max: float
) -> list[AoaMeasurement]:
    """Copy of the bearing measurements with concentrations scaled by weight."""
    ordered = sorted(measurements, key=lambda m: m.locator_id)
    return [
        replace(m, weight=float(w), concentration=float(kappa_max * w))
        for m, w in zip(ordered, weights)
    ]


def initialize_joint(
    locators: Sequence[Locator],
    toa_measurements: Sequence[ToaMeasurement],
    aoa_measurements: Sequence[AoaMeasurement],
    params,
) -> InitializationResult:
    """Run both initializers, evaluate their confidences, gate, and fuse.

    Either initializer may fail (degenerate geometry, everything rejected);
    the pipeline then falls back to the surviving modality alone. Only when
    neither modality yields a usable starting point does this raise
    :class:`NoInitializerError`.
    """
    count = len(locators)
    x_toa = None
    var_toa = np.inf
    weights_toa = np.zeros(count)
    try:
        estimate, weights_toa = irls_tdoa(locators, toa_measurements, params)
        x_toa = estimate.position
        var_toa = _toa_variance_proxy(
            x_toa, reweighted_toa(toa_measurements, weights_toa), locators
        )
    except (DegenerateGeometryError, AllRejectedError, ValueError) as exc:
        log.warning("range initializer failed: %s", exc)

    x_aoa = None
    var_aoa = np.inf
    weights_aoa = np.zeros(count)
    try:
        estimate, weights_aoa = irls_aoa(locators, aoa_measurements, params)
        x_aoa = estimate.position
        var_aoa = _aoa_variance_proxy(
            x_aoa,
            reweighted_aoa(aoa_measurements, weights_aoa, params.kappa_max),
            locators,
            params.kappa_max,
        )
    except (DegenerateGeometryError, AllRejectedError, ValueError) as exc:
        log.warning("bearing initializer failed: %s", exc)

    if x_toa is None and x_aoa is None:
        raise NoInitializerError("no reliable initializer")
    if x_aoa is None:
        active = "toa_only"
        initial = x_toa
    elif x_toa is None:
        active = "aoa_only"
        initial = x_aoa
    else:
        active = gate_modalities(var_toa, var_aoa, params.sigma_max_sq)
        if active == "toa_only":
            initial = x_toa
        elif active == "aoa_only":
            initial = x_aoa
        elif active == "both":
            initial = fuse_estimates(x_toa, var_toa, x_aoa, var_aoa)
        else:  # none_flagged: proceed with both, marked unreliable
            if np.isinf(var_toa) and np.isinf(var_aoa):
                initial = 0.5 * (np.asarray(x_toa) + np.asarray(x_aoa))
            else:
                initial = fuse_estimates(x_toa, var_toa, x_aoa, var_aoa)

    return InitializationResult(
        initial_point=np.asarray(initial, dtype=float),
        variance_toa=float(var_toa),
        variance_aoa=float(var_aoa),
        active_modalities=active,
        weights_toa=weights_toa,
        weights_aoa=weights_aoa,
        estimate_toa=None if x_toa is None else np.asarray(x_toa, dtype=float),
        estimate_aoa=None if x_aoa is None else np.asarray(x_aoa, dtype=float),
    )
