"""Log-likelihood models for range, bearing, and joint positioning.

Three objectives over the unknown transmitter position x (and, for ranges,
the unknown transmit time tau):

* range model: each locator's pseudo-range error is zero-mean Gaussian, so
  the log-likelihood is a negative weighted sum of squared residuals
  ``(range_k - ||p_k - x|| - tau*c)^2 / 2``; constant terms are dropped.
* bearing model: each measured direction follows a von Mises-Fisher
  distribution about the true bearing, giving a weighted sum of cosines
  ``kappa_k * m_k . (x - p_k)/||x - p_k||`` with the mean directions m_k in
  the global frame; normalization constants are dropped.
* joint model: the sum of the two, assuming independent errors.

Weights are relative (unitless) confidences: scaling all range weights by a
positive constant scales the range log-likelihood but never moves its argmax,
so the maximizers are insensitive to the overall weight scale.

The transmit time enters the range model quadratically, so its optimum for a
fixed position has the closed form implemented by :func:`profile_tau`; all
position-only optimization profiles it out instead of searching over it.

Array-level kernels (``toa_value`` etc.) operate on pre-aligned matrices for
use in inner loops; the measurement-level wrappers accept the domain types.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    SPEED_OF_LIGHT,
    AoaMeasurement,
    Locator,
    NotAtMaximumError,
    ToaMeasurement,
    aoa_arrays,
    toa_arrays,
)

MODELS = ("toa", "aoa", "joint")

_COINCIDENT = 1e-12  # distance below which x is treated as on top of a locator


@dataclass(frozen=True, eq=False)
class LikelihoodEvaluation:
    """Value and derivatives of one objective at a point.

    ``gradient`` and ``hessian`` are taken with respect to the position only;
    ``gradient_tau`` is the transmit-time partial and is ``None`` for the
    bearing model, which does not involve the transmit time.
    """

    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    gradient_tau: float | None = None


def _range_geometry(x: np.ndarray, positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    diff = x[None, :] - positions
    dist = np.linalg.norm(diff, axis=1)
    return diff, dist


# --- range (ToA) model -------------------------------------------------------


def toa_value(x, tau, positions, ranges, weights) -> float:
    _, dist = _range_geometry(np.asarray(x, float), positions)
    res = ranges - dist - tau * SPEED_OF_LIGHT
    return float(-0.5 * np.sum(weights * res * res))


def toa_grad(x, tau, positions, ranges, weights) -> tuple[np.ndarray, float]:
    """Position gradient and transmit-time partial of the range objective."""
    diff, dist = _range_geometry(np.asarray(x, float), positions)
    _require_separated(dist, weights)
    res = ranges - dist - tau * SPEED_OF_LIGHT
    unit = diff / np.maximum(dist, _COINCIDENT)[:, None]
    grad_x = (weights * res) @ unit
    grad_tau = SPEED_OF_LIGHT * float(np.sum(weights * res))
    return grad_x, grad_tau


def toa_hessian(x, tau, positions, ranges, weights) -> np.ndarray:
    """Position-block Hessian of the range objective at fixed transmit time."""
    diff, dist = _range_geometry(np.asarray(x, float), positions)
    _require_separated(dist, weights)
    res = ranges - dist - tau * SPEED_OF_LIGHT
    unit = diff / np.maximum(dist, _COINCIDENT)[:, None]
    hess = np.zeros((3, 3))
    eye = np.eye(3)
    for k in range(positions.shape[0]):
        if weights[k] == 0.0:
            continue
        outer = np.outer(unit[k], unit[k])
        hess += weights[k] * (-outer + (res[k] / dist[k]) * (eye - outer))
    return hess


def profile_tau_arrays(x, positions, ranges, weights) -> float:
    """Closed-form transmit time maximizing the range objective at fixed x."""
    total = float(np.sum(weights))
    if total <= 0.0:
        raise ValueError("no ToA information")
    _, dist = _range_geometry(np.asarray(x, float), positions)
    return float(np.sum(weights * (ranges - dist)) / (SPEED_OF_LIGHT * total))


# --- bearing (AoA) model -----------------------------------------------------


def aoa_value(x, positions, directions, concentrations) -> float:
    diff, dist = _range_geometry(np.asarray(x, float), positions)
    _require_separated(dist, concentrations)
    unit = diff / np.maximum(dist, _COINCIDENT)[:, None]
    return float(np.sum(concentrations * np.sum(directions * unit, axis=1)))


def aoa_grad(x, positions, directions, concentrations) -> np.ndarray:
    diff, dist = _range_geometry(np.asarray(x, float), positions)
    _require_separated(dist, concentrations)
    safe = np.maximum(dist, _COINCIDENT)
    unit = diff / safe[:, None]
    cos = np.sum(directions * unit, axis=1)
    # per-locator gradient of the cosine: (m - cos*u) / r
    per = (directions - cos[:, None] * unit) / safe[:, None]
    return concentrations @ per


def aoa_hessian(x, positions, directions, concentrations) -> np.ndarray:
    diff, dist = _range_geometry(np.asarray(x, float), positions)
    _require_separated(dist, concentrations)
    safe = np.maximum(dist, _COINCIDENT)
    unit = diff / safe[:, None]
    cos = np.sum(directions * unit, axis=1)
    per = (directions - cos[:, None] * unit) / safe[:, None]
    hess = np.zeros((3, 3))
    eye = np.eye(3)
    for k in range(positions.shape[0]):
        if concentrations[k] == 0.0:
            continue
        u, g = unit[k], per[k]
        hess += concentrations[k] * (
            -(np.outer(u, g) + np.outer(g, u)) / dist[k]
            - (cos[k] / dist[k] ** 2) * (eye - np.outer(u, u))
        )
    return hess


def _require_separated(dist: np.ndarray, active_weights: np.ndarray) -> None:
    if np.any((dist < _COINCIDENT) & (np.asarray(active_weights) > 0)):
        raise ValueError("undefined direction at locator position")


# --- measurement-level API ---------------------------------------------------


def toa_log_likelihood(
    x, tau: float, measurements: Sequence[ToaMeasurement], locators: Sequence[Locator]
) -> float:
    """Range log-likelihood; always <= 0, and 0 iff every weighted residual is 0."""
    positions, ranges, weights = toa_arrays(measurements, locators)
    return toa_value(x, tau, positions, ranges, weights)


def profile_tau(
    x, measurements: Sequence[ToaMeasurement], locators: Sequence[Locator]
) -> float:
    """Transmit time [s] maximizing the range log-likelihood at fixed position.

    The optimum is the weighted mean of per-locator range surpluses divided
    by the propagation speed; the transmit-time partial of the objective is
    exactly zero there. Raises ``ValueError`` when all weights are zero.
    """
    positions, ranges, weights = toa_arrays(measurements, locators)
    return profile_tau_arrays(x, positions, ranges, weights)


def aoa_log_likelihood(
    x, measurements: Sequence[AoaMeasurement], locators: Sequence[Locator]
) -> float:
    """Bearing log-likelihood; bounded by the total concentration in magnitude."""
    positions, directions, concentrations = aoa_arrays(measurements, locators)
    return aoa_value(x, positions, directions, concentrations)


def joint_log_likelihood(
    x,
    tau: float,
    toa_measurements: Sequence[ToaMeasurement],
    aoa_measurements: Sequence[AoaMeasurement],
    locators: Sequence[Locator],
) -> float:
    """Sum of the range and bearing log-likelihoods (independent errors)."""
    return toa_log_likelihood(x, tau, toa_measurements, locators) + aoa_log_likelihood(
        x, aoa_measurements, locators
    )


def evaluate_with_derivatives(
    model: str,
    x,
    tau: float,
    toa_measurements: Sequence[ToaMeasurement] = (),
    aoa_measurements: Sequence[AoaMeasurement] = (),
    locators: Sequence[Locator] = (),
) -> LikelihoodEvaluation:
    """Evaluate one objective with its analytic gradient and position Hessian.

    ``model`` is one of ``"toa"``, ``"aoa"``, ``"joint"``. The position must
    not coincide with any locator that carries positive weight/concentration.
    """
    if model not in MODELS:
        raise ValueError(f"model must be one of {MODELS}, got {model!r}")
    x = np.asarray(x, dtype=float)

    value = 0.0
    gradient = np.zeros(3)
    hessian = np.zeros((3, 3))
    gradient_tau: float | None = None

    if model in ("toa", "joint"):
        positions, ranges, weights = toa_arrays(toa_measurements, locators)
        value += toa_value(x, tau, positions, ranges, weights)
        grad_x, grad_tau = toa_grad(x, tau, positions, ranges, weights)
        gradient = gradient + grad_x
        hessian = hessian + toa_hessian(x, tau, positions, ranges, weights)
        gradient_tau = grad_tau
    if model in ("aoa", "joint"):
        positions, directions, concentrations = aoa_arrays(aoa_measurements, locators)
        value += aoa_value(x, positions, directions, concentrations)
        gradient = gradient + aoa_grad(x, positions, directions, concentrations)
        hessian = hessian + aoa_hessian(x, positions, directions, concentrations)

    return LikelihoodEvaluation(
        value=value, gradient=gradient, hessian=hessian, gradient_tau=gradient_tau
    )


def variance_from_hessian(evaluation) -> float:
    """Scalar confidence proxy [m^2] from a position Hessian at a maximum.

    Accepts a :class:`LikelihoodEvaluation` or a bare 3x3 Hessian. The
    Hessian must be negative definite (a strict local maximum); callers that
    gate on the result typically map the failure to an infinite variance.
    """
    hessian = np.asarray(getattr(evaluation, "hessian", evaluation), dtype=float)
    if hessian.shape != (3, 3) or not np.all(np.isfinite(hessian)):
        raise NotAtMaximumError("estimate not at a local maximum")
    eigenvalues = np.linalg.eigvalsh(hessian)
    if np.max(eigenvalues) >= 0.0:
        raise NotAtMaximumError("estimate not at a local maximum")
    covariance = np.linalg.inv(-hessian)
    return float(np.mean(np.diag(covariance)))
