"""One-step-ahead inventory forecasting with covariance propagation.

A 2-state filter over (generation rate, inventory level). The prediction
step is delegated to a pluggable one-step rate forecaster — the default
uses the known mean-reversion drift of the link process — and the
correction step is a standard Kalman update in Joseph form so the
covariance stays symmetric positive semi-definite.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import NormalDist
from typing import Protocol

import numpy as np

from .qlink import LinkParams

PSD_TOL = 1e-9


class DegenerateFilterError(RuntimeError):
    """Innovation covariance collapsed to zero; the filter cannot correct."""


@dataclass(frozen=True)
class ObservationVector:
    """Measured generation rate plus per-task consumption rates (bits/s)."""

    g_rate: float
    consumption: tuple[float, ...] = ()


@dataclass
class StateEstimate:
    """Mean (rate, level) and 2x2 covariance of the key system state."""

    g_hat: float
    k_hat: float
    cov: np.ndarray

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=float).reshape(2, 2)

    @property
    def k_var(self) -> float:
        return float(self.cov[1, 1])

    def check_psd(self) -> None:
        sym_err = abs(self.cov[0, 1] - self.cov[1, 0])
        if sym_err > 1e-6:
            raise DegenerateFilterError(f"covariance asymmetry {sym_err}")
        eigs = np.linalg.eigvalsh(0.5 * (self.cov + self.cov.T))
        if eigs.min() < -PSD_TOL:
            raise DegenerateFilterError(f"covariance not PSD, eigenvalues {eigs}")


class RatePredictor(Protocol):
    """One-step forecaster of the generation rate.

    Returns the predicted rate and its sensitivity to the current rate
    estimate (the scalar Jacobian entry used for covariance propagation).
    Any learned model can stand in as long as it honors this signature.
    """

    def predict_rate(self, g_hat: float, link: LinkParams, dt: float) -> tuple[float, float]: ...


class MeanReversionPredictor:
    """Default predictor: the link's own mean-reversion drift."""

    def predict_rate(self, g_hat: float, link: LinkParams, dt: float) -> tuple[float, float]:
        lam = link.reversion_rate
        g_next = g_hat + lam * (link.mean_rate - g_hat) * dt
        return max(0.0, g_next), 1.0 - lam * dt


@dataclass(frozen=True)
class FilterConfig:
    process_noise: np.ndarray
    observation_noise: float
    window: int = 16

    def __post_init__(self):
        q = np.asarray(self.process_noise, dtype=float).reshape(2, 2)
        object.__setattr__(self, "process_noise", q)
        if self.observation_noise < 0:
            raise ValueError("observation_noise must be non-negative")
        eigs = np.linalg.eigvalsh(0.5 * (q + q.T))
        if eigs.min() < -PSD_TOL:
            raise ValueError("process_noise must be PSD")


# Observation map: only the generation rate is measured directly.
H = np.array([[1.0, 0.0]])


def predict(estimate: StateEstimate, predicted_consumption: float, config: FilterConfig,
            link: LinkParams, dt: float,
            predictor: RatePredictor | None = None) -> StateEstimate:
    """Propagate mean and covariance one tick ahead.

    The level propagates by the inventory balance: predicted rate minus
    forecast consumption, integrated over the tick. Covariance follows
    the Jacobian of that map plus process noise.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    predictor = predictor or MeanReversionPredictor()
    g_next, dg = predictor.predict_rate(estimate.g_hat, link, dt)
    k_next = estimate.k_hat + (g_next - predicted_consumption) * dt
    f = np.array([[dg, 0.0],
                  [dg * dt, 1.0]])
    cov = f @ estimate.cov @ f.T + config.process_noise
    return StateEstimate(g_next, max(0.0, k_next), cov)


def correct(estimate: StateEstimate, observation: ObservationVector,
            config: FilterConfig) -> StateEstimate:
    """Condition the estimate on the observed generation rate.

    Joseph-form covariance update; trace never increases. Raises
    :class:`DegenerateFilterError` when the innovation covariance is zero.
    """
    p = estimate.cov
    s = (H @ p @ H.T).item() + config.observation_noise
    if s <= 0.0:
        raise DegenerateFilterError("innovation covariance is zero")
    gain = (p @ H.T) / s  # 2x1
    x = np.array([estimate.g_hat, estimate.k_hat])
    innovation = observation.g_rate - (H @ x).item()
    x_new = x + gain.ravel() * innovation
    ikh = np.eye(2) - gain @ H
    cov = ikh @ p @ ikh.T + gain @ gain.T * config.observation_noise
    return StateEstimate(float(x_new[0]), max(0.0, float(x_new[1])), cov)


def anchor_level(estimate: StateEstimate, observed_level: float) -> StateEstimate:
    """Pin the level component to the exactly-known pool ledger.

    The inventory is local state, not a remote measurement, so after each
    tick the filter re-anchors on it; forecast value lies in the
    one-step-ahead (and iterated) predictions. Equivalent to a zero-noise
    observation of the level: its variance and cross terms collapse.
    """
    cov = estimate.cov.copy()
    cov[1, :] = 0.0
    cov[:, 1] = 0.0
    return StateEstimate(estimate.g_hat, max(0.0, observed_level), cov)


def z_quantile(level: float) -> float:
    """Two-sided Gaussian quantile: half of ``1-level`` in each tail."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level {level} outside (0, 1)")
    return NormalDist().inv_cdf(0.5 + level / 2.0)


def confidence_interval(estimate: StateEstimate, level: float = 0.95) -> tuple[float, float]:
    """Symmetric interval on the inventory level, floored at zero."""
    z = z_quantile(level)
    half = z * np.sqrt(max(0.0, estimate.k_var))
    return max(0.0, estimate.k_hat - half), estimate.k_hat + half
