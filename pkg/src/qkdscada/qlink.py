"""Physical QKD link model.

Covers the optical channel (attenuation, QBER, secure-rate arithmetic),
the mean-reverting generation-rate process, and Poisson outage injection.
A :class:`QkdLink` instance owns one link's state and advances it per
simulation tick; all rate arithmetic is exposed as pure functions so it
can be tested in isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


class LinkDomainError(ValueError):
    """Raised when a physical quantity is outside its admissible range."""


@dataclass(frozen=True)
class LinkParams:
    """Static configuration of one QKD link.

    Units: photon_rate in photons/s, fiber_length in km, attenuation in
    dB/km, rates in bits/s, break_rate in events/s, durations in seconds.
    """

    photon_rate: float
    fiber_length: float
    base_attenuation: float
    attenuation_jitter_std: float
    sift_ratio: float
    mean_rate: float
    reversion_rate: float
    rate_noise_std: float
    break_rate: float
    outage_duration_range: tuple[float, float]
    qber_base: float = 0.02
    qber_slope: float = 0.05

    def __post_init__(self):
        if self.photon_rate <= 0:
            raise LinkDomainError("photon_rate must be positive")
        if self.fiber_length <= 0:
            raise LinkDomainError("fiber_length must be positive")
        if self.base_attenuation < 0 or self.attenuation_jitter_std < 0:
            raise LinkDomainError("attenuation coefficients must be non-negative")
        if not 0.0 <= self.sift_ratio <= 1.0:
            raise LinkDomainError("sift_ratio must lie in [0, 1]")
        if self.reversion_rate <= 0:
            raise LinkDomainError("reversion_rate must be positive")
        if self.rate_noise_std < 0:
            raise LinkDomainError("rate_noise_std must be non-negative")
        if self.break_rate < 0:
            raise LinkDomainError("break_rate must be non-negative")
        lo, hi = self.outage_duration_range
        if lo <= 0 or hi < lo:
            raise LinkDomainError("outage_duration_range must be ordered and positive")
        if not 0.0 <= self.qber_base <= 0.5:
            raise LinkDomainError("qber_base must lie in [0, 0.5]")
        if self.qber_slope < 0:
            raise LinkDomainError("qber_slope must be non-negative")


@dataclass
class LinkState:
    """Instantaneous optical/quantum condition of one link."""

    time: float = 0.0
    eta: float = 1.0
    qber: float = 0.0
    broken: bool = False
    rate: float = 0.0


@dataclass(frozen=True)
class OutageSchedule:
    """Sorted realization of link-breakage events as (start, duration) pairs."""

    events: tuple[tuple[float, float], ...] = ()

    def active_at(self, t: float) -> bool:
        for start, duration in self.events:
            if start > t:
                return False
            if t < start + duration:
                return True
        return False


def binary_entropy(p: float) -> float:
    """Shannon entropy of a Bernoulli(p) source in bits, with 0 log 0 = 0."""
    if not 0.0 <= p <= 1.0:
        raise LinkDomainError(f"probability {p} outside [0, 1]")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def privacy_amplification(qber: float) -> float:
    """Fraction of sifted bits surviving privacy amplification.

    Clamped at zero: past the entropy crossover the secure rate is zero
    rather than negative (key output halts).
    """
    if not 0.0 <= qber <= 0.5:
        raise LinkDomainError(f"QBER {qber} outside [0, 0.5]")
    return max(0.0, 1.0 - 2.0 * binary_entropy(qber))


def attenuation(params: LinkParams, jitter: float) -> float:
    """Channel transmittance for the current attenuation draw.

    Negative total attenuation draws are clamped to lossless; Gaussian
    tails below 0 dB/km are unphysical.
    """
    alpha = max(0.0, params.base_attenuation + jitter)
    return 10.0 ** (-alpha * params.fiber_length / 10.0)


def key_rate(params: LinkParams, eta: float, qber: float, broken: bool) -> float:
    """Instantaneous secure key rate in bits/s; zero while the link is down."""
    if broken:
        return 0.0
    return params.photon_rate * eta * params.sift_ratio * privacy_amplification(qber)


def step_rate_ou(rate: float, params: LinkParams, dt: float, noise_draw: float) -> float:
    """One Euler-Maruyama step of the mean-reverting rate process.

    Drift pulls the rate toward ``params.mean_rate`` at ``reversion_rate``;
    the result is clamped at zero. ``noise_draw`` is a standard-normal
    sample supplied by the caller so the update stays deterministic.
    """
    if dt <= 0:
        raise LinkDomainError("dt must be positive")
    drift = -params.reversion_rate * (rate - params.mean_rate)
    diffusion = params.rate_noise_std * math.sqrt(dt) * noise_draw
    return max(0.0, rate + drift * dt + diffusion)


def sample_outages(params: LinkParams, horizon: float, rng: np.random.Generator) -> OutageSchedule:
    """Draw a Poisson outage schedule over [0, horizon).

    Inter-arrival times are exponential with mean 1/break_rate; durations
    uniform over the configured range. Deterministic given the generator
    state.
    """
    if horizon <= 0:
        raise LinkDomainError("horizon must be positive")
    if params.break_rate == 0.0:
        return OutageSchedule(())
    events: list[tuple[float, float]] = []
    lo, hi = params.outage_duration_range
    t = rng.exponential(1.0 / params.break_rate)
    while t < horizon:
        duration = rng.uniform(lo, hi)
        events.append((t, duration))
        t += duration + rng.exponential(1.0 / params.break_rate)
    return OutageSchedule(tuple(events))


class QkdLink:
    """Stateful link advanced once per engine tick.

    Per tick: outage check against the pre-sampled schedule, attenuation
    jitter draw, QBER update, and an OU step on the rate. The realized
    rate is capped by the instantaneous channel budget so attenuation
    spikes and QBER degradation bite even when the OU state is high.
    While an outage is active the optical figures freeze at their last
    values and the rate is held at zero; after restoration the rate
    recovers from zero at the reversion rate.
    """

    def __init__(self, params: LinkParams, horizon: float, rng: np.random.Generator):
        self.params = params
        self.rng = rng
        self.outages = sample_outages(params, horizon, rng)
        jitter0 = 0.0
        eta0 = attenuation(params, jitter0)
        self.state = LinkState(
            time=0.0,
            eta=eta0,
            qber=self._qber_for(eta0),
            broken=self.outages.active_at(0.0),
            rate=0.0 if self.outages.active_at(0.0) else params.mean_rate,
        )

    def _qber_for(self, eta: float) -> float:
        q = self.params.qber_base + self.params.qber_slope * (1.0 - eta)
        return min(0.5, max(0.0, q))

    def advance(self, dt: float) -> LinkState:
        t_next = self.state.time + dt
        broken = self.outages.active_at(t_next)
        if broken:
            # Optical figures hold their last values; only key output stops.
            self.state = replace(self.state, time=t_next, broken=True, rate=0.0)
            return self.state
        jitter = float(self.rng.normal(0.0, self.params.attenuation_jitter_std))
        eta = attenuation(self.params, jitter)
        qber = self._qber_for(eta)
        ou = step_rate_ou(self.state.rate, self.params, dt, float(self.rng.normal()))
        ceiling = key_rate(self.params, eta, qber, False)
        self.state = LinkState(time=t_next, eta=eta, qber=qber, broken=False,
                               rate=min(ou, ceiling))
        return self.state


def nominal_rate(params: LinkParams) -> float:
    """Secure rate at nominal attenuation and base QBER; handy for sizing Ḡ."""
    eta0 = attenuation(params, 0.0)
    return key_rate(params, eta0, params.qber_base, False)
