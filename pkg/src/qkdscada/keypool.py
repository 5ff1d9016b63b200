"""Quantum key inventory with reservoir dynamics and a debit ledger.

The pool tracks whole key bits (integer arithmetic) so the conservation
identity generated = ΔK + consumed + discarded holds exactly after every
operation. Fractional generation within a tick is carried in a float
accumulator and credited as it completes whole bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NORMAL = "normal"
RECONFIGURE = "reconfigure"
PROTECT = "protect"


class KeyPoolError(ValueError):
    pass


@dataclass(frozen=True)
class TaskProfile:
    """One class of control task and its key-cost profile.

    ``crypto_coeff_full`` / ``crypto_coeff_degraded`` are key bits per
    message under full (one-time-pad) and degraded (session-cipher)
    encryption.
    """

    id: str
    message_length: int
    crypto_coeff_full: int
    crypto_coeff_degraded: int
    trigger_rate: float
    priority: int = 0

    def __post_init__(self):
        if self.message_length <= 0:
            raise KeyPoolError(f"task {self.id}: message_length must be positive")
        if self.crypto_coeff_full < 0 or self.crypto_coeff_degraded < 0:
            raise KeyPoolError(f"task {self.id}: crypto coefficients must be non-negative")
        if self.trigger_rate < 0:
            raise KeyPoolError(f"task {self.id}: trigger_rate must be non-negative")


@dataclass(frozen=True)
class ConsumptionEvent:
    time: float
    task_id: str
    bits: int
    granted: bool


def safe_threshold(alpha_max: float, l_max: float, lambda_max: float, tau_crit: float) -> float:
    """Minimum inventory that keeps the top-priority task alive through a
    critical window: cost-per-bit x message length x trigger rate x window."""
    for name, v in (("alpha_max", alpha_max), ("l_max", l_max),
                    ("lambda_max", lambda_max), ("tau_crit", tau_crit)):
        if v <= 0:
            raise KeyPoolError(f"{name} must be positive, got {v}")
    return alpha_max * l_max * lambda_max * tau_crit


def sample_triggers(profile: TaskProfile, dt: float, rng: np.random.Generator) -> int:
    """Number of task activations in one tick, Poisson with mean rate*dt."""
    if dt <= 0:
        raise KeyPoolError("dt must be positive")
    if profile.trigger_rate == 0.0:
        return 0
    return int(rng.poisson(profile.trigger_rate * dt))


class KeyPool:
    """Bounded key inventory with warn-reconfigure-protect zones.

    Thresholds are validated once at construction and immutable; the
    level is derived from the ledger so conservation is exact by
    construction.
    """

    def __init__(self, initial: int, k_safe: float, k_th: float, k_cap: int):
        if not (0 < k_safe < k_th < k_cap):
            raise KeyPoolError(
                f"thresholds must satisfy 0 < K_safe < K_th < K_cap, "
                f"got {k_safe}, {k_th}, {k_cap}")
        if not 0 <= initial <= k_cap:
            raise KeyPoolError(f"initial level {initial} outside [0, {k_cap}]")
        self.k_initial = int(initial)
        self.k_safe = k_safe
        self.k_th = k_th
        self.k_cap = int(k_cap)
        self.total_generated = 0
        self.total_consumed = 0
        self.total_discarded = 0
        self._carry = 0.0  # sub-bit generation remainder, not part of the ledger

    @property
    def level(self) -> int:
        return (self.k_initial + self.total_generated
                - self.total_consumed - self.total_discarded)

    def debit(self, bits: int) -> bool:
        """Withdraw ``bits`` if available. Refusal leaves the pool untouched
        and is a result, not an error."""
        if bits <= 0:
            raise KeyPoolError(f"debit amount must be positive, got {bits}")
        if self.level < bits:
            return False
        self.total_consumed += int(bits)
        return True

    def accrue(self, rate: float, dt: float) -> int:
        """Credit one tick of generation at ``rate`` bits/s.

        Whole bits only; the fractional part carries over. Credits beyond
        the cap are counted as discarded. Returns the bits generated this
        tick (before any cap discard).
        """
        if dt <= 0:
            raise KeyPoolError("dt must be positive")
        if rate < 0:
            raise KeyPoolError("generation rate must be non-negative")
        self._carry += rate * dt
        whole = int(math.floor(self._carry))
        if whole <= 0:
            return 0
        self._carry -= whole
        self.total_generated += whole
        overflow = self.level - self.k_cap
        if overflow > 0:
            self.total_discarded += overflow
        return whole

    def zone(self) -> str:
        """Half-open zone bands: protect below K_safe, reconfigure in
        [K_safe, K_th), normal at or above K_th."""
        if self.level < self.k_safe:
            return PROTECT
        if self.level < self.k_th:
            return RECONFIGURE
        return NORMAL

    def ledger(self) -> dict[str, int]:
        return {
            "level": self.level,
            "initial": self.k_initial,
            "generated": self.total_generated,
            "consumed": self.total_consumed,
            "discarded": self.total_discarded,
        }


def classify_zone(pool: KeyPool) -> str:
    return pool.zone()


def step_inventory(pool: KeyPool, rate: float, dt: float) -> int:
    """Tick-level inventory update: generation inflow with cap saturation.

    Consumption is handled separately through :meth:`KeyPool.debit` so the
    level can never go negative.
    """
    return pool.accrue(rate, dt)
