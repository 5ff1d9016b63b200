"""Reduced linearized grid dynamics and run-level performance metrics.

The power system is a discrete-time linear model x' = A x + B u + d with
per-area frequency-deviation states; monitored voltage deviations follow
a first-order response to voltage-regulation inputs and feed only the
loss function. Metrics accumulate per tick and finalize into the four
run-level figures: task success rate, peak frequency deviation, key
utilization, and time over the safe frequency band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GridModelError(ValueError):
    pass


@dataclass(frozen=True)
class GridModel:
    """Discrete-time (per-tick) linear model of the reduced power system.

    ``freq_indices`` selects the frequency-deviation entries of the state
    vector, one per area. ``volt_nodes`` monitored voltage deviations are
    kept outside A as first-order lags (pole ``volt_decay``), node i
    driven by input channel ``volt_input_channels[i]``.
    """

    a: np.ndarray
    b: np.ndarray
    freq_indices: tuple[int, ...]
    volt_nodes: int = 0
    volt_decay: float = 0.98
    volt_input_channels: tuple[int, ...] = ()

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GridModelError(f"A must be square, got {a.shape}")
        if b.shape[0] != a.shape[0]:
            raise GridModelError(f"B rows {b.shape[0]} != state dimension {a.shape[0]}")
        radius = max(abs(np.linalg.eigvals(a)))
        if radius >= 1.0:
            raise GridModelError(f"unstable model: spectral radius {radius:.4f} >= 1")
        if any(i < 0 or i >= a.shape[0] for i in self.freq_indices):
            raise GridModelError("freq_indices outside state dimension")
        if not 0.0 <= self.volt_decay < 1.0:
            raise GridModelError("volt_decay must lie in [0, 1)")
        if any(c < 0 or c >= b.shape[1] for c in self.volt_input_channels):
            raise GridModelError("volt_input_channels outside input dimension")
        if self.volt_nodes and len(self.volt_input_channels) != self.volt_nodes:
            raise GridModelError("need one input channel per monitored voltage node")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n_states(self) -> int:
        return self.a.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.b.shape[1]

    @property
    def n_areas(self) -> int:
        return len(self.freq_indices)


@dataclass
class GridState:
    """Full state vector, per-area frequency deviations, monitored voltages."""

    x: np.ndarray
    volt: np.ndarray
    freq: np.ndarray

    @classmethod
    def zero(cls, model: GridModel) -> "GridState":
        return cls(np.zeros(model.n_states), np.zeros(model.volt_nodes),
                   np.zeros(model.n_areas))


def step_grid(model: GridModel, state: GridState, u: np.ndarray,
              disturbance: np.ndarray | None = None,
              volt_disturbance: np.ndarray | None = None) -> GridState:
    """Advance one tick: x' = A x + B u + d.

    Voltage deviations decay toward zero and absorb the AVR channels'
    inputs; they never couple back into the frequency states.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (model.n_inputs,):
        raise GridModelError(f"input shape {u.shape} != ({model.n_inputs},)")
    x = model.a @ state.x + model.b @ u
    if disturbance is not None:
        d = np.asarray(disturbance, dtype=float)
        if d.shape != x.shape:
            raise GridModelError(f"disturbance shape {d.shape} != state shape {x.shape}")
        x = x + d
    if model.volt_nodes:
        drive = np.array([u[c] for c in model.volt_input_channels])
        volt = model.volt_decay * state.volt + drive
        if volt_disturbance is not None:
            volt = volt + np.asarray(volt_disturbance, dtype=float)
    else:
        volt = state.volt
    volt = np.asarray(volt, dtype=float).reshape(-1)
    return GridState(x, volt, x[list(model.freq_indices)])


# Chain activation states.
OFF, DEGRADED, FULL = 0, 1, 2


def control_input_map(chain_states, grid_state: GridState, chains, model: GridModel,
                      lagged_state: GridState | None = None) -> np.ndarray:
    """Map chain activations to the grid input vector.

    Active frequency-control chains contribute proportional feedback
    u = -k * Δf on their channel; voltage chains push their node's
    deviation toward zero the same way. Degraded chains read the lagged
    state (stale telemetry), which is the only difference between the
    two active modes. Deactivated chains contribute nothing.
    """
    u = np.zeros(model.n_inputs)
    for chain, s in zip(chains, chain_states):
        if s == OFF:
            continue
        src = grid_state if (s == FULL or lagged_state is None) else lagged_state
        if chain.task_type == "avr":
            signal = src.volt[chain.area] if chain.area < len(src.volt) else 0.0
        else:
            signal = src.freq[chain.area]
        u[chain.channel] += -chain.gain * signal
    return u


@dataclass
class MetricsAccumulator:
    """Per-run counters; finalized once at end of run."""

    df_safe: float
    n_trigger: int = 0
    n_success: int = 0
    max_abs_df: float = 0.0
    generated_bits: int = 0
    consumed_bits: int = 0
    violation_time: float = 0.0

    def record_tick(self, freq: np.ndarray, generated: int, consumed: int, dt: float,
                    triggers: int, successes: int) -> bool:
        """Fold one tick into the counters; returns the violation flag."""
        peak = float(np.max(np.abs(freq))) if len(freq) else 0.0
        self.max_abs_df = max(self.max_abs_df, peak)
        self.generated_bits += generated
        self.consumed_bits += consumed
        self.n_trigger += triggers
        self.n_success += successes
        violating = peak > self.df_safe
        if violating:
            self.violation_time += dt
        return violating


@dataclass(frozen=True)
class RunMetrics:
    """The four run-level figures; None marks an undefined ratio."""

    p_succ: float | None
    df_max: float
    key_utilization: float | None
    trr: float
    fairness: float | None = None

    def as_dict(self) -> dict:
        return {
            "p_succ": self.p_succ,
            "df_max": self.df_max,
            "key_utilization": self.key_utilization,
            "trr": self.trr,
            "fairness": self.fairness,
        }


def finalize_metrics(acc: MetricsAccumulator, fairness: float | None = None) -> RunMetrics:
    p_succ = acc.n_success / acc.n_trigger if acc.n_trigger > 0 else None
    util = acc.consumed_bits / acc.generated_bits if acc.generated_bits > 0 else None
    return RunMetrics(p_succ, acc.max_abs_df, util, acc.violation_time, fairness)
