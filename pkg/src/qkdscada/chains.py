"""Control chains over the communication/control/physical multilayer graph.

A chain is a directed path from the control center through communication
nodes to a physical device, carrying a feature vector (key demand,
latency tolerance, priority, reconfiguration cost) and a tri-state
activation: 0 off, 1 active with degraded encryption, 2 active with full
encryption. This module owns chain validation, per-mode key-consumption
arithmetic, and the composite per-tick loss.
"""

from __future__ import annotations

from dataclasses import dataclass

from .grid import OFF, DEGRADED, FULL, GridState

LAYER_COM = "com"
LAYER_CTR = "ctr"
LAYER_PHY = "phy"

TSO = "tso"
DSO = "dso"


class ChainConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MultilayerGraph:
    """Nodes labeled by layer plus directed edges; one control-center node."""

    layers: dict[str, str]           # node id -> layer
    edges: frozenset[tuple[str, str]]
    control_center: str

    def __post_init__(self):
        if self.layers.get(self.control_center) != LAYER_CTR:
            raise ChainConfigError(
                f"control center {self.control_center!r} must be a {LAYER_CTR!r} node")
        for u, v in self.edges:
            if u not in self.layers or v not in self.layers:
                raise ChainConfigError(f"edge ({u}, {v}) references unknown node")


@dataclass(frozen=True)
class ControlChain:
    """One control path and its scheduling-relevant features.

    ``demand`` is the nominal key-bits/s the chain requests at full
    encryption; ``message_rate`` and ``message_length`` describe its
    traffic; ``gain`` couples it to the grid input on ``channel`` acting
    on ``area`` (a voltage node index for AVR-class chains).
    """

    id: str
    path: tuple[str, ...]
    demand: float
    latency_tolerance: float
    priority_weight: float
    reconfig_cost: float
    gain: float
    message_length: int
    message_rate: float
    owner: str = TSO
    task_type: str = "agc"
    channel: int = 0
    area: int = 0
    mandatory: bool = False

    def __post_init__(self):
        if self.demand < 0:
            raise ChainConfigError(f"chain {self.id}: demand must be non-negative")
        if self.latency_tolerance <= 0:
            raise ChainConfigError(f"chain {self.id}: latency tolerance must be positive")
        if self.priority_weight < 0 or self.reconfig_cost < 0:
            raise ChainConfigError(f"chain {self.id}: weights must be non-negative")
        if self.message_length <= 0 or self.message_rate < 0:
            raise ChainConfigError(f"chain {self.id}: bad message profile")
        if self.owner not in (TSO, DSO):
            raise ChainConfigError(f"chain {self.id}: owner must be tso or dso")


@dataclass(frozen=True)
class LossWeights:
    """Weights of the composite loss; all non-negative."""

    w_f: float = 1.0
    w_v: float = 1.0
    xi_drop: float = 1.0
    xi_deg: float = 0.3

    def __post_init__(self):
        if min(self.w_f, self.w_v, self.xi_drop, self.xi_deg) < 0:
            raise ChainConfigError("loss weights must be non-negative")


@dataclass(frozen=True)
class ModeCostModel:
    """Key bits one message costs per encryption mode.

    Defaults follow the cryptographic convention: full mode pads the
    whole message (one key bit per message bit), degraded mode spends a
    fixed session-key budget per message. Both knobs are exposed so other
    coefficient conventions remain expressible in scenario files.
    """

    full_bits_per_message_bit: float = 1.0
    degraded_bits_fixed: int = 128
    degraded_bits_per_message_bit: float | None = None

    def cost(self, state: int, message_length: int) -> int:
        if state == OFF:
            return 0
        if state == FULL:
            return int(round(self.full_bits_per_message_bit * message_length))
        if state == DEGRADED:
            if self.degraded_bits_per_message_bit is not None:
                return int(round(self.degraded_bits_per_message_bit * message_length))
            return self.degraded_bits_fixed
        raise ChainConfigError(f"unknown chain state {state}")

    def check_ordering(self, chains) -> None:
        """Full mode must never be cheaper than degraded for any chain."""
        for c in chains:
            if self.cost(FULL, c.message_length) < self.cost(DEGRADED, c.message_length):
                raise ChainConfigError(
                    f"chain {c.id}: full-mode cost below degraded-mode cost")


def chain_consumption(states, chains, mode_costs: ModeCostModel, dt: float) -> float:
    """Expected key-consumption rate (bits/s) of the given activation vector.

    Per chain: message rate times the per-message cost of its mode. The
    ``dt`` argument fixes the rate convention (costs are per message, not
    per tick) and guards against a zero tick.
    """
    if dt <= 0:
        raise ChainConfigError("dt must be positive")
    total = 0.0
    for chain, s in zip(chains, states):
        total += chain.message_rate * mode_costs.cost(s, chain.message_length)
    return total


@dataclass(frozen=True)
class LossBreakdown:
    """The three loss components; ``total`` is their exact sum."""

    stability: float
    degradation: float
    switching: float

    @property
    def total(self) -> float:
        return self.stability + self.degradation + self.switching


def step_loss(states_now, states_prev, grid_state: GridState, weights: LossWeights,
              chains) -> LossBreakdown:
    """Composite per-tick loss: deviation + task penalties + switch costs."""
    if len(states_now) != len(states_prev):
        raise ChainConfigError("state vectors differ in length")
    stability = (weights.w_f * float(sum(abs(v) for v in grid_state.freq))
                 + weights.w_v * float(sum(abs(v) for v in grid_state.volt)))
    degradation = 0.0
    switching = 0.0
    for chain, now, prev in zip(chains, states_now, states_prev):
        if now == OFF:
            degradation += weights.xi_drop
        elif now == DEGRADED:
            degradation += weights.xi_deg
        if now != prev:
            switching += chain.reconfig_cost
    return LossBreakdown(stability, degradation, switching)


def validate_chain(graph: MultilayerGraph, chain: ControlChain) -> str | None:
    """Structural check of one chain path; returns the first violation.

    A valid path starts at the control center, uses existing directed
    edges, passes through at least one communication node, and terminates
    on a physical node.
    """
    if not chain.path:
        return f"chain {chain.id}: empty path"
    for node in chain.path:
        if node not in graph.layers:
            return f"chain {chain.id}: unknown node {node!r}"
    if chain.path[0] != graph.control_center:
        return f"chain {chain.id}: path must start at control center {graph.control_center!r}"
    for u, v in zip(chain.path, chain.path[1:]):
        if (u, v) not in graph.edges:
            return f"chain {chain.id}: missing edge ({u}, {v})"
    if not any(graph.layers[n] == LAYER_COM for n in chain.path):
        return f"chain {chain.id}: missing communication hop"
    if graph.layers[chain.path[-1]] != LAYER_PHY:
        return f"chain {chain.id}: path must end on a physical node"
    return None
