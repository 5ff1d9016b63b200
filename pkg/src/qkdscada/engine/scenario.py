"""Scenario files: schema, validation, and loading.

Scenarios are versioned YAML documents describing one complete experiment
configuration: link physics, pool thresholds, task profiles, the
multilayer graph and its control chains, the grid preset, disturbance
profile, latency model, scheduler/game settings, and the policy (S1-S5).
Validation collects every problem before failing so a bad file yields one
complete diagnostic report.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from ..chains import (ControlChain, LossWeights, ModeCostModel,
                      MultilayerGraph, validate_chain)
from ..grid import GridModel
from ..keypool import TaskProfile
from ..protocol.latency import LatencyModel
from ..qlink import LinkParams
from .presets import PRESET_TICK, load_preset

SCHEMA_VERSION = 1

POLICIES = ("S1", "S2", "S3", "S4", "S5")


class ScenarioError(ValueError):
    """Carries every validation diagnostic found in one pass."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class DisturbancePulse:
    start: float
    duration: float
    area: int
    magnitude: float


@dataclass(frozen=True)
class SchedulerConfig:
    horizon: int = 2
    risk: float = 0.05
    buffer_bits: float = 500.0
    lambda_freq: float = 40.0
    stride: int = 10
    degraded_lag_ticks: int = 10
    use_chebyshev: bool = False
    node_budget: int = 200_000


@dataclass(frozen=True)
class GameConfig:
    rho: float = 0.3
    delta: int = 1
    max_iterations: int = 60
    stride: int = 50
    s4_quota: float = 0.5
    leader_areas: tuple[int, ...] = (0,)
    follower_areas: tuple[int, ...] = (1, 2, 3)
    leader_lambda_freq: float = 40.0
    follower_lambda_freq: float = 40.0


@dataclass(frozen=True)
class Scenario:
    name: str
    policy: str
    tick: float
    duration: float
    seeds: tuple[int, ...]
    link: LinkParams
    pool_initial: int
    pool_k_safe: float
    pool_k_th: float
    pool_k_cap: int
    generation_enabled: bool
    tasks: tuple[TaskProfile, ...]
    graph: MultilayerGraph
    chains: tuple[ControlChain, ...]
    grid_model: GridModel
    grid_preset: str
    pulses: tuple[DisturbancePulse, ...]
    latency: LatencyModel
    mode_costs: ModeCostModel
    weights: LossWeights
    scheduler: SchedulerConfig
    game: GameConfig | None
    s2_protect_keep: int
    initial_states: tuple[int, ...]
    df_safe: float
    chain_tasks: tuple[str, ...] = ()
    raw: dict = field(repr=False, default_factory=dict)

    def config_digest(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "Scenario":
        return replace(self, **kw)

    def n_ticks(self) -> int:
        return max(1, round(self.duration / self.tick))

    def task_for(self, chain_index: int) -> TaskProfile:
        task_id = self.chain_tasks[chain_index]
        return next(t for t in self.tasks if t.id == task_id)


def _require(data: dict, key: str, errors: list[str], context: str = "scenario"):
    if key not in data:
        errors.append(f"{context}: missing required key {key!r}")
        return None
    return data[key]


def parse_scenario(data: dict) -> Scenario:
    """Build a validated Scenario from a parsed YAML mapping."""
    errors: list[str] = []
    if not isinstance(data, dict):
        raise ScenarioError(["scenario file must contain a mapping"])

    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        errors.append(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")

    name = data.get("name", "unnamed")
    policy = data.get("policy")
    if policy not in POLICIES:
        errors.append(f"policy must be one of {POLICIES}, got {policy!r}")

    tick = float(data.get("tick", 0.1))
    duration = float(data.get("duration", 0.0))
    if tick <= 0:
        errors.append("tick must be positive")
    if duration < tick:
        errors.append("duration must be at least one tick")

    seeds = tuple(int(s) for s in data.get("seeds", range(30)))

    link = None
    try:
        link_data = dict(_require(data, "link", errors) or {})
        if link_data:
            rng_field = link_data.pop("outage_duration_range", [3.0, 5.0])
            link = LinkParams(outage_duration_range=tuple(float(x) for x in rng_field),
                              **{k: float(v) for k, v in link_data.items()})
    except (TypeError, ValueError) as exc:
        errors.append(f"link: {exc}")

    pool = data.get("pool", {})
    pool_initial = int(pool.get("initial", 0))
    pool_k_safe = float(pool.get("k_safe", 1.0))
    pool_k_th = float(pool.get("k_th", 2.0))
    pool_k_cap = int(pool.get("k_cap", max(pool_initial, 4)))
    if not (0 < pool_k_safe < pool_k_th < pool_k_cap):
        errors.append("pool thresholds must satisfy 0 < k_safe < k_th < k_cap")
    if not (0 <= pool_initial <= pool_k_cap):
        errors.append("pool initial level must lie in [0, k_cap]")
    generation_enabled = bool(pool.get("generation_enabled", True))
    if policy == "S1":
        generation_enabled = False  # static keys: pre-loaded pool only

    tasks = []
    for t in data.get("tasks", []):
        try:
            length = int(t["message_length"])
            if length % 8:
                errors.append(f"task {t.get('id')}: message_length must be a whole "
                              f"number of bytes (multiple of 8 bits)")
            tasks.append(TaskProfile(
                id=str(t["id"]), message_length=length,
                crypto_coeff_full=int(t.get("crypto_coeff_full", length)),
                crypto_coeff_degraded=int(t.get("crypto_coeff_degraded", 128)),
                trigger_rate=float(t["trigger_rate"]),
                priority=int(t.get("priority", 0))))
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"task entry {t!r}: {exc}")
    if not tasks:
        errors.append("at least one task profile is required")
    task_ids = {t.id for t in tasks}

    graph = None
    gdata = data.get("graph", {})
    try:
        graph = MultilayerGraph(
            layers={str(k): str(v) for k, v in gdata.get("nodes", {}).items()},
            edges=frozenset((str(u), str(v)) for u, v in gdata.get("edges", [])),
            control_center=str(gdata.get("control_center", "cc")))
    except (TypeError, ValueError) as exc:
        errors.append(f"graph: {exc}")

    mode_costs_data = data.get("mode_costs", {})
    mode_costs = ModeCostModel(
        full_bits_per_message_bit=float(mode_costs_data.get("full_per_bit", 1.0)),
        degraded_bits_fixed=int(mode_costs_data.get("degraded_bits", 128)),
        degraded_bits_per_message_bit=mode_costs_data.get("degraded_per_bit"))

    chains = []
    chain_tasks: list[str] = []
    for c in data.get("chains", []):
        try:
            task_id = str(c["task"])
            task = next((t for t in tasks if t.id == task_id), None)
            if task is None:
                errors.append(f"chain {c.get('id')}: unknown task {task_id!r}")
                continue
            chain = ControlChain(
                id=str(c["id"]), path=tuple(str(n) for n in c["path"]),
                demand=float(c.get("demand",
                                   task.trigger_rate * task.message_length)),
                latency_tolerance=float(c.get("latency_tolerance", 0.5)),
                priority_weight=float(c.get("priority_weight", task.priority)),
                reconfig_cost=float(c.get("reconfig_cost", 0.3)),
                gain=float(c.get("gain", 0.0)),
                message_length=task.message_length,
                message_rate=task.trigger_rate,
                owner=str(c.get("owner", "tso")),
                task_type=str(c.get("task_type", task_id)),
                channel=int(c.get("channel", 0)),
                area=int(c.get("area", 0)),
                mandatory=bool(c.get("mandatory", False)))
            chains.append(chain)
            chain_tasks.append(task_id)
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"chain entry {c!r}: {exc}")
    if not chains:
        errors.append("at least one chain is required")
    try:
        mode_costs.check_ordering(chains)
    except ValueError as exc:
        errors.append(str(exc))

    grid_cfg = data.get("grid", {})
    grid_preset = str(grid_cfg.get("preset", "ieee39_reduced"))
    grid_model = None
    try:
        grid_model = load_preset(grid_preset)
        if abs(tick - PRESET_TICK) > 1e-12:
            errors.append(f"grid preset {grid_preset!r} is discretized at "
                          f"{PRESET_TICK}s; scenario tick is {tick}s")
    except KeyError as exc:
        errors.append(str(exc.args[0]))

    if graph is not None:
        for chain in chains:
            diag = validate_chain(graph, chain)
            if diag:
                errors.append(diag)
    if grid_model is not None:
        for chain in chains:
            if chain.channel >= grid_model.n_inputs:
                errors.append(f"chain {chain.id}: channel {chain.channel} outside "
                              f"model inputs ({grid_model.n_inputs})")
            limit = (grid_model.volt_nodes if chain.task_type == "avr"
                     else grid_model.n_areas)
            if chain.area >= limit:
                errors.append(f"chain {chain.id}: area {chain.area} outside range "
                              f"({limit})")

    pulses = []
    for p in data.get("disturbance", {}).get("pulses", []):
        try:
            pulses.append(DisturbancePulse(
                start=float(p["start"]), duration=float(p["duration"]),
                area=int(p.get("area", 0)), magnitude=float(p["magnitude"])))
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"disturbance pulse {p!r}: {exc}")

    latency_data = data.get("latency", {})
    latency = LatencyModel(base_latency=float(latency_data.get("base", 0.02)),
                           jitter_std=float(latency_data.get("jitter_std", 0.0)),
                           outage_aware=bool(latency_data.get("outage_aware", True)))

    wdata = data.get("weights", {})
    weights = LossWeights(w_f=float(wdata.get("w_f", 1.0)),
                          w_v=float(wdata.get("w_v", 0.5)),
                          xi_drop=float(wdata.get("xi_drop", 2.0)),
                          xi_deg=float(wdata.get("xi_deg", 0.4)))

    sdata = data.get("scheduler", {})
    scheduler = SchedulerConfig(
        horizon=int(sdata.get("horizon", 2)),
        risk=float(sdata.get("risk", 0.05)),
        buffer_bits=float(sdata.get("buffer_bits", 500.0)),
        lambda_freq=float(sdata.get("lambda_freq", 40.0)),
        stride=int(sdata.get("stride", 10)),
        degraded_lag_ticks=int(sdata.get("degraded_lag_ticks", 10)),
        use_chebyshev=bool(sdata.get("use_chebyshev", False)),
        node_budget=int(sdata.get("node_budget", 200_000)))
    if scheduler.horizon < 1 or scheduler.stride < 1:
        errors.append("scheduler horizon and stride must be at least 1")
    if not 0 < scheduler.risk < 0.5:
        errors.append("scheduler risk must lie in (0, 0.5)")

    game = None
    if "game" in data or policy in ("S4", "S5"):
        gd = data.get("game", {})
        if policy in ("S4", "S5") and "game" not in data:
            errors.append(f"policy {policy} requires a game section")
        game = GameConfig(
            rho=float(gd.get("rho", 0.3)),
            delta=int(gd.get("delta", 1)),
            max_iterations=int(gd.get("max_iterations", 60)),
            stride=int(gd.get("stride", 50)),
            s4_quota=float(gd.get("s4_quota", 0.5)),
            leader_areas=tuple(int(a) for a in gd.get("leader_areas", [0])),
            follower_areas=tuple(int(a) for a in gd.get("follower_areas", [1, 2, 3])),
            leader_lambda_freq=float(gd.get("leader_lambda_freq", 40.0)),
            follower_lambda_freq=float(gd.get("follower_lambda_freq", 40.0)))
        if not 0.0 < game.s4_quota < 1.0:
            errors.append("game s4_quota must lie in (0, 1)")
        if policy in ("S4", "S5"):
            owners = {c.owner for c in chains}
            if owners != {"tso", "dso"}:
                errors.append(f"policy {policy} needs both tso- and dso-owned chains")

    initial_states = tuple(int(s) for s in
                           data.get("initial_states", [2] * len(chains)))
    if len(initial_states) != len(chains):
        errors.append("initial_states length must match the chain count")
    if any(s not in (0, 1, 2) for s in initial_states):
        errors.append("initial_states entries must be 0, 1, or 2")

    df_safe = float(data.get("df_safe", 0.05))
    if df_safe <= 0:
        errors.append("df_safe must be positive")

    if errors:
        raise ScenarioError(errors)

    return Scenario(
        name=name, policy=policy, tick=tick, duration=duration, seeds=seeds,
        link=link, pool_initial=pool_initial, pool_k_safe=pool_k_safe,
        pool_k_th=pool_k_th, pool_k_cap=pool_k_cap,
        generation_enabled=generation_enabled, tasks=tuple(tasks), graph=graph,
        chains=tuple(chains), grid_model=grid_model, grid_preset=grid_preset,
        pulses=tuple(pulses), latency=latency, mode_costs=mode_costs,
        weights=weights, scheduler=scheduler, game=game,
        s2_protect_keep=int(data.get("s2_protect_keep", 1)),
        initial_states=initial_states, df_safe=df_safe,
        chain_tasks=tuple(chain_tasks), raw=data)


def load_scenario(path: str | Path) -> Scenario:
    text = Path(path).read_text()
    data = yaml.safe_load(text)
    return parse_scenario(data)


def scenario_from_yaml(text: str) -> Scenario:
    return parse_scenario(yaml.safe_load(text))
