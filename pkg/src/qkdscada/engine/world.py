"""The per-tick co-simulation loop binding every subsystem.

Each tick runs a fixed sub-step order: link advance, pool accrual,
forecast predict/correct, policy decision, task triggers with real frame
encoding and latency injection, grid step under the chain-derived input,
then metrics and the trace row. All randomness flows from named
generator streams spawned off the run seed, so a (scenario, seed) pair
reproduces its trace byte for byte.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .. import forecast as fc
from ..chains import chain_consumption
from ..grid import (GridState, MetricsAccumulator, control_input_map,
                    finalize_metrics, step_grid)
from ..keypool import KeyPool, sample_triggers
from ..protocol import (AsduMessage, MODE_AES, MODE_OTP, encode_frame,
                        inject_latency, message_key_cost, synth_block)
from ..protocol.latency import DROPPED
from ..qlink import QkdLink
from .policies import build_policy
from .scenario import Scenario


class InfeasibleRunError(RuntimeError):
    """A policy solver proved the scenario infeasible mid-run."""


TRACE_BASE_COLUMNS = ["t", "dt", "K", "K_hat", "ci_low", "ci_high", "G", "zone",
                      "generated", "consumed", "n_trigger", "n_success",
                      "violating"]
TRACE_SIDE_COLUMNS = ["cons_tso", "cons_dso", "req_tso", "req_dso"]


@dataclass
class RunTrace:
    """Columnar per-tick record with a fixed, scenario-derived column order."""

    columns: list[str]
    rows: list[list]

    def column(self, name: str) -> list:
        idx = self.columns.index(name)
        return [row[idx] for row in self.rows]


class World:
    """One simulation run's complete mutable state."""

    def __init__(self, scenario: Scenario, seed: int):
        self.scenario = scenario
        self.seed = seed
        streams = np.random.SeedSequence(seed).spawn(4)
        self.rng_link = np.random.default_rng(streams[0])
        self.rng_tasks = np.random.default_rng(streams[1])
        self.rng_latency = np.random.default_rng(streams[2])
        material_seed = np.random.default_rng(streams[3]).bytes(16)

        self.link = QkdLink(scenario.link, horizon=scenario.duration + scenario.tick,
                            rng=self.rng_link)
        self.pool = KeyPool(scenario.pool_initial, scenario.pool_k_safe,
                            scenario.pool_k_th, scenario.pool_k_cap)
        self.material_seed = material_seed
        self.key_index = 0

        q = np.diag([scenario.link.rate_noise_std ** 2 * scenario.tick, 1.0])
        self.filter_config = fc.FilterConfig(
            process_noise=q,
            observation_noise=(0.05 * max(1.0, scenario.link.mean_rate)) ** 2)
        self.estimate = fc.StateEstimate(
            scenario.link.mean_rate, float(scenario.pool_initial),
            np.diag([scenario.link.rate_noise_std ** 2, 0.0]))

        self.grid = GridState.zero(scenario.grid_model)
        lag = scenario.scheduler.degraded_lag_ticks
        self.grid_history: deque[GridState] = deque([self.grid], maxlen=lag + 1)

        self.states = tuple(scenario.initial_states)
        self.actuation_ok = [True] * len(scenario.chains)
        self.policy = build_policy(scenario)

        self.metrics = MetricsAccumulator(df_safe=scenario.df_safe)
        self.metrics.generated_bits += scenario.pool_initial  # preloaded supply
        self._link_carry = 0.0
        self.tick_index = 0
        self.game_iterations: list[int] = []
        self.game_converged: list[bool] = []

        columns = list(TRACE_BASE_COLUMNS)
        columns += [f"df_{i}" for i in range(scenario.grid_model.n_areas)]
        columns += [f"dv_{i}" for i in range(scenario.grid_model.volt_nodes)]
        columns += [f"state_{c.id}" for c in scenario.chains]
        columns += TRACE_SIDE_COLUMNS
        columns += ["events"]
        self.trace = RunTrace(columns=columns, rows=[])
        # Preload counts as supply delivered before the first tick.
        self._first_row_generated = scenario.pool_initial

    # -- helpers -----------------------------------------------------------

    def current_latency_ok(self) -> tuple[bool, ...]:
        """Latency feasibility per chain from the deterministic delay part."""
        sc = self.scenario
        if sc.latency.outage_aware and self.link.state.broken:
            return tuple(False for _ in sc.chains)
        return tuple(sc.latency.base_latency <= c.latency_tolerance
                     for c in sc.chains)

    def forecast_trajectory(self, horizon: int):
        """Iterated one-step predictions (K_hat, sigma_K) for the scheduler."""
        sc = self.scenario
        est = self.estimate
        consumption = chain_consumption(self.states, sc.chains, sc.mode_costs, sc.tick)
        out = []
        for _ in range(horizon):
            est = fc.predict(est, consumption, self.filter_config, sc.link, sc.tick)
            out.append((est.k_hat, math.sqrt(max(0.0, est.k_var))))
        return tuple(out)

    def _build_frame(self, chain_index: int, mode: int) -> bytes:
        sc = self.scenario
        chain = sc.chains[chain_index]
        payload_bytes = chain.message_length // 8
        info = bytes(max(0, payload_bytes - 4))
        asdu = AsduMessage(type_id=45, cause_of_transmission=6,
                           common_address=chain_index + 1, info_object=info)
        if mode == MODE_OTP:
            block = b""
            while len(block) < payload_bytes:
                block += synth_block(self.material_seed, self.key_index + len(block))
            block = block[:payload_bytes]
        else:
            block = synth_block(self.material_seed, self.key_index)[:16]
        frame = encode_frame(asdu, mode, block, self.key_index)
        self.key_index += 1
        return frame

    # -- the tick ----------------------------------------------------------

    def tick(self) -> None:
        sc = self.scenario
        dt = sc.tick
        events: list[str] = []
        was_broken = self.link.state.broken
        prev_zone = self.pool.zone()

        # 1. link
        link_state = self.link.advance(dt)
        if link_state.broken and not was_broken:
            events.append("outage_start")
        elif was_broken and not link_state.broken:
            events.append("outage_end")

        # 2. generation accrual (the link produces regardless; the pool
        #    ingests only when the policy uses dynamic keys)
        self._link_carry += link_state.rate * dt
        link_bits = int(math.floor(self._link_carry))
        self._link_carry -= link_bits
        if sc.generation_enabled:
            self.pool.accrue(link_state.rate, dt)

        # 3. forecast: record the one-step-ahead prediction, then condition
        #    on the observed rate
        consumption_nominal = chain_consumption(self.states, sc.chains,
                                                sc.mode_costs, dt)
        self.estimate = fc.predict(self.estimate, consumption_nominal,
                                   self.filter_config, sc.link, dt)
        k_hat = self.estimate.k_hat
        ci_low, ci_high = fc.confidence_interval(self.estimate, 0.95)
        self.estimate = fc.correct(self.estimate,
                                   fc.ObservationVector(link_state.rate),
                                   self.filter_config)

        # 4. policy decision
        new_states = self.policy.decide(self, self.tick_index)
        for chain, old, new in zip(sc.chains, self.states, new_states):
            if old != new:
                events.append(f"switch:{chain.id}:{old}->{new}")
        self.states = tuple(new_states)

        # 5. task triggers, debits, frames, latency
        triggers = 0
        successes = 0
        consumed = 0
        side_cons = {"tso": 0, "dso": 0}
        side_req = {"tso": 0, "dso": 0}
        for i, chain in enumerate(sc.chains):
            task = sc.task_for(i)
            n = sample_triggers(task, dt, self.rng_tasks)
            state = self.states[i]
            for _ in range(n):
                triggers += 1
                side_req[chain.owner] += sc.mode_costs.cost(2, chain.message_length)
                if state == 0:
                    events.append(f"blocked:{chain.id}")
                    self.actuation_ok[i] = False
                    continue
                mode = MODE_OTP if state == 2 else MODE_AES
                cost = message_key_cost(mode, chain.message_length // 8)
                if not self.pool.debit(cost):
                    events.append(f"refusal:{chain.id}")
                    self.actuation_ok[i] = False
                    continue
                consumed += cost
                side_cons[chain.owner] += cost
                self._build_frame(i, mode)
                delay = inject_latency(sc.latency, link_state, self.rng_latency)
                if delay is DROPPED or delay > chain.latency_tolerance:
                    events.append(f"drop:{chain.id}")
                    self.actuation_ok[i] = False
                else:
                    successes += 1
                    self.actuation_ok[i] = True

        # 6. grid step under the effective (actuation-masked) chain states
        effective = tuple(s if ok else 0
                          for s, ok in zip(self.states, self.actuation_ok))
        lagged = self.grid_history[0]  # deque holds exactly lag+1 states
        u = control_input_map(effective, self.grid, sc.chains, sc.grid_model,
                              lagged_state=lagged)
        disturbance = self._disturbance_at(self.tick_index * dt)
        self.grid = step_grid(sc.grid_model, self.grid, u, disturbance)
        self.grid_history.append(self.grid)

        # 7. metrics, trace, ledger anchor
        violating = self.metrics.record_tick(self.grid.freq, link_bits, consumed,
                                             dt, triggers, successes)
        zone = self.pool.zone()
        if zone != prev_zone:
            events.append(f"zone:{zone}")
        generated_cell = link_bits + self._first_row_generated
        self._first_row_generated = 0
        row = [self.tick_index * dt + dt, dt, self.pool.level, k_hat, ci_low,
               ci_high, link_state.rate, zone, generated_cell, consumed,
               triggers, successes, int(violating)]
        row += [float(f) for f in self.grid.freq]
        row += [float(v) for v in self.grid.volt]
        row += list(self.states)
        row += [side_cons["tso"], side_cons["dso"], side_req["tso"], side_req["dso"]]
        row += [";".join(events)]
        self.trace.rows.append(row)
        self.estimate = fc.anchor_level(self.estimate, float(self.pool.level))
        self.tick_index += 1

    def _disturbance_at(self, t: float) -> np.ndarray | None:
        sc = self.scenario
        d = None
        for pulse in sc.pulses:
            if pulse.start <= t < pulse.start + pulse.duration:
                if d is None:
                    d = np.zeros(sc.grid_model.n_states)
                d[sc.grid_model.freq_indices[pulse.area]] += pulse.magnitude
        return d

    def run(self):
        for _ in range(self.scenario.n_ticks()):
            self.tick()
        fairness = self._fairness()
        metrics = finalize_metrics(self.metrics, fairness)
        return self.trace, metrics

    def _fairness(self) -> float | None:
        cons_t = sum(self.trace.column("cons_tso"))
        cons_d = sum(self.trace.column("cons_dso"))
        req_t = sum(self.trace.column("req_tso"))
        req_d = sum(self.trace.column("req_dso"))
        if req_t <= 0 or req_d <= 0:
            return None
        from ..game import fairness_index
        return fairness_index(cons_t / req_t, cons_d / req_d)
