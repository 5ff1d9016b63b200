"""The five operating policies that close the decision loop.

S1 holds the initial configuration forever (static chains, static keys).
S2 maps the inventory zone to encryption modes. S3 runs the rolling
chance-constrained scheduler. S4 splits the budget between two
non-cooperating schedulers by a fixed quota. S5 solves the leader-
follower game each decision epoch. Policies return the full activation
vector in scenario chain order; between decision epochs states hold.
"""

from __future__ import annotations

from ..game import BiLevelProblem, InfeasibleResidualError, ld_cp_solve
from ..keypool import NORMAL, PROTECT, RECONFIGURE
from ..scheduler import (INFEASIBLE, ScheduleProblem, deterministic_budget,
                         solve_bnb)


class StaticPolicy:
    """S1: the configuration fixed at t = 0 never changes."""

    def __init__(self, scenario):
        self.states = tuple(scenario.initial_states)

    def decide(self, world, tick_index):
        return self.states


class ZonePolicy:
    """S2: zone-triggered encryption modes on the static chain set.

    Normal runs everything at full strength, the reconfigure band drops
    to degraded, and the protect band keeps only the highest-priority
    chains alive (degraded) while the rest shut down.
    """

    def __init__(self, scenario):
        self.scenario = scenario
        order = sorted(range(len(scenario.chains)),
                       key=lambda i: (-scenario.chains[i].priority_weight,
                                      scenario.chains[i].id))
        self.protect_rank = {idx: rank for rank, idx in enumerate(order)}

    def decide(self, world, tick_index):
        zone = world.pool.zone()
        chains = self.scenario.chains
        if zone == NORMAL:
            return tuple(2 for _ in chains)
        if zone == RECONFIGURE:
            return tuple(1 for _ in chains)
        keep = self.scenario.s2_protect_keep
        return tuple(1 if (self.protect_rank[i] < keep or chains[i].mandatory)
                     else 0
                     for i in range(len(chains)))


class SchedulerPolicy:
    """S3: receding-horizon scheduling; only the first step is applied."""

    def __init__(self, scenario):
        self.scenario = scenario

    def decide(self, world, tick_index):
        sc = self.scenario
        if tick_index % sc.scheduler.stride:
            return world.states
        problem = ScheduleProblem(
            horizon=sc.scheduler.horizon,
            chains=sc.chains,
            initial_states=world.states,
            forecast=world.forecast_trajectory(sc.scheduler.horizon),
            grid_model=sc.grid_model,
            grid_state=world.grid,
            weights=sc.weights,
            mode_costs=sc.mode_costs,
            risk=sc.scheduler.risk,
            buffer_bits=sc.scheduler.buffer_bits,
            lambda_freq=sc.scheduler.lambda_freq,
            dt=sc.tick,
            latency_ok=world.current_latency_ok(),
            use_chebyshev=sc.scheduler.use_chebyshev,
            node_budget=sc.scheduler.node_budget,
            degraded_lag=sc.scheduler.degraded_lag_ticks)
        decision = solve_bnb(problem)
        if decision.certificate == INFEASIBLE:
            from .world import InfeasibleRunError
            raise InfeasibleRunError(
                f"scheduler infeasible at t={tick_index * sc.tick:.1f}s")
        return decision.first_step()


def _split_indices(chains):
    leader = tuple(i for i, c in enumerate(chains) if c.owner == "tso")
    follower = tuple(i for i, c in enumerate(chains) if c.owner == "dso")
    return leader, follower


class QuotaPolicy:
    """S4: fixed-quota budget split, each side scheduled independently.

    Each side plans against its share of the joint budget with the other
    side's current states frozen as observable background; there is no
    negotiation.
    """

    def __init__(self, scenario):
        self.scenario = scenario
        self.leader_idx, self.follower_idx = _split_indices(scenario.chains)

    def decide(self, world, tick_index):
        sc = self.scenario
        if tick_index % sc.game.stride:
            return world.states
        forecast = world.forecast_trajectory(sc.scheduler.horizon)
        budgets = tuple(deterministic_budget(k, s, sc.scheduler.risk,
                                             sc.scheduler.buffer_bits, sc.tick,
                                             sc.scheduler.use_chebyshev)
                        for k, s in forecast)
        latency = world.current_latency_ok()
        new_states = list(world.states)
        for own_idx, quota, areas, lam in (
                (self.leader_idx, sc.game.s4_quota, sc.game.leader_areas,
                 sc.game.leader_lambda_freq),
                (self.follower_idx, 1.0 - sc.game.s4_quota, sc.game.follower_areas,
                 sc.game.follower_lambda_freq)):
            other_idx = [i for i in range(len(sc.chains)) if i not in own_idx]
            problem = ScheduleProblem(
                horizon=sc.scheduler.horizon,
                chains=tuple(sc.chains[i] for i in own_idx),
                initial_states=tuple(world.states[i] for i in own_idx),
                forecast=(),
                grid_model=sc.grid_model,
                grid_state=world.grid,
                weights=sc.weights,
                mode_costs=sc.mode_costs,
                risk=sc.scheduler.risk,
                buffer_bits=sc.scheduler.buffer_bits,
                lambda_freq=lam,
                dt=sc.tick,
                latency_ok=tuple(latency[i] for i in own_idx),
                background_chains=tuple(sc.chains[i] for i in other_idx),
                background_states=tuple(
                    tuple(world.states[i] for i in other_idx)
                    for _ in range(sc.scheduler.horizon)),
                objective_areas=areas,
                budget_rates=tuple(b * quota for b in budgets),
                node_budget=sc.scheduler.node_budget,
                degraded_lag=sc.scheduler.degraded_lag_ticks)
            decision = solve_bnb(problem)
            if decision.certificate == INFEASIBLE:
                from .world import InfeasibleRunError
                raise InfeasibleRunError(
                    f"S4 {('tso' if own_idx == self.leader_idx else 'dso')} "
                    f"scheduler infeasible at t={tick_index * sc.tick:.1f}s")
            first = decision.first_step()
            for j, i in enumerate(own_idx):
                new_states[i] = first[j]
        return tuple(new_states)


class GamePolicy:
    """S5: leader-follower coordination each epoch; first steps applied."""

    def __init__(self, scenario):
        self.scenario = scenario
        self.leader_idx, self.follower_idx = _split_indices(scenario.chains)

    def decide(self, world, tick_index):
        sc = self.scenario
        if tick_index % sc.game.stride:
            return world.states
        forecast = world.forecast_trajectory(sc.scheduler.horizon)
        budgets = tuple(deterministic_budget(k, s, sc.scheduler.risk,
                                             sc.scheduler.buffer_bits, sc.tick,
                                             sc.scheduler.use_chebyshev)
                        for k, s in forecast)
        latency = world.current_latency_ok()
        problem = BiLevelProblem(
            horizon=sc.scheduler.horizon,
            leader_chains=tuple(sc.chains[i] for i in self.leader_idx),
            follower_chains=tuple(sc.chains[i] for i in self.follower_idx),
            leader_initial=tuple(world.states[i] for i in self.leader_idx),
            follower_initial=tuple(world.states[i] for i in self.follower_idx),
            budget_rates=budgets,
            grid_model=sc.grid_model,
            grid_state=world.grid,
            weights=sc.weights,
            mode_costs=sc.mode_costs,
            dt=sc.tick,
            leader_lambda_freq=sc.game.leader_lambda_freq,
            follower_lambda_freq=sc.game.follower_lambda_freq,
            leader_areas=sc.game.leader_areas,
            follower_areas=sc.game.follower_areas,
            leader_latency_ok=tuple(latency[i] for i in self.leader_idx),
            follower_latency_ok=tuple(latency[i] for i in self.follower_idx),
            rho=sc.game.rho,
            delta=sc.game.delta,
            max_iterations=sc.game.max_iterations,
            degraded_lag=sc.scheduler.degraded_lag_ticks)
        try:
            solution = ld_cp_solve(problem)
        except InfeasibleResidualError as exc:
            from .world import InfeasibleRunError
            raise InfeasibleRunError(
                f"S5 game infeasible at t={tick_index * sc.tick:.1f}s: {exc}")
        world.game_iterations.append(solution.iterations)
        world.game_converged.append(solution.converged)
        new_states = list(world.states)
        for j, i in enumerate(self.leader_idx):
            new_states[i] = solution.leader_schedule[0][j]
        for j, i in enumerate(self.follower_idx):
            new_states[i] = solution.follower_schedule[0][j]
        return tuple(new_states)


POLICY_CLASSES = {"S1": StaticPolicy, "S2": ZonePolicy, "S3": SchedulerPolicy,
                  "S4": QuotaPolicy, "S5": GamePolicy}


def build_policy(scenario):
    return POLICY_CLASSES[scenario.policy](scenario)
