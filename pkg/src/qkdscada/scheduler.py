"""Rolling-horizon chance-constrained scheduling of chain activations.

The probabilistic key constraint Pr(consumption <= forecast - buffer) is
reformulated as a deterministic per-step budget using the Gaussian
posterior of the inventory forecast (a distribution-free Chebyshev
variant is available behind a flag). Two solvers share one evaluation
path: complete enumeration (the oracle) and depth-first branch-and-bound
with an admissible completed-prefix bound. Ties are broken toward
lexicographically larger state vectors, i.e. more security.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import chains as chains_mod
from . import grid as grid_mod
from .chains import LossWeights, ModeCostModel, step_loss
from .forecast import z_quantile
from .grid import GridModel, GridState, control_input_map, step_grid

FEAS_EPS = 1e-9


class EnumerationCapError(RuntimeError):
    """Search space exceeds the configured enumeration cap; use solve_bnb."""


@dataclass(frozen=True)
class ScheduleProblem:
    """One decision epoch: chains to schedule over an H-step window.

    ``forecast`` holds (K_hat, sigma_K) per step, in bits. Chains with
    ``latency_ok[i]`` false may only hold state 0 this epoch (their
    injected path latency exceeds their tolerance). ``background_chains``
    carry fixed activations that consume budget and actuate the grid but
    are outside both the decision space and the objective.
    """

    horizon: int
    chains: tuple
    initial_states: tuple[int, ...]
    forecast: tuple[tuple[float, float], ...]
    grid_model: GridModel
    grid_state: GridState
    weights: LossWeights
    mode_costs: ModeCostModel
    risk: float
    buffer_bits: float
    lambda_freq: float
    dt: float
    latency_ok: tuple[bool, ...] = ()
    background_chains: tuple = ()
    background_states: tuple[tuple[int, ...], ...] = ()
    objective_areas: tuple[int, ...] | None = None
    budget_rates: tuple[float, ...] | None = None  # overrides the forecast-derived budget
    use_chebyshev: bool = False
    enumeration_cap: int = 1_000_000
    node_budget: int = 2_000_000
    degraded_lag: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not 0.0 < self.risk < 0.5:
            raise ValueError("risk must lie in (0, 0.5)")
        if self.buffer_bits < 0:
            raise ValueError("buffer must be non-negative")
        if self.budget_rates is None:
            if len(self.forecast) != self.horizon:
                raise ValueError("forecast length must match horizon")
        elif len(self.budget_rates) != self.horizon:
            raise ValueError("budget_rates length must match horizon")
        if len(self.initial_states) != len(self.chains):
            raise ValueError("initial states must match chain count")
        if self.latency_ok and len(self.latency_ok) != len(self.chains):
            raise ValueError("latency mask must match chain count")
        if self.background_states and len(self.background_states) != self.horizon:
            raise ValueError("background states must cover the horizon")

    @property
    def n_chains(self) -> int:
        return len(self.chains)

    def latency_mask(self) -> tuple[bool, ...]:
        return self.latency_ok if self.latency_ok else (True,) * self.n_chains


@dataclass(frozen=True)
class ScheduleDecision:
    """Solver output: per-chain per-step states plus certificates."""

    states: tuple[tuple[int, ...], ...]  # [step][chain]
    objective: float
    margins: tuple[float, ...]           # feasibility slack per step, bits
    certificate: str                     # optimal | best-found | infeasible
    nodes_explored: int = 0

    def first_step(self) -> tuple[int, ...]:
        return self.states[0]


OPTIMAL = "optimal"
BEST_FOUND = "best-found"
INFEASIBLE = "infeasible"


def deterministic_budget(k_hat: float, sigma_k: float, risk: float,
                         buffer_bits: float, dt: float,
                         use_chebyshev: bool = False) -> float:
    """Largest consumption rate (bits/s) certified by the chance constraint.

    Gaussian model: spending at most K_hat - buffer - z sigma keeps the
    violation probability at or below eps, with z the (1 - eps)-level
    confidence-interval quantile (z = 1.96 at eps = 0.05; slightly
    conservative for the one-sided event). The Chebyshev variant swaps in
    Cantelli's sqrt(1/eps - 1), valid for any distribution with the given
    first two moments.
    """
    if sigma_k < 0:
        raise ValueError("sigma must be non-negative")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if use_chebyshev:
        quantile = math.sqrt(1.0 / risk - 1.0)
    else:
        quantile = z_quantile(1.0 - risk)
    budget_bits = k_hat - buffer_bits - quantile * sigma_k
    return max(0.0, budget_bits / dt)


@dataclass
class StepEval:
    """Per-step components of a rollout, reported with the decision."""

    loss: chains_mod.LossBreakdown
    freq_penalty: float
    consumption_rate: float
    budget_rate: float

    @property
    def cost(self) -> float:
        return self.loss.total + self.freq_penalty

    @property
    def feasible(self) -> bool:
        return self.consumption_rate <= self.budget_rate + FEAS_EPS


class _Rollout:
    """Incremental H-step evaluation shared by both solvers.

    Grid states are simulated forward under the combined (decision +
    background) inputs with no future disturbance assumed; the loss of a
    step is measured on the post-step state. ``push``/``pop`` keep the
    branch-and-bound prefix evaluation exact and cheap.
    """

    def __init__(self, problem: ScheduleProblem):
        self.p = problem
        if problem.budget_rates is not None:
            self.budget_rates = list(problem.budget_rates)
        else:
            self.budget_rates = [
                deterministic_budget(k, s, problem.risk, problem.buffer_bits, problem.dt,
                                     problem.use_chebyshev)
                for k, s in problem.forecast
            ]
        self.grid_states: list[GridState] = [problem.grid_state]
        self.prev_states: list[tuple[int, ...]] = [problem.initial_states]
        self.steps: list[StepEval] = []

    def _background(self, t: int) -> tuple[tuple, tuple[int, ...]]:
        if self.p.background_chains and self.p.background_states:
            return self.p.background_chains, self.p.background_states[t]
        return (), ()

    def _lagged(self) -> GridState:
        lag = self.p.degraded_lag
        idx = max(0, len(self.grid_states) - 1 - lag)
        return self.grid_states[idx]

    def push(self, step_states: tuple[int, ...]) -> StepEval:
        t = len(self.steps)
        bg_chains, bg_states = self._background(t)
        all_chains = tuple(self.p.chains) + tuple(bg_chains)
        all_states = tuple(step_states) + tuple(bg_states)
        consumption = chains_mod.chain_consumption(
            all_states, all_chains, self.p.mode_costs, self.p.dt)
        current = self.grid_states[-1]
        u = control_input_map(all_states, current, all_chains, self.p.grid_model,
                              lagged_state=self._lagged())
        nxt = step_grid(self.p.grid_model, current, u)
        scored = nxt
        if self.p.objective_areas is not None:
            scored = GridState(nxt.x, nxt.volt, nxt.freq[list(self.p.objective_areas)])
        loss = step_loss(step_states, self.prev_states[-1], scored,
                         self.p.weights, self.p.chains)
        freq_pen = self.p.lambda_freq * float(np.dot(scored.freq, scored.freq))
        ev = StepEval(loss, freq_pen, consumption, self.budget_rates[t])
        self.grid_states.append(nxt)
        self.prev_states.append(tuple(step_states))
        self.steps.append(ev)
        return ev

    def pop(self) -> None:
        self.grid_states.pop()
        self.prev_states.pop()
        self.steps.pop()

    @property
    def cost(self) -> float:
        return sum(s.cost for s in self.steps)

    @property
    def feasible(self) -> bool:
        return all(s.feasible for s in self.steps)

    def margins(self) -> tuple[float, ...]:
        """Feasibility slack per step, in bits."""
        return tuple((s.budget_rate - s.consumption_rate) * self.p.dt for s in self.steps)


def states_allowed(problem: ScheduleProblem) -> list[tuple[int, ...]]:
    """Admissible per-chain state sets under latency and mandatory rules."""
    allowed = []
    for chain, ok in zip(problem.chains, problem.latency_mask()):
        if not ok:
            allowed.append((grid_mod.OFF,))
        elif getattr(chain, "mandatory", False):
            allowed.append((grid_mod.DEGRADED, grid_mod.FULL))
        else:
            allowed.append((grid_mod.OFF, grid_mod.DEGRADED, grid_mod.FULL))
    return allowed


def rollout_schedule(problem: ScheduleProblem, states) -> tuple[float, bool, tuple[float, ...], list[StepEval]]:
    """Full evaluation of a candidate: objective, feasibility, margins, detail."""
    ro = _Rollout(problem)
    for t in range(problem.horizon):
        ro.push(tuple(states[t]))
    return ro.cost, ro.feasible, ro.margins(), list(ro.steps)


def evaluate_schedule(problem: ScheduleProblem, states) -> tuple[float, bool]:
    """Objective and feasibility of one candidate activation sequence."""
    cost, feasible, _, _ = rollout_schedule(problem, states)
    return cost, feasible


def tie_key(states: tuple[tuple[int, ...], ...]) -> tuple:
    # Lexicographically larger state vectors win ties (prefer security).
    return tuple(-s for step in states for s in step)


def solve_exhaustive(problem: ScheduleProblem) -> ScheduleDecision:
    """Globally optimal schedule by complete enumeration.

    Intended as the ground-truth oracle for :func:`solve_bnb`; refuses
    search spaces beyond the enumeration cap.
    """
    allowed = states_allowed(problem)
    space = 1
    for a in allowed:
        space *= len(a) ** problem.horizon
    if space > problem.enumeration_cap:
        raise EnumerationCapError(
            f"state space {space} exceeds cap {problem.enumeration_cap}; use solve_bnb")
    per_step = list(itertools.product(*allowed))
    best = None
    explored = 0
    for candidate in itertools.product(per_step, repeat=problem.horizon):
        explored += 1
        cost, feasible, margins, _ = rollout_schedule(problem, candidate)
        if not feasible:
            continue
        key = (cost, tie_key(candidate))
        if best is None or key < best[0]:
            best = (key, candidate, margins)
    if best is None:
        return ScheduleDecision((), math.inf, (), INFEASIBLE, explored)
    (_, candidate, margins) = best
    return ScheduleDecision(candidate, best[0][0], margins, OPTIMAL, explored)


def _greedy_incumbent(problem: ScheduleProblem,
                      allowed: list[tuple[int, ...]]) -> tuple[tuple, ...] | None:
    """Step-by-step myopic schedule used to seed branch-and-bound."""
    ro = _Rollout(problem)
    chosen: list[tuple[int, ...]] = []
    per_step = list(itertools.product(*allowed))
    for _ in range(problem.horizon):
        best = None
        for combo in per_step:
            ev = ro.push(combo)
            key = (ev.cost, tuple(-s for s in combo))
            if ev.feasible and (best is None or key < best[0]):
                best = (key, combo)
            ro.pop()
        if best is None:
            return None
        chosen.append(best[1])
        ro.push(best[1])
    return tuple(chosen)


def solve_bnb(problem: ScheduleProblem) -> ScheduleDecision:
    """Depth-first branch-and-bound over (step, chain) state assignments.

    The lower bound of a node is the exact cost of its completed steps —
    admissible because every loss term is non-negative. A greedy
    incumbent is built first; if the node budget runs out the incumbent
    is returned with a best-found certificate.
    """
    allowed = states_allowed(problem)
    per_step = list(itertools.product(*allowed))
    greedy = _greedy_incumbent(problem, allowed)
    incumbent: dict = {"key": None, "states": None, "margins": None}
    if greedy is not None:
        cost, feasible, margins, _ = rollout_schedule(problem, greedy)
        if feasible:
            incumbent = {"key": (cost, tie_key(greedy)), "states": greedy,
                         "margins": margins}
    # Node count = fully evaluated candidates, so pruning soundness is
    # directly comparable to the enumeration size.
    nodes = {"count": 0, "budget_hit": False}
    ro = _Rollout(problem)
    chosen: list[tuple[int, ...]] = []

    def dfs() -> None:
        if nodes["budget_hit"]:
            return
        t = len(chosen)
        if t == problem.horizon:
            if nodes["count"] >= problem.node_budget:
                nodes["budget_hit"] = True
                return
            nodes["count"] += 1
            states = tuple(chosen)
            cost, feasible, margins, _ = rollout_schedule(problem, states)
            if not feasible:
                return
            key = (cost, tie_key(states))
            if incumbent["key"] is None or key < incumbent["key"]:
                incumbent.update(key=key, states=states, margins=margins)
            return
        for combo in per_step:
            if nodes["budget_hit"]:
                return
            ev = ro.push(combo)
            prune = not ev.feasible
            if not prune and incumbent["key"] is not None:
                # Suffix cost is non-negative, so the prefix cost is a bound.
                prune = ro.cost > incumbent["key"][0]
            if not prune:
                chosen.append(combo)
                dfs()
                chosen.pop()
            ro.pop()

    dfs()
    if incumbent["states"] is None:
        return ScheduleDecision((), math.inf, (),
                                BEST_FOUND if nodes["budget_hit"] else INFEASIBLE,
                                nodes["count"])
    certificate = BEST_FOUND if nodes["budget_hit"] else OPTIMAL
    return ScheduleDecision(incumbent["states"], incumbent["key"][0],
                            incumbent["margins"], certificate, nodes["count"])
