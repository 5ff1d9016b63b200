"""Bilevel TSO-DSO coordination over the shared key budget.

The transmission operator leads, the distribution operator follows; both
schedule their own chains against one probabilistic key budget. The
solver alternates exact follower best responses with damped leader
updates, tracking which budget steps are tight (the active
complementarity set, with finite-difference shadow prices standing in
for multipliers on the discrete problem) and pruning pairs that lose
tightness or a positive price. Iterating stops when the leader schedule
repeats within the Hamming tolerance or the iteration budget runs out;
the returned solution is the best leader iterate visited, re-verified
against an exact follower response.

A brute-force bilevel oracle (every leader schedule against the
pessimistic follower response) provides ground truth for small games.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from . import scheduler as sched
from .chains import LossWeights, ModeCostModel, chain_consumption, step_loss
from .grid import GridModel, GridState, control_input_map, step_grid
from .scheduler import (INFEASIBLE, ScheduleDecision, ScheduleProblem,
                        rollout_schedule, solve_bnb)


class InfeasibleResidualError(RuntimeError):
    """The leader left no budget for the follower's mandatory load."""


class GameConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BiLevelProblem:
    """Shared-budget Stackelberg game over one decision window.

    ``budget_rates`` is the per-step joint consumption budget in bits/s,
    already reduced from the inventory forecast by the chance-constraint
    quantile. ``leader_areas``/``follower_areas`` select which frequency
    deviations each side's objective counts.
    """

    horizon: int
    leader_chains: tuple
    follower_chains: tuple
    leader_initial: tuple[int, ...]
    follower_initial: tuple[int, ...]
    budget_rates: tuple[float, ...]
    grid_model: GridModel
    grid_state: GridState
    weights: LossWeights
    mode_costs: ModeCostModel
    dt: float
    leader_lambda_freq: float = 0.0
    follower_lambda_freq: float = 0.0
    leader_areas: tuple[int, ...] | None = None
    follower_areas: tuple[int, ...] | None = None
    leader_latency_ok: tuple[bool, ...] = ()
    follower_latency_ok: tuple[bool, ...] = ()
    rho: float = 0.5
    delta: int = 1
    max_iterations: int = 60
    degraded_lag: int = 0
    shadow_step_bits: float = 128.0
    active_tol_bits: float = 1.0
    enumeration_cap: int = 1_000_000

    def __post_init__(self):
        if self.horizon < 1:
            raise GameConfigError("horizon must be at least 1")
        if len(self.budget_rates) != self.horizon:
            raise GameConfigError("budget_rates must cover the horizon")
        if self.rho < 0:
            raise GameConfigError("rho must be non-negative")
        if self.delta <= 0:
            raise GameConfigError("delta must be positive")
        if self.max_iterations < 1:
            raise GameConfigError("max_iterations must be at least 1")
        leader_ids = {c.id for c in self.leader_chains}
        follower_ids = {c.id for c in self.follower_chains}
        if leader_ids & follower_ids:
            raise GameConfigError("chain ownership must partition the chain set")


@dataclass(frozen=True)
class ComplementaritySet:
    """Identifiers of budget constraints tight at the current response."""

    pairs: frozenset[tuple[str, int]] = frozenset()

    def __len__(self) -> int:
        return len(self.pairs)

    def __contains__(self, item) -> bool:
        return item in self.pairs


@dataclass(frozen=True)
class GameSolution:
    leader_schedule: tuple[tuple[int, ...], ...]
    follower_schedule: tuple[tuple[int, ...], ...]
    leader_objective: float
    follower_objective: float
    iterations: int
    converged: bool
    fairness: float | None
    trace: tuple[dict, ...] = ()


def _side_problem(problem: BiLevelProblem, own: str,
                  background_states: tuple[tuple[int, ...], ...],
                  budget_rates: tuple[float, ...] | None = None) -> ScheduleProblem:
    """Scheduler view of one side, the other side fixed as background."""
    if own == "leader":
        chains, initial = problem.leader_chains, problem.leader_initial
        bg = problem.follower_chains
        lam, areas = problem.leader_lambda_freq, problem.leader_areas
        latency = problem.leader_latency_ok
    else:
        chains, initial = problem.follower_chains, problem.follower_initial
        bg = problem.leader_chains
        lam, areas = problem.follower_lambda_freq, problem.follower_areas
        latency = problem.follower_latency_ok
    return ScheduleProblem(
        horizon=problem.horizon,
        chains=chains,
        initial_states=initial,
        forecast=(),
        grid_model=problem.grid_model,
        grid_state=problem.grid_state,
        weights=problem.weights,
        mode_costs=problem.mode_costs,
        risk=0.05,  # unused: budgets are injected directly
        buffer_bits=0.0,
        lambda_freq=lam,
        dt=problem.dt,
        latency_ok=latency,
        background_chains=bg,
        background_states=background_states,
        objective_areas=areas,
        budget_rates=budget_rates if budget_rates is not None else problem.budget_rates,
        enumeration_cap=problem.enumeration_cap,
        degraded_lag=problem.degraded_lag,
    )


def follower_best_response(problem: BiLevelProblem,
                           leader_schedule: tuple[tuple[int, ...], ...]
                           ) -> tuple[ScheduleDecision, tuple[float, ...], ComplementaritySet]:
    """Exact follower response to a fixed leader schedule.

    Shadow prices of the shared budget are finite differences: the
    follower objective's improvement per extra budget bit, probed only
    on steps that are tight at the response. Those tight steps form the
    active complementarity set.
    """
    fp = _side_problem(problem, "follower", leader_schedule)
    decision = solve_bnb(fp)
    if decision.certificate == INFEASIBLE:
        raise InfeasibleResidualError(
            "no feasible follower schedule under the leader's residual budget")
    multipliers = []
    active: set[tuple[str, int]] = set()
    for t in range(problem.horizon):
        # Discrete tightness: the constraint binds when extra budget would
        # buy a better response, regardless of the integer-valued slack.
        relaxed_rates = list(problem.budget_rates)
        relaxed_rates[t] += problem.shadow_step_bits / problem.dt
        relaxed = solve_bnb(_side_problem(problem, "follower", leader_schedule,
                                          tuple(relaxed_rates)))
        gain = max(0.0, decision.objective - relaxed.objective)
        multipliers.append(gain / problem.shadow_step_bits)
        if gain > 0.0 or decision.margins[t] <= problem.active_tol_bits:
            active.add(("budget", t))
    return decision, tuple(multipliers), ComplementaritySet(frozenset(active))


def prune_active_set(active_set: ComplementaritySet, follower_response: ScheduleDecision,
                     multipliers: tuple[float, ...],
                     tol_bits: float = 1.0) -> ComplementaritySet:
    """Drop pairs whose constraint regained slack or whose price is not
    positive; the result is always a subset of the input."""
    kept = set()
    for kind, t in active_set.pairs:
        if kind != "budget" or t >= len(follower_response.margins):
            continue
        if follower_response.margins[t] > tol_bits:
            continue
        if t < len(multipliers) and multipliers[t] <= 0.0:
            continue
        kept.add((kind, t))
    return ComplementaritySet(frozenset(kept))


class _AnticipatingEvaluator:
    """Scores leader candidates under the active-set-implied follower model.

    On steps whose budget constraint is active the follower is pinned to
    the budget surface: it greedily refills whatever the leader leaves
    (the discrete stand-in for "multiplier positive, constraint tight").
    On inactive steps the response is locally insensitive to the leader's
    claim and is held at its observed values — unless the candidate makes
    the step jointly infeasible, which flips it to the active treatment.
    """

    def __init__(self, problem: BiLevelProblem, active_set: ComplementaritySet,
                 follower_response: ScheduleDecision):
        self.p = problem
        self.active = active_set
        self.follower_states = follower_response.states
        fp = _side_problem(problem, "follower",
                           tuple(tuple(0 for _ in problem.leader_chains)
                                 for _ in range(problem.horizon)))
        self.follower_combos = list(itertools.product(*sched.states_allowed(fp)))
        self.all_chains = tuple(problem.leader_chains) + tuple(problem.follower_chains)

    def _areas(self, state: GridState, areas) -> GridState:
        if areas is None:
            return state
        return GridState(state.x, state.volt, state.freq[list(areas)])

    def _fill_step(self, residual_rate: float, grid_now: GridState,
                   fol_prev: tuple[int, ...]):
        """Follower combo absorbing the residual budget at least cost to it."""
        best = None
        for combo in self.follower_combos:
            used = chain_consumption(combo, self.p.follower_chains,
                                     self.p.mode_costs, self.p.dt)
            if used > residual_rate + 1e-9:
                continue
            u = control_input_map(combo, grid_now, self.p.follower_chains,
                                  self.p.grid_model)
            nxt = step_grid(self.p.grid_model, grid_now, u)
            scored = self._areas(nxt, self.p.follower_areas)
            loss = step_loss(combo, fol_prev, scored, self.p.weights,
                             self.p.follower_chains)
            freq_pen = self.p.follower_lambda_freq * float(
                scored.freq @ scored.freq)
            key = (loss.total + freq_pen, tuple(-s for s in combo))
            if best is None or key < best[0]:
                best = (key, combo)
        return None if best is None else best[1]

    def evaluate(self, candidate: tuple[tuple[int, ...], ...]) -> float | None:
        """Anticipated leader cost of one candidate; None if uninducible."""
        grid_now = self.p.grid_state
        lead_prev = self.p.leader_initial
        fol_prev = self.p.follower_initial
        total = 0.0
        for t in range(self.p.horizon):
            lead_states = candidate[t]
            lead_used = chain_consumption(lead_states, self.p.leader_chains,
                                          self.p.mode_costs, self.p.dt)
            residual = self.p.budget_rates[t] - lead_used
            if residual < -1e-9:
                return None
            fol_states = self.follower_states[t]
            fol_used = chain_consumption(fol_states, self.p.follower_chains,
                                         self.p.mode_costs, self.p.dt)
            if ("budget", t) in self.active or fol_used > residual + 1e-9:
                filled = self._fill_step(residual, grid_now, fol_prev)
                if filled is None:
                    return None
                fol_states = filled
            joint = tuple(lead_states) + tuple(fol_states)
            u = control_input_map(joint, grid_now, self.all_chains, self.p.grid_model)
            grid_now = step_grid(self.p.grid_model, grid_now, u)
            scored = self._areas(grid_now, self.p.leader_areas)
            loss = step_loss(lead_states, lead_prev, scored, self.p.weights,
                             self.p.leader_chains)
            total += loss.total + self.p.leader_lambda_freq * float(
                scored.freq @ scored.freq)
            lead_prev, fol_prev = lead_states, fol_states
        return total


def leader_update(problem: BiLevelProblem,
                  leader_prev: tuple[tuple[int, ...], ...],
                  active_set: ComplementaritySet,
                  follower_response: ScheduleDecision) -> tuple[tuple[int, ...], ...]:
    """One damped leader step under the active-set-implied follower model.

    The leader's discrete problem is solved with the follower pinned to
    the structure its complementarity pattern implies (see
    :class:`_AnticipatingEvaluator`), the objective augmented by the
    discrete proximal term rho x (state changes from the previous leader
    iterate).
    """
    lp = _side_problem(problem, "leader", follower_response.states)
    evaluator = _AnticipatingEvaluator(problem, active_set, follower_response)
    best_key = None
    best = None
    per_step = list(itertools.product(*sched.states_allowed(lp)))
    for candidate in itertools.product(per_step, repeat=problem.horizon):
        cost = evaluator.evaluate(candidate)
        if cost is None:
            continue
        moved = _hamming(candidate, leader_prev)
        total = cost + problem.rho * moved
        key = (total, sched.tie_key(candidate))
        if best_key is None or key < best_key:
            best_key, best = key, candidate
    if best is None:
        # Nothing inducible: idle and let the follower have the budget.
        return tuple(tuple(0 for _ in problem.leader_chains)
                     for _ in range(problem.horizon))
    return best


def _hamming(a: tuple[tuple[int, ...], ...], b: tuple[tuple[int, ...], ...]) -> int:
    return sum(1 for sa, sb in zip(a, b) for x, y in zip(sa, sb) if x != y)


def _planned_fairness(problem: BiLevelProblem,
                      leader_schedule, follower_schedule) -> float | None:
    """Jain index over demand-normalized planned allocations."""
    def side_bits(chains, schedule):
        alloc = 0.0
        req = 0.0
        for states in schedule:
            alloc += chain_consumption(states, chains, problem.mode_costs, problem.dt) * problem.dt
            req += chain_consumption((2,) * len(chains), chains, problem.mode_costs,
                                     problem.dt) * problem.dt
        return alloc, req

    la, lr = side_bits(problem.leader_chains, leader_schedule)
    fa, fr = side_bits(problem.follower_chains, follower_schedule)
    if lr <= 0 or fr <= 0:
        return None
    return fairness_index(la / lr, fa / fr)


def ld_cp_solve(problem: BiLevelProblem) -> GameSolution:
    """Level decomposition with complementarity pruning.

    Starts from the leader's single-agent optimum over the full budget
    (the aggressive claim), alternates follower response / leader update,
    prunes the active set, and stops once the leader iterate's Hamming
    step drops below delta or the iteration budget is hit. Returns the
    best (leader, exact follower response) pair visited so the iteration
    budget trades compute for solution quality monotonically.
    """
    idle_follower = tuple(tuple(0 for _ in problem.follower_chains)
                          for _ in range(problem.horizon))
    lp0 = _side_problem(problem, "leader", idle_follower)
    leader = solve_bnb(lp0).states
    if not leader:
        leader = tuple(tuple(0 for _ in problem.leader_chains)
                       for _ in range(problem.horizon))
    active = ComplementaritySet()
    best = None  # (leader_obj, leader, follower_decision, follower_mult)
    trace = []
    iterations = 0
    converged = False
    for iterations in range(1, problem.max_iterations + 1):
        response, multipliers, active_now = follower_best_response(problem, leader)
        leader_obj, follower_obj, feasible = evaluate_joint(problem, leader, response.states)
        if feasible and (best is None or leader_obj < best[0]):
            best = (leader_obj, leader, response, follower_obj)
        active = ComplementaritySet(active.pairs | active_now.pairs)
        new_leader = leader_update(problem, leader, active, response)
        active = prune_active_set(active, response, multipliers, problem.active_tol_bits)
        step = _hamming(new_leader, leader)
        trace.append({
            "iteration": iterations,
            "leader_objective": leader_obj,
            "active_set_size": len(active),
            "hamming_step": step,
        })
        if step < problem.delta:
            converged = True
            break
        leader = new_leader
    if best is None:
        raise InfeasibleResidualError("no jointly feasible iterate found")
    leader_obj, leader, response, follower_obj = best
    # Re-verify: the stored follower schedule must still be a best response.
    verify, _, _ = follower_best_response(problem, leader)
    if not math.isclose(verify.objective, response.objective, rel_tol=0, abs_tol=1e-9):
        response = verify
        leader_obj, follower_obj, _ = evaluate_joint(problem, leader, response.states)
    fairness = _planned_fairness(problem, leader, response.states)
    return GameSolution(leader, response.states, leader_obj, follower_obj,
                        iterations, converged, fairness, tuple(trace))


def evaluate_joint(problem: BiLevelProblem, leader_schedule, follower_schedule
                   ) -> tuple[float, float, bool]:
    """Both sides' objectives for one joint schedule, plus joint feasibility."""
    lp = _side_problem(problem, "leader", tuple(follower_schedule))
    leader_obj, leader_feasible, _, _ = rollout_schedule(lp, leader_schedule)
    fp = _side_problem(problem, "follower", tuple(leader_schedule))
    follower_obj, follower_feasible, _, _ = rollout_schedule(fp, follower_schedule)
    return leader_obj, follower_obj, leader_feasible and follower_feasible


def bilevel_oracle(problem: BiLevelProblem) -> GameSolution:
    """Ground-truth Stackelberg solution by full enumeration.

    Every leader schedule is scored against the follower's exact best
    response; follower ties break pessimistically (worst leader
    objective, then lexicographically smallest schedule) so the oracle
    output is unique.
    """
    n_l, n_f = len(problem.leader_chains), len(problem.follower_chains)
    space = 3 ** (n_l * problem.horizon)
    if space > problem.enumeration_cap:
        raise sched.EnumerationCapError(
            f"leader space {space} exceeds cap {problem.enumeration_cap}")
    leader_allowed = sched.states_allowed(_side_problem(
        problem, "leader", tuple(tuple(0 for _ in range(n_f))
                                 for _ in range(problem.horizon))))
    follower_allowed = sched.states_allowed(_side_problem(
        problem, "follower", tuple(tuple(0 for _ in range(n_l))
                                   for _ in range(problem.horizon))))
    leader_steps = list(itertools.product(*leader_allowed))
    follower_steps = list(itertools.product(*follower_allowed))
    best = None
    for xt in itertools.product(leader_steps, repeat=problem.horizon):
        # Exact follower response set under this leader schedule.
        responses = []
        for xd in itertools.product(follower_steps, repeat=problem.horizon):
            leader_obj, follower_obj, feasible = evaluate_joint(problem, xt, xd)
            if feasible:
                responses.append((follower_obj, leader_obj, xd))
        if not responses:
            continue
        f_best = min(r[0] for r in responses)
        ties = [r for r in responses if r[0] <= f_best + 1e-12]
        # Pessimistic: among follower-optimal responses take the worst for
        # the leader, then the lexicographically smallest schedule.
        ties.sort(key=lambda r: (-r[1], r[2]))
        follower_obj, leader_obj, xd = ties[0][0], ties[0][1], ties[0][2]
        key = (leader_obj, sched.tie_key(xt))
        if best is None or key < best[0]:
            best = (key, xt, xd, leader_obj, follower_obj)
    if best is None:
        raise InfeasibleResidualError("no jointly feasible schedule exists")
    _, xt, xd, leader_obj, follower_obj = best
    fairness = _planned_fairness(problem, xt, xd)
    return GameSolution(xt, xd, leader_obj, follower_obj, 0, True, fairness)


def fairness_index(tso_share: float, dso_share: float) -> float:
    """Jain fairness of two demand-normalized allocations; 1 is perfectly
    even, 0.5 is one side taking everything."""
    if tso_share < 0 or dso_share < 0:
        raise GameConfigError("allocations must be non-negative")
    if tso_share == 0 and dso_share == 0:
        raise GameConfigError("fairness undefined when both allocations are zero")
    return (tso_share + dso_share) ** 2 / (2.0 * (tso_share ** 2 + dso_share ** 2))
