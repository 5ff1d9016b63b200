"""Stackelberg coordination: best responses, pruning, the solver loop,
oracle closeness, and the fairness index."""

import numpy as np
import pytest

from qkdscada.chains import ControlChain, LossWeights, ModeCostModel
from qkdscada.game import (BiLevelProblem, ComplementaritySet,
                           GameConfigError, InfeasibleResidualError,
                           bilevel_oracle, evaluate_joint, fairness_index,
                           follower_best_response, ld_cp_solve, leader_update,
                           prune_active_set)
from qkdscada.grid import GridModel, GridState


def mk_chain(cid, owner, message_length=256, message_rate=2.0, gain=0.5,
             reconfig_cost=0.3, channel=0, area=0, mandatory=False):
    return ControlChain(id=cid, path=("cc", "sw", "dev"), demand=1000.0,
                        latency_tolerance=0.5, priority_weight=1.0,
                        reconfig_cost=reconfig_cost, gain=gain,
                        message_length=message_length, message_rate=message_rate,
                        owner=owner, channel=channel, area=area, mandatory=mandatory)


def coupled_model(coupling=0.08, diag=0.87):
    return GridModel(a=np.array([[diag, coupling], [coupling, diag]]),
                     b=np.eye(2), freq_indices=(0, 1))


def mk_game(budget=2000.0, horizon=2, coupling=0.08, f0=(0.0, 0.0), rho=0.2,
            max_iterations=40, leader_chains=None, follower_chains=None,
            xi_drop=1.0, xi_deg=0.3, leader_lambda=5.0, follower_lambda=5.0,
            **overrides):
    model = coupled_model(coupling)
    leader = leader_chains or (mk_chain("t0", "tso", channel=0, area=0),
                               mk_chain("t1", "tso", channel=0, area=0, gain=0.0))
    follower = follower_chains or (mk_chain("d0", "dso", channel=1, area=1),
                                   mk_chain("d1", "dso", channel=1, area=1, gain=0.0))
    x0 = np.asarray(f0, dtype=float)
    state = GridState(x0, np.zeros(0), x0.copy())
    kw = dict(horizon=horizon, leader_chains=leader, follower_chains=follower,
              leader_initial=(0,) * len(leader), follower_initial=(0,) * len(follower),
              budget_rates=(budget,) * horizon, grid_model=model, grid_state=state,
              weights=LossWeights(w_f=1.0, w_v=1.0, xi_drop=xi_drop, xi_deg=xi_deg),
              mode_costs=ModeCostModel(), dt=0.1,
              leader_lambda_freq=leader_lambda, follower_lambda_freq=follower_lambda,
              leader_areas=(0,), follower_areas=(1,), rho=rho,
              max_iterations=max_iterations)
    kw.update(overrides)
    return BiLevelProblem(**kw)


class TestFollowerBestResponse:
    def test_decoupled_equals_single_agent(self):
        prob = mk_game(budget=1e6)
        idle = tuple((0, 0) for _ in range(prob.horizon))
        full_claim = tuple((2, 2) for _ in range(prob.horizon))
        r_idle, _, _ = follower_best_response(prob, idle)
        r_claim, _, _ = follower_best_response(prob, full_claim)
        # An abundant budget decouples the sides entirely.
        assert r_idle.states == r_claim.states

    def test_slack_budget_empty_active_set(self):
        prob = mk_game(budget=1e6)
        idle = tuple((0, 0) for _ in range(prob.horizon))
        _, multipliers, active = follower_best_response(prob, idle)
        assert len(active) == 0
        assert all(m == 0.0 for m in multipliers)

    def test_tight_budget_positive_shadow_price(self):
        # Budget permits degraded-only operation; an extra budget unit
        # would relieve a binding penalty, so the price is non-negative
        # and the constraint is active.
        follower = (mk_chain("d0", "dso", channel=1, area=1),)
        prob = mk_game(budget=300.0, follower_chains=follower, xi_drop=3.0,
                       xi_deg=1.0, f0=(0.0, 0.3))
        idle = tuple((0, 0) for _ in range(prob.horizon))
        resp, multipliers, active = follower_best_response(prob, idle)
        assert len(active) > 0
        assert all(m >= 0.0 for m in multipliers)

    def test_mandatory_chain_without_budget_raises(self):
        follower = (mk_chain("d0", "dso", mandatory=True),)
        prob = mk_game(budget=800.0, follower_chains=follower)
        greedy_leader = tuple((2, 2) for _ in range(prob.horizon))  # 1024+512 > 800
        with pytest.raises(InfeasibleResidualError):
            follower_best_response(prob, greedy_leader)


class TestPruning:
    def test_all_slack_prunes_everything(self):
        prob = mk_game(budget=1e6)
        idle = tuple((0, 0) for _ in range(prob.horizon))
        resp, multipliers, active = follower_best_response(prob, idle)
        seeded = ComplementaritySet(frozenset({("budget", 0), ("budget", 1)}))
        pruned = prune_active_set(seeded, resp, multipliers)
        assert len(pruned) == 0

    def test_subset_and_idempotent(self):
        prob = mk_game(budget=700.0)
        idle = tuple((0, 0) for _ in range(prob.horizon))
        resp, multipliers, active = follower_best_response(prob, idle)
        once = prune_active_set(active, resp, multipliers)
        twice = prune_active_set(once, resp, multipliers)
        assert once.pairs <= active.pairs
        assert twice.pairs == once.pairs


class TestLeaderUpdate:
    def test_huge_rho_freezes_leader(self):
        prob = mk_game(budget=2500.0, rho=1e9)
        idle_follower = tuple((0, 0) for _ in range(prob.horizon))
        prev = tuple((1, 1) for _ in range(prob.horizon))
        resp, _, active = follower_best_response(prob, prev)
        out = leader_update(prob, prev, active, resp)
        assert out == prev

    def test_rho_zero_single_agent_reduction(self):
        # Idle follower and slack budget: the update must match the
        # leader's own exhaustive optimum.
        from qkdscada.scheduler import solve_exhaustive
        from qkdscada.game import _side_problem
        prob = mk_game(budget=1e6, rho=0.0, f0=(0.2, 0.0))
        idle = tuple((0, 0) for _ in range(prob.horizon))
        resp, _, active = follower_best_response(prob, idle)
        # Force the follower to stay idle so the reduction is exact.
        idle_resp = type(resp)(states=idle, objective=0.0,
                               margins=resp.margins, certificate=resp.certificate,
                               nodes_explored=0)
        out = leader_update(prob, idle, ComplementaritySet(), idle_resp)
        solo = solve_exhaustive(_side_problem(prob, "leader", idle))
        assert out == solo.states


class TestLdCp:
    def test_decoupled_converges_fast(self):
        prob = mk_game(budget=1e6, rho=0.0)
        sol = ld_cp_solve(prob)
        assert sol.converged
        assert sol.iterations <= 2
        oracle = bilevel_oracle(prob)
        assert sol.leader_objective == pytest.approx(oracle.leader_objective, abs=1e-9)

    def test_iteration_cap_respected(self):
        prob = mk_game(budget=900.0, max_iterations=3)
        sol = ld_cp_solve(prob)
        assert sol.iterations <= 3

    def test_yielding_discovered(self):
        # Hand-built instance where hoarding the budget is irrational:
        # the leader's bulk chain has no grid effect and a tiny
        # degradation penalty, while the follower's regulation chain
        # damps a hot area that leaks into the leader's area.
        leader = (mk_chain("pmu", "tso", message_length=512, message_rate=2.0,
                           gain=0.0, channel=0, area=0, reconfig_cost=0.0),)
        follower = (mk_chain("agc_d", "dso", message_length=256, message_rate=2.0,
                             gain=0.8, channel=1, area=1, reconfig_cost=0.0),)
        prob = mk_game(budget=1100.0, coupling=0.12, f0=(0.1, 0.4),
                       leader_chains=leader, follower_chains=follower,
                       xi_drop=1.0, xi_deg=0.05, leader_lambda=10.0,
                       follower_lambda=10.0, rho=0.0, horizon=2)
        oracle = bilevel_oracle(prob)
        # While the follower's area is hot the leader must hold its bulk
        # chain back so the regulation chain can run.
        assert oracle.leader_schedule[0][0] < 2
        assert oracle.follower_schedule[0][0] == 2
        sol = ld_cp_solve(prob)
        assert sol.leader_objective == pytest.approx(oracle.leader_objective, abs=1e-9)
        assert sol.leader_schedule == oracle.leader_schedule

    def test_joint_feasibility_and_best_response_certificate(self):
        prob = mk_game(budget=1400.0, f0=(0.2, -0.1))
        sol = ld_cp_solve(prob)
        from qkdscada.chains import chain_consumption
        for t in range(prob.horizon):
            used = (chain_consumption(sol.leader_schedule[t], prob.leader_chains,
                                      prob.mode_costs, prob.dt)
                    + chain_consumption(sol.follower_schedule[t], prob.follower_chains,
                                        prob.mode_costs, prob.dt))
            assert used <= prob.budget_rates[t] + 1e-9
        verify, _, _ = follower_best_response(prob, sol.leader_schedule)
        _, follower_obj, _ = evaluate_joint(prob, sol.leader_schedule, verify.states)
        assert follower_obj == pytest.approx(sol.follower_objective, abs=1e-9)

    def test_deterministic(self):
        prob = mk_game(budget=1100.0, f0=(0.15, 0.25))
        a, b = ld_cp_solve(prob), ld_cp_solve(prob)
        assert a.leader_schedule == b.leader_schedule
        assert a.follower_schedule == b.follower_schedule
        assert a.iterations == b.iterations


def random_game(rng):
    horizon = int(rng.integers(1, 3))
    coupling = float(rng.uniform(0.02, 0.12))
    leader = tuple(
        mk_chain(f"t{i}", "tso", message_length=int(rng.integers(2, 9)) * 64,
                 message_rate=float(rng.uniform(0.5, 3.0)),
                 gain=float(rng.uniform(0.0, 0.8)),
                 reconfig_cost=float(rng.uniform(0.0, 0.8)), channel=0, area=0)
        for i in range(2))
    follower = tuple(
        mk_chain(f"d{i}", "dso", message_length=int(rng.integers(2, 9)) * 64,
                 message_rate=float(rng.uniform(0.5, 3.0)),
                 gain=float(rng.uniform(0.0, 0.8)),
                 reconfig_cost=float(rng.uniform(0.0, 0.8)), channel=1, area=1)
        for i in range(2))
    demand = sum(c.message_rate * c.message_length for c in leader + follower)
    return mk_game(budget=float(rng.uniform(0.15, 1.1)) * demand,
                   horizon=horizon, coupling=coupling,
                   f0=tuple(rng.uniform(-0.4, 0.4, size=2)),
                   leader_chains=leader, follower_chains=follower,
                   xi_drop=float(rng.uniform(0.3, 2.5)),
                   xi_deg=float(rng.uniform(0.1, 0.9)),
                   leader_lambda=float(rng.uniform(0.0, 15.0)),
                   follower_lambda=float(rng.uniform(0.0, 15.0)),
                   rho=0.2)


class TestOracleCloseness:
    def test_sweep(self):
        # Acceptance: exact leader-objective agreement on at least 90% of
        # 100 random tiny games, within 5% relative on the rest.
        rng = np.random.default_rng(20240617)
        exact = 0
        total = 0
        while total < 100:
            prob = random_game(rng)
            try:
                oracle = bilevel_oracle(prob)
                sol = ld_cp_solve(prob)
            except InfeasibleResidualError:
                continue
            total += 1
            diff = abs(sol.leader_objective - oracle.leader_objective)
            if diff <= 1e-9:
                exact += 1
            else:
                rel = diff / max(1e-12, abs(oracle.leader_objective))
                assert rel <= 0.05, f"instance {total}: relative gap {rel:.4f}"
        assert exact >= 90

    def test_oracle_leader_optimality(self):
        rng = np.random.default_rng(5)
        prob = random_game(rng)
        oracle = bilevel_oracle(prob)
        # Any alternative leader schedule with its best response cannot
        # beat the oracle's leader objective.
        alt = tuple(tuple(0 for _ in prob.leader_chains) for _ in range(prob.horizon))
        resp, _, _ = follower_best_response(prob, alt)
        alt_obj, _, _ = evaluate_joint(prob, alt, resp.states)
        assert oracle.leader_objective <= alt_obj + 1e-9


class TestFairnessIndex:
    def test_equal_shares(self):
        assert fairness_index(0.7, 0.7) == pytest.approx(1.0)

    def test_one_sided(self):
        assert fairness_index(1.0, 0.0) == pytest.approx(0.5)
        assert fairness_index(0.0, 1.0) == pytest.approx(0.5)

    def test_hand_arithmetic(self):
        assert fairness_index(0.9, 0.6) == pytest.approx(0.9615, abs=1e-4)

    def test_symmetry(self):
        assert fairness_index(0.3, 0.8) == fairness_index(0.8, 0.3)

    def test_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            a, b = rng.uniform(0, 1, size=2)
            if a == 0 and b == 0:
                continue
            assert 0.5 <= fairness_index(a, b) <= 1.0

    def test_undefined(self):
        with pytest.raises(GameConfigError):
            fairness_index(0.0, 0.0)
        with pytest.raises(GameConfigError):
            fairness_index(-0.1, 0.5)
