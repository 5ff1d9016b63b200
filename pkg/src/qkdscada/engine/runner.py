"""Run orchestration: single seeded runs and Monte Carlo experiments."""

from __future__ import annotations

import concurrent.futures
import statistics
from pathlib import Path

from .report import build_report, replay_metrics, write_report, write_trace
from .scenario import Scenario
from .world import InfeasibleRunError, World


def run_scenario(scenario: Scenario, seed: int, out_dir: str | Path | None = None):
    """Execute one run; optionally persist trace and per-run report."""
    world = World(scenario, seed)
    trace, metrics = world.run()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_trace(trace, out_dir / f"{scenario.name}_seed{seed}_trace.csv")
        write_report({"name": scenario.name, "seed": seed,
                      "config_digest": scenario.config_digest(),
                      "metrics": metrics.as_dict(),
                      "game": _game_stats(world)},
                     out_dir / f"{scenario.name}_seed{seed}_report.json")
    return trace, metrics, world


def _game_stats(world: World) -> dict:
    if not world.game_iterations:
        return {}
    return {
        "mean_iterations": statistics.fmean(world.game_iterations),
        "max_iterations_used": max(world.game_iterations),
        "converged_fraction": (sum(world.game_converged)
                               / len(world.game_converged)),
    }


def _run_one(scenario: Scenario, seed: int) -> dict:
    try:
        world = World(scenario, seed)
        _, metrics = world.run()
        return {"seed": seed, "status": "ok", "metrics": metrics.as_dict(),
                "game": _game_stats(world)}
    except InfeasibleRunError as exc:
        return {"seed": seed, "status": "infeasible", "error": str(exc)}


def run_experiment(scenarios: list[Scenario], n_runs: int,
                   workers: int = 1) -> dict:
    """Seeded Monte Carlo over one or more scenarios.

    Runs are independent and may execute in parallel; the report is
    reduced in seed order so worker scheduling cannot change the output.
    Per-run failures are recorded, not fatal.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    blocks = []
    for scenario in scenarios:
        seeds = list(scenario.seeds)[:n_runs]
        if len(seeds) < n_runs:
            start = (seeds[-1] + 1) if seeds else 0
            seeds += list(range(start, start + n_runs - len(seeds)))
        if workers > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
                futures = {pool.submit(_run_one, scenario, seed): seed
                           for seed in seeds}
                runs = [f.result() for f in futures]
        else:
            runs = [_run_one(scenario, seed) for seed in seeds]
        runs.sort(key=lambda r: r["seed"])
        blocks.append(build_report(scenario, runs))
    return {"schema_version": 1, "scenarios": blocks}
