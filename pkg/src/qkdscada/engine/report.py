"""Trace persistence, metric replay, experiment reports, and plot data.

Traces are append-only CSV with a fixed column order; floats are written
with repr so parsing them back yields the identical bit pattern, making
metric replay exact and (scenario, seed) reruns byte-identical.
"""

from __future__ import annotations

import json
import statistics
from pathlib import Path

from ..game import fairness_index
from ..grid import RunMetrics
from .world import RunTrace, TRACE_BASE_COLUMNS

_INT_PREFIXES = ("state_",)
_FLOAT_PREFIXES = ("df_", "dv_")
_INT_COLUMNS = {"K", "generated", "consumed", "n_trigger", "n_success",
                "violating", "cons_tso", "cons_dso", "req_tso", "req_dso"}
_FLOAT_COLUMNS = {"t", "dt", "K_hat", "ci_low", "ci_high", "G"}
_STR_COLUMNS = {"zone", "events"}


def _format_cell(column: str, value) -> str:
    if column in _STR_COLUMNS:
        return str(value)
    if column in _INT_COLUMNS or column.startswith(_INT_PREFIXES):
        return str(int(value))
    return repr(float(value))


def _parse_cell(column: str, text: str):
    if column in _STR_COLUMNS:
        return text
    if column in _INT_COLUMNS or column.startswith(_INT_PREFIXES):
        return int(text)
    return float(text)


def write_trace(trace: RunTrace, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="\n") as fh:
        fh.write(",".join(trace.columns) + "\n")
        for row in trace.rows:
            fh.write(",".join(_format_cell(c, v)
                              for c, v in zip(trace.columns, row)) + "\n")


def read_trace(path: str | Path) -> RunTrace:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().rstrip("\n")
        columns = header.split(",")
        rows = []
        for line in fh:
            cells = line.rstrip("\n").split(",", len(columns) - 1)
            rows.append([_parse_cell(c, v) for c, v in zip(columns, cells)])
    return RunTrace(columns=columns, rows=rows)


def replay_metrics(trace: RunTrace) -> RunMetrics:
    """Recompute the run metrics purely from a persisted trace.

    Accumulation mirrors the engine's tick-order arithmetic, so the
    result is bit-identical to the metrics reported at run time.
    """
    idx = {c: i for i, c in enumerate(trace.columns)}
    df_cols = [i for c, i in idx.items() if c.startswith("df_")]
    n_trigger = n_success = generated = consumed = 0
    df_max = 0.0
    violation_time = 0.0
    cons_t = cons_d = req_t = req_d = 0
    for row in trace.rows:
        n_trigger += row[idx["n_trigger"]]
        n_success += row[idx["n_success"]]
        generated += row[idx["generated"]]
        consumed += row[idx["consumed"]]
        peak = max((abs(row[i]) for i in df_cols), default=0.0)
        df_max = max(df_max, peak)
        if row[idx["violating"]]:
            violation_time += row[idx["dt"]]
        cons_t += row[idx["cons_tso"]]
        cons_d += row[idx["cons_dso"]]
        req_t += row[idx["req_tso"]]
        req_d += row[idx["req_dso"]]
    fairness = (fairness_index(cons_t / req_t, cons_d / req_d)
                if req_t > 0 and req_d > 0 else None)
    return RunMetrics(
        p_succ=n_success / n_trigger if n_trigger > 0 else None,
        df_max=df_max,
        key_utilization=consumed / generated if generated > 0 else None,
        trr=violation_time,
        fairness=fairness)


def aggregate(values: list[float]) -> dict:
    clean = [v for v in values if v is not None]
    if not clean:
        return {"mean": None, "std": None, "min": None, "max": None, "n": 0}
    return {
        "mean": statistics.fmean(clean),
        "std": statistics.stdev(clean) if len(clean) > 1 else 0.0,
        "min": min(clean),
        "max": max(clean),
        "n": len(clean),
    }


METRIC_KEYS = ("p_succ", "df_max", "key_utilization", "trr", "fairness")


def build_report(scenario, runs: list[dict]) -> dict:
    """One scenario's experiment block: per-run rows plus aggregates."""
    ok_runs = [r for r in runs if r.get("status", "ok") == "ok"]
    aggregates = {key: aggregate([r["metrics"][key] for r in ok_runs])
                  for key in METRIC_KEYS}
    return {
        "name": scenario.name,
        "policy": scenario.policy,
        "config_digest": scenario.config_digest(),
        "params": {
            "tick": scenario.tick,
            "duration": scenario.duration,
            "break_rate": scenario.link.break_rate,
            "max_iterations": (scenario.game.max_iterations
                               if scenario.game else None),
        },
        "runs": runs,
        "aggregates": aggregates,
    }


def write_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")


def read_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def plot_data_series(reports: list[dict], out_dir: str | Path) -> list[Path]:
    """Emit per-figure CSV series from experiment reports.

    Produces recovery-time histogram rows, fairness distribution rows,
    iteration-budget-versus-fairness points, and a fairness-variability
    grid over (break rate, iteration budget) — whatever the given reports
    can support.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    trr_rows = ["scenario,seed,trr"]
    fair_rows = ["scenario,seed,fairness"]
    iter_rows = ["scenario,max_iterations,seed,fairness,mean_ldcp_iterations"]
    heat: dict[tuple[float, int], list[float]] = {}
    for block in reports:
        for scenario_block in block.get("scenarios", [block]):
            name = scenario_block["name"]
            params = scenario_block.get("params", {})
            for run in scenario_block.get("runs", []):
                if run.get("status", "ok") != "ok":
                    continue
                m = run["metrics"]
                trr_rows.append(f"{name},{run['seed']},{m['trr']!r}")
                if m.get("fairness") is not None:
                    fair_rows.append(f"{name},{run['seed']},{m['fairness']!r}")
                    if params.get("max_iterations") is not None:
                        gi = run.get("game", {}).get("mean_iterations")
                        iter_rows.append(
                            f"{name},{params['max_iterations']},{run['seed']},"
                            f"{m['fairness']!r},{gi!r}")
                        key = (params.get("break_rate"), params["max_iterations"])
                        heat.setdefault(key, []).append(m["fairness"])

    def dump(name, rows):
        if len(rows) > 1:
            p = out_dir / name
            p.write_text("\n".join(rows) + "\n")
            written.append(p)

    dump("trr_histogram.csv", trr_rows)
    dump("fairness_violin.csv", fair_rows)
    dump("iteration_fairness.csv", iter_rows)
    heat_rows = ["break_rate,max_iterations,fairness_std,n"]
    for (rate, iters), values in sorted(heat.items()):
        std = statistics.stdev(values) if len(values) > 1 else 0.0
        heat_rows.append(f"{rate!r},{iters},{std!r},{len(values)}")
    dump("variance_heatmap.csv", heat_rows)
    return written
