"""Replay one scenario under several circuit policies and compare what gets traced."""

from __future__ import annotations

import asyncio
from concurrent.futures import ProcessPoolExecutor
from typing import Optional, Sequence

import pandas as pd
import structlog

from src.analysis.metrics import RunMetrics, score_run
from src.shell.config import ScenarioConfig
from src.shell.contract import PolicyKind, TraceMethod
from src.simulation.runner import run_scenario
from src.utils.logging import worker_logging

log = structlog.get_logger()

CELL_COLUMNS = [
    "total_streams", "traced_streams", "traced_bt_streams", "additional_traced_streams",
    "same_circuit_additional", "web_same_circuit", "traced_fraction_all", "multiplier",
    "traced_http_fraction", "recall_all",
]


def cell_record(policy: str, seed: int, metrics: RunMetrics) -> dict:
    """Flat scalar view of one run, one row of the sweep table."""
    return {
        "policy": policy,
        "seed": seed,
        "total_streams": metrics.total_streams,
        "traced_streams": metrics.traced_streams,
        "traced_bt_streams": metrics.traced_bt_streams,
        "additional_traced_streams": metrics.additional_traced_streams,
        "same_circuit_additional": metrics.additional_by_method.get(TraceMethod.LINK_SAME_CIRCUIT.value, 0),
        "web_same_circuit": metrics.web_same_circuit,
        "traced_fraction_all": metrics.traced_fraction_all,
        "multiplier": metrics.multiplier,
        "traced_http_fraction": metrics.traced_http_fraction,
        "recall_all": metrics.recall_all,
    }


def run_cell(config: ScenarioConfig, policy: str, seed: int) -> dict:
    """Run and score one (policy, seed) cell. Top-level so worker processes can pickle it."""
    output = run_scenario(config.with_changes(**{"tor.policy": policy}), seed)
    metrics = score_run(output.observations, output.trace_log, output.truth)
    return cell_record(policy, seed, metrics)


def summarize_cells(cells: Sequence[dict], policies: Sequence[str]) -> pd.DataFrame:
    """Mean of every metric per policy, rows in the order the policies were given."""
    df = pd.DataFrame(list(cells), columns=["policy", "seed"] + CELL_COLUMNS)
    numeric = df[CELL_COLUMNS].apply(pd.to_numeric, errors="coerce")
    means = numeric.groupby(df["policy"]).mean()
    means["runs"] = df.groupby("policy").size()
    means = means.reindex(list(policies))
    means.index.name = "policy"
    return means.reset_index()


def _check(policies: Sequence[str], seeds: Sequence[int]) -> None:
    if not seeds:
        raise ValueError("compare_defenses needs at least one seed")
    if not policies:
        raise ValueError("compare_defenses needs at least one policy")
    known = {p.value for p in PolicyKind}
    bad = [p for p in policies if p not in known]
    if bad:
        raise ValueError(f"unknown policies: {bad}")


def compare_defenses(
    config: ScenarioConfig,
    policies: Sequence[str],
    seeds: Sequence[int],
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """(per-policy means, per-cell rows), every cell run in this process."""
    _check(policies, seeds)
    cells = [run_cell(config, p, s) for p in policies for s in seeds]
    log.info("defenses.compared", policies=list(policies), seeds=len(seeds))
    return summarize_cells(cells, policies), pd.DataFrame(cells)


async def compare_defenses_parallel(
    config: ScenarioConfig,
    policies: Sequence[str],
    seeds: Sequence[int],
    workers: Optional[int] = None,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Same table as ``compare_defenses``; cells spread over worker processes."""
    _check(policies, seeds)
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=workers, initializer=worker_logging) as pool:
        futures = [loop.run_in_executor(pool, run_cell, config, p, s) for p in policies for s in seeds]
        cells = await asyncio.gather(*futures)
    log.info("defenses.compared", policies=list(policies), seeds=len(seeds), workers=workers)
    return summarize_cells(cells, policies), pd.DataFrame(cells)
