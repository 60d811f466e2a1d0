"""Reports: per-run metric families written as JSON lines and CSV.

Every family is a flat table of aggregates: counts, shares, country codes,
AS numbers. Nothing that names a host or an address is ever written here.
File names are ``<scenario>_<seed>_<family>.jsonl`` and ``.csv``.
"""

from __future__ import annotations

import json
import math
import re
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import pandas as pd
import structlog

from src.analysis.metrics import RunMetrics, propagate, score_run
from src.analysis.profiling import (
    EmptyInput,
    ecosystem_breakdown,
    profile_hosts,
    rank_stability,
    tag_profile,
    traced_downloads,
    traced_hosts,
    traced_snapshots,
    web_profile,
)
from src.shell.config import ScenarioConfig
from src.shell.contract import IoFailure, seconds
from src.simulation.runner import RunOutput

log = structlog.get_logger()

IPV4 = re.compile(r"(?<![\d.])(\d{1,3}(?:\.\d{1,3}){3})(?![\d.])")


def metrics_table(metrics: RunMetrics) -> pd.DataFrame:
    row = {k: v for k, v in metrics.to_dict().items() if not isinstance(v, dict)}
    for group in ("trace_counts", "precision", "additional_by_method",
                  "hijack_targeted_by_behavior", "hijack_traced_by_behavior"):
        for key, value in getattr(metrics, group).items():
            row[f"{group}.{key}"] = value
    return pd.DataFrame([row])


def build_report(output: RunOutput, config: ScenarioConfig,
                 metrics: Optional[RunMetrics] = None) -> dict[str, pd.DataFrame]:
    """All metric families for one run, keyed by family name."""
    metrics = metrics or score_run(output.observations, output.trace_log, output.truth)
    prop = propagate(output.observations, output.trace_log)
    top_k = config.analysis.top_k
    baseline = config.population.baseline
    families: dict[str, pd.DataFrame] = {"metrics": metrics_table(metrics)}

    families["additional_by_port"] = pd.DataFrame(
        [{"dst_port": port, "streams": n} for port, n in metrics.additional_by_port.items()],
        columns=["dst_port", "streams"],
    )

    hosts = traced_hosts(prop, output.registry)
    for by in ("country", "asn"):
        rows = [r.to_dict() for r in profile_hosts(hosts, baseline, by, top_k)]
        families[f"over_{by}"] = pd.DataFrame(
            rows, columns=["key", "count_on_tor", "share_on_tor", "share_baseline", "over"])

    snapshots = traced_snapshots(output.trace_log.traces, prop, output.registry,
                                 seconds(config.snapshot_interval_s), output.duration)
    families["snapshots_country"] = snapshots.reset_index()
    try:
        families["rank_stability_country"] = rank_stability(snapshots).reset_index()
    except EmptyInput:
        families["rank_stability_country"] = pd.DataFrame(columns=["tick"])

    try:
        eco = ecosystem_breakdown(traced_downloads(output.observations, prop), output.catalog)
        families["ecosystem"] = pd.DataFrame([eco.to_dict()])
    except EmptyInput:
        families["ecosystem"] = pd.DataFrame(columns=["total", "Public", "Private", "Unknown"])

    families["tags_by_country"] = tag_profile(output.observations, prop, output.catalog,
                                              output.registry).reset_index()
    web = web_profile(output.observations, prop, output.sites, output.registry)
    families["web_categories"] = web["shares"].rename_axis("category").reset_index()
    families["web_by_country"] = web["by_country"].reset_index()

    families["counters"] = pd.DataFrame(
        [{"counter": k, "value": v} for k, v in output.counters.items()]
        + [{"counter": "dht_messages_from_exits", "value": output.dht_messages_from_exits}],
        columns=["counter", "value"],
    )
    return families


def _clean(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return None if math.isnan(value) else value
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_family(df: pd.DataFrame, directory: Path, stem: str) -> list[Path]:
    jsonl, csv = directory / f"{stem}.jsonl", directory / f"{stem}.csv"
    df = df.copy()
    df.columns = [str(c) for c in df.columns]
    with open(jsonl, "w", encoding="utf-8") as f:
        for record in df.to_dict(orient="records"):
            f.write(json.dumps({k: _clean(v) for k, v in record.items()}, sort_keys=True) + "\n")
    df.to_csv(csv, index=False, lineterminator="\n")
    return [jsonl, csv]


def write_reports(families: dict[str, pd.DataFrame], directory: Path, name: str, seed) -> list[Path]:
    """Write every family; ``seed`` may be an int or a label such as ``sweep``."""
    try:
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for family in sorted(families):
            paths.extend(write_family(families[family], directory, f"{name}_{seed}_{family}"))
    except OSError as e:
        raise IoFailure(f"cannot write reports to {directory}: {e}") from e
    log.info("reports.written", directory=str(directory), files=len(paths), name=name, seed=seed)
    return paths


def scan_reports_for_endpoints(directory: Path, addresses: Iterable[str]) -> list[tuple[str, str]]:
    """(file name, address) for every report that mentions one of ``addresses``."""
    wanted = set(addresses)
    hits = []
    try:
        files = sorted(p for p in Path(directory).iterdir() if p.suffix in (".jsonl", ".csv"))
        for path in files:
            for ip in sorted(set(IPV4.findall(path.read_text(encoding="utf-8"))) & wanted):
                hits.append((path.name, ip))
    except OSError as e:
        raise IoFailure(f"cannot scan {directory}: {e}") from e
    return hits
