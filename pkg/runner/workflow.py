"""Scenario runs end to end: load, override, validate, execute, write CSV + manifest.

CSV output is deterministic: columns follow the scenario registry and rows are
sorted by the sweep key before writing, whatever order the pool finished in.
"""
from __future__ import annotations

import copy
import json as _json
import logging
import os as _os
import re as _re
import time as _time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import scipy

from config import SCENARIO_REGISTRY, check_scenario
from runner.executor import KindResult, execute, scatter_record
from runner.state import RunManifest, Scenario

log = logging.getLogger(__name__)

_FLOAT_FORMAT = "%.12g"


@dataclass(frozen=True)
class RunOutcome:
    csv_path: Path
    manifest_path: Path
    manifest: RunManifest
    frame: pd.DataFrame


# ── Loading ──────────────────────────────────────────────────────────────────

def load_scenario(path: str | Path) -> Scenario:
    with open(path, encoding="utf-8") as f:
        scenario = _json.load(f)
    if isinstance(scenario, dict):
        scenario.setdefault("name", Path(path).stem)
    return scenario


def _parse_value(raw: str) -> Any:
    try:
        return _json.loads(raw)
    except _json.JSONDecodeError:
        return raw


def apply_overrides(scenario: Scenario, overrides: list[str]) -> Scenario:
    """Apply ``dotted.key=value`` overrides; values are JSON when they parse, strings otherwise."""
    out = copy.deepcopy(scenario)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"Override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ValueError(f"Override has an empty key: {item!r}")
        node = out
        for part in parts[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = {}
                node[part] = child
            node = child
        node[parts[-1]] = _parse_value(raw)
    return out


# ── Output ───────────────────────────────────────────────────────────────────

def _slug(name: str) -> str:
    return _re.sub(r"[^\w\-]", "_", name.strip())[:60] or "scenario"


def _columns(kind: str, result: KindResult) -> list[str]:
    return list(result.columns or SCENARIO_REGISTRY[kind]["columns"])


def _frame(kind: str, result: KindResult) -> pd.DataFrame:
    df = pd.DataFrame(result.rows, columns=_columns(kind, result))
    df["_converged"] = result.converged
    keys = [k for k in SCENARIO_REGISTRY[kind]["sweep_key"] if k in df.columns]
    if keys and kind != "propagate":
        df = df.sort_values(by=keys, kind="mergesort")
    return df.reset_index(drop=True)


def _save_manifest(manifest: RunManifest, path: Path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            _json.dump(manifest, f, ensure_ascii=False, indent=2, default=_json_default)
        log.info("[disk] Saved manifest → %s", path)
    except Exception as exc:
        log.warning("[disk] Failed to save manifest %s: %s", path, exc)


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, complex):
        return [value.real, value.imag]
    return str(value)


# ── Run ──────────────────────────────────────────────────────────────────────

def run_scenario(
    scenario: Scenario,
    out_dir: str | Path,
    threads: int = 1,
) -> RunOutcome:
    """Validate and execute one scenario, writing ``<name>.csv`` and ``<name>.manifest.json``.

    Raises ValueError for invalid scenarios and lets physics errors through.
    """
    check_scenario(scenario)
    kind = scenario["kind"]
    name = _slug(scenario.get("name", kind))

    start = _time.perf_counter()
    result, cfg = execute(scenario, threads=threads)
    elapsed = _time.perf_counter() - start

    df = _frame(kind, result)
    flags = [bool(x) for x in df.pop("_converged")]

    if scenario.get("output"):
        csv_path = Path(scenario["output"])
    else:
        csv_path = Path(out_dir) / f"{name}.csv"
    _os.makedirs(csv_path.parent, exist_ok=True)
    df.to_csv(csv_path, index=False, float_format=_FLOAT_FORMAT, lineterminator="\n", encoding="utf-8")
    log.info("[disk] Saved %s (%d rows) → %s", kind, len(df), csv_path)

    manifest: RunManifest = {
        "kind": kind,
        "name": name,
        "scenario": scenario,
        "scatter": scatter_record(cfg),
        "csv": str(csv_path),
        "rows": len(df),
        "converged": flags,
        "all_converged": all(flags),
        "summary": result.summary,
        "wall_time_sec": round(elapsed, 3),
        "versions": {"numpy": np.__version__, "scipy": scipy.__version__, "pandas": pd.__version__},
    }
    manifest_path = csv_path.with_name(f"{csv_path.stem}.manifest.json")
    _save_manifest(manifest, manifest_path)
    if not manifest["all_converged"]:
        log.warning("[run] %s: %d row(s) flagged as not converged", name, flags.count(False))
    return RunOutcome(csv_path, manifest_path, manifest, df)
