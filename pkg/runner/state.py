from __future__ import annotations

from typing import Any, TypedDict


class Scenario(TypedDict, total=False):
    # ── Identity ──────────────────────────────────────────────────────────
    kind: str                         # one of config.VALID_KINDS
    name: str                         # output file stem; defaults to the scenario file stem
    output: str                       # explicit CSV path (overrides --out-dir/name)

    # ── Model / family records ────────────────────────────────────────────
    model: dict[str, Any]             # {"builder": ..., builder-specific fields}
    family: dict[str, Any]            # ThreeStateFamily fields + optional slope_map {p1, p2}
    chain: dict[str, Any]             # integrability_report only: {n_max, beta, g_base, r}

    # ── Sweep inputs (number, list or {start, stop, step|num}) ───────────
    taus: Any
    eps: Any
    g: Any
    phi: Any
    t_grid: Any

    # ── Scalars ───────────────────────────────────────────────────────────
    b: float
    beta: float
    n_max: int
    q: float                          # chain deformation; default 1/2
    eta: float                        # Dykhne prefactor; default 1
    init: Any                         # 1-based level label or amplitude list
    halfline: bool                    # propagate from t = ρ instead of −∞

    # ── Numerics ──────────────────────────────────────────────────────────
    scatter: dict[str, Any]           # ScatterConfig overrides


class RunManifest(TypedDict):
    kind: str
    name: str
    scenario: Scenario
    scatter: dict[str, Any]           # resolved ScatterConfig
    csv: str
    rows: int
    converged: list[bool]             # one flag per CSV row
    all_converged: bool
    summary: dict[str, Any]           # kind-specific (max deviation, residual reports, ...)
    wall_time_sec: float
    versions: dict[str, str]
