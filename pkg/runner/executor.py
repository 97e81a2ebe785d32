"""Scenario kind routing, object builders and structured error payloads."""
from __future__ import annotations

import json as _json
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Hashable, Iterable

import numpy as np

from config import SCENARIO_REGISTRY
from physics.errors import MLZError, NotConverged
from physics.families import (
    FourStateParams,
    PowerSlopeMap,
    ThreeStateFamily,
    bosonic_chain_sector,
    chain_family,
    chain_model,
    demo_three_state,
    effective_coulomb_3state,
    four_state_model,
    q_deform,
    reduced_two_state,
    three_state_model,
)
from physics.integrability import check_mlz_conditions, check_zero_curvature, invariance_sweep
from physics.model_core import DiabaticModel, spectrum
from physics.propagator import (
    ScatterConfig,
    check_scattering,
    expectation_n,
    propagate_coulomb_halfline,
    propagate_scattering,
)
from physics.semiclassical import avg_n_exact, dykhne_probability, p14_exact, p3_semiclassical
from runner.state import Scenario

log = logging.getLogger(__name__)


@dataclass
class KindResult:
    rows: list[dict[str, Any]]
    converged: list[bool]
    columns: list[str]
    summary: dict[str, Any] = field(default_factory=dict)


# ── Builders ─────────────────────────────────────────────────────────────────

def grid(spec: Any) -> np.ndarray:
    """A number, a list, or {start, stop, step} / {start, stop, num} (stop inclusive)."""
    if isinstance(spec, dict):
        start, stop = float(spec["start"]), float(spec["stop"])
        num = spec.get("num")
        if num is None:
            num = int(round((stop - start) / float(spec["step"]))) + 1
        return np.linspace(start, stop, int(num))
    return np.atleast_1d(np.asarray(spec, dtype=float))


def _complex(value: Any) -> complex:
    if isinstance(value, (list, tuple)):
        re, im = value
        return complex(float(re), float(im))
    return complex(value)


def build_family(spec: dict) -> ThreeStateFamily:
    slope = spec.get("slope_map", {})
    return ThreeStateFamily(
        gamma12=_complex(spec["gamma12"]),
        gamma13=_complex(spec["gamma13"]),
        gamma23=_complex(spec["gamma23"]),
        eps0=float(spec["eps0"]),
        beta1=float(spec.get("beta1", 1.0)),
        beta2=float(spec.get("beta2", 1.0)),
        slope_map=PowerSlopeMap(float(slope.get("p1", 1.0)), float(slope.get("p2", 0.0))),
        rescale_couplings=bool(spec.get("rescale_couplings", True)),
        area_rule=bool(spec.get("area_rule", True)),
    )


def _four_state_params(spec: dict) -> FourStateParams:
    return FourStateParams(float(spec["b"]), *(_complex(spec[k]) for k in ("g1", "g2", "g3", "g4")))


def build_model(spec: dict) -> DiabaticModel:
    builder = spec["builder"]
    if builder == "lz":
        g = float(spec["g"])
        return DiabaticModel(B=[float(spec["b"]), 0.0], A=[[0.0, g], [g, 0.0]])
    if builder == "demo_three_state":
        return demo_three_state(float(spec["b"]), float(spec["g"]), float(spec["eps"]))
    if builder == "reduced_two_state":
        return reduced_two_state(float(spec["b"]), float(spec["g"]), float(spec["eps"]))
    if builder == "three_state":
        return three_state_model(build_family(spec["family"]), float(spec["tau"]))
    if builder == "four_state":
        return four_state_model(_four_state_params(spec))
    if builder == "effective_coulomb_3state":
        return effective_coulomb_3state(_four_state_params(spec))
    if builder == "chain":
        chain = bosonic_chain_sector(int(spec["n_max"]), float(spec["beta"]), float(spec["g_base"]))
        return chain_model(q_deform(chain, float(spec.get("q", 1.0))))
    if builder == "explicit":
        A = np.asarray([[_complex(x) for x in row] for row in spec["A"]])
        return DiabaticModel(B=spec["B"], A=A, Q=spec.get("Q"), K=spec.get("K"),
                             degenerate_allowed=bool(spec.get("degenerate_allowed", False)))
    raise ValueError(f"Unknown model builder: {builder!r}")


def build_scatter(spec: dict | None) -> ScatterConfig:
    return ScatterConfig(**(spec or {}))


def _init_index(scenario: Scenario, default: int) -> Any:
    init = scenario.get("init", default)
    if isinstance(init, list):
        return np.array([_complex(x) for x in init])
    if init is None:
        return None
    return int(init) - 1


# ── Validation ───────────────────────────────────────────────────────────────

def predict_domain_errors(scenario: Scenario) -> list[str]:
    """Construct the cheap objects of a scenario and collect what would fail."""
    errors: list[str] = []
    kind = scenario["kind"]

    def attempt(label: str, fn: Callable[[], Any]) -> Any:
        try:
            return fn()
        except (ValueError, TypeError, KeyError) as exc:
            name = type(exc).__name__
            errors.append(f"{label}: {name} predicted ({exc})")
            return None

    attempt("scatter", lambda: build_scatter(scenario.get("scatter")))

    if "model" in scenario:
        model = attempt("model", lambda: build_model(scenario["model"]))
        if model is not None and kind == "propagate":
            attempt("model", lambda: check_scattering(model))
            init = scenario.get("init")
            if isinstance(init, int) and not 1 <= init <= model.n:
                errors.append(f"init: level {init} outside 1..{model.n}")
            if scenario.get("halfline") and not model.has_coulomb:
                errors.append("halfline: propagation from t = ρ needs a model with a 1/t term")
        if model is not None and kind == "spectrum" and model.has_coulomb:
            if np.any(grid(scenario["t_grid"]) == 0):
                errors.append("t_grid: SingularTime predicted (t = 0 with a 1/t term)")

    if "family" in scenario:
        fam = attempt("family", lambda: build_family(scenario["family"]))
        if fam is not None:
            for tau in grid(scenario.get("taus", 1.0)):
                attempt(f"tau={tau:g}", lambda tau=tau: fam.slopes(tau))

    if kind == "chain_avg_n":
        for g in grid(scenario["g"]):
            attempt(
                f"g={g:g}",
                lambda g=g: q_deform(bosonic_chain_sector(scenario["n_max"], scenario["beta"], g), scenario.get("q", 0.5)),
            )
    if kind in ("dykhne_sweep", "fig6_sweep"):
        if np.any(grid(scenario["g"]) <= 0):
            errors.append("g: branch points need g > 0")
        if kind == "fig6_sweep" and np.any(grid(scenario["eps"]) <= 0):
            errors.append("eps: the semiclassical estimate needs ε > 0")
    if "chain" in scenario:
        c = scenario["chain"]
        attempt("chain", lambda: bosonic_chain_sector(int(c["n_max"]), float(c["beta"]), float(c["g_base"])))
    return errors


# ── Sweep pool ───────────────────────────────────────────────────────────────

def map_points(fn: Callable[[Any], Any], keys: Iterable[Hashable], threads: int = 1) -> dict:
    """Run ``fn`` on every key in a thread pool; results keyed by input.

    All points run even when some fail; the first failure in key order is
    re-raised afterwards.
    """
    keys = list(keys)
    results: dict = {}
    errors: dict = {}
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        future_to_key = {pool.submit(fn, key): key for key in keys}
        for future in as_completed(future_to_key):
            key = future_to_key[future]
            try:
                results[key] = future.result()
                log.debug("[sweep] %s done", key)
            except Exception as exc:
                log.error("[sweep] %s failed: %s", key, exc)
                errors[key] = exc
    if errors:
        raise next(errors[k] for k in keys if k in errors)
    return results


# ── Kind handlers ────────────────────────────────────────────────────────────

def _run_spectrum(sc: Scenario, cfg: ScatterConfig, threads: int) -> KindResult:
    model = build_model(sc["model"])
    ts = grid(sc["t_grid"])
    energies = spectrum(model, ts)
    columns = ["t"] + [f"E_{k + 1}" for k in range(model.n)]
    rows = [{"t": t, **{f"E_{k + 1}": e[k] for k in range(model.n)}} for t, e in zip(ts, energies)]
    return KindResult(rows, [True] * len(rows), columns)


def _run_propagate(sc: Scenario, cfg: ScatterConfig, threads: int) -> KindResult:
    model = build_model(sc["model"])
    init = _init_index(sc, None)
    fn = propagate_coulomb_halfline if sc.get("halfline") else propagate_scattering
    res = fn(model, init, cfg)
    sources = res.probabilities.sources if not isinstance(init, np.ndarray) else (None,)
    rows, flags = [], []
    for k, src in enumerate(sources):
        for n in range(model.n):
            rows.append({
                "from": model.labels[src] if src is not None else "vector",
                "to": model.labels[n],
                "P": res.probabilities.P[k, n],
            })
            flags.append(res.converged)
    summary = {
        "window": res.window,
        "window_deviation": res.window_deviation,
        "norm_drift": res.norm_drift,
        "residual_row": res.probabilities.residual_row,
        "residual_col": res.probabilities.residual_col,
        "groups": [list(g) for g in res.groups],
    }
    return KindResult(rows, flags, ["from", "to", "P"], summary)


def _run_invariance(sc: Scenario, cfg: ScatterConfig, threads: int) -> KindResult:
    fam = build_family(sc["family"])
    src = _init_index(sc, 2)
    table = invariance_sweep(fam, grid(sc["taus"]), cfg, init=src, threads=threads)
    label = src + 1
    columns = ["tau"] + [f"P_{label}to{n}" for n in (1, 2, 3)]
    rows, flags = [], []
    for tau, res in table.results.items():
        rows.append({"tau": tau, **{f"P_{label}to{n + 1}": res.row[n] for n in range(3)}})
        flags.append(res.converged)
    summary = {"reference_tau": table.reference_tau, "max_deviation": table.max_deviation,
               "deviations": {f"{k:g}": v for k, v in table.deviations.items()}}
    return KindResult(rows, flags, columns, summary)


def _run_dykhne_sweep(sc: Scenario, cfg: ScatterConfig, threads: int) -> KindResult:
    b, g, eta = float(sc["b"]), float(sc["g"]), float(sc.get("eta", 1.0))

    def point(eps: float):
        d = dykhne_probability(b, g, eps, eta)
        res = propagate_coulomb_halfline(reduced_two_state(b, g, eps), 0, cfg)
        return {"eps": eps, "P_dykhne": d.P, "P_numeric": res.row[0]}, res.converged

    out = map_points(point, [float(e) for e in grid(sc["eps"])], threads)
    return KindResult([out[k][0] for k in out], [out[k][1] for k in out], SCENARIO_COLUMNS["dykhne_sweep"])


def _run_fig6_sweep(sc: Scenario, cfg: ScatterConfig, threads: int) -> KindResult:
    b, eta = float(sc["b"]), float(sc.get("eta", 1.0))

    def point(key):
        g, eps = key
        res = propagate_scattering(demo_three_state(b, g, eps), 0, cfg)
        return {"g": g, "eps": eps, "P_semiclassical": p3_semiclassical(b, g, eps, eta), "P_numeric": res.row[1]}, res.converged

    keys = [(float(g), float(e)) for g in grid(sc["g"]) for e in grid(sc["eps"])]
    out = map_points(point, keys, threads)
    return KindResult([out[k][0] for k in out], [out[k][1] for k in out], SCENARIO_COLUMNS["fig6_sweep"])


def _run_chain_avg_n(sc: Scenario, cfg: ScatterConfig, threads: int) -> KindResult:
    beta, n_max, q = float(sc["beta"]), int(sc["n_max"]), float(sc.get("q", 0.5))

    def point(g: float):
        chain = q_deform(bosonic_chain_sector(n_max, beta, g), q)
        res = propagate_scattering(chain_model(chain), 0, cfg)
        return {"g": g, "n_avg_numeric": expectation_n(res.state), "n_avg_exact": avg_n_exact(g, beta)}, res.converged

    out = map_points(point, [float(g) for g in grid(sc["g"])], threads)
    return KindResult([out[k][0] for k in out], [out[k][1] for k in out], SCENARIO_COLUMNS["chain_avg_n"])


def _run_four_state_sweep(sc: Scenario, cfg: ScatterConfig, threads: int) -> KindResult:
    b, g = float(sc["b"]), float(sc["g"])

    def point(phi: float):
        p = FourStateParams(b, g * np.exp(1j * phi), g, g, g)
        res = propagate_scattering(four_state_model(p), 0, cfg)
        exact = p14_exact(p)
        row = {
            "phi": phi,
            "P_1to1": res.row[0],
            "P_1to4": res.row[3],
            "P_1todeg": res.group_probabilities[0, res.groups.index((1, 2))],
            "P_1to1_exact": exact.p11,
            "P_1to4_exact": exact.p14,
            "P_1todeg_exact": exact.p_deg,
        }
        return row, res.converged

    out = map_points(point, [float(x) for x in grid(sc["phi"])], threads)
    return KindResult([out[k][0] for k in out], [out[k][1] for k in out], SCENARIO_COLUMNS["four_state_sweep"])


def _run_integrability_report(sc: Scenario, cfg: ScatterConfig, threads: int) -> KindResult:
    fam = build_family(sc["family"])
    taus = grid(sc["taus"])
    t_grid = grid(sc["t_grid"]) if "t_grid" in sc else None
    reports = {"three_state": check_zero_curvature(fam, taus) if t_grid is None else check_zero_curvature(fam, taus, t_grid)}
    if "chain" in sc:
        c = sc["chain"]
        cf = chain_family(bosonic_chain_sector(int(c["n_max"]), float(c["beta"]), float(c["g_base"])), float(c["r"]))
        reports["chain"] = check_mlz_conditions(cf.B, cf.A, cf.D, taus)
    rows = [
        {"check": name, "max_flatness": r.max_flatness, "max_commutator": r.max_commutator, **r.conditions}
        for name, r in reports.items()
    ]
    return KindResult(rows, [True] * len(rows), SCENARIO_COLUMNS["integrability_report"],
                      {name: r.to_dict() for name, r in reports.items()})


SCENARIO_COLUMNS = {kind: spec["columns"] for kind, spec in SCENARIO_REGISTRY.items()}

_KIND_DISPATCH: dict[str, Callable[[Scenario, ScatterConfig, int], KindResult]] = {
    "spectrum":             _run_spectrum,
    "propagate":            _run_propagate,
    "invariance":           _run_invariance,
    "dykhne_sweep":         _run_dykhne_sweep,
    "fig6_sweep":           _run_fig6_sweep,
    "chain_avg_n":          _run_chain_avg_n,
    "four_state_sweep":     _run_four_state_sweep,
    "integrability_report": _run_integrability_report,
}


def execute(scenario: Scenario, threads: int = 1) -> tuple[KindResult, ScatterConfig]:
    """Run a validated scenario. Physics errors propagate to the caller."""
    kind = scenario["kind"]
    handler = _KIND_DISPATCH.get(kind)
    if handler is None:
        raise ValueError(f"Unknown scenario kind: {kind!r}")
    cfg = build_scatter(scenario.get("scatter"))
    log.info("[run] %s with %d thread(s)", kind, threads)
    return handler(scenario, cfg, threads), cfg


def scatter_record(cfg: ScatterConfig) -> dict[str, Any]:
    return asdict(cfg)


# ── Errors ───────────────────────────────────────────────────────────────────

_ACTIONS = {
    "not_converged": "Increase scatter.t_max or loosen scatter.na_tol, or set scatter.window_policy to 'flag'.",
    "step_underflow": "Loosen scatter.rel_tol or reduce scatter.phase_step.",
    "branch_ambiguity": "Move the Dykhne start point t0 or perturb ε slightly.",
    "degenerate_slopes": "Choose τ and slope_map so that every slope stays positive.",
    "deformation_singular": "Pick a deformation parameter q away from the singular values.",
    "invalid_scenario": "Fix the listed fields and rerun `mlz validate`.",
}


def exit_code_for(exc: BaseException) -> int:
    """1 for invalid input, 2 when propagation did not converge, 3 for other numerical failures."""
    if isinstance(exc, NotConverged):
        return 2
    if isinstance(exc, (ValueError, KeyError, TypeError)):
        return 1
    return 3


def error_payload(exc: BaseException, kind: str | None, errors: list[str] | None = None) -> str:
    """Structured JSON describing a failed run."""
    if isinstance(exc, MLZError):
        code = exc.code
    elif isinstance(exc, (ValueError, KeyError, TypeError)):
        code = "invalid_scenario"
    else:
        code = "runtime_error"
    payload = {
        "error": code,
        "kind": kind,
        "message": str(exc),
        "action": _ACTIONS.get(code, "Inspect the message and the scenario parameters."),
    }
    if errors:
        payload["errors"] = errors
    return _json.dumps(payload, ensure_ascii=False)
