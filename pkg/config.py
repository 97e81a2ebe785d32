import os
from dotenv import load_dotenv

load_dotenv()

# Numerics: defaults for ScatterConfig
DEFAULT_REL_TOL = float(os.getenv("MLZ_DEFAULT_TOL", "1e-10"))
DEFAULT_ABS_TOL = float(os.getenv("MLZ_DEFAULT_ABS_TOL", "1e-12"))

# Half-width of the scattering window (matches t ∈ (−1000, 1000))
T_MAX = float(os.getenv("MLZ_T_MAX", "1000"))

# Sweep parallelism (worker threads per scenario)
THREADS = int(os.getenv("MLZ_THREADS", "1"))

# Output
OUTPUT_DIR = os.getenv("MLZ_OUTPUT_DIR", "./outputs")
LOG_LEVEL = os.getenv("MLZ_LOG_LEVEL", "WARNING")

# ── Scenario kinds ────────────────────────────────────────────────────────
# required/optional: top-level scenario fields; columns: CSV order (None = built
# from the model size); sweep_key: CSV sort columns.
SCENARIO_REGISTRY = {
    "spectrum": {
        "required": ["model", "t_grid"],
        "optional": [],
        "columns": None,
        "sweep_key": ["t"],
    },
    "propagate": {
        "required": ["model"],
        "optional": ["init", "halfline", "scatter"],
        "columns": ["from", "to", "P"],
        "sweep_key": ["from", "to"],
    },
    "invariance": {
        "required": ["family", "taus"],
        "optional": ["init", "scatter"],
        "columns": ["tau", "P_{src}to1", "P_{src}to2", "P_{src}to3"],
        "sweep_key": ["tau"],
    },
    "dykhne_sweep": {
        "required": ["g", "b", "eps"],
        "optional": ["eta", "scatter"],
        "columns": ["eps", "P_dykhne", "P_numeric"],
        "sweep_key": ["eps"],
    },
    "fig6_sweep": {
        "required": ["g", "b", "eps"],
        "optional": ["eta", "scatter"],
        "columns": ["g", "eps", "P_semiclassical", "P_numeric"],
        "sweep_key": ["g", "eps"],
    },
    "chain_avg_n": {
        "required": ["beta", "n_max", "g"],
        "optional": ["q", "scatter"],
        "columns": ["g", "n_avg_numeric", "n_avg_exact"],
        "sweep_key": ["g"],
    },
    "four_state_sweep": {
        "required": ["b", "g", "phi"],
        "optional": ["scatter"],
        "columns": [
            "phi", "P_1to1", "P_1to4", "P_1todeg",
            "P_1to1_exact", "P_1to4_exact", "P_1todeg_exact",
        ],
        "sweep_key": ["phi"],
    },
    "integrability_report": {
        "required": ["family", "taus"],
        "optional": ["t_grid", "chain"],
        "columns": [
            "check", "max_flatness", "max_commutator",
            "slope_coupling", "coupling_partner", "partner_commutator",
        ],
        "sweep_key": ["check"],
    },
}

VALID_KINDS = list(SCENARIO_REGISTRY.keys())

# ── Model builders accepted in a scenario's "model" record ──────────────────
MODEL_BUILDERS = {
    "lz": ["b", "g"],
    "demo_three_state": ["b", "g", "eps"],
    "reduced_two_state": ["b", "g", "eps"],
    "three_state": ["family", "tau"],
    "four_state": ["b", "g1", "g2", "g3", "g4"],
    "effective_coulomb_3state": ["b", "g1", "g2", "g3", "g4"],
    "chain": ["n_max", "beta", "g_base"],
    "explicit": ["B", "A"],
}

FAMILY_FIELDS = ["gamma12", "gamma13", "gamma23", "eps0"]
SCATTER_FIELDS = [
    "t_max", "rel_tol", "abs_tol", "rho", "window_check", "readout",
    "window_policy", "na_tol", "phase_step", "leg_method",
]


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_grid(value) -> bool:
    if isinstance(value, list):
        return bool(value) and all(_is_number(v) for v in value)
    if isinstance(value, dict):
        return all(_is_number(value.get(k)) for k in ("start", "stop")) and (
            _is_number(value.get("step")) or _is_number(value.get("num"))
        )
    return _is_number(value)


def _check_model(model, errors: list[str]) -> None:
    if not isinstance(model, dict):
        errors.append("model must be an object")
        return
    builder = model.get("builder")
    if builder not in MODEL_BUILDERS:
        errors.append(f"Unknown model builder: {builder!r} (valid: {', '.join(MODEL_BUILDERS)})")
        return
    for key in MODEL_BUILDERS[builder]:
        if key not in model:
            errors.append(f"model.{key} is required for builder '{builder}'")
    if builder == "three_state" and isinstance(model.get("family"), dict):
        _check_family(model["family"], errors, prefix="model.family")


def _check_family(family, errors: list[str], prefix: str = "family") -> None:
    if not isinstance(family, dict):
        errors.append(f"{prefix} must be an object")
        return
    for key in FAMILY_FIELDS:
        if key not in family:
            errors.append(f"{prefix}.{key} is required")
    for key in ("beta1", "beta2"):
        if key in family and not (_is_number(family[key]) and family[key] > 0):
            errors.append(f"{prefix}.{key} must be a positive number")


def validate_scenario(scenario: dict) -> list[str]:
    """Return every schema and domain problem of a scenario (empty list = valid).

    Nothing is propagated; domain errors that a run would raise
    (degenerate slopes, singular deformations, bad scatter settings) are
    predicted by constructing the cheap objects only.
    """
    errors: list[str] = []
    if not isinstance(scenario, dict):
        return ["scenario must be a JSON object"]
    kind = scenario.get("kind")
    if kind not in SCENARIO_REGISTRY:
        return [f"Unknown scenario kind: {kind!r} (valid: {', '.join(VALID_KINDS)})"]

    spec = SCENARIO_REGISTRY[kind]
    for key in spec["required"]:
        if key not in scenario:
            errors.append(f"{key} is required for kind '{kind}'")
    known = set(spec["required"]) | set(spec["optional"]) | {"kind", "name", "output"}
    for key in scenario:
        if key not in known:
            errors.append(f"Unknown field for kind '{kind}': {key}")

    # ── Shapes ────────────────────────────────────────────────────────────
    if "model" in scenario:
        _check_model(scenario["model"], errors)
    if "family" in scenario:
        _check_family(scenario["family"], errors)
    for key in ("taus", "eps", "g", "phi", "t_grid"):
        if key in scenario and not _is_grid(scenario[key]):
            errors.append(f"{key} must be a number, a list of numbers or a {{start, stop, step|num}} grid")
    for key in ("b", "beta"):
        if key in scenario and not (_is_number(scenario[key]) and scenario[key] > 0):
            errors.append(f"{key} must be a positive number")
    if "n_max" in scenario and not (isinstance(scenario["n_max"], int) and scenario["n_max"] >= 2):
        errors.append("n_max must be an integer ≥ 2")
    scatter = scenario.get("scatter", {})
    if not isinstance(scatter, dict):
        errors.append("scatter must be an object")
        scatter = {}
    for key in scatter:
        if key not in SCATTER_FIELDS:
            errors.append(f"Unknown scatter field: {key}")
    chain = scenario.get("chain")
    if chain is not None:
        for key in ("n_max", "beta", "g_base", "r"):
            if not isinstance(chain, dict) or key not in chain:
                errors.append(f"chain.{key} is required")

    if errors:
        return errors

    # ── Domain predictions (deferred import: physics reads this module) ───
    from runner.executor import predict_domain_errors
    return predict_domain_errors(scenario)


def check_scenario(scenario: dict) -> None:
    """Raise ValueError listing every problem of an invalid scenario."""
    errors = validate_scenario(scenario)
    if errors:
        raise ValueError("Invalid scenario:\n" + "\n".join(f"  - {e}" for e in errors))


def validate_config() -> list[str]:
    """Return list of problems with the environment-driven settings."""
    problems = []
    if not (DEFAULT_REL_TOL > 0 and DEFAULT_ABS_TOL > 0):
        problems.append("MLZ_DEFAULT_TOL and MLZ_DEFAULT_ABS_TOL must be positive")
    if not T_MAX > 0:
        problems.append("MLZ_T_MAX must be positive")
    if THREADS < 1:
        problems.append("MLZ_THREADS must be at least 1")
    return problems
