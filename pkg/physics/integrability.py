"""Checks of the zero-curvature structure and the τ-invariance harness."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from physics.families import ThreeStateFamily, three_state_dtau, three_state_model, three_state_partner
from physics.model_core import TransitionMatrix, hamiltonian_at
from physics.propagator import ScatterConfig, ScatterResult, propagate_scattering

log = logging.getLogger(__name__)

_DEFAULT_T_GRID = (-10.0, -3.0, -1.0, 1.0, 3.0, 10.0)

MatrixFn = Callable[[float], np.ndarray]


def _norm(M: np.ndarray) -> float:
    return float(np.max(np.abs(M))) if np.size(M) else 0.0


def _comm(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return X @ Y - Y @ X


@dataclass(frozen=True)
class ResidualReport:
    max_flatness: float | None  # None: not measured
    max_commutator: float
    conditions: dict[str, float]
    grid: dict[str, list[float]]

    @property
    def max_residual(self) -> float:
        values = [self.max_commutator, *self.conditions.values()]
        if self.max_flatness is not None:
            values.append(self.max_flatness)
        return max(values)

    def to_dict(self) -> dict[str, Any]:
        return {
            "max_flatness": self.max_flatness,
            "max_commutator": self.max_commutator,
            "conditions": dict(self.conditions),
            "grid": {k: list(v) for k, v in self.grid.items()},
        }


def _condition_residuals(B, A, D, dB, dA) -> dict[str, float]:
    Bm, dBm = np.diag(B), np.diag(dB)
    return {
        "slope_coupling": _norm(0.5 * _comm(dBm, A) + _comm(dA, Bm)),
        "coupling_partner": _norm(_comm(dA, A) + _comm(D, Bm)),
        "partner_commutator": _norm(_comm(A, D)),
    }


def check_zero_curvature(
    fam: ThreeStateFamily,
    tau_grid: Sequence[float],
    t_grid: Sequence[float] = _DEFAULT_T_GRID,
) -> ResidualReport:
    """∂τH − ∂tH' and [H, H'] for the three-state family and its partner."""
    flat = comm = 0.0
    cond = {"slope_coupling": 0.0, "coupling_partner": 0.0, "partner_commutator": 0.0}
    for tau in tau_grid:
        model = three_state_model(fam, tau)
        partner = three_state_partner(fam, tau)
        dB, dA = three_state_dtau(fam, tau)
        for t in t_grid:
            H = hamiltonian_at(model, t)
            Hp = partner.at(t)
            flat = max(flat, _norm(np.diag(dB) * t + dA - partner.dt(t)))
            comm = max(comm, _norm(_comm(H, Hp)))
        for key, value in _condition_residuals(model.B, model.A, partner.D, dB, dA).items():
            cond[key] = max(cond[key], value)
    log.debug("[integrability] flatness=%.2e commutator=%.2e", flat, comm)
    return ResidualReport(flat, comm, cond, {"tau": [float(x) for x in tau_grid], "t": [float(x) for x in t_grid]})


def _derivative(fn: MatrixFn, tau: float, h: float) -> np.ndarray:
    """Fourth-order central difference."""
    return (
        -np.asarray(fn(tau + 2 * h)) + 8 * np.asarray(fn(tau + h))
        - 8 * np.asarray(fn(tau - h)) + np.asarray(fn(tau - 2 * h))
    ) / (12 * h)


def check_mlz_conditions(
    B: MatrixFn,
    A: MatrixFn,
    D: MatrixFn,
    tau_grid: Sequence[float],
    h: float = 1e-5,
    t_grid: Sequence[float] = _DEFAULT_T_GRID,
) -> ResidualReport:
    """Residuals of the MLZ integrability conditions for user-supplied B(τ), A(τ), D(τ).

    The partner is taken as H' = ∂τB t²/2 + ∂τA t + D with finite-difference
    τ-derivatives; ``max_commutator`` is ‖[Bt + A, H']‖ on ``t_grid``. Flatness holds
    identically for that partner, so ``max_flatness`` is not reported (None).
    """
    comm = 0.0
    cond = {"slope_coupling": 0.0, "coupling_partner": 0.0, "partner_commutator": 0.0}
    for tau in tau_grid:
        Bv = np.asarray(B(tau), dtype=float)
        Am = np.asarray(A(tau), dtype=complex)
        Dm = np.asarray(D(tau), dtype=complex)
        dB = _derivative(B, tau, h)
        dA = _derivative(A, tau, h)
        for key, value in _condition_residuals(Bv, Am, Dm, dB, dA).items():
            cond[key] = max(cond[key], value)
        for t in t_grid:
            H = np.diag(Bv) * t + Am
            Hp = np.diag(dB) * t * t / 2 + dA * t + Dm
            comm = max(comm, _norm(_comm(H, Hp)))
    return ResidualReport(None, comm, cond, {"tau": [float(x) for x in tau_grid], "t": [float(x) for x in t_grid], "h": [h]})


@dataclass(frozen=True, eq=False)
class InvarianceTable:
    reference_tau: float
    results: dict[float, ScatterResult]
    deviations: dict[float, float] = field(default_factory=dict)

    @property
    def max_deviation(self) -> float:
        return max(self.deviations.values(), default=0.0)

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.results.values())

    def matrix(self, tau: float) -> TransitionMatrix:
        return self.results[tau].probabilities


def invariance_sweep(
    fam: ThreeStateFamily,
    tau_values: Sequence[float],
    cfg: ScatterConfig | None = None,
    init: int | None = None,
    reference_tau: float = 1.0,
    threads: int = 1,
) -> InvarianceTable:
    """Scattering at every τ, compared entrywise with the reference τ.

    The reference is added to the sweep when missing.
    """
    cfg = cfg or ScatterConfig()
    taus = sorted({float(t) for t in tau_values} | {float(reference_tau)})
    results: dict[float, ScatterResult] = {}
    errors: dict[float, Exception] = {}

    def run(tau: float) -> ScatterResult:
        return propagate_scattering(three_state_model(fam, tau), init, cfg)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        future_to_tau = {pool.submit(run, tau): tau for tau in taus}
        for future in as_completed(future_to_tau):
            tau = future_to_tau[future]
            try:
                results[tau] = future.result()
                log.info("[sweep] τ=%.4g done", tau)
            except Exception as exc:
                log.error("[sweep] τ=%.4g failed: %s", tau, exc)
                errors[tau] = exc
    if errors:
        raise next(iter(errors[t] for t in sorted(errors)))

    ref = results[float(reference_tau)].probabilities
    deviations = {tau: results[tau].probabilities.max_deviation(ref) for tau in taus}
    return InvarianceTable(float(reference_tau), dict(sorted(results.items())), deviations)
