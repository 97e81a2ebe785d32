"""Dykhne contour actions and the closed-form probabilities of the solvable models."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np
from scipy.integrate import quad

from physics.errors import BranchAmbiguity
from physics.families import FourStateParams, reduced_two_state
from physics.model_core import BRANCH_TOL, DiabaticModel, track_gap

log = logging.getLogger(__name__)

_QUAD_OPTS = {"epsabs": 1e-12, "epsrel": 1e-10, "limit": 200}


@dataclass(frozen=True)
class DykhneResult:
    t1: complex
    t2: complex
    action: float
    P: float
    eta: float
    selected: Literal["t1", "t2", "tie"]
    actions: tuple[float | None, float | None]


@dataclass(frozen=True)
class FourStateProbabilities:
    p11: float
    p14: float
    p_deg: float


def branch_points(b: float, g: float, eps: float) -> tuple[complex, complex]:
    """Upper-half-plane zeros of ΔE² for the reduced two-state model."""
    if b <= 0 or g <= 0:
        raise ValueError("branch points need b > 0 and g > 0")
    root = np.sqrt(complex(eps * eps, -4.0 * eps * g))
    return (2j * g - eps + root) / (2 * b), (2j * g - eps - root) / (2 * b)


def _fmt(z: complex) -> str:
    return f"{z.real:.6g}{z.imag:+.6g}j"


def _segment_distance(p: complex, a: complex, b: complex) -> float:
    d = b - a
    s = min(1.0, max(0.0, ((p - a) * np.conj(d)).real / abs(d) ** 2))
    return abs(p - (a + s * d))


def dykhne_action(
    model: DiabaticModel,
    t1: complex,
    t0: float = 1.0,
    other_root: complex | None = None,
    branch_tol: float = BRANCH_TOL,
) -> float:
    """Im ∫ ΔE dt along the straight segment t0 → t1, ΔE continued from the positive gap at t0."""
    t1 = complex(t1)
    if t1 == t0:
        return 0.0
    if other_root is not None:
        tol = branch_tol * max(1.0, abs(t1))
        if abs(other_root - t1) > tol and _segment_distance(other_root, t0, t1) < tol:
            raise BranchAmbiguity(f"segment to {t1:.6g} passes the other root {other_root:.6g}")
    branch = track_gap(model, [t0, t1], branch_tol=branch_tol)
    dt = t1 - t0

    def integrand(s: float) -> float:
        return (branch.at(t0 + s * dt) * dt).imag

    value, err = quad(integrand, 0.0, 1.0, **_QUAD_OPTS)
    log.debug("[dykhne] action to %s = %.10g (±%.1e)", _fmt(t1), value, err)
    return float(value)


def dykhne_probability(b: float, g: float, eps: float, eta: float = 1.0, t0: float = 1.0) -> DykhneResult:
    """η e^{−2·action} for the reduced two-state model, minimised over both roots."""
    model = reduced_two_state(b, g, eps)
    r1, r2 = branch_points(b, g, eps)
    tie = abs(r1 - r2) <= BRANCH_TOL * max(1.0, abs(r1))
    actions: list[float | None] = []
    for root, other in ((r1, r2), (r2, r1)):
        try:
            actions.append(dykhne_action(model, root, t0, None if tie else other))
        except BranchAmbiguity as exc:
            log.warning("[dykhne] skipping root %s: %s", _fmt(root), exc)
            actions.append(None)
    valid = [a for a in actions if a is not None]
    if not valid:
        raise BranchAmbiguity(f"no usable branch point for b={b}, g={g}, ε={eps}")

    if tie:
        selected = "tie"
        action = min(valid)
    else:
        k = min((i for i in range(2) if actions[i] is not None), key=lambda i: actions[i])
        selected = ("t1", "t2")[k]
        action = actions[k]
    P = min(1.0, eta * float(np.exp(-2.0 * action)))
    return DykhneResult(r1, r2, action, P, eta, selected, (actions[0], actions[1]))


def p3_semiclassical(b: float, g: float, eps: float, eta: float = 1.0) -> float:
    """Level-1 → level-2 probability of the symmetric three-state model."""
    if eps <= 0 or b <= 0:
        raise ValueError("the semiclassical estimate needs ε > 0 and b > 0")
    return (1.0 - np.exp(-2 * np.pi * g * g / b)) * dykhne_probability(b, g, eps, eta).P


def be_survival(gammas: Iterable[complex]) -> float:
    return float(np.exp(-2 * np.pi * sum(abs(g) ** 2 for g in gammas)))


def p22_exact_eps0(g: float, b: float) -> float:
    x = np.exp(-np.pi * g * g / b)
    return float(2 * x / (1 + x))


def p14_exact(p: FourStateParams) -> FourStateProbabilities:
    s_plus, s_minus = p.exponents()
    p11 = float(np.exp(-2 * np.pi * p.kappa))
    p14 = float(np.exp(-np.pi * (p.kappa_plus + p.kappa)) * np.expm1(np.pi * s_plus) * np.expm1(np.pi * s_minus))
    return FourStateProbabilities(p11, p14, 1.0 - p11 - p14)


def p_psi1_to_4(p: FourStateParams) -> float:
    """ψ1 → 4 probability of the effective Coulomb model, started at t = 0⁺."""
    return p14_exact(p).p14 / -np.expm1(-2 * np.pi * p.kappa)


def avg_n_exact(g: float, beta: float) -> float:
    return float(2 * np.expm1(np.pi * g * g / beta))
