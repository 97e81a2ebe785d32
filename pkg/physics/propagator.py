"""Numerical propagation of MLZ models.

The ODE always runs in the interaction picture ã = exp(iφ) a with
φ_n(t) = Q_n t³/6 + B_n t²/2 + A_nn t + K_nn ln|t|, so the integrator only
sees the oscillating off-diagonal couplings. Integration is split into
segments, each carrying its own step ceiling tied to the local phase rate.

Probabilities are read in the instantaneous eigenbasis by default
(``readout="adiabatic"``): past every crossing those populations are constant
up to the residual nonadiabatic amplitude, so the core window t_c can be much
shorter than ``t_max``. ``readout="diabatic"`` integrates to ``t_max`` and
reads |ã_n|² literally.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Literal, Sequence

import numpy as np
from scipy.integrate import simpson, solve_ivp
from scipy.linalg import eigh, polar
from scipy.optimize import linear_sum_assignment

from config import DEFAULT_ABS_TOL, DEFAULT_REL_TOL, T_MAX
from physics.errors import DegenerateSlopes, NotConverged, SingularTime, StepUnderflow
from physics.families import ThreeStateFamily, three_state_model, three_state_partner
from physics.model_core import DiabaticModel, StateVector, TransitionMatrix, hamiltonian_at

log = logging.getLogger(__name__)

_SEGMENTS = 256             # uniform segments per leg
_NEAR_ORIGIN_POINTS = 48    # geometric refinement of |t| < 1
_MIN_WINDOW = 10.0
_WINDOW_FLOOR = 5e-4
_TRANSPORT_POINTS = 801
_ODE_PHASE_BUDGET = 2.0e3   # rad; τ-legs above this use adiabatic transport
_RK4_STEP = 1e-3

Readout = Literal["adiabatic", "diabatic"]
WindowPolicy = Literal["double", "flag"]
LegMethod = Literal["auto", "ode", "adiabatic"]


# ── Configuration ────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ScatterConfig:
    t_max: float = T_MAX
    rel_tol: float = DEFAULT_REL_TOL
    abs_tol: float = DEFAULT_ABS_TOL
    rho: float | None = None          # Coulomb indentation radius; derived from B when None
    window_check: float = 0.5
    readout: Readout = "adiabatic"
    window_policy: WindowPolicy = "double"
    na_tol: float = 1e-5
    phase_step: float = 0.25
    leg_method: LegMethod = "auto"

    def __post_init__(self) -> None:
        errors = []
        if not self.t_max > 0:
            errors.append(f"t_max must be positive, got {self.t_max}")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            errors.append("rel_tol and abs_tol must be positive")
        if self.rho is not None and not self.rho > 0:
            errors.append(f"rho must be positive, got {self.rho}")
        if not 0 < self.window_check < 1:
            errors.append(f"window_check must lie in (0, 1), got {self.window_check}")
        if self.readout not in ("adiabatic", "diabatic"):
            errors.append(f"unknown readout '{self.readout}'")
        if self.window_policy not in ("double", "flag"):
            errors.append(f"unknown window_policy '{self.window_policy}'")
        if self.leg_method not in ("auto", "ode", "adiabatic"):
            errors.append(f"unknown leg_method '{self.leg_method}'")
        if not (self.na_tol > 0 and self.phase_step > 0):
            errors.append("na_tol and phase_step must be positive")
        if errors:
            raise ValueError("Invalid scatter config:\n" + "\n".join(f"  - {e}" for e in errors))

    def resolved_rho(self, model: DiabaticModel) -> float:
        if self.rho is not None:
            return self.rho
        return 1e-4 * min(1.0, 1.0 / max(1e-300, float(np.max(np.abs(model.B)))))

    def window_threshold(self) -> float:
        return max(_WINDOW_FLOOR, 5.0 * self.rel_tol * self.t_max)


# ── Interaction picture ──────────────────────────────────────────────────────

class _Frame:
    """Diagonal phase φ(t) of a model and the interaction-picture right-hand side."""

    def __init__(self, model: DiabaticModel):
        C = model.coulomb_matrix
        self.n = model.n
        self.q = model.Q
        self.b = model.B
        self.a_diag = np.real(np.diag(model.A)).copy()
        self.k_diag = np.real(np.diag(C)).copy()
        self.off = model.A - np.diag(np.diag(model.A))
        self.c_off = C - np.diag(np.diag(C))
        self.has_k = bool(np.any(self.k_diag != 0))
        self.has_c_off = bool(np.any(self.c_off != 0))
        mask = (np.abs(self.off) > 0) | (np.abs(self.c_off) > 0)
        self.pairs = np.argwhere(np.triu(mask, 1))

    def phase(self, t: float) -> np.ndarray:
        phi = self.q * t ** 3 / 6 + self.b * t * t / 2 + self.a_diag * t
        if self.has_k:
            phi = phi + self.k_diag * math.log(abs(t))
        return phi

    def rate(self, t: float) -> np.ndarray:
        r = self.q * t * t / 2 + self.b * t + self.a_diag
        if self.has_k:
            r = r + self.k_diag / t
        return r

    def max_gap(self, t: float) -> float:
        if self.pairs.size == 0:
            return 0.0
        r = self.rate(t)
        return float(np.max(np.abs(r[self.pairs[:, 0]] - r[self.pairs[:, 1]])))

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        e = np.exp(1j * self.phase(t))
        M = self.off + self.c_off / t if self.has_c_off else self.off
        W = e[:, None] * M * e.conj()[None, :]
        return (-1j * (W @ y.reshape(self.n, -1))).ravel()

    def to_interaction(self, t: float, Y: np.ndarray) -> np.ndarray:
        return _scale_rows(np.exp(1j * self.phase(t)), Y)

    def to_diabatic(self, t: float, Y: np.ndarray) -> np.ndarray:
        return _scale_rows(np.exp(-1j * self.phase(t)), Y)


def _scale_rows(v: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return v * Y if Y.ndim == 1 else v[:, None] * Y


def _breakpoints(t_a: float, t_b: float) -> np.ndarray:
    lo, hi = min(t_a, t_b), max(t_a, t_b)
    pts = [np.linspace(lo, hi, _SEGMENTS + 1)]
    if lo > 0 or hi < 0:
        near, far = min(abs(lo), abs(hi)), max(abs(lo), abs(hi))
        if near < 1.0:
            sign = 1.0 if lo > 0 else -1.0
            pts.append(sign * np.geomspace(near, min(far, 1.0), _NEAR_ORIGIN_POINTS))
    out = np.unique(np.concatenate(pts))
    return out if t_b > t_a else out[::-1]


def _integrate(frame: _Frame, t_a: float, t_b: float, Y: np.ndarray, cfg: ScatterConfig) -> np.ndarray:
    """Interaction-picture amplitudes from t_a to t_b."""
    shape = Y.shape
    y = Y.ravel().astype(complex)
    pts = _breakpoints(t_a, t_b)
    for lo, hi in zip(pts[:-1], pts[1:]):
        rate = max(frame.max_gap(lo), frame.max_gap(0.5 * (lo + hi)), frame.max_gap(hi))
        sol = solve_ivp(
            frame.rhs, (lo, hi), y,
            method="DOP853", rtol=cfg.rel_tol, atol=cfg.abs_tol,
            max_step=cfg.phase_step / (1.0 + rate),
        )
        if not sol.success:
            raise StepUnderflow(f"integration failed on [{lo:.6g}, {hi:.6g}]: {sol.message}")
        y = sol.y[:, -1]
    return y.reshape(shape)


def _semicircle(model: DiabaticModel, rho: float, Y: np.ndarray, cfg: ScatterConfig, forward: bool) -> np.ndarray:
    """Schrödinger-picture evolution along t = ρ e^{iθ}, θ from π to 2π (reversed when not forward)."""
    shape = Y.shape
    n = model.n

    def rhs(theta, y):
        t = rho * np.exp(1j * theta)
        return (t * (hamiltonian_at(model, t) @ y.reshape(n, -1))).ravel()

    scale = float(np.max(np.abs(model.K))) + rho * float(np.max(np.abs(model.A))) + rho * rho * float(np.max(np.abs(model.B)))
    span = (np.pi, 2 * np.pi) if forward else (2 * np.pi, np.pi)
    sol = solve_ivp(
        rhs, span, Y.ravel().astype(complex),
        method="DOP853", rtol=cfg.rel_tol, atol=cfg.abs_tol,
        max_step=cfg.phase_step / (1.0 + scale),
    )
    if not sol.success:
        raise StepUnderflow(f"Coulomb indentation failed: {sol.message}")
    return sol.y[:, -1].reshape(shape)


def evolve(
    model: DiabaticModel,
    t_a: float,
    t_b: float,
    state: np.ndarray,
    cfg: ScatterConfig | None = None,
) -> np.ndarray:
    """Diabatic amplitudes (a vector or the columns of a matrix) carried from t_a to t_b.

    With a Coulomb term, crossing t = 0 goes around the pole on a semicircle
    of radius ρ through the lower half-plane.
    """
    cfg = cfg or ScatterConfig()
    Y = np.array(state, dtype=complex)
    if t_a == t_b:
        return Y
    frame = _Frame(model)

    def leg(lo: float, hi: float, Z: np.ndarray) -> np.ndarray:
        Z = frame.to_interaction(lo, Z)
        return frame.to_diabatic(hi, _integrate(frame, lo, hi, Z, cfg))

    if not model.has_coulomb:
        return leg(t_a, t_b, Y)
    if t_a == 0 or t_b == 0:
        raise SingularTime("cannot start or stop exactly at the Coulomb pole t=0")
    if t_a * t_b > 0:
        return leg(t_a, t_b, Y)

    rho = cfg.resolved_rho(model)
    if min(abs(t_a), abs(t_b)) <= rho:
        raise SingularTime(f"endpoints must lie outside the indentation radius ρ={rho:.3g}")
    side = math.copysign(1.0, t_a)
    Y = leg(t_a, side * rho, Y)
    Y = _semicircle(model, rho, Y, cfg, forward=t_a < 0)
    return leg(-side * rho, t_b, Y)


def evolution_matrix(model: DiabaticModel, t_a: float, t_b: float, cfg: ScatterConfig | None = None) -> np.ndarray:
    return evolve(model, t_a, t_b, np.eye(model.n, dtype=complex), cfg)


# ── Readout ──────────────────────────────────────────────────────────────────

def check_scattering(model: DiabaticModel) -> list[tuple[int, ...]]:
    """Degenerate slope groups of a scattering model; raises if any is not allowed."""
    groups = model.degenerate_groups()
    for g in groups:
        if len(g) == 1:
            continue
        if not model.degenerate_allowed:
            raise DegenerateSlopes(f"levels {g} share the same slope")
        for i in g:
            for j in g:
                if i < j and model.coupled(i, j):
                    raise DegenerateSlopes(f"equal-slope levels {i} and {j} are directly coupled")
    return groups


def dressed_basis(model: DiabaticModel, t: float) -> np.ndarray:
    """Instantaneous eigenbasis with column n connected to diabatic level n.

    Within a group of equal slopes the columns span the group's eigenspace and
    are the unitary rotation of it closest to the diabatic vectors.
    """
    _, V = eigh(hamiltonian_at(model, t))
    rows, cols = linear_sum_assignment(-np.abs(V) ** 2)
    perm = np.empty(model.n, dtype=int)
    perm[rows] = cols
    W = np.empty_like(V)
    for g in model.degenerate_groups():
        idx = list(g)
        Vg = V[:, perm[idx]]
        u, _ = polar(Vg[idx, :].conj().T)
        W[:, idx] = Vg @ u
    return W


def core_window(model: DiabaticModel, cfg: ScatterConfig, cap: float | None = None) -> float:
    """Half-width t_c of the ODE window: past all crossings with the residual
    nonadiabatic amplitude g/(Δ² t³) below ``na_tol``."""
    C = model.coulomb_matrix
    cross = width = resid = 0.0
    for n, m in _Frame(model).pairs:
        dQ = model.Q[n] - model.Q[m]
        dB = model.B[n] - model.B[m]
        if dQ == 0 and dB == 0:
            continue
        dA = float(np.real(model.A[n, n] - model.A[m, m]))
        dK = float(np.real(C[n, n] - C[m, m]))
        roots = np.roots([dQ / 2, dB, dA, dK])
        real = roots[np.abs(roots.imag) <= 1e-9 * (1 + np.abs(roots))].real
        if real.size:
            cross = max(cross, float(np.max(np.abs(real))))
        slope = abs(dB) if dB != 0 else math.sqrt(abs(dQ))
        g = abs(model.A[n, m])
        width = max(width, g / slope, 1.0 / math.sqrt(slope))
        if g > 0:
            resid = max(resid, (g / (slope * slope * cfg.na_tol)) ** (1.0 / 3.0))
    T = max((cross + 6.0 * width) / cfg.window_check, resid, _MIN_WINDOW)
    return min(T, cfg.t_max if cap is None else cap)


@dataclass(frozen=True, eq=False)
class ScatterResult:
    probabilities: TransitionMatrix
    states: tuple[StateVector, ...]
    groups: tuple[tuple[int, ...], ...]
    group_probabilities: np.ndarray
    window: float
    window_deviation: float
    converged: bool
    norm_drift: float

    @property
    def row(self) -> np.ndarray:
        return self.probabilities.P[0]

    @property
    def state(self) -> StateVector:
        return self.states[0]


def _initial_columns(model: DiabaticModel, init: int | StateVector | Sequence[complex] | None) -> tuple[tuple[int, ...], np.ndarray]:
    n = model.n
    if init is None:
        return tuple(range(n)), np.eye(n, dtype=complex)
    if isinstance(init, (int, np.integer)):
        return (int(init),), StateVector.basis(n, int(init)).amplitudes.reshape(n, 1).copy()
    amps = init.amplitudes if isinstance(init, StateVector) else np.asarray(init, dtype=complex)
    if amps.size != n:
        raise ValueError(f"initial vector has {amps.size} entries, model has {n} levels")
    norm = np.linalg.norm(amps)
    if norm == 0:
        raise ValueError("initial vector is zero")
    return (), (amps / norm).reshape(n, 1).astype(complex)


def _read(model: DiabaticModel, t: float, Y: np.ndarray, cfg: ScatterConfig) -> np.ndarray:
    if cfg.readout == "adiabatic":
        return dressed_basis(model, t).conj().T @ Y
    return _Frame(model).to_interaction(t, Y)


def _group_sums(P: np.ndarray, groups) -> np.ndarray:
    return np.column_stack([P[:, list(g)].sum(axis=1) for g in groups])


def _scatter_once(model, sources, V0, T, cfg, groups, halfline):
    start = cfg.resolved_rho(model) if halfline else -T
    t_w = cfg.window_check * T
    if t_w <= start:
        raise ValueError(f"window check time {t_w:.3g} precedes the start time {start:.3g}")
    Y0 = V0 if halfline or cfg.readout == "diabatic" else dressed_basis(model, start) @ V0
    Y_w = evolve(model, start, t_w, Y0, cfg)
    Y_T = evolve(model, t_w, T, Y_w, cfg)

    C_w, C_T = _read(model, t_w, Y_w, cfg), _read(model, T, Y_T, cfg)
    P_w, P_T = np.abs(C_w.T) ** 2, np.abs(C_T.T) ** 2
    # only group sums are basis independent inside an equal-slope group
    grouped = _group_sums(P_T, groups)
    deviation = float(np.max(np.abs(grouped - _group_sums(P_w, groups))))
    if any(len(g) > 1 for g in groups):
        log.debug("per-level drift %.2e (group drift %.2e)", float(np.max(np.abs(P_T - P_w))), deviation)
    unitary = halfline or not model.has_coulomb
    drift = float(np.max(np.abs(np.sum(np.abs(Y_T) ** 2, axis=0) - np.sum(np.abs(Y0) ** 2, axis=0)))) if unitary else float("nan")

    picture = "adiabatic" if cfg.readout == "adiabatic" else "interaction"
    states = tuple(StateVector(C_T[:, k], picture, T) for k in range(C_T.shape[1]))
    return ScatterResult(
        probabilities=TransitionMatrix(np.clip(P_T, 0.0, 1.0), sources=sources),
        states=states,
        groups=tuple(groups),
        group_probabilities=grouped,
        window=T,
        window_deviation=deviation,
        converged=True,
        norm_drift=drift,
    )


def _scatter(model, init, cfg, halfline):
    cfg = cfg or ScatterConfig()
    groups = check_scattering(model)
    sources, V0 = _initial_columns(model, init)
    T = core_window(model, cfg) if cfg.readout == "adiabatic" else cfg.t_max
    threshold = cfg.window_threshold()
    tag = "halfline" if halfline else "propagate"

    result = _scatter_once(model, sources, V0, T, cfg, groups, halfline)
    log.info("[%s] n=%d window=%.4g deviation=%.2e", tag, model.n, T, result.window_deviation)
    if result.window_deviation <= threshold:
        return result
    if cfg.window_policy == "flag":
        log.warning("[%s] window check failed (%.2e > %.2e); flagged", tag, result.window_deviation, threshold)
        return replace(result, converged=False)

    log.warning("[%s] window check failed at T=%.4g; doubling", tag, T)
    result = _scatter_once(model, sources, V0, 2 * T, cfg, groups, halfline)
    if result.window_deviation > threshold:
        raise NotConverged(
            f"probabilities still drift by {result.window_deviation:.2e} at T={2 * T:.4g} (threshold {threshold:.2e})"
        )
    return result


def propagate_scattering(
    model: DiabaticModel,
    init: int | StateVector | Sequence[complex] | None = None,
    cfg: ScatterConfig | None = None,
) -> ScatterResult:
    """Scattering from t → −∞ to t → +∞.

    ``init`` is a diabatic level index, an initial vector, or None for the full
    matrix (one row per initial level).
    """
    return _scatter(model, init, cfg, halfline=False)


def propagate_coulomb_halfline(
    model: DiabaticModel,
    init: int | StateVector | Sequence[complex] | None = None,
    cfg: ScatterConfig | None = None,
) -> ScatterResult:
    """Evolution from t = ρ⁺ (diabatic initial vector) to t → +∞."""
    return _scatter(model, init, cfg, halfline=True)


def expectation_n(state: StateVector | np.ndarray) -> float:
    amps = state.amplitudes if isinstance(state, StateVector) else np.asarray(state)
    p = np.abs(amps) ** 2
    return float(np.dot(np.arange(p.size), p))


def rk4_fixed(
    model: DiabaticModel,
    t_a: float,
    t_b: float,
    state: np.ndarray,
    h: float = _RK4_STEP,
) -> np.ndarray:
    """Classical fixed-step RK4 in the diabatic picture; an independent oracle for small windows."""
    if model.has_coulomb and t_a * t_b <= 0:
        raise SingularTime("fixed-step oracle cannot cross the Coulomb pole")
    steps = max(1, int(math.ceil(abs(t_b - t_a) / h)))
    dt = (t_b - t_a) / steps
    y = np.array(state, dtype=complex)

    def f(t, v):
        return -1j * (hamiltonian_at(model, t) @ v)

    t = t_a
    for _ in range(steps):
        k1 = f(t, y)
        k2 = f(t + dt / 2, y + dt / 2 * k1)
        k3 = f(t + dt / 2, y + dt / 2 * k2)
        k4 = f(t + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
    return y


# ── Adiabatic transport ──────────────────────────────────────────────────────

def adiabatic_transport(
    frame_fn: Callable[[float], np.ndarray],
    generator_fn: Callable[[float], np.ndarray],
    grid: Sequence[float] | np.ndarray,
    reference_rate: Callable[[float], np.ndarray] | None = None,
    reference_integral: np.ndarray | None = None,
) -> np.ndarray:
    """Evolution i dU/ds = G(s) U when G(s) is diagonal in the eigenbasis of frame_fn(s).

    Eigenvectors are labelled against the diabatic basis at the first grid
    point and parallel-transported along the grid. The dynamic phase is
    ``reference_integral`` plus the Simpson integral of ⟨v|G|v⟩ − reference_rate.
    The frame spectrum must not cross along the grid.
    """
    grid = np.asarray(grid, dtype=float)
    _, V = eigh(frame_fn(grid[0]))
    rows, cols = linear_sum_assignment(-np.abs(V) ** 2)
    perm = np.empty(V.shape[0], dtype=int)
    perm[rows] = cols
    start = V[:, perm]
    prev = start
    lam = np.empty((grid.size, V.shape[0]))
    for i, s in enumerate(grid):
        if i:
            _, V = eigh(frame_fn(s))
            V = V[:, perm]
            ov = np.sum(prev.conj() * V, axis=0)
            if np.min(np.abs(ov)) < 0.5:
                raise NotConverged(f"eigenbasis turns too fast near s={s:.6g}; refine the transport grid")
            prev = V * (ov.conj() / np.abs(ov))
        lam[i] = np.real(np.einsum("in,ij,jn->n", prev.conj(), generator_fn(s), prev))
        if reference_rate is not None:
            lam[i] -= reference_rate(s)
    phase = simpson(lam, x=grid, axis=0)
    if reference_integral is not None:
        phase = phase + reference_integral
    return (prev * np.exp(-1j * phase)[None, :]) @ start.conj().T


# ── Two-time paths ───────────────────────────────────────────────────────────

@dataclass(frozen=True)
class PathLeg:
    """One straight leg in the (t, τ) plane; ``fixed`` is the coordinate held constant."""

    vary: Literal["t", "tau"]
    start: float
    stop: float
    fixed: float

    def endpoints(self) -> tuple[tuple[float, float], tuple[float, float]]:
        if self.vary == "t":
            return (self.start, self.fixed), (self.stop, self.fixed)
        return (self.fixed, self.start), (self.fixed, self.stop)


@dataclass(frozen=True)
class TwoTimePath:
    legs: tuple[PathLeg, ...]

    def __post_init__(self) -> None:
        legs = tuple(self.legs)
        for leg in legs:
            if leg.vary not in ("t", "tau"):
                raise ValueError(f"leg must vary 't' or 'tau', got '{leg.vary}'")
        for a, b in zip(legs[:-1], legs[1:]):
            end, begin = a.endpoints()[1], b.endpoints()[0]
            if max(abs(end[0] - begin[0]), abs(end[1] - begin[1])) > 1e-12:
                raise ValueError(f"path is not contiguous: {end} -> {begin}")
        object.__setattr__(self, "legs", legs)

    @classmethod
    def straight(cls, tau: float, T: float) -> "TwoTimePath":
        return cls((PathLeg("t", -T, T, tau),))

    @classmethod
    def rectangle(cls, tau: float, T: float, tau_ref: float = 1.0) -> "TwoTimePath":
        """τ_ref → τ at t = −T, then −T → T at τ, then τ → τ_ref at t = T."""
        return cls((
            PathLeg("tau", tau_ref, tau, -T),
            PathLeg("t", -T, T, tau),
            PathLeg("tau", tau, tau_ref, T),
        ))


def _t_leg(fam: ThreeStateFamily, leg: PathLeg, cfg: ScatterConfig) -> np.ndarray:
    model = three_state_model(fam, leg.fixed)
    if cfg.leg_method == "ode":
        return evolution_matrix(model, leg.start, leg.stop, cfg)

    t_c = core_window(model, cfg, cap=math.inf)
    cuts = sorted({leg.start, leg.stop} | {x for x in (-t_c, t_c) if min(leg.start, leg.stop) < x < max(leg.start, leg.stop)})
    if leg.stop < leg.start:
        cuts = cuts[::-1]
    frame = _Frame(model)
    U = np.eye(model.n, dtype=complex)
    for a, b in zip(cuts[:-1], cuts[1:]):
        if min(abs(a), abs(b)) >= t_c and a * b > 0:
            grid = math.copysign(1.0, a) * np.geomspace(abs(a), abs(b), _TRANSPORT_POINTS)
            piece = adiabatic_transport(
                lambda t: hamiltonian_at(model, t),
                lambda t: hamiltonian_at(model, t),
                grid,
                reference_rate=frame.rate,
                reference_integral=frame.phase(b) - frame.phase(a),
            )
            log.debug("[two-time] t-tail [%.4g, %.4g] by transport", a, b)
        else:
            piece = evolution_matrix(model, a, b, cfg)
        U = piece @ U
    return U


def _tau_leg(fam: ThreeStateFamily, leg: PathLeg, cfg: ScatterConfig) -> np.ndarray:
    t = leg.fixed
    t0, t1 = leg.start, leg.stop

    def spread(tau: float) -> float:
        d = np.real(np.diag(three_state_partner(fam, tau).at(t)))
        return float(np.max(d) - np.min(d))

    rate = max(spread(t0), spread(0.5 * (t0 + t1)), spread(t1))
    budget = rate * abs(t1 - t0)
    use_ode = cfg.leg_method == "ode" or (cfg.leg_method == "auto" and budget <= _ODE_PHASE_BUDGET)

    if use_ode:
        def rhs(tau, y):
            return (-1j * (three_state_partner(fam, tau).at(t) @ y.reshape(3, 3))).ravel()

        sol = solve_ivp(
            rhs, (t0, t1), np.eye(3, dtype=complex).ravel(),
            method="DOP853", rtol=cfg.rel_tol, atol=cfg.abs_tol,
            max_step=cfg.phase_step / (1.0 + rate),
        )
        if not sol.success:
            raise StepUnderflow(f"τ-leg at t={t:.6g} failed: {sol.message}")
        return sol.y[:, -1].reshape(3, 3)

    def reference_rate(tau: float) -> np.ndarray:
        p = three_state_partner(fam, tau)
        return p.Q * t * t / 2 + np.real(np.diag(p.L)) * t

    m0, m1 = three_state_model(fam, t0), three_state_model(fam, t1)
    integral = (m1.B - m0.B) * t * t / 2 + np.real(np.diag(m1.A) - np.diag(m0.A)) * t
    U = adiabatic_transport(
        lambda tau: hamiltonian_at(three_state_model(fam, tau), t),
        lambda tau: three_state_partner(fam, tau).at(t),
        np.linspace(t0, t1, _TRANSPORT_POINTS),
        reference_rate=reference_rate,
        reference_integral=integral,
    )
    leak = 1.0 - float(np.min(np.abs(np.diag(U)) ** 2))
    if t != 0 and leak > 10.0 / abs(t):
        log.warning("[two-time] τ-leg at t=%.4g mixes diabatic states (%.3g > 10/|t|)", t, leak)
    return U


def propagate_two_time(
    fam: ThreeStateFamily,
    path: TwoTimePath,
    cfg: ScatterConfig | None = None,
) -> np.ndarray:
    """Path-ordered evolution matrix along a contiguous polyline in (t, τ)."""
    cfg = cfg or ScatterConfig()
    U = np.eye(3, dtype=complex)
    for leg in path.legs:
        if leg.start == leg.stop:
            continue
        piece = _t_leg(fam, leg, cfg) if leg.vary == "t" else _tau_leg(fam, leg, cfg)
        U = piece @ U
    return U
