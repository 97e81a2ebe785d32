"""Integrable MLZ families, their commuting partners and reduced models.

Covers the three-state family parametrised by the second time τ, its
b1 → ∞ Coulomb reduction, bosonic and q-deformed chains, the four-state
bow-tie with its effective Coulomb model, and the bipartite 4-state slopes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from physics.errors import (
    ComplexCouplingUnsupported,
    ComplexExponents,
    DeformationSingular,
    DegenerateReduction,
    DegenerateSlopes,
)
from physics.model_core import DiabaticModel, TransitionMatrix

log = logging.getLogger(__name__)

_SINGULAR_TOL = 1e-12


# ── Three-state family ───────────────────────────────────────────────────────

@dataclass(frozen=True)
class PowerSlopeMap:
    """Slopes b1 = β1 τ^p1, b2 = β2 τ^p2. The default is the linear map b1 = β1 τ, b2 = β2."""

    p1: float = 1.0
    p2: float = 0.0

    def slopes(self, beta1: float, beta2: float, tau: float) -> tuple[float, float]:
        return beta1 * _power(tau, self.p1), beta2 * _power(tau, self.p2)

    def derivatives(self, beta1: float, beta2: float, tau: float) -> tuple[float, float]:
        d1 = 0.0 if self.p1 == 0 else beta1 * self.p1 * _power(tau, self.p1 - 1)
        d2 = 0.0 if self.p2 == 0 else beta2 * self.p2 * _power(tau, self.p2 - 1)
        return d1, d2


def _power(tau: float, p: float) -> float:
    if p == 0:
        return 1.0
    if tau <= 0 and (p < 0 or p != int(p)):
        raise DegenerateSlopes(f"slope map τ^{p} undefined at τ={tau}")
    return float(tau) ** p


@dataclass(frozen=True)
class ThreeStateFamily:
    gamma12: complex
    gamma13: complex
    gamma23: complex
    eps0: float
    beta1: float = 1.0
    beta2: float = 1.0
    slope_map: PowerSlopeMap = field(default_factory=PowerSlopeMap)
    rescale_couplings: bool = True
    area_rule: bool = True

    def __post_init__(self) -> None:
        if self.beta1 <= 0 or self.beta2 <= 0:
            raise ValueError("β1 and β2 must be positive")

    def slopes(self, tau: float) -> tuple[float, float]:
        b1, b2 = self.slope_map.slopes(self.beta1, self.beta2, tau)
        if b1 <= 0 or b2 <= 0:
            raise DegenerateSlopes(f"slopes b1={b1:.6g}, b2={b2:.6g} at τ={tau} must both be positive")
        return b1, b2

    def couplings(self, tau: float) -> tuple[complex, complex, complex]:
        """(g12, g13, g23) at τ."""
        if not self.rescale_couplings:
            return complex(self.gamma12), complex(self.gamma13), complex(self.gamma23)
        b1, b2 = self.slopes(tau)
        return (
            self.gamma12 * np.sqrt(b1 / self.beta1),
            self.gamma13 * np.sqrt((b1 + b2) / (self.beta1 + self.beta2)),
            self.gamma23 * np.sqrt(b2 / self.beta2),
        )

    def energy(self, tau: float) -> float:
        """Level-2 energy ε(τ); held at its τ-independent reference when the area rule is off."""
        if not self.area_rule:
            return self.eps0 * np.sqrt(self.beta1 * self.beta2 / (self.beta1 + self.beta2))
        b1, b2 = self.slopes(tau)
        return self.eps0 * np.sqrt(b1 * b2 / (b1 + b2))

    def limit_energy(self) -> float:
        """ε as b1 → ∞ at b2 = β2."""
        if not self.area_rule:
            return self.energy(1.0)
        return self.eps0 * np.sqrt(self.beta2)

    def adiabaticity(self) -> tuple[float, float, float]:
        """(λ12, λ13, λ23) = |g|²/|slope difference|, τ-independent for rescaled families."""
        return (
            abs(self.gamma12) ** 2 / self.beta1,
            abs(self.gamma13) ** 2 / (self.beta1 + self.beta2),
            abs(self.gamma23) ** 2 / self.beta2,
        )


@dataclass(frozen=True, eq=False)
class QuadraticPartner:
    """H'(t) = diag(Q) t²/2 + L t + D, commuting with the family Hamiltonian."""

    Q: np.ndarray
    L: np.ndarray
    D: np.ndarray
    r2: float

    def at(self, t: float) -> np.ndarray:
        return np.diag(self.Q * t * t / 2).astype(complex) + self.L * t + self.D

    def dt(self, t: float) -> np.ndarray:
        return np.diag(self.Q * t).astype(complex) + self.L


def three_state_model(fam: ThreeStateFamily, tau: float) -> DiabaticModel:
    b1, b2 = fam.slopes(tau)
    g12, g13, g23 = fam.couplings(tau)
    A = np.array(
        [
            [0.0, g12, g13],
            [np.conj(g12), fam.energy(tau), g23],
            [np.conj(g13), np.conj(g23), 0.0],
        ],
        dtype=complex,
    )
    return DiabaticModel(B=[b1, 0.0, -b2], A=A)


def three_state_dtau(fam: ThreeStateFamily, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form (∂τB, ∂τA)."""
    b1, b2 = fam.slopes(tau)
    db1, db2 = fam.slope_map.derivatives(fam.beta1, fam.beta2, tau)
    g12, g13, g23 = fam.couplings(tau)

    if fam.rescale_couplings:
        d12 = g12 * db1 / (2 * b1)
        d13 = g13 * (db1 + db2) / (2 * (b1 + b2))
        d23 = g23 * db2 / (2 * b2)
    else:
        d12 = d13 = d23 = 0.0
    deps = 0.0
    if fam.area_rule:
        deps = fam.energy(tau) * 0.5 * (db1 / b1 + db2 / b2 - (db1 + db2) / (b1 + b2))

    dA = np.array(
        [
            [0.0, d12, d13],
            [np.conj(d12), deps, d23],
            [np.conj(d13), np.conj(d23), 0.0],
        ],
        dtype=complex,
    )
    return np.array([db1, 0.0, -db2]), dA


def partner_rate(fam: ThreeStateFamily, tau: float) -> float:
    """r2 = (b2 ḃ1 − b1 ḃ2) / (b1 b2 (b1 + b2))."""
    b1, b2 = fam.slopes(tau)
    db1, db2 = fam.slope_map.derivatives(fam.beta1, fam.beta2, tau)
    return (b2 * db1 - b1 * db2) / (b1 * b2 * (b1 + b2))


def three_state_partner(fam: ThreeStateFamily, tau: float) -> QuadraticPartner:
    model = three_state_model(fam, tau)
    dB, dA = three_state_dtau(fam, tau)
    r2 = partner_rate(fam, tau)
    return QuadraticPartner(Q=dB, L=dA, D=0.5 * r2 * (model.A @ model.A), r2=r2)


def triangle_area(fam: ThreeStateFamily, tau: float) -> float:
    b1, b2 = fam.slopes(tau)
    return 0.5 * fam.energy(tau) ** 2 * (1.0 / b1 + 1.0 / b2)


def demo_three_state(b: float, g: float, eps: float) -> DiabaticModel:
    if b <= 0 or eps < 0:
        raise ValueError("demo model needs b > 0 and ε ≥ 0")
    A = [[0.0, g, 0.0], [g, eps / np.sqrt(2), g], [0.0, g, 0.0]]
    return DiabaticModel(B=[b, 0.0, -b], A=A)


def family_from_demo(b: float, g: float, eps: float) -> ThreeStateFamily:
    """The rescaled family whose τ = 1 member is `demo_three_state(b, g, eps)`."""
    if b <= 0 or eps < 0:
        raise ValueError("demo model needs b > 0 and ε ≥ 0")
    return ThreeStateFamily(gamma12=g, gamma13=0.0, gamma23=g, eps0=eps / np.sqrt(b), beta1=b, beta2=b)


# ── Coulomb reduction ────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class ThreeStateSplitter:
    """Fast level-1 decay into ψ1 at t = 0, followed by the effective {2, 3} Coulomb model."""

    model: DiabaticModel
    psi1: np.ndarray
    psi2: np.ndarray
    coulomb_strength: float
    p_fast: float


@dataclass(frozen=True)
class Level1Composition:
    p11: float
    p12: float
    p13: float


def reduced_two_state(b: float, g: float, eps: float) -> DiabaticModel:
    """H = [[ε − g²/(bt), g], [g, −bt]]."""
    if b <= 0:
        raise ValueError("reduced model needs b > 0")
    return DiabaticModel(B=[0.0, -b], A=[[eps, g], [g, 0.0]], K=[-(g * g) / b, 0.0])


def reduce_three_state(fam: ThreeStateFamily) -> ThreeStateSplitter:
    gammas = (fam.gamma12, fam.gamma13, fam.gamma23)
    if any(complex(g).imag != 0 for g in gammas):
        raise ComplexCouplingUnsupported("the b1 → ∞ reduction is implemented for real couplings")

    c2 = complex(fam.gamma12).real / np.sqrt(fam.beta1)
    c3 = complex(fam.gamma13).real / np.sqrt(fam.beta1 + fam.beta2)
    norm = float(np.hypot(c2, c3))
    if norm == 0.0:
        raise DegenerateReduction("level 1 is uncoupled (γ12 = γ13 = 0)")

    psi1 = np.array([c2, c3]) / norm
    psi2 = np.array([c3, -c2]) / norm
    kappa = norm * norm
    g23 = complex(fam.gamma23).real
    model = DiabaticModel(
        B=[0.0, -fam.beta2],
        A=[[fam.limit_energy(), g23], [g23, 0.0]],
        K=[-kappa, 0.0],
        coulomb_basis=np.column_stack([psi1, psi2]),
        labels=("2", "3"),
    )
    log.debug("[reduce] κ_eff=%.6g ε_lim=%.6g g23=%.6g", kappa, fam.limit_energy(), g23)
    return ThreeStateSplitter(model, psi1, psi2, kappa, 1.0 - np.exp(-2 * np.pi * kappa))


def compose_from_level1(p_fast: float, effective: TransitionMatrix | np.ndarray) -> Level1Composition:
    """Level-1 row of the full model from the fast decay and the ψ1-initialised effective row."""
    row = effective.P[0] if isinstance(effective, TransitionMatrix) else np.asarray(effective, dtype=float)
    if row.size != 2:
        raise ValueError("the effective result must be a two-entry row over levels (2, 3)")
    return Level1Composition(p11=1.0 - p_fast, p12=p_fast * float(row[0]), p13=p_fast * float(row[1]))


# ── Chains ───────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class ChainSpec:
    """Tridiagonal chain; `q` is the total deformation applied to `base_couplings`."""

    n_levels: int
    beta: float
    slopes: np.ndarray
    couplings: np.ndarray
    base_couplings: np.ndarray
    q: float = 1.0
    g_base: float = 0.0

    def __post_init__(self) -> None:
        slopes = np.asarray(self.slopes, dtype=float).reshape(-1)
        couplings = np.asarray(self.couplings, dtype=float).reshape(-1)
        base = np.asarray(self.base_couplings, dtype=float).reshape(-1)
        if slopes.size != self.n_levels or couplings.size != self.n_levels - 1 or base.size != couplings.size:
            raise ValueError("chain needs n slopes and n-1 couplings")
        for name, arr in (("slopes", slopes), ("couplings", couplings), ("base_couplings", base)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def bosonic_chain_sector(n_max: int, beta: float, g: float) -> ChainSpec:
    """Levels β n, couplings (g/√2)·√((n+1)(n+2))."""
    if n_max < 2:
        raise ValueError("a chain needs at least two levels")
    n = np.arange(n_max)
    couplings = (g / np.sqrt(2)) * np.sqrt((n[:-1] + 1.0) * (n[:-1] + 2.0))
    return ChainSpec(n_max, beta, beta * n.astype(float), couplings, couplings, g_base=g)


def q_deform(chain: ChainSpec, q: float) -> ChainSpec:
    """Deform by q on top of whatever deformation the chain already carries.

    Slopes β n / (n(1−q) + q), couplings g_n √(q / ([n(q−1)−1][n(q−1)−q])).
    The adiabaticity |g_n|²/Δ_n is preserved; q_deform(q_deform(c, q), 1/q) == c.
    """
    if q <= 0:
        raise DeformationSingular(f"q must be positive, got {q}")
    qt = chain.q * q
    n = np.arange(chain.n_levels, dtype=float)

    den = n * (1 - qt) + qt
    bad = np.flatnonzero(np.abs(den) < _SINGULAR_TOL)
    if bad.size:
        raise DeformationSingular(f"slope denominator vanishes at level {bad[0]}", index=int(bad[0]))
    slopes = chain.beta * n / den

    m = n[:-1]
    prod = (m * (qt - 1) - 1) * (m * (qt - 1) - qt)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = qt / prod
    bad = np.flatnonzero((np.abs(prod) < _SINGULAR_TOL) | ~(ratio > 0))
    if bad.size:
        raise DeformationSingular(f"coupling factor is singular or negative at link {bad[0]}", index=int(bad[0]))
    couplings = chain.base_couplings * np.sqrt(ratio)
    return replace(chain, slopes=slopes, couplings=couplings, q=qt)


def uniform_chain(n_max: int, beta: float, g: float) -> ChainSpec:
    """The q = 1/2 bosonic sector: slopes 2βn/(n+1), every coupling equal to g."""
    return q_deform(bosonic_chain_sector(n_max, beta, g), 0.5)


def chain_model(chain: ChainSpec) -> DiabaticModel:
    A = np.diag(chain.couplings, 1) + np.diag(chain.couplings, -1)
    return DiabaticModel(B=chain.slopes, A=A)


@dataclass(frozen=True, eq=False)
class ChainFamily:
    """τ-dependent chain with q(τ) = exp(−β r τ) and partner constant D = −(r/2) A²."""

    chain: ChainSpec
    r: float

    def q(self, tau: float) -> float:
        return float(np.exp(-self.chain.beta * self.r * tau))

    def at(self, tau: float) -> ChainSpec:
        return q_deform(self.chain, self.q(tau))

    def B(self, tau: float) -> np.ndarray:
        return self.at(tau).slopes

    def A(self, tau: float) -> np.ndarray:
        return chain_model(self.at(tau)).A

    def D(self, tau: float) -> np.ndarray:
        A = self.A(tau)
        return -0.5 * self.r * (A @ A)


def chain_family(chain: ChainSpec, r: float) -> ChainFamily:
    return ChainFamily(chain, r)


# ── Four-state bow-tie ───────────────────────────────────────────────────────

@dataclass(frozen=True)
class FourStateParams:
    b: float
    g1: complex
    g2: complex
    g3: complex
    g4: complex

    def __post_init__(self) -> None:
        if self.b <= 0:
            raise ValueError("four-state model needs b > 0")

    @property
    def norm(self) -> float:
        return float(np.hypot(abs(self.g1), abs(self.g2)))

    @property
    def kappa(self) -> float:
        return self.norm ** 2 / self.b

    @property
    def gamma1(self) -> complex:
        return (self.g1 * np.conj(self.g3) + self.g2 * np.conj(self.g4)) / self.norm

    @property
    def gamma2(self) -> complex:
        # ⟨ψ2|H|4⟩ with ψ2 = (g2|2⟩ − g1|3⟩)/N, orthogonal to ψ1 for complex g
        return (np.conj(self.g2) * np.conj(self.g3) - np.conj(self.g1) * np.conj(self.g4)) / self.norm

    @property
    def kappa_plus(self) -> float:
        return (abs(self.gamma1) ** 2 + abs(self.gamma2) ** 2) / self.b

    @property
    def kappa_minus(self) -> float:
        return (abs(self.gamma1) ** 2 - abs(self.gamma2) ** 2) / self.b

    def exponents(self) -> tuple[float, float]:
        """(s+, s−) of the exact ψ1 → 4 solution."""
        kp, km, k = self.kappa_plus, self.kappa_minus, self.kappa
        arg = kp * kp + k * (k - 2 * km)
        if arg < -1e-14 * max(1.0, kp * kp + k * k):
            raise ComplexExponents(f"exponent discriminant is negative ({arg:.3g})")
        root = np.sqrt(max(arg, 0.0))
        return 0.5 * (kp + k + root), 0.5 * (kp + k - root)


def four_state_model(p: FourStateParams) -> DiabaticModel:
    c = np.conj
    A = np.array(
        [
            [0.0, p.g1, p.g2, 0.0],
            [c(p.g1), 0.0, 0.0, c(p.g3)],
            [c(p.g2), 0.0, 0.0, c(p.g4)],
            [0.0, p.g3, p.g4, 0.0],
        ],
        dtype=complex,
    )
    return DiabaticModel(B=[p.b, 0.0, 0.0, -p.b], A=A, degenerate_allowed=True)


def effective_coulomb_3state(p: FourStateParams) -> DiabaticModel:
    """Model in the (ψ1, ψ2, 4) basis after level 1 decays at t = 0."""
    if p.norm == 0.0:
        raise DegenerateReduction("level 1 is uncoupled (g1 = g2 = 0)")
    g1, g2 = p.gamma1, p.gamma2
    A = np.array([[0.0, 0.0, g1], [0.0, 0.0, g2], [np.conj(g1), np.conj(g2), 0.0]], dtype=complex)
    return DiabaticModel(
        B=[0.0, 0.0, -p.b],
        A=A,
        K=[-p.kappa, 0.0, 0.0],
        degenerate_allowed=True,
        labels=("psi1", "psi2", "4"),
    )


def bipartite_4slopes(b: float, b1: float, r2: float, tau: float) -> tuple[float, float, float, float]:
    """Slope differences (Δ34, Δ24, Δ13, Δ12) of the bipartite 4-state family."""
    e = np.exp(r2 * b * tau)
    u = b + b1 * (1 - e)
    v = b * (e - 2) + b1 * (e - 1)
    if abs(u) < _SINGULAR_TOL or abs(v) < _SINGULAR_TOL:
        raise DeformationSingular(f"bipartite slopes diverge at τ={tau}")
    return (
        b,
        b * (b + b1) / u,
        -b * (b + b1) * e / v,
        -(b ** 3) * e / (u * v),
    )


def bipartite_constant(b: float, b1: float) -> float:
    return b * b / (b + b1) ** 2
