"""Diabatic MLZ Hamiltonians H(t) = Q t²/2 + B t + A + K/t and their elementary evaluations.

Everything here is immutable and pure, so models can be shared freely between
sweep workers.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from physics.errors import BranchAmbiguity, SingularTime

log = logging.getLogger(__name__)

_HERMITIAN_RTOL = 1e-14
_UNITARY_TOL = 1e-10
BRANCH_TOL = 1e-9
_TRACK_SAMPLES = 2048

Picture = Literal["diabatic", "interaction", "adiabatic"]


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


# ── Types ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class DiabaticModel:
    """One MLZ-type Hamiltonian in the diabatic basis.

    ``Q``, ``B`` and ``K`` are diagonal and stored as vectors. The 1/t term acts
    as ``U diag(K) U^†`` when ``coulomb_basis`` (a unitary ``U``) is given,
    which is how reduced models keep K diagonal in their own ψ-basis.
    """

    B: np.ndarray
    A: np.ndarray
    Q: np.ndarray | None = None
    K: np.ndarray | None = None
    coulomb_basis: np.ndarray | None = None
    degenerate_allowed: bool = False
    labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        B = np.asarray(self.B, dtype=float).reshape(-1)
        n = B.size
        if n < 1:
            raise ValueError("a model needs at least one level")
        A = np.asarray(self.A, dtype=complex)
        if A.shape != (n, n):
            raise ValueError(f"A must be {n}x{n}, got {A.shape}")
        scale = max(1.0, float(np.max(np.abs(A))))
        if np.max(np.abs(A - A.conj().T)) > _HERMITIAN_RTOL * scale:
            raise ValueError("coupling matrix A is not Hermitian")
        A = 0.5 * (A + A.conj().T)

        Q = np.zeros(n) if self.Q is None else np.asarray(self.Q, dtype=float).reshape(-1)
        K = np.zeros(n) if self.K is None else np.asarray(self.K, dtype=float).reshape(-1)
        if Q.size != n or K.size != n:
            raise ValueError("Q and K must have one entry per level")

        U = None
        if self.coulomb_basis is not None:
            U = np.asarray(self.coulomb_basis, dtype=complex)
            if U.shape != (n, n) or np.max(np.abs(U.conj().T @ U - np.eye(n))) > _UNITARY_TOL:
                raise ValueError("coulomb_basis must be an n x n unitary matrix")

        labels = tuple(self.labels) if self.labels is not None else tuple(str(i + 1) for i in range(n))
        if len(labels) != n:
            raise ValueError("one label per level is required")

        object.__setattr__(self, "B", _readonly(B))
        object.__setattr__(self, "A", _readonly(A))
        object.__setattr__(self, "Q", _readonly(Q))
        object.__setattr__(self, "K", _readonly(K))
        object.__setattr__(self, "coulomb_basis", None if U is None else _readonly(U))
        object.__setattr__(self, "labels", labels)

        C = np.diag(K).astype(complex)
        if U is not None:
            C = U @ C @ U.conj().T
            C = 0.5 * (C + C.conj().T)
        object.__setattr__(self, "_coulomb", _readonly(C))

    @property
    def n(self) -> int:
        return self.B.size

    @property
    def has_coulomb(self) -> bool:
        return bool(np.any(self.K != 0.0))

    @property
    def coulomb_matrix(self) -> np.ndarray:
        """The Hermitian matrix multiplying 1/t."""
        return self._coulomb

    def coupled(self, n: int, m: int) -> bool:
        return bool(self.A[n, m] != 0 or self._coulomb[n, m] != 0)

    def degenerate_groups(self) -> list[tuple[int, ...]]:
        """Levels sharing both Q and B, grouped; singletons included."""
        groups: dict[tuple[float, float], list[int]] = {}
        for i in range(self.n):
            groups.setdefault((float(self.Q[i]), float(self.B[i])), []).append(i)
        return [tuple(g) for g in groups.values()]


@dataclass(frozen=True, eq=False)
class StateVector:
    amplitudes: np.ndarray
    picture: Picture = "diabatic"
    t: complex = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "amplitudes", _readonly(np.asarray(self.amplitudes, dtype=complex).reshape(-1)))

    @classmethod
    def basis(cls, n: int, index: int, t: complex = 0.0) -> "StateVector":
        if not 0 <= index < n:
            raise ValueError(f"basis index {index} outside 0..{n - 1}")
        amps = np.zeros(n, dtype=complex)
        amps[index] = 1.0
        return cls(amps, "diabatic", t)

    @property
    def n(self) -> int:
        return self.amplitudes.size

    @property
    def norm2(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    @property
    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """P[m, n] = probability m -> n. Rows may be a subset of initial states."""

    P: np.ndarray
    sources: tuple[int, ...] = field(default=())
    residual_row: float = 0.0
    residual_col: float | None = None

    def __post_init__(self) -> None:
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        if np.any(P < -1e-9) or np.any(P > 1 + 1e-9):
            raise ValueError("transition probabilities must lie in [0, 1]")
        sources = tuple(self.sources) if self.sources else tuple(range(P.shape[0]))
        object.__setattr__(self, "P", _readonly(P))
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "residual_row", float(np.max(np.abs(P.sum(axis=1) - 1.0))))
        if P.shape[0] == P.shape[1]:
            object.__setattr__(self, "residual_col", float(np.max(np.abs(P.sum(axis=0) - 1.0))))

    @classmethod
    def from_evolution(cls, U: np.ndarray) -> "TransitionMatrix":
        """From an evolution matrix with U[n, m] = <n|U|m>."""
        return cls(np.abs(np.asarray(U).T) ** 2)

    def row(self, source: int) -> np.ndarray:
        return self.P[self.sources.index(source)]

    def max_deviation(self, other: "TransitionMatrix") -> float:
        return float(np.max(np.abs(self.P - other.P)))


# ── Evaluation ───────────────────────────────────────────────────────────────

def hamiltonian_at(model: DiabaticModel, t: complex) -> np.ndarray:
    t = complex(t)
    if t == 0 and model.has_coulomb:
        raise SingularTime("H(t) is singular at t=0 when K is nonzero")
    H = model.A.astype(complex)
    H[np.diag_indices(model.n)] += model.Q * t * t / 2 + model.B * t
    if model.has_coulomb:
        H += model.coulomb_matrix / t
    if t.imag == 0:
        H = 0.5 * (H + H.conj().T)
    return H


def hamiltonian_stack(model: DiabaticModel, ts: Sequence[complex] | np.ndarray) -> np.ndarray:
    """H at many times at once, shape (len(ts), n, n)."""
    ts = np.asarray(ts, dtype=complex).reshape(-1)
    if model.has_coulomb and np.any(ts == 0):
        raise SingularTime("H(t) is singular at t=0 when K is nonzero")
    H = np.broadcast_to(model.A, (ts.size, model.n, model.n)).copy()
    idx = np.arange(model.n)
    H[:, idx, idx] += ts[:, None] ** 2 * model.Q[None, :] / 2 + ts[:, None] * model.B[None, :]
    if model.has_coulomb:
        H += model.coulomb_matrix[None, :, :] / ts[:, None, None]
    return H


def spectrum(model: DiabaticModel, ts: Sequence[float] | np.ndarray) -> np.ndarray:
    """Adiabatic energies (ascending) on a real time grid, shape (len(ts), n)."""
    ts = np.asarray(ts, dtype=float).reshape(-1)
    return np.linalg.eigvalsh(hamiltonian_stack(model, ts))


def gap_squared(model: DiabaticModel, ts: complex | np.ndarray) -> np.ndarray:
    """ΔE² = (H11 − H22)² + 4 H12 H21 for a two-level model (analytic in t)."""
    if model.n != 2:
        raise ValueError("complex-time gaps are defined for two-level models only")
    H = hamiltonian_stack(model, np.atleast_1d(ts))
    return (H[:, 0, 0] - H[:, 1, 1]) ** 2 + 4.0 * H[:, 0, 1] * H[:, 1, 0]


@dataclass(frozen=True, eq=False)
class GapBranch:
    """ΔE continued along a polyline from a real anchor.

    ``at`` evaluates the same branch at any point close to the sampled path,
    picking the sign of the principal root nearest to the tracked value.
    """

    model: DiabaticModel
    points: np.ndarray
    values: np.ndarray

    def at(self, t: complex) -> complex:
        k = int(np.argmin(np.abs(self.points - t)))
        root = complex(np.sqrt(gap_squared(self.model, t)[0]))
        ref = self.values[k]
        return root if abs(root - ref) <= abs(root + ref) else -root


def track_gap(
    model: DiabaticModel,
    vertices: Sequence[complex],
    samples_per_segment: int = _TRACK_SAMPLES,
    branch_tol: float = BRANCH_TOL,
) -> GapBranch:
    """Sign-track ΔE along the polyline ``vertices``.

    The branch is anchored so that ΔE has a nonnegative real part at the first
    vertex (the positive gap on the real axis). The final vertex may sit on a
    degeneracy; any interior sample closer than ``branch_tol`` (relative) is a
    `BranchAmbiguity`.
    """
    verts = np.asarray(vertices, dtype=complex).reshape(-1)
    if verts.size < 2:
        raise ValueError("a path needs at least two vertices")
    pieces = [np.linspace(a, b, samples_per_segment + 1)[:-1] for a, b in zip(verts[:-1], verts[1:])]
    points = np.concatenate(pieces + [verts[-1:]])

    roots = np.sqrt(gap_squared(model, points))
    scale = max(1.0, float(np.max(np.abs(roots))))
    if np.any(np.abs(roots[1:-1]) < branch_tol * scale):
        k = 1 + int(np.argmin(np.abs(roots[1:-1])))
        raise BranchAmbiguity(f"path passes through a degeneracy near t={points[k]:.6g}")

    values = np.empty_like(roots)
    values[0] = roots[0] if roots[0].real >= 0 else -roots[0]
    for k in range(1, roots.size):
        r = roots[k]
        values[k] = r if abs(r - values[k - 1]) <= abs(r + values[k - 1]) else -r
    return GapBranch(model, _readonly(points), _readonly(values))


def eigen_gap(
    model: DiabaticModel,
    t: complex,
    path: Sequence[complex] | None = None,
    branch_tol: float = BRANCH_TOL,
) -> np.ndarray:
    """Adjacent eigenvalue gaps at real t, or the tracked ΔE of a 2-level model at complex t.

    For complex t without a path, the straight segment from Re t (or 1 when
    Re t = 0) is used.
    """
    t = complex(t)
    if t.imag == 0 and path is None:
        return np.diff(np.linalg.eigvalsh(hamiltonian_at(model, t.real))).astype(complex)
    if model.n != 2:
        raise ValueError("complex-time gaps are defined for two-level models only")
    if path is None:
        path = [t.real if t.real != 0 else 1.0, t]
    elif complex(path[-1]) != t:
        path = list(path) + [t]
    branch = track_gap(model, path, branch_tol=branch_tol)
    return branch.values[-1:].copy()
