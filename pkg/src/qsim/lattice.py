"""Spin configurations, Ising problems and relation matrices.

Energies follow the convention

    H(x) = -sum_{l<k} J_lk x_l x_k - sum_k h_k x_k + offset

with the pair sum running over unordered pairs, so for a symmetric,
zero-diagonal ``J`` this equals ``-x.J.x / 2 - h.x + offset``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def as_spins(x) -> np.ndarray:
    """Validate ``x`` as a spin configuration and return it as an int8 array.

    Raises
    ------
    ValueError
        If any entry is not exactly -1 or +1, or the vector is empty.
    """
    arr = np.asarray(x)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("spin configuration must be a non-empty 1-D vector")
    if not np.all((arr == 1) | (arr == -1)):
        raise ValueError("spins must be exactly -1 or +1")
    return arr.astype(np.int8)


def random_spins(n: int, rng: np.random.Generator) -> np.ndarray:
    return (2 * rng.integers(0, 2, size=n) - 1).astype(np.int8)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class IsingProblem:
    """Symmetric coupling matrix, external field and constant energy offset."""

    coupling: np.ndarray
    field: np.ndarray = None
    offset: float = 0.0

    def __post_init__(self):
        J = np.asarray(self.coupling, dtype=float)
        if J.ndim != 2 or J.shape[0] != J.shape[1] or J.shape[0] == 0:
            raise ValueError(f"coupling must be a non-empty square matrix, got shape {J.shape}")
        if not np.array_equal(J, J.T):
            raise ValueError("coupling matrix must be symmetric")
        if np.any(np.diag(J) != 0):
            raise ValueError("coupling matrix must have a zero diagonal")
        h = np.zeros(J.shape[0]) if self.field is None else np.asarray(self.field, dtype=float)
        if h.shape != (J.shape[0],):
            raise ValueError(f"field has shape {h.shape}, expected ({J.shape[0]},)")
        object.__setattr__(self, "coupling", _frozen(J))
        object.__setattr__(self, "field", _frozen(h))
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def n(self) -> int:
        return self.coupling.shape[0]

    def local_fields(self, x) -> np.ndarray:
        """``J x + h``; flipping spin i changes the energy by ``2 x_i * fields[i]``."""
        return self.coupling @ np.asarray(x, dtype=float) + self.field

    def flip_delta(self, x, i: int) -> float:
        x = np.asarray(x, dtype=float)
        return float(2.0 * x[i] * (self.coupling[i] @ x + self.field[i]))

    def relabel(self, perm) -> "IsingProblem":
        """Problem with spin ``perm[k]`` of the original placed at index ``k``."""
        perm = np.asarray(perm)
        return IsingProblem(self.coupling[np.ix_(perm, perm)], self.field[perm], self.offset)


def hamiltonian(problem: IsingProblem, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.n,):
        raise ValueError(f"spin vector of length {x.size} does not match problem size {problem.n}")
    return float(-0.5 * x @ problem.coupling @ x - problem.field @ x + problem.offset)


def magnetization(x) -> float:
    x = as_spins(x)
    return float(x.sum()) / x.size


# Exact unit-circle values for multiples of pi/2 so that quadrature
# relation matrices have Re{a} == 0 bit for bit.
_QUARTER_TURNS = np.array([1.0 + 0j, 1j, -1.0 + 0j, -1j])


@dataclass(frozen=True, eq=False)
class RelationMatrix:
    """Diagonal unitary ``A = diag(exp(j*theta_l))`` tying section-2 spins to section-1 spins."""

    phases: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.phases, dtype=float)
        if th.ndim != 1:
            raise ValueError("phases must be a 1-D vector")
        object.__setattr__(self, "phases", _frozen(th))

    @classmethod
    def identity(cls, n: int) -> "RelationMatrix":
        return cls(np.zeros(n))

    @classmethod
    def quadrature(cls, signs) -> "RelationMatrix":
        """``a_l = +j`` where ``signs[l] > 0`` and ``-j`` otherwise."""
        s = np.asarray(signs)
        return cls(np.where(s > 0, np.pi / 2, 3 * np.pi / 2))

    @property
    def n(self) -> int:
        return self.phases.size

    @property
    def entries(self) -> np.ndarray:
        quarters = self.phases / (np.pi / 2)
        k = np.rint(quarters)
        snap = np.abs(quarters - k) < 1e-12
        out = np.exp(1j * self.phases)
        out[snap] = _QUARTER_TURNS[k[snap].astype(int) % 4]
        return out

    @property
    def quadrature_signs(self) -> np.ndarray | None:
        """+1/-1 for entries ``+j``/``-j``; ``None`` if any entry is not quadrature."""
        a = self.entries
        if np.any(a.real != 0) or np.any(np.abs(a.imag) != 1):
            return None
        return np.sign(a.imag).astype(np.int8)


def theta_spins(x, A: RelationMatrix) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != (A.n,):
        raise ValueError("spin vector and relation matrix sizes differ")
    return A.entries * x
