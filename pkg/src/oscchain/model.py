"""State container, vector field, and conserved diagnostics for a chain
of cubically coupled complex oscillators.

The chain evolves N complex amplitudes b_1..b_N under

    db_j/dt = i * (-|b_j|^2 b_j + 2 conj(b_j) (b_{j-1}^2 + b_{j+1}^2)),

where the ghost sites b_0 and b_{N+1} are either zero (Dirichlet
closure) or wrap around (periodic closure). The flow conserves two
quantities exactly:

* mass      M = sum_j |b_j|^2
* energy    H = sum_j ( |b_j|^4 / 4 - Re(conj(b_j)^2 b_{j-1}^2) )

and can be written as -i db/dt = g(b) with g the rescaled Wirtinger
gradient of H (see :func:`hamiltonian_gradient`), which is what the
invariant-preserving schemes in :mod:`oscchain.schemes` discretise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels

__all__ = [
    "Closure",
    "InvalidStateError",
    "StateVector",
    "TimeGrid",
    "rhs",
    "mass",
    "energy",
    "hamiltonian_gradient",
    "hs_norm",
    "hs_norm_sq",
    "ghost_padded",
]


class Closure(enum.Enum):
    """Boundary closure for the ghost sites."""

    DIRICHLET = "dirichlet"
    PERIODIC = "periodic"


class InvalidStateError(ValueError):
    """Raised for states that are empty, non-1d, or non-finite."""


@dataclass(frozen=True, eq=False)
class StateVector:
    """Immutable snapshot of the chain: complex amplitudes plus closure.

    The amplitude array is copied on construction, validated to be
    one-dimensional, nonempty and finite, and frozen read-only.
    """

    amplitudes: np.ndarray
    closure: Closure = Closure.DIRICHLET

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=np.complex128)
        if amps.ndim != 1 or amps.shape[0] < 1:
            raise InvalidStateError(
                f"amplitudes must be a nonempty 1d array, got shape {amps.shape}")
        if not np.isfinite(amps).all():
            raise InvalidStateError("amplitudes contain non-finite values")
        if not isinstance(self.closure, Closure):
            raise InvalidStateError(f"unknown closure {self.closure!r}")
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    @property
    def n(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def periodic(self) -> bool:
        return self.closure is Closure.PERIODIC

    def with_amplitudes(self, amplitudes) -> "StateVector":
        """New state with the same closure and different amplitudes."""
        return StateVector(amplitudes, self.closure)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid t_n = t0 + n*dt for n = 0..n_steps."""

    dt: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError(f"dt must be positive and finite, got {self.dt}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        if not np.isfinite(self.t0):
            raise ValueError(f"t0 must be finite, got {self.t0}")

    @property
    def t_max(self) -> float:
        return self.time_at(self.n_steps)

    def time_at(self, n: int) -> float:
        return self.t0 + n * self.dt

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)


def ghost_padded(b: np.ndarray, closure: Closure) -> np.ndarray:
    """Copy of b with the two ghost entries prepended/appended."""
    out = np.zeros(b.shape[0] + 2, dtype=np.complex128)
    out[1:-1] = b
    if closure is Closure.PERIODIC:
        out[0] = b[-1]
        out[-1] = b[0]
    return out


def rhs(state: StateVector) -> np.ndarray:
    """Time derivative of the amplitudes under the chain flow."""
    return _kernels.chain_rhs(state.amplitudes, state.periodic)


def _mass(b: np.ndarray) -> float:
    return float(np.sum(b.real * b.real + b.imag * b.imag))


def _energy(b: np.ndarray, closure: Closure) -> float:
    p = ghost_padded(b, closure)
    quartic = 0.25 * np.sum(np.abs(b) ** 4)
    coupling = np.sum(np.real(np.conj(b) ** 2 * p[:-2] ** 2))
    return float(quartic - coupling)


def _hamiltonian_gradient(b: np.ndarray, closure: Closure) -> np.ndarray:
    p = ghost_padded(b, closure)
    return (b.real ** 2 + b.imag ** 2) * b - 2.0 * np.conj(b) * (p[:-2] ** 2 + p[2:] ** 2)


def mass(state: StateVector) -> float:
    """Total intensity sum_j |b_j|^2 (conserved by the flow)."""
    return _mass(state.amplitudes)


def energy(state: StateVector) -> float:
    """sum_j(|b_j|^4/4 - Re(conj(b_j)^2 b_{j-1}^2)), with the j = 1 term
    picking up the ghost site (zero under Dirichlet, b_N under periodic,
    where the sum then runs over all N wrapped bonds)."""
    return _energy(state.amplitudes, state.closure)


def hamiltonian_gradient(state: StateVector) -> np.ndarray:
    """g_j = |b_j|^2 b_j - 2 conj(b_j)(b_{j-1}^2 + b_{j+1}^2).

    Convention: the real gradient of energy w.r.t. (Re b_j, Im b_j) is
    (Re g_j, Im g_j), i.e. g = 2 dH/d(conj b) in Wirtinger form, and the
    flow reads rhs = -i * g. That identity is what makes the chain
    Hamiltonian and is pinned down in the tests.
    """
    return _hamiltonian_gradient(state.amplitudes, state.closure)


def hs_norm_sq(state: StateVector, s: float) -> float:
    """Squared geometrically weighted norm sum_{j=1..N} 2^{(s-1)j}|b_j|^2.

    s = 1 reduces to the mass; larger s puts exponentially more weight
    on the high end of the chain, which is what makes the norm a probe
    of intensity migrating towards large j.
    """
    b = state.amplitudes
    j = np.arange(1, b.shape[0] + 1, dtype=np.float64)
    weights = np.exp2((s - 1.0) * j)
    return float(weights @ (b.real ** 2 + b.imag ** 2))


def hs_norm(state: StateVector, s: float) -> float:
    return float(np.sqrt(hs_norm_sq(state, s)))
