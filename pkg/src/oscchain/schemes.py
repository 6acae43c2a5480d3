"""One-step integrators for the oscillator chain.

Four implicit two-point schemes share the update b_new = b_old + dt * F
with a symmetric flux F(b_old, b_new):

* TRAPEZOIDAL       F = (rhs(b_old) + rhs(b_new)) / 2
* IMPLICIT_MIDPOINT F = rhs((b_old + b_new) / 2); conserves mass
* MASS              midpoint flux with the cubic self term damped by the
                    averaged modulus; conserves mass
* ENERGY            additionally averages the neighbour squares over the
                    endpoints; conserves energy

plus two explicit ones: classical RK4, and PROJECTION (an RK4 predictor
pulled back onto the joint mass/energy level set along the frozen
invariant gradients, with the two Lagrange multipliers found by Newton).

All implicit solves run through :func:`oscchain.newton.newton_solve` on
the real-split unknowns, with the analytic block-tridiagonal Jacobian
assembled in closed form.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import StateVector, InvalidStateError
from .newton import (BlockTridiagonalMatrix, SolverConfig, SolverStats,
                     SingularMatrixError, newton_solve,
                     PROJECTION_SOLVER_DEFAULTS)
from . import model

__all__ = [
    "SchemeKind",
    "IMPLICIT_SCHEMES",
    "CONSERVING_SCHEMES",
    "UnsupportedSchemeError",
    "NonlinearAverages",
    "StepResult",
    "nonlinear_averages",
    "residual",
    "jacobian",
    "step_implicit",
    "reverse_step_implicit",
    "step_rk4",
    "step_projection",
]


class SchemeKind(enum.Enum):
    TRAPEZOIDAL = "trapezoidal"
    IMPLICIT_MIDPOINT = "implicit_midpoint"
    MASS = "mass"
    ENERGY = "energy"
    RK4 = "rk4"
    PROJECTION = "projection"


IMPLICIT_SCHEMES = (SchemeKind.TRAPEZOIDAL, SchemeKind.IMPLICIT_MIDPOINT,
                    SchemeKind.MASS, SchemeKind.ENERGY)

# scheme -> which invariants its steps preserve to solver tolerance
CONSERVING_SCHEMES = {
    SchemeKind.IMPLICIT_MIDPOINT: ("mass",),
    SchemeKind.MASS: ("mass",),
    SchemeKind.ENERGY: ("energy",),
    SchemeKind.PROJECTION: ("mass", "energy"),
}

_SCHEME_IDS = {
    SchemeKind.TRAPEZOIDAL: _kernels.TRAPEZOIDAL,
    SchemeKind.IMPLICIT_MIDPOINT: _kernels.IMPLICIT_MIDPOINT,
    SchemeKind.MASS: _kernels.MASS,
    SchemeKind.ENERGY: _kernels.ENERGY,
}


class UnsupportedSchemeError(ValueError):
    """Operation asked for an implicit-scheme quantity of an explicit scheme."""


@dataclass(frozen=True)
class NonlinearAverages:
    """The four two-point averages the implicit fluxes are built from.

    For an endpoint pair (b_old, b_new), per site:
    midpoint (b_old+b_new)/2, its square, the averaged square
    (b_old^2+b_new^2)/2, and the averaged squared modulus
    (|b_old|^2+|b_new|^2)/2. All four collapse to the pointwise values
    when b_old == b_new, which is what makes every flux consistent with
    the continuous vector field.
    """

    midpoint: np.ndarray
    squared_midpoint: np.ndarray
    averaged_square: np.ndarray
    averaged_modulus_sq: np.ndarray


def nonlinear_averages(b_old: StateVector, b_new: StateVector) -> NonlinearAverages:
    _check_pair(b_old, b_new)
    a, b = b_old.amplitudes, b_new.amplitudes
    mid = 0.5 * (a + b)
    return NonlinearAverages(
        midpoint=mid,
        squared_midpoint=mid * mid,
        averaged_square=0.5 * (a * a + b * b),
        averaged_modulus_sq=0.5 * (np.abs(a) ** 2 + np.abs(b) ** 2),
    )


@dataclass(frozen=True)
class StepResult:
    """Outcome of one step attempt.

    On a rejected step (Newton hit max_iters, a singular Jacobian, or
    the projection failed) `accepted` is False and `next_state` carries
    the last finite iterate (the unprojected predictor for PROJECTION,
    the input state if nothing finite is available).
    """

    next_state: StateVector
    stats: SolverStats
    accepted: bool = True


def _check_pair(b_old: StateVector, b_new: StateVector) -> None:
    if b_old.n != b_new.n or b_old.closure is not b_new.closure:
        raise InvalidStateError("endpoint states must share length and closure")


def _require_implicit(scheme: SchemeKind) -> int:
    try:
        return _SCHEME_IDS[scheme]
    except KeyError:
        raise UnsupportedSchemeError(
            f"{scheme.name} has no two-point residual") from None


def residual(scheme: SchemeKind, b_old: StateVector, b_new: StateVector,
             dt: float) -> np.ndarray:
    """Complex residual b_new - b_old - dt*F(b_old, b_new) of an implicit
    scheme; its root is the accepted step."""
    sid = _require_implicit(scheme)
    _check_pair(b_old, b_new)
    return _kernels.scheme_residual(sid, b_old.amplitudes, b_new.amplitudes,
                                    dt, b_old.periodic)


def jacobian(scheme: SchemeKind, b_old: StateVector, b_new: StateVector,
             dt: float) -> BlockTridiagonalMatrix:
    """Jacobian of the real-split residual w.r.t. b_new.

    Real-split means the unknowns are ordered (Re b_1, Im b_1, Re b_2,
    Im b_2, ...); the nearest-neighbour coupling then gives 2x2 blocks on
    three diagonals, plus corner blocks for the periodic wrap. At dt = 0
    this is exactly the identity.
    """
    sid = _require_implicit(scheme)
    _check_pair(b_old, b_new)
    diag, lower, upper, ctr, cbl, has_corners = _kernels.scheme_jacobian_blocks(
        sid, b_old.amplitudes, b_new.amplitudes, dt, b_old.periodic)
    if has_corners:
        return BlockTridiagonalMatrix(diag, lower, upper, ctr, cbl)
    return BlockTridiagonalMatrix(diag, lower, upper)


def _as_real(z: np.ndarray) -> np.ndarray:
    """Interleaved (Re, Im) float64 view of a complex vector."""
    return np.ascontiguousarray(z).view(np.float64)


def _as_complex(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x).view(np.complex128)


def _check_dt(dt: float) -> None:
    if not (np.isfinite(dt) and dt > 0.0):
        raise ValueError(f"dt must be positive and finite, got {dt}")


def _solve_implicit(scheme: SchemeKind, state: StateVector, dt: float,
                    config: SolverConfig) -> StepResult:
    sid = _SCHEME_IDS[scheme]
    b0 = state.amplitudes
    periodic = state.periodic

    def residual_fn(x):
        r = _kernels.scheme_residual(sid, b0, _as_complex(x), dt, periodic)
        return r.view(np.float64)

    def jacobian_fn(x):
        diag, lower, upper, ctr, cbl, has_corners = \
            _kernels.scheme_jacobian_blocks(sid, b0, _as_complex(x), dt, periodic)
        if has_corners:
            return BlockTridiagonalMatrix(diag, lower, upper, ctr, cbl)
        return BlockTridiagonalMatrix(diag, lower, upper)

    if config.rk2_predictor:
        # one explicit midpoint stage; cuts an iteration off small-dt solves
        guess_c = b0 + dt * _kernels.chain_rhs(
            b0 + (0.5 * dt) * _kernels.chain_rhs(b0, periodic), periodic)
        guess = guess_c.view(np.float64)
    else:
        guess = _as_real(b0).copy()

    try:
        x, stats = newton_solve(residual_fn, jacobian_fn, guess, config)
    except SingularMatrixError:
        stats = SolverStats(termination_reason="singular")
        return StepResult(state, stats, accepted=False)

    z = _as_complex(x).copy()
    if not stats.converged or not np.isfinite(z).all():
        carried = state if not np.isfinite(z).all() else state.with_amplitudes(z)
        return StepResult(carried, stats, accepted=False)
    return StepResult(state.with_amplitudes(z), stats)


def step_implicit(scheme: SchemeKind, state: StateVector, dt: float,
                  config: SolverConfig | None = None) -> StepResult:
    """Advance one implicit step of size dt > 0."""
    _check_dt(dt)
    _require_implicit(scheme)
    return _solve_implicit(scheme, state, dt, config or SolverConfig())


def reverse_step_implicit(scheme: SchemeKind, state: StateVector, dt: float,
                          config: SolverConfig | None = None) -> StepResult:
    """Advance one implicit step of size -dt.

    The fluxes are symmetric in their endpoints, so stepping forward and
    then through this exactly undoes a step (to solver tolerance).
    """
    _check_dt(dt)
    _require_implicit(scheme)
    return _solve_implicit(scheme, state, -dt, config or SolverConfig())


def step_rk4(state: StateVector, dt: float) -> StateVector:
    """Classical explicit RK4 step."""
    _check_dt(dt)
    out = _kernels.rk4_step(state.amplitudes, dt, state.periodic)
    return state.with_amplitudes(out)


def step_projection(state: StateVector, dt: float,
                    mass_target: float, energy_target: float,
                    config: SolverConfig | None = None,
                    refresh_directions: bool = False) -> StepResult:
    """RK4 predictor followed by projection onto the level set
    {mass == mass_target, energy == energy_target}.

    The corrected state is b* + lam_m * gm + lam_h * gh where gm, gh are
    the invariant gradients at the predictor b* (kept frozen while the
    2x2 multiplier system is Newton-solved; set refresh_directions to
    re-evaluate them at the current corrected point each iteration).
    On failure the unprojected predictor is returned with accepted False.
    """
    _check_dt(dt)
    cfg = config or PROJECTION_SOLVER_DEFAULTS
    closure = state.closure
    pred = _kernels.rk4_step(state.amplitudes, dt, state.periodic)

    gm = 2.0 * pred
    gh = model._hamiltonian_gradient(pred, closure)

    def corrected(lam):
        return pred + lam[0] * gm + lam[1] * gh

    def residual_fn(lam):
        z = corrected(lam)
        return np.array([model._mass(z) - mass_target,
                         model._energy(z, closure) - energy_target])

    def jacobian_fn(lam):
        z = corrected(lam)
        gmz = 2.0 * z
        ghz = model._hamiltonian_gradient(z, closure)
        # d(invariant)/d(lam) = Re <grad at corrected, frozen direction>
        return np.array([
            [_re_inner(gmz, gm), _re_inner(gmz, gh)],
            [_re_inner(ghz, gm), _re_inner(ghz, gh)],
        ])

    try:
        if refresh_directions:
            z, stats = _refreshed_projection(pred, closure, mass_target,
                                             energy_target, cfg)
        else:
            lam, stats = newton_solve(residual_fn, jacobian_fn,
                                      np.zeros(2), cfg)
            z = corrected(lam)
    except SingularMatrixError:
        stats = SolverStats(termination_reason="singular")
        return StepResult(state.with_amplitudes(pred), stats, accepted=False)

    if not stats.converged or not np.isfinite(z).all():
        return StepResult(state.with_amplitudes(pred), stats, accepted=False)
    return StepResult(state.with_amplitudes(z), stats)


def _re_inner(grad: np.ndarray, direction: np.ndarray) -> float:
    """Real-split inner product <grad, direction> with both sides encoded
    as complex vectors (Re <-> first component, Im <-> second)."""
    return float(np.sum(grad.real * direction.real + grad.imag * direction.imag))


def _refreshed_projection(pred, closure, mass_target, energy_target,
                          cfg: SolverConfig):
    """Projection variant that re-freezes the directions at the current
    corrected point before every multiplier update."""
    stats = SolverStats()
    z = pred.copy()
    r = np.array([model._mass(z) - mass_target,
                  model._energy(z, closure) - energy_target])
    stats.function_evals = 1
    rnorm = float(np.linalg.norm(r))
    rnorm0 = rnorm
    if rnorm <= cfg.abs_tol:
        stats.final_residual_norm = rnorm
        stats.termination_reason = "abs"
        return z, stats
    for _ in range(cfg.max_iters):
        gm = 2.0 * z
        gh = model._hamiltonian_gradient(z, closure)
        jac = np.array([[_re_inner(gm, gm), _re_inner(gm, gh)],
                        [_re_inner(gh, gm), _re_inner(gh, gh)]])
        stats.jacobian_evals += 1
        try:
            dlam = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError(str(exc)) from exc
        z = z + dlam[0] * gm + dlam[1] * gh
        r = np.array([model._mass(z) - mass_target,
                      model._energy(z, closure) - energy_target])
        stats.function_evals += 1
        stats.iterations += 1
        rnorm = float(np.linalg.norm(r))
        if rnorm <= cfg.abs_tol:
            stats.termination_reason = "abs"
            break
        if rnorm <= cfg.rel_tol * rnorm0:
            stats.termination_reason = "rel"
            break
        step = float(np.linalg.norm(dlam))
        if step <= cfg.step_tol * max(float(np.linalg.norm(z)), 1e-300):
            stats.termination_reason = "step"
            break
    else:
        stats.termination_reason = "max_iters"
    stats.final_residual_norm = rnorm
    return z, stats
