"""Benchmark studies: pointwise convergence against a fine RK4 surrogate,
nonlinear-solver cost, and long-horizon invariant bias across schemes.

Convention used by the studies here: a horizon t_max with step dt covers
the comparison times t_n = n*dt for 0 <= t_n < t_max, i.e. the endpoint
itself is not sampled. All maxima (error, invariant drift) and per-step
cost averages run over that open window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import _kernels
from .model import StateVector, Closure, mass, energy
from .newton import SolverConfig, PROJECTION_SOLVER_DEFAULTS
from .ensemble import EnsembleSpec, EnsembleSeries, run_ensemble
from .schemes import SchemeKind, step_implicit, step_projection

__all__ = [
    "DT_LADDER",
    "ConvergenceReport",
    "CostReport",
    "ConfigurationError",
    "SurrogateError",
    "StepFailureError",
    "shock_ic",
    "trajectory_states",
    "max_pointwise_error",
    "convergence_study",
    "cost_study",
    "long_time_bias_study",
]

DT_LADDER = (0.1, 0.05, 0.025, 0.0125)


class ConfigurationError(ValueError):
    """Incompatible study parameters (misaligned grids and the like)."""


class SurrogateError(RuntimeError):
    """The surrogate failed its self-consistency cross-check."""


class StepFailureError(RuntimeError):
    """A scheme step failed inside a study that needs full trajectories."""


@dataclass(frozen=True)
class ConvergenceReport:
    """Per-scheme outcome of a convergence study.

    errors[i] is the max 2-norm deviation from the surrogate over the
    comparison window at dts[i]; fitted_order the least-squares slope of
    log(error) against log(dt); the drift tuples hold the max relative
    invariant deviations over the same windows.
    """

    scheme: SchemeKind
    dts: tuple[float, ...]
    errors: tuple[float, ...]
    fitted_order: float
    mass_drifts: tuple[float, ...]
    energy_drifts: tuple[float, ...]


@dataclass(frozen=True)
class CostReport:
    """Per-scheme nonlinear-solver cost averages.

    For PROJECTION the counters describe the 2x2 multiplier solve; the
    four RK4 stages of its predictor are accounted separately in
    predictor_function_evals (4.0), which is zero for the implicit
    schemes and 4.0 for plain RK4 (whose "predictor" is the whole step).
    """

    scheme: SchemeKind
    dts: tuple[float, ...]
    mean_iterations: tuple[float, ...]
    mean_function_evals: tuple[float, ...]
    predictor_function_evals: float


def shock_ic(n_sites: int = 100, closure: Closure = Closure.DIRICHLET) -> StateVector:
    """Uniform-modulus phase ramp b_j = e^{i (j-1) pi / 4}.

    Evolves into a rarefaction fan on the left half of the chain and a
    dispersive shock on the right; a standard stress test because every
    site carries O(1) intensity.
    """
    j = np.arange(n_sites)
    return StateVector(np.exp(1j * j * np.pi / 4.0), closure)


def _window_steps(t_max: float, dt: float) -> int:
    ratio = t_max / dt
    count = round(ratio)
    if count < 2 or abs(ratio - count) > 1e-9 * count:
        raise ConfigurationError(
            f"t_max={t_max} must be an integer multiple (>= 2) of dt={dt}")
    return count - 1


def trajectory_states(scheme: SchemeKind, ic: StateVector, dt: float,
                      n_steps: int, config: SolverConfig | None = None,
                      ) -> list[np.ndarray]:
    """Amplitude snapshots [b_0, b_1, ..., b_{n_steps}] of one run.

    config applies to the implicit schemes' Newton solve; projection's
    multiplier solve runs at PROJECTION_SOLVER_DEFAULTS regardless.
    Raises StepFailureError if any step is rejected.
    """
    out = [ic.amplitudes.copy()]
    state = ic
    if scheme is SchemeKind.RK4:
        b = ic.amplitudes.copy()
        for _ in range(n_steps):
            b = _kernels.rk4_step(b, dt, ic.periodic)
            out.append(b.copy())
        return out
    if scheme is SchemeKind.PROJECTION:
        m0, h0 = mass(ic), energy(ic)
        for n in range(n_steps):
            res = step_projection(state, dt, m0, h0,
                                  PROJECTION_SOLVER_DEFAULTS)
            if not res.accepted:
                raise StepFailureError(f"projection step {n + 1} failed")
            state = res.next_state
            out.append(state.amplitudes.copy())
        return out
    cfg = config or SolverConfig()
    for n in range(n_steps):
        res = step_implicit(scheme, state, dt, cfg)
        if not res.accepted:
            raise StepFailureError(
                f"{scheme.name} step {n + 1} failed "
                f"({res.stats.termination_reason})")
        state = res.next_state
        out.append(state.amplitudes.copy())
    return out


def max_pointwise_error(states_a: Sequence[np.ndarray],
                        states_b: Sequence[np.ndarray]) -> float:
    """max_n ||a_n - b_n||_2 over aligned state sequences."""
    if len(states_a) != len(states_b):
        raise ConfigurationError("state sequences must have equal length")
    return max(
        (float(np.linalg.norm(a - b)) for a, b in zip(states_a, states_b)),
        default=0.0)


def _surrogate_states(ic: StateVector, surrogate_dt: float, n_fine: int,
                      keep_every: int, verify: bool) -> dict[int, np.ndarray]:
    """Fine RK4 reference trajectory, stored at multiples of keep_every.

    With verify on, the final state is cross-checked against a run at
    half the step; disagreement beyond 1e-8 raises SurrogateError.
    """
    b = ic.amplitudes.copy()
    periodic = ic.periodic
    store = {0: b.copy()}
    for n in range(1, n_fine + 1):
        b = _kernels.rk4_step(b, surrogate_dt, periodic)
        if n % keep_every == 0:
            store[n] = b.copy()
    if verify:
        c = ic.amplitudes.copy()
        for _ in range(2 * n_fine):
            c = _kernels.rk4_step(c, 0.5 * surrogate_dt, periodic)
        gap = float(np.linalg.norm(b - c))
        if gap > 1e-8:
            raise SurrogateError(
                f"surrogate self-check failed: halving the step moved the "
                f"final state by {gap:.3e} (> 1e-8)")
    return store


def convergence_study(schemes: Sequence[SchemeKind],
                      dt_list: Sequence[float] = DT_LADDER,
                      n_sites: int = 100,
                      t_max: float = 1.0,
                      surrogate_dt: float = 1e-4,
                      config: SolverConfig | None = None,
                      verify_surrogate: bool = True,
                      ic: StateVector | None = None,
                      ) -> dict[SchemeKind, ConvergenceReport]:
    """Pointwise error of each scheme against the fine RK4 surrogate.

    Every dt must be an integer multiple of surrogate_dt (and t_max of
    every dt) so comparison times align exactly; otherwise a
    ConfigurationError names the offender.
    """
    dts = tuple(float(dt) for dt in dt_list)
    if not dts or not schemes:
        raise ConfigurationError("need at least one scheme and one dt")
    state0 = ic if ic is not None else shock_ic(n_sites)
    ratios = []
    for dt in dts:
        m = round(dt / surrogate_dt)
        if m < 1 or abs(dt / surrogate_dt - m) > 1e-9 * m:
            raise ConfigurationError(
                f"dt={dt} is not an integer multiple of surrogate_dt={surrogate_dt}")
        ratios.append(m)
    steps = [_window_steps(t_max, dt) for dt in dts]

    keep = math.gcd(*ratios)
    n_fine = max(m * n for m, n in zip(ratios, steps))
    store = _surrogate_states(state0, surrogate_dt, n_fine, keep,
                              verify_surrogate)

    m0, h0 = mass(state0), energy(state0)
    m_scale = abs(m0) if m0 != 0.0 else 1.0
    h_scale = abs(h0) if h0 != 0.0 else 1.0
    reports = {}
    for scheme in schemes:
        errors, dms, dhs = [], [], []
        for dt, m, n_steps in zip(dts, ratios, steps):
            states = trajectory_states(scheme, state0, dt, n_steps, config)
            err = dm = dh = 0.0
            for n in range(1, n_steps + 1):
                err = max(err, float(np.linalg.norm(states[n] - store[n * m])))
                s = StateVector(states[n], state0.closure)
                dm = max(dm, abs(mass(s) - m0) / m_scale)
                dh = max(dh, abs(energy(s) - h0) / h_scale)
            errors.append(err)
            dms.append(dm)
            dhs.append(dh)
        order = float("nan")
        if len(dts) >= 2 and min(errors) > 0.0:
            order = float(np.polyfit(np.log(dts), np.log(errors), 1)[0])
        reports[scheme] = ConvergenceReport(
            scheme=scheme, dts=dts, errors=tuple(errors),
            fitted_order=order, mass_drifts=tuple(dms),
            energy_drifts=tuple(dhs))
    return reports


def cost_study(schemes: Sequence[SchemeKind],
               dt_list: Sequence[float] = DT_LADDER,
               n_sites: int = 100,
               t_max: float = 1.0,
               config: SolverConfig | None = None,
               ic: StateVector | None = None,
               ) -> dict[SchemeKind, CostReport]:
    """Mean nonlinear-solver counters per step over the same window the
    convergence study uses."""
    dts = tuple(float(dt) for dt in dt_list)
    if not dts or not schemes:
        raise ConfigurationError("need at least one scheme and one dt")
    state0 = ic if ic is not None else shock_ic(n_sites)
    m0, h0 = mass(state0), energy(state0)
    reports = {}
    for scheme in schemes:
        iters, fevals = [], []
        for dt in dts:
            n_steps = _window_steps(t_max, dt)
            if scheme is SchemeKind.RK4:
                iters.append(0.0)
                fevals.append(0.0)
                continue
            state = state0
            tot_it = tot_fe = 0
            for n in range(n_steps):
                if scheme is SchemeKind.PROJECTION:
                    res = step_projection(state, dt, m0, h0,
                                          PROJECTION_SOLVER_DEFAULTS)
                else:
                    res = step_implicit(scheme, state, dt,
                                        config or SolverConfig())
                if not res.accepted:
                    raise StepFailureError(
                        f"{scheme.name} step {n + 1} failed at dt={dt}")
                state = res.next_state
                tot_it += res.stats.iterations
                tot_fe += res.stats.function_evals
            iters.append(tot_it / n_steps)
            fevals.append(tot_fe / n_steps)
        predictor = 4.0 if scheme in (SchemeKind.PROJECTION, SchemeKind.RK4) else 0.0
        reports[scheme] = CostReport(
            scheme=scheme, dts=dts, mean_iterations=tuple(iters),
            mean_function_evals=tuple(fevals),
            predictor_function_evals=predictor)
    return reports


def long_time_bias_study(spec: EnsembleSpec, schemes: Sequence[SchemeKind],
                         config: SolverConfig | None = None,
                         max_workers: int | None = None,
                         ) -> dict[SchemeKind, EnsembleSeries]:
    """Run the same ensemble under each scheme; the per-scheme invariant
    drift and weighted-norm series expose the long-horizon bias explicit
    integration accumulates and the conservative schemes avoid."""
    if not schemes:
        raise ConfigurationError("need at least one scheme")
    out = {}
    for scheme in schemes:
        out[scheme] = run_ensemble(replace(spec, scheme=scheme), config,
                                   max_workers=max_workers)
    return out
