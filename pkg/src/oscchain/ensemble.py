"""Ensemble generation and trajectory diagnostics.

Initial ensembles follow a fixed modulus profile |b_j| = 4^{-(j-1)} with
independent uniform random phases per site, drawn from a counter-based
generator keyed on (seed, sample index) so any sample can be generated
(and re-generated) independently of the others: the ensemble is
deterministic for a fixed seed no matter how many workers produce it or
in which order.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import model
from .model import StateVector, Closure, TimeGrid
from .newton import SolverConfig, PROJECTION_SOLVER_DEFAULTS
from .schemes import SchemeKind, step_implicit, step_rk4, step_projection

__all__ = [
    "DiagnosticsRecord",
    "EnsembleSpec",
    "EnsembleSeries",
    "EnsembleFailureError",
    "generate_ic",
    "run_trajectory",
    "run_ensemble",
]


class EnsembleFailureError(RuntimeError):
    """More than 10% of the ensemble's trajectories failed to complete."""


@dataclass(frozen=True)
class DiagnosticsRecord:
    """Plotted quantities sampled at one grid time.

    hs_norms maps the norm exponent s to the weighted norm value.
    newton_iterations/function_evals are the solver counters of the step
    that landed on this time (None for explicit steps and at t0). flag is
    empty for clean records; "truncated" marks the last record of a
    trajectory that failed before reaching the end of its grid.
    """

    t: float
    mass: float
    energy: float
    hs_norms: dict[float, float] = field(default_factory=dict)
    newton_iterations: int | None = None
    function_evals: int | None = None
    flag: str = ""


@dataclass(frozen=True)
class EnsembleSpec:
    """Everything needed to reproduce an ensemble run."""

    sample_count: int
    n_sites: int
    scheme: SchemeKind
    grid: TimeGrid
    norm_exponents: tuple[float, ...] = (4.0,)
    seed: int = 0
    record_stride: int = 1
    closure: Closure = Closure.DIRICHLET

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError(f"sample_count must be >= 1, got {self.sample_count}")
        if self.n_sites < 1:
            raise ValueError(f"n_sites must be >= 1, got {self.n_sites}")
        if self.record_stride < 1:
            raise ValueError(f"record_stride must be >= 1, got {self.record_stride}")
        if not self.norm_exponents:
            raise ValueError("norm_exponents must be nonempty")
        object.__setattr__(self, "norm_exponents",
                           tuple(float(s) for s in self.norm_exponents))


@dataclass(frozen=True)
class EnsembleSeries:
    """Sample statistics on the recorded time grid.

    mean_norms/norm_variances map each norm exponent to an array over the
    record times (variance is the unbiased sample variance, zero when
    only one sample completed). Drift series are means over samples of
    the relative invariant deviations |Q(t) - Q(0)| / |Q(0)|.
    """

    times: np.ndarray
    mean_norms: dict[float, np.ndarray]
    norm_variances: dict[float, np.ndarray]
    mean_mass_drift: np.ndarray
    mean_energy_drift: np.ndarray
    sample_count: int
    failure_count: int


def generate_ic(sample_index: int, n_sites: int, seed: int = 0,
                closure: Closure = Closure.DIRICHLET) -> StateVector:
    """Sample k of the phase ensemble: b_j = 4^{-(j-1)} e^{i theta_j} with
    theta_j ~ U(0, 2pi) i.i.d.

    Streams are independent per (seed, sample_index) by construction
    (counter-based generator keyed on both), so the ensemble can be built
    in any order or in parallel with identical results.
    """
    if sample_index < 0:
        raise ValueError(f"sample_index must be >= 0, got {sample_index}")
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF,
                    sample_index & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    theta = gen.uniform(0.0, 2.0 * np.pi, n_sites)
    modulus = 4.0 ** (-np.arange(n_sites, dtype=np.float64))
    return StateVector(modulus * np.exp(1j * theta), closure)


def _record_steps(n_steps: int, stride: int) -> list[int]:
    steps = list(range(0, n_steps + 1, stride))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    return steps


def run_trajectory(ic: StateVector, scheme: SchemeKind, grid: TimeGrid,
                   config: SolverConfig | None = None,
                   norm_exponents: Sequence[float] = (4.0,),
                   record_stride: int = 1) -> list[DiagnosticsRecord]:
    """Integrate one initial state over the grid, sampling diagnostics
    every record_stride steps (the final time is always recorded).

    config tunes the implicit schemes' Newton iteration; the projection
    multiplier solve always runs at PROJECTION_SOLVER_DEFAULTS, whose
    absolute tolerance sits above the roundoff floor of evaluating the
    invariants themselves.

    A failed step (non-converged Newton, singular Jacobian, failed
    projection) truncates the series: the last good state is appended
    with flag "truncated" and integration stops.
    """
    if record_stride < 1:
        raise ValueError(f"record_stride must be >= 1, got {record_stride}")
    exponents = tuple(float(s) for s in norm_exponents)
    want = set(_record_steps(grid.n_steps, record_stride))

    def record_at(state, n, stats=None, flag=""):
        return DiagnosticsRecord(
            t=grid.time_at(n),
            mass=model.mass(state),
            energy=model.energy(state),
            hs_norms={s: model.hs_norm(state, s) for s in exponents},
            newton_iterations=None if stats is None else stats.iterations,
            function_evals=None if stats is None else stats.function_evals,
            flag=flag,
        )

    records = [record_at(ic, 0)]
    state = ic
    advance = None
    if scheme is SchemeKind.PROJECTION:
        m0, h0 = model.mass(ic), model.energy(ic)

        def advance(s):
            return step_projection(s, grid.dt, m0, h0,
                                   PROJECTION_SOLVER_DEFAULTS)
    elif scheme is not SchemeKind.RK4:
        cfg = config or SolverConfig()

        def advance(s):
            return step_implicit(scheme, s, grid.dt, cfg)

    for n in range(1, grid.n_steps + 1):
        if scheme is SchemeKind.RK4:
            state = step_rk4(state, grid.dt)
            stats = None
        else:
            result = advance(state)
            if not result.accepted:
                records.append(record_at(state, n - 1, result.stats, "truncated"))
                return records
            state = result.next_state
            stats = result.stats
        if n in want:
            records.append(record_at(state, n, stats))
    return records


def _trajectory_arrays(spec: EnsembleSpec, config: SolverConfig | None,
                       ic_factory, sample_index: int):
    """Worker payload: per-sample diagnostic arrays in plain float form."""
    ic = ic_factory(sample_index, spec.n_sites, spec.seed, spec.closure)
    records = run_trajectory(ic, spec.scheme, spec.grid, config,
                             spec.norm_exponents, spec.record_stride)
    completed = not records[-1].flag
    n_rec = len(_record_steps(spec.grid.n_steps, spec.record_stride))
    if not completed or len(records) != n_rec:
        return sample_index, None, False
    m0, h0 = records[0].mass, records[0].energy
    m_scale = abs(m0) if m0 != 0.0 else 1.0
    h_scale = abs(h0) if h0 != 0.0 else 1.0
    norms = np.array([[r.hs_norms[s] for r in records]
                      for s in spec.norm_exponents])
    dm = np.array([abs(r.mass - m0) / m_scale for r in records])
    dh = np.array([abs(r.energy - h0) / h_scale for r in records])
    return sample_index, (norms, dm, dh), True


def _job(args):
    return _trajectory_arrays(*args)


def run_ensemble(spec: EnsembleSpec, config: SolverConfig | None = None,
                 max_workers: int | None = None,
                 ic_factory: Callable[..., StateVector] | None = None,
                 ) -> EnsembleSeries:
    """Run the whole ensemble and reduce it to mean/variance series.

    Samples are independent; with max_workers > 1 they are integrated in
    a process pool. The reduction always happens in sample order over
    identical per-sample arrays, so the result is bitwise independent of
    the worker count. Failed trajectories are dropped from the statistics
    and counted; more than 10% failures raises EnsembleFailureError.
    """
    factory = ic_factory or generate_ic
    jobs = [(spec, config, factory, k) for k in range(spec.sample_count)]
    if max_workers is not None and max_workers > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            raw = list(pool.map(_job, jobs))
    else:
        raw = [_job(j) for j in jobs]
    raw.sort(key=lambda item: item[0])

    good = [payload for _, payload, ok in raw if ok]
    failures = spec.sample_count - len(good)
    if failures > 0.10 * spec.sample_count:
        raise EnsembleFailureError(
            f"{failures} of {spec.sample_count} trajectories failed")

    steps = _record_steps(spec.grid.n_steps, spec.record_stride)
    times = np.array([spec.grid.time_at(n) for n in steps])
    norms = np.stack([p[0] for p in good])      # (samples, exponents, times)
    dms = np.stack([p[1] for p in good])
    dhs = np.stack([p[2] for p in good])

    mean_norms, norm_vars = {}, {}
    for i, s in enumerate(spec.norm_exponents):
        mean_norms[s] = norms[:, i, :].mean(axis=0)
        if norms.shape[0] > 1:
            norm_vars[s] = norms[:, i, :].var(axis=0, ddof=1)
        else:
            norm_vars[s] = np.zeros(norms.shape[2])
    return EnsembleSeries(
        times=times,
        mean_norms=mean_norms,
        norm_variances=norm_vars,
        mean_mass_drift=dms.mean(axis=0),
        mean_energy_drift=dhs.mean(axis=0),
        sample_count=spec.sample_count,
        failure_count=failures,
    )
