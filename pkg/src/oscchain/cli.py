"""Command-line front end.

Five subcommands share one configuration surface:

    simulate   one trajectory, diagnostics series to CSV/JSON
    converge   pointwise-error ladder against a fine RK4 surrogate
    cost       nonlinear-solver work per step across a dt ladder
    ensemble   random-phase ensemble statistics for one scheme
    bias       the same ensemble under several schemes side by side

Options come from (highest precedence first) command-line flags, a
`key = value` config file passed with --config, and built-in defaults.
Every output embeds the resolved configuration plus library versions so
a run can be reproduced from its own metadata. Exit codes: 0 success,
2 usage error, 3 numerical failure, 4 I/O failure.

The environment variable OSCCHAIN_OUT_DIR, when set, is prepended to
relative output paths; absolute paths are used as given.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import platform
import sys
from dataclasses import dataclass

import numpy as np

from .ensemble import (EnsembleFailureError, EnsembleSpec, generate_ic,
                       run_ensemble, run_trajectory)
from .experiments import (DT_LADDER, ConfigurationError, StepFailureError,
                          SurrogateError, convergence_study, cost_study,
                          long_time_bias_study, shock_ic)
from .io import (write_convergence_reports, write_cost_reports,
                 write_ensemble_series, write_series)
from .model import Closure, InvalidStateError, TimeGrid
from .newton import SingularMatrixError, SolverConfig
from .schemes import SchemeKind

__all__ = ["RunConfig", "UsageError", "parse_config", "cli_dispatch", "main"]

OUT_DIR_ENV = "OSCCHAIN_OUT_DIR"

COMMANDS = ("simulate", "converge", "cost", "ensemble", "bias")


class UsageError(Exception):
    """Bad flags, config keys, or values; maps to exit code 2."""


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved parameters of one CLI run."""

    command: str
    schemes: tuple[str, ...] = ("mass",)
    n_sites: int = 100
    dt: tuple[float, ...] = (0.1,)
    t_max: float = 1.0
    seed: int = 0
    samples: int = 100
    norms: tuple[float, ...] = (4.0,)
    closure: str = "dirichlet"
    abs_tol: float = 1e-50
    rel_tol: float = 1e-15
    step_tol: float = 1e-15
    max_iters: int = 50
    output: str = "out.csv"
    format: str = "csv"
    record_stride: int = 1
    workers: int = 1
    ic: str = "shock"
    sample_index: int = 0
    surrogate_dt: float = 1e-4

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise UsageError(f"unknown config key {sorted(unknown)[0]!r}")
        kwargs = dict(d)
        for k in ("schemes", "dt", "norms"):
            if k in kwargs:
                kwargs[k] = tuple(kwargs[k])
        return cls(**kwargs)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(abs_tol=self.abs_tol, rel_tol=self.rel_tol,
                            step_tol=self.step_tol, max_iters=self.max_iters)

    def scheme_kinds(self) -> tuple[SchemeKind, ...]:
        return tuple(SchemeKind(s) for s in self.schemes)

    def closure_kind(self) -> Closure:
        return Closure[self.closure.upper()]


def _parse_floats(text: str, key: str) -> tuple[float, ...]:
    try:
        values = tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise UsageError(f"bad value for {key}: {text!r}") from None
    if not values:
        raise UsageError(f"bad value for {key}: {text!r}")
    return values


def _parse_schemes(text: str) -> tuple[str, ...]:
    if text.strip() == "all":
        return tuple(k.value for k in SchemeKind)
    names = tuple(p.strip() for p in text.split(",") if p.strip())
    if not names:
        raise UsageError("bad value for schemes: empty list")
    valid = {k.value for k in SchemeKind}
    for name in names:
        if name not in valid:
            raise UsageError(
                f"bad value for schemes: {name!r} "
                f"(choose from {', '.join(sorted(valid))})")
    return names


# Config-file/flag keys: parser from raw text, applicable subcommands.
_KEYS: dict[str, tuple] = {
    "scheme": (lambda v: _parse_schemes(v), ("simulate", "ensemble")),
    "schemes": (lambda v: _parse_schemes(v), ("converge", "cost", "bias")),
    "n": (int, COMMANDS),
    "dt": (lambda v: _parse_floats(v, "dt"), COMMANDS),
    "t_max": (float, COMMANDS),
    "seed": (int, ("simulate", "ensemble", "bias")),
    "samples": (int, ("ensemble", "bias")),
    "norms": (lambda v: _parse_floats(v, "norms"), ("simulate", "ensemble", "bias")),
    "closure": (str, ("simulate", "ensemble", "bias")),
    "abs_tol": (float, COMMANDS),
    "rel_tol": (float, COMMANDS),
    "step_tol": (float, COMMANDS),
    "max_iters": (int, COMMANDS),
    "output": (str, COMMANDS),
    "format": (str, COMMANDS),
    "record_stride": (int, ("simulate", "ensemble", "bias")),
    "workers": (int, ("ensemble", "bias")),
    "ic": (str, ("simulate",)),
    "sample_index": (int, ("simulate",)),
    "surrogate_dt": (float, ("converge",)),
}

_DEST = {"scheme": "schemes", "n": "n_sites"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="oscchain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command")
    for command in COMMANDS:
        p = sub.add_parser(command)
        p.add_argument("--config", default=None,
                       help="key = value file, # starts a comment")
        for key, (_, commands) in _KEYS.items():
            if command in commands:
                flag = "--" + key.replace("_", "-")
                p.add_argument(flag, dest=key, default=None)
    return parser


def read_config_file(path: str, command: str) -> dict[str, str]:
    """Parse a flat `key = value` file, rejecting keys the command lacks."""
    values: dict[str, str] = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _KEYS or command not in _KEYS[key][1]:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value
    return values


def _positive(cfg: RunConfig, attr: str, minimum=0) -> None:
    value = getattr(cfg, attr)
    seq = value if isinstance(value, tuple) else (value,)
    for v in seq:
        if not v > minimum:
            raise UsageError(f"bad value for {attr}: {value!r}")


def parse_config(argv=None) -> RunConfig:
    """Resolve flags > config file > defaults into a validated RunConfig."""
    ns = _build_parser().parse_args(argv)
    if ns.command is None:
        raise UsageError(_build_parser().format_usage()
                         + "a subcommand is required")
    raw: dict[str, str] = {}
    if ns.config is not None:
        raw.update(read_config_file(ns.config, ns.command))
    for key in _KEYS:
        flag_value = getattr(ns, key, None)
        if flag_value is not None:
            raw[key] = flag_value

    kwargs: dict = {"command": ns.command}
    if ns.command in ("converge", "cost"):
        kwargs["dt"] = DT_LADDER
        kwargs["schemes"] = tuple(k.value for k in SchemeKind)
    for key, text in raw.items():
        caster = _KEYS[key][0]
        try:
            kwargs[_DEST.get(key, key)] = caster(text)
        except UsageError:
            raise
        except (TypeError, ValueError):
            raise UsageError(f"bad value for {key}: {text!r}") from None
    cfg = RunConfig.from_dict(kwargs)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    for attr in ("n_sites", "samples", "record_stride", "workers",
                 "max_iters", "t_max", "dt", "surrogate_dt"):
        _positive(cfg, attr)
    if cfg.abs_tol < 0 or cfg.rel_tol < 0 or cfg.step_tol < 0:
        raise UsageError("bad value for tolerance: must be nonnegative")
    if cfg.format not in ("csv", "json"):
        raise UsageError(f"bad value for format: {cfg.format!r}")
    if cfg.closure not in ("dirichlet", "periodic"):
        raise UsageError(f"bad value for closure: {cfg.closure!r}")
    if cfg.ic not in ("shock", "sample"):
        raise UsageError(f"bad value for ic: {cfg.ic!r}")
    if cfg.sample_index < 0:
        raise UsageError(f"bad value for sample_index: {cfg.sample_index}")
    try:
        cfg.scheme_kinds()
    except ValueError:
        raise UsageError(f"bad value for scheme: {cfg.schemes!r}") from None
    if cfg.command in ("simulate", "ensemble") and len(cfg.schemes) != 1:
        raise UsageError(f"{cfg.command} takes exactly one scheme")
    if cfg.command in ("simulate", "ensemble", "bias") and len(cfg.dt) != 1:
        raise UsageError(f"{cfg.command} takes exactly one dt")
    try:
        cfg.solver_config()
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _resolve_output(path: str) -> str:
    base = os.environ.get(OUT_DIR_ENV)
    if base and not os.path.isabs(path):
        path = os.path.join(base, path)
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    return path


def _metadata(cfg: RunConfig) -> dict:
    versions = {
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    try:
        import numba
        versions["numba"] = numba.__version__
    except ImportError:
        pass
    from oscchain import __version__
    versions["oscchain"] = __version__
    return {"config": cfg.to_dict(), "seed": cfg.seed, "versions": versions}


def _time_grid(cfg: RunConfig) -> TimeGrid:
    dt = cfg.dt[0]
    ratio = cfg.t_max / dt
    n_steps = round(ratio)
    if n_steps < 1 or abs(ratio - n_steps) > 1e-9 * max(n_steps, 1):
        raise UsageError(
            f"bad value for t_max: {cfg.t_max} is not a multiple of dt={dt}")
    return TimeGrid(dt=dt, n_steps=n_steps)


def _run_simulate(cfg: RunConfig, out: str) -> int:
    if cfg.ic == "shock":
        state = shock_ic(cfg.n_sites, cfg.closure_kind())
    else:
        state = generate_ic(cfg.sample_index, cfg.n_sites, cfg.seed,
                            cfg.closure_kind())
    records = run_trajectory(
        state, cfg.scheme_kinds()[0], _time_grid(cfg),
        config=cfg.solver_config(), norm_exponents=cfg.norms,
        record_stride=cfg.record_stride)
    write_series(records, out, cfg.format, metadata=_metadata(cfg))
    first, last = records[0], records[-1]
    norms = " ".join(f"hs_norm_{s:g}={last.hs_norms[s]:.6g}"
                     for s in sorted(last.hs_norms))
    drift_m = abs(last.mass - first.mass) / max(abs(first.mass), 1e-300)
    drift_h = abs(last.energy - first.energy) / max(abs(first.energy), 1e-300)
    status = " TRUNCATED" if last.flag else ""
    print(f"simulate scheme={cfg.schemes[0]} n={cfg.n_sites} dt={cfg.dt[0]:g} "
          f"t={last.t:g}: mass_drift={drift_m:.3e} energy_drift={drift_h:.3e} "
          f"{norms}{status} -> {out}")
    return 3 if last.flag else 0


def _run_converge(cfg: RunConfig, out: str) -> int:
    reports = convergence_study(
        cfg.scheme_kinds(), dt_list=cfg.dt, n_sites=cfg.n_sites,
        t_max=cfg.t_max, surrogate_dt=cfg.surrogate_dt,
        config=cfg.solver_config(),
        ic=shock_ic(cfg.n_sites, cfg.closure_kind()))
    write_convergence_reports(reports, out, cfg.format,
                              metadata=_metadata(cfg))
    orders = " ".join(f"{k.value}={r.fitted_order:.2f}"
                      for k, r in reports.items())
    print(f"converge n={cfg.n_sites} t_max={cfg.t_max:g} "
          f"dts={','.join(f'{d:g}' for d in cfg.dt)}: orders {orders} -> {out}")
    return 0


def _run_cost(cfg: RunConfig, out: str) -> int:
    reports = cost_study(cfg.scheme_kinds(), dt_list=cfg.dt,
                         n_sites=cfg.n_sites, t_max=cfg.t_max,
                         config=cfg.solver_config(),
                         ic=shock_ic(cfg.n_sites, cfg.closure_kind()))
    write_cost_reports(reports, out, cfg.format, metadata=_metadata(cfg))
    head = " ".join(f"{k.value}={r.mean_iterations[0]:.2f}"
                    for k, r in reports.items())
    print(f"cost n={cfg.n_sites} dt={cfg.dt[0]:g}: mean newton iters {head} "
          f"-> {out}")
    return 0


def _ensemble_spec(cfg: RunConfig, scheme: SchemeKind) -> EnsembleSpec:
    return EnsembleSpec(sample_count=cfg.samples, n_sites=cfg.n_sites,
                        scheme=scheme, grid=_time_grid(cfg),
                        norm_exponents=cfg.norms, seed=cfg.seed,
                        record_stride=cfg.record_stride,
                        closure=cfg.closure_kind())


def _series_summary(series) -> str:
    s0 = sorted(series.mean_norms)[0]
    return (f"mean_hs_norm_{s0:g}={series.mean_norms[s0][-1]:.6g} "
            f"mass_drift={series.mean_mass_drift[-1]:.3e} "
            f"energy_drift={series.mean_energy_drift[-1]:.3e} "
            f"failures={series.failure_count}/{series.sample_count}")


def _run_ensemble(cfg: RunConfig, out: str) -> int:
    scheme = cfg.scheme_kinds()[0]
    series = run_ensemble(_ensemble_spec(cfg, scheme),
                          config=cfg.solver_config(),
                          max_workers=cfg.workers)
    write_ensemble_series(series, out, cfg.format, metadata=_metadata(cfg))
    print(f"ensemble scheme={scheme.value} M={cfg.samples} n={cfg.n_sites} "
          f"dt={cfg.dt[0]:g}: {_series_summary(series)} -> {out}")
    return 3 if series.failure_count else 0


def _run_bias(cfg: RunConfig, out: str) -> int:
    schemes = cfg.scheme_kinds()
    by_scheme = long_time_bias_study(_ensemble_spec(cfg, schemes[0]),
                                     schemes, config=cfg.solver_config(),
                                     max_workers=cfg.workers)
    write_ensemble_series(by_scheme, out, cfg.format, metadata=_metadata(cfg))
    failures = sum(s.failure_count for s in by_scheme.values())
    parts = " ".join(f"{k.value}:{_series_summary(s)}"
                     for k, s in by_scheme.items())
    print(f"bias M={cfg.samples} n={cfg.n_sites} dt={cfg.dt[0]:g}: {parts} "
          f"-> {out}")
    return 3 if failures else 0


_RUNNERS = {
    "simulate": _run_simulate,
    "converge": _run_converge,
    "cost": _run_cost,
    "ensemble": _run_ensemble,
    "bias": _run_bias,
}


def cli_dispatch(cfg: RunConfig) -> int:
    """Run the configured command; returns the process exit status."""
    out = _resolve_output(cfg.output)
    return _RUNNERS[cfg.command](cfg, out)


_NUMERICAL_ERRORS = (SingularMatrixError, EnsembleFailureError,
                     SurrogateError, StepFailureError, ConfigurationError,
                     InvalidStateError)


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        print(f"oscchain: {exc}", file=sys.stderr)
        return 2
    try:
        return cli_dispatch(cfg)
    except UsageError as exc:
        print(f"oscchain: {exc}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as exc:
        print(f"oscchain: numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        target = getattr(exc, "filename", None) or cfg.output
        print(f"oscchain: I/O failure on {target}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
