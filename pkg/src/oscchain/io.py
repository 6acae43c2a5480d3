"""Serialization of diagnostic series and study reports.

Both formats carry the same records: CSV columns are
t, mass, energy, hs_norm_<s> (one per exponent, ascending), then
newton_iters and f_evals when any record has solver counters, then flags
when any record is flagged. JSON mirrors that as an array of record
objects plus a metadata header. Floats are written with 17 significant
digits so parsing either format reproduces the values bit for bit.

Writers go through a temporary file in the target directory and rename
into place, so a failed write never leaves a partial file behind.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from typing import Iterable, Sequence

import numpy as np

from .ensemble import DiagnosticsRecord, EnsembleSeries
from .experiments import ConvergenceReport, CostReport
from .schemes import SchemeKind

__all__ = [
    "write_series",
    "read_series",
    "write_ensemble_series",
    "write_convergence_reports",
    "write_cost_reports",
]


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _fmt_exp(s: float) -> str:
    return f"{s:g}"


def _atomic_write(path: str, emit) -> None:
    """Write via emit(file) into a temp file, then rename into place."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            emit(fh)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _series_exponents(records: Sequence[DiagnosticsRecord]) -> list[float]:
    exponents: set[float] = set()
    for r in records:
        exponents.update(r.hs_norms)
    return sorted(exponents)


def write_series(records: Sequence[DiagnosticsRecord], path: str,
                 fmt: str = "csv", metadata: dict | None = None) -> None:
    """Write one trajectory's diagnostic records.

    fmt is "csv" or "json". For CSV the metadata (if any) goes to a
    sibling file <path>.meta.json, keeping the column contract intact;
    JSON embeds it inline.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    exponents = _series_exponents(records)
    with_stats = any(r.newton_iterations is not None for r in records)
    with_flags = any(r.flag for r in records)

    if fmt == "csv":
        header = ["t", "mass", "energy"]
        header += [f"hs_norm_{_fmt_exp(s)}" for s in exponents]
        if with_stats:
            header += ["newton_iters", "f_evals"]
        if with_flags:
            header += ["flags"]

        def emit(fh):
            w = csv.writer(fh)
            w.writerow(header)
            for r in records:
                row = [_fmt(r.t), _fmt(r.mass), _fmt(r.energy)]
                row += [_fmt(r.hs_norms[s]) for s in exponents]
                if with_stats:
                    row += ["" if r.newton_iterations is None
                            else str(r.newton_iterations),
                            "" if r.function_evals is None
                            else str(r.function_evals)]
                if with_flags:
                    row += [r.flag]
                w.writerow(row)

        _atomic_write(path, emit)
        if metadata is not None:
            _atomic_write(str(path) + ".meta.json",
                          lambda fh: json.dump(metadata, fh, indent=2))
        return

    payload = {
        "metadata": metadata or {},
        "records": [_record_to_obj(r, exponents, with_stats, with_flags)
                    for r in records],
    }
    _atomic_write(path, lambda fh: json.dump(payload, fh, indent=2))


def _record_to_obj(r: DiagnosticsRecord, exponents, with_stats, with_flags):
    obj = {
        "t": r.t,
        "mass": r.mass,
        "energy": r.energy,
        "hs_norms": {_fmt_exp(s): r.hs_norms[s] for s in exponents},
    }
    if with_stats:
        obj["newton_iters"] = r.newton_iterations
        obj["f_evals"] = r.function_evals
    if with_flags:
        obj["flags"] = r.flag
    return obj


def read_series(path: str, fmt: str | None = None,
                ) -> tuple[list[DiagnosticsRecord], dict | None]:
    """Parse a series written by write_series; returns (records, metadata).

    metadata is None for CSV files without a sibling .meta.json.
    """
    if fmt is None:
        fmt = "json" if str(path).endswith(".json") else "csv"
    if fmt == "json":
        with open(path) as fh:
            payload = json.load(fh)
        records = []
        for obj in payload["records"]:
            records.append(DiagnosticsRecord(
                t=float(obj["t"]),
                mass=float(obj["mass"]),
                energy=float(obj["energy"]),
                hs_norms={float(k): float(v)
                          for k, v in obj["hs_norms"].items()},
                newton_iterations=obj.get("newton_iters"),
                function_evals=obj.get("f_evals"),
                flag=obj.get("flags", "") or "",
            ))
        return records, payload.get("metadata") or None

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    norm_cols = [(i, float(name[len("hs_norm_"):]))
                 for i, name in enumerate(header)
                 if name.startswith("hs_norm_")]
    idx = {name: i for i, name in enumerate(header)}
    records = []
    for row in body:
        it = row[idx["newton_iters"]] if "newton_iters" in idx else ""
        fe = row[idx["f_evals"]] if "f_evals" in idx else ""
        records.append(DiagnosticsRecord(
            t=float(row[idx["t"]]),
            mass=float(row[idx["mass"]]),
            energy=float(row[idx["energy"]]),
            hs_norms={s: float(row[i]) for i, s in norm_cols},
            newton_iterations=int(it) if it else None,
            function_evals=int(fe) if fe else None,
            flag=row[idx["flags"]] if "flags" in idx else "",
        ))
    meta = None
    meta_path = str(path) + ".meta.json"
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh)
    return records, meta


def write_ensemble_series(series: dict[SchemeKind, EnsembleSeries] | EnsembleSeries,
                          path: str, fmt: str = "csv",
                          metadata: dict | None = None) -> None:
    """Write ensemble statistics; a dict of series gains a scheme column."""
    if isinstance(series, EnsembleSeries):
        series = {None: series}
    exponents = sorted({s for es in series.values() for s in es.mean_norms})
    multi = any(k is not None for k in series)

    def rows():
        for scheme, es in series.items():
            for i, t in enumerate(es.times):
                row = {}
                if multi:
                    row["scheme"] = scheme.value
                row["t"] = t
                for s in exponents:
                    row[f"mean_hs_norm_{_fmt_exp(s)}"] = es.mean_norms[s][i]
                    row[f"var_hs_norm_{_fmt_exp(s)}"] = es.norm_variances[s][i]
                row["mean_mass_drift"] = es.mean_mass_drift[i]
                row["mean_energy_drift"] = es.mean_energy_drift[i]
                row["samples"] = es.sample_count
                row["failures"] = es.failure_count
                yield row

    _write_table(list(rows()), path, fmt, metadata)


def write_convergence_reports(reports: dict[SchemeKind, ConvergenceReport],
                              path: str, fmt: str = "csv",
                              metadata: dict | None = None) -> None:
    def rows():
        for scheme, rep in reports.items():
            for dt, err, dm, dh in zip(rep.dts, rep.errors, rep.mass_drifts,
                                       rep.energy_drifts):
                yield {"scheme": scheme.value, "dt": dt, "error": err,
                       "mass_drift": dm, "energy_drift": dh,
                       "fitted_order": rep.fitted_order}

    _write_table(list(rows()), path, fmt, metadata)


def write_cost_reports(reports: dict[SchemeKind, CostReport], path: str,
                       fmt: str = "csv", metadata: dict | None = None) -> None:
    def rows():
        for scheme, rep in reports.items():
            for dt, it, fe in zip(rep.dts, rep.mean_iterations,
                                  rep.mean_function_evals):
                yield {"scheme": scheme.value, "dt": dt,
                       "newton_iters_per_step": it,
                       "f_evals_per_step": fe,
                       "predictor_f_evals": rep.predictor_function_evals}

    _write_table(list(rows()), path, fmt, metadata)


def _write_table(rows: list[dict], path: str, fmt: str,
                 metadata: dict | None) -> None:
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    if fmt == "json":
        payload = {"metadata": metadata or {}, "records": rows}
        _atomic_write(path, lambda fh: json.dump(payload, fh, indent=2,
                                                 default=_json_default))
        return
    header = list(rows[0].keys()) if rows else []

    def emit(fh):
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(row[k]) for k in header])

    _atomic_write(path, emit)
    if metadata is not None:
        _atomic_write(str(path) + ".meta.json",
                      lambda fh: json.dump(metadata, fh, indent=2))


def _cell(v) -> str:
    if isinstance(v, float) or isinstance(v, np.floating):
        return _fmt(v)
    return str(v)


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"not JSON serializable: {type(v)}")
