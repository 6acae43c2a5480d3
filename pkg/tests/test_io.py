"""CSV / JSON serialization round trips and table schemas."""

import json
import os

import numpy as np
import pytest

from oscchain import (DiagnosticsRecord, EnsembleSeries, SchemeKind,
                      read_series, write_convergence_reports,
                      write_cost_reports, write_ensemble_series, write_series)
from oscchain.experiments import ConvergenceReport, CostReport
from oscchain.io import _atomic_write


def awkward_records():
    # values whose decimal forms need all 17 significant digits
    return [
        DiagnosticsRecord(t=0.0, mass=1 / 3, energy=0.1 + 0.2,
                          hs_norms={4.0: 2.0 ** -52}),
        DiagnosticsRecord(t=0.1, mass=np.pi, energy=-1e-17,
                          hs_norms={4.0: 123456.789012345678},
                          newton_iterations=4, function_evals=5),
        DiagnosticsRecord(t=0.2, mass=1e300, energy=0.0,
                          hs_norms={4.0: 7.0},
                          newton_iterations=2, function_evals=3,
                          flag="truncated"),
    ]


def assert_records_equal(got, want):
    assert len(got) == len(want)
    for g, w in zip(got, want):
        assert g.t == w.t
        assert g.mass == w.mass
        assert g.energy == w.energy
        assert g.hs_norms == w.hs_norms
        assert g.newton_iterations == w.newton_iterations
        assert g.function_evals == w.function_evals
        assert g.flag == w.flag


class TestSeriesRoundTrip:
    @pytest.mark.parametrize("fmt", ["csv", "json"])
    def test_bitwise(self, tmp_path, fmt):
        path = str(tmp_path / f"series.{fmt}")
        write_series(awkward_records(), path, fmt=fmt)
        got, meta = read_series(path)
        assert_records_equal(got, awkward_records())
        assert meta is None

    def test_formats_agree(self, tmp_path):
        records = awkward_records()
        write_series(records, str(tmp_path / "a.csv"), fmt="csv")
        write_series(records, str(tmp_path / "a.json"), fmt="json")
        csv_recs, _ = read_series(str(tmp_path / "a.csv"))
        json_recs, _ = read_series(str(tmp_path / "a.json"))
        assert_records_equal(csv_recs, json_recs)

    def test_csv_header_with_counters_and_flags(self, tmp_path):
        path = str(tmp_path / "s.csv")
        write_series(awkward_records(), path)
        header = open(path).readline().strip()
        assert header == "t,mass,energy,hs_norm_4,newton_iters,f_evals,flags"

    def test_csv_header_minimal(self, tmp_path):
        path = str(tmp_path / "s.csv")
        write_series([DiagnosticsRecord(0.0, 0.0, 0.0, {4.0: 0.0})], path)
        lines = open(path).read().splitlines()
        assert lines == ["t,mass,energy,hs_norm_4", "0,0,0,0"]

    def test_norm_columns_sorted_and_plain(self, tmp_path):
        path = str(tmp_path / "s.csv")
        recs = [DiagnosticsRecord(0.0, 1.0, 1.0,
                                  {4.0: 1.0, 2.5: 2.0, 1.0: 3.0})]
        write_series(recs, path)
        header = open(path).readline().strip()
        assert header == "t,mass,energy,hs_norm_1,hs_norm_2.5,hs_norm_4"
        got, _ = read_series(path)
        assert got[0].hs_norms == recs[0].hs_norms

    def test_empty_series_is_header_only(self, tmp_path):
        path = str(tmp_path / "empty.csv")
        write_series([], path)
        assert open(path).read().splitlines() == ["t,mass,energy"]
        got, meta = read_series(path)
        assert got == [] and meta is None

    def test_metadata_sidecar_for_csv(self, tmp_path):
        path = str(tmp_path / "s.csv")
        meta = {"config": {"dt": [0.1]}, "seed": 7}
        write_series(awkward_records(), path, metadata=meta)
        assert json.load(open(path + ".meta.json")) == meta
        _, got = read_series(path)
        assert got == meta

    def test_metadata_inline_for_json(self, tmp_path):
        path = str(tmp_path / "s.json")
        meta = {"seed": 3}
        write_series(awkward_records(), path, fmt="json", metadata=meta)
        payload = json.load(open(path))
        assert payload["metadata"] == meta
        _, got = read_series(path)
        assert got == meta

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="format"):
            write_series([], str(tmp_path / "x"), fmt="xml")


class TestAtomicWrite:
    def test_failure_leaves_no_trace(self, tmp_path):
        path = tmp_path / "out.csv"
        path.write_text("original\n")

        def bad_emit(fh):
            fh.write("partial")
            raise RuntimeError("disk on fire")

        with pytest.raises(RuntimeError):
            _atomic_write(str(path), bad_emit)
        assert path.read_text() == "original\n"
        assert os.listdir(tmp_path) == ["out.csv"]

    def test_replaces_existing_content(self, tmp_path):
        path = tmp_path / "out.csv"
        path.write_text("stale")
        _atomic_write(str(path), lambda fh: fh.write("fresh"))
        assert path.read_text() == "fresh"


def fake_ensemble_series():
    return EnsembleSeries(
        times=np.array([0.0, 0.5]),
        mean_norms={4.0: np.array([1.0, 1.25])},
        norm_variances={4.0: np.array([0.0, 0.5])},
        mean_mass_drift=np.array([0.0, 1e-15]),
        mean_energy_drift=np.array([0.0, 2e-15]),
        sample_count=3, failure_count=0)


class TestTableWriters:
    def test_single_ensemble_schema(self, tmp_path):
        path = str(tmp_path / "ens.csv")
        write_ensemble_series(fake_ensemble_series(), path)
        header = open(path).readline().strip()
        assert header == ("t,mean_hs_norm_4,var_hs_norm_4,mean_mass_drift,"
                          "mean_energy_drift,samples,failures")

    def test_ensemble_dict_gains_scheme_column(self, tmp_path):
        path = str(tmp_path / "ens.csv")
        write_ensemble_series({SchemeKind.MASS: fake_ensemble_series(),
                               SchemeKind.RK4: fake_ensemble_series()}, path)
        lines = open(path).read().splitlines()
        assert lines[0].startswith("scheme,t,")
        assert {row.split(",")[0] for row in lines[1:]} == {"mass", "rk4"}
        assert len(lines) == 1 + 2 * 2

    def test_convergence_schema(self, tmp_path):
        rep = ConvergenceReport(scheme=SchemeKind.ENERGY, dts=(0.1, 0.05),
                                errors=(0.2, 0.07), fitted_order=1.9,
                                mass_drifts=(1e-4, 2e-5),
                                energy_drifts=(1e-13, 2e-13))
        path = str(tmp_path / "conv.csv")
        write_convergence_reports({SchemeKind.ENERGY: rep}, path)
        lines = open(path).read().splitlines()
        assert lines[0] == "scheme,dt,error,mass_drift,energy_drift,fitted_order"
        assert lines[1].split(",")[0] == "energy"
        assert len(lines) == 3

    def test_cost_schema(self, tmp_path):
        rep = CostReport(scheme=SchemeKind.PROJECTION, dts=(0.1,),
                         mean_iterations=(2.0,), mean_function_evals=(3.0,),
                         predictor_function_evals=4.0)
        path = str(tmp_path / "cost.csv")
        write_cost_reports({SchemeKind.PROJECTION: rep}, path)
        lines = open(path).read().splitlines()
        assert lines[0] == ("scheme,dt,newton_iters_per_step,"
                            "f_evals_per_step,predictor_f_evals")
        assert lines[1] == "projection,0.10000000000000001,2,3,4"

    def test_json_table_carries_metadata(self, tmp_path):
        rep = CostReport(scheme=SchemeKind.MASS, dts=(0.1,),
                         mean_iterations=(4.0,), mean_function_evals=(5.0,),
                         predictor_function_evals=0.0)
        path = str(tmp_path / "cost.json")
        write_cost_reports({SchemeKind.MASS: rep}, path, fmt="json",
                           metadata={"seed": 1})
        payload = json.load(open(path))
        assert payload["metadata"] == {"seed": 1}
        assert payload["records"][0]["scheme"] == "mass"
