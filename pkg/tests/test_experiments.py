"""Convergence / cost / long-horizon bias studies on small chains."""

import numpy as np
import pytest

from oscchain import (ConfigurationError, EnsembleSpec, SchemeKind,
                      SolverConfig, StateVector, StepFailureError,
                      SurrogateError, TimeGrid, energy, mass, step_rk4)
from oscchain.experiments import (DT_LADDER, convergence_study, cost_study,
                                  long_time_bias_study, max_pointwise_error,
                                  shock_ic, trajectory_states)

IMPLICIT = (SchemeKind.TRAPEZOIDAL, SchemeKind.IMPLICIT_MIDPOINT,
            SchemeKind.MASS, SchemeKind.ENERGY)


class TestShockIC:
    def test_unit_modulus_everywhere(self):
        ic = shock_ic(32)
        np.testing.assert_allclose(np.abs(ic.amplitudes), 1.0, rtol=1e-15)

    def test_invariants(self):
        # the quarter-turn phase ramp makes every coupling term purely
        # imaginary, so the energy is the on-site part alone: N/4
        ic = shock_ic(100)
        assert mass(ic) == pytest.approx(100.0, rel=1e-14)
        assert energy(ic) == pytest.approx(25.0, abs=1e-12)

    def test_closure_passthrough(self):
        from oscchain import Closure
        assert shock_ic(8, Closure.PERIODIC).periodic


class TestTrajectoryStates:
    def test_length_and_initial_copy(self):
        ic = shock_ic(6)
        states = trajectory_states(SchemeKind.MASS, ic, 0.05, 4)
        assert len(states) == 5
        np.testing.assert_array_equal(states[0], ic.amplitudes)
        states[0][:] = 0.0
        assert np.all(ic.amplitudes != 0.0)

    def test_rk4_path_matches_stepper(self):
        ic = shock_ic(6)
        states = trajectory_states(SchemeKind.RK4, ic, 0.05, 3)
        s = ic
        for n in range(3):
            s = step_rk4(s, 0.05)
            np.testing.assert_array_equal(states[n + 1], s.amplitudes)

    def test_failed_step_raises(self):
        with pytest.raises(StepFailureError, match="step 1"):
            trajectory_states(SchemeKind.ENERGY, shock_ic(6), 5.0, 2,
                              SolverConfig(max_iters=1))

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    @pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
    def test_projection_failure_raises(self):
        huge = StateVector(3.0 * shock_ic(6).amplitudes)
        with pytest.raises(StepFailureError, match="projection"):
            trajectory_states(SchemeKind.PROJECTION, huge, 5.0, 2)


class TestMaxPointwiseError:
    def test_zero_for_identical(self):
        states = trajectory_states(SchemeKind.RK4, shock_ic(5), 0.1, 3)
        assert max_pointwise_error(states, states) == 0.0

    def test_known_displacement(self):
        a = [np.zeros(4, dtype=np.complex128) for _ in range(3)]
        b = [x.copy() for x in a]
        b[1][2] = 3.0 + 4.0j
        assert max_pointwise_error(a, b) == pytest.approx(5.0)

    def test_length_mismatch(self):
        a = [np.zeros(4, dtype=np.complex128)]
        with pytest.raises(ConfigurationError):
            max_pointwise_error(a, a * 2)


class TestConvergenceStudy:
    def test_misaligned_grids_rejected(self):
        with pytest.raises(ConfigurationError, match="integer multiple"):
            convergence_study([SchemeKind.MASS], dt_list=(0.3,), t_max=1.0,
                              ic=shock_ic(6))
        with pytest.raises(ConfigurationError, match="surrogate_dt"):
            convergence_study([SchemeKind.MASS], dt_list=(0.05,), t_max=0.2,
                              surrogate_dt=0.04, ic=shock_ic(6))
        # a single step leaves no interior comparison time
        with pytest.raises(ConfigurationError):
            convergence_study([SchemeKind.MASS], dt_list=(1.0,), t_max=1.0,
                              ic=shock_ic(6))
        with pytest.raises(ConfigurationError):
            convergence_study([], dt_list=DT_LADDER)

    def test_coarse_surrogate_fails_self_check(self):
        with pytest.raises(SurrogateError, match="self-check"):
            convergence_study([SchemeKind.RK4], dt_list=(0.1,), t_max=0.4,
                              surrogate_dt=0.05, ic=shock_ic(12))

    def test_small_chain_orders(self):
        reports = convergence_study(
            [SchemeKind.MASS, SchemeKind.RK4], dt_list=(0.1, 0.05),
            t_max=0.4, surrogate_dt=0.0025, ic=shock_ic(12))
        m = reports[SchemeKind.MASS]
        assert m.errors[1] < m.errors[0]
        assert 1.3 < m.fitted_order < 2.5
        assert max(m.mass_drifts) < 1e-13
        r = reports[SchemeKind.RK4]
        assert r.errors[0] < m.errors[0]
        assert r.fitted_order > 3.0
        assert max(r.mass_drifts) > 1e-7  # nothing is conserved exactly

    def test_report_echoes_ladder(self):
        reports = convergence_study([SchemeKind.ENERGY], dt_list=(0.1, 0.05),
                                    t_max=0.4, surrogate_dt=0.0025,
                                    ic=shock_ic(8))
        assert reports[SchemeKind.ENERGY].dts == (0.1, 0.05)


@pytest.fixture(scope="module")
def cost_reports():
    return cost_study([SchemeKind.MASS, SchemeKind.PROJECTION,
                       SchemeKind.RK4], dt_list=(0.1, 0.05), t_max=0.4,
                      ic=shock_ic(12))


class TestCostStudy:

    def test_rk4_has_no_solver_cost(self, cost_reports):
        r = cost_reports[SchemeKind.RK4]
        assert r.mean_iterations == (0.0, 0.0)
        assert r.mean_function_evals == (0.0, 0.0)
        assert r.predictor_function_evals == 4.0

    def test_newton_evals_exceed_iterations_by_one(self, cost_reports):
        r = cost_reports[SchemeKind.MASS]
        assert r.predictor_function_evals == 0.0
        for it, fe in zip(r.mean_iterations, r.mean_function_evals):
            assert fe == pytest.approx(it + 1.0, rel=1e-12)

    def test_projection_cheap_with_rk4_predictor(self, cost_reports):
        r = cost_reports[SchemeKind.PROJECTION]
        assert r.predictor_function_evals == 4.0
        assert max(r.mean_iterations) <= 4.0

    def test_bad_window_rejected(self):
        with pytest.raises(ConfigurationError):
            cost_study([SchemeKind.MASS], dt_list=(0.3,), t_max=1.0,
                       ic=shock_ic(6))


class TestLongTimeBias:
    def test_per_scheme_series_share_grid(self):
        spec = EnsembleSpec(sample_count=2, n_sites=8, scheme=SchemeKind.MASS,
                            grid=TimeGrid(dt=0.1, n_steps=50),
                            record_stride=10, seed=7)
        out = long_time_bias_study(spec, [SchemeKind.MASS, SchemeKind.RK4])
        assert set(out) == {SchemeKind.MASS, SchemeKind.RK4}
        np.testing.assert_array_equal(out[SchemeKind.MASS].times,
                                      out[SchemeKind.RK4].times)
        cons = out[SchemeKind.MASS].mean_mass_drift[-1]
        expl = out[SchemeKind.RK4].mean_mass_drift[-1]
        assert cons < 1e-13
        assert expl > cons

    def test_empty_scheme_list(self):
        spec = EnsembleSpec(sample_count=1, n_sites=4,
                            scheme=SchemeKind.RK4,
                            grid=TimeGrid(dt=0.1, n_steps=2))
        with pytest.raises(ConfigurationError):
            long_time_bias_study(spec, [])
