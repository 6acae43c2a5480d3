"""One-step schemes: residuals, Jacobians, conservation, and step drivers."""

import numpy as np
import pytest

from oscchain import (Closure, IMPLICIT_SCHEMES, SchemeKind, SolverConfig,
                      StateVector, UnsupportedSchemeError, energy, jacobian,
                      mass, nonlinear_averages, residual,
                      reverse_step_implicit, rhs, step_implicit,
                      step_projection, step_rk4)
from conftest import random_state

CLOSURES = (Closure.DIRICHLET, Closure.PERIODIC)


def finite_difference_jacobian(scheme, b_old, b_new, dt, eps=1e-7):
    """Central differences of the residual w.r.t. the real-split unknowns."""
    x0 = np.array(b_new.amplitudes).view(np.float64)
    m = x0.shape[0]
    jac = np.empty((m, m))
    for k in range(m):
        xp, xm = x0.copy(), x0.copy()
        xp[k] += eps
        xm[k] -= eps
        rp = residual(scheme, b_old,
                      StateVector(xp.view(np.complex128), b_new.closure), dt)
        rm = residual(scheme, b_old,
                      StateVector(xm.view(np.complex128), b_new.closure), dt)
        jac[:, k] = (rp - rm).view(np.float64) / (2.0 * eps)
    return jac


@pytest.mark.parametrize("closure", CLOSURES)
@pytest.mark.parametrize("scheme", IMPLICIT_SCHEMES)
def test_jacobian_matches_finite_differences(rng, scheme, closure):
    for n in (1, 2, 5):
        a = random_state(rng, n, closure)
        b = random_state(rng, n, closure)
        analytic = jacobian(scheme, a, b, 0.07).to_dense()
        numeric = finite_difference_jacobian(scheme, a, b, 0.07)
        scale = max(np.linalg.norm(numeric), 1.0)
        assert np.linalg.norm(analytic - numeric) / scale < 1e-7


@pytest.mark.parametrize("scheme", IMPLICIT_SCHEMES)
def test_jacobian_at_zero_dt_is_identity(rng, scheme):
    a = random_state(rng, 6)
    b = random_state(rng, 6)
    np.testing.assert_array_equal(jacobian(scheme, a, b, 0.0).to_dense(),
                                  np.eye(12))


def test_jacobian_sparsity(rng):
    a = random_state(rng, 7)
    b = random_state(rng, 7)
    dense = jacobian(SchemeKind.MASS, a, b, 0.1).to_dense()
    for i in range(7):
        for j in range(7):
            if abs(i - j) > 1:
                block = dense[2 * i:2 * i + 2, 2 * j:2 * j + 2]
                np.testing.assert_array_equal(block, 0.0)


def test_jacobian_periodic_has_corner_blocks(rng):
    a = random_state(rng, 5, Closure.PERIODIC)
    b = random_state(rng, 5, Closure.PERIODIC)
    m = jacobian(SchemeKind.ENERGY, a, b, 0.1)
    assert m.corner_tr is not None
    assert np.any(m.corner_tr != 0.0) and np.any(m.corner_bl != 0.0)


@pytest.mark.parametrize("scheme", IMPLICIT_SCHEMES)
def test_residual_endpoint_exchange_antisymmetry(rng, scheme):
    """Flux symmetry in the endpoints: R(a, b, dt) = -R(b, a, -dt)."""
    a = random_state(rng, 6, Closure.PERIODIC)
    b = random_state(rng, 6, Closure.PERIODIC)
    fwd = residual(scheme, a, b, 0.13)
    bwd = residual(scheme, b, a, -0.13)
    np.testing.assert_allclose(fwd, -bwd, rtol=1e-14, atol=1e-15)


@pytest.mark.parametrize("scheme", IMPLICIT_SCHEMES)
def test_reverse_step_undoes_step(rng, scheme):
    state = random_state(rng, 8, scale=0.6)
    fwd = step_implicit(scheme, state, 0.05)
    assert fwd.accepted
    back = reverse_step_implicit(scheme, fwd.next_state, 0.05)
    assert back.accepted
    np.testing.assert_allclose(back.next_state.amplitudes, state.amplitudes,
                               rtol=1e-11, atol=1e-12)


def test_nonlinear_averages_collapse_at_equal_endpoints(rng):
    state = random_state(rng, 5)
    avg = nonlinear_averages(state, state)
    b = state.amplitudes
    np.testing.assert_array_equal(avg.midpoint, b)
    np.testing.assert_array_equal(avg.squared_midpoint, b * b)
    np.testing.assert_array_equal(avg.averaged_square, b * b)
    np.testing.assert_allclose(avg.averaged_modulus_sq, np.abs(b) ** 2,
                               rtol=1e-15)


def test_nonlinear_averages_distinguish_endpoints(rng):
    a = random_state(rng, 4)
    b = random_state(rng, 4)
    avg = nonlinear_averages(a, b)
    # (a^2+b^2)/2 - ((a+b)/2)^2 = ((a-b)/2)^2
    gap = avg.averaged_square - avg.squared_midpoint
    np.testing.assert_allclose(
        gap, (0.5 * (a.amplitudes - b.amplitudes)) ** 2, rtol=1e-13)


class TestConservation:
    dt = 0.1

    def drifts(self, scheme, state):
        res = step_implicit(scheme, state, self.dt)
        assert res.accepted
        dm = abs(mass(res.next_state) - mass(state)) / mass(state)
        dh = abs(energy(res.next_state) - energy(state)) / abs(energy(state))
        return dm, dh

    @pytest.mark.parametrize("scheme", [SchemeKind.IMPLICIT_MIDPOINT,
                                        SchemeKind.MASS])
    def test_mass_conserving_schemes(self, rng, scheme):
        dm, _ = self.drifts(scheme, random_state(rng, 10))
        assert dm < 1e-13

    def test_energy_conserving_scheme(self, rng):
        _, dh = self.drifts(SchemeKind.ENERGY, random_state(rng, 10))
        assert dh < 1e-12

    def test_trapezoidal_conserves_neither(self, rng):
        dm, dh = self.drifts(SchemeKind.TRAPEZOIDAL, random_state(rng, 10))
        assert dm > 1e-9 and dh > 1e-9

    def test_projection_restores_both(self, rng):
        state = random_state(rng, 10)
        m0, h0 = mass(state), energy(state)
        res = step_projection(state, self.dt, m0, h0)
        assert res.accepted
        assert abs(mass(res.next_state) - m0) < 1e-11
        assert abs(energy(res.next_state) - h0) < 1e-11


def test_rk4_matches_textbook_stages(rng):
    state = random_state(rng, 9, Closure.PERIODIC)
    dt = 0.03

    def f(z):
        return rhs(StateVector(z, Closure.PERIODIC))

    b = state.amplitudes
    k1 = f(b)
    k2 = f(b + 0.5 * dt * k1)
    k3 = f(b + 0.5 * dt * k2)
    k4 = f(b + dt * k3)
    expected = b + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    np.testing.assert_allclose(step_rk4(state, dt).amplitudes, expected,
                               rtol=1e-14)


@pytest.mark.parametrize("scheme", [SchemeKind.RK4, SchemeKind.PROJECTION])
def test_explicit_schemes_have_no_residual(rng, scheme):
    a = random_state(rng, 4)
    with pytest.raises(UnsupportedSchemeError):
        residual(scheme, a, a, 0.1)
    with pytest.raises(UnsupportedSchemeError):
        jacobian(scheme, a, a, 0.1)
    with pytest.raises(UnsupportedSchemeError):
        step_implicit(scheme, a, 0.1)


@pytest.mark.parametrize("dt", [0.0, -0.1, np.nan])
def test_step_rejects_bad_dt(rng, dt):
    state = random_state(rng, 4)
    with pytest.raises(ValueError):
        step_implicit(SchemeKind.MASS, state, dt)
    with pytest.raises(ValueError):
        step_rk4(state, dt)
    with pytest.raises(ValueError):
        step_projection(state, dt, 1.0, 0.0)


def test_mismatched_endpoints_rejected(rng):
    a = random_state(rng, 4)
    b = random_state(rng, 5)
    with pytest.raises(ValueError):
        residual(SchemeKind.MASS, a, b, 0.1)
    c = random_state(rng, 4, Closure.PERIODIC)
    with pytest.raises(ValueError):
        jacobian(SchemeKind.MASS, a, c, 0.1)


def test_step_stats_counting(rng):
    res = step_implicit(SchemeKind.ENERGY, random_state(rng, 12, scale=0.5),
                        0.05)
    assert res.accepted
    assert res.stats.converged
    assert res.stats.iterations >= 1
    assert res.stats.function_evals == res.stats.iterations + 1


def test_rk2_predictor_reaches_same_root(rng):
    state = random_state(rng, 10)
    plain = step_implicit(SchemeKind.IMPLICIT_MIDPOINT, state, 0.05)
    primed = step_implicit(SchemeKind.IMPLICIT_MIDPOINT, state, 0.05,
                           SolverConfig(rk2_predictor=True))
    assert primed.accepted
    np.testing.assert_allclose(primed.next_state.amplitudes,
                               plain.next_state.amplitudes,
                               rtol=1e-10, atol=1e-12)


def test_failed_newton_step_is_rejected(rng):
    state = random_state(rng, 8, scale=3.0)
    res = step_implicit(SchemeKind.MASS, state, 5.0,
                        SolverConfig(max_iters=1))
    assert not res.accepted
    assert res.stats.termination_reason in ("max_iters", "singular")
    assert np.isfinite(res.next_state.amplitudes).all()


def test_projection_failure_returns_predictor(rng):
    state = random_state(rng, 6)
    predictor = step_rk4(state, 0.1)
    res = step_projection(state, 0.1, mass(state), energy(state) + 1e6,
                          SolverConfig(abs_tol=1e-12, max_iters=4))
    assert not res.accepted
    np.testing.assert_array_equal(res.next_state.amplitudes,
                                  predictor.amplitudes)


def test_projection_refreshed_directions(rng):
    state = random_state(rng, 10)
    m0, h0 = mass(state), energy(state)
    res = step_projection(state, 0.1, m0, h0, refresh_directions=True)
    assert res.accepted
    assert abs(mass(res.next_state) - m0) < 1e-11
    assert abs(energy(res.next_state) - h0) < 1e-11


@pytest.mark.parametrize("scheme", IMPLICIT_SCHEMES)
def test_single_site_local_order_three(scheme):
    """One step against b(t) = b0 exp(-i |b0|^2 t): halving dt should cut
    the defect by about 2^3 for the symmetric schemes."""
    b0 = 1.2 - 0.5j
    state = StateVector(np.array([b0]))
    w = abs(b0) ** 2
    errs = []
    for dt in (0.02, 0.01):
        stepped = step_implicit(scheme, state, dt).next_state.amplitudes[0]
        errs.append(abs(stepped - b0 * np.exp(-1j * w * dt)))
    order = np.log2(errs[0] / errs[1])
    assert 2.7 < order < 3.3
