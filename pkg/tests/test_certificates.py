import math

import numpy as np
import pytest

from utils._certificates import (OPTIMUM_CACHE_SIZE, EmptyVarrhoWindowError, ModeNorms, QuadFormParams,
                                 VarrhoOutOfWindowError, certify_scenario, dwell_time_bound, eiss_envelope_check,
                                 envelope_from_decrease, envelope_values,
                                 epsilon_bounds, gradient_certificate, gradient_coeffs, gradient_dwell_bound,
                                 gradient_eiss_coeffs, gradient_epsilon_bound, lemma_a2_check,
                                 lemma_a2_grid_search, lemma_a2_margin, lyapunov_decrease_check,
                                 lyapunov_series, lyapunov_value, nesterov_constants, nesterov_eiss_coeffs,
                                 nesterov_practical_epsilon, resolve_varrho)
from utils._cost import CostConstants, cost_constants
from utils._plant import certify_plant
from utils._simulator import ControllerConfig, ErrorSeries, controller_map, simulate
from utils._controllers import NesterovParams
from utils._switching import DwellTimeParams


def _shifted_error(monitor, state, w):
    x, u, _, sigma = monitor.split(state)
    return np.concatenate([monitor.shifted_state(sigma, x, u, w), u - monitor.optimum(w)])


@pytest.fixture
def scalar_inputs(unit_plant, unit_cost):
    certificates = certify_plant(unit_plant)
    constants = cost_constants(unit_cost, controller_map(unit_plant))
    norms = (ModeNorms(C=1.0, G=1.0, H=1.0, PAinvB=0.5, PAinvE=0.5),)
    return certificates, norms, constants


@pytest.fixture
def lemma_params():
    return QuadFormParams(alpha=1.0, beta=1.0, eta=1.0, delta=1.0, phi=1.0, nu=1.0, gamma=1.0, theta=0.5, b=0.0,
                          epsilon=0.1)


class TestGradientBounds:
    def test_epsilon_bound(self, unit_certificate):
        norms = ModeNorms(C=1.0, G=1.0, H=1.0, PAinvB=0.5, PAinvE=0.5)
        assert gradient_epsilon_bound(unit_certificate, norms, ell_y=1.0) == pytest.approx(0.5)

    def test_vanishing_coupling_is_unbounded(self, unit_certificate):
        norms = ModeNorms(C=1.0, G=0.0, H=1.0, PAinvB=0.5, PAinvE=0.5)
        assert math.isinf(gradient_epsilon_bound(unit_certificate, norms, ell_y=1.0))

    def test_scalar_coefficients(self, scalar_inputs):
        certificates, norms, constants = scalar_inputs
        theta, a_bar, a_under = gradient_coeffs(certificates[0], norms[0], constants)
        assert theta == pytest.approx(2.0 / 3.0)
        assert a_bar == pytest.approx(2.0 / 3.0)
        assert a_under == pytest.approx(1.0 / 3.0)
        certificate = gradient_certificate(certificates, norms, constants)
        assert certificate.modes[0].eps_bar == pytest.approx(0.25)

    def test_dwell_bound_and_window(self, scalar_inputs):
        _, _, constants = scalar_inputs
        bound = gradient_dwell_bound(2.0 / 3.0, 1.0 / 3.0, constants, tau_d=1.0)
        assert bound.tau_d_min == pytest.approx(math.log(2.0) / 8.0)
        assert bound.window == pytest.approx((math.log(2.0), 8.0))

    def test_dwell_bound_golden_value(self):
        constants = CostConstants(ell_u=2.0, ell_y=2.0, ell=4.0, mu=2.0, ell0=1.0, nu0=0.0)
        assert gradient_dwell_bound(math.e, 1.0, constants, tau_d=1.0).tau_d_min == pytest.approx(0.5)

    def test_single_mode_eiss(self, scalar_inputs):
        certificates, norms, constants = scalar_inputs
        coeffs = gradient_eiss_coeffs(gradient_certificate(certificates, norms, constants), constants)
        assert coeffs.a0 == pytest.approx(math.sqrt(2.0))
        assert coeffs.b0 == pytest.approx(8.0)
        assert coeffs.c0 == 0.0
        assert math.isinf(coeffs.d0)
        assert coeffs.decay_source == "none"

    def test_library_entry_points(self, unit_plant, unit_cost):
        controller = ControllerConfig(kind="gradient", u0=[0.0])
        assert epsilon_bounds(unit_plant, unit_cost, controller) == pytest.approx((0.25,))
        assert dwell_time_bound(unit_plant, unit_cost, controller) == pytest.approx(math.log(2.0) / 8.0)


class TestVarrho:
    def test_midpoint_default(self):
        assert resolve_varrho((1.0, 3.0)) == 2.0
        assert resolve_varrho((1.0, 3.0), "midpoint") == 2.0

    def test_requested_value(self):
        assert resolve_varrho((1.0, 3.0), 2.5) == 2.5
        with pytest.raises(VarrhoOutOfWindowError):
            resolve_varrho((1.0, 3.0), 4.0)

    def test_empty_window(self):
        with pytest.raises(EmptyVarrhoWindowError):
            resolve_varrho((3.0, 1.0))


class TestNesterovBounds:
    @pytest.fixture
    def certificate(self, unit_certificate, unit_norms, unit_params):
        constants = CostConstants(ell_u=0.0, ell_y=1.0, ell=1.0, mu=1.0, ell0=1.0, nu0=0.0)
        return nesterov_constants((unit_certificate,), (unit_norms,), constants, unit_params)

    def test_global_constants(self, certificate):
        assert certificate.gamma == pytest.approx(0.125)
        assert certificate.b == pytest.approx(1.0 / 16.0)
        assert certificate.c == pytest.approx(1.0)
        assert not certificate.c_branch_defined
        assert certificate.restart_ok
        assert certificate.c_reset == pytest.approx(-math.log(0.75))

    def test_mode_constants(self, certificate):
        mode = certificate.modes[0]
        assert mode.eta == pytest.approx(4.0 * math.sqrt(2.0))
        assert mode.delta_coeff == pytest.approx(2.0 * math.exp(2.0))
        assert mode.eps_bar == pytest.approx(math.exp(-1.0) * 0.125 / (0.125 + 4.0 * math.sqrt(2.0)))
        assert certificate.tau_under == pytest.approx(math.log(mode.a_bar / mode.a_under) * 16.0)

    def test_practical_epsilon(self, unit_certificate, unit_norms, unit_params, unit_constants):
        constants = CostConstants(ell_u=0.0, ell_y=1.0, ell=1.0, mu=1.0, ell0=1.0, nu0=0.0)
        assert nesterov_practical_epsilon(unit_certificate, unit_norms, constants, unit_params) == \
            pytest.approx(1.0 / 48.0)
        assert nesterov_practical_epsilon(unit_certificate, unit_norms, unit_constants, unit_params) == \
            pytest.approx(1.0 / 96.0)

    def test_epsilon_bound_shrinks_with_the_period(self, unit_certificate, unit_norms):
        constants = CostConstants(ell_u=0.0, ell_y=1.0, ell=1.0, mu=1.0, ell0=1.0, nu0=0.0)
        bounds = [nesterov_constants((unit_certificate,), (unit_norms,), constants,
                                     NesterovParams(kappa=1.0, rho=1.0, delta=1.0, Delta=Delta, r0=True)).modes[0].eps_bar
                  for Delta in (2.0, 4.0, 8.0)]
        assert bounds[0] > bounds[1] > bounds[2] > 0.0

    def test_reset_drives_the_jump_decay(self, certificate):
        single = nesterov_eiss_coeffs(certificate)
        assert single.c0 == pytest.approx(certificate.c_reset)
        assert single.decay_source == "reset"
        dwell = DwellTimeParams(tau_d=certificate.tau_under + 100.0 / certificate.b, N0=1)
        switched = nesterov_eiss_coeffs(certificate, dwell, switched=True)
        assert switched.c0 == pytest.approx(certificate.c_reset)
        assert switched.decay_source == "reset"

    def test_restart_condition_failure_drops_reset_contraction(self, unit_certificate, unit_norms):
        constants = CostConstants(ell_u=0.0, ell_y=1.0, ell=1.0, mu=0.5, ell0=0.25, nu0=0.0)
        params = NesterovParams(kappa=1.0, rho=1.0, delta=1.0, Delta=2.0, r0=True)
        certificate = nesterov_constants((unit_certificate,), (unit_norms,), constants, params)
        assert not certificate.restart_ok
        assert certificate.c_reset == 0.0


class TestLemmaMatrix:
    def test_example(self, lemma_params):
        report = lemma_a2_check(lemma_params)
        assert report.minors == pytest.approx((4.5, 2.0))
        assert report.pd
        assert report.eps_star == pytest.approx(0.5)

    def test_large_epsilon_is_not_pd(self, lemma_params):
        assert not lemma_a2_check(lemma_params.replace(epsilon=0.6)).pd
        assert lemma_a2_margin(lemma_params.replace(epsilon=0.6)) == 0.0

    def test_margin_is_half_the_smallest_eigenvalue(self, lemma_params):
        # b = γ/(2ν): M = [[4.25, -0.5], [-0.5, 0.25]]
        margin = lemma_a2_margin(lemma_params)
        M = np.array([[4.25, -0.5], [-0.5, 0.25]])
        assert margin == pytest.approx(0.5 * np.linalg.eigvalsh(M)[0], rel=1e-6)

    def test_grid_search_finds_a_pair(self, lemma_params):
        result = lemma_a2_grid_search(lemma_params.replace(epsilon=0.4), grid=20)
        assert result.found
        assert lemma_a2_check(lemma_params.replace(epsilon=0.4, theta=result.theta, b=result.b)).pd


class TestScenarioCertification:
    def test_pass_below_the_bound(self, make_scenario, settings):
        certification = certify_scenario(make_scenario(epsilon=0.125), settings)
        report = certification.report
        assert report.passed
        assert report.rows[0].eps_bar == pytest.approx(0.25)
        assert report.rows[0].lemma_pd
        assert report.dwell_ok is None
        assert "dwell time: not-applicable" in report.render(color=False)
        assert math.isfinite(certification.eiss.d0)

    def test_fail_above_the_bound(self, make_scenario, settings):
        report = certify_scenario(make_scenario(epsilon=0.5, step=0.025), settings).report
        assert not report.passed
        assert not report.rows[0].passed
        assert "FAIL" in report.render(color=False)

    def test_open_loop_has_nothing_to_certify(self, make_scenario, settings):
        scenario = make_scenario(controller=ControllerConfig(kind="open_loop", u0=[0.0]))
        report = certify_scenario(scenario, settings).report
        assert report.passed
        assert report.notes

    def test_report_sections(self, make_scenario, settings):
        sections = certify_scenario(make_scenario(epsilon=0.125), settings).report.to_sections(digits=6)
        assert sections["report"]["passed"] == "true"
        assert sections["report"]["tau_d_min"] == "not-applicable"
        assert sections["mode.1"]["eps_bar"] == "0.25"
        assert set(sections["eiss"]) == {"a0", "b0", "c0", "d0", "decay_source"}
        assert sections["eiss"]["decay_source"] == "none"


class TestMonitors:
    def test_scalar_flow_decrease(self, make_scenario, settings):
        scenario = make_scenario(epsilon=0.125)
        certification = certify_scenario(scenario, settings)
        arc = simulate(scenario)
        report = lyapunov_decrease_check(arc, certification.monitor, scenario.disturbance, rate=8.0)
        assert report.checked > 0
        assert report.holds

    def test_decrease_violation_is_located(self, make_scenario, settings):
        scenario = make_scenario(epsilon=0.125)
        certification = certify_scenario(scenario, settings)
        arc = simulate(scenario)
        report = lyapunov_decrease_check(arc, certification.monitor, scenario.disturbance, rate=50.0)
        assert not report.holds
        assert report.first_violation.t == 0.0

    def test_value_vanishes_at_the_equilibrium(self, make_scenario, settings):
        monitor = certify_scenario(make_scenario(epsilon=0.125), settings).monitor
        # u* = −0.25 and x* = u* + w for w = 0.5
        assert lyapunov_value(monitor, [0.25, -0.25, 0.0, 1], [0.5]) == pytest.approx(0.0, abs=1e-15)

    def test_value_is_bracketed(self, make_scenario, settings):
        certification = certify_scenario(make_scenario(epsilon=0.125), settings)
        monitor, record = certification.monitor, certification.controller_certificate.modes[0]
        rng = np.random.default_rng(7)
        for _ in range(200):
            state = np.concatenate([rng.uniform(-3.0, 3.0, 2), [0.0, 1.0]])
            w = rng.uniform(-1.0, 1.0, 1)
            norm2 = float(np.sum(_shifted_error(monitor, state, w) ** 2))
            value = lyapunov_value(monitor, state, w)
            assert record.a_under * norm2 * (1.0 - 1e-9) <= value <= record.a_bar * norm2 * (1.0 + 1e-9)

    def test_optimum_cache_is_bounded(self, make_scenario, settings):
        monitor = certify_scenario(make_scenario(epsilon=0.125), settings).monitor
        monitor.optimum(np.array([0.5]))
        monitor.optimum(np.array([0.5]))
        info = monitor._optimum.cache_info()
        assert info.maxsize == OPTIMUM_CACHE_SIZE
        assert info.hits >= 1

    def test_envelope_agrees_with_the_flow_decrease(self, make_scenario, settings):
        scenario = make_scenario(epsilon=0.125)
        certification = certify_scenario(scenario, settings)
        monitor, record = certification.monitor, certification.controller_certificate.modes[0]
        arc = simulate(scenario)
        tolerance = 0.05
        assert lyapunov_decrease_check(arc, monitor, scenario.disturbance, rate=8.0, tolerance=tolerance).holds

        # the flow check admits log-quotients up to −8(1 − tol) + 64·dt
        step = scenario.integrator.step
        coeffs = envelope_from_decrease(record.a_bar, record.a_under, 8.0 * (1.0 - tolerance) - 64.0 * step, 0.0)
        values = np.sqrt(lyapunov_series(arc, monitor, scenario.disturbance) / record.a_under)
        series = ErrorSeries(t=np.asarray(arc.t), j=np.asarray(arc.j), values=values)
        state0 = arc.state_vectors()[0]
        z0_err = float(np.linalg.norm(_shifted_error(monitor, state0, scenario.disturbance.value_at(0.0))))
        assert eiss_envelope_check(series, coeffs, z0_err, 0.0).holds

    def test_envelope(self):
        from utils._certificates import EissCoefficients
        series = ErrorSeries(t=np.array([0.0, 1.0, 2.0]), j=np.zeros(3, dtype=int),
                             values=np.array([1.0, 0.3, 0.1]))
        coeffs = EissCoefficients(a0=1.0, b0=2.0, c0=0.0, d0=1.0)
        np.testing.assert_allclose(envelope_values(series, coeffs, 1.0, 0.0), np.exp(-series.t))
        assert eiss_envelope_check(series, coeffs, 1.0, 0.0).holds
        report = eiss_envelope_check(series, EissCoefficients(a0=1.0, b0=4.0, c0=0.0, d0=1.0), 1.0, 0.0)
        assert not report.holds
        assert report.first_violation.t == 1.0
