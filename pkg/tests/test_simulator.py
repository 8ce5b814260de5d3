import math

import numpy as np
import pytest

from utils._controllers import NesterovParams, RestartConditionViolatedError
from utils._experiments import scalar_plant
from utils._simulator import (CONTROLLER_RESET, PLANT_SWITCH, ControllerConfig, DisturbanceSignal,
                              NonFiniteStateError, ScenarioError, StiffnessBudgetExceededError, SwitchingConfig,
                              regulation_error, simulate, suboptimality, tracking_error)
from utils._switching import DwellTimeParams, SwitchingSignal


def _nesterov(**changes):
    values = {"kappa": 1.0, "rho": 1.0, "delta": 1.0, "Delta": 2.0, "r0": True}
    values.update(changes)
    return ControllerConfig(kind="nesterov", u0=[1.0], params=NesterovParams(**values))


class TestDisturbance:
    def test_sinusoid_derivative_bound(self):
        w = DisturbanceSignal(kind="sinusoid", amplitude=[3.0, 4.0], frequency=2.0)
        assert w.sup_derivative() == pytest.approx(10.0)
        np.testing.assert_allclose(w.derivative(0.0), [6.0, 8.0])

    def test_sinusoid_with_quadrature_phases(self):
        w = DisturbanceSignal(kind="sinusoid", amplitude=[1.0, 1.0], phase=[0.0, math.pi / 2], frequency=1.0)
        assert w.sup_derivative() == pytest.approx(1.0)

    def test_freeze(self):
        w = DisturbanceSignal(kind="sinusoid", amplitude=[1.0], frequency=1.0, freeze_after=1.0)
        np.testing.assert_allclose(w.value_at(5.0), w.value_at(1.0))
        np.testing.assert_array_equal(w.derivative(5.0), [0.0])

    def test_piecewise_linear_is_smooth_at_corners(self):
        w = DisturbanceSignal(kind="piecewise_linear", times=[0.0, 1.0, 2.0], values=[[0.0], [1.0], [1.0]],
                              smoothing=0.1)
        assert w.value_at(0.5)[0] == pytest.approx(0.5)
        assert w.value_at(1.5)[0] == pytest.approx(1.0)
        before, after = w.derivative(0.9 - 1e-9)[0], w.derivative(0.9 + 1e-9)[0]
        assert before == pytest.approx(after, abs=1e-6)
        assert w.value_at(0.9)[0] == pytest.approx(0.9)
        assert w.value_at(1.1)[0] == pytest.approx(1.0)
        assert w.sup_derivative() == pytest.approx(1.0)

    def test_piecewise_smoothing_too_wide(self):
        with pytest.raises(ScenarioError):
            DisturbanceSignal(kind="piecewise_linear", times=[0.0, 1.0], values=[[0.0], [1.0]], smoothing=0.8)


class TestScenario:
    def test_epsilon_per_mode(self, make_scenario):
        with pytest.raises(ScenarioError):
            make_scenario(epsilon=(0.1, 0.1))

    def test_signal_must_cover_horizon(self, make_scenario):
        short = SwitchingConfig(signal=SwitchingSignal(events=((0.0, 1),), horizon=1.0))
        with pytest.raises(ScenarioError):
            make_scenario(horizon=2.0, switching=short)


class TestGradientLoop:
    def test_equilibrium_start_stays(self, make_scenario, unit_plant, unit_cost):
        # w = 0.5: u* = −w/2, x* = u* + w
        scenario = make_scenario(controller=ControllerConfig(kind="gradient", u0=[-0.25]), x0=[0.25])
        arc = simulate(scenario)
        error = tracking_error(arc, unit_cost, unit_plant, scenario.disturbance)
        assert error.values[-1] <= 1e-6
        assert arc.is_well_formed()

    def test_converges_to_optimum(self, make_scenario, unit_plant, unit_cost):
        scenario = make_scenario(horizon=6.0)
        arc = simulate(scenario)
        assert tracking_error(arc, unit_cost, unit_plant, scenario.disturbance).values[-1] <= 1e-6
        assert regulation_error(arc, unit_cost, unit_plant, scenario.disturbance).values[-1] <= 1e-6

    def test_suboptimality_is_nonnegative(self, make_scenario, unit_cost):
        from utils._simulator import controller_map
        scenario = make_scenario()
        arc = simulate(scenario)
        gap = suboptimality(arc, unit_cost, controller_map(scenario.plant), scenario.disturbance)
        assert np.all(gap.values >= -1e-12)
        assert gap.values[0] > gap.values[-1]

    def test_stiffness_budget(self, make_scenario):
        with pytest.raises(StiffnessBudgetExceededError):
            simulate(make_scenario(epsilon=0.1, step=0.02))

    def test_fourth_order_convergence(self, make_scenario):
        finals = []
        for step in (0.0125, 0.00625, 0.003125):
            arc = simulate(make_scenario(step=step, horizon=1.0))
            finals.append(np.concatenate([arc.x[-1], arc.controller[-1]]))
        ratio = np.linalg.norm(finals[0] - finals[1]) / np.linalg.norm(finals[1] - finals[2])
        assert 12.0 < ratio < 20.0

    def test_record_stride_keeps_segment_ends(self, make_scenario):
        from dataclasses import replace
        scenario = make_scenario(horizon=1.0, step=0.005)
        strided = replace(scenario, integrator=replace(scenario.integrator, record_stride=7))
        arc = simulate(strided)
        assert arc.t[-1] == pytest.approx(1.0)
        assert len(arc) == 1 + 200 // 7 + 1

    def test_deterministic(self, make_scenario):
        first, second = simulate(make_scenario()), simulate(make_scenario())
        np.testing.assert_array_equal(first.x, second.x)
        np.testing.assert_array_equal(first.controller, second.controller)


class TestSwitchedLoop:
    @pytest.fixture
    def switched(self, make_scenario):
        plant = scalar_plant(((-1.0, 1.0, 1.0), (-2.0, 2.0, 2.0)))
        signal = SwitchingSignal(events=((0.0, 1), (0.5, 2), (1.2, 1)), horizon=2.0)
        switching = SwitchingConfig(signal=signal, dwell=DwellTimeParams(tau_d=0.5, N0=2))
        return make_scenario(plant=plant, epsilon=(0.125, 0.1), switching=switching)

    def test_jumps_double_the_sample(self, switched):
        arc = simulate(switched)
        assert arc.is_well_formed()
        switches = arc.jumps_of(PLANT_SWITCH)
        assert [jump.time.t for jump in switches] == pytest.approx([0.5, 1.2])
        for jump in switches:
            pre, post = jump.index, jump.index + 1
            assert arc.t[pre] == arc.t[post]
            assert arc.j[post] == arc.j[pre] + 1
            np.testing.assert_array_equal(arc.x[pre], arc.x[post])
            assert arc.sigma[pre] != arc.sigma[post]

    def test_timer_spends_one_unit_per_switch(self, switched):
        arc = simulate(switched)
        first = arc.jumps_of(PLANT_SWITCH)[0]
        assert arc.tau[first.index] == pytest.approx(2.0)
        assert arc.tau[first.index + 1] == pytest.approx(1.0)
        assert np.all(arc.tau >= 0.0)

    def test_timer_is_nan_without_dwell_parameters(self, make_scenario):
        arc = simulate(make_scenario())
        assert np.all(np.isnan(arc.tau))

    def test_flow_intervals(self, switched):
        arc = simulate(switched)
        intervals = arc.flow_intervals()
        assert len(intervals) == 3
        assert intervals[0][0] == 0 and intervals[-1][1] == len(arc)


class TestNesterovLoop:
    def test_resets_every_period(self, make_scenario):
        arc = simulate(make_scenario(controller=_nesterov(), epsilon=0.04, horizon=5.5))
        resets = arc.jumps_of(CONTROLLER_RESET)
        assert [jump.time.t for jump in resets] == pytest.approx([1.0, 2.0, 3.0, 4.0, 5.0])
        for jump in resets:
            assert arc.u3[jump.index] == pytest.approx(2.0)
            assert arc.u3[jump.index + 1] == 1.0
            np.testing.assert_array_equal(arc.u2[jump.index + 1], arc.u1[jump.index + 1])
        assert np.all(arc.u3 <= 2.0 + 1e-9)

    def test_plant_switch_before_reset(self, make_scenario):
        plant = scalar_plant(((-1.0, 1.0, 1.0), (-2.0, 2.0, 2.0)))
        switching = SwitchingConfig(signal=SwitchingSignal(events=((0.0, 1), (1.0, 2)), horizon=1.5))
        arc = simulate(make_scenario(plant=plant, controller=_nesterov(), epsilon=(0.04, 0.04), horizon=1.5,
                                     switching=switching))
        kinds = [jump.kind for jump in arc.jumps]
        assert kinds == [PLANT_SWITCH, CONTROLLER_RESET]
        assert arc.jumps[0].time.t == arc.jumps[1].time.t == pytest.approx(1.0)
        assert arc.jumps[1].time.j == arc.jumps[0].time.j + 1

    def test_restart_condition_enforced(self, make_scenario):
        with pytest.raises(RestartConditionViolatedError):
            simulate(make_scenario(controller=_nesterov(kappa=0.1), epsilon=0.04))

    def test_timer_grows_without_restarts(self, make_scenario):
        arc = simulate(make_scenario(controller=_nesterov(restarts=False), epsilon=0.04, horizon=3.0))
        assert not arc.jumps
        assert arc.u3[-1] == pytest.approx(4.0)


class TestDivergence:
    @pytest.fixture
    def unstable(self, make_scenario):
        # threshold sits below the initial state
        return make_scenario(controller=ControllerConfig(kind="open_loop", u0=[0.0]), x0=[1e6], horizon=1.0)

    def test_flagged_on_the_arc(self, unstable):
        arc = simulate(unstable, divergence_threshold=1e3)
        assert arc.diverged
        assert 0.0 < arc.divergence_time < 1.0

    def test_raised_on_request(self, unstable):
        with pytest.raises(NonFiniteStateError):
            simulate(unstable, divergence_threshold=1e3, raise_on_divergence=True)


class TestErrorSeries:
    @pytest.fixture
    def series(self):
        from utils._simulator import ErrorSeries
        t = np.linspace(0.0, 4.0, 5)
        return ErrorSeries(t=t, j=np.zeros(5, dtype=int), values=np.array([1.0, 0.5, 0.2, 0.05, 0.01]))

    def test_time_to_threshold(self, series):
        assert series.time_to_threshold(0.1) == 3.0
        assert series.time_to_threshold(2.0) == 0.0
        assert series.time_to_threshold(0.001) == math.inf

    def test_limsup_over_the_tail(self, series):
        assert series.limsup(0.25) == pytest.approx(0.05)
        assert series.limsup(1.0) == 1.0
