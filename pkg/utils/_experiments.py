# ############################################################################## #
# switchopt | feedback optimization on switched linear plants                    #
# Traffic example, random instances and named experiment presets                #
# ############################################################################## #

import logging
import math
import os
import time
import numpy as np

from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional

from humanfriendly import format_timespan

from utils._certificates import (analyse_arc, certify_scenario, dwell_time_bound, eiss_envelope_check, epsilon_bounds,
                                 lyapunov_decrease_check, suboptimality_bound_check)
from utils._config import load_settings
from utils._controllers import NesterovParams
from utils._cost import QuadraticCost, QuarticCost, cost_constants, random_quadratic_cost
from utils._exporter import ArcExporter
from utils._logging import setup_logger
from utils._plant import (LtiMode, SwitchedPlant, check_common_maps, is_hurwitz, mode_eigenvalues,
                          random_plant)
from utils._simulator import (CONTROLLER_RESET, PLANT_SWITCH, STIFFNESS_RATIO, ControllerConfig, DisturbanceSignal,
                              IntegratorConfig, Scenario, SwitchingConfig, controller_map, simulate)
from utils._switching import (DwellTimeParams, SwitchingSignal, constant_signal, generate_signal,
                              validate_adt)
from utils._workers import run_arms

logger = logging.getLogger(__name__)

# demand, supply and turning ratios of the two-cell urban block
CTM_PARAMETERS = {"d1": 0.79, "d2": 0.67, "s1": 1.33, "s2": 0.71, "r12": 0.79, "r21": 0.47}
CTM_REFERENCE_EIGENVALUES = ((-0.46, -0.17), (-0.17, -0.10))

RANDOM_INSTANCE_DIMS = (10, 5, 5, 6, 2)
PRESET_DIMS = (4, 2, 2, 2)
COST_SEED_OFFSET = 1000
ARMS_PER_SWEEP = 10
PRESET_MAX_STEPS = 20000
PRESET_RECORDS = 2000
STEP_RATIO = 2.0 * STIFFNESS_RATIO
REGULATION_DECAYS = 6.0
SUMMARY_FILE = "summary.ini"

ERROR_THRESHOLD = 1e-2
CONVERGED_ERROR = 1e-3
FROZEN_ERROR = 1e-4
RESIDUAL_SLACK = 1e-3
RESIDUAL_FLOOR = 1e-9


class ExperimentError(Exception):
    pass


class UnknownExperimentError(ExperimentError):
    pass


# ---------------------------------------------------------------------------- #
# instances
# ---------------------------------------------------------------------------- #

def ctm_matrices(d1, d2, s1, s2, r12, r21):
    """Free-flow/congestion regimes of the two-cell block as state matrices."""
    A1 = np.array([[-d1 + r21 * s1, 0.0],
                   [-s1 + r12 * d1, -(1.0 - r21) * d2]])
    A2 = np.array([[-(1.0 - r12) * d1, -s2 + r21 * d2],
                   [0.0, -d2 + r12 * s2]])
    return A1, A2


def build_ctm(controlled=True):
    """Two-mode traffic plant; inflow u enters both cells, w̃ is the uncontrolled demand.

    With ``controlled`` the second mode is rewired to B₂ = A₂A₁⁻¹B₁, E₂ = A₂A₁⁻¹E₁
    so that both modes share one steady state.
    """
    A1, A2 = ctm_matrices(**CTM_PARAMETERS)
    B1 = np.ones((2, 1))
    E1 = np.eye(2)
    if controlled:
        B2 = A2 @ np.linalg.solve(A1, B1)
        E2 = A2 @ np.linalg.solve(A1, E1)
    else:
        B2, E2 = B1.copy(), E1.copy()
    plant = SwitchedPlant(modes=(LtiMode(A1, B1, E1), LtiMode(A2, B2, E2)), C=np.eye(2), D=np.zeros((2, 2)))
    ctm_eigenvalue_report(plant)
    return plant


def ctm_eigenvalue_report(plant):
    """Real parts of every mode's eigenvalues to two decimals; mismatches are logged."""
    rounded = []
    for sigma, (mode, reference) in enumerate(zip(plant.modes, CTM_REFERENCE_EIGENVALUES), start=1):
        values = tuple(round(z.real, 2) for z in mode_eigenvalues(mode))
        rounded.append(values)
        if sorted(values) != sorted(reference):
            logger.warning(f"CTM mode {sigma}: eigenvalues {values} differ from the reference {reference}")
    return tuple(rounded)


def scalar_plant(modes, C=1.0, D=0.0):
    """Single-state plant from (a, b, e) triples, one per mode."""
    return SwitchedPlant(modes=tuple(LtiMode([[a]], [[b]], [[e]]) for a, b, e in modes), C=[[C]], D=[[D]])


def _fit_horizon(name, horizon, step, max_steps=PRESET_MAX_STEPS):
    if horizon / step > max_steps:
        truncated = max_steps * step
        logger.warning(f"'{name}': horizon {horizon:.6g} needs more than {max_steps} steps, "
                       f"truncated to {truncated:.6g}")
        return truncated
    return horizon


def make_scenario(name, plant, cost, controller, epsilon, horizon, disturbance=None, switching=None,
                  x0=None, step_ratio=STEP_RATIO):
    step = min(epsilon) / step_ratio
    stride = max(1, math.ceil(horizon / step / PRESET_RECORDS))
    disturbance = disturbance or DisturbanceSignal.constant(np.zeros(plant.q))
    switching = switching or SwitchingConfig(signal=constant_signal(horizon), kind="constant")
    return Scenario(
        name=name,
        plant=plant,
        cost=cost,
        controller=controller,
        switching=switching,
        epsilon=tuple(epsilon),
        disturbance=disturbance,
        integrator=IntegratorConfig(step=step, horizon=horizon, record_stride=stride),
        x0=x0,
    )


def _fraction_of_bounds(plant, cost, controller, fraction=0.5):
    bounds = epsilon_bounds(plant, cost, controller)
    if any(math.isinf(bound) for bound in bounds):
        raise ExperimentError("time-scale bound is unbounded for some mode")
    return tuple(fraction * bound for bound in bounds)


def _generated_switching(plant, cost, controller, horizon, seed, factor=2.0, N0=1, probability=0.5):
    tau_d = factor * max(dwell_time_bound(plant, cost, controller), 1e-3)
    dwell = DwellTimeParams(tau_d=tau_d, N0=N0)
    signal = generate_signal(dwell, plant.S, horizon, seed, probability=probability)
    return SwitchingConfig(signal=signal, dwell=dwell, kind="generator", seed=seed, probability=probability)


def _random_gradient_scenario(name, seed, dims, S):
    n, m, p, q = dims
    plant = random_plant(seed, n, m, p, q, S=S)
    cost = random_quadratic_cost(seed + COST_SEED_OFFSET, m, p)
    rng = np.random.default_rng(seed)
    controller = ControllerConfig(kind="gradient", u0=rng.uniform(-1.0, 1.0, m))
    disturbance = DisturbanceSignal.constant(rng.uniform(-1.0, 1.0, q))

    epsilon = _fraction_of_bounds(plant, cost, controller)
    constants = cost_constants(cost, controller_map(plant))
    horizon = REGULATION_DECAYS * constants.ell / (2.0 * constants.mu ** 2)
    horizon = _fit_horizon(name, horizon, min(epsilon) / STEP_RATIO)

    switching = None
    if S > 1:
        switching = _generated_switching(plant, cost, controller, horizon, seed)
    return make_scenario(name, plant, cost, controller, epsilon, horizon, disturbance, switching,
                         step_ratio=STIFFNESS_RATIO)


def build_random_instance(seed, dims=RANDOM_INSTANCE_DIMS):
    """Two-mode random scenario with ε = ε̄/2 and τ_d twice the dwell bound."""
    n, m, p, q, S = dims
    return _random_gradient_scenario(f"random-{seed}", seed, (n, m, p, q), S)


# ---------------------------------------------------------------------------- #
# preset arms
# ---------------------------------------------------------------------------- #

NESTEROV_PLANT = ((-10.0, 10.0, 10.0),)
NESTEROV_SWITCHED_PLANT = ((-10.0, 10.0, 10.0), (-5.0, 5.0, 5.0))
QUARTIC_PLANT = ((-20.0, 20.0, 20.0),)


def _unit_cost(weight=1.0, y_ref=1.0):
    return QuadraticCost(R=[[weight]], Qy=[[weight]], y_ref=[y_ref])


def _nesterov(kappa=1.0, rho=1.0, delta=1.0, Delta=2.0, r0=True, restarts=True):
    return NesterovParams(kappa=kappa, rho=rho, delta=delta, Delta=Delta, r0=r0, restarts=restarts)


def grad_regulation_arms(seed):
    return [_random_gradient_scenario(f"seed-{seed + k}", seed + k, PRESET_DIMS, 1)
            for k in range(ARMS_PER_SWEEP)]


def grad_switched_arms(seed):
    return [_random_gradient_scenario(f"seed-{seed + k}", seed + k, PRESET_DIMS, 2)
            for k in range(ARMS_PER_SWEEP)]


def grad_tracking_arms(seed, horizon=20.0):
    plant = scalar_plant(((-1.0, 1.0, 1.0),))
    cost = _unit_cost(y_ref=0.0)
    controller = ControllerConfig(kind="gradient", u0=[0.0])
    epsilon = _fraction_of_bounds(plant, cost, controller)

    def sinusoid(amplitude, freeze_after=None):
        return DisturbanceSignal(kind="sinusoid", amplitude=[amplitude], frequency=1.0, freeze_after=freeze_after)

    return [
        make_scenario("slow", plant, cost, controller, epsilon, horizon, sinusoid(0.1)),
        make_scenario("fast", plant, cost, controller, epsilon, horizon, sinusoid(1.0)),
        make_scenario("frozen", plant, cost, controller, epsilon, horizon, sinusoid(1.0, 0.5 * horizon)),
    ]


def nesterov_regulation_arms(seed, horizon=30.0):
    plant = scalar_plant(NESTEROV_PLANT)
    cost = _unit_cost()
    restarted = ControllerConfig(kind="nesterov", u0=[0.0], params=_nesterov())
    epsilon = _fraction_of_bounds(plant, cost, restarted)
    unrestarted = ControllerConfig(kind="nesterov", u0=[0.0], params=_nesterov(restarts=False))
    return [
        make_scenario("restarted", plant, cost, restarted, epsilon, horizon),
        make_scenario("no-restart", plant, cost, unrestarted, epsilon, horizon),
    ]


def nesterov_switched_arms(seed, horizon=30.0):
    plant = scalar_plant(NESTEROV_SWITCHED_PLANT)
    cost = _unit_cost()
    controller = ControllerConfig(kind="nesterov", u0=[0.0], params=_nesterov())
    epsilon = _fraction_of_bounds(plant, cost, controller)
    # the accelerated dwell bound is long against the horizon: spend a chatter budget of two
    # on every admissible candidate so both modes are visited
    switching = _generated_switching(plant, cost, controller, horizon, seed, N0=2, probability=1.0)
    disturbance = DisturbanceSignal.constant([0.2])
    return [make_scenario("switched", plant, cost, controller, epsilon, horizon, disturbance, switching)]


def nesterov_tracking_arms(seed, horizon=30.0):
    plant = scalar_plant(NESTEROV_PLANT)
    cost = _unit_cost()
    controller = ControllerConfig(kind="nesterov", u0=[0.0], params=_nesterov())
    epsilon = _fraction_of_bounds(plant, cost, controller)
    disturbance = DisturbanceSignal(kind="sinusoid", amplitude=[0.5], frequency=1.0)
    return [make_scenario("sinusoid", plant, cost, controller, epsilon, horizon, disturbance)]


def _quartic_scenario(name, Delta, fraction, horizon):
    plant = scalar_plant(QUARTIC_PLANT)
    cost = QuarticCost(y_ref=1.0)
    controller = ControllerConfig(kind="nesterov", u0=[0.0], params=_nesterov(16.0, 2.0, 1.0, Delta, r0=False))
    epsilon = _fraction_of_bounds(plant, cost, controller, fraction)
    return make_scenario(name, plant, cost, controller, epsilon, horizon, step_ratio=STIFFNESS_RATIO)


def quartic_arms(seed, horizon=8.0):
    return [
        _quartic_scenario("delta-2", 2.0, 0.9, horizon),
        _quartic_scenario("delta-2-half", 2.0, 0.45, horizon),
        _quartic_scenario("delta-2-quarter", 2.0, 0.225, horizon),
        _quartic_scenario("delta-5", 5.0, 0.9, horizon),
    ]


def grad_vs_nesterov_arms(seed, horizon=60.0, quartic_horizon=8.0, gradient_quartic_horizon=48.0):
    plant = scalar_plant(((-10.0, 10.0, 0.0),))
    cost = _unit_cost(weight=0.025)
    epsilon = (0.08,)
    gradient = ControllerConfig(kind="gradient", u0=[0.0])
    nesterov = ControllerConfig(kind="nesterov", u0=[0.0], params=_nesterov(kappa=10.0))

    quartic_plant = scalar_plant(QUARTIC_PLANT)
    quartic_cost = QuarticCost(y_ref=1.0)
    quartic_gradient = ControllerConfig(kind="gradient", u0=[0.0])
    quartic_epsilon = _fraction_of_bounds(quartic_plant, quartic_cost, quartic_gradient)
    return [
        make_scenario("gradient", plant, cost, gradient, epsilon, horizon),
        make_scenario("nesterov", plant, cost, nesterov, epsilon, horizon),
        # gradient flow on the quartic closes in like 1/√(1+2t): it needs the longer run to
        # undercut the accelerated residual
        make_scenario("gradient-quartic", quartic_plant, quartic_cost, quartic_gradient, quartic_epsilon,
                      gradient_quartic_horizon, step_ratio=STIFFNESS_RATIO),
        _quartic_scenario("nesterov-quartic", 2.0, 0.9, quartic_horizon),
    ]


def ctm_arms(seed, horizon=4.0, period=1.0, uncontrolled_horizon=20.0):
    cost = QuadraticCost(R=[[1.0]], Qy=0.01 * np.eye(2), y_ref=[1.0, 1.0])
    disturbance = DisturbanceSignal.constant([0.2, 0.1])

    plant = build_ctm(controlled=True)
    controller = ControllerConfig(kind="gradient", u0=[0.0])
    epsilon = _fraction_of_bounds(plant, cost, controller)
    switching = _generated_switching(plant, cost, controller, horizon, seed)
    controlled = make_scenario("controlled", plant, cost, controller, epsilon, horizon, disturbance, switching)

    raw = build_ctm(controlled=False)
    events = tuple((k * period, 1 + k % 2) for k in range(int(uncontrolled_horizon / period)))
    alternating = SwitchingConfig(signal=SwitchingSignal(events=events, horizon=uncontrolled_horizon))
    uncontrolled = make_scenario("uncontrolled", raw, cost, ControllerConfig(kind="open_loop", u0=[0.0]),
                                 (1.0, 1.0), uncontrolled_horizon, disturbance, alternating)
    return [controlled, uncontrolled]


# ---------------------------------------------------------------------------- #
# acceptance metrics
# ---------------------------------------------------------------------------- #

def _envelope(result, settings):
    analysis = result.analysis
    if result.certification.eiss is None:
        return None
    return eiss_envelope_check(analysis.regulation, result.certification.eiss, analysis.z0_err,
                               analysis.sup_wdot, settings.envelope_tolerance)


def _flow_decrease(result, settings):
    constants = result.certification.constants
    if result.certification.monitor is None or constants.mu is None:
        return None
    return lyapunov_decrease_check(result.arc, result.certification.monitor, result.scenario.disturbance,
                                   rate=2.0 * constants.mu ** 2 / constants.ell, tolerance=settings.flow_tolerance)


def _sweep_metrics(results, settings, check_adt=False):
    violations, worst, switches, adt_ok = 0, -math.inf, 0, True
    decreasing, flow_ok = 0, True
    for result in results.values():
        report = _envelope(result, settings)
        flow = _flow_decrease(result, settings)
        if flow is not None:
            decreasing += int(flow.holds)
            flow_ok = flow_ok and flow.holds
        if report is None or not report.holds:
            violations += 1
        if report is not None:
            worst = max(worst, report.max_violation)
        switching = result.scenario.switching
        switches += int(switching.signal.switch_times.size)
        if check_adt and switching.dwell is not None:
            adt_ok = adt_ok and validate_adt(switching.signal, switching.dwell).valid
    metrics = {"arms": len(results), "envelope_violations": violations, "worst_excess": worst,
               "flow_decrease_arms": decreasing}
    if check_adt:
        metrics.update({"switches": switches, "adt_valid": adt_ok})
    metrics["passed"] = violations == 0 and adt_ok and flow_ok
    return metrics


def evaluate_grad_regulation(results, settings):
    return _sweep_metrics(results, settings)


def evaluate_grad_switched(results, settings):
    return _sweep_metrics(results, settings, check_adt=True)


def evaluate_grad_tracking(results, settings):
    metrics, within = {}, True
    for name in ("slow", "fast"):
        result = results[name]
        eiss = result.certification.eiss
        limsup = result.analysis.tracking.limsup()
        bound = math.inf if eiss is None else eiss.a0 * eiss.d0 * result.analysis.sup_wdot
        metrics[f"{name}_limsup"] = limsup
        metrics[f"{name}_bound"] = bound
        within = within and limsup <= bound
    ratio = metrics["fast_limsup"] / metrics["slow_limsup"] if metrics["slow_limsup"] > 0.0 else math.inf
    frozen = float(results["frozen"].analysis.tracking.values[-1])
    linear = 0.5 * 10.0 <= ratio <= 2.0 * 10.0
    metrics.update({"limsup_ratio": ratio, "frozen_final_error": frozen,
                    "passed": within and linear and frozen < FROZEN_ERROR})
    return metrics


def evaluate_nesterov_regulation(results, settings):
    restarted, unrestarted = results["restarted"], results["no-restart"]
    envelope = _envelope(restarted, settings)
    certificate = restarted.certification.controller_certificate
    contraction = lyapunov_decrease_check(restarted.arc, restarted.certification.monitor,
                                          restarted.scenario.disturbance, check="jump_contraction",
                                          contraction=certificate.c_reset, kind=CONTROLLER_RESET)
    finite = float(restarted.analysis.regulation.values[-1])
    infinite = float(unrestarted.analysis.regulation.values[-1])
    contrast = unrestarted.arc.diverged or infinite > 10.0 * finite
    converged = finite <= CONVERGED_ERROR
    return {
        "envelope_holds": envelope is not None and envelope.holds,
        "resets_checked": contraction.checked,
        "reset_contraction_holds": contraction.holds,
        "restarted_final_error": finite,
        "no_restart_final_error": infinite,
        "no_restart_diverged": unrestarted.arc.diverged,
        "passed": envelope is not None and envelope.holds and contraction.holds and converged and contrast,
    }


def evaluate_nesterov_switched(results, settings):
    result = results["switched"]
    envelope = _envelope(result, settings)
    switching = result.scenario.switching
    adt = validate_adt(switching.signal, switching.dwell)
    switches = len(result.arc.jumps_of(PLANT_SWITCH))
    return {
        "switches": switches,
        "resets": len(result.arc.jumps_of(CONTROLLER_RESET)),
        "envelope_holds": envelope is not None and envelope.holds,
        "adt_valid": adt.valid,
        "passed": envelope is not None and envelope.holds and adt.valid and switches >= 1,
    }


def evaluate_nesterov_tracking(results, settings):
    result = results["sinusoid"]
    eiss = result.certification.eiss
    limsup = result.analysis.regulation.limsup()
    bound = math.inf if eiss is None else eiss.a0 * eiss.d0 * result.analysis.sup_wdot
    return {"limsup": limsup, "bound": bound, "passed": limsup <= bound}


def _residual(result):
    return result.analysis.regulation.limsup()


def evaluate_quartic(results, settings, theta=0.5):
    sweep = [results[name] for name in ("delta-2", "delta-2-half", "delta-2-quarter")]
    residuals = [_residual(result) for result in sweep]
    monotone = all(later <= earlier * (1.0 + RESIDUAL_SLACK) + RESIDUAL_FLOOR
                   for earlier, later in zip(residuals, residuals[1:]))
    finite = all(math.isfinite(value) for value in residuals)

    base = results["delta-2"]
    gap = base.analysis.gap
    alpha = suboptimality_bound_check(base.arc, base.certification.monitor, base.scenario.disturbance, gap,
                                      nu=gap.limsup(), theta=theta, varrho=settings.alpha_varrho)
    residual_long = _residual(results["delta-5"])
    return {
        "residual_eps0": residuals[0],
        "residual_eps0_half": residuals[1],
        "residual_eps0_quarter": residuals[2],
        "residual_delta5": residual_long,
        "shorter_period_not_worse": residuals[0] <= residual_long,
        "alpha_bound_holds": alpha.holds,
        "passed": finite and monotone and alpha.holds,
    }


def evaluate_grad_vs_nesterov(results, settings):
    gradient_time = results["gradient"].analysis.regulation.time_to_threshold(ERROR_THRESHOLD)
    nesterov_time = results["nesterov"].analysis.regulation.time_to_threshold(ERROR_THRESHOLD)
    gradient_quartic = float(results["gradient-quartic"].analysis.regulation.values[-1])
    nesterov_quartic = _residual(results["nesterov-quartic"])
    return {
        "gradient_time_to_threshold": gradient_time,
        "nesterov_time_to_threshold": nesterov_time,
        "gradient_quartic_final_error": gradient_quartic,
        "nesterov_quartic_residual": nesterov_quartic,
        "gradient_more_accurate_on_quartic": gradient_quartic < nesterov_quartic,
        "passed": nesterov_time < gradient_time and gradient_quartic < nesterov_quartic,
    }


def evaluate_ctm(results, settings):
    controlled, uncontrolled = results["controlled"], results["uncontrolled"]
    plant = controlled.scenario.plant
    eigenvalues = ctm_eigenvalue_report(plant)
    hurwitz = all(is_hurwitz(mode.A) for mode in plant.modes)
    common = check_common_maps(plant)
    final = float(controlled.analysis.tracking.values[-1])
    visited = set(int(s) for s in controlled.arc.sigma) == {1, 2}
    half = uncontrolled.arc.t >= 0.5 * uncontrolled.arc.t[-1]
    swing = float(np.max(np.ptp(uncontrolled.arc.x[half], axis=0)))
    metrics = {f"mode_{sigma}_eigenvalues": str(values) for sigma, values in enumerate(eigenvalues, start=1)}
    metrics.update({
        "hurwitz": hurwitz,
        "maps_deviation": common.max_deviation,
        "controlled_final_error": final,
        "both_modes_visited": visited,
        "uncontrolled_state_swing": swing,
        "passed": hurwitz and common.common and final <= FROZEN_ERROR and visited,
    })
    return metrics


@dataclass(frozen=True)
class Preset:
    description: str
    arms: Callable
    evaluate: Callable
    budget: Optional[float] = None


PRESETS = {
    "grad-regulation": Preset("gradient flow, single mode, constant w", grad_regulation_arms,
                              evaluate_grad_regulation, 10.0),
    "grad-switched": Preset("gradient flow under generated ADT switching", grad_switched_arms,
                            evaluate_grad_switched),
    "grad-tracking": Preset("gradient flow tracking a sinusoidal disturbance", grad_tracking_arms,
                            evaluate_grad_tracking),
    "nesterov-regulation": Preset("restarted accelerated flow against the unrestarted one",
                                  nesterov_regulation_arms, evaluate_nesterov_regulation, 20.0),
    "nesterov-switched": Preset("restarted accelerated flow under ADT switching", nesterov_switched_arms,
                                evaluate_nesterov_switched),
    "nesterov-tracking": Preset("restarted accelerated flow tracking a sinusoid", nesterov_tracking_arms,
                                evaluate_nesterov_tracking),
    "quartic": Preset("convex-only cost, restart period and time-scale sweep", quartic_arms,
                      evaluate_quartic, 20.0),
    "ctm": Preset("two-cell traffic block, controlled and uncontrolled", ctm_arms, evaluate_ctm, 10.0),
    "grad-vs-nesterov": Preset("convergence speed against accuracy", grad_vs_nesterov_arms,
                               evaluate_grad_vs_nesterov),
}


# ---------------------------------------------------------------------------- #
# runner
# ---------------------------------------------------------------------------- #

@dataclass(frozen=True, eq=False)
class ArmResult:
    scenario: Scenario
    arc: object
    certification: object
    analysis: object
    path: Optional[str]


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    name: str
    seed: int
    arms: dict
    metrics: dict
    duration: float
    paths: tuple = field(default_factory=tuple)

    @property
    def passed(self):
        return bool(self.metrics.get("passed", False))


class ExperimentRunner:
    def __init__(self, settings=None):
        self.settings = settings or load_settings()
        self.logger = setup_logger("experiments", self.settings.log_dir, self.settings.log_file)
        self.exporter = ArcExporter(self.settings)

    def run_arm(self, scenario, out_dir=None):
        arc = simulate(scenario, divergence_threshold=self.settings.divergence_threshold)
        certification = certify_scenario(scenario, self.settings)
        path = None
        if out_dir is None:
            analysis = analyse_arc(arc, scenario, certification)
        else:
            path = os.path.join(out_dir, f"{scenario.name}.csv")
            analysis = self.exporter.write_csv(arc, scenario, certification, path)
            # resolved arm next to its arc, loadable by the simulate command
            from utils._scenario import save_scenario
            save_scenario(scenario, os.path.join(out_dir, f"{scenario.name}.ini"))
        return ArmResult(scenario=scenario, arc=arc, certification=certification, analysis=analysis, path=path)

    def run(self, name, out_dir=None, seed=None):
        preset = PRESETS.get(name)
        if preset is None:
            raise UnknownExperimentError(f"unknown experiment '{name}' (available: {', '.join(sorted(PRESETS))})")
        seed = self.settings.seed if seed is None else seed
        arm_dir = None if out_dir is None else os.path.join(out_dir, name)

        self.logger.info(f"Running experiment '{name}' (seed {seed}): {preset.description}")
        start = time.monotonic()
        scenarios = preset.arms(seed)
        jobs = [(scenario.name, partial(self.run_arm, scenario, arm_dir)) for scenario in scenarios]
        arms = run_arms(jobs, self.settings.workers)
        metrics = preset.evaluate(arms, self.settings)
        duration = time.monotonic() - start

        budget = self.settings.budget if preset.budget is None else preset.budget
        metrics["budget_ok"] = duration <= budget
        if not metrics["budget_ok"]:
            self.logger.warning(f"Experiment '{name}' took {format_timespan(duration)}, "
                                f"over its budget of {format_timespan(budget)}")
        self.logger.info(f"Experiment '{name}' finished in {format_timespan(duration)}: "
                         f"{'passed' if metrics.get('passed') else 'failed'}")

        if out_dir is not None:
            summary = dict(metrics)
            summary.update({"seed": seed, "duration": format_timespan(duration)})
            self.exporter.write_summary({name: summary}, os.path.join(out_dir, SUMMARY_FILE))

        paths = tuple(result.path for result in arms.values() if result.path is not None)
        return ExperimentResult(name=name, seed=seed, arms=arms, metrics=metrics, duration=duration, paths=paths)
