# ############################################################################## #
# switchopt | feedback optimization on switched linear plants                    #
# Closed-loop hybrid simulation over hybrid time domains                         #
# ############################################################################## #

import logging
import math
import numpy as np

from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Optional

from utils._controllers import (GradientController, NesterovController, OpenLoopController,
                                require_restart_condition)
from utils._cost import cost_constants, optimal_input, suboptimality_gap
from utils._plant import (DimensionMismatchError, as_vector, check_common_maps, equilibrium_operators,
                          plant_maps)
from utils._switching import mode_at

logger = logging.getLogger(__name__)

STIFFNESS_RATIO = 10.0
EVENT_TOLERANCE = 1e-12
DEFAULT_DIVERGENCE_THRESHOLD = 1e12
TARGET_CACHE_SIZE = 1024

PLANT_SWITCH = "plant_switch"
CONTROLLER_RESET = "controller_reset"


class SimulationError(Exception):
    pass


class StiffnessBudgetExceededError(SimulationError):
    pass


class NonFiniteStateError(SimulationError):
    pass


class ScenarioError(SimulationError):
    pass


class HybridTime(NamedTuple):
    t: float
    j: int


@dataclass(frozen=True)
class JumpRecord:
    time: HybridTime
    kind: str
    index: int  # sample index of the pre-jump record; the post-jump record follows it


@dataclass(frozen=True, eq=False)
class DisturbanceSignal:
    """Exogenous input w(t) with an analytic derivative.

    ``constant`` holds ``value``; ``sinusoid`` is offset + amplitude·sin(ωt + phase)
    channel-wise with one frequency ω; ``piecewise_linear`` interpolates
    ``values`` at ``times`` and blends every corner quadratically over
    [t_k − smoothing, t_k + smoothing] so that w stays C¹. After
    ``freeze_after`` the signal is held at its value at that time.
    """

    kind: str
    value: Optional[np.ndarray] = None
    offset: Optional[np.ndarray] = None
    amplitude: Optional[np.ndarray] = None
    phase: Optional[np.ndarray] = None
    frequency: float = 0.0
    times: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    smoothing: float = 0.0
    freeze_after: Optional[float] = None

    def __post_init__(self):
        if self.kind == "constant":
            if self.value is None:
                raise ScenarioError("constant disturbance needs a value")
            object.__setattr__(self, "value", as_vector(self.value, "value"))
        elif self.kind == "sinusoid":
            amplitude = as_vector(self.amplitude, "amplitude")
            q = amplitude.shape[0]
            offset = np.zeros(q) if self.offset is None else as_vector(self.offset, "offset", q)
            phase = np.zeros(q) if self.phase is None else as_vector(self.phase, "phase", q)
            if self.frequency < 0.0:
                raise ScenarioError("sinusoid frequency must be nonnegative")
            object.__setattr__(self, "amplitude", amplitude)
            object.__setattr__(self, "offset", offset)
            object.__setattr__(self, "phase", phase)
        elif self.kind == "piecewise_linear":
            times = as_vector(self.times, "times")
            values = np.array(self.values, dtype=float)
            if values.ndim == 1:
                values = values.reshape(-1, 1)
            if times.shape[0] < 2 or values.shape[0] != times.shape[0]:
                raise ScenarioError("piecewise_linear needs at least two knots with one value row each")
            spacing = np.diff(times)
            if np.any(spacing <= 0.0):
                raise ScenarioError("piecewise_linear knot times must be strictly increasing")
            if not 0.0 < self.smoothing <= 0.5 * float(spacing.min()):
                raise ScenarioError("smoothing must be positive and at most half the smallest knot spacing")
            slopes = np.diff(values, axis=0) / spacing[:, None]
            padded = np.vstack([np.zeros((1, values.shape[1])), slopes, np.zeros((1, values.shape[1]))])
            values.setflags(write=False)
            padded.setflags(write=False)
            object.__setattr__(self, "times", times)
            object.__setattr__(self, "values", values)
            object.__setattr__(self, "_slopes", padded)
        else:
            raise ScenarioError(f"unknown disturbance kind '{self.kind}'")

    @classmethod
    def constant(cls, value):
        return cls(kind="constant", value=value)

    @property
    def q(self):
        if self.kind == "constant":
            return self.value.shape[0]
        if self.kind == "sinusoid":
            return self.amplitude.shape[0]
        return self.values.shape[1]

    def _frozen(self, t):
        return self.freeze_after is not None and t > self.freeze_after

    def value_at(self, t):
        if self._frozen(t):
            t = self.freeze_after
        if self.kind == "constant":
            return self.value
        if self.kind == "sinusoid":
            return self.offset + self.amplitude * np.sin(self.frequency * t + self.phase)
        return self._piecewise_value(t)

    def derivative(self, t):
        if self._frozen(t) or self.kind == "constant":
            return np.zeros(self.q)
        if self.kind == "sinusoid":
            return self.amplitude * self.frequency * np.cos(self.frequency * t + self.phase)
        return self._piecewise_derivative(t)

    def sup_derivative(self):
        """sup‖ẇ(t)‖ in closed form."""
        if self.kind == "constant":
            return 0.0
        if self.kind == "sinusoid":
            a2 = self.amplitude ** 2
            rotating = abs(np.sum(a2 * np.exp(2j * self.phase)))
            return float(self.frequency * math.sqrt(0.5 * (float(np.sum(a2)) + rotating)))
        return float(np.max(np.linalg.norm(self._slopes, axis=1)))

    def _corner(self, t):
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(t - self.times[k]) < self.smoothing:
            return k
        return None

    def _piecewise_value(self, t):
        k = self._corner(t)
        if k is None:
            return np.array([np.interp(t, self.times, self.values[:, i]) for i in range(self.q)])
        h = self.smoothing
        left, right = self._slopes[k], self._slopes[k + 1]
        s = t - (self.times[k] - h)
        return self.values[k] - left * h + left * s + (right - left) * s ** 2 / (4.0 * h)

    def _piecewise_derivative(self, t):
        k = self._corner(t)
        if k is None:
            return self._slopes[int(np.searchsorted(self.times, t, side="right"))].copy()
        h = self.smoothing
        left, right = self._slopes[k], self._slopes[k + 1]
        s = t - (self.times[k] - h)
        return left + (right - left) * s / (2.0 * h)


@dataclass(frozen=True, eq=False)
class ControllerConfig:
    kind: str
    u0: Optional[np.ndarray] = None
    params: Optional[object] = None
    u2_0: Optional[np.ndarray] = None
    u3_0: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("gradient", "nesterov", "open_loop"):
            raise ScenarioError(f"unknown controller kind '{self.kind}'")
        if self.kind == "nesterov" and self.params is None:
            raise ScenarioError("the nesterov controller needs its parameters")


@dataclass(frozen=True)
class SwitchingConfig:
    signal: object
    dwell: Optional[object] = None
    rate: float = 1.0
    tau0: Optional[float] = None
    kind: str = "events"
    seed: Optional[int] = None
    probability: float = 0.5

    @property
    def initial_timer(self):
        if self.dwell is None:
            return math.nan
        return float(self.dwell.N0 if self.tau0 is None else self.tau0)


@dataclass(frozen=True)
class IntegratorConfig:
    step: float
    horizon: float
    record_stride: int = 1

    def __post_init__(self):
        if not self.step > 0.0 or not self.horizon > 0.0:
            raise ScenarioError("integrator step and horizon must be positive")
        if self.record_stride < 1:
            raise ScenarioError("record_stride must be a positive integer")


@dataclass(frozen=True)
class CertificateOptions:
    varrho: Optional[float] = None
    theta: Optional[float] = None
    b_fraction: Optional[float] = None
    overrides: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    plant: object
    cost: object
    controller: ControllerConfig
    switching: SwitchingConfig
    epsilon: tuple
    disturbance: DisturbanceSignal
    integrator: IntegratorConfig
    x0: Optional[np.ndarray] = None
    certificates: CertificateOptions = field(default_factory=CertificateOptions)

    def __post_init__(self):
        epsilon = tuple(float(e) for e in self.epsilon)
        if len(epsilon) != self.plant.S:
            raise ScenarioError(f"{len(epsilon)} time-scale values given for {self.plant.S} modes")
        if any(not e > 0.0 for e in epsilon):
            raise ScenarioError("every epsilon must be positive")
        if self.disturbance.q != self.plant.q:
            raise DimensionMismatchError(f"disturbance has {self.disturbance.q} channels, plant expects q={self.plant.q}")
        if self.switching.signal.max_mode > self.plant.S:
            raise ScenarioError(f"switching signal uses mode {self.switching.signal.max_mode}, plant has {self.plant.S}")
        if self.switching.signal.horizon < self.integrator.horizon - EVENT_TOLERANCE:
            raise ScenarioError("switching signal ends before the integration horizon")
        if self.x0 is not None:
            object.__setattr__(self, "x0", as_vector(self.x0, "x0", self.plant.n))
        object.__setattr__(self, "epsilon", epsilon)


@dataclass(frozen=True, eq=False)
class HybridArc:
    t: np.ndarray
    j: np.ndarray
    x: np.ndarray
    controller: np.ndarray
    tau: np.ndarray
    sigma: np.ndarray
    jumps: tuple
    controller_kind: str
    controller_labels: tuple
    m: int
    diverged: bool = False
    divergence_time: Optional[float] = None

    def __len__(self):
        return self.t.shape[0]

    @property
    def u1(self):
        return self.controller[:, :self.m]

    @property
    def u2(self):
        if self.controller_kind != "nesterov":
            return None
        return self.controller[:, self.m:2 * self.m]

    @property
    def u3(self):
        if self.controller_kind != "nesterov":
            return None
        return self.controller[:, -1]

    def hybrid_time(self, index):
        return HybridTime(float(self.t[index]), int(self.j[index]))

    def state_vectors(self):
        """Rows of (x, controller state, τ, σ)."""
        return np.hstack([self.x, self.controller, self.tau[:, None], self.sigma[:, None].astype(float)])

    def samples(self):
        vectors = self.state_vectors()
        for index in range(len(self)):
            yield self.hybrid_time(index), vectors[index]

    def jumps_of(self, kind):
        return [jump for jump in self.jumps if jump.kind == kind]

    def flow_intervals(self):
        """(start, stop) sample index ranges sharing one jump count."""
        intervals = []
        start = 0
        for index in range(1, len(self) + 1):
            if index == len(self) or self.j[index] != self.j[start]:
                intervals.append((start, index))
                start = index
        return intervals

    def is_well_formed(self):
        if len(self) == 0:
            return False
        dt = np.diff(self.t)
        dj = np.diff(self.j)
        flows = dj == 0
        if np.any(dj < 0) or np.any(dj > 1):
            return False
        if np.any(dt[flows] <= 0.0) or np.any(dt[~flows] != 0.0):
            return False
        return int(self.j[-1]) == len(self.jumps)


@dataclass(frozen=True, eq=False)
class ErrorSeries:
    t: np.ndarray
    j: np.ndarray
    values: np.ndarray

    def __len__(self):
        return self.values.shape[0]

    def tail(self, fraction=0.2):
        start = self.t[-1] - fraction * (self.t[-1] - self.t[0])
        return self.values[self.t >= start]

    def limsup(self, fraction=0.2):
        return float(np.max(self.tail(fraction)))

    def time_to_threshold(self, threshold):
        """Earliest time after which every value stays at or below ``threshold``."""
        above = np.nonzero(self.values > threshold)[0]
        if above.size == 0:
            return float(self.t[0])
        if above[-1] == len(self) - 1:
            return math.inf
        return float(self.t[above[-1] + 1])


def rk4_step(vector_field, t, z, dt):
    k1 = vector_field(t, z)
    k2 = vector_field(t + 0.5 * dt, z + 0.5 * dt * k1)
    k3 = vector_field(t + 0.5 * dt, z + 0.5 * dt * k2)
    k4 = vector_field(t + dt, z + dt * k3)
    return z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def controller_map(plant):
    """Steady-state map the controllers are built on (mode 1's, common to all modes)."""
    report = check_common_maps(plant)
    if not report.common:
        logger.warning(f"steady-state maps differ across modes (deviation {report.max_deviation:.3e}); "
                       f"controllers use mode 1's map")
    return plant_maps(plant)[0]


def build_controller(scenario, ssmap):
    config = scenario.controller
    if config.kind == "gradient":
        return GradientController(scenario.cost, ssmap)
    if config.kind == "nesterov":
        return NesterovController(scenario.cost, ssmap, config.params)
    return OpenLoopController(scenario.plant.m)


def simulate(scenario, divergence_threshold=DEFAULT_DIVERGENCE_THRESHOLD, raise_on_divergence=False):
    """Integrate the closed loop and record the hybrid arc.

    Flows use fixed-step RK4 with every step sequence cut exactly at plant
    switches and controller timer events. At a shared event time the plant
    switch is applied first, then the controller reset.
    """
    plant = scenario.plant
    integrator = scenario.integrator
    step = integrator.step
    if step > min(scenario.epsilon) / STIFFNESS_RATIO * (1.0 + 1e-12):
        raise StiffnessBudgetExceededError(
            f"step {step} exceeds min(epsilon)/{STIFFNESS_RATIO:g} = {min(scenario.epsilon) / STIFFNESS_RATIO}")

    ssmap = controller_map(plant)
    controller = build_controller(scenario, ssmap)
    if scenario.controller.kind == "nesterov":
        require_restart_condition(scenario.controller.params, cost_constants(scenario.cost, ssmap).mu)

    scaled = [(mode.A / eps, mode.B / eps, mode.E / eps) for mode, eps in zip(plant.modes, scenario.epsilon)]
    C, D = plant.C, plant.D
    n = plant.n
    disturbance = scenario.disturbance
    signal = scenario.switching.signal
    dwell = scenario.switching.dwell
    rate = scenario.switching.rate

    x = np.zeros(n) if scenario.x0 is None else np.array(scenario.x0)
    c = controller.initial_state(u0=scenario.controller.u0, u2_0=scenario.controller.u2_0,
                                 u3_0=scenario.controller.u3_0)
    sigma = mode_at(signal, 0.0)
    tau = scenario.switching.initial_timer
    horizon = integrator.horizon

    ts, js, xs, cs, taus, sigmas = [], [], [], [], [], []
    jumps = []

    def record(t, j, x, c, tau, sigma):
        ts.append(t)
        js.append(j)
        xs.append(np.array(x))
        cs.append(np.array(c))
        taus.append(tau)
        sigmas.append(sigma)

    def closed_loop(sigma):
        A, B, E = scaled[sigma - 1]

        def vector_field(t, z):
            xz, cz = z[:n], z[n:]
            w = disturbance.value_at(t)
            y = C @ xz + D @ w
            dx = A @ xz + B @ controller.output(cz) + E @ w
            return np.concatenate([dx, controller.flow(cz, y)])

        return vector_field

    t, j = 0.0, 0
    diverged, divergence_time = False, None
    record(t, j, x, c, tau, sigma)

    with np.errstate(over="ignore", invalid="ignore"):
        while t < horizon - EVENT_TOLERANCE and not diverged:
            t_switch = signal.next_switch_after(t)
            t_reset = controller.next_jump_time(c, t)
            t_end = min(t_switch, t_reset, horizon)

            span = t_end - t
            if span > 0.0:
                steps = max(1, math.ceil(span / step - 1e-9))
                dt = span / steps
                vector_field = closed_loop(sigma)
                z = np.concatenate([x, c])
                tau_start = tau
                for k in range(1, steps + 1):
                    z = rk4_step(vector_field, t + (k - 1) * dt, z, dt)
                    t_k = t_end if k == steps else t + k * dt
                    if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > divergence_threshold:
                        diverged, divergence_time = True, t_k
                        break
                    if dwell is not None:
                        tau = min(float(dwell.N0), tau_start + rate * (t_k - t) / dwell.tau_d)
                    if k % integrator.record_stride == 0 or k == steps:
                        record(t_k, j, z[:n], z[n:], tau, sigma)
                    x, c = z[:n], z[n:]
                if diverged:
                    break
                t = t_end
                if t_end == t_reset:
                    # RK4 accumulates u3 with rounding; pin it to the reset threshold
                    c = np.array(c)
                    c[-1] = scenario.controller.params.Delta

            if t_switch <= t + EVENT_TOLERANCE and t_switch <= horizon + EVENT_TOLERANCE:
                jumps.append(JumpRecord(time=HybridTime(t, j), kind=PLANT_SWITCH, index=len(ts) - 1))
                j += 1
                sigma = mode_at(signal, t_switch)
                if dwell is not None:
                    tau -= 1.0
                record(t, j, x, c, tau, sigma)

            if controller.next_jump_time(c, t) <= t + EVENT_TOLERANCE and t <= horizon + EVENT_TOLERANCE:
                jumps.append(JumpRecord(time=HybridTime(t, j), kind=CONTROLLER_RESET, index=len(ts) - 1))
                j += 1
                c = controller.jump(c)
                record(t, j, x, c, tau, sigma)

    if diverged:
        logger.warning(f"scenario '{scenario.name}': state left the finite range at t={divergence_time:.6g}")
        if raise_on_divergence:
            raise NonFiniteStateError(f"state became non-finite at t={divergence_time}")

    return HybridArc(
        t=np.array(ts),
        j=np.array(js, dtype=int),
        x=np.array(xs).reshape(len(ts), n),
        controller=np.array(cs).reshape(len(ts), controller.dimension),
        tau=np.array(taus, dtype=float),
        sigma=np.array(sigmas, dtype=int),
        jumps=tuple(jumps),
        controller_kind=controller.kind,
        controller_labels=tuple(controller.labels()),
        m=plant.m,
        diverged=diverged,
        divergence_time=divergence_time,
    )


class _Targets:
    """u*(w) and x*(σ, w) along an arc, memoised on w."""

    def __init__(self, cost, plant, ssmap):
        self.cost = cost
        self.ssmap = ssmap
        self.operators = [] if plant is None else [equilibrium_operators(mode) for mode in plant.modes]
        self._input = lru_cache(maxsize=TARGET_CACHE_SIZE)(self._solve)

    def _solve(self, key):
        return optimal_input(self.cost, self.ssmap, np.frombuffer(key, dtype=float))

    def input(self, w):
        return self._input(np.ascontiguousarray(w, dtype=float).tobytes())

    def state(self, sigma, u, w):
        Xu, Xw = self.operators[sigma - 1]
        return Xu @ u + Xw @ w


def _series(arc, values):
    return ErrorSeries(t=arc.t.copy(), j=arc.j.copy(), values=np.asarray(values, dtype=float))


def tracking_error(arc, cost, plant, disturbance):
    """‖(x, u₁) − (x*(t), u*(t))‖ per sample."""
    targets = _Targets(cost, plant, controller_map(plant))
    values = []
    for index in range(len(arc)):
        w = disturbance.value_at(arc.t[index])
        u_star = targets.input(w)
        x_star = targets.state(int(arc.sigma[index]), u_star, w)
        du = arc.u1[index] - u_star
        dx = arc.x[index] - x_star
        values.append(math.sqrt(float(dx @ dx + du @ du)))
    return _series(arc, values)


def regulation_error(arc, cost, plant, disturbance):
    """Error in shifted coordinates: x − M_σ(u₁) and u − u*.

    M_σ(u) = −A_σ⁻¹(Bu + Ew) is the quasi-steady state for the applied input;
    for the accelerated controller the momentum state u₂ − u* is included.
    """
    targets = _Targets(cost, plant, controller_map(plant))
    u2 = arc.u2
    values = []
    for index in range(len(arc)):
        w = disturbance.value_at(arc.t[index])
        u_star = targets.input(w)
        u1 = arc.u1[index]
        dx = arc.x[index] - targets.state(int(arc.sigma[index]), u1, w)
        du = u1 - u_star
        total = float(dx @ dx + du @ du)
        if u2 is not None:
            dm = u2[index] - u_star
            total += float(dm @ dm)
        values.append(math.sqrt(total))
    return _series(arc, values)


def suboptimality(arc, cost, ssmap, disturbance):
    """f(u₁, w) − f(u*(w), w) per sample."""
    targets = _Targets(cost, None, ssmap)
    values = []
    for index in range(len(arc)):
        w = disturbance.value_at(arc.t[index])
        values.append(suboptimality_gap(cost, ssmap, arc.u1[index], w, targets.input(w)))
    return _series(arc, values)
