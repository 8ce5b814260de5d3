# ############################################################################## #
# switchopt | feedback optimization on switched linear plants                    #
# Gradient-flow and restarted accelerated controllers                            #
# ############################################################################## #

import logging
import numpy as np

from dataclasses import dataclass

from utils._plant import DimensionMismatchError, as_vector

logger = logging.getLogger(__name__)

JUMP_TOLERANCE = 1e-12
TIMER_TOLERANCE = 1e-9


class ControllerError(Exception):
    pass


class TimerOutOfRangeError(ControllerError):
    pass


class JumpNotEnabledError(ControllerError):
    pass


class InvalidParamsError(ControllerError):
    pass


class RestartConditionViolatedError(ControllerError):
    pass


@dataclass(frozen=True, eq=False)
class GradientControllerState:
    u: np.ndarray


@dataclass(frozen=True, eq=False)
class NesterovControllerState:
    u1: np.ndarray
    u2: np.ndarray
    u3: float


@dataclass(frozen=True)
class NesterovParams:
    kappa: float
    rho: float
    delta: float
    Delta: float
    r0: bool
    restarts: bool = True

    def __post_init__(self):
        if not self.kappa > 0.0:
            raise InvalidParamsError(f"kappa must be positive, got {self.kappa}")
        if not 0.0 < self.rho <= 4.0:
            raise InvalidParamsError(f"rho must lie in (0, 4], got {self.rho}")
        if not self.delta > 0.0:
            raise InvalidParamsError(f"delta must be positive, got {self.delta}")
        if not self.Delta > self.delta:
            raise InvalidParamsError(f"Delta must exceed delta, got Delta={self.Delta}, delta={self.delta}")

    @property
    def period(self):
        return self.Delta - self.delta


def restart_condition_holds(params, mu):
    """Δ² − δ² > 2ρ/(κμ)."""
    return params.Delta ** 2 - params.delta ** 2 > 2.0 * params.rho / (params.kappa * mu)


def require_restart_condition(params, mu):
    if params.r0 and mu is not None and not restart_condition_holds(params, mu):
        raise RestartConditionViolatedError(
            f"Δ²−δ² = {params.Delta ** 2 - params.delta ** 2:.6g} does not exceed "
            f"2ρ/(κμ) = {2.0 * params.rho / (params.kappa * mu):.6g}")


def _measured_gradient(cost, ssmap, u, y):
    if u.shape[0] != ssmap.G.shape[1]:
        raise DimensionMismatchError(f"u has length {u.shape[0]}, expected m={ssmap.G.shape[1]}")
    if y.shape[0] != ssmap.G.shape[0]:
        raise DimensionMismatchError(f"y has length {y.shape[0]}, expected p={ssmap.G.shape[0]}")
    return cost.grad_h(u) + ssmap.G.T @ cost.grad_g(y)


def gradient_flow_field(cost, ssmap, u, y):
    """du/dt = −∇h(u) − Gᵀ∇g(y) on the measured output y."""
    return -_measured_gradient(cost, ssmap, np.asarray(u, dtype=float), np.asarray(y, dtype=float))


def nesterov_flow_field(cost, ssmap, state, params, y):
    u3 = state.u3
    upper = params.Delta + TIMER_TOLERANCE if params.restarts else np.inf
    if not params.delta - TIMER_TOLERANCE <= u3 <= upper:
        raise TimerOutOfRangeError(f"timer u3={u3} outside [{params.delta}, {params.Delta}]")

    gradient = _measured_gradient(cost, ssmap, state.u1, np.asarray(y, dtype=float))
    du1 = (params.rho / u3) * (state.u2 - state.u1)
    du2 = -(params.kappa * u3 / params.rho) * gradient
    return du1, du2, 1.0


def nesterov_jump(state, params):
    if not params.restarts:
        raise JumpNotEnabledError("restarts are disabled for this controller")
    if state.u3 < params.Delta - JUMP_TOLERANCE:
        raise JumpNotEnabledError(f"timer u3={state.u3} has not reached Delta={params.Delta}")
    u2 = state.u1.copy() if params.r0 else state.u2.copy()
    return NesterovControllerState(u1=state.u1.copy(), u2=u2, u3=params.delta)


def next_controller_jump_time(state, t_now, params):
    if not params.restarts:
        return np.inf
    return t_now + max(0.0, params.Delta - state.u3)


class GradientController:
    kind = "gradient"

    def __init__(self, cost, ssmap):
        self.cost = cost
        self.ssmap = ssmap
        self.m = ssmap.G.shape[1]

    @property
    def dimension(self):
        return self.m

    def labels(self):
        return [f"u_{i}" for i in range(self.m)]

    def initial_state(self, u0=None, **_):
        u = np.zeros(self.m) if u0 is None else np.array(as_vector(u0, "u0", self.m))
        return u

    def unpack(self, c):
        return GradientControllerState(u=c[:self.m])

    def output(self, c):
        return c[:self.m]

    def flow(self, c, y):
        return gradient_flow_field(self.cost, self.ssmap, c[:self.m], y)

    def next_jump_time(self, c, t_now):
        return np.inf

    def jump(self, c):
        raise JumpNotEnabledError("the gradient controller has no jumps")


class NesterovController:
    kind = "nesterov"

    def __init__(self, cost, ssmap, params):
        self.cost = cost
        self.ssmap = ssmap
        self.params = params
        self.m = ssmap.G.shape[1]

    @property
    def dimension(self):
        return 2 * self.m + 1

    def labels(self):
        return ([f"u1_{i}" for i in range(self.m)]
                + [f"u2_{i}" for i in range(self.m)]
                + ["u3"])

    def initial_state(self, u0=None, u2_0=None, u3_0=None):
        u1 = np.zeros(self.m) if u0 is None else np.array(as_vector(u0, "u0", self.m))
        u2 = u1.copy() if u2_0 is None else np.array(as_vector(u2_0, "u2_0", self.m))
        u3 = self.params.delta if u3_0 is None else float(u3_0)
        return self.pack(NesterovControllerState(u1=u1, u2=u2, u3=u3))

    def pack(self, state):
        return np.concatenate([state.u1, state.u2, [state.u3]])

    def unpack(self, c):
        m = self.m
        return NesterovControllerState(u1=c[:m], u2=c[m:2 * m], u3=float(c[-1]))

    def output(self, c):
        return c[:self.m]

    def flow(self, c, y):
        du1, du2, du3 = nesterov_flow_field(self.cost, self.ssmap, self.unpack(c), self.params, y)
        return np.concatenate([du1, du2, [du3]])

    def next_jump_time(self, c, t_now):
        return next_controller_jump_time(self.unpack(c), t_now, self.params)

    def jump(self, c):
        return self.pack(nesterov_jump(self.unpack(c), self.params))


class OpenLoopController:
    """Holds u at its initial value; used for uncontrolled reference runs."""

    kind = "open_loop"

    def __init__(self, m):
        self.m = m

    @property
    def dimension(self):
        return self.m

    def labels(self):
        return [f"u_{i}" for i in range(self.m)]

    def initial_state(self, u0=None, **_):
        return np.zeros(self.m) if u0 is None else np.array(as_vector(u0, "u0", self.m))

    def unpack(self, c):
        return GradientControllerState(u=c[:self.m])

    def output(self, c):
        return c[:self.m]

    def flow(self, c, y):
        return np.zeros(self.m)

    def next_jump_time(self, c, t_now):
        return np.inf

    def jump(self, c):
        raise JumpNotEnabledError("the open-loop controller has no jumps")
