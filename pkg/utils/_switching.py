# ############################################################################## #
# switchopt | feedback optimization on switched linear plants                    #
# Average-dwell-time switching signals                                           #
# ############################################################################## #

import bisect
import logging
import numpy as np

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

logger = logging.getLogger(__name__)

CANDIDATES_PER_DWELL = 10
ADT_TOLERANCE = 1e-9
HORIZON_TOLERANCE = 1e-12


class SwitchingError(Exception):
    pass


class InvalidRateError(SwitchingError):
    pass


class OutOfHorizonError(SwitchingError):
    pass


class InvalidSignalError(SwitchingError):
    pass


@dataclass(frozen=True)
class DwellTimeParams:
    tau_d: float
    N0: int

    def __post_init__(self):
        if not self.tau_d > 0.0:
            raise SwitchingError(f"tau_d must be positive, got {self.tau_d}")
        if int(self.N0) != self.N0 or self.N0 < 1:
            raise SwitchingError(f"N0 must be a positive integer, got {self.N0}")


@dataclass(frozen=True)
class SwitchingSignal:
    events: tuple
    horizon: float

    def __post_init__(self):
        events = tuple((float(t), int(sigma)) for t, sigma in self.events)
        if not events:
            raise InvalidSignalError("a switching signal needs at least the initial event")
        if events[0][0] != 0.0:
            raise InvalidSignalError(f"first event must be at t=0, got t={events[0][0]}")
        for (t0, _), (t1, _) in zip(events, events[1:]):
            if not t1 > t0:
                raise InvalidSignalError(f"event times must be strictly increasing ({t0} then {t1})")
        if any(sigma < 1 for _, sigma in events):
            raise InvalidSignalError("modes are labelled from 1")
        if events[-1][0] > self.horizon + HORIZON_TOLERANCE:
            raise InvalidSignalError(f"event at t={events[-1][0]} lies beyond the horizon {self.horizon}")
        object.__setattr__(self, "events", events)
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def times(self):
        return [t for t, _ in self.events]

    @property
    def switch_times(self):
        return np.array([t for t, _ in self.events[1:]], dtype=float)

    @property
    def max_mode(self):
        return max(sigma for _, sigma in self.events)

    def next_switch_after(self, t):
        """Time of the first event strictly after ``t`` (inf if none)."""
        index = bisect.bisect_right(self.times, t)
        if index < len(self.events):
            return self.events[index][0]
        return float("inf")


@dataclass(frozen=True)
class AutomatonState:
    tau: float
    sigma: int

    @property
    def can_jump(self):
        return self.tau >= 1.0 - ADT_TOLERANCE

    def jump(self, sigma):
        if not self.can_jump:
            raise SwitchingError(f"timer at {self.tau:.6g} cannot pay for a switch")
        return AutomatonState(tau=self.tau - 1.0, sigma=sigma)


@dataclass(frozen=True)
class AdtReport:
    valid: bool
    worst_window: Optional[tuple]
    worst_excess: float


@dataclass(frozen=True)
class TimerJump:
    time: float
    before: float
    after: float
    state: AutomatonState


def constant_signal(horizon, mode=1):
    return SwitchingSignal(events=((0.0, mode),), horizon=horizon)


def validate_adt(signal, params):
    """Check N(t,s) ≤ N0 + (t−s)/τ_d over every window spanned by switch pairs.

    The window holding switches i..k has N = k−i+1 and a length that can be
    made arbitrarily close to t_k − t_i, so those pairs are the worst cases.
    """
    times = signal.switch_times
    if times.size == 0:
        return AdtReport(valid=True, worst_window=None, worst_excess=-float(params.N0))

    # excess(i, k) = a_k − a_i + 1 − N0 with a_j = j − t_j/τ_d, so a running minimum of a suffices
    offsets = np.arange(times.size) - times / params.tau_d
    best = 0
    worst_excess, worst_window = -np.inf, None
    for k in range(times.size):
        if offsets[k] < offsets[best]:
            best = k
        excess = offsets[k] - offsets[best] + 1 - params.N0
        if excess > worst_excess:
            worst_excess, worst_window = excess, (float(times[best]), float(times[k]))
    report = AdtReport(valid=bool(worst_excess <= ADT_TOLERANCE), worst_window=worst_window,
                       worst_excess=float(worst_excess))
    if not report.valid:
        logger.debug(f"ADT violated on window {report.worst_window} by {report.worst_excess:.6g}")
    return report


def generate_signal(params, S, horizon, seed, rate=1.0, probability=0.5, tau0=None, sigma0=1):
    """Run the dwell-time automaton on a seeded candidate grid.

    The timer grows by rate/τ_d per unit time up to N0. At every candidate
    instant (spacing τ_d/10) with τ ≥ 1 a seeded coin decides whether to
    switch; a switch spends one unit of τ and moves to another mode drawn
    uniformly. The timer is kept as an exact fraction so the budget never
    drifts.
    """
    if not 0.0 <= rate <= 1.0:
        raise InvalidRateError(f"rate must lie in [0, 1], got {rate}")
    if not 0.0 <= probability <= 1.0:
        raise SwitchingError(f"switch probability must lie in [0, 1], got {probability}")
    if not 1 <= sigma0 <= S:
        raise SwitchingError(f"initial mode {sigma0} out of range 1..{S}")
    tau0 = params.N0 if tau0 is None else tau0
    if not 0.0 <= tau0 <= params.N0:
        raise SwitchingError(f"tau0 must lie in [0, N0={params.N0}], got {tau0}")

    rng = np.random.default_rng(seed)
    spacing = params.tau_d / CANDIDATES_PER_DWELL
    increment = Fraction(rate) / CANDIDATES_PER_DWELL
    cap = Fraction(params.N0)
    tau = Fraction(tau0)

    events = [(0.0, sigma0)]
    sigma = sigma0
    k = 1
    while k * spacing <= horizon:
        tau = min(cap, tau + increment)
        if S > 1 and tau >= 1 and rng.random() < probability:
            tau -= 1
            others = [mode for mode in range(1, S + 1) if mode != sigma]
            sigma = others[int(rng.integers(len(others)))]
            events.append((k * spacing, sigma))
        k += 1

    logger.debug(f"generated {len(events) - 1} switches over [0, {horizon}] (seed {seed}, rate {rate})")
    return SwitchingSignal(events=tuple(events), horizon=horizon)


def reconstruct_timer(signal, params, rate=1.0, tau0=None):
    """Timer value just before and just after every switch of ``signal``.

    Raises SwitchingError when a switch arrives with less than one unit of budget.
    """
    state = AutomatonState(tau=float(params.N0 if tau0 is None else tau0), sigma=signal.events[0][1])
    previous = 0.0
    jumps = []
    for t, sigma in signal.events[1:]:
        before = AutomatonState(tau=min(float(params.N0), state.tau + rate * (t - previous) / params.tau_d),
                                sigma=state.sigma)
        state = before.jump(sigma)
        jumps.append(TimerJump(time=t, before=before.tau, after=state.tau, state=state))
        previous = t
    return tuple(jumps)


def mode_at(signal, t):
    """Mode of the last event at or before ``t`` (right-continuous)."""
    if t < 0.0 or t > signal.horizon + HORIZON_TOLERANCE:
        raise OutOfHorizonError(f"t={t} outside [0, {signal.horizon}]")
    index = bisect.bisect_right(signal.times, t) - 1
    return signal.events[index][1]
