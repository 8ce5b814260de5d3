# ############################################################################## #
# switchopt | feedback optimization on switched linear plants                    #
# Closed-form stability bounds and runtime Lyapunov / E-ISS monitors             #
# ############################################################################## #

import logging
import math
import numpy as np

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

from humanfriendly.terminal import ansi_wrap

from utils._config import Settings
from utils._controllers import restart_condition_holds
from utils._cost import cost_constants, optimal_input, suboptimality_gap
from utils._plant import certify_plant, equilibrium_operators, plant_maps, spectral_norm
from utils._simulator import (CONTROLLER_RESET, HybridTime, controller_map, regulation_error, suboptimality,
                              tracking_error)

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
ENVELOPE_FLOOR = 1e-12
JUMP_TOLERANCE = 1e-9
OPTIMUM_CACHE_SIZE = 1024
B_FRACTION_HALVINGS = 4


class CertificateError(Exception):
    pass


class DegenerateMapError(CertificateError):
    pass


class EmptyVarrhoWindowError(CertificateError):
    pass


class VarrhoOutOfWindowError(CertificateError):
    pass


@dataclass(frozen=True)
class ModeNorms:
    C: float
    G: float
    H: float
    PAinvB: float
    PAinvE: float


@dataclass(frozen=True, eq=False)
class GradientModeCertificate:
    sigma: int
    theta: float
    a_bar: float
    a_under: float
    eps_bar: float
    r: np.ndarray


@dataclass(frozen=True, eq=False)
class GradientCertificate:
    modes: tuple
    a_bar_max: float
    a_under_min: float
    tau_d_min: float


@dataclass(frozen=True, eq=False)
class NesterovModeCertificate:
    sigma: int
    theta: float
    eta: float
    delta_coeff: float
    a_bar: float
    a_under: float
    eps_bar: float
    r: np.ndarray


@dataclass(frozen=True, eq=False)
class NesterovCertificate:
    modes: tuple
    b: float
    c: float
    c_reset: float
    c_branch_defined: bool
    gamma: float
    a_bar_max: float
    a_under_min: float
    tau_under: float
    restart_ok: bool


@dataclass(frozen=True)
class DwellBound:
    tau_d_min: float
    window: Optional[tuple]


@dataclass(frozen=True)
class EissCoefficients:
    a0: float
    b0: float
    c0: float
    d0: float
    varrho: Optional[float] = None
    decay_source: str = "none"


@dataclass(frozen=True)
class QuadFormParams:
    alpha: float
    beta: float
    eta: float
    delta: float
    phi: float
    nu: float
    gamma: float
    theta: float
    b: float
    epsilon: float

    def replace(self, **changes):
        values = dict(self.__dict__)
        values.update(changes)
        return QuadFormParams(**values)


@dataclass(frozen=True)
class LemmaReport:
    pd: bool
    minors: tuple
    eps_star: float
    min_eigenvalue: float


@dataclass(frozen=True)
class GridSearchResult:
    found: bool
    theta: Optional[float]
    b: Optional[float]


@dataclass(frozen=True)
class EnvelopeReport:
    holds: bool
    max_violation: float
    first_violation: Optional[HybridTime]


@dataclass(frozen=True)
class DecreaseReport:
    holds: bool
    checked: int
    worst: float
    first_violation: Optional[HybridTime]


@dataclass(frozen=True, eq=False)
class LyapunovMonitor:
    """Everything V needs: per-mode P and θ, the cost and the steady-state map.

    States are read in the arc layout (x, controller state, τ, σ).
    """

    kind: str
    thetas: tuple
    P: tuple
    varrho: float
    cost: object
    ssmap: object
    plant: object
    params: Optional[object] = None

    def __post_init__(self):
        object.__setattr__(self, "_operators", tuple(equilibrium_operators(mode) for mode in self.plant.modes))
        object.__setattr__(self, "_optimum", lru_cache(maxsize=OPTIMUM_CACHE_SIZE)(self._solve_optimum))

    @property
    def controller_dimension(self):
        m = self.plant.m
        return 2 * m + 1 if self.kind == "nesterov" else m

    def split(self, state):
        n = self.plant.n
        k = self.controller_dimension
        state = np.asarray(state, dtype=float)
        return state[:n], state[n:n + k], float(state[n + k]), int(round(state[n + k + 1]))

    def _solve_optimum(self, key):
        return optimal_input(self.cost, self.ssmap, np.frombuffer(key, dtype=float))

    def optimum(self, w):
        return self._optimum(np.ascontiguousarray(w, dtype=float).tobytes())

    def shifted_state(self, sigma, x, u, w):
        Xu, Xw = self._operators[sigma - 1]
        return x - (Xu @ u + Xw @ w)


@dataclass(frozen=True)
class ModeRow:
    sigma: int
    epsilon: float
    eps_bar: float
    eps_star: Optional[float]
    lemma_pd: Optional[bool]

    @property
    def passed(self):
        return self.epsilon < self.eps_bar


@dataclass(frozen=True)
class CertificateReport:
    scenario: str
    controller: str
    rows: tuple
    dwell: Optional[DwellBound] = None
    tau_d: Optional[float] = None
    restart_ok: Optional[bool] = None
    varrho: Optional[float] = None
    eiss: Optional[EissCoefficients] = None
    notes: tuple = ()
    failures: tuple = ()

    @property
    def dwell_ok(self):
        if self.dwell is None or self.tau_d is None:
            return None
        return self.tau_d > self.dwell.tau_d_min

    @property
    def passed(self):
        if self.failures:
            return False
        if not all(row.passed for row in self.rows):
            return False
        if self.dwell_ok is False or self.restart_ok is False:
            return False
        return True

    def render(self, color=True):
        def verdict(flag):
            if flag is None:
                return "not-applicable"
            text = "PASS" if flag else "FAIL"
            return ansi_wrap(text, color="green" if flag else "red", bold=True) if color else text

        lines = [f"Certificate report for '{self.scenario}' ({self.controller} controller)"]
        for row in self.rows:
            lemma = "" if row.lemma_pd is None else f", lemma matrix {'PD' if row.lemma_pd else 'not PD'}"
            lines.append(f"  mode {row.sigma}: ε = {row.epsilon:.6g} vs ε̄ = {row.eps_bar:.6g} "
                         f"[{verdict(row.passed)}]{lemma}")
        if self.dwell is not None and self.tau_d is not None:
            lines.append(f"  dwell time: τ_d = {self.tau_d:.6g} vs bound {self.dwell.tau_d_min:.6g} "
                         f"[{verdict(self.dwell_ok)}]")
        else:
            lines.append("  dwell time: not-applicable")
        if self.restart_ok is not None:
            lines.append(f"  restart condition Δ²−δ² > 2ρ/(κμ): [{verdict(self.restart_ok)}]")
        if self.dwell is not None and self.dwell.window is not None:
            lines.append(f"  ϱ window: ({self.dwell.window[0]:.6g}, {self.dwell.window[1]:.6g}), "
                         f"ϱ = {self.varrho if self.varrho is None else format(self.varrho, '.6g')}")
        if self.eiss is not None:
            lines.append(f"  E-ISS: a0={self.eiss.a0:.6g} b0={self.eiss.b0:.6g} "
                         f"c0={self.eiss.c0:.6g} d0={self.eiss.d0:.6g}")
        for note in self.notes + self.failures:
            lines.append(f"  note: {note}")
        lines.append(f"  overall: {verdict(self.passed)}")
        return "\n".join(lines)

    def to_sections(self, digits=17):
        """Key/value sections for the report document next to a CSV."""
        def number(value):
            if value is None:
                return ""
            return format(float(value), f".{digits}g")

        sections = {
            "report": {
                "scenario": self.scenario,
                "controller": self.controller,
                "passed": str(self.passed).lower(),
                "tau_d": number(self.tau_d),
                "tau_d_min": "not-applicable" if self.dwell is None else number(self.dwell.tau_d_min),
                "restart_ok": "not-applicable" if self.restart_ok is None else str(self.restart_ok).lower(),
                "varrho": number(self.varrho),
            },
        }
        for row in self.rows:
            sections[f"mode.{row.sigma}"] = {
                "epsilon": number(row.epsilon),
                "eps_bar": number(row.eps_bar),
                "eps_star": number(row.eps_star),
                "lemma_pd": "" if row.lemma_pd is None else str(row.lemma_pd).lower(),
                "passed": str(row.passed).lower(),
            }
        if self.eiss is not None:
            sections["eiss"] = {name: number(getattr(self.eiss, name)) for name in ("a0", "b0", "c0", "d0")}
            sections["eiss"]["decay_source"] = self.eiss.decay_source
        if self.notes or self.failures:
            sections["notes"] = {f"note_{i}": note for i, note in enumerate(self.notes + self.failures, start=1)}
        return sections


@dataclass(frozen=True, eq=False)
class ScenarioCertification:
    report: CertificateReport
    certificates: tuple
    constants: object
    ssmap: object
    norms: tuple
    controller_certificate: Optional[object] = None
    eiss: Optional[EissCoefficients] = None
    monitor: Optional[LyapunovMonitor] = None
    d_tilde: tuple = field(default_factory=tuple)


def mode_norms(cert, mode, ssmap, C):
    PAinv = cert.P @ np.linalg.inv(mode.A)
    return ModeNorms(
        C=spectral_norm(C),
        G=ssmap.norm_G,
        H=ssmap.norm_H,
        PAinvB=spectral_norm(PAinv @ mode.B),
        PAinvE=spectral_norm(PAinv @ mode.E),
    )


def _ratio(numerator, denominator, what):
    if denominator == 0.0:
        logger.warning(f"{what}: coupling term vanishes, the bound is unbounded")
        return math.inf
    return numerator / denominator


# ---------------------------------------------------------------------------- #
# gradient-flow controller
# ---------------------------------------------------------------------------- #

def gradient_epsilon_bound(cert, norms, ell_y):
    """ε̄ = λ̲(Q) / (4ℓ_y‖C‖‖G‖‖PA⁻¹B‖); inf when the coupling vanishes."""
    return _ratio(cert.lambda_min_Q, 4.0 * ell_y * norms.C * norms.G * norms.PAinvB, "gradient ε̄")


def gradient_theta(norms, ell_y):
    eta = ell_y * norms.C * norms.G
    delta = 2.0 * norms.PAinvB
    if eta == 0.0 or delta == 0.0:
        raise DegenerateMapError("θ is undefined: ℓ_y‖C‖‖G‖ or ‖PA⁻¹B‖ is zero")
    return eta / (eta + delta)


def gradient_coeffs(cert, norms, constants, theta=None):
    """(θ, ā, a̲) of V = (1−θ)(f(u)−f*) + θ x̃ᵀPx̃."""
    if constants.mu is None:
        raise DegenerateMapError("the gradient certificate needs a PL constant μ")
    theta = gradient_theta(norms, constants.ell_y) if theta is None else float(theta)
    a_bar = max((1.0 - theta) * constants.ell / 2.0, theta * cert.lambda_max_P)
    a_under = min((1.0 - theta) * constants.mu / 2.0, theta * cert.lambda_min_P)
    return theta, a_bar, a_under


def gradient_r(norms, constants, theta):
    return np.array([2.0 * theta * norms.PAinvE, (1.0 - theta) * constants.ell_y * norms.H * norms.G])


def gradient_certificate(certificates, norms, constants, theta=None):
    modes = []
    for sigma, (cert, mode_norm) in enumerate(zip(certificates, norms), start=1):
        th, a_bar, a_under = gradient_coeffs(cert, mode_norm, constants, theta)
        modes.append(GradientModeCertificate(
            sigma=sigma, theta=th, a_bar=a_bar, a_under=a_under,
            eps_bar=gradient_epsilon_bound(cert, mode_norm, constants.ell_y),
            r=gradient_r(mode_norm, constants, th),
        ))
    a_bar_max = max(mode.a_bar for mode in modes)
    a_under_min = min(mode.a_under for mode in modes)
    return GradientCertificate(
        modes=tuple(modes),
        a_bar_max=a_bar_max,
        a_under_min=a_under_min,
        tau_d_min=gradient_dwell_bound(a_bar_max, a_under_min, constants).tau_d_min,
    )


def gradient_dwell_bound(a_bar, a_under, constants, tau_d=None):
    """τ_d > (ℓ/2μ²)·ln(ā/a̲), with the ϱ window (ln(ā/a̲), 2μ²τ_d/ℓ) for a given τ_d."""
    rate = 2.0 * constants.mu ** 2 / constants.ell
    log_ratio = math.log(a_bar / a_under)
    window = None if tau_d is None else (log_ratio, rate * tau_d)
    return DwellBound(tau_d_min=log_ratio / rate, window=window)


def resolve_varrho(window, requested=None):
    low, high = window
    if not low < high:
        raise EmptyVarrhoWindowError(f"ϱ window ({low:.6g}, {high:.6g}) is empty: the dwell-time bound fails")
    if requested is None or requested == "midpoint":
        return 0.5 * (low + high)
    varrho = float(requested)
    if not low < varrho < high:
        raise VarrhoOutOfWindowError(f"ϱ = {varrho} outside ({low:.6g}, {high:.6g})")
    return varrho


def gradient_eiss_coeffs(certificate, constants, dwell=None, varrho=None, switched=False, mode=1, d_tilde=None):
    """E-ISS coefficients of the gradient loop; ``d_tilde`` holds one margin per mode."""
    rate = 2.0 * constants.mu ** 2 / constants.ell
    scale = SQRT2 / min(1.0, constants.mu ** 2)

    if not switched:
        record = certificate.modes[mode - 1]
        margin = None if d_tilde is None else d_tilde[mode - 1]
        coeffs = envelope_from_decrease(record.a_bar, record.a_under, rate, 0.0)
        return replace(coeffs, d0=_gain(scale * float(np.linalg.norm(record.r)), margin))

    if dwell is None:
        raise CertificateError("switched E-ISS coefficients need dwell-time parameters")
    log_ratio = math.log(certificate.a_bar_max / certificate.a_under_min)
    varrho = resolve_varrho((log_ratio, rate * dwell.tau_d), varrho)
    margin = None if d_tilde is None else min(d_tilde)
    r_max = max(float(np.linalg.norm(record.r)) for record in certificate.modes)
    return EissCoefficients(
        a0=math.sqrt(certificate.a_bar_max * math.exp(dwell.N0 * varrho) / certificate.a_under_min),
        b0=rate - varrho / dwell.tau_d,
        c0=varrho - log_ratio,
        d0=_gain(scale * r_max, margin),
        varrho=varrho,
        decay_source="dwell",
    )


def _gain(numerator, margin):
    if margin is None or margin <= 0.0:
        return math.inf
    return numerator / margin


def gradient_quadform(cert, norms, constants, epsilon, theta=None, b=0.0):
    eta = constants.ell_y * norms.C * norms.G
    delta = 2.0 * norms.PAinvB
    return QuadFormParams(
        alpha=cert.lambda_min_Q,
        beta=2.0 * constants.ell_y * norms.C * norms.G * norms.PAinvB,
        eta=eta,
        delta=delta,
        phi=cert.lambda_max_P,
        nu=constants.ell / (2.0 * constants.mu ** 2),
        gamma=1.0,
        theta=eta / (eta + delta) if theta is None else theta,
        b=b,
        epsilon=epsilon,
    )


# ---------------------------------------------------------------------------- #
# restarted accelerated controller
# ---------------------------------------------------------------------------- #

def nesterov_gamma(constants, params):
    return min(params.rho / (4.0 * params.Delta), params.kappa * params.delta * constants.mu / (8.0 * params.rho))


def nesterov_reset_contraction(constants, params):
    """−ln of the factor a strongly convex reset shrinks V by, capped at Δ−δ."""
    gamma0 = (1.0 - params.delta ** 2 / params.Delta ** 2
              - 2.0 * params.rho / (params.kappa * constants.mu * params.Delta ** 2))
    if gamma0 <= 0.0:
        return 0.0
    return min(-math.log(1.0 - gamma0), params.Delta - params.delta)


def nesterov_mode(sigma, cert, norms, constants, params, gamma, theta=None):
    kappa, rho, delta, Delta = params.kappa, params.rho, params.delta, params.Delta
    coupling = constants.ell_y * norms.C * norms.G
    eta = 2.0 * SQRT2 * kappa * Delta * coupling / rho
    delta_coeff = 2.0 * math.exp(Delta) * rho * norms.PAinvB / delta
    if theta is None:
        if eta + delta_coeff == 0.0:
            raise DegenerateMapError("θ is undefined: both coupling terms vanish")
        theta = eta / (eta + delta_coeff)

    a_bar = max((1.0 - theta) * kappa * constants.ell * Delta ** 2 / (2.0 * rho),
                theta * cert.lambda_max_P * math.exp(Delta))
    a_under = min((1.0 - theta) / 2.0,
                  (1.0 - theta) * kappa * constants.mu * delta ** 2 / (4.0 * rho),
                  theta * cert.lambda_min_P * math.exp(delta))
    eps_bar = _ratio(math.exp(delta - Delta) * gamma * cert.lambda_min_Q * delta,
                     gamma * delta * cert.lambda_max_P + 2.0 * SQRT2 * kappa * Delta * coupling * norms.PAinvB,
                     "accelerated ε̄")
    r = np.array([2.0 * theta * norms.PAinvE,
                  (1.0 - theta) * SQRT2 * kappa * constants.ell_y * Delta ** 2 / (2.0 * rho) * norms.H * norms.G])
    return NesterovModeCertificate(sigma=sigma, theta=theta, eta=eta, delta_coeff=delta_coeff,
                                   a_bar=a_bar, a_under=a_under, eps_bar=eps_bar, r=r)


def nesterov_constants(certificates, norms, constants, params, theta=None):
    """Per-mode and global constants of the restarted accelerated loop."""
    if constants.mu is None:
        raise DegenerateMapError("the accelerated certificate needs a strong convexity constant μ")
    mu = constants.mu
    kappa, rho, delta, Delta = params.kappa, params.rho, params.delta, params.Delta

    gamma = nesterov_gamma(constants, params)
    b = min(delta * mu / (4.0 * constants.ell * Delta ** 2), rho ** 2 / (2.0 * kappa * constants.ell * Delta))
    denominator = delta * kappa * mu ** 2 - 2.0 * rho
    if denominator > 0.0:
        c = max(math.log(Delta ** 2 * kappa * mu ** 2 / denominator), Delta - delta)
        branch_defined = True
    else:
        logger.warning(f"δκμ² = {delta * kappa * mu ** 2:.6g} does not exceed 2ρ = {2.0 * rho:.6g}; "
                       f"using c = Δ−δ alone")
        c = Delta - delta
        branch_defined = False

    modes = tuple(nesterov_mode(sigma, cert, mode_norm, constants, params, gamma, theta)
                  for sigma, (cert, mode_norm) in enumerate(zip(certificates, norms), start=1))
    a_bar_max = max(mode.a_bar for mode in modes)
    a_under_min = min(mode.a_under for mode in modes)
    restart_ok = restart_condition_holds(params, mu)

    certificate = NesterovCertificate(
        modes=modes, b=b, c=c,
        c_reset=nesterov_reset_contraction(constants, params) if restart_ok else 0.0,
        c_branch_defined=branch_defined,
        gamma=gamma,
        a_bar_max=a_bar_max,
        a_under_min=a_under_min,
        tau_under=(math.log(a_bar_max) - math.log(a_under_min)) / b,
        restart_ok=restart_ok,
    )
    logger.debug(f"accelerated constants: b={b:.6g}, c={c:.6g}, c_reset={certificate.c_reset:.6g}, "
                 f"γ={gamma:.6g}, τ̲={certificate.tau_under:.6g}, restart_ok={restart_ok}")
    return certificate


def nesterov_practical_epsilon(cert, norms, constants, params):
    """Time-scale bound for the r0 = 0 loop under the reverse-Lipschitz pair (ℓ₀, ν₀)."""
    kappa, rho, delta, Delta = params.kappa, params.rho, params.delta, params.Delta
    scale = _ratio(cert.lambda_min_Q * delta,
                   12.0 * Delta * constants.ell_y * rho * norms.C * norms.G * norms.PAinvB,
                   "practical ε")
    if math.isinf(scale):
        return scale
    return scale * min(rho / (kappa * Delta), delta * constants.ell0 / (2.0 * rho * constants.ell))


def nesterov_eiss_coeffs(certificate, dwell=None, varrho=None, switched=False, mode=1, d_tilde=None):
    if not switched:
        record = certificate.modes[mode - 1]
        margin = None if d_tilde is None else d_tilde[mode - 1]
        coeffs = envelope_from_decrease(record.a_bar, record.a_under, certificate.b, certificate.c_reset)
        return replace(coeffs, d0=_gain(float(np.linalg.norm(record.r)), margin))

    if dwell is None:
        raise CertificateError("switched E-ISS coefficients need dwell-time parameters")
    log_ratio = math.log(certificate.a_bar_max / certificate.a_under_min)
    varrho = resolve_varrho((log_ratio, certificate.b * dwell.tau_d), varrho)
    margin = None if d_tilde is None else min(d_tilde)
    r_max = max(float(np.linalg.norm(record.r)) for record in certificate.modes)
    return EissCoefficients(
        a0=math.sqrt(certificate.a_bar_max * math.exp(dwell.N0 * varrho) / certificate.a_under_min),
        b0=certificate.b - varrho / dwell.tau_d,
        c0=min(varrho - log_ratio, certificate.c_reset),
        d0=_gain(r_max, margin),
        varrho=varrho,
        decay_source="reset" if certificate.c_reset <= varrho - log_ratio else "dwell",
    )


def nesterov_quadform(cert, mode_certificate, constants, params, gamma, epsilon, theta=None, b=0.0):
    return QuadFormParams(
        alpha=math.exp(params.delta) * cert.lambda_min_Q,
        beta=math.exp(params.Delta) * cert.lambda_max_P,
        eta=mode_certificate.eta,
        delta=mode_certificate.delta_coeff,
        phi=math.exp(params.Delta) * cert.lambda_max_P,
        nu=params.kappa * constants.ell * params.Delta ** 2 / (2.0 * params.rho),
        gamma=gamma,
        theta=mode_certificate.theta if theta is None else theta,
        b=b,
        epsilon=epsilon,
    )


# ---------------------------------------------------------------------------- #
# 2x2 positive-definiteness template
# ---------------------------------------------------------------------------- #

def lemma_a2_matrix(p):
    off = -0.5 * ((1.0 - p.theta) * p.eta + p.theta * p.delta)
    return np.array([
        [p.theta * (p.alpha / p.epsilon - p.beta - p.b * p.phi), off],
        [off, (1.0 - p.theta) * (p.gamma - p.b * p.nu)],
    ])


def lemma_a2_eps_star(p):
    denominator = p.beta * p.gamma + p.eta * p.delta
    return math.inf if denominator == 0.0 else p.alpha * p.gamma / denominator


def lemma_a2_check(p):
    M = lemma_a2_matrix(p)
    minors = (float(M[0, 0]), float(np.linalg.det(M)))
    return LemmaReport(
        pd=minors[0] > 0.0 and minors[1] > 0.0,
        minors=minors,
        eps_star=lemma_a2_eps_star(p),
        min_eigenvalue=float(np.linalg.eigvalsh(M)[0]),
    )


def lemma_a2_grid_search(p, grid=100):
    """Look for (θ, b) on a grid that make the matrix PD at ``p.epsilon``.

    θ runs over the open unit interval plus η/(η+δ); b over [0, γ/ν).
    """
    thetas = np.linspace(0.0, 1.0, grid + 2)[1:-1]
    if p.eta + p.delta > 0.0:
        thetas = np.append(thetas, p.eta / (p.eta + p.delta))
    bs = np.linspace(0.0, p.gamma / p.nu, grid, endpoint=False) if p.nu > 0.0 else np.array([0.0])
    for theta in thetas:
        for b in bs:
            if lemma_a2_check(p.replace(theta=float(theta), b=float(b))).pd:
                return GridSearchResult(found=True, theta=float(theta), b=float(b))
    return GridSearchResult(found=False, theta=None, b=None)


def lemma_a2_margin(p, b_fraction=0.5):
    """Half the smallest eigenvalue of the matrix, at b = b_fraction·γ/ν.

    The fraction is halved a few times and finally dropped to zero until the
    matrix is PD; 0.0 means no margin exists at this ε.
    """
    fractions = [b_fraction / 2 ** k for k in range(B_FRACTION_HALVINGS + 1)] + [0.0]
    for fraction in fractions:
        b = fraction * p.gamma / p.nu if p.nu > 0.0 else 0.0
        report = lemma_a2_check(p.replace(b=b))
        if report.pd:
            if fraction != b_fraction:
                logger.debug(f"lemma matrix PD only after lowering the b fraction to {fraction:g}")
            return 0.5 * report.min_eigenvalue
    return 0.0


# ---------------------------------------------------------------------------- #
# Lyapunov functions and monitors
# ---------------------------------------------------------------------------- #

def build_monitor(kind, certificates, thetas, cost, ssmap, plant, params=None, varrho=0.0):
    return LyapunovMonitor(kind=kind, thetas=tuple(thetas), P=tuple(cert.P for cert in certificates),
                           varrho=varrho, cost=cost, ssmap=ssmap, plant=plant, params=params)


def lyapunov_value(monitor, state, w, tau=None):
    """V_σ at ``state``; with ``tau`` the switched form e^{ϱτ}V_σ."""
    w = np.asarray(w, dtype=float)
    x, c, _, sigma = monitor.split(state)
    theta = monitor.thetas[sigma - 1]
    P = monitor.P[sigma - 1]
    m = monitor.plant.m
    u_star = monitor.optimum(w)

    u1 = c[:m]
    x_tilde = monitor.shifted_state(sigma, x, u1, w)
    gap = suboptimality_gap(monitor.cost, monitor.ssmap, u1, w, u_star)
    if monitor.kind == "nesterov":
        u2, u3 = c[m:2 * m], float(c[-1])
        params = monitor.params
        v1 = 0.5 * (float((u2 - u1) @ (u2 - u1)) + float((u2 - u_star) @ (u2 - u_star))
                    + params.kappa * u3 ** 2 / params.rho * gap)
        v2 = math.exp(u3) * float(x_tilde @ P @ x_tilde)
    else:
        v1 = gap
        v2 = float(x_tilde @ P @ x_tilde)

    value = (1.0 - theta) * v1 + theta * v2
    if tau is not None and math.isfinite(tau):
        value *= math.exp(monitor.varrho * tau)
    return value


def lyapunov_series(arc, monitor, disturbance, weighted=False):
    return np.array([
        lyapunov_value(monitor, vector, disturbance.value_at(time.t), arc.tau[i] if weighted else None)
        for i, (time, vector) in enumerate(arc.samples())
    ])


def practical_alpha(monitor, state, w, theta=None, varrho=1.0):
    """θ·x̃ᵀPx̃e^{ϱu₃} + (1−θ)(¼‖u₁−u₂‖² + ¼‖u₂−u*‖² + κδ²(f(u₁)−f*))."""
    w = np.asarray(w, dtype=float)
    x, c, _, sigma = monitor.split(state)
    theta = monitor.thetas[sigma - 1] if theta is None else theta
    P = monitor.P[sigma - 1]
    m = monitor.plant.m
    params = monitor.params
    u_star = monitor.optimum(w)

    u1, u2, u3 = c[:m], c[m:2 * m], float(c[-1])
    x_tilde = monitor.shifted_state(sigma, x, u1, w)
    alpha_p = float(x_tilde @ P @ x_tilde) * math.exp(varrho * u3)
    alpha_c = (0.25 * float((u1 - u2) @ (u1 - u2)) + 0.25 * float((u2 - u_star) @ (u2 - u_star))
               + params.kappa * params.delta ** 2 * suboptimality_gap(monitor.cost, monitor.ssmap, u1, w, u_star))
    return theta * alpha_p + (1.0 - theta) * alpha_c


def envelope_values(series, coeffs, z0_err, sup_wdot):
    """a₀(e^{−(b₀t+c₀j)/2}·z0_err + d₀·sup‖ẇ‖) per sample."""
    decay = np.exp(-0.5 * (coeffs.b0 * series.t + coeffs.c0 * series.j)) * z0_err
    offset = 0.0 if sup_wdot == 0.0 else coeffs.d0 * sup_wdot
    return coeffs.a0 * (decay + offset)


def eiss_envelope_check(series, coeffs, z0_err, sup_wdot, tolerance=1e-6):
    bound = envelope_values(series, coeffs, z0_err, sup_wdot) * (1.0 + tolerance) + ENVELOPE_FLOOR
    excess = series.values - bound
    worst = int(np.argmax(excess))
    violated = np.nonzero(excess > 0.0)[0]
    first = None if violated.size == 0 else HybridTime(float(series.t[violated[0]]), int(series.j[violated[0]]))
    return EnvelopeReport(holds=violated.size == 0, max_violation=float(excess[worst]), first_violation=first)


def envelope_from_decrease(a_bar, a_under, b, c):
    """Envelope implied by a̲‖z‖² ≤ V ≤ ā‖z‖², V̇ ≤ −bV and V⁺ ≤ e^{−c}V."""
    return EissCoefficients(a0=math.sqrt(a_bar / a_under), b0=b, c0=c, d0=0.0,
                            decay_source="reset" if c > 0.0 else "none")


def _value_floor(values):
    return max(1e-24, 1e-14 * float(np.max(values))) if values.size else 1e-24


def lyapunov_decrease_check(arc, monitor, disturbance, check="flow_rate", rate=0.0, contraction=0.0,
                            tolerance=0.05, ball=0.0, error=None, kind=CONTROLLER_RESET):
    """Check V̇ ≤ −rate·V along flows or V⁺ ≤ e^{−contraction}V at jumps of ``kind``.

    Flow quotients are taken between consecutive samples of one flow interval
    and are skipped inside the ball ‖z̃‖ < ``ball`` (needs the ``error`` series).
    """
    values = lyapunov_series(arc, monitor, disturbance)
    floor = _value_floor(values)
    checked, worst, first = 0, -math.inf, None

    if check == "flow_rate":
        for start, stop in arc.flow_intervals():
            for i in range(start, stop - 1):
                if values[i] <= floor or values[i + 1] <= floor:
                    continue
                if error is not None and error.values[i] < ball:
                    continue
                dt = arc.t[i + 1] - arc.t[i]
                quotient = math.log(values[i + 1] / values[i]) / dt
                allowed = -rate * (1.0 - tolerance) + rate ** 2 * dt
                checked += 1
                worst = max(worst, quotient + rate)
                if quotient > allowed and first is None:
                    first = arc.hybrid_time(i)
    elif check == "jump_contraction":
        limit = math.exp(-contraction) * (1.0 + JUMP_TOLERANCE)
        for jump in arc.jumps_of(kind):
            pre, post = jump.index, jump.index + 1
            if values[pre] <= floor:
                continue
            ratio = values[post] / values[pre]
            checked += 1
            worst = max(worst, ratio - limit)
            if ratio > limit and first is None:
                first = arc.hybrid_time(pre)
    else:
        raise CertificateError(f"unknown decrease check '{check}'")

    return DecreaseReport(holds=first is None, checked=checked, worst=worst, first_violation=first)


def suboptimality_bound_check(arc, monitor, disturbance, gap, nu, theta=None, varrho=1.0):
    """f(u₁)−f* ≤ α(s,j)/u₃² + ν inside every flow interval, α taken at its start s."""
    if monitor.kind != "nesterov":
        raise CertificateError("the α bound applies to the accelerated controller")
    vectors = arc.state_vectors()
    u3 = arc.u3
    first, worst = None, -math.inf
    for start, stop in arc.flow_intervals():
        alpha = practical_alpha(monitor, vectors[start], disturbance.value_at(arc.t[start]), theta, varrho)
        excess = gap.values[start:stop] - (alpha / u3[start:stop] ** 2 + nu)
        worst = max(worst, float(np.max(excess)))
        if first is None and np.any(excess > ENVELOPE_FLOOR):
            i = start + int(np.nonzero(excess > ENVELOPE_FLOOR)[0][0])
            first = arc.hybrid_time(i)
    return DecreaseReport(holds=first is None, checked=len(arc), worst=worst, first_violation=first)


# ---------------------------------------------------------------------------- #
# scenario-level certification
# ---------------------------------------------------------------------------- #

def _plant_inputs(plant, overrides):
    certificates = certify_plant(plant, overrides)
    maps = plant_maps(plant)
    norms = tuple(mode_norms(cert, mode, ssmap, plant.C)
                  for cert, mode, ssmap in zip(certificates, plant.modes, maps))
    return certificates, norms


def epsilon_bounds(plant, cost, controller, overrides=None):
    """ε̄ per mode for the configured controller (used to resolve ε = auto)."""
    certificates, norms = _plant_inputs(plant, overrides)
    constants = cost_constants(cost, controller_map(plant))
    if controller.kind == "gradient":
        return tuple(gradient_epsilon_bound(cert, norm, constants.ell_y)
                     for cert, norm in zip(certificates, norms))
    if controller.kind == "nesterov":
        params = controller.params
        if params.r0 and constants.mu is not None:
            return tuple(mode.eps_bar for mode in nesterov_constants(certificates, norms, constants, params).modes)
        return tuple(nesterov_practical_epsilon(cert, norm, constants, params)
                     for cert, norm in zip(certificates, norms))
    raise CertificateError("the open-loop controller has no time-scale bound")


def dwell_time_bound(plant, cost, controller, overrides=None, theta=None):
    """Smallest admissible average dwell time for the configured controller."""
    certificates, norms = _plant_inputs(plant, overrides)
    constants = cost_constants(cost, controller_map(plant))
    if controller.kind == "gradient":
        return gradient_certificate(certificates, norms, constants, theta).tau_d_min
    if controller.kind == "nesterov":
        return nesterov_constants(certificates, norms, constants, controller.params, theta).tau_under
    raise CertificateError("the open-loop controller has no dwell-time bound")


def _resolve_switching(scenario):
    signal = scenario.switching.signal
    switched = signal.switch_times.size > 0
    return switched, scenario.switching.dwell, signal.events[0][1]


def certify_scenario(scenario, settings=None):
    """Evaluate every bound that applies to ``scenario`` and bundle the results."""
    settings = settings or Settings()
    options = scenario.certificates
    plant, cost = scenario.plant, scenario.cost
    certificates, norms = _plant_inputs(plant, options.overrides)
    ssmap = controller_map(plant)
    constants = cost_constants(cost, ssmap)
    kind = scenario.controller.kind
    requested_varrho = options.varrho if options.varrho is not None else settings.varrho
    b_fraction = options.b_fraction if options.b_fraction is not None else settings.b_fraction
    switched, dwell, initial_mode = _resolve_switching(scenario)

    notes, failures = [], []
    rows, d_tilde = [], []
    controller_certificate = eiss = monitor = None
    dwell_bound = restart_ok = varrho = None

    if kind == "open_loop":
        notes.append("open-loop input: no controller certificate applies")
        rows = [ModeRow(sigma=s, epsilon=e, eps_bar=math.inf, eps_star=None, lemma_pd=None)
                for s, e in enumerate(scenario.epsilon, start=1)]

    elif kind == "gradient":
        if constants.mu is None:
            notes.append("cost has no PL constant: only the time-scale bound is evaluated")
            rows = [ModeRow(sigma=s, epsilon=e, eps_bar=gradient_epsilon_bound(cert, norm, constants.ell_y),
                            eps_star=None, lemma_pd=None)
                    for s, (e, cert, norm) in enumerate(zip(scenario.epsilon, certificates, norms), start=1)]
        else:
            controller_certificate = gradient_certificate(certificates, norms, constants, options.theta)
            for record, cert, norm, epsilon in zip(controller_certificate.modes, certificates, norms,
                                                   scenario.epsilon):
                p = gradient_quadform(cert, norm, constants, epsilon, theta=record.theta)
                lemma = lemma_a2_check(p)
                d_tilde.append(lemma_a2_margin(p, b_fraction))
                rows.append(ModeRow(sigma=record.sigma, epsilon=epsilon, eps_bar=record.eps_bar,
                                    eps_star=lemma.eps_star, lemma_pd=lemma.pd))
            monitor = build_monitor("gradient", certificates, [m.theta for m in controller_certificate.modes],
                                    cost, ssmap, plant)
            if switched and dwell is not None:
                dwell_bound = gradient_dwell_bound(controller_certificate.a_bar_max,
                                                   controller_certificate.a_under_min, constants, dwell.tau_d)
            if not switched or dwell is not None:
                try:
                    eiss = gradient_eiss_coeffs(controller_certificate, constants, dwell, requested_varrho,
                                                switched, initial_mode, d_tilde)
                    varrho = eiss.varrho
                except CertificateError as e:
                    failures.append(str(e))

    else:
        params = scenario.controller.params
        if params.r0 and constants.mu is not None:
            controller_certificate = nesterov_constants(certificates, norms, constants, params, options.theta)
            restart_ok = controller_certificate.restart_ok
            if not controller_certificate.c_branch_defined:
                notes.append("δκμ² ≤ 2ρ: the logarithmic branch of c is undefined, c = Δ−δ")
            for record, cert, epsilon in zip(controller_certificate.modes, certificates, scenario.epsilon):
                p = nesterov_quadform(cert, record, constants, params, controller_certificate.gamma, epsilon)
                lemma = lemma_a2_check(p)
                d_tilde.append(lemma_a2_margin(p, b_fraction))
                rows.append(ModeRow(sigma=record.sigma, epsilon=epsilon, eps_bar=record.eps_bar,
                                    eps_star=lemma.eps_star, lemma_pd=lemma.pd))
            if switched and dwell is not None:
                log_ratio = math.log(controller_certificate.a_bar_max / controller_certificate.a_under_min)
                dwell_bound = DwellBound(tau_d_min=controller_certificate.tau_under,
                                         window=(log_ratio, controller_certificate.b * dwell.tau_d))
            if restart_ok and (not switched or dwell is not None):
                try:
                    eiss = nesterov_eiss_coeffs(controller_certificate, dwell, requested_varrho, switched,
                                                initial_mode, d_tilde)
                    varrho = eiss.varrho
                except CertificateError as e:
                    failures.append(str(e))
            thetas = [m.theta for m in controller_certificate.modes]
        else:
            if constants.ell0 <= 0.0:
                failures.append("reverse-Lipschitz constant ℓ₀ is zero: no practical time-scale bound")
            notes.append("practical stability only: the residual is measured, not bounded")
            for sigma, (cert, norm, epsilon) in enumerate(zip(certificates, norms, scenario.epsilon), start=1):
                rows.append(ModeRow(sigma=sigma, epsilon=epsilon,
                                    eps_bar=nesterov_practical_epsilon(cert, norm, constants, params),
                                    eps_star=None, lemma_pd=None))
            thetas = [0.5] * plant.S if options.theta is None else [options.theta] * plant.S
        monitor = build_monitor("nesterov", certificates, thetas, cost, ssmap, plant, params,
                                varrho=settings.alpha_varrho)

    if switched and dwell is None and kind != "open_loop":
        notes.append("switching signal carries no dwell-time parameters: dwell check not-applicable")
    if eiss is not None and math.isinf(eiss.d0):
        notes.append("lemma matrix has no positive margin at this ε: the disturbance gain d0 is unbounded")

    report = CertificateReport(
        scenario=scenario.name,
        controller=kind,
        rows=tuple(rows),
        dwell=dwell_bound,
        tau_d=dwell.tau_d if switched and dwell is not None else None,
        restart_ok=restart_ok,
        varrho=varrho,
        eiss=eiss,
        notes=tuple(notes),
        failures=tuple(failures),
    )
    return ScenarioCertification(
        report=report,
        certificates=certificates,
        constants=constants,
        ssmap=ssmap,
        norms=norms,
        controller_certificate=controller_certificate,
        eiss=eiss,
        monitor=monitor,
        d_tilde=tuple(d_tilde),
    )


@dataclass(frozen=True, eq=False)
class ArcAnalysis:
    tracking: object
    regulation: object
    gap: object
    lyapunov: Optional[np.ndarray]
    envelope: Optional[np.ndarray]
    sup_wdot: float
    z0_err: float


def analyse_arc(arc, scenario, certification):
    """Error series, Lyapunov values and the E-ISS envelope along ``arc``."""
    disturbance = scenario.disturbance
    tracking = tracking_error(arc, scenario.cost, scenario.plant, disturbance)
    regulation = regulation_error(arc, scenario.cost, scenario.plant, disturbance)
    gap = suboptimality(arc, scenario.cost, certification.ssmap, disturbance)
    sup_wdot = disturbance.sup_derivative()
    z0_err = float(regulation.values[0])

    lyapunov = None
    if certification.monitor is not None:
        lyapunov = lyapunov_series(arc, certification.monitor, disturbance)
    envelope = None
    if certification.eiss is not None:
        envelope = envelope_values(regulation, certification.eiss, z0_err, sup_wdot)
    return ArcAnalysis(tracking=tracking, regulation=regulation, gap=gap, lyapunov=lyapunov,
                       envelope=envelope, sup_wdot=sup_wdot, z0_err=z0_err)
