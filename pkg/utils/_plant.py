# ############################################################################## #
# switchopt | feedback optimization on switched linear plants                    #
# Switched LTI plants, Lyapunov certificates and steady-state maps               #
# ############################################################################## #

import logging
import numpy as np

from dataclasses import dataclass
from scipy import linalg

logger = logging.getLogger(__name__)

HURWITZ_TOLERANCE = 1e-9
LYAPUNOV_RESIDUAL_TOLERANCE = 1e-9
CERTIFICATE_TOLERANCE = 1e-8
EQUILIBRIUM_RESIDUAL_TOLERANCE = 1e-10


class PlantModelError(Exception):
    pass


class NotHurwitzError(PlantModelError):
    pass


class SingularSystemError(PlantModelError):
    pass


class SingularAError(PlantModelError):
    pass


class ConvergenceFailureError(PlantModelError):
    pass


class DimensionMismatchError(PlantModelError):
    pass


def as_matrix(value, name, shape=None):
    """Return a read-only float64 2-D copy of ``value``, checking ``shape`` if given."""
    matrix = np.array(value, dtype=float)
    if matrix.ndim == 0:
        matrix = matrix.reshape(1, 1)
    if matrix.ndim != 2:
        raise DimensionMismatchError(f"{name} must be a matrix, got {matrix.ndim}-D data")
    if shape is not None and matrix.shape != tuple(shape):
        raise DimensionMismatchError(f"{name} has shape {matrix.shape}, expected {tuple(shape)}")
    if not np.all(np.isfinite(matrix)):
        raise PlantModelError(f"{name} has non-finite entries")
    matrix.setflags(write=False)
    return matrix


def as_vector(value, name, size=None):
    vector = np.array(value, dtype=float).reshape(-1)
    if size is not None and vector.shape[0] != size:
        raise DimensionMismatchError(f"{name} has length {vector.shape[0]}, expected {size}")
    vector.setflags(write=False)
    return vector


def spectral_norm(matrix):
    """Largest singular value; 0 for empty matrices."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.size == 0:
        return 0.0
    return float(np.linalg.norm(matrix, 2))


@dataclass(frozen=True, eq=False)
class LtiMode:
    A: np.ndarray
    B: np.ndarray
    E: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        n = A.shape[0]
        if A.shape[1] != n:
            raise DimensionMismatchError(f"A must be square, got {A.shape}")
        B = as_matrix(self.B, "B")
        E = as_matrix(self.E, "E")
        if B.shape[0] != n or E.shape[0] != n:
            raise DimensionMismatchError(f"B {B.shape} and E {E.shape} must have {n} rows")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "E", E)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def q(self):
        return self.E.shape[1]


@dataclass(frozen=True, eq=False)
class SwitchedPlant:
    modes: tuple
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        modes = tuple(self.modes)
        if not modes:
            raise PlantModelError("a switched plant needs at least one mode")
        first = modes[0]
        for index, mode in enumerate(modes, start=1):
            if (mode.n, mode.m, mode.q) != (first.n, first.m, first.q):
                raise DimensionMismatchError(
                    f"mode {index} has dimensions (n={mode.n}, m={mode.m}, q={mode.q}), "
                    f"mode 1 has (n={first.n}, m={first.m}, q={first.q})")
        C = as_matrix(self.C, "C")
        if C.shape[1] != first.n:
            raise DimensionMismatchError(f"C has {C.shape[1]} columns, expected n={first.n}")
        D = as_matrix(self.D, "D", (C.shape[0], first.q))
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def n(self):
        return self.modes[0].n

    @property
    def m(self):
        return self.modes[0].m

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def q(self):
        return self.modes[0].q

    @property
    def S(self):
        return len(self.modes)

    def mode(self, sigma):
        """Mode by its 1-based label."""
        if not 1 <= sigma <= self.S:
            raise PlantModelError(f"mode {sigma} out of range 1..{self.S}")
        return self.modes[sigma - 1]

    def output(self, x, w):
        return self.C @ x + self.D @ w


@dataclass(frozen=True, eq=False)
class StabilityCertificate:
    P: np.ndarray
    Q: np.ndarray
    lambda_min_Q: float
    lambda_min_P: float
    lambda_max_P: float


@dataclass(frozen=True, eq=False)
class SteadyStateMap:
    G: np.ndarray
    H: np.ndarray
    norm_G: float
    norm_H: float


@dataclass(frozen=True)
class CommonMapsReport:
    common: bool
    max_deviation: float


def _eigenvalues(A):
    try:
        values = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as e:
        raise ConvergenceFailureError(f"eigenvalue iteration did not converge: {str(e)}")
    return sorted(values.tolist(), key=lambda z: (z.real, z.imag))


def _check_spd(M, name):
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-12 * max(1.0, spectral_norm(M))):
        raise PlantModelError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(M)[0] <= 0.0:
        raise PlantModelError(f"{name} must be positive definite")


def mode_eigenvalues(mode):
    """Eigenvalues of ``mode.A`` sorted by real part, ascending."""
    return _eigenvalues(mode.A)


def is_hurwitz(A):
    return max(z.real for z in _eigenvalues(A)) < -HURWITZ_TOLERANCE


def solve_lyapunov(A, Q):
    """Solve AᵀP + PA = −Q for a Hurwitz ``A`` and SPD ``Q``.

    Raises NotHurwitzError when ``A`` has an eigenvalue with real part at or
    above -1e-9 and SingularSystemError when the solve fails its residual or
    definiteness checks.
    """
    A = as_matrix(A, "A")
    n = A.shape[0]
    if A.shape[1] != n:
        raise DimensionMismatchError(f"A must be square, got {A.shape}")
    Q = as_matrix(Q, "Q", (n, n))
    _check_spd(Q, "Q")

    worst = max(z.real for z in _eigenvalues(A))
    if worst >= -HURWITZ_TOLERANCE:
        raise NotHurwitzError(f"A is not Hurwitz: largest eigenvalue real part is {worst:.3e}")

    try:
        P = linalg.solve_continuous_lyapunov(A.T, -Q)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SingularSystemError(f"Lyapunov solve failed: {str(e)}")
    if not np.all(np.isfinite(P)):
        raise SingularSystemError("Lyapunov solve produced non-finite entries")

    P = 0.5 * (P + P.T)
    residual = spectral_norm(A.T @ P + P @ A + Q)
    if residual > LYAPUNOV_RESIDUAL_TOLERANCE * spectral_norm(Q):
        raise SingularSystemError(f"Lyapunov residual {residual:.3e} exceeds tolerance")
    if np.linalg.eigvalsh(P)[0] <= 0.0:
        raise SingularSystemError("Lyapunov solution is not positive definite")
    P.setflags(write=False)
    return P


def certify_mode(mode, Q=None, P=None):
    """Build the (P, Q) certificate of one mode; Q defaults to the identity."""
    n = mode.n
    Q = np.eye(n) if Q is None else np.array(Q, dtype=float)
    Q = as_matrix(Q, "Q", (n, n))
    _check_spd(Q, "Q")

    if P is None:
        P = solve_lyapunov(mode.A, Q)
    else:
        P = as_matrix(P, "P", (n, n))
        _check_spd(P, "P")
        slack = np.linalg.eigvalsh(mode.A.T @ P + P @ mode.A + Q)[-1]
        if slack > CERTIFICATE_TOLERANCE * spectral_norm(Q):
            raise PlantModelError(f"supplied P does not certify the mode: AᵀP+PA+Q has eigenvalue {slack:.3e}")

    eig_P = np.linalg.eigvalsh(P)
    eig_Q = np.linalg.eigvalsh(Q)
    return StabilityCertificate(
        P=P, Q=Q,
        lambda_min_Q=float(eig_Q[0]),
        lambda_min_P=float(eig_P[0]),
        lambda_max_P=float(eig_P[-1]),
    )


def certify_plant(plant, overrides=None):
    """Certificates for every mode; ``overrides`` maps a mode label to {"P": ..., "Q": ...}."""
    overrides = overrides or {}
    certificates = []
    for sigma, mode in enumerate(plant.modes, start=1):
        override = overrides.get(sigma, {})
        certificates.append(certify_mode(mode, Q=override.get("Q"), P=override.get("P")))
        logger.debug(f"mode {sigma}: λ̲(Q)={certificates[-1].lambda_min_Q:.6g}, "
                     f"λ(P) in [{certificates[-1].lambda_min_P:.6g}, {certificates[-1].lambda_max_P:.6g}]")
    return tuple(certificates)


def _require_invertible(A):
    condition = np.linalg.cond(A)
    if not np.isfinite(condition) or condition > 1.0 / np.finfo(float).eps:
        raise SingularAError(f"A is singular to working precision (condition number {condition:.3e})")


def steady_state_maps(mode, C, D):
    """G = −CA⁻¹B and H = D − CA⁻¹E."""
    C = as_matrix(C, "C")
    if C.shape[1] != mode.n:
        raise DimensionMismatchError(f"C has {C.shape[1]} columns, expected n={mode.n}")
    D = as_matrix(D, "D", (C.shape[0], mode.q))
    _require_invertible(mode.A)
    try:
        X = np.linalg.solve(mode.A, np.hstack([mode.B, mode.E]))
    except np.linalg.LinAlgError as e:
        raise SingularAError(f"A is singular: {str(e)}")

    G = -C @ X[:, :mode.m]
    H = D - C @ X[:, mode.m:]
    G.setflags(write=False)
    H.setflags(write=False)
    return SteadyStateMap(G=G, H=H, norm_G=spectral_norm(G), norm_H=spectral_norm(H))


def plant_maps(plant):
    return tuple(steady_state_maps(mode, plant.C, plant.D) for mode in plant.modes)


def check_common_maps(plant, tol=1e-8):
    maps = plant_maps(plant)
    deviation = 0.0
    for ssmap in maps[1:]:
        deviation = max(deviation,
                        spectral_norm(ssmap.G - maps[0].G),
                        spectral_norm(ssmap.H - maps[0].H))
    return CommonMapsReport(common=deviation <= tol, max_deviation=deviation)


def equilibrium_state(mode, u, w):
    """x* = −A⁻¹(Bu + Ew)."""
    u = as_vector(u, "u", mode.m)
    w = as_vector(w, "w", mode.q)
    Bu = mode.B @ u
    Ew = mode.E @ w
    _require_invertible(mode.A)
    try:
        x = -np.linalg.solve(mode.A, Bu + Ew)
    except np.linalg.LinAlgError as e:
        raise SingularAError(f"A is singular: {str(e)}")

    residual = np.linalg.norm(mode.A @ x + Bu + Ew)
    if residual > EQUILIBRIUM_RESIDUAL_TOLERANCE * (np.linalg.norm(Bu) + np.linalg.norm(Ew) + 1.0):
        raise SingularAError(f"equilibrium residual {residual:.3e} exceeds tolerance")
    return x


def equilibrium_operators(mode):
    """(−A⁻¹B, −A⁻¹E), so that x* = Xu·u + Xw·w."""
    _require_invertible(mode.A)
    X = np.linalg.solve(mode.A, np.hstack([mode.B, mode.E]))
    return -X[:, :mode.m], -X[:, mode.m:]


def random_stable_matrix(rng, n, margin):
    M = rng.uniform(-1.0, 1.0, (n, n))
    shift = np.linalg.eigvalsh(0.5 * (M + M.T))[-1] + margin
    return M - shift * np.eye(n)


def random_plant(seed, n, m, p, q, S=2, margin=0.5):
    """Seeded plant with Hurwitz modes that share mode 1's equilibria.

    Modes after the first use B_k = A_k A_1⁻¹ B_1 and E_k = A_k A_1⁻¹ E_1, so
    −A_k⁻¹B_k and −A_k⁻¹E_k (and with them G and H) are common to all modes.
    """
    if min(n, m, p, q, S) < 1:
        raise DimensionMismatchError("all plant dimensions must be positive")
    rng = np.random.default_rng(seed)

    A1 = random_stable_matrix(rng, n, margin)
    B1 = rng.uniform(-1.0, 1.0, (n, m))
    E1 = rng.uniform(-1.0, 1.0, (n, q))
    C = rng.uniform(-1.0, 1.0, (p, n))
    D = rng.uniform(-1.0, 1.0, (p, q))

    XB = np.linalg.solve(A1, B1)
    XE = np.linalg.solve(A1, E1)
    modes = [LtiMode(A1, B1, E1)]
    for _ in range(1, S):
        Ak = random_stable_matrix(rng, n, margin)
        modes.append(LtiMode(Ak, Ak @ XB, Ak @ XE))

    return SwitchedPlant(modes=tuple(modes), C=C, D=D)
