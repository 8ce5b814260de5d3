# ############################################################################## #
# switchopt | feedback optimization on switched linear plants                    #
# Steady-state costs, reduced objective and curvature constants                  #
# ############################################################################## #

import logging
import numpy as np

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

from utils._plant import DimensionMismatchError, as_matrix, as_vector, spectral_norm

logger = logging.getLogger(__name__)

PL_TOLERANCE = 1e-9


class CostModelError(Exception):
    pass


class NotSolvableError(CostModelError):
    pass


@dataclass(frozen=True)
class CostConstants:
    ell_u: float
    ell_y: float
    ell: float
    mu: Optional[float]
    ell0: float
    nu0: float


class SteadyStateCost(ABC):
    """Evaluation contract: h and g with their gradients, kept separate.

    Controllers only ever see ``grad_h`` and ``grad_g`` evaluated on measured
    outputs; the reduced objective f is assembled here for analysis.
    """

    kind = None

    @abstractmethod
    def h(self, u):
        pass

    @abstractmethod
    def grad_h(self, u):
        pass

    @abstractmethod
    def g(self, y):
        pass

    @abstractmethod
    def grad_g(self, y):
        pass

    @abstractmethod
    def optimal_input(self, ssmap, w):
        pass

    @abstractmethod
    def gap(self, ssmap, u, u_star):
        """f(u) − f(u*) without forming either value."""
        pass

    @abstractmethod
    def constants(self, ssmap):
        pass


@dataclass(frozen=True, eq=False)
class QuadraticCost(SteadyStateCost):
    R: np.ndarray
    Qy: np.ndarray
    y_ref: np.ndarray

    kind = "quadratic"

    def __post_init__(self):
        R = as_matrix(self.R, "R")
        Qy = as_matrix(self.Qy, "Qy")
        for name, M in (("R", R), ("Qy", Qy)):
            if M.shape[0] != M.shape[1]:
                raise DimensionMismatchError(f"{name} must be square, got {M.shape}")
            if not np.allclose(M, M.T, atol=1e-12) or np.linalg.eigvalsh(M)[0] <= 0.0:
                raise CostModelError(f"{name} must be symmetric positive definite")
        y_ref = as_vector(self.y_ref, "y_ref", Qy.shape[0])
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "Qy", Qy)
        object.__setattr__(self, "y_ref", y_ref)

    def h(self, u):
        return float(u @ self.R @ u)

    def grad_h(self, u):
        return 2.0 * (self.R @ u)

    def g(self, y):
        e = y - self.y_ref
        return float(e @ self.Qy @ e)

    def grad_g(self, y):
        return 2.0 * (self.Qy @ (y - self.y_ref))

    def hessian(self, ssmap):
        return 2.0 * (self.R + ssmap.G.T @ self.Qy @ ssmap.G)

    def optimal_input(self, ssmap, w):
        K = self.R + ssmap.G.T @ self.Qy @ ssmap.G
        rhs = ssmap.G.T @ self.Qy @ (self.y_ref - ssmap.H @ w)
        if np.linalg.cond(K) > 1.0 / np.finfo(float).eps:
            raise NotSolvableError("R + GᵀQyG is singular")
        return np.linalg.solve(K, rhs)

    def gap(self, ssmap, u, u_star):
        d = u - u_star
        return float(d @ (self.R + ssmap.G.T @ self.Qy @ ssmap.G) @ d)

    def constants(self, ssmap):
        ell_u = 2.0 * float(np.linalg.eigvalsh(self.R)[-1])
        ell_y = 2.0 * float(np.linalg.eigvalsh(self.Qy)[-1])
        mu = 2.0 * float(np.linalg.eigvalsh(self.R + ssmap.G.T @ self.Qy @ ssmap.G)[0])
        return CostConstants(
            ell_u=ell_u,
            ell_y=ell_y,
            ell=ell_u + ell_y * ssmap.norm_G ** 2,
            mu=mu,
            ell0=0.5 * mu,
            nu0=0.0,
        )


@dataclass(frozen=True)
class QuarticCost(SteadyStateCost):
    """f(u) = ¼(Gu + Hw − y_ref)⁴ on a scalar plant.

    Curvature constants are local: they hold on the ball of radius
    ``ball_radius`` around u*.
    """

    y_ref: float
    ball_radius: float = 1.0
    nu0: float = 1.0

    kind = "quartic"

    def __post_init__(self):
        if self.ball_radius <= 0.0:
            raise CostModelError("ball_radius must be positive")
        if self.nu0 <= 0.0:
            raise CostModelError("nu0 must be positive for the quartic cost")

    def _scalar_gain(self, ssmap):
        if ssmap.G.shape != (1, 1):
            raise DimensionMismatchError(f"quartic cost needs a scalar plant, G has shape {ssmap.G.shape}")
        return float(ssmap.G[0, 0])

    def h(self, u):
        return 0.0

    def grad_h(self, u):
        return np.zeros_like(u, dtype=float)

    def g(self, y):
        return float(0.25 * np.sum((y - self.y_ref) ** 4))

    def grad_g(self, y):
        return (y - self.y_ref) ** 3

    def optimal_input(self, ssmap, w):
        G = self._scalar_gain(ssmap)
        if G == 0.0:
            raise NotSolvableError("quartic cost has no unique optimum when G = 0")
        return np.array([(self.y_ref - float((ssmap.H @ w)[0])) / G])

    def gap(self, ssmap, u, u_star):
        return float(0.25 * np.sum((ssmap.G @ (u - u_star)) ** 4))

    def constants(self, ssmap):
        G = self._scalar_gain(ssmap)
        ell_y = 3.0 * G ** 2 * self.ball_radius ** 2
        return CostConstants(
            ell_u=0.0,
            ell_y=ell_y,
            ell=ell_y * G ** 2,
            mu=None,
            ell0=G ** 4 * self.nu0 ** 2,
            nu0=self.nu0,
        )


def _check_dimensions(ssmap, u, w):
    u = np.asarray(u, dtype=float).reshape(-1)
    w = np.asarray(w, dtype=float).reshape(-1)
    if u.shape[0] != ssmap.G.shape[1]:
        raise DimensionMismatchError(f"u has length {u.shape[0]}, expected m={ssmap.G.shape[1]}")
    if w.shape[0] != ssmap.H.shape[1]:
        raise DimensionMismatchError(f"w has length {w.shape[0]}, expected q={ssmap.H.shape[1]}")
    return u, w


def grad_f(cost, ssmap, u, w):
    """∇f(u) = ∇h(u) + Gᵀ∇g(Gu + Hw)."""
    u, w = _check_dimensions(ssmap, u, w)
    y = ssmap.G @ u + ssmap.H @ w
    return cost.grad_h(u) + ssmap.G.T @ cost.grad_g(y)


def objective(cost, ssmap, u, w):
    u, w = _check_dimensions(ssmap, u, w)
    return cost.h(u) + cost.g(ssmap.G @ u + ssmap.H @ w)


def optimal_input(cost, ssmap, w):
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape[0] != ssmap.H.shape[1]:
        raise DimensionMismatchError(f"w has length {w.shape[0]}, expected q={ssmap.H.shape[1]}")
    return cost.optimal_input(ssmap, w)


def suboptimality_gap(cost, ssmap, u, w, u_star=None):
    """f(u) − f*, in closed form so that it stays accurate next to u*."""
    u, w = _check_dimensions(ssmap, u, w)
    if u_star is None:
        u_star = optimal_input(cost, ssmap, w)
    return cost.gap(ssmap, u, u_star)


def cost_constants(cost, ssmap):
    constants = cost.constants(ssmap)
    logger.debug(f"{cost.kind} cost constants: ℓ_u={constants.ell_u:.6g}, ℓ_y={constants.ell_y:.6g}, "
                 f"ℓ={constants.ell:.6g}, μ={constants.mu}")
    return constants


def check_pl(cost, ssmap, w, samples, mu):
    """½‖∇f(u)‖² ≥ μ(f(u) − f*) at every sample."""
    u_star = optimal_input(cost, ssmap, w)
    for u in samples:
        gradient = grad_f(cost, ssmap, u, w)
        if 0.5 * float(gradient @ gradient) < mu * suboptimality_gap(cost, ssmap, u, w, u_star) - PL_TOLERANCE:
            return False
    return True


def check_reverse_lipschitz(cost, ssmap, w, samples, ell0, nu0):
    """‖∇f(u)‖ > ℓ₀‖u − u*‖ at every sample farther than ν₀ from u*."""
    u_star = optimal_input(cost, ssmap, w)
    for u in samples:
        distance = float(np.linalg.norm(np.asarray(u, dtype=float) - u_star))
        if distance <= nu0:
            continue
        if not np.linalg.norm(grad_f(cost, ssmap, u, w)) > ell0 * distance:
            return False
    return True


def random_spd_matrix(rng, size, floor=0.5):
    M = rng.uniform(-1.0, 1.0, (size, size))
    return M @ M.T / size + floor * np.eye(size)


def random_quadratic_cost(seed, m, p):
    rng = np.random.default_rng(seed)
    R = random_spd_matrix(rng, m)
    Qy = random_spd_matrix(rng, p)
    y_ref = rng.uniform(-1.0, 1.0, p)
    logger.debug(f"random quadratic cost (seed {seed}): cond(R)={np.linalg.cond(R):.3g}, "
                 f"cond(Qy)={np.linalg.cond(Qy):.3g}, ‖y_ref‖={spectral_norm(y_ref.reshape(1, -1)):.3g}")
    return QuadraticCost(R=R, Qy=Qy, y_ref=y_ref)
