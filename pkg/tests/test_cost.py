import numpy as np
import pytest

from utils._cost import (CostModelError, NotSolvableError, QuadraticCost, QuarticCost, check_pl,
                         check_reverse_lipschitz, cost_constants, grad_f, objective, optimal_input,
                         random_quadratic_cost, suboptimality_gap)
from utils._plant import DimensionMismatchError, LtiMode, random_plant, steady_state_maps


def _finite_difference(cost, ssmap, u, w, h=1e-6):
    gradient = np.zeros_like(u)
    for i in range(u.shape[0]):
        step = np.zeros_like(u)
        step[i] = h
        gradient[i] = (objective(cost, ssmap, u + step, w) - objective(cost, ssmap, u - step, w)) / (2.0 * h)
    return gradient


@pytest.fixture
def random_problem():
    plant = random_plant(21, 4, 3, 2, 2, S=1)
    ssmap = steady_state_maps(plant.modes[0], plant.C, plant.D)
    return random_quadratic_cost(22, 3, 2), ssmap


class TestQuadraticCost:
    def test_gradient_matches_finite_differences(self, random_problem):
        cost, ssmap = random_problem
        rng = np.random.default_rng(0)
        for _ in range(5):
            u, w = rng.uniform(-1.0, 1.0, 3), rng.uniform(-1.0, 1.0, 2)
            analytic = grad_f(cost, ssmap, u, w)
            numeric = _finite_difference(cost, ssmap, u, w)
            assert np.linalg.norm(analytic - numeric) <= 1e-6 * max(1.0, np.linalg.norm(analytic))

    def test_gradient_vanishes_at_the_optimum(self, random_problem):
        cost, ssmap = random_problem
        w = np.array([0.3, -0.7])
        u_star = optimal_input(cost, ssmap, w)
        np.testing.assert_allclose(grad_f(cost, ssmap, u_star, w), 0.0, atol=1e-10)

    def test_scalar_constants(self):
        ssmap = steady_state_maps(LtiMode([[-1.0]], [[1.0]], [[1.0]]), [[1.0]], [[0.0]])
        constants = cost_constants(QuadraticCost(R=[[1.0]], Qy=[[1.0]], y_ref=[0.0]), ssmap)
        assert constants.ell_u == pytest.approx(2.0)
        assert constants.ell_y == pytest.approx(2.0)
        assert constants.ell == pytest.approx(4.0)
        assert constants.mu == pytest.approx(4.0)
        assert constants.ell0 == pytest.approx(2.0)
        assert constants.nu0 == 0.0

    def test_pl_inequality_holds_with_mu(self, random_problem):
        cost, ssmap = random_problem
        mu = cost_constants(cost, ssmap).mu
        samples = np.random.default_rng(3).uniform(-2.0, 2.0, (20, 3))
        assert check_pl(cost, ssmap, np.zeros(2), samples, mu)
        assert not check_pl(cost, ssmap, np.zeros(2), samples, 10.0 * cost_constants(cost, ssmap).ell)

    def test_pl_fails_past_mu_on_the_weak_direction(self, random_problem):
        _, ssmap = random_problem
        cost = QuadraticCost(R=np.diag([0.5, 2.0, 8.0]), Qy=0.1 * np.eye(2), y_ref=[0.2, -0.4])
        w = np.array([0.5, -0.5])
        mu = cost_constants(cost, ssmap).mu
        weak = np.linalg.eigh(cost.hessian(ssmap))[1][:, 0]
        samples = np.vstack([optimal_input(cost, ssmap, w) + weak,
                             np.random.default_rng(5).uniform(-2.0, 2.0, (20, 3))])
        assert check_pl(cost, ssmap, w, samples, mu)
        assert not check_pl(cost, ssmap, w, samples, 1.5 * mu)

    def test_lipschitz_and_strong_convexity_on_random_pairs(self, random_problem):
        cost, ssmap = random_problem
        constants = cost_constants(cost, ssmap)
        rng = np.random.default_rng(6)
        w = rng.uniform(-1.0, 1.0, 2)
        for _ in range(1000):
            u, v = rng.uniform(-3.0, 3.0, (2, 3))
            difference = grad_f(cost, ssmap, u, w) - grad_f(cost, ssmap, v, w)
            distance = float(np.linalg.norm(u - v))
            assert np.linalg.norm(difference) <= constants.ell * distance * (1.0 + 1e-9)
            assert float(difference @ (u - v)) >= constants.mu * distance ** 2 * (1.0 - 1e-9)

    def test_gap_matches_the_objective_difference(self, random_problem):
        cost, ssmap = random_problem
        w = np.array([0.3, -0.7])
        u_star = optimal_input(cost, ssmap, w)
        u = u_star + np.array([0.4, -0.2, 0.1])
        expected = objective(cost, ssmap, u, w) - objective(cost, ssmap, u_star, w)
        assert suboptimality_gap(cost, ssmap, u, w) == pytest.approx(expected, rel=1e-9)

    def test_gap_stays_accurate_next_to_the_optimum(self, random_problem):
        cost, ssmap = random_problem
        w = np.array([0.3, -0.7])
        d = 1e-9 * np.array([1.0, -2.0, 0.5])
        gap = suboptimality_gap(cost, ssmap, optimal_input(cost, ssmap, w) + d, w)
        assert gap > 0.0
        assert gap == pytest.approx(0.5 * float(d @ cost.hessian(ssmap) @ d), rel=1e-6)

    def test_reverse_lipschitz_default_pair(self, random_problem):
        cost, ssmap = random_problem
        constants = cost_constants(cost, ssmap)
        samples = np.random.default_rng(4).uniform(-2.0, 2.0, (20, 3))
        assert check_reverse_lipschitz(cost, ssmap, np.zeros(2), samples, constants.ell0, constants.nu0)

    def test_not_positive_definite(self):
        with pytest.raises(CostModelError):
            QuadraticCost(R=[[0.0]], Qy=[[1.0]], y_ref=[0.0])

    def test_dimension_mismatch(self, random_problem):
        cost, ssmap = random_problem
        with pytest.raises(DimensionMismatchError):
            grad_f(cost, ssmap, np.zeros(2), np.zeros(2))


class TestQuarticCost:
    @pytest.fixture
    def ssmap(self):
        return steady_state_maps(LtiMode([[-20.0]], [[20.0]], [[20.0]]), [[1.0]], [[0.0]])

    def test_optimum_and_gradient(self, ssmap):
        cost = QuarticCost(y_ref=1.0)
        u_star = optimal_input(cost, ssmap, np.array([0.25]))
        assert u_star[0] == pytest.approx(0.75)
        assert grad_f(cost, ssmap, np.array([1.75]), np.array([0.25]))[0] == pytest.approx(1.0)

    def test_local_constants(self, ssmap):
        constants = cost_constants(QuarticCost(y_ref=1.0, ball_radius=1.0, nu0=1.0), ssmap)
        assert constants.ell_u == 0.0
        assert constants.ell_y == pytest.approx(3.0)
        assert constants.ell == pytest.approx(3.0)
        assert constants.mu is None
        assert constants.ell0 == pytest.approx(1.0)

    def test_gap_is_the_quartic_of_the_output_error(self, ssmap):
        cost = QuarticCost(y_ref=1.0)
        w = np.array([0.25])
        assert suboptimality_gap(cost, ssmap, np.array([1.25]), w) == pytest.approx(0.015625)
        assert suboptimality_gap(cost, ssmap, np.array([1.25]), w) == \
            pytest.approx(objective(cost, ssmap, np.array([1.25]), w))

    def test_zero_gain_has_no_optimum(self):
        ssmap = steady_state_maps(LtiMode([[-1.0]], [[0.0]], [[1.0]]), [[1.0]], [[0.0]])
        with pytest.raises(NotSolvableError):
            optimal_input(QuarticCost(y_ref=1.0), ssmap, np.zeros(1))

    def test_needs_scalar_plant(self):
        plant = random_plant(1, 3, 2, 2, 1, S=1)
        ssmap = steady_state_maps(plant.modes[0], plant.C, plant.D)
        with pytest.raises(DimensionMismatchError):
            cost_constants(QuarticCost(y_ref=0.0), ssmap)
