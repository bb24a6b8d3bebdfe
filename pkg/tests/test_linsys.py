import numpy as np
import pytest

from metarhc.linsys import (DimensionError, InfeasibleThetaSetError, NoiseModel,
                            SystemParams, ThetaSet, char_poly_coeffs, g_matrix,
                            observe, project_into_theta_set, sample_theta, step)
from tests.conftest import random_stable_system


# -- step ---------------------------------------------------------------------

def test_step_scalar():
    sys = SystemParams(A=[[0.5]], B=[[1.0]])
    np.testing.assert_allclose(step(sys, np.array([1.0]), np.array([1.0])), [1.5])


def test_step_zero_A():
    sys = SystemParams(A=np.zeros((2, 2)), B=np.eye(2))
    x = np.array([3.0, -4.0])
    u = np.array([0.7, 0.2])
    np.testing.assert_allclose(step(sys, x, u), u)


def test_step_matrix_oracle():
    # direct matrix-multiply oracle
    A = np.array([[0.9, 0.1], [0.0, 0.8]])
    B = np.array([[0.0], [1.0]])
    sys = SystemParams(A=A, B=B)
    out = step(sys, np.array([1.0, 1.0]), np.array([0.5]))
    np.testing.assert_allclose(out, [1.0, 1.3])
    np.testing.assert_allclose(out, A @ [1.0, 1.0] + B @ [0.5])


def test_step_dimension_mismatch():
    sys = SystemParams(A=[[0.5]], B=[[1.0]])
    with pytest.raises(DimensionError):
        step(sys, np.array([1.0, 2.0]), np.array([1.0]))
    with pytest.raises(DimensionError):
        step(sys, np.array([1.0]), np.array([1.0, 2.0]))


def test_step_linearity(rng):
    sys = random_stable_system(rng, 3, 2)
    x1, x2 = rng.normal(size=3), rng.normal(size=3)
    u1, u2 = rng.normal(size=2), rng.normal(size=2)
    lhs = step(sys, x1 + x2, u1 + u2)
    rhs = step(sys, x1, u1) + step(sys, x2, u2) - step(sys, np.zeros(3), np.zeros(2))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    np.testing.assert_allclose(step(sys, np.zeros(3), np.zeros(2)), np.zeros(3))


def test_rollout_stays_bounded(rng):
    # geometric-series bound from rho(A) < 1 on a long rollout
    sys = random_stable_system(rng, 2, 1, rho=0.7)
    gamma = (sys.spectral_radius() + 1.0) / 2.0
    c_rho = max(np.linalg.norm(np.linalg.matrix_power(sys.A, k), 2) / gamma**k
                for k in range(1, 200))
    c_rho = max(c_rho, 1.0)
    u_sup = 1.0
    bound = c_rho * np.linalg.norm(sys.B, 2) * u_sup / (1 - gamma)
    x = np.zeros(2)
    worst = 0.0
    for t in range(10**4):
        u = np.array([np.sin(0.7 * t)])  # bounded input
        x = step(sys, x, u)
        worst = max(worst, np.linalg.norm(x))
    assert worst <= bound + 1e-9


# -- observe ------------------------------------------------------------------

def test_observe_degenerate_noise():
    noise = NoiseModel(R=0.1, eps_c=0.0, seed=0)
    x = np.array([1.0, -2.0])
    np.testing.assert_array_equal(observe(x, noise), x)


def test_observe_truncation_invariant():
    noise = NoiseModel(R=0.5, eps_c=0.3, seed=7)
    for _ in range(200):
        y = observe(np.zeros(3), noise)
        assert np.linalg.norm(y) <= 0.3 + 1e-15


def test_observe_deterministic_replay():
    a = NoiseModel(R=0.1, eps_c=0.4, seed=42)
    d1, d2 = a.draw(2), a.draw(2)
    assert not np.array_equal(d1, d2)
    b = NoiseModel(R=0.1, eps_c=0.4, seed=42)
    np.testing.assert_array_equal(b.draw(2), d1)
    np.testing.assert_array_equal(b.draw(2), d2)


def test_noise_empirical_mean_near_zero():
    R, eps_c, N = 0.05, 0.2, 10**5
    noise = NoiseModel(R=R, eps_c=eps_c, seed=3)
    draws = np.array([noise.draw(2) for _ in range(N)])
    se = draws.std(axis=0, ddof=1) / np.sqrt(N)
    assert np.all(np.abs(draws.mean(axis=0)) <= 5 * se)


# -- sample_theta -------------------------------------------------------------

def test_sample_theta_degenerate_radius(scalar_theta_set):
    tset = ThetaSet(n=1, m=1, S=2.0, anchor=scalar_theta_set.anchor, task_radius=0.0)
    sys = sample_theta(tset, seed=0)
    np.testing.assert_array_equal(sys.theta, scalar_theta_set.anchor.theta)


def test_sample_theta_invariants(rng):
    tset = ThetaSet(n=2, m=1, S=2.0, rho_max=0.95)
    for _ in range(50):
        sys = sample_theta(tset, rng)
        assert sys.spectral_radius() < 0.95
        assert sys.frobenius_norm() <= 2.0
        assert sys.is_controllable()


def test_sample_theta_task_radius_monte_carlo():
    anchor = SystemParams(A=[[0.5]], B=[[1.0]])
    tset = ThetaSet(n=1, m=1, S=2.0, anchor=anchor, task_radius=0.1)
    rng = np.random.default_rng(11)
    for _ in range(1000):
        sys = sample_theta(tset, rng)
        assert np.linalg.norm(sys.theta - anchor.theta) <= 0.1 + 1e-12


def test_sample_theta_infeasible_set_raises():
    # every neighbor of a B=0 anchor is uncontrollable at this radius
    anchor = SystemParams(A=[[0.5]], B=[[0.0]])
    bad = ThetaSet(n=1, m=1, S=2.0, rho_max=0.95, anchor=anchor, task_radius=1e-13)
    with pytest.raises(InfeasibleThetaSetError):
        sample_theta(bad, seed=0, max_tries=200)


# -- char_poly_coeffs ---------------------------------------------------------

def test_char_poly_1x1():
    np.testing.assert_allclose(char_poly_coeffs(np.array([[0.5]])), [1.0, -0.5])


def test_char_poly_zero_matrix():
    np.testing.assert_allclose(char_poly_coeffs(np.zeros((2, 2))), [1.0, 0.0, 0.0])


def test_char_poly_expand_oracle():
    # (z - 0.9)(z - 0.8) = z^2 - 1.7 z + 0.72
    A = np.array([[0.9, 0.1], [0.0, 0.8]])
    np.testing.assert_allclose(char_poly_coeffs(A), [1.0, -1.7, 0.72], atol=1e-12)


def test_char_poly_companion_roundtrip(rng):
    for _ in range(20):
        n = int(rng.integers(2, 5))
        A = rng.normal(size=(n, n))
        d = char_poly_coeffs(A)
        companion = np.zeros((n, n))
        companion[0, :] = -d[1:]
        companion[1:, :-1] = np.eye(n - 1)
        eig_a = np.sort_complex(np.linalg.eigvals(A))
        eig_c = np.sort_complex(np.linalg.eigvals(companion))
        np.testing.assert_allclose(eig_a, eig_c, atol=1e-8)


# -- g_matrix -----------------------------------------------------------------

def test_g_matrix_hand_assembly():
    sys = SystemParams(A=[[0.5]], B=[[1.0]])
    G, c_g = g_matrix(sys)
    np.testing.assert_allclose(G, [[1.0, 0.0], [-0.5, 1.0]])
    assert c_g > 0


def test_g_matrix_uncontrollable():
    sys = SystemParams(A=[[0.5, 0.0], [0.0, 0.4]], B=np.zeros((2, 1)))
    _, c_g = g_matrix(sys)
    assert abs(c_g) <= 1e-12


def test_g_matrix_controllable_monte_carlo(rng):
    for _ in range(100):
        sys = random_stable_system(rng, 2, 1)
        _, c_g = g_matrix(sys)
        assert c_g > 0
        # eigenvalue oracle: controllability matrix has full rank
        assert np.linalg.matrix_rank(sys.controllability_matrix()) == 2


# -- projection helper --------------------------------------------------------

def test_project_into_theta_set_interior():
    tset = ThetaSet(n=1, m=1, S=2.0, rho_max=0.95)
    theta = np.array([[0.5, 1.0]])
    np.testing.assert_array_equal(project_into_theta_set(theta, tset), theta)


def test_project_into_theta_set_ball():
    tset = ThetaSet(n=1, m=1, S=2.0, rho_max=0.95)
    theta = np.array([[0.0, 4.0]])
    np.testing.assert_allclose(project_into_theta_set(theta, tset), [[0.0, 2.0]])
