import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_loop, random_spd
from tipi.errors import ContractError, NumericalError
from tipi.sml_core import ControllerParams, ForwardModel, psi_iterate
from tipi.tipi_estimator import (NoiseModel, TipiWindow, jacobian_products, linear_stationary_sigma,
                                 logdet_spd, propagate_deltas, sigma_from_jacobians, tipi_gaussian,
                                 tipi_mc_oracle, whitened_tipi)


class TestPropagation:
    def test_single_step_window(self):
        win = TipiWindow.synthetic([[0.5]], [[0.3]])
        np.testing.assert_allclose(propagate_deltas(win)[-1], [0.3])

    def test_scalar_two_step(self):
        win = TipiWindow.synthetic([[0.5]], [[0.1], [0.2]])
        np.testing.assert_allclose(win.deltas[-1], [0.25])

    def test_last_delta_is_sum_over_products(self, rng):
        tau, n = 4, 3
        Ls = rng.normal(0, 0.6, (tau, n, n))
        xi = rng.normal(size=(tau, n))
        win = TipiWindow.synthetic(Ls, xi)
        prods = jacobian_products(Ls, tau)
        expected = sum(prods[k] @ xi[tau - 1 - k] for k in range(tau))
        np.testing.assert_allclose(win.deltas[-1], expected, atol=1e-12)

    def test_measured_window_matches_prediction_errors(self, rng):
        p, m = random_loop(rng, 2, 2)
        S = rng.normal(size=(4, 2))
        win = TipiWindow.from_states(p, m, S)
        np.testing.assert_allclose(win.deltas[3], S[3] - psi_iterate(p, m, S[0], 3))
        np.testing.assert_array_equal(win.deltas[0], 0.0)

    def test_small_noise_linearization_error_is_second_order(self):
        # noisy tanh loop: measured deltas versus the linearized propagation
        p = ControllerParams(np.array([[1.1]]), np.array([0.05]))
        m = ForwardModel.identity(1)
        errs = []
        for lam in (1e-3, 1e-4, 1e-5):
            rng = np.random.default_rng(3)
            s = [np.array([0.4])]
            for _ in range(4):
                s.append(np.tanh(1.1 * s[-1] + 0.05) + lam * rng.standard_normal(1))
            win = TipiWindow.from_states(p, m, np.array(s))
            errs.append(np.abs(win.deltas[-1] - win.linearized().deltas[-1]).max())
        assert errs[1] < errs[0] / 50 and errs[2] < errs[1] / 50

    def test_underfilled_window(self):
        with pytest.raises(ContractError):
            TipiWindow(3, None, None, np.zeros((2, 1)), np.zeros((2, 1)), np.zeros((3, 1, 1)))


class TestSigma:
    def test_tau_one_is_noise(self, rng):
        D = random_spd(rng, 3)
        np.testing.assert_allclose(sigma_from_jacobians(rng.normal(size=(3, 3)), D, 1), D)

    def test_identity_jacobian(self):
        np.testing.assert_allclose(sigma_from_jacobians(np.eye(2), np.eye(2), 2), 2 * np.eye(2))

    def test_scalar_three_step(self):
        np.testing.assert_allclose(sigma_from_jacobians([[0.5]], [[1.0]], 3), [[1.3125]])

    def test_asymmetric_noise_rejected(self):
        with pytest.raises(ContractError):
            sigma_from_jacobians(np.eye(2), np.array([[1.0, 0.5], [0.0, 1.0]]), 2)

    def test_indefinite_noise_rejected(self):
        with pytest.raises(NumericalError):
            sigma_from_jacobians(np.eye(2), np.diag([1.0, -1.0]), 2)


class TestTipiGaussian:
    def test_zero_when_sigma_is_noise(self, rng):
        D = random_spd(rng, 3)
        assert abs(tipi_gaussian(D, D)) < 1e-12

    def test_twice_identity(self):
        assert tipi_gaussian(2 * np.eye(2), np.eye(2)) == pytest.approx(math.log(2), abs=1e-12)

    @pytest.mark.parametrize("L", [0.0, 0.5, 1.0, -1.7])
    def test_scalar_two_step_closed_form(self, L):
        value = tipi_gaussian(sigma_from_jacobians([[L]], [[1.0]], 2), [[1.0]])
        assert value == pytest.approx(0.5 * math.log1p(L * L), abs=1e-14)

    def test_logdet_matches_slogdet(self, rng):
        A = random_spd(rng, 5)
        assert logdet_spd(A) == pytest.approx(np.linalg.slogdet(A)[1], rel=1e-12)

    def test_singular_sigma(self):
        with pytest.raises(NumericalError):
            tipi_gaussian(np.zeros((2, 2)), np.eye(2))


class TestWhitened:
    def test_isotropic_equals_plain(self, rng):
        Ls = rng.normal(0, 0.7, (3, 3, 3))
        expected = tipi_gaussian(sigma_from_jacobians(Ls, np.eye(3), 3), np.eye(3))
        assert whitened_tipi(Ls, 4.0 * np.eye(3), 3) == pytest.approx(expected, abs=1e-12)

    def test_agrees_with_plain_formula_for_anisotropic_noise(self, rng):
        for _ in range(5):
            L = rng.normal(size=(3, 3))
            D = random_spd(rng, 3)
            plain = tipi_gaussian(sigma_from_jacobians(L, D, 2), D)
            assert whitened_tipi(L, D, 2) == pytest.approx(plain, abs=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-6, 3))
    def test_amplitude_cancels(self, seed, log_lam):
        rng = np.random.default_rng(seed)
        L = rng.normal(size=(2, 3, 3))
        D = random_spd(rng, 3)
        lam = 10.0 ** log_lam
        assert whitened_tipi(L, lam ** 2 * D, 3) == pytest.approx(whitened_tipi(L, D, 3), abs=1e-9)


class TestMonteCarlo:
    def test_single_step_is_zero(self):
        value, se = tipi_mc_oracle(np.eye(2), np.eye(2), 1, n_samples=100_000, seed=1, return_stderr=True)
        assert abs(value) < 1e-12 + 4 * se

    def test_unit_gain_scalar(self):
        value = tipi_mc_oracle([[1.0]], [[1.0]], 2, n_samples=10**6, seed=2)
        assert abs(value - 0.5 * math.log(2)) < 0.01

    def test_three_dimensional_window(self, rng):
        Ls = rng.normal(0, 0.4, (4, 3, 3))
        D = random_spd(rng, 3)
        closed = tipi_gaussian(sigma_from_jacobians(Ls, D, 4), D)
        value, se = tipi_mc_oracle(Ls, D, 4, n_samples=400_000, seed=5, return_stderr=True)
        assert abs(value - closed) < 3 * se

    def test_seeded(self):
        a = tipi_mc_oracle([[0.5]], [[1.0]], 3, n_samples=1000, seed=9)
        b = tipi_mc_oracle([[0.5]], [[1.0]], 3, n_samples=1000, seed=9)
        assert a == b


class TestStationary:
    def test_zero_jacobian(self, rng):
        D = random_spd(rng, 2)
        for tau in (1, 5, 50):
            np.testing.assert_allclose(linear_stationary_sigma(np.zeros((2, 2)), D, tau), D)

    def test_scalar_geometric_series(self):
        val = linear_stationary_sigma([[0.9]], [[1.0]], 200)[0, 0]
        assert abs(val - 1.0 / (1.0 - 0.81)) < 1e-6

    def test_rotation(self):
        th = 0.7
        L = 0.8 * np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        S = linear_stationary_sigma(L, np.eye(2), 200)
        assert np.linalg.norm(S - np.linalg.inv(np.eye(2) - L @ L.T)) < 1e-6

    def test_unstable_rejected(self):
        with pytest.raises(NumericalError):
            linear_stationary_sigma([[1.01]], [[1.0]], 10)

    def test_matches_product_form(self, rng):
        L = rng.normal(0, 0.4, (3, 3))
        np.testing.assert_allclose(linear_stationary_sigma(L, np.eye(3), 7),
                                   sigma_from_jacobians(L, np.eye(3), 7), atol=1e-12)


class TestNoiseModel:
    def test_sample_covariance(self):
        D = 0.01 * np.array([[1.0, 0.3], [0.3, 0.5]])
        nm = NoiseModel(D, lam=0.1)
        X = nm.sample(np.random.default_rng(0), 200_000)
        np.testing.assert_allclose(np.cov(X, rowvar=False), D, atol=1e-4)  # ~3 standard errors
        np.testing.assert_allclose(nm.shape, [[1.0, 0.3], [0.3, 0.5]])

    def test_isotropic(self):
        nm = NoiseModel.isotropic(3, 0.2)
        np.testing.assert_allclose(nm.shape, np.eye(3))
