import math

import numpy as np
import pytest

from katosde.errors import InsufficientDataError, ValidationError
from katosde.fields import constant_field, from_callable
from katosde.sde import (coupled_pair, density_envelope_check,
                         krylov_functional_convergence, simulate)


def _zero_drift(dim=2, horizon=1.0):
    return constant_field(np.zeros(dim), dim, horizon)


class TestSimulate:
    def test_brownian_second_moment(self):
        ens = simulate(_zero_drift(), np.zeros(2), 1.0, 128, 20000, seed=1)
        XT = ens.states[:, -1, :]
        m2 = np.mean(np.sum(XT * XT, axis=1))
        # E|W_T|^2 = d T, stderr of |W|^2 is sqrt(2 d) T / sqrt(N)
        assert m2 == pytest.approx(2.0, abs=4 * math.sqrt(4.0) / math.sqrt(20000))

    def test_zero_drift_states_are_increment_sums(self):
        ens = simulate(_zero_drift(), np.zeros(2), 0.5, 64, 100, seed=2)
        rebuilt = np.cumsum(ens.increments, axis=1)
        assert np.allclose(ens.states[:, 1:, :], rebuilt, atol=1e-14)

    def test_chunk_independence(self):
        b = constant_field(np.array([0.3, -0.1]), 2, 1.0)
        a = simulate(b, np.zeros(2), 0.5, 64, 300, seed=7, chunk=4096)
        c = simulate(b, np.zeros(2), 0.5, 64, 300, seed=7, chunk=17)
        assert np.array_equal(a.states, c.states)
        assert np.array_equal(a.increments, c.increments)

    def test_path_subset_reproducibility(self):
        b = _zero_drift()
        small = simulate(b, np.zeros(2), 0.5, 64, 10, seed=9)
        big = simulate(b, np.zeros(2), 0.5, 64, 200, seed=9)
        assert np.array_equal(small.states, big.states[:10])

    def test_constant_drift_mean(self):
        b = constant_field(np.array([0.5, 0.0]), 2, 1.0)
        ens = simulate(b, np.zeros(2), 1.0, 128, 20000, seed=3)
        mean = ens.states[:, -1, :].mean(axis=0)
        tol = 4.0 / math.sqrt(20000)
        assert mean[0] == pytest.approx(0.5, abs=tol)
        assert mean[1] == pytest.approx(0.0, abs=tol)

    def test_linear_drift_exact_euler_moments(self):
        # b(x) = -0.5 x: the Euler recursion has closed-form moments
        b = from_callable(lambda t, x: -0.5 * x, 1, 1.0, range_dim=1,
                          time_constant=True)
        n_steps, T, N = 128, 1.0, 40000
        dt = T / n_steps
        ens = simulate(b, np.array([1.0]), T, n_steps, N, seed=4)
        a = 1.0 - 0.5 * dt
        mean_exact = a ** n_steps
        var_exact = dt * (1.0 - a ** (2 * n_steps)) / (1.0 - a * a)
        XT = ens.states[:, -1, 0]
        assert XT.mean() == pytest.approx(
            mean_exact, abs=4 * math.sqrt(var_exact / N))
        assert XT.var() == pytest.approx(var_exact, rel=0.05)

    def test_validation(self):
        b = _zero_drift(horizon=0.1)
        with pytest.raises(ValidationError):
            simulate(b, np.zeros(2), 0.5, 128, 10, seed=1)   # past horizon
        with pytest.raises(ValidationError):
            simulate(b, np.zeros(2), 0.05, 8, 10, seed=1)    # too few steps

    def test_drift_capped_at_singularity(self):
        # the raw field is infinite at the origin; the cap keeps paths finite
        def ev(t, x):
            with np.errstate(divide="ignore"):
                return np.where(x == 0.0, np.inf, 1.0 / np.abs(x))

        b = from_callable(ev, 1, 1.0, range_dim=1, time_constant=True)
        ens = simulate(b, np.zeros(1), 0.1, 64, 50, seed=1, cap_eps=1e-3)
        assert np.all(np.isfinite(ens.states))


class TestCoupledPair:
    def test_identical_drifts_exactly_zero(self):
        b = constant_field(np.array([0.3, 0.0]), 2, 1.0)
        out = coupled_pair(b, b, np.zeros(2), 0.5, 64, 500, seed=5)
        assert out["mean"] == 0.0
        assert out["stderr"] == 0.0

    def test_constant_drift_separation_closed_form(self):
        # X - Y is deterministic: (c1 - c2) * t, sup at t = T
        b1 = constant_field(np.array([0.4, 0.0]), 2, 1.0)
        b2 = constant_field(np.array([0.1, 0.0]), 2, 1.0)
        out = coupled_pair(b1, b2, np.zeros(2), 0.5, 64, 200, seed=5)
        assert out["mean"] == pytest.approx((0.3 * 0.5) ** 2, rel=1e-12)
        assert out["stderr"] < 1e-15

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            coupled_pair(_zero_drift(2), _zero_drift(3), np.zeros(2),
                         0.5, 64, 10, seed=1)


class TestDensityEnvelope:
    def test_requires_enough_paths(self):
        ens = simulate(_zero_drift(), np.zeros(2), 0.5, 64, 500, seed=6)
        with pytest.raises(InsufficientDataError):
            density_envelope_check(ens, 0.5)

    def test_fixed_envelope_brownian(self):
        ens = simulate(_zero_drift(), np.zeros(2), 0.5, 64, 20000, seed=6,
                       store_increments=False)
        # generous envelope: twice the exact Gaussian constant
        out = density_envelope_check(ens, 0.5, m6=2.0 / (2 * math.pi), m7=1.0)
        assert out["mode"] == "fixed"
        assert out["pass"]

    def test_fitted_envelope_brownian(self):
        ens = simulate(_zero_drift(), np.zeros(2), 0.5, 64, 20000, seed=6,
                       store_increments=False)
        out = density_envelope_check(ens, 0.5)
        assert out["mode"] == "fitted"
        assert out["pass"]
        # the fitted constant should be near the true Gaussian one
        assert out["M6"] < 3.0 / (2 * math.pi)

    def test_t_check_validation(self):
        ens = simulate(_zero_drift(), np.zeros(2), 0.5, 64, 20000, seed=6,
                       store_increments=False)
        with pytest.raises(ValidationError):
            density_envelope_check(ens, 2.0)


class TestKrylov:
    def test_constant_functional_deterministic_error(self):
        # for a spatially constant h the error is the same on every path:
        # only the mollifier's shrinking time window near t = 0 contributes
        b = _zero_drift()
        h = constant_field(1.0, 2, 1.0)
        ens = simulate(b, np.zeros(2), 0.25, 64, 200, seed=8)
        out = krylov_functional_convergence(b, h, (4, 5, 6), ens)
        assert out["decreasing"]
        assert all(r["stderr"] == 0.0 for r in out["rows"])
        assert out["rows"][0]["mean"] > out["rows"][-1]["mean"] > 0.0

    def test_smooth_functional_decreasing(self):
        b = _zero_drift()
        h = from_callable(lambda t, x: np.cos(3.0 * x[:, 0]), 2, 1.0,
                          time_constant=True)
        ens = simulate(b, np.zeros(2), 0.25, 64, 300, seed=8)
        out = krylov_functional_convergence(b, h, (3, 5, 7), ens)
        assert out["decreasing"]
        assert out["rows"][0]["mean"] > out["rows"][-1]["mean"]
