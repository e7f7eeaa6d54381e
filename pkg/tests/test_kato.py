import math

import numpy as np
import pytest

from katosde.errors import InsufficientDataError, ValidationError
from katosde.fields import constant_field, from_callable, make_example, squared
from katosde.heatkernel import QuadraturePolicy
from katosde.kato import (CertifyPolicy, WindowScan, certify, fit_exponent,
                          sqrt_class_check, window_integral, window_scan,
                          window_scaling_check)

FAST_QUAD = QuadraturePolicy(time_levels=16, space_points_per_axis=16)


def _point_mass(r0=2.0 ** -10, dim=2):
    """Approximate point mass: r0^{-d} on B(0, r0); window slope is the dimension."""
    def ev(t, x):
        return np.where(np.linalg.norm(x, axis=1) <= r0, r0 ** -dim, 0.0)
    return from_callable(ev, dim, 1.0, time_constant=True,
                         singular_points=((0.0,) * dim,))


class TestWindowIntegral:
    def test_constant_field_closed_form(self):
        # mass of 1 over B(0, r) x (0, r^2] = pi r^4 in d = 2
        f = constant_field(1.0, 2, 1.0)
        r = 0.5
        assert window_integral(f, 0.0, (0.0, 0.0), r) == pytest.approx(
            math.pi * r ** 4, rel=1e-6)

    def test_monte_carlo_oracle(self):
        f = make_example("power_product", (-0.25, -0.25), 2, 1.0)
        r = 0.5
        val = window_integral(f, 0.0, (0.0, 0.0), r)
        rng = np.random.default_rng(7)
        pts = rng.uniform(-r, r, (400000, 2))
        inside = np.linalg.norm(pts, axis=1) < r
        mc = np.mean(np.where(inside, f(0.0, pts), 0.0)) * (2 * r) ** 2
        assert val == pytest.approx(mc * r * r, rel=2e-2)

    def test_refined_policy_oracle(self):
        f = make_example("power_product", (-0.25, -0.25), 2, 1.0)
        coarse = window_integral(f, 0.0, (0.0, 0.0), 0.25, FAST_QUAD)
        fine = window_integral(f, 0.0, (0.0, 0.0), 0.25, FAST_QUAD.scaled(2))
        assert coarse == pytest.approx(fine, rel=1e-3)

    def test_window_clipped_at_horizon(self):
        f = constant_field(1.0, 2, 0.01)
        # window (0.005, 0.005 + 0.25] sticks out past the horizon
        val = window_integral(f, 0.005, (0.0, 0.0), 0.5)
        assert val == pytest.approx(math.pi * 0.25 * 0.005, rel=1e-6)

    def test_radius_validation(self):
        f = constant_field(1.0, 2, 1.0)
        with pytest.raises(ValidationError):
            window_integral(f, 0.0, (0.0, 0.0), 0.0)

    def test_custom_upper_time(self):
        f = constant_field(1.0, 2, 1.0)
        val = window_integral(f, 0.0, (0.0, 0.0), 0.5, upper_time=0.1)
        assert val == pytest.approx(math.pi * 0.25 * 0.1, rel=1e-6)


class TestExponentFit:
    def test_exact_power_law_recovered(self):
        radii = np.array([2.0 ** -k for k in range(2, 9)])
        scan = WindowScan(radii=radii, window_values=3.0 * radii ** 2.7,
                          probes=[np.zeros(2)])
        p, M, r2 = fit_exponent(scan)
        assert p == pytest.approx(2.7, abs=1e-12)
        assert M == pytest.approx(3.0, rel=1e-12)
        assert r2 == pytest.approx(1.0)

    def test_too_few_points(self):
        radii = np.array([0.25, 0.125, 0.0625])
        scan = WindowScan(radii=radii, window_values=radii ** 3,
                          probes=[np.zeros(2)])
        with pytest.raises(InsufficientDataError):
            fit_exponent(scan)

    def test_narrow_span(self):
        radii = np.array([0.25, 0.24, 0.23, 0.22])
        scan = WindowScan(radii=radii, window_values=radii ** 3,
                          probes=[np.zeros(2)])
        with pytest.raises(InsufficientDataError):
            fit_exponent(scan)

    def test_zero_values_excluded(self):
        radii = np.array([2.0 ** -k for k in range(2, 9)])
        vals = radii ** 2.0
        vals[-1] = 0.0
        scan = WindowScan(radii=radii, window_values=vals, probes=[np.zeros(2)])
        p, _, _ = fit_exponent(scan)
        assert p == pytest.approx(2.0, abs=1e-10)


class TestWindowScan:
    def test_constant_field_slope(self):
        f = constant_field(1.0, 2, 1.0)
        scan = window_scan(f, quad=FAST_QUAD)
        p, M, r2 = fit_exponent(scan)
        assert p == pytest.approx(4.0, abs=1e-3)
        assert M == pytest.approx(math.pi, rel=1e-3)

    def test_radius_validation(self):
        f = constant_field(1.0, 2, 1.0)
        with pytest.raises(ValidationError):
            window_scan(f, radii=[1.5, 0.5, 0.25, 0.125])

    def test_rows_table_shape(self):
        f = constant_field(1.0, 2, 1.0)
        scan = window_scan(f, radii=[0.25, 0.125, 0.0625, 0.03125],
                           quad=FAST_QUAD)
        rows = scan.as_rows()
        assert len(rows) == len(scan.probes) * 4
        assert all(len(r) == 3 for r in rows)


class TestCertify:
    POLICY = dict(lambdas=(1.0,), t_grid=(1e-2, 1e-6),
                  probes=(np.zeros(2),), quad=FAST_QUAD)

    def test_constant_field_certified(self):
        f = constant_field(1.0, 2, 1.0)
        report = certify(f, CertifyPolicy(**self.POLICY))
        assert report.verdict == "certified"
        assert report.fitted_p == pytest.approx(4.0, abs=0.01)
        assert report.kato_alpha_range[1] == pytest.approx(2.0, abs=0.01)

    def test_point_mass_not_certified(self):
        # the window slope of a point mass sits exactly at the dimension;
        # quadrature noise may land on either side, but never certifies
        report = certify(_point_mass(), CertifyPolicy(**self.POLICY))
        assert report.verdict in ("rejected", "inconclusive")
        assert report.fitted_p == pytest.approx(2.0, abs=0.05)
        assert report.kato_alpha_range[1] <= 0.05

    def test_zero_field_degenerate_certified(self):
        f = constant_field(0.0, 2, 1.0)
        report = certify(f, CertifyPolicy(**self.POLICY))
        assert report.verdict == "certified"
        assert any("degenerate" in n for n in report.notes)

    def test_report_round_trips_to_dict(self):
        f = constant_field(1.0, 2, 1.0)
        report = certify(f, CertifyPolicy(**self.POLICY))
        d = report.to_dict()
        assert d["verdict"] == "certified"
        assert len(d["nlambda_values"]) == 4      # 1 lambda x 2 dirs x 2 T
        assert len(d["window_scan"]["radii"]) == 7

    def test_decay_tabulated_both_directions(self):
        f = constant_field(1.0, 2, 1.0)
        report = certify(f, CertifyPolicy(**self.POLICY))
        for direction in ("forward", "backward"):
            big = report.nlambda_values[(1.0, direction, 1e-2)]
            small = report.nlambda_values[(1.0, direction, 1e-6)]
            assert small < 0.05 * big


class TestScalingAndSqrt:
    def test_window_scaling_constant_field(self):
        f = constant_field(1.0, 2, 1.0)
        out = window_scaling_check(f, p=4.0, probes=[np.zeros(2)],
                                   quad=FAST_QUAD)
        assert out["pass"]
        assert all(row["pass"] for row in out["rows"])

    def test_window_scaling_power_product_squared(self):
        f = squared(make_example("power_product", (-0.25, -0.25), 2, 1.0))
        out = window_scaling_check(f, p=3.0, probes=[np.zeros(2)],
                                   quad=FAST_QUAD)
        assert out["pass"]

    def test_window_scaling_degenerate(self):
        out = window_scaling_check(constant_field(0.0, 2, 1.0), p=4.0,
                                   probes=[np.zeros(2)], quad=FAST_QUAD)
        assert out["pass"] and out["degenerate"]

    def test_sqrt_class_power_product(self):
        base = make_example("power_product", (-0.25, -0.25), 2, 1.0)
        out = sqrt_class_check(base, squared(base), alpha=1.5,
                               probes=[np.zeros(2)], quad=FAST_QUAD)
        assert out["cauchy_schwarz_pass"]
        assert out["decay_pass"]
        assert out["pass"]

    def test_sqrt_class_alpha_validation(self):
        f = constant_field(1.0, 2, 1.0)
        with pytest.raises(ValidationError):
            sqrt_class_check(f, squared(f), alpha=2.0)
