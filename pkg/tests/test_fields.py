import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from katosde.errors import ValidationError
from katosde.fields import (GridField, absolute, as_drift, cap_values,
                            constant_field, from_callable, make_example,
                            mollify, sample_to_grid, squared)


class TestExampleFamilies:
    def test_power_product_metadata_p(self):
        f = make_example("power_product", (-0.25, -0.25), 2, 1.0)
        assert f.metadata["theoretical_p"] == pytest.approx(3.0)

    def test_power_product_bounded_case(self):
        f = make_example("power_product", (0.0, 0.0), 2, 1.0)
        assert f.metadata["theoretical_p"] == pytest.approx(4.0)
        assert f.at(0.5, (0.3, -0.7)) == pytest.approx(1.0)

    def test_ball_lattice_metadata_and_sentinel(self):
        f = make_example("ball_lattice", 0.25, 2, 1.0)
        assert f.metadata["theoretical_p"] == pytest.approx(2.5)
        center = f.singular_points[0]
        assert np.isinf(f.at(0.5, center))

    def test_time_singular_metadata(self):
        f = make_example("time_singular", -0.3, 2, 1.0)
        assert f.metadata["theoretical_p"] == pytest.approx(2.4)

    @pytest.mark.parametrize("family,params,dim", [
        ("power_product", (-0.6, 0.0), 2),        # alpha_i <= -1/2
        ("power_product", (-0.45, -0.6), 2),      # second alpha out of range
        ("ball_lattice", 0.6, 2),                 # alpha >= 1/d
        ("ball_lattice", 0.0, 2),                 # alpha <= 0
        ("time_singular", -0.1, 2),               # alpha > -1/(2d)
        ("time_singular", -0.6, 2),               # alpha <= -1/2
    ])
    def test_invalid_parameters_rejected(self, family, params, dim):
        with pytest.raises(ValidationError):
            make_example(family, params, dim, 1.0)

    def test_unknown_family(self):
        with pytest.raises(ValidationError):
            make_example("nope", 0.1, 2, 1.0)

    def test_nonnegative_and_zero_outside_time(self):
        f = make_example("power_product", (-0.25, -0.25), 2, 1.0)
        x = np.array([[0.5, 0.5], [-0.2, 0.9]])
        assert np.all(f(0.3, x) >= 0.0)
        assert np.all(f(-0.1, x) == 0.0)
        assert np.all(f(1.5, x) == 0.0)

    def test_power_product_value(self):
        f = make_example("power_product", (-0.25, -0.25), 2, 1.0)
        # min(|x|,1)^a per axis
        assert f.at(0.1, (0.5, 2.0)) == pytest.approx(0.5 ** -0.25)


class TestTransforms:
    def test_squared_and_absolute(self):
        f = from_callable(lambda t, x: -x[:, 0], 2, 1.0)
        x = np.array([[2.0, 0.0]])
        assert squared(f)(0.5, x)[0] == pytest.approx(4.0)
        assert absolute(f)(0.5, x)[0] == pytest.approx(2.0)

    def test_as_drift_embedding(self):
        f = constant_field(3.0, 2, 1.0)
        b = as_drift(f, axis=1)
        v = b.at(0.5, (0.0, 0.0))
        assert v == pytest.approx([0.0, 3.0])

    def test_as_drift_requires_scalar(self):
        b = constant_field(np.array([1.0, 0.0]), 2, 1.0)
        with pytest.raises(ValidationError):
            as_drift(b)


class TestMollify:
    def test_constant_reproduced(self):
        f = constant_field(2.5, 2, 1.0)
        for n in (1, 4, 8):
            assert mollify(f, n).at(0.5, (0.1, -0.3)) == pytest.approx(2.5)

    def test_brute_force_oracle(self):
        # fixed-order rule against the same convolution at 4x resolution
        f = make_example("power_product", (-0.25, -0.25), 2, 1.0)
        # anchor whose bump support (radius 2^-6) avoids the singular axes
        coarse = mollify(f, 6, order=8).at(0.5, (0.1, 0.1))
        fine = mollify(f, 6, order=32).at(0.5, (0.1, 0.1))
        assert coarse == pytest.approx(fine, rel=1e-3)

    def test_convergence_at_smooth_points(self):
        f = make_example("power_product", (-0.25, -0.25), 2, 1.0)
        rng = np.random.default_rng(0)
        pts = rng.uniform(0.3, 0.9, (10, 2))
        for x in pts:
            target = f.at(0.6, x)
            errs = [abs(mollify(f, n).at(0.6, x) - target) for n in (4, 6, 8)]
            assert errs[0] >= errs[1] >= errs[2]

    def test_mollified_bounded_on_probes(self):
        f = make_example("power_product", (-0.25, -0.25), 2, 1.0)
        g = mollify(f, 5)
        pts = np.stack(np.meshgrid(np.linspace(-1, 1, 9),
                                   np.linspace(-1, 1, 9),
                                   indexing="ij"), axis=-1).reshape(-1, 2)
        vals = g(0.5, pts)
        assert np.all(np.isfinite(vals))

    def test_level_validation(self):
        with pytest.raises(ValidationError):
            mollify(constant_field(1.0, 2, 1.0), 0)


class TestGridField:
    def test_round_trip_exact_at_nodes(self):
        f = from_callable(lambda t, x: np.sin(x[:, 0]) + t, 2, 1.0)
        g = sample_to_grid(f, 1.0, 4, 8)
        ts = g.time_nodes()
        xs = g.axis_nodes()
        for it in (0, 2, 4):
            for ix in (0, 3, 8):
                x = np.array([[xs[ix], xs[3]]])
                assert g.evaluate(float(ts[it]), x)[0] == pytest.approx(
                    f(float(ts[it]), x)[0], abs=1e-12)

    def test_linear_field_interpolation(self):
        f = from_callable(lambda t, x: x[:, 0], 2, 1.0)
        g = sample_to_grid(f, 1.0, 1, 8)
        assert g.evaluate(0.0, np.array([[0.5, 0.0]]))[0] == pytest.approx(0.5)

    def test_constant_lattice(self):
        g = sample_to_grid(constant_field(1.0, 2, 1.0), 1.0, 2, 4)
        assert np.all(g.values == 1.0)

    def test_cap_policy_applied(self):
        f = make_example("power_product", (-0.25, -0.25), 2, 1.0)
        g = sample_to_grid(f, 1.0, 1, 4, cap_eps=1e-6)
        # node at the origin is singular -> capped
        assert g.values.max() == pytest.approx(1e6)

    def test_clamped_extension(self):
        f = from_callable(lambda t, x: x[:, 0], 2, 1.0)
        g = sample_to_grid(f, 1.0, 1, 8)
        assert g.evaluate(0.0, np.array([[5.0, 0.0]]))[0] == pytest.approx(1.0)

    @given(st.floats(-10, 10), st.floats(0.05, 1.0))
    @settings(max_examples=25, deadline=None)
    def test_zero_outside_time_property(self, xval, t):
        f = make_example("power_product", (-0.25, -0.25), 2, 0.5)
        v = f(t, np.array([[xval, 0.3]]))
        if t > 0.5:
            assert v[0] == 0.0
        else:
            assert v[0] >= 0.0

    @given(st.lists(st.floats(-1e8, 1e8) | st.just(float("inf"))
                    | st.just(float("nan")), min_size=1, max_size=20))
    @settings(max_examples=50, deadline=None)
    def test_cap_values_property(self, vals):
        out = cap_values(np.asarray(vals, dtype=float), 1e6)
        assert np.all(np.isfinite(out))
        assert np.all(np.abs(out) <= 1e6)
