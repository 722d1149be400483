import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sacldp import rng
from sacldp.errors import DomainError, ParameterError
from sacldp.field import (FieldPath, Mode, ModeSet, covariance, evaluate_field_increment, realize, sample_increments,
                          sample_path, sup_trace_bound)
from sacldp.grid import SpaceGrid, TimeGrid


def bump_sine(x, c, l):
    """Hand-written default mode on U = (0, 1): c / l^2 sin(l pi x) (1 - s^2)^4."""
    s = 2.0 * x - 1.0
    return c / l**2 * np.sin(l * np.pi * x) * (1.0 - s**2) ** 4


# ---------------------------------------------------------------- grids and streams

def test_time_grid_from_step_rejects_non_divisor():
    assert TimeGrid.from_step(0.5, 1e-4).steps == 5000
    with pytest.raises(ParameterError):
        TimeGrid.from_step(0.5, 0.3)


def test_time_grid_index_round_trip():
    times = TimeGrid(0.5, 5000)
    assert times.index(0.25) == 2500
    with pytest.raises(ParameterError):
        times.index(0.25 + 0.3e-4)


def test_space_grid_shapes():
    space = SpaceGrid.from_spacing((0.0, 0.0), (1.0, 2.0), 0.25)
    assert space.shape == (5, 9)
    assert space.nodes.shape == (5, 9, 2)
    assert space.spacing == (0.25, 0.25)
    with pytest.raises(ParameterError):
        SpaceGrid.from_spacing((0.0,), (1.0,), 0.3)


def test_streams_are_labelled_and_reproducible():
    a = rng.generator(5, "field", 3).standard_normal(4)
    b = rng.generator(5, "field", 3).standard_normal(4)
    c = rng.generator(5, "field", 4).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    assert rng.derive_seed(1, "mc", 0) != rng.derive_seed(1, "mc", 1)


# ---------------------------------------------------------------- modes

def test_default_mode_matches_hand_formula():
    spec = ModeSet.default(count=3, amplitude=0.2)
    x = np.linspace(0.0, 1.0, 17)[:, None]
    vals = spec.evaluate(0.0, x)
    for l in range(1, 4):
        np.testing.assert_allclose(vals[:, l, 0], bump_sine(x[:, 0], 0.2, l), atol=1e-15)
    assert np.all(vals[:, 0] == 0.0)


def test_jacobian_matches_finite_differences(default_spec):
    x = np.array([[0.13], [0.5], [0.77]])
    _, jac = default_spec.evaluate(0.0, x, jacobian=True)
    h = 1e-6
    fd = (default_spec.evaluate(0.0, x + h) - default_spec.evaluate(0.0, x - h)) / (2 * h)
    np.testing.assert_allclose(jac[..., 0], fd, atol=1e-7)


def test_combine_agrees_with_evaluate(rng):
    spec = ModeSet.default(dim=2, count=5, drift=0.3)
    x = rng.uniform(0.0, 1.0, size=(7, 11, 2))
    w = rng.standard_normal((7, 1, spec.L))
    ref = np.einsum("...li,...l->...i", spec.evaluate(0.0, x)[..., 1:, :], w) + 0.01 * spec.evaluate(0.0, x)[..., 0, :]
    np.testing.assert_allclose(spec.combine(0.0, x, w, 0.01), ref, atol=1e-14)


def test_field_vanishes_on_and_outside_u():
    spec = ModeSet.default(count=4, margin=0.1)
    x = np.array([[0.0], [0.05], [0.1], [0.9], [0.95], [1.0]])
    assert np.all(spec.evaluate(0.0, x) == 0.0)


def test_points_outside_box_rejected(default_spec):
    with pytest.raises(DomainError):
        default_spec.evaluate(0.0, np.array([[1.5]]))


def test_mode_set_round_trips_through_dict():
    spec = ModeSet((0.0,), (1.0,), (Mode("zero"), Mode("constant", 0.5, support=((0.1,), (0.9,)), plateau=0.6),
                                    Mode("sine", 0.2, 0, (3,))))
    assert ModeSet.from_dict(spec.to_dict()) == spec


def test_plateau_envelope_is_flat_inside():
    spec = ModeSet((0.0,), (1.0,), (Mode("zero"), Mode("constant", 0.7, support=((0.1,), (0.9,)), plateau=0.5)))
    x = np.linspace(0.3, 0.7, 9)[:, None]
    np.testing.assert_array_equal(spec.evaluate(0.0, x)[:, 1, 0], 0.7)


# ---------------------------------------------------------------- covariance

def test_covariance_outside_u_is_zero(default_spec):
    assert np.all(covariance(default_spec, 0.0, [1.0], [0.4]) == 0.0)


def test_covariance_single_mode_is_outer_product():
    spec = ModeSet.default(dim=2, count=1)
    x = np.array([0.3, 0.6])
    v = spec.evaluate(0.0, x)[1]
    a = covariance(spec, 0.0, x, x)
    np.testing.assert_allclose(a, np.outer(v, v))
    assert np.linalg.matrix_rank(a) <= 1


def test_covariance_two_modes_against_direct_summation():
    spec = ModeSet.default(count=2, amplitude=0.2)
    for x, y in [(0.5, 0.5), (0.3, 0.6)]:
        oracle = sum(bump_sine(x, 0.2, l) * bump_sine(y, 0.2, l) for l in (1, 2))
        np.testing.assert_allclose(covariance(spec, 0.0, [x], [y])[0, 0], oracle, rtol=1e-14)
    # at the midpoint the second mode vanishes: a = c^2
    np.testing.assert_allclose(covariance(spec, 0.0, [0.5], [0.5])[0, 0], 0.04, rtol=1e-14)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_covariance_symmetry_and_psd(x1, x2, y1, y2):
    spec = ModeSet.default(dim=2, count=4)
    x, y = np.array([x1, x2]), np.array([y1, y2])
    np.testing.assert_allclose(covariance(spec, 0.0, x, y), covariance(spec, 0.0, y, x).T, atol=1e-15)
    assert np.linalg.eigvalsh(covariance(spec, 0.0, x, x)).min() >= -1e-12


# ---------------------------------------------------------------- trace bound

def test_sup_trace_bound_cases(space):
    times = TimeGrid(0.5, 50)
    zero = ModeSet((0.0,), (1.0,), (Mode("zero"), Mode("zero")))
    assert sup_trace_bound(zero, space, times) == 0.0
    one = ModeSet.default(count=1, amplitude=0.3)
    np.testing.assert_allclose(sup_trace_bound(one, space, times), 0.5 * 0.3**2, rtol=1e-12)


def test_sup_trace_bound_against_fine_quadrature():
    spec = ModeSet.default(count=2)
    space = SpaceGrid((0.0,), (1.0,), 128)
    times = TimeGrid(1.0, 10)
    x = np.linspace(0.0, 1.0, 20001)
    oracle = max(bump_sine(x, 0.2, 1) ** 2 + bump_sine(x, 0.2, 2) ** 2)
    np.testing.assert_allclose(sup_trace_bound(spec, space, times), oracle, rtol=1e-4)


def test_time_dependent_trace_uses_quadrature(space):
    mode = Mode("sine", 0.2, 0, (1,), time_factor=lambda t: t)
    spec = ModeSet((0.0,), (1.0,), (Mode("zero"), mode))
    times = TimeGrid(1.0, 1000)
    # int_0^1 t^2 dt = 1/3, peak of the profile is 0.2 at x = 1/2
    np.testing.assert_allclose(sup_trace_bound(spec, space, times), 0.04 / 3.0, rtol=1e-5)


# ---------------------------------------------------------------- sampling

def test_sample_path_zero_sigma(default_spec, short_times):
    assert np.all(sample_path(default_spec, short_times, 0.0, 1).increments == 0.0)


def test_sample_path_deterministic(default_spec, short_times):
    a = sample_path(default_spec, short_times, 0.1, 42)
    b = sample_path(default_spec, short_times, 0.1, 42)
    np.testing.assert_array_equal(a.increments, b.increments)


def test_sample_path_rejects_negative_sigma(default_spec, short_times):
    with pytest.raises(ParameterError):
        sample_path(default_spec, short_times, -0.1, 1)


def test_brownian_increment_moments():
    spec = ModeSet.default(count=8)
    times = TimeGrid(1.0, 12500)
    path = sample_path(spec, times, 1.0, 7)
    z2 = path.increments**2 / times.dt  # 10^5 draws
    assert abs(z2.mean() - 1.0) < 0.02
    assert np.all(np.abs(z2.mean(axis=0) - 1.0) < 0.05)


def test_sample_increments_stack_matches_single(default_spec, short_times):
    stack = sample_increments(default_spec, short_times, 0.1, [3, 4])
    np.testing.assert_array_equal(stack[1], sample_path(default_spec, short_times, 0.1, 4).increments)


def test_coarsen_preserves_brownian_endpoints(default_spec, short_times):
    path = sample_path(default_spec, short_times, 0.1, 9)
    np.testing.assert_allclose(path.coarsen(4).brownian()[-1], path.brownian()[-1], atol=1e-15)


# ---------------------------------------------------------------- increments

def test_increment_drift_only():
    spec = ModeSet.default(count=2, drift=0.5)
    times = TimeGrid(0.1, 10)
    path = sample_path(spec, times, 0.0, 0)
    x = np.array([0.3])
    np.testing.assert_allclose(evaluate_field_increment(spec, path, 3, x), spec.evaluate(0.0, x)[0] * 0.01)


def test_increment_vanishes_outside_u():
    spec = ModeSet.default(count=2, margin=0.2)
    path = sample_path(spec, TimeGrid(0.1, 10), 0.1, 0)
    assert np.all(evaluate_field_increment(spec, path, 0, np.array([0.1])) == 0.0)


def test_increment_hand_arithmetic():
    spec = ModeSet((0.0,), (1.0,), (Mode("zero"), Mode("constant", 2.0, support=((0.1,), (0.9,)), plateau=0.5)))
    times = TimeGrid(1.0, 4)
    path = FieldPath(times, np.array([[0.5], [-1.0], [0.25], [0.0]]), 1.0)
    assert evaluate_field_increment(spec, path, 1, np.array([0.5]))[0] == -2.0
    with pytest.raises(IndexError):
        evaluate_field_increment(spec, path, 4, np.array([0.5]))


def test_realize_is_cumulative_sum(default_spec, short_times):
    path = sample_path(default_spec, short_times, 0.1, 2)
    x = np.array([[0.4], [0.6]])
    X = realize(default_spec, path, x)
    inc = sum(evaluate_field_increment(default_spec, path, m, x) for m in range(short_times.steps))
    np.testing.assert_allclose(X[-1], inc, atol=1e-14)
    assert np.all(X[0] == 0.0)
