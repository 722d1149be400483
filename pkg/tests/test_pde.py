import numpy as np
import pytest

from sacldp.errors import ParameterError, StabilityError
from sacldp.field import FieldPath, ModeSet, sample_path
from sacldp.flow import Control, identity_flow, integrate_stratonovich, invert_flow
from sacldp.grid import SpaceGrid, TimeGrid
from sacldp.pde import (InitialData, PhaseField, action_functional, deterministic_ac, pull_back, solve_controlled,
                        solve_direct_spde, solve_transformed, zero_crossings)
from sacldp.transform import CoefficientField, build_coefficients

COS = InitialData.cosine()


# ---------------------------------------------------------------- initial data

def test_initial_data_requires_one_source():
    with pytest.raises(ParameterError):
        InitialData()
    with pytest.raises(ParameterError):
        InitialData(expr=lambda x: x[..., 0], values=np.zeros(3))


def test_cosine_is_neumann_compatible(space):
    assert COS.neumann_defect(space) < 1e-4
    assert InitialData.tanh_front().neumann_defect(space) > 0.1
    assert COS.sup_norm(space) == 1.0


def test_lattice_initial_data_shape_checked(space):
    with pytest.raises(ParameterError):
        InitialData.from_values(np.zeros(5)).sample(space)


def test_zero_crossings_linear_interpolation():
    x = np.linspace(0.0, 1.0, 5)
    np.testing.assert_allclose(zero_crossings(x, np.array([1.0, 0.5, -0.5, -1.0, 0.0])), [0.375, 1.0])


# ---------------------------------------------------------------- deterministic equation

@pytest.mark.parametrize("value", [1.0, 0.0, -1.0])
def test_equilibria_stay_put(space, short_times, value):
    u = deterministic_ac(space, short_times, InitialData.constant(value))
    np.testing.assert_allclose(u.values, value, rtol=0, atol=1e-12)


def test_symmetric_tanh_front_does_not_move(space):
    times = TimeGrid(0.5, 500)
    u = deterministic_ac(space, times, InitialData.tanh_front())
    assert abs(u.interfaces()[0] - 0.5) < space.spacing[0]


def test_cosine_interfaces_relax_towards_quarter_points(space):
    times = TimeGrid(0.2, 2000)
    u = deterministic_ac(space, times, COS)
    front = u.interfaces()
    np.testing.assert_allclose(front, [0.5], atol=1e-10)
    assert u.sup_norm() <= 1.0 + 1e-3


def test_comparison_principle(space, short_times):
    lo = deterministic_ac(space, short_times, InitialData.cosine(0.5))
    hi = deterministic_ac(space, short_times, InitialData.cosine(0.5, offset=0.2))
    assert np.all(lo.values <= hi.values + 1e-14)


def test_maximum_principle_guard(space):
    times = TimeGrid(0.1, 10)
    big = CoefficientField(space, times, np.full((11,) + space.shape + (1, 1), 1.0),
                           np.full((11,) + space.shape + (1,), 50.0), 1.0)
    with pytest.raises(StabilityError):
        solve_transformed(big, COS)


def test_advection_scheme_validated(space, short_times):
    with pytest.raises(ParameterError):
        solve_transformed(CoefficientField.identity(space, short_times), COS, advection="weno")


# ---------------------------------------------------------------- routes agree when there is no noise

def test_zero_control_matches_deterministic(space, short_times, default_spec):
    a = solve_controlled(default_spec, Control.zeros(short_times, default_spec.L), COS, space)
    b = deterministic_ac(space, short_times, COS)
    assert np.max(np.abs(a.values - b.values)) <= 1e-10


def test_direct_spde_without_noise_matches_deterministic(space, short_times, default_spec):
    a = solve_direct_spde(default_spec, sample_path(default_spec, short_times, 0.0, 0), COS, space)
    b = deterministic_ac(space, short_times, COS)
    assert np.max(np.abs(a.values - b.values)) <= 1e-10


def test_constant_state_one_is_invariant_under_noise(space, short_times, default_spec):
    u = solve_direct_spde(default_spec, sample_path(default_spec, short_times, 0.2, 4), InitialData.constant(1.0), space)
    np.testing.assert_allclose(u.values, 1.0, atol=1e-12)


def test_direct_spde_rejects_large_increments(space):
    spec = ModeSet.default(count=1, amplitude=5.0)
    times = TimeGrid(0.1, 2)
    with pytest.raises(StabilityError):
        solve_direct_spde(spec, FieldPath(times, np.array([[1.0], [1.0]]), 1.0), COS, space)


# ---------------------------------------------------------------- pull-back and the two routes

def test_pull_back_identity(space, short_times):
    w = deterministic_ac(space, short_times, COS)
    u = pull_back(w, identity_flow(space, short_times))
    np.testing.assert_array_equal(u.values, w.values)


def test_pull_back_rejects_mismatched_grids(space, short_times):
    w = deterministic_ac(space, short_times, COS)
    with pytest.raises(ParameterError):
        pull_back(w, identity_flow(space, TimeGrid(0.02, 100)))


def test_transformed_route_matches_direct_route(space, default_spec):
    times = TimeGrid(0.05, 500)
    path = sample_path(default_spec, times, 0.1, 3)
    flow = integrate_stratonovich(default_spec, path, space)
    inv = invert_flow(flow)
    w = solve_transformed(build_coefficients(flow, inv), COS)
    u_flow = pull_back(w, inv)
    u_direct = solve_direct_spde(default_spec, path, COS, space)
    assert np.max(np.abs(u_flow.values - u_direct.values)) <= 5e-3


def test_noise_effect_shrinks_with_sigma(space, default_spec):
    """Mean distance to the deterministic solution decreases as sigma goes to zero."""
    times = TimeGrid(0.05, 500)
    ref = deterministic_ac(space, times, COS).final
    dist = []
    for sigma in (0.4, 0.2, 0.1):
        d = [np.max(np.abs(solve_direct_spde(default_spec, sample_path(default_spec, times, sigma, s), COS,
                                             space).final - ref)) for s in range(5)]
        dist.append(np.mean(d))
    # the field carries a factor sqrt(sigma), so halving sigma shrinks the effect by about sqrt 2
    assert dist[0] > dist[1] > dist[2]
    np.testing.assert_allclose(dist[1] / dist[2], np.sqrt(2.0), rtol=0.25)


# ---------------------------------------------------------------- action functional

def test_action_vanishes_on_equilibria(space, short_times):
    for value in (1.0, 0.0, -1.0):
        assert action_functional(deterministic_ac(space, short_times, InitialData.constant(value))) < 1e-20


def test_action_of_gradient_flow_is_twice_kinetic_energy(space):
    """Along u_t = Lap u - W'(u) the two integrands coincide."""
    times = TimeGrid(0.1, 1000)
    u = deterministic_ac(space, times, COS)
    ut = np.diff(u.values, axis=0) / times.dt
    kinetic = np.sum(np.trapezoid(ut**2, space.axes[0], axis=1)) * times.dt
    np.testing.assert_allclose(action_functional(u), 2.0 * kinetic, rtol=2e-2)


def test_action_hand_computed_linear_in_time():
    """u(t, x) = t on [0, 1] x [0, 1]: integrand 1 + (t^3 - t)^2, integral 1 + 8/105."""
    space = SpaceGrid((0.0,), (1.0,), 16)
    times = TimeGrid(1.0, 2000)
    vals = np.broadcast_to(times.times[:, None], (2001, 17))
    u = PhaseField(space, times, vals, "test")
    np.testing.assert_allclose(action_functional(u), 1.0 + 8.0 / 105.0, rtol=1e-5)
    with pytest.raises(ParameterError):
        action_functional(u, eps=0.0)


# ---------------------------------------------------------------- io

def test_phase_field_round_trip(tmp_path, space, short_times):
    u = deterministic_ac(space, short_times, COS)
    u.save(tmp_path / "u.npz")
    back = PhaseField.load(tmp_path / "u.npz")
    np.testing.assert_array_equal(back.values, u.values)
    u.to_csv(tmp_path / "u.csv", stride=100)
    assert len((tmp_path / "u.csv").read_text().splitlines()) == 1 + 3 * space.size
