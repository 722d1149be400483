import json

import numpy as np
import pytest

from sacldp.errors import ParameterError
from sacldp.field import ModeSet, sample_path
from sacldp.flow import Control, flow_from_positions, identity_flow, integrate_controlled, integrate_stratonovich, \
    invert_flow
from sacldp.grid import TimeGrid
from sacldp.transform import CoefficientField, build_coefficients, coefficient_holder_report

from conftest import plateau_constant


def quadratic_flow(space, times, a=0.3):
    """phi_t(x) = x + a (t / T) x (1 - x): a smooth diffeomorphism of [0, 1] fixing both ends."""
    x = space.nodes[None, :, 0]
    s = (times.times / times.T)[:, None]
    return flow_from_positions(space, times, (x + a * s * x * (1.0 - x))[..., None])


def test_identity_flow_gives_unit_coefficients(space, short_times):
    flow = identity_flow(space, short_times)
    coeffs = build_coefficients(flow, invert_flow(flow))
    assert np.all(coeffs.R == 1.0)
    assert np.all(coeffs.S == 0.0)
    assert coeffs.ellipticity == 1.0
    assert coeffs.chain_rule_gap == 0.0


def test_translation_keeps_unit_coefficients(space):
    spec = plateau_constant(0.5)
    times = TimeGrid(0.1, 100)
    flow = integrate_controlled(spec, Control.constant(times, [1.0]), space)
    coeffs = build_coefficients(flow, invert_flow(flow))
    x = space.nodes[:, 0]
    inside = (x > 0.4) & (x < 0.6)
    np.testing.assert_allclose(coeffs.R[:, inside, 0, 0], 1.0, atol=1e-10)
    np.testing.assert_allclose(coeffs.S[:, inside, 0], 0.0, atol=1e-8)


def test_quadratic_map_against_closed_form(space):
    """R = 1 / phi'(x)^2 and S = psi''(phi(x)) = -phi''(x) / phi'(x)^3."""
    times = TimeGrid(0.1, 4)
    a = 0.3
    flow = quadratic_flow(space, times, a)
    coeffs = build_coefficients(flow, invert_flow(flow))
    x = space.nodes[:, 0]
    inner = (x > 0.05) & (x < 0.95)
    s = a * times.times[-1] / times.T
    dphi = 1.0 + s * (1.0 - 2.0 * x)
    np.testing.assert_allclose(coeffs.R[-1, inner, 0, 0], 1.0 / dphi[inner] ** 2, rtol=1e-6)
    np.testing.assert_allclose(coeffs.S[-1, inner, 0], 2.0 * s / dphi[inner] ** 3, rtol=1e-4)
    # the steepest point x = 0 sits on the fixed boundary ring, so the minimum is at the first interior node
    assert coeffs.ellipticity == pytest.approx(1.0 / dphi[1] ** 2, rel=1e-6)


def test_coefficients_symmetric_and_boundary_identity():
    from sacldp.grid import SpaceGrid
    space = SpaceGrid((0.0, 0.0), (1.0, 1.0), (24, 24))
    spec = ModeSet.default(dim=2, count=4, amplitude=0.5, margin=0.1)
    times = TimeGrid(0.05, 100)
    flow = integrate_stratonovich(spec, sample_path(spec, times, 0.2, 3), space)
    coeffs = build_coefficients(flow, invert_flow(flow))
    assert np.array_equal(coeffs.R, np.swapaxes(coeffs.R, -1, -2))
    ring = spec.ring_mask(space)
    assert np.all(coeffs.R[:, ring] == np.eye(2))
    assert np.all(coeffs.S[:, ring] == 0.0)
    assert coeffs.ellipticity > 0.0


def test_chain_rule_gap_small_on_sampled_flow(space, default_spec):
    times = TimeGrid(0.1, 1000)
    flow = integrate_stratonovich(default_spec, sample_path(default_spec, times, 0.1, 2), space)
    coeffs = build_coefficients(flow, invert_flow(flow))
    assert coeffs.chain_rule_gap <= 1e-4
    report = json.loads(coeffs.report_json())
    assert report["time_slices"] == times.steps + 1


def test_build_rejects_swapped_arguments(space, short_times):
    flow = identity_flow(space, short_times)
    with pytest.raises(ParameterError):
        build_coefficients(invert_flow(flow), flow)


def test_holder_report_vanishes_for_constant_coefficients(space, short_times):
    rep = coefficient_holder_report(CoefficientField.identity(space, short_times), 0.4)
    assert rep["R_time"] == 0.0 and rep["S_space"] == 0.0
    assert rep["space_exponent"] == pytest.approx(0.8)
    with pytest.raises(ParameterError):
        coefficient_holder_report(CoefficientField.identity(space, short_times), 1.0)


def test_holder_report_positive_for_moving_map(space):
    times = TimeGrid(0.1, 4)
    flow = quadratic_flow(space, times)
    rep = coefficient_holder_report(build_coefficients(flow, invert_flow(flow)), 0.4)
    assert rep["R_time"] > 0.0 and rep["R_space"] > 0.0


def test_slice_csv(tmp_path, space, short_times):
    CoefficientField.identity(space, short_times).to_csv(tmp_path / "c.csv", 0)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "node,x0,R00,S0"
    assert len(lines) == space.size + 1
