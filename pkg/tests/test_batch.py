import numpy as np
import pytest

from sacldp.batch import flow_final, thomas, transformed_final, transport_final
from sacldp.errors import ParameterError, StabilityError, StepSizeError
from sacldp.field import FieldPath, ModeSet, sample_increments, sample_path
from sacldp.flow import Control, integrate_stratonovich, invert_flow
from sacldp.grid import SpaceGrid, TimeGrid
from sacldp.pde import InitialData, pull_back, solve_controlled, solve_direct_spde, solve_transformed
from sacldp.transform import build_coefficients

COS = InitialData.cosine()
TIMES = TimeGrid(0.02, 200)


def test_thomas_against_dense_solve(rng):
    n = 12
    lo, up = rng.uniform(-1, 0, (2, n))
    di = 3.0 + rng.uniform(0, 1, n)
    rhs = rng.standard_normal((2, n))
    A = np.diag(di) + np.diag(lo[1:], -1) + np.diag(up[:-1], 1)
    out = thomas(lo[None], di[None], up[None], rhs)
    np.testing.assert_allclose(out, np.linalg.solve(A, rhs.T).T, atol=1e-12)


def test_transport_batch_matches_single_solves(space, default_spec):
    seeds = [1, 2, 3]
    weights = sample_increments(default_spec, TIMES, 0.1, seeds)
    u = transport_final(default_spec, space, TIMES, weights, COS.sample(space))
    for b, s in enumerate(seeds):
        ref = solve_direct_spde(default_spec, sample_path(default_spec, TIMES, 0.1, s), COS, space).final
        np.testing.assert_allclose(u[b], ref, atol=1e-12)


def test_transport_batch_matches_controlled_solve(space, default_spec):
    control = Control(TIMES, np.tile(np.linspace(-1.0, 1.0, default_spec.L), (TIMES.steps, 1)))
    u = transport_final(default_spec, space, TIMES, (control.coefficients * TIMES.dt)[None], COS.sample(space))
    np.testing.assert_allclose(u[0], solve_controlled(default_spec, control, COS, space).final, atol=1e-12)


def test_transformed_batch_matches_single_pipeline(space, default_spec):
    seeds = [4, 5]
    weights = sample_increments(default_spec, TIMES, 0.1, seeds)
    u = transformed_final(default_spec, space, TIMES, weights, COS.sample(space))
    for b, s in enumerate(seeds):
        flow = integrate_stratonovich(default_spec, sample_path(default_spec, TIMES, 0.1, s), space)
        inv = invert_flow(flow)
        ref = pull_back(solve_transformed(build_coefficients(flow, inv), COS), inv).final
        np.testing.assert_allclose(u[b], ref, atol=1e-8)


def test_flow_final_matches_lattice_flow(space, default_spec):
    weights = sample_increments(default_spec, TIMES, 0.1, [6])
    pts = space.nodes[10:20]
    ref = integrate_stratonovich(default_spec, sample_path(default_spec, TIMES, 0.1, 6), space).final[10:20]
    np.testing.assert_allclose(flow_final(default_spec, TIMES, weights, pts)[0], ref, atol=1e-15)


def test_mask_failures_isolates_bad_rows(space):
    spec = ModeSet.default(count=1, amplitude=40.0)
    times = TimeGrid(0.02, 2)
    good = sample_increments(spec, times, 1e-4, [1])[0]
    weights = np.stack([good, np.ones_like(good), good])
    with pytest.raises(StepSizeError):
        transformed_final(spec, space, times, weights, COS.sample(space))
    u, failed = transformed_final(spec, space, times, weights, COS.sample(space), mask_failures=True)
    assert failed.tolist() == [False, True, False]
    assert np.all(np.isnan(u[1]))
    np.testing.assert_allclose(u[0], transformed_final(spec, space, times, good[None], COS.sample(space))[0],
                               atol=1e-14)


def test_transport_mask_failures(space):
    spec = ModeSet.default(count=1, amplitude=5.0)
    times = TimeGrid(0.02, 2)
    weights = np.array([[[0.0], [0.0]], [[1.0], [1.0]]])
    with pytest.raises(StabilityError):
        transport_final(spec, space, times, weights, COS.sample(space))
    u, failed = transport_final(spec, space, times, weights, COS.sample(space), mask_failures=True)
    assert failed.tolist() == [False, True]
    assert np.all(np.isfinite(u[0])) and np.all(np.isnan(u[1]))


def test_batch_rejects_bad_shapes(space, default_spec):
    with pytest.raises(ParameterError):
        transport_final(default_spec, space, TIMES, np.zeros((1, 5, default_spec.L)), COS.sample(space))
    square = SpaceGrid((0.0, 0.0), (1.0, 1.0), (8, 8))
    with pytest.raises(ParameterError):
        transport_final(ModeSet.default(dim=2), square, TIMES, np.zeros((1, 200, 8)), np.zeros(81))
