"""Invariant suite run by ``sacldp verify``.

Each check draws a handful of paths from the configured mode set and tests
one structural property of the pipeline.  The suite is a smoke test for a
configuration; the full-size checks live in the test suite.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import SacldpError
from .field import sample_path
from .flow import Control, integrate_stratonovich, invert_flow
from .ldp import control_cost
from .pde import pull_back, solve_direct_spde, solve_transformed
from .transform import build_coefficients

log = logging.getLogger(__name__)

CHAIN_RULE_TOL = 1e-4
MAX_PRINCIPLE_TOL = 1e-3
ROUTE_TOL = 5e-2
DETERMINISTIC_ROUTE_TOL = 1e-10


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float
    bound: float
    detail: str = ""

    def to_dict(self):
        return dict(self.__dict__)


def _pipeline(spec, space, u0, path):
    flow = integrate_stratonovich(spec, path, space)
    inverse = invert_flow(flow)
    coeffs = build_coefficients(flow, inverse)
    w = solve_transformed(coeffs, u0)
    return flow, inverse, coeffs, w, pull_back(w, inverse)


def run_checks(cfg, paths=3):
    """Run the invariant suite for an :class:`~sacldp.config.ExperimentConfig`."""
    spec = cfg.make_modes()
    space = cfg.make_space()
    times = cfg.make_times()
    u0 = cfg.make_initial()
    sigma = cfg.noise.sigma
    ring = spec.ring_mask(space)
    checks = []

    ring_dev = gap = wmax = route = 0.0
    det_min = ell_min = np.inf
    bound = max(1.0, u0.sup_norm(space))
    try:
        for i in range(paths):
            path = sample_path(spec, times, sigma, rng.derive_seed(cfg.seed, "verify", i))
            flow, inverse, coeffs, w, u = _pipeline(spec, space, u0, path)
            ring_dev = max(ring_dev, float(np.max(np.abs(flow.positions[:, ring] - space.nodes[ring]), initial=0.0)))
            det_min = min(det_min, float(flow.determinants().min()))
            ell_min = min(ell_min, coeffs.ellipticity)
            gap = max(gap, coeffs.chain_rule_gap)
            wmax = max(wmax, w.sup_norm())
            direct = solve_direct_spde(spec, path, u0, space)
            route = max(route, float(np.max(np.abs(direct.final - u.final))))
    except SacldpError as exc:
        return [Check("pipeline", False, float("nan"), float("nan"), f"{type(exc).__name__}: {exc}")]

    checks.append(Check("boundary_ring_identity", ring_dev == 0.0, ring_dev, 0.0))
    checks.append(Check("jacobian_positive", det_min > 0.0, det_min, 0.0))
    checks.append(Check("ellipticity_positive", ell_min > 0.0, ell_min, 0.0))
    checks.append(Check("chain_rule_gap", gap <= CHAIN_RULE_TOL, gap, CHAIN_RULE_TOL))
    checks.append(Check("maximum_principle", wmax <= bound + MAX_PRINCIPLE_TOL, wmax, bound + MAX_PRINCIPLE_TOL))
    checks.append(Check("route_difference", route <= ROUTE_TOL, route, ROUTE_TOL))

    zero = sample_path(spec, times, 0.0, cfg.seed)
    _, _, _, _, u0_flow = _pipeline(spec, space, u0, zero)
    diff = float(np.max(np.abs(solve_direct_spde(spec, zero, u0, space).final - u0_flow.final)))
    checks.append(Check("deterministic_routes_agree", diff <= DETERMINISTIC_ROUTE_TOL, diff, DETERMINISTIC_ROUTE_TOL))

    a = sample_path(spec, times, sigma, cfg.seed).increments
    b = sample_path(spec, times, sigma, cfg.seed).increments
    checks.append(Check("seeded_paths_reproducible", bool(np.array_equal(a, b)), 0.0, 0.0))

    cost = control_cost(Control.zeros(times, spec.L))
    checks.append(Check("zero_control_cost", cost == 0.0, cost, 0.0))
    for c in checks:
        log.info("%s: %s (%g vs %g)", c.name, "pass" if c.passed else "FAIL", c.value, c.bound)
    return checks
