"""Rate functionals, their penalised minimisation and Monte Carlo small-noise scans.

The cost of a control ``f`` is ``1/2 int_0^T sum_l f_l(t)^2 dt``.  A rate is
the smallest cost of a control whose skeleton (controlled flow or controlled
Allen-Cahn solution) lands in an event set; it is compared against
``sigma log P(event)`` estimated from samples of the noisy system.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.stats import binomtest

from . import batch, rng
from .errors import ParameterError, SacldpError
from .field import ModeSet, sample_path
from .flow import Control, flow_points, integrate_stratonovich, invert_flow
from .grid import SpaceGrid, TimeGrid
from .pde import InitialData, pull_back, solve_controlled, solve_direct_spde, solve_transformed, zero_crossings
from .transform import build_coefficients

log = logging.getLogger(__name__)

OBSERVABLES = ("probe", "endpoint", "interface", "value", "field_endpoint", "whole")
FLOW_OBSERVABLES = ("probe", "endpoint")
FIELD_OBSERVABLES = ("interface", "value", "field_endpoint")
COMBINE = ("signed", "abs", "norm")


@dataclass(frozen=True)
class EventSpec:
    """Rare event ``{observable >= threshold}`` (direction ``above``) or ``{observable <= threshold}``.

    Observables
    -----------
    probe
        displacement ``phi_T(p) - p`` along ``axis`` of every probe point;
    endpoint
        Euclidean distance of ``phi_T(p)`` to the targets in ``reference``;
    interface
        displacement of the zero crossing of ``u(T)`` nearest to each position
        in ``reference`` (1D);
    value
        ``u(T, p)`` at the probe points;
    field_endpoint
        sup-norm distance of ``u(T)`` to ``target``;
    whole
        always realised.

    Several probes or interfaces are reduced with ``combine``: ``signed``
    (mean), ``abs`` (largest magnitude) or ``norm`` (Euclidean norm).  All
    observables are continuous in the sup norm of the flow or field, the
    interface one as long as crossings stay transversal.
    """

    observable: str
    threshold: float = 0.0
    direction: str = "above"
    probes: tuple = ()
    reference: tuple = ()
    combine: str = "signed"
    axis: int = 0
    target: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.observable not in OBSERVABLES:
            raise ParameterError(f"unknown observable {self.observable!r}")
        if self.direction not in ("above", "below"):
            raise ParameterError("direction must be 'above' or 'below'")
        if self.combine not in COMBINE:
            raise ParameterError(f"combine must be one of {COMBINE}")
        object.__setattr__(self, "probes", tuple(tuple(float(c) for c in np.atleast_1d(p)) for p in self.probes))
        ref = tuple(tuple(float(c) for c in np.atleast_1d(p)) for p in self.reference)
        object.__setattr__(self, "reference", ref)
        if self.observable in ("probe", "endpoint", "value") and not self.probes:
            raise ParameterError(f"observable {self.observable!r} needs probe points")
        if self.observable == "endpoint" and len(self.reference) != len(self.probes):
            raise ParameterError("endpoint events need one target per probe")
        if self.observable == "field_endpoint" and self.target is None:
            raise ParameterError("field_endpoint events need a target field")

    @property
    def level(self):
        if self.observable in FLOW_OBSERVABLES:
            return "flow"
        if self.observable in FIELD_OBSERVABLES:
            return "field"
        return "any"

    def _reduce(self, d):
        if self.combine == "signed":
            return d.mean(axis=-1)
        if self.combine == "abs":
            return np.abs(d).max(axis=-1)
        return np.sqrt(np.sum(d * d, axis=-1))

    def evaluate_flow(self, final):
        """Observable from final probe positions of shape (B, P, n); returns (B,)."""
        final = np.asarray(final, dtype=float)
        probes = np.asarray(self.probes)
        if self.observable == "probe":
            return self._reduce(final[..., self.axis] - probes[:, self.axis])
        if self.observable == "endpoint":
            return np.sqrt(np.sum((final - np.asarray(self.reference)) ** 2, axis=(-1, -2)))
        if self.observable == "whole":
            return np.zeros(final.shape[0])
        raise ParameterError(f"observable {self.observable!r} is not defined on flows")

    def evaluate_field(self, values, space: SpaceGrid):
        """Observable from final lattice values of shape (B, *space.shape); returns (B,)."""
        values = np.asarray(values, dtype=float)
        if self.observable == "whole":
            return np.zeros(values.shape[0])
        if self.observable == "field_endpoint":
            diff = values - np.asarray(self.target)
            return np.abs(diff).reshape(values.shape[0], -1).max(axis=1)
        if self.observable == "value":
            from .interp import LatticeInterpolant

            pts = np.broadcast_to(np.asarray(self.probes), (values.shape[0], len(self.probes), space.dim))
            return self._reduce(LatticeInterpolant(space, values).evaluate(pts))
        if self.observable == "interface":
            if space.dim != 1:
                raise ParameterError("interface events are defined in 1D")
            ref = np.asarray(self.reference)[:, 0]
            if ref.size == 0:
                raise ParameterError("interface events need reference positions")
            x = space.axes[0]
            width = space.upper[0] - space.lower[0]
            disp = np.empty((values.shape[0], ref.size))
            for b in range(values.shape[0]):
                cross = zero_crossings(x, values[b])
                if cross.size == 0:
                    disp[b] = width  # interfaces annihilated: maximal displacement
                    continue
                nearest = cross[np.argmin(np.abs(cross[None, :] - ref[:, None]), axis=1)]
                disp[b] = nearest - ref
            return self._reduce(disp)
        raise ParameterError(f"observable {self.observable!r} is not defined on fields")

    def hit(self, value):
        value = np.asarray(value)
        if self.observable == "whole":
            return np.ones(value.shape, dtype=bool)
        return value >= self.threshold if self.direction == "above" else value <= self.threshold

    def gap(self, value):
        """Distance of the observable value to the event set (0 inside)."""
        if self.observable == "whole":
            return np.zeros_like(np.asarray(value, dtype=float))
        value = np.asarray(value, dtype=float)
        if self.direction == "above":
            return np.maximum(0.0, self.threshold - value)
        return np.maximum(0.0, value - self.threshold)

    def with_reference(self, reference):
        return EventSpec(self.observable, self.threshold, self.direction, self.probes, tuple(reference),
                         self.combine, self.axis, self.target)

    def to_dict(self):
        out = {"observable": self.observable, "threshold": self.threshold, "direction": self.direction,
               "probes": [list(p) for p in self.probes], "reference": [list(p) for p in self.reference],
               "combine": self.combine, "axis": self.axis}
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(d["observable"], float(d.get("threshold", 0.0)), d.get("direction", "above"),
                   tuple(d.get("probes", ())), tuple(d.get("reference", ())), d.get("combine", "signed"),
                   int(d.get("axis", 0)))


@dataclass(frozen=True)
class RateOptions:
    """Penalty continuation and quasi-Newton settings.

    The penalised objective is ``cost + mu * gap^2``; ``mu`` starts at
    ``mu0`` and is multiplied by ``mu_factor`` for each of ``stages`` BFGS
    runs.  Controls are piecewise constant on ``intervals`` equal time
    intervals.  Gradients of the penalty use central differences with step
    ``grad_step``.
    """

    mu0: float = 100.0
    mu_factor: float = 10.0
    stages: int = 3
    maxiter: int = 200
    grad_step: float = 1e-5
    intervals: int = 4
    gtol: float = 1e-7
    init_scale: float = 1e-2
    orientation: int = -1

    def __post_init__(self):
        if self.mu0 <= 0 or self.mu_factor < 1 or self.stages < 1:
            raise ParameterError("need mu0 > 0, mu_factor >= 1 and at least one stage")
        if self.intervals < 1 or self.maxiter < 1 or self.grad_step <= 0:
            raise ParameterError("intervals, maxiter and grad_step must be positive")


@dataclass(frozen=True)
class RateResult:
    """Outcome of a rate minimisation; ``truncation`` records the control basis size."""

    cost: float
    control: Control
    achieved_target_distance: float
    iterations: int
    converged: bool
    truncation: dict
    observable: float = float("nan")
    mu: float = float("nan")
    message: str = ""

    def __post_init__(self):
        if self.cost < 0:
            raise ParameterError("cost must be non-negative")

    def to_dict(self):
        return {
            "cost": self.cost,
            "achieved_target_distance": self.achieved_target_distance,
            "iterations": self.iterations,
            "converged": self.converged,
            "truncation": dict(self.truncation),
            "observable": self.observable,
            "mu": self.mu,
            "message": self.message,
            "control": self.control.coefficients.tolist(),
        }


def control_cost(control: Control) -> float:
    """``1/2 sum_m sum_l f_l(t_m)^2 dt`` (exact for piecewise-constant controls)."""
    return 0.5 * float(np.sum(control.coefficients**2)) * control.times.dt


def _interval_index(M, K):
    if K > M:
        raise ParameterError("more control intervals than time steps")
    edges = np.round(np.linspace(0, M, K + 1)).astype(int)
    return np.repeat(np.arange(K), np.diff(edges)), np.diff(edges)


class _Problem:
    """Penalised objective over interval coefficients ``theta`` of shape (K, L)."""

    def __init__(self, event, L, times, opts, observe):
        self.event = event
        self.L = L
        self.times = times
        self.opts = opts
        self.observe = observe  # (B, M, L) weights f*dt -> observable values (B,)
        self.index, self.counts = _interval_index(times.steps, opts.intervals)
        self.mu = opts.mu0
        self.evaluations = 0

    def expand(self, theta):
        """(B, K, L) interval coefficients -> (B, M, L) step coefficients."""
        return theta[:, self.index, :]

    def cost(self, theta):
        return 0.5 * float(np.sum(self.counts[:, None] * theta**2)) * self.times.dt

    def values(self, thetas):
        self.evaluations += thetas.shape[0]
        return self.observe(self.expand(thetas) * self.times.dt)

    def fun_grad(self, flat):
        theta = flat.reshape(-1, self.L)
        P = flat.size
        h = self.opts.grad_step
        pert = np.concatenate([np.zeros((1, P)), h * np.eye(P), -h * np.eye(P)])
        thetas = (flat[None, :] + pert).reshape(2 * P + 1, -1, self.L)
        gaps = self.event.gap(self.values(thetas))
        pen = self.mu * gaps**2
        f = self.cost(theta) + pen[0]
        g = (self.counts[:, None] * theta).ravel() * self.times.dt + (pen[1:P + 1] - pen[P + 1:]) / (2.0 * h)
        return float(f), g


def _minimize(problem: _Problem, initial=None):
    opts = problem.opts
    K, L = opts.intervals, problem.L
    theta = np.zeros(K * L) if initial is None else np.asarray(initial, dtype=float).ravel()
    if initial is None and problem.event.gap(problem.values(theta.reshape(1, K, L)))[0] > 0.0:
        # start off the origin: norm-type observables have no gradient there
        theta = np.full(K * L, opts.init_scale)
    iterations = 0
    converged = True
    message = ""
    for stage in range(opts.stages):
        problem.mu = opts.mu0 * opts.mu_factor**stage
        res = minimize(problem.fun_grad, theta, jac=True, method="BFGS",
                       options={"maxiter": opts.maxiter, "gtol": opts.gtol})
        theta = res.x
        iterations += int(res.nit)
        message = str(res.message)
        if res.nit >= opts.maxiter:
            converged = False
        log.debug("stage %d mu=%g cost=%g nit=%d %s", stage, problem.mu, res.fun, res.nit, res.message)
    coeffs = problem.expand(theta.reshape(1, K, L))[0]
    control = Control(problem.times, coeffs)
    value = float(problem.values(theta.reshape(1, K, L))[0])
    gap = float(problem.event.gap(value))
    truncation = {"modes": L, "intervals": K, "steps": problem.times.steps}
    return RateResult(control_cost(control), control, gap, iterations, converged, truncation, value,
                      problem.mu, message)


def minimize_rate_flow(event: EventSpec, spec: ModeSet, times: TimeGrid, opts: Optional[RateOptions] = None,
                       initial=None) -> RateResult:
    """Cheapest control whose controlled flow realises a flow-level event.

    The controlled flow is ``x' = orientation * b_f`` with ``orientation = -1``
    by default, the skeleton of the sampled flow ``d phi = -X_sigma(o dt, phi)``.
    """
    opts = opts or RateOptions()
    if event.level == "field":
        raise ParameterError("minimize_rate_flow needs a flow-level event")
    probes = np.asarray(event.probes) if event.probes else np.zeros((1, spec.dim))

    def observe(weights):
        final = flow_points(spec, times, weights, probes, "controlled", float(opts.orientation))
        return event.evaluate_flow(final)

    return _minimize(_Problem(event, spec.L, times, opts, observe), initial)


def minimize_rate_ac(event: EventSpec, spec: ModeSet, u0: InitialData, space: SpaceGrid, times: TimeGrid,
                     opts: Optional[RateOptions] = None, initial=None) -> RateResult:
    """Cheapest control whose controlled Allen-Cahn solution realises a field-level event."""
    opts = opts or RateOptions()
    if event.level == "flow":
        raise ParameterError("minimize_rate_ac needs a field-level event")
    u0_values = u0.sample(space)

    if space.dim == 1:
        def observe(weights):
            return event.evaluate_field(batch.transport_final(spec, space, times, weights, u0_values, 1e-3), space)
    else:
        def observe(weights):
            finals = [solve_controlled(spec, Control(times, w / times.dt), u0, space).final for w in weights]
            return event.evaluate_field(np.stack(finals), space)

    return _minimize(_Problem(event, spec.L, times, opts, observe), initial)


def deterministic_interfaces(spec: ModeSet, u0: InitialData, space: SpaceGrid, times: TimeGrid):
    """Zero crossings of the uncontrolled (``f = 0``) Allen-Cahn solution at the final time."""
    u = solve_controlled(spec, Control.zeros(times, spec.L), u0, space)
    return u.interfaces()


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True)
class ScanRow:
    sigma: float
    samples: int
    hits: int
    failures: int
    p_hat: float
    ci_low: float
    ci_high: float
    sigma_log_p: Optional[float]
    lower_bound_only: bool

    def to_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class ScanTable:
    rows: tuple
    event: dict
    route: str
    seed: int

    def to_dict(self):
        return {"event": self.event, "route": self.route, "seed": self.seed, "rows": [r.to_dict() for r in self.rows]}

    def to_csv(self, path):
        import csv

        cols = list(ScanRow.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow(["" if getattr(r, c) is None else repr(getattr(r, c)) for c in cols])


def _check_ladder(sigmas):
    sigmas = [float(s) for s in sigmas]
    if not sigmas:
        raise ParameterError("empty sigma ladder")
    if any(s <= 0 for s in sigmas):
        raise ParameterError("sigma values must be positive")
    if any(b >= a for a, b in zip(sigmas, sigmas[1:])):
        raise ParameterError("sigma values must be strictly decreasing")
    return sigmas


def _standard_normals(seeds, M, L):
    """Per-sample standard normal increments drawn exactly as :func:`sample_path` draws them."""
    return np.stack([rng.generator(s, "field").standard_normal((M, L)) for s in seeds])


def _single_field(event, spec, space, times, u0, sigma, seed, route):
    path = sample_path(spec, times, sigma, seed)
    if route == "direct":
        u = solve_direct_spde(spec, path, u0, space)
    else:
        flow = integrate_stratonovich(spec, path, space)
        inverse = invert_flow(flow)
        u = pull_back(solve_transformed(build_coefficients(flow, inverse), u0), inverse)
    return event.evaluate_field(u.final[None], space)[0]


def mc_probability_scan(event: EventSpec, spec: ModeSet, sigmas, samples: int, seed: int, times: TimeGrid,
                        space: Optional[SpaceGrid] = None, u0: Optional[InitialData] = None, route="flow",
                        chunk=250) -> ScanTable:
    """Estimate ``P(event)`` and ``sigma log P`` for each noise level.

    Sample ``i`` uses the seed ``derive_seed(seed, "mc", i)`` at every
    ``sigma``, so the ladder shares its Brownian paths.  Field-level events
    are simulated through the flow transformation (``route="flow"``) or the
    direct scheme (``route="direct"``).  Samples whose solve fails are
    counted in ``failures`` and excluded.
    """
    if samples < 100:
        raise ParameterError("need at least 100 samples")
    if route not in ("flow", "direct"):
        raise ParameterError("route must be 'flow' or 'direct'")
    sigmas = _check_ladder(sigmas)
    if event.level == "field" and (space is None or u0 is None):
        raise ParameterError("field-level events need a lattice and initial data")
    seeds = [rng.derive_seed(seed, "mc", i) for i in range(samples)]
    u0_values = u0.sample(space) if u0 is not None else None
    rows = []
    for sigma in sigmas:
        hits = failures = 0
        scale = np.sqrt(sigma * times.dt)
        for start in range(0, samples, chunk):
            block = seeds[start:start + chunk]
            if event.level == "any":
                hits += len(block)
                continue
            W = _standard_normals(block, times.steps, spec.L) * scale
            if event.level == "flow":
                values = event.evaluate_flow(flow_points(spec, times, W, np.asarray(event.probes)))
            elif space.dim == 1:
                values, bad = _field_block(event, spec, times, space, u0_values, W, route)
                for s in np.asarray(block)[bad]:
                    log.warning("sample with seed %d failed at sigma=%g", s, sigma)
                failures += int(np.count_nonzero(bad))
                values = values[~bad]
            else:
                values = []
                for s in block:
                    try:
                        values.append(_single_field(event, spec, space, times, u0, sigma, s, route))
                    except SacldpError as exc:
                        log.warning("sample with seed %d failed at sigma=%g: %s", s, sigma, exc)
                        failures += 1
                values = np.asarray(values)
            hits += int(np.count_nonzero(event.hit(values)))
        n = samples - failures
        rows.append(_row(sigma, n, hits, failures))
    return ScanTable(tuple(rows), event.to_dict(), route, int(seed))


def _field_block(event, spec, times, space, u0_values, W, route):
    """Batched 1D field simulation; returns observable values and the failed-row mask."""
    if route == "flow":
        finals, bad = batch.transformed_final(spec, space, times, W, u0_values, mask_failures=True)
    else:
        finals, bad = batch.transport_final(spec, space, times, W, u0_values, 1e-3, mask_failures=True)
    values = np.full(W.shape[0], np.nan)
    if np.any(~bad):
        values[~bad] = event.evaluate_field(finals[~bad], space)
    return values, bad


def _row(sigma, n, hits, failures):
    if n <= 0:
        return ScanRow(sigma, 0, 0, failures, float("nan"), 0.0, 1.0, None, True)
    ci = binomtest(hits, n).proportion_ci(confidence_level=0.95, method="wilson")
    p = hits / n
    if hits == 0:
        return ScanRow(sigma, n, 0, failures, 0.0, float(ci.low), float(ci.high), None, True)
    return ScanRow(sigma, n, hits, failures, p, float(ci.low), float(ci.high), sigma * float(np.log(p)), False)


def ldp_report(scan: Optional[ScanTable], rate: Optional[RateResult], min_hits=30) -> dict:
    """Juxtapose ``sigma log P`` against ``-cost`` with a linear-in-sigma extrapolation.

    The intercept of the least-squares line through the rows with hits
    estimates the ``sigma -> 0`` limit.  The row at the smallest sigma with at
    least ``min_hits`` hits is compared with ``-cost`` directly.
    """
    out = {"rate": None if rate is None else rate.to_dict(), "rows": [], "extrapolation": None,
           "comparison": None}
    if rate is not None:
        out["converged"] = rate.converged
        out["reference"] = -rate.cost
    if scan is None or not scan.rows:
        return out
    out["rows"] = [r.to_dict() for r in scan.rows]
    usable = [r for r in scan.rows if r.sigma_log_p is not None]
    if len(usable) >= 2:
        s = np.array([r.sigma for r in usable])
        y = np.array([r.sigma_log_p for r in usable])
        slope, intercept = np.polyfit(s, y, 1)
        out["extrapolation"] = {"slope": float(slope), "intercept": float(intercept), "points": len(usable)}
    if rate is not None:
        comp = {}
        if out["extrapolation"] is not None and rate.cost > 0:
            comp["intercept_relative_error"] = abs(out["extrapolation"]["intercept"] + rate.cost) / rate.cost
        rich = [r for r in scan.rows if r.hits >= min_hits and r.sigma_log_p is not None]
        if rich:
            r = min(rich, key=lambda row: row.sigma)
            comp["sigma"] = r.sigma
            comp["sigma_log_p"] = r.sigma_log_p
            if rate.cost > 0:
                comp["relative_error"] = abs(r.sigma_log_p + rate.cost) / rate.cost
        out["comparison"] = comp
    return out


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2)
