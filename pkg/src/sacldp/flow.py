"""Stochastic and controlled flows of the vector field, their Jacobians and inverses.

The stochastic flows solve ``d phi = -X_sigma(o dt, phi)`` (Stratonovich,
stochastic Heun) or ``d phi = -X_sigma(dt, phi)`` (Ito, Euler-Maruyama) at every
lattice node.  The controlled flow solves ``x' = orientation * b_f(t, x)`` with
``b_f = sum_l f_l X^(l) + X^(0)`` by Heun's method (RK2).
"""

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InversionError, ParameterError, StepSizeError
from .field import FieldPath, ModeSet
from .grid import SpaceGrid, TimeGrid
from .interp import LatticeInterpolant, StackedSpline1D, lattice_derivatives

SCHEMES = ("stratonovich", "ito", "controlled")


@dataclass(frozen=True)
class Control:
    """Piecewise-constant control ``f_l(t)`` on the steps of ``times``; shape (M, L)."""

    times: TimeGrid
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float)
        if c.ndim != 2 or c.shape[0] != self.times.steps:
            raise ParameterError("control coefficients must have shape (steps, L)")
        if not np.all(np.isfinite(c)):
            raise ParameterError("control coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def zeros(cls, times, L):
        return cls(times, np.zeros((times.steps, L)))

    @classmethod
    def constant(cls, times, values):
        values = np.atleast_1d(np.asarray(values, dtype=float))
        return cls(times, np.tile(values, (times.steps, 1)))

    @property
    def L(self):
        return self.coefficients.shape[1]

    @property
    def cost(self):
        return 0.5 * float(np.sum(self.coefficients**2)) * self.times.dt


@dataclass(frozen=True)
class FlowPath:
    """Discrete flow on a lattice: ``positions[k] = phi_{s, t_{start+k}}(x_j)``.

    ``jacobians[..., i, k]`` holds ``d_k phi^i`` from finite differences.  For
    an inverse flow (``inverse=True``) positions are ``phi^{-1}`` and
    ``residual`` is the worst Newton residual ``|phi(phi^{-1}(x_j)) - x_j|``.
    """

    space: SpaceGrid
    times: TimeGrid
    positions: np.ndarray
    jacobians: np.ndarray
    kind: str
    start: int = 0
    inverse: bool = False
    residual: Optional[float] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("positions", "jacobians"):
            a = np.asarray(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def stop(self):
        return self.start + self.positions.shape[0] - 1

    @property
    def slice_times(self):
        return self.times.times[self.start:self.stop + 1]

    @property
    def final(self):
        return self.positions[-1]

    def determinants(self):
        return jacobian_determinant(self.jacobians)

    def to_csv(self, path):
        n = self.space.dim
        det = self.determinants().reshape(self.positions.shape[0], -1)
        pos = self.positions.reshape(self.positions.shape[0], -1, n)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "node"] + [f"x{i}" for i in range(n)] + ["det_jacobian"])
            for k, t in enumerate(self.slice_times):
                for j in range(pos.shape[1]):
                    w.writerow([repr(float(t)), j] + [repr(float(v)) for v in pos[k, j]] + [repr(float(det[k, j]))])

    def save(self, path):
        """Binary snapshot (``.npz``) that :meth:`load` restores exactly."""
        np.savez(
            path,
            lower=self.space.lower, upper=self.space.upper, cells=self.space.cells,
            T=self.times.T, steps=self.times.steps, positions=self.positions,
            jacobians=self.jacobians, kind=self.kind, start=self.start, inverse=self.inverse,
            residual=np.nan if self.residual is None else self.residual,
        )

    @classmethod
    def load(cls, path):
        d = np.load(path, allow_pickle=False)
        residual = float(d["residual"])
        return cls(
            SpaceGrid(tuple(d["lower"]), tuple(d["upper"]), tuple(int(c) for c in d["cells"])),
            TimeGrid(float(d["T"]), int(d["steps"])), d["positions"], d["jacobians"], str(d["kind"]),
            int(d["start"]), bool(d["inverse"]), None if np.isnan(residual) else residual,
        )


def jacobian_determinant(jac):
    if jac.shape[-1] == 1:
        return jac[..., 0, 0]
    return jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]


def _velocity(spec, t, x, weights, drift_dt):
    return spec.combine(t, x, weights, drift_dt)


def _clip(spec, x):
    return np.clip(x, spec.lower, spec.upper)


def _march(spec, times, weights, x0, scheme, sign, start, stop, ring=None, keep=True, extra_drift=0.0):
    """Advance points ``x0`` (..., n) from node ``start`` to ``stop``.

    ``weights[m]`` multiplies the noise modes on step m (broadcast against the
    point axes); the drift mode is multiplied by ``dt``.  The update is
    ``x + sign * increment``.  ``extra_drift`` adds ``extra_drift * c(t, x) dt``
    to the increment, with ``c`` the unit Stratonovich correction.
    """
    dt = times.dt
    t = times.times
    x = np.array(x0, dtype=float)
    fixed = x[ring].copy() if ring is not None else None
    out = [x.copy()] if keep else None
    for m in range(start, stop):
        w = weights[m]
        v0 = _velocity(spec, t[m], x, w, dt)
        if scheme == "ito":
            dx = v0
        else:
            xp = _clip(spec, x + sign * v0)
            dx = 0.5 * (v0 + _velocity(spec, t[m + 1], xp, w, dt))
        if extra_drift:
            dx = dx + extra_drift * stratonovich_correction(spec, t[m], x) * dt
        x = _clip(spec, x + sign * dx)
        if ring is not None:
            x[ring] = fixed
        if keep:
            out.append(x.copy())
    return np.stack(out) if keep else x


def _check_range(times, start, stop):
    stop = times.steps if stop is None else stop
    if not 0 <= start <= stop <= times.steps:
        raise ParameterError(f"invalid node range [{start}, {stop}]")
    return stop


def _finish(space, times, positions, kind, start, meta=None):
    jac = lattice_derivatives(positions, space, axis_offset=1)
    det = jacobian_determinant(jac)
    if np.any(det <= 0.0):
        k = int(np.argwhere(det <= 0.0)[0][0])
        raise StepSizeError(
            f"Jacobian determinant {float(det.min()):.3e} <= 0 at t={times.times[start + k]:.6g}; "
            "the discrete flow is not a diffeomorphism, reduce the time step"
        )
    return FlowPath(space, times, positions, jac, kind, start, meta=meta or {})


def integrate_stratonovich(spec: ModeSet, path: FieldPath, space: SpaceGrid, start=0, stop=None):
    """Stochastic Heun integration of ``d phi = -X_sigma(o dt, phi)`` on the lattice."""
    stop = _check_range(path.times, start, stop)
    ring = spec.ring_mask(space)
    pos = _march(spec, path.times, path.increments, space.nodes, "stratonovich", -1.0, start, stop, ring)
    return _finish(space, path.times, pos, "stratonovich", start)


def integrate_ito(spec: ModeSet, path: FieldPath, space: SpaceGrid, start=0, stop=None, corrected=False):
    """Euler-Maruyama integration of ``d phi = -X_sigma(dt, phi)``.

    With ``corrected=True`` the drift ``(sigma/2) sum_i (DX^(i)) X^(i)`` that
    turns the Ito flow into the Stratonovich one is added; this gives an
    independent route to the Stratonovich flow.
    """
    stop = _check_range(path.times, start, stop)
    ring = spec.ring_mask(space)
    # the update is x - dx, so the Stratonovich drift +(sigma/2)(DX)X = -sigma*c enters as +sigma*c in dx
    extra = path.sigma if corrected else 0.0
    pos = _march(spec, path.times, path.increments, space.nodes, "ito", -1.0, start, stop, ring, extra_drift=extra)
    return _finish(space, path.times, pos, "ito", start)


def integrate_controlled(spec: ModeSet, control: Control, space: SpaceGrid, orientation=1, start=0, stop=None):
    """RK2 integration of ``x' = orientation * b_f(t, x)``.

    ``orientation=1`` is ``phi(x) = x + int b_f``; ``orientation=-1`` is the
    skeleton of the transport flow ``d phi = -X_sigma(o dt, phi)``.
    """
    if orientation not in (1, -1):
        raise ParameterError("orientation must be +1 or -1")
    if control.L != spec.L:
        raise ParameterError(f"control has {control.L} modes, mode set has {spec.L}")
    stop = _check_range(control.times, start, stop)
    ring = spec.ring_mask(space)
    weights = control.coefficients * control.times.dt
    pos = _march(spec, control.times, weights, space.nodes, "controlled", float(orientation), start, stop, ring)
    return _finish(space, control.times, pos, "controlled", start, {"orientation": orientation})


def flow_points(spec: ModeSet, times: TimeGrid, weights, points, scheme="stratonovich", sign=-1.0, keep_path=False):
    """Integrate arbitrary points for a batch of noise realisations.

    ``weights`` has shape (B, M, L) and ``points`` shape (P, n) or (B, P, n);
    returns final positions (B, P, n), or the full path (M+1, B, P, n).
    """
    weights = np.asarray(weights, dtype=float)
    B = weights.shape[0]
    points = np.asarray(points, dtype=float)
    if points.ndim == 2:
        points = np.broadcast_to(points, (B,) + points.shape)
    w = np.moveaxis(weights, 1, 0)[:, :, None, :]  # (M, B, 1, L)
    return _march(spec, times, w, points, scheme, sign, 0, times.steps, keep=keep_path)


def stratonovich_correction(spec: ModeSet, t, x):
    """Unit-sigma correction ``-1/2 sum_i (DX^(i)(t, x)) X^(i)(t, x)``.

    The Stratonovich flow of ``-X_sigma`` carries the Ito drift
    ``-sigma * stratonovich_correction`` on top of the Euler-Maruyama terms.
    """
    vals, jac = spec.evaluate(t, x, jacobian=True)
    return -0.5 * np.einsum("...lik,...lk->...i", jac[..., 1:, :, :], vals[..., 1:, :])


def _newton_1d(spline, k, nodes_phi, x, target, y0, tol, maxiter):
    """Newton's method safeguarded by the bracketing lattice cell.

    ``nodes_phi`` holds the (strictly increasing) slice values at the lattice
    nodes ``x``; a Newton step that leaves the bracket is replaced by bisection.
    """
    j = np.clip(np.searchsorted(nodes_phi, target, side="right") - 1, 0, len(x) - 2)
    lo, hi = x[j].copy(), x[j + 1].copy()
    y = np.clip(y0, lo, hi)
    res = np.inf
    for it in range(maxiter + 1):
        f = spline.row(k, y) - target
        res = float(np.max(np.abs(f)))
        if res <= tol or it == maxiter:
            break
        below = f < 0.0
        lo = np.where(below, y, lo)
        hi = np.where(below, hi, y)
        d = spline.row(k, y, nu=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = y - f / d
        bad = ~np.isfinite(step) | (step < lo) | (step > hi)
        y = np.where(bad, 0.5 * (lo + hi), step)
    return y, res, it


def invert_flow(flow: FlowPath, tol=1e-12, maxiter=50):
    """Invert every time slice by Newton's method on the cubic interpolant of phi.

    Each slice is seeded with the inverse of the previous slice.  Lattice nodes
    on the boundary ring keep the identity exactly.
    """
    space = flow.space
    nodes = space.nodes
    lower, upper = np.asarray(space.lower), np.asarray(space.upper)
    ring = np.all(flow.positions == nodes[None], axis=(0, -1))
    inv = np.empty_like(flow.positions)
    worst = 0.0
    iters = 0
    if space.dim == 1:
        x = space.axes[0]
        spline = StackedSpline1D(x, flow.positions[..., 0])
        y = x.copy()
        for k in range(flow.positions.shape[0]):
            y, res, it = _newton_1d(spline, k, flow.positions[k, :, 0], x, x, y, tol, maxiter)
            if res > 1e-10:
                raise InversionError(f"Newton did not converge in {maxiter} iterations (residual {res:.3e})", res)
            y[ring] = x[ring]
            inv[k, :, 0] = y
            worst = max(worst, res)
            iters = max(iters, it)
    else:
        y = nodes.copy()
        for k in range(flow.positions.shape[0]):
            interp = LatticeInterpolant(space, np.moveaxis(flow.positions[k], -1, 0))
            for it in range(maxiter + 1):
                pts = np.broadcast_to(y, (2,) + y.shape)
                f = interp.evaluate(pts)  # (2, *shape)
                r = np.moveaxis(f, 0, -1) - nodes
                res = float(np.max(np.abs(r)))
                if res <= tol or it == maxiter:
                    break
                g = interp.gradient(pts)  # (2, *shape, 2): d_k phi^i
                J = np.moveaxis(g, 0, -2)
                y = np.clip(y - np.linalg.solve(J, r[..., None])[..., 0], lower, upper)
            if res > 1e-10:
                raise InversionError(f"Newton did not converge in {maxiter} iterations (residual {res:.3e})", res)
            y[ring] = nodes[ring]
            inv[k] = y
            worst = max(worst, res)
            iters = max(iters, it)
    jac = lattice_derivatives(inv, space, axis_offset=1)
    roundtrip = _roundtrip_residual(flow, inv)
    return FlowPath(space, flow.times, inv, jac, flow.kind, flow.start, True, worst,
                    {"newton_iterations": iters, "roundtrip_residual": roundtrip})


def _roundtrip_residual(flow, inv):
    """``max_j |phi^{-1}(phi(x_j)) - x_j|`` using the interpolant of the inverse."""
    space = flow.space
    n = space.dim
    comps = []
    for i in range(n):
        interp = LatticeInterpolant(space, inv[..., i])
        comps.append(interp.evaluate(flow.positions))
    back = np.stack(comps, axis=-1)
    return float(np.max(np.abs(back - space.nodes[None])))


def compose(outer: np.ndarray, inner: np.ndarray, space: SpaceGrid):
    """Evaluate the lattice map ``outer`` (shape, n) at the points ``inner`` (shape, n)."""
    comps = []
    for i in range(space.dim):
        interp = LatticeInterpolant(space, outer[None, ..., i])
        comps.append(interp.evaluate(inner[None])[0])
    return np.stack(comps, axis=-1)


def cocycle_defect(spec: ModeSet, path: FieldPath, space: SpaceGrid, s, t, tau, scheme="stratonovich"):
    """``max_j |phi_{s,tau}(x_j) - phi_{t,tau}(phi_{s,t}(x_j))|`` with cubic interpolation."""
    i_s, i_t, i_tau = (path.times.index(v) for v in (s, t, tau))
    if not i_s <= i_t <= i_tau:
        raise ParameterError("cocycle_defect needs s <= t <= tau")
    integrate = integrate_stratonovich if scheme == "stratonovich" else integrate_ito
    full = integrate(spec, path, space, i_s, i_tau).final
    first = integrate(spec, path, space, i_s, i_t).final
    second = integrate(spec, path, space, i_t, i_tau).final
    return float(np.max(np.abs(full - compose(second, first, space))))


def identity_flow(space: SpaceGrid, times: TimeGrid, kind="stratonovich"):
    pos = np.broadcast_to(space.nodes, (times.steps + 1,) + space.nodes.shape).copy()
    jac = np.broadcast_to(np.eye(space.dim), pos.shape + (space.dim,)).copy()
    return FlowPath(space, times, pos, jac, kind)


def flow_from_positions(space: SpaceGrid, times: TimeGrid, positions, kind="controlled"):
    """Wrap externally constructed positions (e.g. a perturbed flow) as a FlowPath."""
    return _finish(space, times, np.asarray(positions, dtype=float), kind, 0)
