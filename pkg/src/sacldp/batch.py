"""Vectorised 1D pipelines over batches of noise realisations or controls.

Monte Carlo scans and finite-difference gradients need hundreds of solves on
the same lattice.  The functions here run a whole batch in lockstep, one time
step at a time, with the same discretisation as the single-sample functions in
:mod:`sacldp.flow`, :mod:`sacldp.transform` and :mod:`sacldp.pde` (results
agree to solver tolerance).  Only final states are kept.
"""

import numpy as np

from .errors import DegenerateCoefficientError, InversionError, ParameterError, StabilityError, StepSizeError
from .field import ModeSet
from .flow import flow_points
from .grid import SpaceGrid, TimeGrid
from .interp import StackedSpline1D, derivative
from .transform import ELLIPTICITY_FLOOR


def thomas(lo, di, up, rhs):
    """Solve tridiagonal systems row-wise; all arrays have shape (B, N).

    ``lo[:, j]`` multiplies ``u[j-1]`` and ``up[:, j]`` multiplies ``u[j+1]``
    in equation ``j`` (``lo[:, 0]`` and ``up[:, -1]`` are ignored).
    """
    N = di.shape[-1]
    c = np.empty_like(di)
    d = np.empty_like(rhs)
    c[:, 0] = up[:, 0] / di[:, 0]
    d[:, 0] = rhs[:, 0] / di[:, 0]
    for j in range(1, N):
        den = di[:, j] - lo[:, j] * c[:, j - 1]
        c[:, j] = up[:, j] / den if j < N - 1 else 0.0
        d[:, j] = (rhs[:, j] - lo[:, j] * d[:, j - 1]) / den
    x = np.empty_like(rhs)
    x[:, -1] = d[:, -1]
    for j in range(N - 2, -1, -1):
        x[:, j] = d[:, j] - c[:, j] * x[:, j + 1]
    return x


def _fold_neumann(lo, up):
    """Fold reflected ghost coefficients into the first and last rows."""
    up[:, 0] += lo[:, 0]
    lo[:, -1] += up[:, -1]
    lo[:, 0] = 0.0
    up[:, -1] = 0.0
    return lo, up


def _central_gradient(u, h):
    g = np.zeros_like(u)
    g[:, 1:-1] = (u[:, 2:] - u[:, :-2]) / (2.0 * h)
    return g


def _check_1d(space: SpaceGrid):
    if space.dim != 1:
        raise ParameterError("batched pipelines are implemented for 1D lattices")


def _heun(spec, t0, t1, x, w, dt, sign=-1.0):
    v0 = spec.combine(t0, x, w, dt)
    xp = np.clip(x + sign * v0, spec.lower, spec.upper)
    v1 = spec.combine(t1, xp, w, dt)
    return np.clip(x + sign * 0.5 * (v0 + v1), spec.lower, spec.upper)


def _invert_slices(x, phi, guess, tol=1e-12, maxiter=50, strict=True):
    """Row-wise inverse of increasing maps ``phi[b]`` sampled on ``x``; returns (psi, row residuals)."""
    spline = StackedSpline1D(x, phi)
    B, N = phi.shape
    target = np.broadcast_to(x, (B, N))
    # bracketing lattice cell of every target in every row
    span = 2.0 * (x[-1] - x[0]) + 1.0
    shift = span * np.arange(B)[:, None]
    j = np.searchsorted((phi + shift).ravel(), (target + shift).ravel(), side="right").reshape(B, N)
    j = np.clip(j - 1 - N * np.arange(B)[:, None], 0, N - 2)
    lo = x[j]
    hi = x[j + 1]
    y = np.clip(guess, lo, hi)
    for it in range(maxiter + 1):
        f = spline(y) - target
        res = np.max(np.abs(f), axis=1)
        if res.max() <= tol or it == maxiter:
            break
        below = f < 0.0
        lo = np.where(below, y, lo)
        hi = np.where(below, hi, y)
        d = spline(y, nu=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = y - f / d
        bad = ~np.isfinite(step) | (step < lo) | (step > hi)
        y = np.where(bad, 0.5 * (lo + hi), step)
    worst = float(res.max())
    if strict and not worst <= 1e-10:
        raise InversionError(f"batched Newton inversion failed (residual {worst:.3e})", worst)
    return y, res


def transformed_final(spec: ModeSet, space: SpaceGrid, times: TimeGrid, weights, u0_values,
                      tol_max=1e-3, advection="central", mask_failures=False):
    """Flow-transformation route for a batch: final ``u(T)`` on the lattice, shape (B, N).

    ``weights`` (B, M, L) are the noise increments ``sqrt(sigma) dB``.  Each
    step advances the stochastic flow (Heun), inverts it by Newton's method,
    forms ``R`` and ``S`` and advances ``w``; at the end ``u = w(phi^{-1})``.

    With ``mask_failures=True`` a row that trips a guard (folded flow, failed
    inversion, lost ellipticity, step-size or maximum-principle violation) is
    frozen and returned as NaN instead of raising, and the function returns
    ``(u, failed)`` with the boolean row mask.
    """
    _check_1d(space)
    weights = np.asarray(weights, dtype=float)
    B, M, _ = weights.shape
    if M != times.steps:
        raise ParameterError("weights do not match the time grid")
    x = space.axes[0]
    h = space.spacing[0]
    dt = times.dt
    t = times.times
    ring = spec.ring_mask(space)
    nodes = space.nodes[:, 0]
    pos = np.broadcast_to(nodes, (B, space.size)).copy()
    inv = pos.copy()
    w0 = np.broadcast_to(np.asarray(u0_values, dtype=float), (B, space.size))
    w = w0.copy()
    bound = max(1.0, float(np.max(np.abs(w))))
    S = np.zeros_like(w)
    failed = np.zeros(B, dtype=bool)

    def trip(rows, error):
        if not mask_failures:
            raise error
        failed[rows] = True

    for m in range(M):
        step = _heun(spec, t[m], t[m + 1], pos[..., None], weights[:, m][:, None, :], dt)[..., 0]
        step[:, ring] = nodes[ring]
        step[failed] = nodes
        pos = step
        folded = np.any(derivative(pos, h, axis=1) <= 0.0, axis=1)
        if np.any(folded):
            trip(folded, StepSizeError(f"Jacobian determinant <= 0 at t={t[m + 1]:.6g}; reduce the time step"))
            pos[failed] = nodes
        inv, res = _invert_slices(x, pos, inv, strict=not mask_failures)
        if mask_failures:
            trip(~(res <= 1e-10), None)
            inv[failed] = nodes
        inv[:, ring] = nodes[ring]
        d1 = derivative(inv, h, axis=1)
        d2 = derivative(inv, h, axis=1, deriv=2)
        J = StackedSpline1D(x, d1)(pos)
        S_next = StackedSpline1D(x, d2)(pos)
        R = J * J
        R[:, ring] = 1.0
        S_next[:, ring] = 0.0
        degenerate = R.min(axis=1) <= ELLIPTICITY_FLOOR
        if np.any(degenerate):
            trip(degenerate, DegenerateCoefficientError(
                f"diffusion coefficient lost ellipticity (min {R.min():.3e})"))
        smax = np.max(np.abs(S), axis=1)
        unstable = dt * smax > h
        if np.any(unstable):
            trip(unstable, StabilityError(
                f"dt={dt:g} exceeds dx/max|S| = {h / smax.max():g}; reduce the time step"))
        R[failed] = 1.0
        S[failed] = 0.0
        S_next[failed] = 0.0
        if advection == "central":
            drift = S * _central_gradient(w, h)
        else:
            padded = np.pad(w, ((0, 0), (1, 1)), mode="reflect")
            fwd = (padded[:, 2:] - w) / h
            bwd = (w - padded[:, :-2]) / h
            drift = np.where(S > 0.0, S * fwd, S * bwd)
        rhs = w + dt * (drift + w - w**3)
        c = dt * R / h**2
        lo, up = _fold_neumann(-c.copy(), -c.copy())
        w = thomas(lo, 1.0 + 2.0 * c, up, rhs)
        violated = ~np.all(np.isfinite(w), axis=1) | (np.max(np.abs(w), axis=1) > bound + tol_max)
        if np.any(violated):
            trip(violated, StabilityError(f"maximum principle violated at t={t[m + 1]:.6g}; reduce the time step"))
            w[failed] = w0[failed]
        S = S_next
    u = StackedSpline1D(x, w)(inv)
    if not mask_failures:
        return u
    u[failed] = np.nan
    return u, failed


def transport_final(spec: ModeSet, space: SpaceGrid, times: TimeGrid, weights, u0_values, tol_max=None,
                    mask_failures=False):
    """Midpoint-transport route for a batch: final ``u(T)``, shape (B, N).

    With noise increments as ``weights`` this is the direct SPDE scheme; with
    ``f_l(t_m) dt`` it is the controlled Allen-Cahn equation.
    ``mask_failures`` behaves as in :func:`transformed_final`.
    """
    _check_1d(space)
    weights = np.asarray(weights, dtype=float)
    B, M, _ = weights.shape
    if M != times.steps:
        raise ParameterError("weights do not match the time grid")
    h = space.spacing[0]
    dt = times.dt
    t = times.times
    nodes = space.nodes
    u0 = np.broadcast_to(np.asarray(u0_values, dtype=float), (B, space.size))
    u = u0.copy()
    bound = max(1.0, float(np.max(np.abs(u))))
    basis = spec.evaluate(0.0, nodes)[..., 0] if spec.time_independent else None  # (N, L+1)
    k = dt / h**2
    failed = np.zeros(B, dtype=bool)
    for m in range(M):
        if basis is not None:
            a = weights[:, m] @ basis[:, 1:].T + dt * basis[:, 0]
        else:
            a = spec.combine(t[m], nodes[None], weights[:, m][:, None, :], dt)[..., 0]
        fast = np.max(np.abs(a), axis=1) > h
        if np.any(fast):
            if not mask_failures:
                raise StabilityError(f"transport increment exceeds dx at step {m}; reduce the time step")
            failed |= fast
        a[failed] = 0.0
        grad = _central_gradient(u, h)
        rhs = u + dt * (u - u**3) + 0.5 * a * grad
        q = a / (4.0 * h)
        lo, up = _fold_neumann(-k + q, -k - q)
        u = thomas(lo, np.full_like(u, 1.0 + 2.0 * k), up, rhs)
        if tol_max is not None:
            violated = ~np.all(np.isfinite(u), axis=1) | (np.max(np.abs(u), axis=1) > bound + tol_max)
            if np.any(violated):
                if not mask_failures:
                    raise StabilityError(f"maximum principle violated at t={t[m + 1]:.6g}; reduce the time step")
                failed |= violated
                u[failed] = u0[failed]
    if not mask_failures:
        return u
    u[failed] = np.nan
    return u, failed


def flow_final(spec: ModeSet, times: TimeGrid, weights, points, orientation=-1.0):
    """Final positions of ``points`` (P, n) for a batch of weights (B, M, L); shape (B, P, n)."""
    return flow_points(spec, times, weights, points, "stratonovich", orientation)
