"""Allen-Cahn solvers with Neumann boundary conditions (epsilon = 1, W'(u) = u^3 - u).

Three equations share one finite-difference discretisation:

* the flow-transformed equation ``w_t = R : D^2 w + S . grad w + w - w^3``;
* the controlled equation ``u_t = Lap u - W'(u) + grad u . b_f``;
* the transport-noise SPDE ``du = (Lap u - W'(u)) dt + grad u . X_sigma(o dt)``.

Diffusion is implicit, reaction explicit.  Transport terms are explicit in the
transformed equation and midpoint (Crank-Nicolson) in the other two, which
makes the noisy scheme consistent with Stratonovich calculus.  Neumann
conditions use ghost nodes obtained by reflection across the boundary.
"""

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.linalg import solve_banded
from scipy.sparse.linalg import bicgstab

from .errors import DomainError, ParameterError, SolverError, StabilityError
from .field import FieldPath, ModeSet
from .flow import Control, FlowPath, invert_flow
from .grid import SpaceGrid, TimeGrid
from .interp import LatticeInterpolant, second_derivative
from .transform import CoefficientField

TOL_MAX = 1e-3
LINEAR_RTOL = 1e-10


@dataclass(frozen=True)
class InitialData:
    """Initial condition ``u0`` given by an analytic expression or by lattice samples.

    ``expr`` maps points of shape (..., n) to values; ``values`` are samples on
    a fixed lattice.  ``note`` records smoothness information.
    """

    expr: Optional[Callable] = field(default=None, compare=False)
    values: Optional[np.ndarray] = None
    name: str = "custom"
    note: str = ""
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if (self.expr is None) == (self.values is None):
            raise ParameterError("give exactly one of expr or values")

    def sample(self, space: SpaceGrid):
        if self.values is not None:
            v = np.asarray(self.values, dtype=float)
            if v.shape != space.shape:
                raise ParameterError(f"initial samples have shape {v.shape}, lattice is {space.shape}")
        else:
            v = np.asarray(self.expr(space.nodes), dtype=float)
            v = np.broadcast_to(v, space.shape).copy()
        if not np.all(np.isfinite(v)):
            raise ParameterError("initial data must be finite")
        return v

    def sup_norm(self, space: SpaceGrid):
        return float(np.max(np.abs(self.sample(space))))

    def neumann_defect(self, space: SpaceGrid, h=1e-6):
        """Largest normal derivative on the box boundary (central differences of ``expr``)."""
        if self.expr is None:
            return float("nan")
        worst = 0.0
        lower, upper = np.asarray(space.lower), np.asarray(space.upper)
        for a in range(space.dim):
            pts = np.moveaxis(space.nodes, a, 0)[[0, -1]].copy()
            for side, edge in ((0, lower[a] + h), (1, upper[a] - h)):
                p = pts[side].copy()
                p[..., a] = edge
                q = p.copy()
                q[..., a] = edge + (h if side == 0 else -h)
                d = (np.asarray(self.expr(q)) - np.asarray(self.expr(p))) / h
                worst = max(worst, float(np.max(np.abs(d))))
        return worst

    @classmethod
    def constant(cls, value):
        return cls(lambda x: np.full(x.shape[:-1], float(value)), name="constant",
                   note="constant; Neumann-compatible", params={"value": float(value)})

    @classmethod
    def cosine(cls, amplitude=1.0, wavenumber=1, offset=0.0, lower=0.0, upper=1.0, axis=0):
        """``offset + amplitude * cos(k pi (x - lower) / (upper - lower))``: smooth, Neumann-compatible."""
        def expr(x):
            return offset + amplitude * np.cos(wavenumber * np.pi * (x[..., axis] - lower) / (upper - lower))
        return cls(expr, name="cosine", note="analytic; zero normal derivative",
                   params={"amplitude": amplitude, "wavenumber": wavenumber, "offset": offset, "axis": axis})

    @classmethod
    def tanh_front(cls, center=0.5, width=np.sqrt(2.0), axis=0):
        """Planar front ``tanh((x - center) / width)``; stationary profile for ``width = sqrt 2``.

        The front has a small nonzero normal derivative on the box boundary,
        reported by :meth:`neumann_defect`.
        """
        def expr(x):
            return np.tanh((x[..., axis] - center) / width)
        return cls(expr, name="tanh", note="analytic; normal derivative sech^2 at the boundary",
                   params={"center": center, "width": width, "axis": axis})

    @classmethod
    def from_values(cls, values, name="lattice"):
        v = np.array(values, dtype=float)
        v.setflags(write=False)
        return cls(values=v, name=name, note="lattice samples")


@dataclass(frozen=True)
class PhaseField:
    """Trajectory ``values[k]`` of a scalar field at time node ``start + k``."""

    space: SpaceGrid
    times: TimeGrid
    values: np.ndarray
    meta: str
    boundary: str = "neumann"
    start: int = 0
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def slice_times(self):
        return self.times.times[self.start:self.start + self.values.shape[0]]

    @property
    def final(self):
        return self.values[-1]

    def sup_norm(self):
        return float(np.max(np.abs(self.values)))

    def interfaces(self, step=-1):
        """Zero crossings of a 1D slice by linear interpolation (sorted)."""
        if self.space.dim != 1:
            raise ParameterError("interfaces are defined for 1D fields")
        return zero_crossings(self.space.axes[0], self.values[step])

    def to_csv(self, path, stride=1):
        nodes = self.space.nodes.reshape(-1, self.space.dim)
        vals = self.values.reshape(self.values.shape[0], -1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "node"] + [f"x{i}" for i in range(self.space.dim)] + ["value"])
            for k in range(0, vals.shape[0], stride):
                t = repr(float(self.slice_times[k]))
                for j in range(nodes.shape[0]):
                    w.writerow([t, j] + [repr(float(c)) for c in nodes[j]] + [repr(float(vals[k, j]))])

    def save(self, path):
        np.savez(path, lower=self.space.lower, upper=self.space.upper, cells=self.space.cells,
                 T=self.times.T, steps=self.times.steps, values=self.values, meta=self.meta, start=self.start)

    @classmethod
    def load(cls, path):
        d = np.load(path, allow_pickle=False)
        return cls(SpaceGrid(tuple(d["lower"]), tuple(d["upper"]), tuple(int(c) for c in d["cells"])),
                   TimeGrid(float(d["T"]), int(d["steps"])), d["values"], str(d["meta"]), start=int(d["start"]))


def zero_crossings(x, v):
    """Positions where the piecewise-linear interpolant of ``v`` changes sign."""
    v = np.asarray(v, dtype=float)
    s = np.sign(v)
    out = list(x[s == 0.0])
    idx = np.nonzero(s[:-1] * s[1:] < 0.0)[0]
    out.extend(x[idx] - v[idx] * (x[idx + 1] - x[idx]) / (v[idx + 1] - v[idx]))
    return np.sort(np.asarray(out, dtype=float))


# ---------------------------------------------------------------------------
# discrete operators with reflected ghost nodes


def _reflect(i, N):
    """Map ghost indices ``-1`` and ``N + 1`` back into ``0..N`` (Neumann reflection)."""
    i = np.where(i < 0, -i, i)
    return np.where(i > N, 2 * N - i, i)


def _gradient(u, space: SpaceGrid):
    """Central differences with reflected ghosts (zero on the boundary); shape (*shape, n)."""
    grads = []
    for a, h in enumerate(space.spacing):
        padded = np.pad(u, [(1, 1) if b == a else (0, 0) for b in range(u.ndim)], mode="reflect")
        hi = np.take(padded, np.arange(2, u.shape[a] + 2), axis=a)
        lo = np.take(padded, np.arange(0, u.shape[a]), axis=a)
        grads.append((hi - lo) / (2.0 * h))
    return np.stack(grads, axis=-1)


class _Operator:
    """Sparse linear operator ``sum_offsets coef * u[node + offset]`` with reflected ghosts."""

    def __init__(self, space: SpaceGrid):
        self.space = space
        self.terms = []  # (offset tuple, coefficient array of lattice shape)

    def add(self, offset, coef):
        self.terms.append((tuple(offset), np.broadcast_to(np.asarray(coef, dtype=float), self.space.shape)))

    def add_second(self, R):
        """Add ``R : D^2`` for ``R`` of shape (*shape, n, n)."""
        h = self.space.spacing
        n = self.space.dim
        for a in range(n):
            e = [0] * n
            e[a] = 1
            c = R[..., a, a] / h[a] ** 2
            self.add(e, c)
            self.add([-v for v in e], c)
            self.add([0] * n, -2.0 * c)
        if n == 2:
            c = (R[..., 0, 1] + R[..., 1, 0]) / (4.0 * h[0] * h[1])
            for sx, sy, sign in ((1, 1, 1.0), (-1, -1, 1.0), (1, -1, -1.0), (-1, 1, -1.0)):
                self.add((sx, sy), sign * c)

    def add_first(self, b):
        """Add ``b . grad`` (central) for ``b`` of shape (*shape, n)."""
        h = self.space.spacing
        n = self.space.dim
        for a in range(n):
            e = [0] * n
            e[a] = 1
            c = b[..., a] / (2.0 * h[a])
            self.add(e, c)
            self.add([-v for v in e], -c)

    def matrix(self, scale=1.0, identity=0.0):
        """``identity * I + scale * operator`` as a CSR matrix."""
        shape = self.space.shape
        size = int(np.prod(shape))
        idx = np.indices(shape)
        rows, cols, vals = [np.arange(size)], [np.arange(size)], [np.full(size, identity)]
        for offset, coef in self.terms:
            target = [_reflect(idx[a] + offset[a], shape[a] - 1) for a in range(len(shape))]
            rows.append(np.arange(size))
            cols.append(np.ravel_multi_index(target, shape).ravel())
            vals.append(scale * coef.ravel())
        return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(size, size))

    def banded(self, scale=1.0, identity=0.0):
        """Tridiagonal form for :func:`scipy.linalg.solve_banded` (1D only)."""
        N = self.space.shape[0] - 1
        lo = np.zeros(N + 1)
        di = np.full(N + 1, identity)
        up = np.zeros(N + 1)
        for (off,), coef in self.terms:
            if off == 0:
                di += scale * coef
            elif off == 1:
                up[:N] += scale * coef[:N]
                lo[N] += scale * coef[N]  # ghost N+1 reflects to N-1
            else:
                lo[1:] += scale * coef[1:]
                up[0] += scale * coef[0]  # ghost -1 reflects to 1
        ab = np.zeros((3, N + 1))
        ab[0, 1:] = up[:N]
        ab[1] = di
        ab[2, :-1] = lo[1:]
        return ab

    def apply(self, u):
        out = np.zeros(self.space.shape)
        shape = self.space.shape
        idx = np.indices(shape)
        for offset, coef in self.terms:
            target = tuple(_reflect(idx[a] + offset[a], shape[a] - 1) for a in range(len(shape)))
            out += coef * u[target]
        return out


def _solve(op: _Operator, scale, identity, rhs, guess):
    """Solve ``(identity I + scale op) u = rhs``: banded in 1D, BiCGSTAB in 2D."""
    if op.space.dim == 1:
        try:
            sol = solve_banded((1, 1), op.banded(scale, identity), rhs, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SolverError(f"banded solve failed: {exc}") from exc
        if not np.all(np.isfinite(sol)):
            raise SolverError("banded solve produced non-finite values")
        return sol
    A = op.matrix(scale, identity)
    sol, info = bicgstab(A, rhs.ravel(), x0=guess.ravel(), rtol=LINEAR_RTOL, atol=0.0, maxiter=10 * A.shape[0])
    if info != 0 or not np.all(np.isfinite(sol)):
        raise SolverError(f"iterative solve did not converge (info={info})")
    return sol.reshape(op.space.shape)


def _laplacian(space):
    op = _Operator(space)
    op.add_second(np.broadcast_to(np.eye(space.dim), space.shape + (space.dim, space.dim)))
    return op


def _guard(values, bound, tol, t):
    peak = float(np.max(np.abs(values)))
    if not np.isfinite(peak) or peak > bound + tol:
        raise StabilityError(
            f"maximum principle violated at t={t:.6g}: |u| = {peak:.6g} > {bound:.6g} + {tol:g}; reduce the time step"
        )


# ---------------------------------------------------------------------------
# solvers


def solve_transformed(coeffs: CoefficientField, u0: InitialData, tol_max=TOL_MAX, advection="central") -> PhaseField:
    """Semi-implicit solve of ``w_t = R : D^2 w + S . grad w + w - w^3`` with Neumann conditions.

    Step ``m -> m+1`` solves ``(I - dt R^{m+1} : D^2) w^{m+1} = w^m + dt (S^m . grad w^m + w^m - (w^m)^3)``.
    ``advection`` is ``"central"`` or ``"upwind"`` for the explicit drift.

    Raises
    ------
    StabilityError
        If ``dt > dx / max|S|`` or if ``|w|`` exceeds ``max(1, ||u0||) + tol_max``.
    SolverError
        If a linear solve fails.
    """
    if advection not in ("central", "upwind"):
        raise ParameterError("advection must be 'central' or 'upwind'")
    space, times = coeffs.space, coeffs.times
    dt = times.dt
    smax = coeffs.max_drift()
    if smax > 0.0 and dt > min(space.spacing) / smax:
        raise StabilityError(f"dt={dt:g} exceeds dx/max|S| = {min(space.spacing) / smax:g}; reduce the time step")
    w = u0.sample(space)
    bound = max(1.0, float(np.max(np.abs(w))))
    out = np.empty((coeffs.R.shape[0],) + space.shape)
    out[0] = w
    t = coeffs.slice_times
    for m in range(coeffs.R.shape[0] - 1):
        drift = _advect(w, coeffs.S[m], space, advection)
        rhs = w + dt * (drift + w - w**3)
        op = _Operator(space)
        op.add_second(coeffs.R[m + 1])
        w = _solve(op, -dt, 1.0, rhs, w)
        _guard(w, bound, tol_max, t[m + 1])
        out[m + 1] = w
    return PhaseField(space, times, out, "transformed", start=coeffs.start)


def _advect(w, S, space, scheme):
    if scheme == "central":
        return np.sum(S * _gradient(w, space), axis=-1)
    total = np.zeros(space.shape)
    for a, h in enumerate(space.spacing):
        padded = np.pad(w, [(1, 1) if b == a else (0, 0) for b in range(w.ndim)], mode="reflect")
        fwd = (np.take(padded, np.arange(2, w.shape[a] + 2), axis=a) - w) / h
        bwd = (w - np.take(padded, np.arange(0, w.shape[a]), axis=a)) / h
        s = S[..., a]
        total += np.where(s > 0.0, s * fwd, s * bwd)
    return total


def _transport_solve(space, times, increments, u0, meta, tol_max=None):
    """Midpoint transport: ``(I - dt Lap - A/2) u^{m+1} = (I + A/2) u^m + dt (u^m - (u^m)^3)``.

    ``increments(m)`` returns the transport displacement ``a_m`` (shape (*shape, n))
    for step ``m``; ``A u = a_m . grad_h u``.  A displacement larger than the
    lattice spacing raises :class:`StabilityError`.
    """
    dt = times.dt
    u = u0.sample(space)
    bound = max(1.0, float(np.max(np.abs(u))))
    out = np.empty((times.steps + 1,) + space.shape)
    out[0] = u
    lap = _laplacian(space)
    for m in range(times.steps):
        a = increments(m)
        peak = float(np.max(np.abs(a)))
        if peak > min(space.spacing):
            raise StabilityError(f"transport increment {peak:.3e} exceeds dx at step {m}; reduce the time step")
        rhs = u + dt * (u - u**3)
        if peak > 0.0:
            tr = _Operator(space)
            tr.add_first(a)
            rhs = rhs + 0.5 * tr.apply(u)
            op = _Operator(space)
            op.terms = [(o, -dt * c) for o, c in lap.terms] + [(o, -0.5 * c) for o, c in tr.terms]
            u = _solve(op, 1.0, 1.0, rhs, u)
        else:
            u = _solve(lap, -dt, 1.0, rhs, u)
        if tol_max is not None:
            _guard(u, bound, tol_max, times.times[m + 1])
        out[m + 1] = u
    return PhaseField(space, times, out, meta)


def _increment_source(spec: ModeSet, space: SpaceGrid, times: TimeGrid, weights):
    """Function ``m -> dt X^(0) + sum_l weights[m, l-1] X^(l)`` on the lattice nodes."""
    nodes = space.nodes
    dt = times.dt
    if spec.time_independent:
        basis = spec.evaluate(0.0, nodes)  # (*shape, L+1, n)
        return lambda m: np.einsum("...ln,l->...n", basis, np.concatenate([[dt], weights[m]]))
    t = times.times
    return lambda m: spec.combine(t[m], nodes, weights[m], dt)


def solve_controlled(spec: ModeSet, control: Control, u0: InitialData, space: SpaceGrid, tol_max=TOL_MAX) -> PhaseField:
    """Semi-implicit solve of ``u_t = Lap u - (u^3 - u) + grad u . b_f`` with ``b_f = sum f_l X^(l) + X^(0)``.

    Raises
    ------
    StabilityError
        If ``dt * max|b_f| > dx`` or the maximum principle fails.
    """
    if control.L != spec.L:
        raise ParameterError(f"control has {control.L} modes, mode set has {spec.L}")
    increments = _increment_source(spec, space, control.times, control.coefficients * control.times.dt)
    return _transport_solve(space, control.times, increments, u0, "controlled", tol_max=tol_max)


def solve_direct_spde(spec: ModeSet, path: FieldPath, u0: InitialData, space: SpaceGrid) -> PhaseField:
    """Finite-difference solve of the transport-noise Allen-Cahn SPDE with midpoint transport.

    Raises
    ------
    StabilityError
        If a field increment exceeds the lattice spacing somewhere.
    """
    increments = _increment_source(spec, space, path.times, path.increments)
    return _transport_solve(space, path.times, increments, u0, "direct")


def deterministic_ac(space: SpaceGrid, times: TimeGrid, u0: InitialData) -> PhaseField:
    """Allen-Cahn without transport (``R = I``, ``S = 0``)."""
    return solve_transformed(CoefficientField.identity(space, times), u0)


def pull_back(w: PhaseField, flow: FlowPath) -> PhaseField:
    """Recover ``u(t, x_j) = w(t, phi_t^{-1}(x_j))`` by cubic interpolation of ``w``.

    ``flow`` may be the forward flow (it is inverted) or the inverse returned
    by :func:`~sacldp.flow.invert_flow`.
    """
    inverse = flow if flow.inverse else invert_flow(flow)
    if inverse.positions.shape[:-1] != w.values.shape or inverse.start != w.start:
        raise ParameterError("flow and phase field live on different grids")
    space = w.space
    lo, hi = np.asarray(space.lower), np.asarray(space.upper)
    if np.any(inverse.positions < lo - 1e-12) or np.any(inverse.positions > hi + 1e-12):
        raise DomainError("inverse flow leaves the box")
    vals = LatticeInterpolant(space, w.values).evaluate(inverse.positions)
    return PhaseField(space, w.times, vals, "transformed", start=w.start)


def action_functional(u: PhaseField, eps=1.0):
    """Quadrature of ``int int eps u_t^2 + (1/eps) (-eps Lap u + W'(u)/eps)^2``.

    Time derivatives are forward differences between slices; the spatial part
    is evaluated at slice midpoints with one-sided second-order stencils on
    the boundary nodes (no boundary condition is assumed) and integrated with
    the trapezoid rule.
    """
    if eps <= 0.0:
        raise ParameterError("eps must be positive")
    v = u.values
    if v.shape[0] < 2:
        raise ParameterError("need at least two time slices")
    dt = u.times.dt
    ut = np.diff(v, axis=0) / dt
    mid = 0.5 * (v[1:] + v[:-1])
    lap = sum(second_derivative(mid, h, axis=1 + a, order=2) for a, h in enumerate(u.space.spacing))
    wprime = mid**3 - mid
    density = eps * ut**2 + (-eps * lap + wprime / eps) ** 2 / eps
    for a, x in enumerate(u.space.axes):
        density = np.trapezoid(density, x, axis=1)
    return float(np.sum(density) * dt)
