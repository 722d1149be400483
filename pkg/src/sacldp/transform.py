"""Random coefficients of the flow-transformed Allen-Cahn equation.

With ``w(t, y) = u(t, phi_t(y))`` the transport term disappears and ``w``
solves ``w_t = R : D^2 w + S . grad w + w - w^3`` with

    R^{ij}(t, y) = sum_k d_k (phi_t^{-1})^i (phi_t(y)) d_k (phi_t^{-1})^j (phi_t(y))
    S^i(t, y)    = sum_k d_k^2 (phi_t^{-1})^i (phi_t(y))
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import analysis
from .errors import DegenerateCoefficientError, ParameterError
from .flow import FlowPath
from .grid import SpaceGrid, TimeGrid
from .interp import LatticeInterpolant, lattice_derivatives, second_derivative

ELLIPTICITY_FLOOR = 1e-10


@dataclass(frozen=True)
class CoefficientField:
    """``R`` (M+1, *shape, n, n) and ``S`` (M+1, *shape, n) on the flow's lattice.

    ``chain_rule_gap`` is the sup-norm distance at interior nodes between
    ``R`` and ``(D phi)^{-1} (D phi)^{-T}`` built from the forward Jacobians.
    """

    space: SpaceGrid
    times: TimeGrid
    R: np.ndarray
    S: np.ndarray
    ellipticity: float
    chain_rule_gap: float = 0.0
    start: int = 0

    def __post_init__(self):
        for name in ("R", "S"):
            a = np.asarray(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def identity(cls, space: SpaceGrid, times: TimeGrid):
        n = space.dim
        shape = (times.steps + 1,) + space.shape
        R = np.broadcast_to(np.eye(n), shape + (n, n)).copy()
        return cls(space, times, R, np.zeros(shape + (n,)), 1.0)

    @property
    def slice_times(self):
        return self.times.times[self.start:self.start + self.R.shape[0]]

    def max_drift(self):
        return float(np.max(np.abs(self.S))) if self.S.size else 0.0

    def to_csv(self, path, step):
        """One time slice: node, coordinates, R entries (row-major) and S components."""
        n = self.space.dim
        nodes = self.space.nodes.reshape(-1, n)
        R = self.R[step].reshape(-1, n * n)
        S = self.S[step].reshape(-1, n)
        header = (["node"] + [f"x{i}" for i in range(n)] + [f"R{i}{j}" for i in range(n) for j in range(n)]
                  + [f"S{i}" for i in range(n)])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for j in range(nodes.shape[0]):
                w.writerow([j] + [repr(float(v)) for v in np.concatenate([nodes[j], R[j], S[j]])])

    def report(self):
        return {"ellipticity": self.ellipticity, "chain_rule_gap": self.chain_rule_gap,
                "max_abs_S": self.max_drift(), "time_slices": int(self.R.shape[0])}

    def report_json(self):
        return json.dumps(self.report(), sort_keys=True, indent=2)


def _interpolate_at(space, lattice_values, points):
    """Evaluate ``lattice_values[B, *shape]`` slice-wise at ``points[B, *shape, n]``."""
    return LatticeInterpolant(space, lattice_values).evaluate(points)


def _min_eigenvalue(R):
    n = R.shape[-1]
    if n == 1:
        return R[..., 0, 0]
    a, b, c = R[..., 0, 0], R[..., 0, 1], R[..., 1, 1]
    return 0.5 * (a + c) - np.sqrt(0.25 * (a - c) ** 2 + b * b)


def _inverse_gram(jac):
    """``(D phi)^{-1} (D phi)^{-T}`` for Jacobians ``jac[..., i, k]``."""
    inv = np.linalg.inv(jac)
    return inv @ np.swapaxes(inv, -1, -2)


def build_coefficients(flow: FlowPath, inverse: FlowPath) -> CoefficientField:
    """Coefficients ``R`` and ``S`` of the transformed equation for a flow and its inverse.

    Derivatives of the inverse map are taken by finite differences on the
    regular lattice of ``inverse`` and then interpolated at ``phi(x_j)``.
    Boundary-ring nodes (where the flow is the identity) receive ``R = I``
    and ``S = 0`` exactly.

    Raises
    ------
    DegenerateCoefficientError
        If the smallest eigenvalue of ``R`` is at most ``1e-10`` at any node.
    """
    if not inverse.inverse or flow.inverse:
        raise ParameterError("expected a forward flow and its inverse")
    if flow.positions.shape != inverse.positions.shape or flow.start != inverse.start:
        raise ParameterError("flow and inverse live on different grids")
    space = flow.space
    n = space.dim
    B = flow.positions.shape[0]
    dinv = lattice_derivatives(inverse.positions, space, axis_offset=1)  # (B, *shape, n, n): d_k psi^i
    d2 = np.zeros((B,) + space.shape + (n,))
    for k, h in enumerate(space.spacing):
        d2 += second_derivative(inverse.positions, h, axis=1 + k)

    J = np.empty_like(dinv)
    S = np.empty_like(d2)
    for i in range(n):
        S[..., i] = _interpolate_at(space, d2[..., i], flow.positions)
        for k in range(n):
            J[..., i, k] = _interpolate_at(space, dinv[..., i, k], flow.positions)
    R = J @ np.swapaxes(J, -1, -2)
    R = 0.5 * (R + np.swapaxes(R, -1, -2))

    ring = np.all(flow.positions == space.nodes[None], axis=(0, -1))
    R[:, ring] = np.eye(n)
    S[:, ring] = 0.0

    lam = _min_eigenvalue(R)
    ellipticity = float(lam.min())
    if not np.isfinite(ellipticity) or ellipticity <= ELLIPTICITY_FLOOR:
        raise DegenerateCoefficientError(f"diffusion coefficient lost ellipticity (min eigenvalue {ellipticity:.3e})")

    gram = _inverse_gram(flow.jacobians)
    interior = ~ring
    gap = float(np.max(np.abs(gram[:, interior] - R[:, interior]))) if np.any(interior) else 0.0
    return CoefficientField(space, flow.times, R, S, ellipticity, gap, flow.start)


def coefficient_holder_report(coeffs: CoefficientField, gamma, stride=None):
    """Discrete Hölder seminorms of ``R`` and ``S``: exponent ``gamma`` in time, ``min(2 gamma, 1)`` in space."""
    if not 0.0 < gamma < 1.0:
        raise ParameterError("gamma must lie in (0, 1)")
    beta = min(2.0 * gamma, 1.0)
    if beta >= 1.0:
        beta = 1.0 - 1e-12
    times = coeffs.slice_times
    out = {"gamma": gamma, "space_exponent": beta}
    for name, arr in (("R", coeffs.R), ("S", coeffs.S)):
        out[f"{name}_time"] = analysis.holder_seminorm(arr, gamma, times, stride=stride).seminorm
        out[f"{name}_space"] = max(_space_seminorm(coeffs.space, arr[m], beta) for m in range(0, arr.shape[0], stride or 1))
    return out


def _space_seminorm(space, field, beta):
    """Hölder seminorm over lattice node pairs along each axis of one time slice."""
    best = 0.0
    for a, axis in enumerate(space.axes):
        # move axis a first so each line of nodes is a "path" in that coordinate
        vals = np.moveaxis(field, a, 0)
        best = max(best, analysis.holder_seminorm(vals, beta, axis).seminorm)
    return best
