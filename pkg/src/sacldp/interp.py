"""Cubic interpolation of lattice data at off-lattice points.

1D data are handled in batches: a stack of rows sharing one uniform lattice is
fitted once (not-a-knot cubic splines) and each row is evaluated at its own
query points.  2D data use bicubic ``RectBivariateSpline`` per slice.
"""

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .grid import SpaceGrid


class StackedSpline1D:
    """Cubic splines for ``values[..., N]`` on the uniform axis ``x``."""

    def __init__(self, x, values):
        self.x = np.asarray(x, dtype=float)
        values = np.asarray(values, dtype=float)
        self.batch = values.shape[:-1]
        self.h = self.x[1] - self.x[0]
        cs = CubicSpline(self.x, values, axis=-1)
        # (4, N-1, *batch) -> (*batch, N-1, 4)
        self.c = np.moveaxis(cs.c, (0, 1), (-1, -2))

    def __call__(self, q, nu=0):
        """Evaluate row-wise at ``q[..., P]`` (leading shape must match the batch)."""
        q = np.asarray(q, dtype=float)
        cells = len(self.x) - 1
        idx = np.clip(np.floor((q - self.x[0]) / self.h).astype(np.intp), 0, cells - 1)
        d = q - self.x[idx]
        rows = np.arange(int(np.prod(self.batch)), dtype=np.intp).reshape(self.batch + (1,) * (q.ndim - len(self.batch)))
        coef = self.c.reshape(-1, 4)[rows * cells + idx]
        c3, c2, c1, c0 = coef[..., 0], coef[..., 1], coef[..., 2], coef[..., 3]
        if nu == 0:
            return ((c3 * d + c2) * d + c1) * d + c0
        if nu == 1:
            return (3.0 * c3 * d + 2.0 * c2) * d + c1
        if nu == 2:
            return 6.0 * c3 * d + 2.0 * c2
        raise ValueError("nu must be 0, 1 or 2")

    def row(self, k, q, nu=0):
        """Evaluate only batch row ``k`` (1D batch) at the points ``q``."""
        idx = np.clip(np.floor((q - self.x[0]) / self.h).astype(np.intp), 0, len(self.x) - 2)
        d = q - self.x[idx]
        c = self.c[k][idx]
        if nu == 0:
            return ((c[:, 0] * d + c[:, 1]) * d + c[:, 2]) * d + c[:, 3]
        if nu == 1:
            return (3.0 * c[:, 0] * d + 2.0 * c[:, 1]) * d + c[:, 2]
        raise ValueError("nu must be 0 or 1")


class LatticeInterpolant:
    """Interpolate a stack of scalar lattice fields ``values[B, *space.shape]``.

    ``evaluate(points[B, ..., n])`` returns values at the points, one slice per
    batch entry; ``gradient`` returns ``(..., n)`` first derivatives.
    """

    def __init__(self, space: SpaceGrid, values):
        self.space = space
        values = np.asarray(values, dtype=float)
        self.values = values
        if space.dim == 1:
            self._spline = StackedSpline1D(space.axes[0], values)
        else:
            x, y = space.axes
            self._splines = [RectBivariateSpline(x, y, v, kx=3, ky=3, s=0) for v in values]

    def _eval2d(self, points, dx=0, dy=0):
        out = np.empty(points.shape[:-1])
        for b, spl in enumerate(self._splines):
            p = points[b]
            out[b] = spl.ev(p[..., 0], p[..., 1], dx=dx, dy=dy)
        return out

    def evaluate(self, points):
        points = np.asarray(points, dtype=float)
        if self.space.dim == 1:
            flat = points[..., 0].reshape(points.shape[0], -1)
            return self._spline(flat).reshape(points.shape[:-1])
        return self._eval2d(points)

    def gradient(self, points):
        points = np.asarray(points, dtype=float)
        if self.space.dim == 1:
            flat = points[..., 0].reshape(points.shape[0], -1)
            return self._spline(flat, nu=1).reshape(points.shape)
        gx = self._eval2d(points, dx=1)
        gy = self._eval2d(points, dy=1)
        return np.stack([gx, gy], axis=-1)


# Fourth-order stencils: centered inside, one-sided on the two outermost nodes.
_D1_CENTER = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D1_EDGE = (np.array([-25.0, 48.0, -36.0, 16.0, -3.0, 0.0]) / 12.0,
            np.array([-3.0, -10.0, 18.0, -6.0, 1.0, 0.0]) / 12.0)
_D2_CENTER = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_D2_EDGE = (np.array([45.0, -154.0, 214.0, -156.0, 61.0, -10.0]) / 12.0,
            np.array([10.0, -15.0, -4.0, 14.0, -6.0, 1.0]) / 12.0)


def _stencil_derivative(v, h, center, edge, power):
    """Apply a 5-point centered stencil and 6-point edge stencils along the last axis."""
    N = v.shape[-1]
    out = np.zeros_like(v)
    for j, c in enumerate(center):
        out[..., 2:N - 2] += c * v[..., j:N - 4 + j]
    for row, c in enumerate(edge):
        out[..., row] = v[..., :6] @ c
        # mirrored stencil on the far edge; odd derivatives flip sign
        out[..., N - 1 - row] = (v[..., N - 6:][..., ::-1] @ c) * (-1.0 if power == 1 else 1.0)
    return out / h**power


def derivative(values, h, axis, deriv=1, order=4):
    """First or second derivative along ``axis`` of uniformly sampled data.

    ``order=4`` uses fourth-order stencils (needs at least 6 samples);
    ``order=2`` uses centered second-order stencils with second-order
    one-sided stencils at the ends.
    """
    v = np.moveaxis(np.asarray(values, dtype=float), axis, -1)
    if order == 4 and v.shape[-1] >= 6:
        if deriv == 1:
            out = _stencil_derivative(v, h, _D1_CENTER, _D1_EDGE, 1)
        elif deriv == 2:
            out = _stencil_derivative(v, h, _D2_CENTER, _D2_EDGE, 2)
        else:
            raise ValueError("deriv must be 1 or 2")
    elif deriv == 1:
        out = np.gradient(v, h, axis=-1, edge_order=2)
    elif deriv == 2:
        out = np.empty_like(v)
        out[..., 1:-1] = (v[..., 2:] - 2.0 * v[..., 1:-1] + v[..., :-2]) / h**2
        out[..., 0] = (2.0 * v[..., 0] - 5.0 * v[..., 1] + 4.0 * v[..., 2] - v[..., 3]) / h**2
        out[..., -1] = (2.0 * v[..., -1] - 5.0 * v[..., -2] + 4.0 * v[..., -3] - v[..., -4]) / h**2
    else:
        raise ValueError("deriv must be 1 or 2")
    return np.moveaxis(out, -1, axis)


def lattice_derivatives(values, space: SpaceGrid, axis_offset, order=4):
    """Finite-difference gradient of lattice data whose spatial axes start at ``axis_offset``.

    Returns an array with a new trailing axis of length ``dim`` holding the
    partial derivatives.
    """
    grads = [derivative(values, h, axis_offset + a, 1, order) for a, h in enumerate(space.spacing)]
    return np.stack(grads, axis=-1)


def second_derivative(values, h, axis, order=4):
    """Pure second derivative along ``axis``."""
    return derivative(values, h, axis, 2, order)
