"""Uniform space and time lattices."""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ParameterError


def _as_tuple(values):
    return tuple(float(v) for v in np.atleast_1d(values))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition ``0 = t_0 < ... < t_M = T``."""

    T: float
    steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise ParameterError(f"final time must be positive, got {self.T}")
        if int(self.steps) < 1:
            raise ParameterError("a time grid needs at least two nodes")
        object.__setattr__(self, "steps", int(self.steps))

    @classmethod
    def from_step(cls, T, dt):
        """Build a grid from a step size that must divide ``T``."""
        steps = T / dt
        if not np.isclose(steps, round(steps), rtol=0, atol=1e-8 * max(1.0, steps)):
            raise ParameterError(f"dt={dt} does not divide T={T}")
        return cls(float(T), int(round(steps)))

    @property
    def dt(self):
        return self.T / self.steps

    @cached_property
    def times(self):
        return np.linspace(0.0, self.T, self.steps + 1)

    def __len__(self):
        return self.steps + 1

    def index(self, t):
        """Return the node index of time ``t``; raise if ``t`` is not a node."""
        k = t / self.dt
        j = int(round(k))
        if not (0 <= j <= self.steps) or abs(k - j) > 1e-8:
            raise ParameterError(f"time {t} is not a node of the time grid")
        return j

    def refine(self, factor=2):
        return TimeGrid(self.T, self.steps * factor)


@dataclass(frozen=True)
class SpaceGrid:
    """Axis-aligned box ``[lower, upper]`` with ``cells[a]`` uniform cells per axis."""

    lower: tuple
    upper: tuple
    cells: tuple

    def __post_init__(self):
        lower, upper = _as_tuple(self.lower), _as_tuple(self.upper)
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        if not (len(lower) == len(upper) == len(cells)):
            raise ParameterError("lower, upper and cells must have the same length")
        if len(lower) not in (1, 2):
            raise ParameterError("only dimensions 1 and 2 are supported")
        if any(u <= l for l, u in zip(lower, upper)):
            raise ParameterError("box must have upper > lower on every axis")
        if any(c < 3 for c in cells):
            raise ParameterError("need at least 3 cells per axis")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def from_spacing(cls, lower, upper, dx):
        lower, upper = _as_tuple(lower), _as_tuple(upper)
        cells = []
        for l, u in zip(lower, upper):
            n = (u - l) / dx
            if not np.isclose(n, round(n), rtol=0, atol=1e-8 * max(1.0, n)):
                raise ParameterError(f"dx={dx} does not divide the box edge {u - l}")
            cells.append(int(round(n)))
        return cls(lower, upper, tuple(cells))

    @property
    def dim(self):
        return len(self.lower)

    @property
    def shape(self):
        return tuple(c + 1 for c in self.cells)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def spacing(self):
        return tuple((u - l) / c for l, u, c in zip(self.lower, self.upper, self.cells))

    @cached_property
    def axes(self):
        return tuple(np.linspace(l, u, c + 1) for l, u, c in zip(self.lower, self.upper, self.cells))

    @cached_property
    def nodes(self):
        """Lattice coordinates, shape ``shape + (dim,)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def refine(self, factor=2):
        return SpaceGrid(self.lower, self.upper, tuple(c * factor for c in self.cells))

    def contains(self, points, tol=1e-12):
        points = np.asarray(points, dtype=float)
        lo = np.asarray(self.lower) - tol
        hi = np.asarray(self.upper) + tol
        return np.all((points >= lo) & (points <= hi), axis=-1)
