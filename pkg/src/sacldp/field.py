"""Vector-field Brownian motion given by a finite mode expansion.

The field is

    X_sigma(t, x) = sqrt(sigma) * sum_l int_0^t X^(l)(s, x) dB_l(s) + int_0^t X^(0)(s, x) ds

with ``L`` noise modes ``X^(1..L)`` and a drift mode ``X^(0)``.  Every mode is
an analytic profile (amplitude x envelope x shape) that vanishes identically on
and outside the boundary of the noise region ``U``; ``U`` is the enclosing box
shrunk by ``margin`` on every side.
"""

import csv
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from . import rng
from .errors import DomainError, ParameterError
from .grid import SpaceGrid, TimeGrid

KINDS = ("sine", "constant", "linear", "zero")
AMPLITUDE_LAWS = ("inverse_square", "inverse_power", "equal")


def _smootherstep(r):
    # C^3 ramp from 0 to 1 on [0, 1]; derivative is 140 r^3 (1-r)^3
    return r**4 * (35.0 - 84.0 * r + 70.0 * r**2 - 20.0 * r**3)


def _envelope_axis(s, plateau):
    """Envelope value and d/ds on normalised coordinate ``s`` (support is ``|s| < 1``)."""
    inside = np.abs(s) < 1.0
    if plateau <= 0.0:
        q = np.where(inside, 1.0 - s * s, 0.0)
        e = q**4
        de = -8.0 * s * q**3
    else:
        r = np.clip((np.abs(s) - plateau) / (1.0 - plateau), 0.0, 1.0)
        e = np.where(inside, 1.0 - _smootherstep(r), 0.0)
        de = np.where(inside, -140.0 * r**3 * (1.0 - r) ** 3 * np.sign(s) / (1.0 - plateau), 0.0)
    return e, de


def _sine_table(theta, ks):
    """``prod_a sin(k_{l,a} theta_a)`` for every row ``k_l`` of ``ks``; mode-first shape (len(ks), ...).

    Uses the recurrence ``sin((k+1)t) = 2 cos(t) sin(kt) - sin((k-1)t)`` so
    only one sine and one cosine are evaluated per coordinate.
    """
    kmax = int(ks.max())
    out = None
    for a in range(theta.shape[-1]):
        t = theta[..., a]
        table = np.empty((kmax + 1,) + t.shape)
        table[0] = 0.0
        table[1] = np.sin(t)
        two_cos = 2.0 * np.cos(t)
        for k in range(2, kmax + 1):
            np.multiply(two_cos, table[k - 1], out=table[k])
            table[k] -= table[k - 2]
        part = table[ks[:, a].astype(np.intp)]
        out = part if out is None else out * part
    return out


@dataclass(frozen=True)
class Mode:
    """One vector field ``amplitude * tau(t) * envelope(x) * shape(x) * e_direction``.

    ``kind`` selects the shape: ``sine`` (tensor product of ``sin(k pi xhat)``
    over the support), ``constant``, ``linear`` (the raw coordinate
    ``x[direction]``) or ``zero``.  ``plateau`` in ``[0, 1)`` selects the
    envelope: 0 gives the bump ``(1 - s^2)^4``; a positive value gives an
    envelope equal to 1 on the inner fraction ``plateau`` of the support with a
    C^3 transition to 0 at its edge.
    """

    kind: str = "sine"
    amplitude: float = 1.0
    direction: int = 0
    wavenumber: tuple = (1,)
    support: Optional[tuple] = None
    plateau: float = 0.0
    time_factor: Optional[Callable[[float], float]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown mode kind {self.kind!r}")
        if not 0.0 <= self.plateau < 1.0:
            raise ParameterError("plateau must lie in [0, 1)")
        object.__setattr__(self, "wavenumber", tuple(int(k) for k in np.atleast_1d(self.wavenumber)))
        if self.support is not None:
            lo, hi = self.support
            object.__setattr__(
                self, "support", (tuple(float(v) for v in np.atleast_1d(lo)), tuple(float(v) for v in np.atleast_1d(hi)))
            )

    def _profile(self, x, lower, upper):
        """Scalar profile g and its gradient; ``x`` has shape (..., n)."""
        n = x.shape[-1]
        if self.kind == "zero" or self.amplitude == 0.0:
            return np.zeros(x.shape[:-1]), np.zeros(x.shape)
        lower = np.asarray(lower)
        upper = np.asarray(upper)
        width = upper - lower
        xhat = (x - lower) / width
        s = 2.0 * xhat - 1.0
        env = np.empty(x.shape)
        denv = np.empty(x.shape)
        for a in range(n):
            env[..., a], d = _envelope_axis(s[..., a], self.plateau)
            denv[..., a] = d * 2.0 / width[a]
        env_total = np.prod(env, axis=-1)
        genv = np.empty(x.shape)
        for a in range(n):
            others = np.prod(np.delete(env, a, axis=-1), axis=-1) if n > 1 else 1.0
            genv[..., a] = denv[..., a] * others

        if self.kind == "constant":
            shape = np.ones(x.shape[:-1])
            gshape = np.zeros(x.shape)
        elif self.kind == "linear":
            shape = x[..., self.direction].copy()
            gshape = np.zeros(x.shape)
            gshape[..., self.direction] = 1.0
        else:
            ks = self.wavenumber if len(self.wavenumber) == n else self.wavenumber[:1] * n
            sines = np.empty(x.shape)
            coss = np.empty(x.shape)
            for a in range(n):
                arg = ks[a] * np.pi * xhat[..., a]
                sines[..., a] = np.sin(arg)
                coss[..., a] = np.cos(arg) * ks[a] * np.pi / width[a]
            shape = np.prod(sines, axis=-1)
            gshape = np.empty(x.shape)
            for a in range(n):
                others = np.prod(np.delete(sines, a, axis=-1), axis=-1) if n > 1 else 1.0
                gshape[..., a] = coss[..., a] * others
        g = env_total * shape
        grad = env_total[..., None] * gshape + shape[..., None] * genv
        return g, grad

    def scale(self, t):
        tau = 1.0 if self.time_factor is None else float(self.time_factor(t))
        return self.amplitude * tau

    def to_dict(self):
        out = {
            "kind": self.kind,
            "amplitude": self.amplitude,
            "direction": self.direction,
            "wavenumber": list(self.wavenumber),
            "plateau": self.plateau,
        }
        if self.support is not None:
            out["support_lower"] = list(self.support[0])
            out["support_upper"] = list(self.support[1])
        return out


@dataclass(frozen=True)
class ModeSet:
    """Modes ``X^(0..L)`` on the box ``[lower, upper]``; index 0 is the drift.

    Modes without an explicit support live on ``U = [lower + margin, upper - margin]``.
    """

    lower: tuple
    upper: tuple
    modes: tuple
    margin: float = 0.0

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "modes", tuple(self.modes))
        if len(lower) not in (1, 2) or len(lower) != len(upper):
            raise ParameterError("box must be 1- or 2-dimensional")
        if len(self.modes) < 2:
            raise ParameterError("need a drift mode and at least one noise mode (L >= 1)")
        ulo, uhi = np.asarray(self.u_lower), np.asarray(self.u_upper)
        if np.any(uhi <= ulo):
            raise ParameterError("margin leaves an empty noise region")
        for m in self.modes:
            if m.direction >= self.dim:
                raise ParameterError(f"mode direction {m.direction} exceeds dimension {self.dim}")
            if m.support is not None:
                slo, shi = np.asarray(m.support[0]), np.asarray(m.support[1])
                if slo.size != self.dim or np.any(slo < ulo - 1e-12) or np.any(shi > uhi + 1e-12) or np.any(shi <= slo):
                    raise ParameterError("mode support must be a non-empty sub-box of U")

    @classmethod
    def default(cls, dim=1, count=8, amplitude=0.2, law="inverse_square", power=2.0,
                lower=None, upper=None, margin=0.0, drift=0.0):
        """Tensor sine bumps ``c_l sin(k pi xhat) (1 - s^2)^4`` with ``c_l = c / l^2``.

        In 2D mode ``l`` points along axis ``(l - 1) % 2`` with wavenumber
        ``((l + 1) // 2,) * 2``.  ``drift`` is the amplitude of a first sine
        mode used as ``X^(0)`` (zero by default).
        """
        if count < 1:
            raise ParameterError("need at least one noise mode")
        if law not in AMPLITUDE_LAWS:
            raise ParameterError(f"unknown amplitude law {law!r}")
        lower = (0.0,) * dim if lower is None else lower
        upper = (1.0,) * dim if upper is None else upper
        modes = [Mode("sine", drift, 0, (1,) * dim) if drift else Mode("zero")]
        for l in range(1, count + 1):
            if law == "inverse_square":
                c = amplitude / l**2
            elif law == "inverse_power":
                c = amplitude / l**power
            else:
                c = amplitude
            if dim == 1:
                modes.append(Mode("sine", c, 0, (l,)))
            else:
                k = (l + 1) // 2
                modes.append(Mode("sine", c, (l - 1) % 2, (k, k)))
        return cls(lower, upper, tuple(modes), margin)

    @property
    def dim(self):
        return len(self.lower)

    @property
    def L(self):
        return len(self.modes) - 1

    @property
    def u_lower(self):
        return tuple(l + self.margin for l in self.lower)

    @property
    def u_upper(self):
        return tuple(u - self.margin for u in self.upper)

    @property
    def time_independent(self):
        return all(m.time_factor is None for m in self.modes)

    def with_modes(self, modes):
        return replace(self, modes=tuple(modes))

    def scaled(self, factor):
        """Copy with every noise-mode amplitude multiplied by ``factor`` (drift unchanged)."""
        modes = [self.modes[0]] + [replace(m, amplitude=m.amplitude * factor) for m in self.modes[1:]]
        return self.with_modes(modes)

    def check_points(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DomainError(f"points must have trailing dimension {self.dim}")
        lo = np.asarray(self.lower) - 1e-12
        hi = np.asarray(self.upper) + 1e-12
        if np.any(x < lo) or np.any(x > hi) or not np.all(np.isfinite(x)):
            raise DomainError("point outside the enclosing box")
        return x

    def evaluate(self, t, x, jacobian=False):
        """Evaluate all modes at points ``x`` of shape (..., n).

        Returns values of shape (..., L+1, n) and, with ``jacobian=True``, also
        ``J[..., l, i, k] = d_k X^(l)_i`` of shape (..., L+1, n, n).
        """
        x = self.check_points(x)
        n = self.dim
        vals = np.zeros(x.shape[:-1] + (self.L + 1, n))
        jac = np.zeros(x.shape[:-1] + (self.L + 1, n, n)) if jacobian else None
        for l, mode in enumerate(self.modes):
            if mode.kind == "zero" or mode.amplitude == 0.0:
                continue
            lo, hi = mode.support if mode.support is not None else (self.u_lower, self.u_upper)
            g, grad = mode._profile(x, lo, hi)
            c = mode.scale(t)
            vals[..., l, mode.direction] = c * g
            if jacobian:
                jac[..., l, mode.direction, :] = c * grad
        return (vals, jac) if jacobian else vals

    @cached_property
    def _groups(self):
        """Modes grouped by (kind, support, plateau) for vectorised evaluation."""
        groups = {}
        for l, mode in enumerate(self.modes):
            if mode.kind == "zero" or mode.amplitude == 0.0:
                continue
            lo, hi = mode.support if mode.support is not None else (self.u_lower, self.u_upper)
            key = (mode.kind, lo, hi, mode.plateau)
            groups.setdefault(key, []).append(l)
        out = []
        for (kind, lo, hi, plateau), idx in groups.items():
            ks = []
            for l in idx:
                k = self.modes[l].wavenumber
                ks.append(k if len(k) == self.dim else k[:1] * self.dim)
            out.append((kind, np.asarray(lo), np.asarray(hi), plateau, np.asarray(idx),
                        np.asarray([self.modes[l].direction for l in idx]), np.asarray(ks, dtype=float)))
        return out

    def combine(self, t, x, weights, drift_weight):
        """Weighted sum ``drift_weight * X^(0) + sum_l weights[..., l-1] * X^(l)`` at ``x`` (..., n).

        Equivalent to contracting :meth:`evaluate` with the weights, without
        forming the per-mode values or gradients.
        """
        x = self.check_points(x)
        weights = np.asarray(weights, dtype=float)
        w_full = np.concatenate(
            [np.broadcast_to(np.asarray(drift_weight, dtype=float), weights.shape[:-1] + (1,)), weights], axis=-1
        )
        scales = np.array([m.scale(t) for m in self.modes])
        out = np.zeros(np.broadcast_shapes(x.shape[:-1], weights.shape[:-1]) + (self.dim,))
        for kind, lo, hi, plateau, idx, dirs, ks in self._groups:
            xhat = (x - lo) / (hi - lo)
            env = np.ones(x.shape[:-1])
            for a in range(self.dim):
                env = env * _envelope_axis(2.0 * xhat[..., a] - 1.0, plateau)[0]
            if kind == "sine":
                shape = _sine_table(np.pi * xhat, ks)
            elif kind == "constant":
                shape = np.ones((len(idx),) + x.shape[:-1])
            else:
                shape = np.moveaxis(x[..., dirs], -1, 0)
            shape = shape * env
            wl = w_full[..., idx] * scales[idx]
            for a in range(self.dim):
                sel = dirs == a
                if np.all(sel):
                    out[..., a] += np.einsum("l...,...l->...", shape, wl)
                elif np.any(sel):
                    out[..., a] += np.einsum("l...,...l->...", shape[sel], wl[..., sel])
        return out

    def ring_mask(self, space: SpaceGrid):
        """Lattice nodes on or outside the boundary of ``U``."""
        nodes = space.nodes
        lo, hi = np.asarray(self.u_lower), np.asarray(self.u_upper)
        return np.any((nodes <= lo + 1e-12) | (nodes >= hi - 1e-12), axis=-1)

    def to_dict(self):
        return {
            "dim": self.dim,
            "lower": list(self.lower),
            "upper": list(self.upper),
            "margin": self.margin,
            "mode": [m.to_dict() for m in self.modes],
        }

    @classmethod
    def from_dict(cls, data):
        modes = []
        for m in data["mode"]:
            support = None
            if "support_lower" in m:
                support = (m["support_lower"], m["support_upper"])
            modes.append(Mode(m.get("kind", "sine"), float(m.get("amplitude", 1.0)), int(m.get("direction", 0)),
                              tuple(m.get("wavenumber", [1])), support, float(m.get("plateau", 0.0))))
        return cls(tuple(data["lower"]), tuple(data["upper"]), tuple(modes), float(data.get("margin", 0.0)))


@dataclass(frozen=True)
class FieldPath:
    """One realisation of ``X_sigma`` in mode-increment form.

    ``increments[m, l-1]`` is ``sqrt(sigma) * (B_l(t_{m+1}) - B_l(t_m))``.
    """

    times: TimeGrid
    increments: np.ndarray
    sigma: float
    seed: Optional[int] = None

    def __post_init__(self):
        inc = np.array(self.increments, dtype=float)
        if inc.ndim != 2 or inc.shape[0] != self.times.steps:
            raise ParameterError("increments must have shape (steps, L)")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def L(self):
        return self.increments.shape[1]

    def coarsen(self, factor):
        """Same Brownian path on a grid with ``factor`` times larger steps."""
        if self.times.steps % factor:
            raise ParameterError("factor must divide the number of steps")
        inc = self.increments.reshape(self.times.steps // factor, factor, self.L).sum(axis=1)
        return FieldPath(TimeGrid(self.times.T, self.times.steps // factor), inc, self.sigma, self.seed)

    def brownian(self):
        """Scaled Brownian motions ``sqrt(sigma) B_l(t_m)``, shape (M+1, L)."""
        out = np.zeros((self.times.steps + 1, self.L))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "mode", "increment"])
            for m in range(self.times.steps):
                for l in range(self.L):
                    w.writerow([m, l + 1, repr(float(self.increments[m, l]))])


def covariance(spec: ModeSet, t, x, y):
    """Local characteristic ``a(t, x, y) = sum_i X^(i)(t, x) X^(i)(t, y)^T``."""
    vx = spec.evaluate(t, np.asarray(x, dtype=float).reshape(spec.dim))[1:]
    vy = spec.evaluate(t, np.asarray(y, dtype=float).reshape(spec.dim))[1:]
    return np.einsum("li,lj->ij", vx, vy)


def sup_trace_bound(spec: ModeSet, space: SpaceGrid, times: TimeGrid):
    """``sup_x int_0^T sum_i |X^(i)(r, x)|^2 dr`` over lattice nodes (trapezoid in time)."""
    nodes = space.nodes.reshape(-1, spec.dim)
    if spec.time_independent:
        v = spec.evaluate(0.0, nodes)[:, 1:]
        return float(np.max(np.sum(v**2, axis=(-1, -2))) * times.T)
    dens = np.array([np.sum(spec.evaluate(t, nodes)[:, 1:] ** 2, axis=(-1, -2)) for t in times.times])
    return float(np.max(np.trapezoid(dens, times.times, axis=0)))


def sample_path(spec: ModeSet, times: TimeGrid, sigma, seed):
    """Draw ``sqrt(sigma) dB_l(t_m)`` for every step and noise mode."""
    if sigma < 0:
        raise ParameterError(f"sigma must be non-negative, got {sigma}")
    if len(times) < 2:
        raise ParameterError("time grid needs at least two nodes")
    if sigma == 0:
        inc = np.zeros((times.steps, spec.L))
    else:
        gen = rng.generator(seed, "field")
        inc = gen.standard_normal((times.steps, spec.L)) * np.sqrt(times.dt * sigma)
    return FieldPath(times, inc, float(sigma), seed)


def sample_increments(spec: ModeSet, times: TimeGrid, sigma, seeds):
    """Stack of ``sample_path`` increments for several seeds, shape (len(seeds), M, L)."""
    return np.stack([sample_path(spec, times, sigma, s).increments for s in seeds])


def evaluate_field_increment(spec: ModeSet, path: FieldPath, step, x):
    """``X_sigma(t_{m+1}, x) - X_sigma(t_m, x)`` from the stored increments."""
    if not 0 <= step < path.times.steps:
        raise IndexError(f"step {step} out of range")
    t = path.times.times[step]
    v = spec.evaluate(t, x)
    return np.einsum("...li,l->...i", v[..., 1:, :], path.increments[step]) + v[..., 0, :] * path.times.dt


def realize(spec: ModeSet, path: FieldPath, points):
    """``X_sigma(t_m, x)`` at every time node for the given points, shape (M+1, ..., n)."""
    points = np.asarray(points, dtype=float)
    out = np.zeros((path.times.steps + 1,) + points.shape)
    if spec.time_independent:
        v = spec.evaluate(0.0, points)
        noise = np.einsum("...li,ml->m...i", v[..., 1:, :], path.brownian())
        drift = v[..., 0, :][None] * path.times.times.reshape((-1,) + (1,) * points.ndim)
        return noise + drift
    for m in range(path.times.steps):
        out[m + 1] = out[m] + evaluate_field_increment(spec, path, m, points)
    return out
