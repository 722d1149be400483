"""Discrete Hölder seminorms and the Garsia-Rodemich-Rumsey bound for sampled paths.

Every function takes a time-indexed array ``values[m, ...]`` sampled at
``times[m]``; the state axes are reduced with a state norm:

``"sup"``
    maximum absolute value over all state entries;
``"c1"``
    sup norm plus the sup norm of the finite-difference gradient over the
    leading ``len(spacing)`` state axes (a discrete C^1 norm).

Pair maximisation is exact over all grid pairs (O(M^2)); pass ``stride`` to
subsample the time axis for long paths.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ParameterError

NORMS = ("sup", "c1")


@dataclass(frozen=True)
class HolderReport:
    """Discrete Hölder seminorm of a sampled path."""

    exponent: float
    seminorm: float
    sup_norm: float
    pair_count: int
    argmax: tuple = (0, 0)

    def to_dict(self):
        d = asdict(self)
        d["argmax"] = list(self.argmax)
        return d


def _prepare(values, times, stride):
    values = np.asarray(values, dtype=float)
    if values.shape[0] < 2:
        raise ParameterError("need at least two time nodes")
    if times is None:
        times = np.linspace(0.0, 1.0, values.shape[0])
    times = np.asarray(times, dtype=float)
    if times.shape[0] != values.shape[0]:
        raise ParameterError("times and values disagree in length")
    if np.any(np.diff(times) <= 0.0):
        raise ParameterError("times must be strictly increasing")
    if stride is not None and stride > 1:
        values, times = values[::stride], times[::stride]
    return values, times


def state_norm(diff, norm="sup", spacing=None):
    """Norm of each state in ``diff[k, ...]`` (one value per leading index)."""
    if norm not in NORMS:
        raise ParameterError(f"unknown norm {norm!r}; choose from {NORMS}")
    flat = np.abs(diff).reshape(diff.shape[0], -1)
    out = flat.max(axis=1) if flat.shape[1] else np.zeros(diff.shape[0])
    if norm == "c1":
        if spacing is None:
            raise ParameterError("the c1 norm needs the lattice spacing")
        for a, h in enumerate(spacing):
            g = np.gradient(diff, h, axis=1 + a, edge_order=2)
            out = out + np.abs(g).reshape(diff.shape[0], -1).max(axis=1)
    return out


def holder_seminorm(values, alpha, times=None, norm="sup", spacing=None, stride=None) -> HolderReport:
    """``sup_{s != t} ||f(t) - f(s)|| / |t - s|^alpha`` over all grid pairs.

    ``alpha = 0`` gives the oscillation ``sup ||f(t) - f(s)||``.

    Examples
    --------
    >>> holder_seminorm(np.linspace(0, 1, 11), 0.5, times=np.linspace(0, 1, 11)).seminorm
    1.0
    """
    if not 0.0 <= alpha < 1.0:
        raise ParameterError("alpha must lie in [0, 1)")
    values, times = _prepare(values, times, stride)
    M = values.shape[0]
    best, arg = 0.0, (0, 0)
    for k in range(1, M):
        num = state_norm(values[k:] - values[:-k], norm, spacing)
        q = num / (times[k:] - times[:-k]) ** alpha
        i = int(np.argmax(q))
        if q[i] > best:
            best, arg = float(q[i]), (i, i + k)
    sup = float(state_norm(values, norm, spacing).max())
    return HolderReport(float(alpha), best, sup, M * (M - 1) // 2, arg)


def _trapezoid_weights(times):
    w = np.zeros_like(times)
    h = np.diff(times)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def grr_rhs(values, alpha, p, times=None, norm="sup", spacing=None, stride=None, band=None):
    """``(int int ||f(x) - f(y)||^p / |x - y|^(alpha p + 2) dx dy)^(1/p)`` off the diagonal.

    The double integral over ``[0, T]^2`` uses the tensor trapezoid rule and
    skips the pairs with ``|x - y| < band`` (default: the time step), where the
    discrete integrand is singular.
    """
    if p < 1.0:
        raise ParameterError("p must be at least 1")
    if alpha <= 0.0:
        raise ParameterError("alpha must be positive")
    values, times = _prepare(values, times, stride)
    band = float(np.min(np.diff(times))) if band is None else band
    w = _trapezoid_weights(times)
    total = 0.0
    for k in range(1, values.shape[0]):
        gap = times[k:] - times[:-k]
        keep = gap >= band * (1.0 - 1e-12)
        if not np.any(keep):
            continue
        num = state_norm(values[k:] - values[:-k], norm, spacing)
        integrand = num[keep] ** p / gap[keep] ** (alpha * p + 2.0)
        total += 2.0 * float(np.sum(w[k:][keep] * w[:-k][keep] * integrand))
    return total ** (1.0 / p)


@dataclass(frozen=True)
class MomentReport:
    """Outcome of the moment hypothesis check on an ensemble of paths."""

    p: float
    q: float
    slope: float
    expected_slope: float
    moment_constant: float
    alpha: float
    mean_seminorm_p: float
    empirical_constant: float
    hypothesis_verified: bool
    lags: tuple
    moments: tuple

    def to_dict(self):
        d = asdict(self)
        d["lags"] = list(self.lags)
        d["moments"] = list(self.moments)
        return d


def moment_holder_check(ensemble, p, q, times=None, norm="sup", spacing=None, lags=None, stride=None,
                        tolerance=0.2) -> MomentReport:
    """Fit ``E||f(t) - f(s)||^p ~ Lambda |t - s|^(p / 2q)`` and report the Hölder moment.

    ``ensemble`` has shape (S, M+1, ...).  The slope of the log-log fit over
    the lags (in steps; default a geometric ladder up to a quarter of the
    path) is compared against ``p / (2q)``; a relative deviation above
    ``tolerance`` marks the hypothesis as unverified.  ``moment_constant`` is
    the largest ratio ``E||.||^p / lag^(p/2q)`` over the lags and
    ``empirical_constant = E[seminorm^p] / (moment_constant + 1)`` at
    ``alpha = 1/(2q) - 1/p - 0.05``.
    """
    ensemble = np.asarray(ensemble, dtype=float)
    if ensemble.ndim < 2 or ensemble.shape[0] < 1:
        raise ParameterError("ensemble must have shape (samples, time, ...)")
    if times is None:
        times = np.linspace(0.0, 1.0, ensemble.shape[1])
    times = np.asarray(times, dtype=float)
    M = ensemble.shape[1] - 1
    dt = float(times[1] - times[0])
    if lags is None:
        lags = np.unique(np.geomspace(1, max(M // 4, 2), 12).astype(int))
    lags = np.asarray(lags, dtype=int)
    moments = []
    for k in lags:
        d = ensemble[:, k:] - ensemble[:, :-k]
        nrm = state_norm(d.reshape((-1,) + d.shape[2:]), norm, spacing)
        moments.append(float(np.mean(nrm**p)))
    moments = np.asarray(moments)
    h = lags * dt
    expected = p / (2.0 * q)
    positive = moments > 0.0
    if np.count_nonzero(positive) >= 2:
        slope = float(np.polyfit(np.log(h[positive]), np.log(moments[positive]), 1)[0])
    else:
        slope = 0.0
    lam = float(np.max(moments / h**expected))
    alpha = 1.0 / (2.0 * q) - 1.0 / p - 0.05
    if alpha > 0.0:
        sem = np.array([holder_seminorm(path, alpha, times, norm, spacing, stride).seminorm for path in ensemble])
        mean_sem = float(np.mean(sem**p))
    else:
        mean_sem = float("nan")
    verified = bool(lam == 0.0 or abs(slope - expected) <= tolerance * expected)
    return MomentReport(float(p), float(q), slope, expected, lam, alpha, mean_sem, mean_sem / (lam + 1.0),
                        verified, tuple(int(k) for k in lags), tuple(float(m) for m in moments))


def grr_constant(ensemble, alpha, p, times=None, norm="sup", spacing=None, stride=None):
    """Smallest ``C`` with ``holder_seminorm <= C * grr_rhs`` for every path of the ensemble."""
    ratios = []
    for path in np.asarray(ensemble, dtype=float):
        lhs = holder_seminorm(path, alpha, times, norm, spacing, stride).seminorm
        rhs = grr_rhs(path, alpha, p, times, norm, spacing, stride)
        if rhs > 0.0:
            ratios.append(lhs / rhs)
        elif lhs > 0.0:
            ratios.append(np.inf)
    return float(max(ratios)) if ratios else 0.0, np.asarray(ratios)


def holder_refinement(values, alpha, times, norm="sup", spacing=None, levels=3) -> list:
    """Seminorms on successively coarser subgrids (stride 1, 2, 4, ...)."""
    return [holder_seminorm(values, alpha, times, norm, spacing, stride=2**j).seminorm for j in range(levels)]

