"""
Piecewise-constant rate functions, holding times and Poisson processes.

All samplers invert the cumulative rate exactly on each constant piece, so no
accept-reject step is involved.  Randomness always comes from an explicit
``numpy.random.Generator`` handed in by the caller.

"""
from __future__ import annotations

import bisect
import math

import numpy as np

__all__ = [
    "LOG_ZERO",
    "RateFunction",
    "sample_holding_time",
    "holding_log_density",
    "sample_poisson_process",
]

#: Log of zero probability.  Smaller than every finite log value and saturating
#: under addition (``LOG_ZERO + x == LOG_ZERO`` for finite ``x``).
LOG_ZERO = -math.inf


class RateFunction:
    """
    A nonnegative rate that is constant on each piece ``[edges[k], edges[k+1])``.

    Past the last edge the final value is extended to infinity, so holding
    times with an unbounded horizon are well defined.

    Parameters
    ----------
    edges : sequence of float
        Strictly increasing piece boundaries, length ``K + 1``.
    values : sequence of float
        Finite nonnegative rates, length ``K``.

    """

    def __init__(self, edges, values):
        edges = np.asarray(edges, dtype=float)
        values = np.asarray(values, dtype=float)
        if edges.ndim != 1 or values.ndim != 1 or len(edges) != len(values) + 1:
            raise ValueError("need len(edges) == len(values) + 1")
        if len(values) == 0:
            raise ValueError("a rate function needs at least one piece")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("rates must be finite and nonnegative")
        self.edges = edges
        self.values = values
        self.cum = np.concatenate([[0.0], np.cumsum(values * np.diff(edges))])
        for a in (self.edges, self.values, self.cum):
            a.setflags(write=False)
        # plain lists for the scalar hot path
        self._e = edges.tolist()
        self._v = values.tolist()
        self._c = self.cum.tolist()

    @classmethod
    def constant(cls, rate, start, end):
        return cls([start, end], [rate])

    @property
    def start(self):
        return self._e[0]

    @property
    def end(self):
        return self._e[-1]

    def __repr__(self):
        return f"RateFunction(edges={self._e}, values={self._v})"

    def _piece(self, t):
        k = bisect.bisect_right(self._e, t) - 1
        return min(max(k, 0), len(self._v) - 1)

    def value(self, t):
        """Rate at time ``t`` (right-continuous)."""
        if t < self._e[0]:
            raise ValueError(f"time {t} before the start of the rate function")
        return self._v[self._piece(t)]

    def cumulative(self, t):
        """Integral of the rate from ``edges[0]`` to ``t``."""
        if t < self._e[0]:
            raise ValueError(f"time {t} before the start of the rate function")
        k = self._piece(t)
        return self._c[k] + self._v[k] * (t - self._e[k])

    def integral(self, a, b):
        """Exact integral of the rate over ``[a, b]``."""
        return self.cumulative(b) - self.cumulative(a)

    def inverse_cumulative(self, target):
        """Time ``t`` with ``cumulative(t) == target``; on a flat stretch, its right end."""
        c = self._c
        if target < 0:
            raise ValueError("target must be nonnegative")
        if target >= c[-1]:
            if self._v[-1] <= 0:
                return math.inf
            return self._e[-1] + (target - c[-1]) / self._v[-1]
        # c[k] <= target < c[k+1] picks a piece with positive rate
        k = bisect.bisect_right(c, target) - 1
        return self._e[k] + (target - c[k]) / self._v[k]

    def cumulative_many(self, t):
        """Vectorized :meth:`cumulative`."""
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.edges, t, side="right") - 1, 0, len(self.values) - 1)
        return self.cum[k] + self.values[k] * (t - self.edges[k])


def sample_holding_time(u, rate, horizon=math.inf, rng=None):
    """
    Draw the first point after ``u`` of a Poisson process with the given rate.

    Returns ``None`` when the point falls beyond ``horizon``; this happens with
    probability ``exp(-integral of rate over [u, horizon])``.
    """
    if not u < horizon:
        raise ValueError("need u < horizon")
    if math.isinf(horizon) and rate._v[-1] <= 0:
        raise ValueError("rate vanishes on an unbounded horizon; holding time never ends")
    target = rate.cumulative(u) + rng.standard_exponential()
    if not math.isinf(horizon) and target >= rate.cumulative(horizon):
        return None
    return rate.inverse_cumulative(target)


def holding_log_density(u, w, rate):
    """Log density ``log R(w) - int_u^w R`` of the first point after ``u``."""
    if not u < w:
        raise ValueError("need u < w")
    r = rate.value(w)
    if r <= 0:
        return LOG_ZERO
    return math.log(r) - rate.integral(u, w)


def sample_poisson_process(rate, a, b, rng):
    """
    Sample the points of a Poisson process with the given rate on ``[a, b)``.

    Each constant piece gets a Poisson count and uniform positions.

    Returns
    -------
    times : 1d ndarray
        Sorted event times.

    """
    if b < a:
        raise ValueError("need a <= b")
    edges = np.clip(rate.edges, a, b)
    if b > rate.end:
        edges = np.append(edges, b)
        values = np.append(rate.values, rate.values[-1])
    else:
        values = rate.values
    lo = edges[:-1]
    lengths = np.diff(edges)
    counts = rng.poisson(values * lengths)
    total = int(counts.sum())
    if total == 0:
        return np.empty(0)
    starts = np.repeat(lo, counts)
    widths = np.repeat(lengths, counts)
    times = starts + widths * rng.random(total)
    times.sort()
    return times
