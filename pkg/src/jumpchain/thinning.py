"""
Prior sampling of ``(T, S)`` by state-dependent thinning, and its density.
"""
from __future__ import annotations

import bisect
import math

import numpy as np

from jumpchain.core import EventSequence
from jumpchain.events import LOG_ZERO, sample_holding_time

__all__ = ["thinning_matrix", "sample_prior_path", "joint_log_density"]


def thinning_matrix(model, t):
    """
    Stochastic matrix of skeleton moves at time ``t``.

    Off-diagonal entries are ``Q(t;s,s')/R(t;s)``, the diagonal is
    ``1 - Q(t;s)/R(t;s)``.
    """
    return model.P_blocks[model.block_index(t)]


def _categorical(p, u):
    # p is a short Python list
    acc = 0.0
    for k, pk in enumerate(p):
        acc += pk
        if u < acc:
            return k
    return len(p) - 1


def sample_prior_path(model, rng):
    """
    Sample the redundant pair ``(T, S)`` from the prior.

    Starting from ``S_0 ~ nu``, the next potential jump time is the first
    point of a Poisson process with rate ``R(.; S_{i-1})`` and the new state is
    drawn from the thinning matrix at that time.  Compacting the result gives
    a path of the jump process ``(nu, Q)``.
    """
    nu = model.nu.tolist()
    P = model.P_blocks.tolist()
    interior = model._interior
    tmax = model.tmax
    rates = [model.rate_function(s) for s in range(model.n_states)]

    s = _categorical(nu, rng.random())
    t = model.tmin
    times = [t]
    states = [s]
    while True:
        w = sample_holding_time(t, rates[s], tmax, rng)
        if w is None or w >= tmax:
            break
        k = bisect.bisect_right(interior, w)
        s = _categorical(P[k][s], rng.random())
        t = w
        times.append(t)
        states.append(s)
    return EventSequence(model.tmin, tmax, times, states)


def joint_log_density(model, ev):
    """
    Log density of ``(T, S)`` under the thinning construction.

    ``log nu(S_0) + sum_i [log P(T_i;S_{i-1},S_i) + log R(T_i;S_{i-1})
    - int_{T_{i-1}}^{T_i} R(.;S_{i-1})] - int_{T_N}^{tmax} R(.;S_N)``.
    """
    if ev.tmin != model.tmin or ev.tmax != model.tmax:
        raise ValueError("event sequence window does not match the model")
    T = ev.times
    S = ev.states
    nu0 = model.nu[S[0]]
    out = math.log(nu0) if nu0 > 0 else LOG_ZERO
    cum = model.cumulative_R(np.append(T, model.tmax))
    seg = np.arange(len(T))
    out -= float(np.sum(cum[seg + 1, S] - cum[seg, S]))
    if len(T) > 1:
        k = model.block_index(T[1:])
        with np.errstate(divide="ignore"):
            out += float(np.sum(np.log(model.P_blocks[k, S[:-1], S[1:]])))
            out += float(np.sum(np.log(model.R_blocks[k, S[:-1]])))
    return out
