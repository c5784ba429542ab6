"""
Brute-force ground truth for small instances.

* transition probabilities by a truncated uniformization series,
* posterior marginals of a hidden jump process on a fine time grid,
* exhaustive enumeration of skeleton chains,
* exact conditional marginals of a flattened CTBN with fully observed nodes.

Nothing here shares code with the samplers it is used to check, apart from
the model containers.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import poisson

from jumpchain.core import ImpossibleEvidence, ModelError

__all__ = [
    "transition_probability",
    "GridPosterior",
    "grid_posterior",
    "richardson_marginals",
    "enumerate_skeletons",
    "prior_marginal",
    "ctbn_posterior_marginals",
]

_TAIL = 1e-14


def transition_probability(Q, dt):
    """
    ``exp(Q dt)`` by uniformization.

    With ``r`` the largest leaving rate and ``U = I + Q/r``,
    ``exp(Q dt) = sum_n Poisson(n; r dt) U^n``, truncated once the Poisson
    tail mass drops below 1e-14.  Sub-generators (rows summing to a negative
    number) are accepted and give sub-stochastic matrices.
    """
    Q = np.asarray(Q, dtype=float)
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    n = Q.shape[0]
    r = float(np.max(-np.diag(Q))) if n else 0.0
    if dt == 0 or r <= 0:
        return np.eye(n)
    U = np.eye(n) + Q / r
    lam = r * dt
    n_max = int(poisson.isf(_TAIL, lam)) + 1
    weights = poisson.pmf(np.arange(n_max + 1), lam)
    out = weights[0] * np.eye(n)
    term = np.eye(n)
    for k in range(1, n_max + 1):
        term = term @ U
        out += weights[k] * term
    return out


def prior_marginal(model, t):
    """Law of ``X(t)`` under the prior, through the piecewise transition kernels."""
    p = model.nu.copy()
    edges = model.edges
    for k in range(model.n_blocks):
        a, b = edges[k], min(edges[k + 1], t)
        if b <= a:
            break
        p = p @ transition_probability(model.Q_blocks[k], b - a)
    return p


@dataclass(frozen=True, eq=False)
class GridPosterior:
    """Posterior laws of ``X(t)`` on a regular grid."""

    step: float
    times: np.ndarray
    marginals: np.ndarray

    def at(self, t):
        """Marginal at time(s) ``t`` by linear interpolation between grid points."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((len(t), self.marginals.shape[1]))
        for s in range(self.marginals.shape[1]):
            out[:, s] = np.interp(t, self.times, self.marginals[:, s])
        return out / out.sum(axis=1, keepdims=True)


def _step_kernel(model, a, b, cache):
    edges = model.edges
    ka = int(np.searchsorted(edges, a, side="right") - 1)
    kb = int(np.searchsorted(edges, b, side="left") - 1)
    ka = min(max(ka, 0), model.n_blocks - 1)
    kb = min(max(kb, ka), model.n_blocks - 1)
    if ka == kb:
        key = (ka, round(b - a, 15))
        if key not in cache:
            cache[key] = transition_probability(model.Q_blocks[ka], b - a)
        return cache[key]
    K = np.eye(model.n_states)
    for k in range(ka, kb + 1):
        lo, hi = max(a, edges[k]), min(b, edges[k + 1])
        if hi > lo:
            K = K @ transition_probability(model.Q_blocks[k], hi - lo)
    return K


def grid_posterior(model, evid, step):
    """
    Smoothing marginals of a discretized hidden chain.

    The window is cut into steps of length ``step``; each step kernel is
    ``exp(Q dt)`` (multiplied across breakpoints inside the step) and each
    observation is attached to its nearest grid point.  When observation
    times and breakpoints fall on the grid the marginals are exact.
    """
    L = model.duration
    n = int(round(L / step))
    if n < 1 or abs(n * step - L) > 1e-9 * L:
        raise ValueError("grid step must divide the time window")
    times = model.tmin + L * np.arange(n + 1) / n
    S = model.n_states
    log_emit = np.zeros((n + 1, S))
    if evid is not None and len(evid):
        idx = np.rint((evid.obs_times - model.tmin) / L * n).astype(int)
        if len(np.unique(idx)) != len(idx):
            raise ValueError("grid step too coarse to separate observation times")
        log_emit[idx] += evid.log_lik
    cache = {}
    kernels = [_step_kernel(model, times[i], times[i + 1], cache) for i in range(n)]

    emit_max = log_emit.max(axis=1, keepdims=True)
    if np.any(np.isinf(emit_max)):
        raise ImpossibleEvidence("an observation rules out every state")
    emit = np.exp(log_emit - emit_max)

    fwd = np.empty((n + 1, S))
    f = model.nu * emit[0]
    for i in range(n + 1):
        if i:
            f = (fwd[i - 1] @ kernels[i - 1]) * emit[i]
        c = f.sum()
        if c <= 0:
            raise ImpossibleEvidence(f"zero posterior mass at grid time {times[i]}")
        fwd[i] = f / c
    bwd = np.ones((n + 1, S))
    for i in range(n - 1, -1, -1):
        b = kernels[i] @ (emit[i + 1] * bwd[i + 1])
        bwd[i] = b / b.sum()
    post = fwd * bwd
    post /= post.sum(axis=1, keepdims=True)
    return GridPosterior(step, times, post)


def richardson_marginals(model, evid, step, probes):
    """
    Probe marginals at ``step`` and ``step/2`` with a first-order Richardson
    extrapolation.

    Returns
    -------
    extrapolated : (n_probes, S) ndarray
    error : float
        Largest total-variation gap between the two grid resolutions, an
        estimate of the discretization error.

    """
    coarse = grid_posterior(model, evid, step).at(probes)
    fine = grid_posterior(model, evid, step / 2).at(probes)
    extrap = np.clip(2 * fine - coarse, 0, None)
    extrap /= extrap.sum(axis=1, keepdims=True)
    err = float(0.5 * np.abs(fine - coarse).sum(axis=1).max())
    return extrap, err


def enumerate_skeletons(h, cap=10**6):
    """
    Exhaustive law of a skeleton chain.

    Returns
    -------
    configs : (M, N+1) ndarray
        All state sequences, in lexicographic order.
    probs : (M,) ndarray
        Normalized probabilities.
    log_normalizer : float
        Log of the total unnormalized mass.

    """
    S = h.n_states
    N = h.n_steps
    if S ** (N + 1) > cap:
        raise ValueError(f"{S}^{N + 1} skeletons exceed the enumeration cap {cap}")
    configs = np.array(list(itertools.product(range(S), repeat=N + 1)), dtype=np.int64)
    with np.errstate(divide="ignore"):
        logm = np.log(h.init[configs[:, 0]])
        logP = np.log(h.P)
    for i in range(N + 1):
        logm = logm + h.log_g[i, configs[:, i]]
    for i in range(N):
        logm = logm + logP[i, configs[:, i], configs[:, i + 1]]
    lz = logsumexp(logm)
    if not np.isfinite(lz):
        raise ImpossibleEvidence("every skeleton has zero mass")
    return configs, np.exp(logm - lz), float(lz)


def ctbn_posterior_marginals(model, observed, times, node_evidence=None):
    """
    Exact posterior marginals of the joint CTBN state at the given times.

    The network is flattened to its product space.  Between jumps of the
    observed nodes the hidden part evolves under the generator restricted to
    the states consistent with the observations (mass leaving that set is
    killed); an observed jump multiplies by the corresponding joint rate.
    Discrete noisy observations of single nodes are applied at their times.

    Parameters
    ----------
    model : CtbnModel
    observed : dict
        Node index -> Trajectory of fully observed nodes.
    times : array_like
        Query times in ``[tmin, tmax]``.
    node_evidence : dict, optional
        Node index -> Evidence with per-state log-likelihood tables.

    Returns
    -------
    (n_times, n_joint) ndarray
        Posterior law over joint states (row-major over nodes).

    """
    from jumpchain.ctbn import flatten_generator, joint_initial

    node_evidence = node_evidence or {}
    Q = flatten_generator(model)
    nu = joint_initial(model)
    M = len(nu)
    sizes = model.sizes
    grid = np.array(np.unravel_index(np.arange(M), sizes)).T  # (M, n_nodes)
    times = np.asarray(times, dtype=float)

    # kinds: 0 observed jump, 1 noisy observation, 2 query
    events = []
    for o, traj in observed.items():
        for t, a, b in zip(traj.jump_times, traj.states[:-1], traj.states[1:]):
            events.append((float(t), 0, (o, int(a), int(b))))
    for w, ev in node_evidence.items():
        for t, row in zip(ev.obs_times, ev.log_lik):
            events.append((float(t), 1, (w, np.exp(row[grid[:, w]] - np.max(row)))))
    for j, t in enumerate(times):
        events.append((float(t), 2, j))

    def allowed(t):
        mask = np.ones(M, dtype=bool)
        for o, traj in observed.items():
            mask &= grid[:, o] == traj.states[np.searchsorted(traj.jump_times, t, side="right")]
        return mask

    def kernel(a, b):
        mask = allowed(0.5 * (a + b))
        Qs = np.where(mask[:, None] & mask[None, :], Q, 0.0)
        return transition_probability(Qs, b - a)

    def jump_matrix(o, a, b):
        J = np.zeros_like(Q)
        for i in np.flatnonzero(grid[:, o] == a):
            tgt = grid[i].copy()
            tgt[o] = b
            k = np.ravel_multi_index(tuple(tgt), sizes)
            J[i, k] = Q[i, k]
        return J

    # forward: at a shared time, jumps then observations then queries
    fwd = {}
    f = nu * allowed(model.tmin)
    t_prev = model.tmin
    for t, kind, payload in sorted(events, key=lambda e: (e[0], e[1])):
        if t > t_prev:
            f = f @ kernel(t_prev, t)
        if kind == 0:
            f = f @ jump_matrix(*payload)
        elif kind == 1:
            f = f * payload[1]
        else:
            fwd[payload] = f
        if f.sum() <= 0:
            raise ImpossibleEvidence(f"observations have zero density at t={t}")
        f = f / f.sum()
        t_prev = t

    # backward: queries first, so they only see data strictly to their right
    bwd = {}
    g = allowed(model.tmax).astype(float)
    t_prev = model.tmax
    for t, kind, payload in sorted(events, key=lambda e: (-e[0], -e[1])):
        if t < t_prev:
            g = kernel(t, t_prev) @ g
        if kind == 0:
            g = jump_matrix(*payload) @ g
        elif kind == 1:
            g = g * payload[1]
        else:
            bwd[payload] = g
        g = g / g.sum()
        t_prev = t

    out = np.empty((len(times), M))
    for j in range(len(times)):
        p = fwd[j] * bwd[j]
        if p.sum() <= 0:
            raise ModelError("zero posterior mass at a query time")
        out[j] = p / p.sum()
    return out
