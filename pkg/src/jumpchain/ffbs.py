"""
Forward filtering, backward sampling and smoothing for the skeleton chain.

Given potential jump times ``T``, the skeleton ``S`` is a discrete-time hidden
Markov chain with law proportional to

    nu(S_0) g_0(S_0) prod_i P_i(S_{i-1}, S_i) g_i(S_i)

where the potentials ``g_i`` collect both the prior holding-time factors and
the likelihood of observations falling in ``[T_i, T_{i+1})``.  Everything is
kept in log space with per-step max subtraction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import logsumexp

from jumpchain.core import ImpossibleEvidence, ModelError

__all__ = [
    "SkeletonHmm",
    "FilterResult",
    "build_skeleton_hmm",
    "forward_filter",
    "backward_sample",
    "smoothing_marginals",
]


@dataclass(frozen=True, eq=False)
class SkeletonHmm:
    """
    Inhomogeneous chain with multiplicative potentials.

    Attributes
    ----------
    init : (S,) ndarray
        Initial law of ``S_0``.
    P : (N, S, S) ndarray
        ``P[i]`` moves ``S_i`` to ``S_{i+1}``; rows are stochastic.
    log_g : (N+1, S) ndarray
        Log-potentials; ``-inf`` marks a forbidden state.

    """

    init: np.ndarray
    P: np.ndarray
    log_g: np.ndarray

    def __post_init__(self):
        init = np.ascontiguousarray(self.init, dtype=float)
        P = np.ascontiguousarray(self.P, dtype=float)
        log_g = np.ascontiguousarray(self.log_g, dtype=float)
        S = init.shape[0]
        if P.ndim != 3 or P.shape[1:] != (S, S) or log_g.shape != (P.shape[0] + 1, S):
            raise ModelError("inconsistent skeleton HMM shapes")
        if len(P) and np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise ModelError("transition matrices must be row-stochastic within 1e-12")
        object.__setattr__(self, "init", init)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "log_g", log_g)

    @property
    def n_steps(self):
        return self.P.shape[0]

    @property
    def n_states(self):
        return self.init.shape[0]


@dataclass(frozen=True, eq=False)
class FilterResult:
    """Normalized filtered laws ``alpha[i] = P(S_i | g_0..g_i)`` and the log-normalizer."""

    alpha: np.ndarray
    log_normalizer: float


def build_skeleton_hmm(model, T, evid=None):
    """
    Skeleton chain for potential jump times ``T`` (with ``T[0] == tmin``).

    ``g_{i-1}(s) = log R(T_i;s) - int_{T_{i-1}}^{T_i} R(.;s) + sum log L_j(s)``
    over observations in ``[T_{i-1}, T_i)``; the last potential has no rate
    factor and collects observations in ``[T_N, tmax]``.
    """
    T = np.asarray(T, dtype=float)
    if T[0] != model.tmin:
        raise ModelError("T must start at tmin")
    N = len(T) - 1
    k = model.block_index(T[1:])
    P = model.P_blocks[k]
    cum = model.cumulative_R(np.append(T, model.tmax))
    log_g = cum[:-1] - cum[1:]
    with np.errstate(divide="ignore"):
        log_g[:N] += np.log(model.R_blocks[k])
    if evid is not None and len(evid):
        seg = np.searchsorted(T, evid.obs_times, side="right") - 1
        np.add.at(log_g, seg, evid.log_lik)
    return SkeletonHmm(model.nu, P, log_g)


@numba.njit(cache=True)
def _forward(init, P, log_g, alpha):
    N = P.shape[0]
    S = init.shape[0]
    lognorm = 0.0
    v = np.empty(S)
    for i in range(N + 1):
        vmax = -np.inf
        for s in range(S):
            if i == 0:
                pred = init[s]
            else:
                pred = 0.0
                for r in range(S):
                    pred += alpha[i - 1, r] * P[i - 1, r, s]
            if pred > 0.0:
                v[s] = np.log(pred) + log_g[i, s]
            else:
                v[s] = -np.inf
            if v[s] > vmax:
                vmax = v[s]
        if vmax == -np.inf:
            return lognorm, i
        c = 0.0
        for s in range(S):
            alpha[i, s] = np.exp(v[s] - vmax)
            c += alpha[i, s]
        for s in range(S):
            alpha[i, s] /= c
        lognorm += vmax + np.log(c)
    return lognorm, -1


@numba.njit(cache=True)
def _backward(alpha, P, u, out):
    N = P.shape[0]
    S = alpha.shape[1]
    tot = 0.0
    for s in range(S):
        tot += alpha[N, s]
    target = u[N] * tot
    acc = 0.0
    s_next = -1
    for s in range(S):
        acc += alpha[N, s]
        if alpha[N, s] > 0.0:
            s_next = s
            if target < acc:
                break
    out[N] = s_next
    w = np.empty(S)
    for i in range(N - 1, -1, -1):
        tot = 0.0
        for s in range(S):
            w[s] = alpha[i, s] * P[i, s, s_next]
            tot += w[s]
        target = u[i] * tot
        acc = 0.0
        pick = -1
        for s in range(S):
            acc += w[s]
            if w[s] > 0.0:
                pick = s
                if target < acc:
                    break
        s_next = pick
        out[i] = s_next
    return out


def forward_filter(h):
    """
    Filtered laws and total log mass of the skeleton chain.

    Raises
    ------
    ImpossibleEvidence
        If every state receives zero mass at some step.

    """
    alpha = np.empty((h.n_steps + 1, h.n_states))
    lognorm, fail = _forward(h.init, h.P, h.log_g, alpha)
    if fail >= 0:
        raise ImpossibleEvidence(f"skeleton chain has zero mass at step {fail}")
    return FilterResult(alpha, float(lognorm))


def backward_sample(h, filtered, rng, size=None):
    """
    Draw skeletons from the posterior of the chain.

    ``S_N ~ alpha_N`` and ``S_i | S_{i+1}=s' ~ alpha_i(s) P_{i+1}(s, s')``.
    With ``size`` given, returns an ``(size, N+1)`` array of independent draws.
    """
    N = h.n_steps
    if size is None:
        out = np.empty(N + 1, dtype=np.int64)
        return _backward(filtered.alpha, h.P, rng.random(N + 1), out)
    alpha = filtered.alpha
    out = np.empty((size, N + 1), dtype=np.int64)
    cdf = np.cumsum(alpha[N])
    out[:, N] = np.minimum(np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right"),
                           h.n_states - 1)
    for i in range(N - 1, -1, -1):
        w = alpha[i][None, :] * h.P[i][:, out[:, i + 1]].T
        c = np.cumsum(w, axis=1)
        target = rng.random(size) * c[:, -1]
        out[:, i] = (c <= target[:, None]).sum(axis=1)
    return out


def smoothing_marginals(h):
    """Exact ``P(S_i = s | all potentials)`` by forward-backward in log space."""
    filt = forward_filter(h)
    N = h.n_steps
    with np.errstate(divide="ignore"):
        logP = np.log(h.P)
        log_alpha = np.log(filt.alpha)
    beta = np.zeros((N + 1, h.n_states))
    for i in range(N - 1, -1, -1):
        beta[i] = logsumexp(logP[i] + (h.log_g[i + 1] + beta[i + 1])[None, :], axis=1)
    out = log_alpha + beta
    out -= out.max(axis=1, keepdims=True)
    out = np.exp(out)
    return out / out.sum(axis=1, keepdims=True)
