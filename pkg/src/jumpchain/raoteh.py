"""
Rao-Teh auxiliary-variable Gibbs kernel on jump-process trajectories.

One step resamples virtual jumps as a Poisson process with rate
``R(t;X(t)) - Q(t;X(t))`` along the current path, then draws a new skeleton
on the union of true and virtual jump times by FFBS and drops the new
virtual jumps.  The kernel leaves ``p(X | Y)`` invariant.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from jumpchain.core import (
    TIE_TOL,
    EventSequence,
    Evidence,
    ModelError,
    compact,
    evaluate,
    jump_count,
    log_likelihood,
    mjp_log_density,
    require_valid,
)
from jumpchain.events import RateFunction, sample_poisson_process
from jumpchain.ffbs import backward_sample, build_skeleton_hmm, forward_filter
from jumpchain.thinning import sample_prior_path

__all__ = [
    "ChainTrace",
    "virtual_rate",
    "resample_virtual",
    "rao_teh_step",
    "initial_trajectory",
    "run_chain",
    "run_chains",
    "default_probes",
]

_MAX_COLLISION_RETRIES = 100


def virtual_rate(model, x):
    """Rate ``R(t;X(t)) - Q(t;X(t))`` along trajectory ``x`` as a RateFunction."""
    edges = np.union1d(model.edges, x.jump_times)
    starts = edges[:-1]
    states = x.states[np.searchsorted(x.jump_times, starts, side="right")]
    k = model.block_index(starts)
    values = model.R_blocks[k, states] - model.leave[k, states]
    return RateFunction(edges, np.maximum(values, 0.0))


def _merge_times(tmin, jumps, v):
    T = np.concatenate([[tmin], jumps, v])
    T.sort()
    return T


def resample_virtual(model, x, rng):
    """
    New potential jump times ``{tmin} U J(x) U V`` with ``V`` a fresh
    Poisson process of virtual jumps.

    A point of ``V`` landing on an existing time (a probability-zero tie)
    triggers a redraw of ``V``.
    """
    rate = virtual_rate(model, x)
    gap = TIE_TOL * model.duration
    for _ in range(_MAX_COLLISION_RETRIES):
        v = sample_poisson_process(rate, model.tmin, model.tmax, rng)
        T = _merge_times(model.tmin, x.jump_times, v)
        if len(T) < 2 or np.min(np.diff(T)) >= gap:
            return T
    raise RuntimeError("could not draw collision-free virtual jumps")


def rao_teh_step(model, evid, x, rng):
    """
    One transition of the Rao-Teh sampler.

    Parameters
    ----------
    model : IntensityModel
        Validated model.
    evid : Evidence or None
        Observations; ``None`` targets the prior.
    x : Trajectory
        Current state of the chain.
    rng : numpy.random.Generator

    Returns
    -------
    Trajectory
        Next state of the chain.

    """
    T = resample_virtual(model, x, rng)
    h = build_skeleton_hmm(model, T, evid)
    S = backward_sample(h, forward_filter(h), rng)
    return compact(EventSequence(model.tmin, model.tmax, T, S))


def initial_trajectory(model, rng):
    """Default chain start: a compacted draw from the prior."""
    return compact(sample_prior_path(model, rng))


def default_probes(model, evid):
    """Observation times plus the window endpoints."""
    t = [model.tmin, model.tmax]
    if evid is not None:
        t.extend(evid.obs_times.tolist())
    return np.unique(np.asarray(t, dtype=float))


@dataclass
class ChainTrace:
    """Per-sweep statistics of a single chain."""

    probes: np.ndarray
    burnin: int = 0
    thin: int = 1
    jump_counts: list = field(default_factory=list)
    log_density: list = field(default_factory=list)
    probe_states: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    def __len__(self):
        return len(self.jump_counts)

    def kept(self):
        """Indices of sweeps retained after burn-in and thinning."""
        n = len(self)
        return np.arange(self.burnin, n, self.thin) if n > self.burnin else np.arange(0)

    def probe_array(self):
        return np.asarray(self.probe_states, dtype=np.int64).reshape(len(self), len(self.probes))

    def probe_marginals(self, n_states):
        """Posterior probe marginals from the kept sweeps, shape ``(n_probes, S)``."""
        ps = self.probe_array()[self.kept()]
        out = np.zeros((len(self.probes), n_states))
        for j in range(len(self.probes)):
            out[j] = np.bincount(ps[:, j], minlength=n_states)
        return out / max(len(ps), 1)


def run_chain(model, evid, init, sweeps, rng, burnin=0, thin=1, probes=None, snapshot_every=None):
    """
    Iterate :func:`rao_teh_step` and record per-sweep statistics.

    ``init`` is a trajectory or ``"prior"`` for a compacted prior draw.  The
    trace holds one record per executed sweep; ``burnin`` and ``thin`` only
    mark which sweeps count as posterior draws.  Reruns with the same seed are
    bit-identical.
    """
    if sweeps < 0 or burnin < 0 or thin < 1:
        raise ValueError("need sweeps >= 0, burnin >= 0, thin >= 1")
    if sweeps and burnin >= sweeps:
        raise ValueError("burnin must be smaller than sweeps")
    if evid is None:
        evid = Evidence.empty(model.n_states)
    evid.check_against(model)
    if probes is None:
        probes = default_probes(model, evid)
    probes = np.asarray(probes, dtype=float)
    trace = ChainTrace(probes, burnin, thin)
    if sweeps == 0:
        return trace
    x = initial_trajectory(model, rng) if isinstance(init, str) and init == "prior" else init
    if x.tmin != model.tmin or x.tmax != model.tmax:
        raise ModelError("initial trajectory window does not match the model")
    for m in range(sweeps):
        x = rao_teh_step(model, evid, x, rng)
        trace.jump_counts.append(jump_count(x))
        trace.log_density.append(mjp_log_density(model, x) + log_likelihood(evid, x))
        trace.probe_states.append(np.atleast_1d(evaluate(x, probes)).tolist())
        if snapshot_every and m % snapshot_every == 0:
            trace.snapshots.append((m, x))
    return trace


def _chain_worker(args):
    model, evid, init, sweeps, seed_seq, kw = args
    return run_chain(model, evid, init, sweeps, np.random.default_rng(seed_seq), **kw)


def worker_count(n_tasks):
    cap = os.environ.get("JUMPCHAIN_THREADS")
    n = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n, n_tasks))


def run_chains(model, evid, sweeps, seed, chains=1, init="prior", eta=None, **kw):
    """
    Run independent chains, each with its own spawned random stream.

    Chains share the immutable model and evidence; results are joined at the
    end and do not depend on the number of workers.
    """
    require_valid(model, eta)
    seqs = np.random.SeedSequence(seed).spawn(chains)
    tasks = [(model, evid, init, sweeps, s, kw) for s in seqs]
    workers = worker_count(chains)
    if workers == 1:
        return [_chain_worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_chain_worker, tasks))
