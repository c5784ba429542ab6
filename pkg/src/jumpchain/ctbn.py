"""
Continuous-time Bayesian networks and random-scan Gibbs sampling.

Each node ``w`` jumps with a conditional intensity matrix ``Q_w(c; s, s')``
selected by the current configuration ``c`` of its parents.  Parent
configurations are mixed-radix encoded with the first parent most
significant (``numpy.ravel_multi_index`` order).  The joint product space is
encoded the same way over all nodes.

A Gibbs update of node ``w`` runs one Rao-Teh step on the full conditional of
``X_w`` given every other node: the parents drive a piecewise-homogeneous
prior, the children contribute their path densities as the likelihood.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from jumpchain.core import (
    TIE_TOL,
    AssumptionFailure,
    EventSequence,
    ImpossibleEvidence,
    IntensityModel,
    ModelError,
    Trajectory,
    _irreducibility_failures,
    compact,
    evaluate,
    jump_count,
)
from jumpchain.events import LOG_ZERO, RateFunction, sample_poisson_process
from jumpchain.ffbs import SkeletonHmm, backward_sample, forward_filter

__all__ = [
    "CtbnNode",
    "CtbnModel",
    "CtbnPath",
    "SufficientStats",
    "CtbnValidationReport",
    "ctbn_validate",
    "sufficient_stats",
    "node_log_density",
    "ctbn_log_density",
    "flatten",
    "flatten_generator",
    "joint_initial",
    "joint_trajectory",
    "node_full_conditional_hmm",
    "node_update",
    "gibbs_step",
    "initial_path",
    "CtbnTrace",
    "run_ctbn_chain",
    "simultaneous_jumps",
    "run_ctbn_chains",
]

FLATTEN_CAP = 4096


@dataclass
class CtbnNode:
    """
    Node specification.

    ``cim`` has shape ``(C, S, S)`` with ``C`` the number of parent
    configurations (1 for a root); only off-diagonal entries matter.  ``R``
    is the instrumental rate: a scalar, a ``(S,)`` vector, or ``(K, S)``
    blocks split at ``R_breakpoints``.
    """

    name: str
    states: tuple
    cim: np.ndarray
    parents: tuple = ()
    R: object = None
    R_breakpoints: tuple = ()


class CtbnModel:
    """
    A CTBN on ``[tmin, tmax]``.

    Parameters
    ----------
    nodes : list of CtbnNode
        Parents may be given by name or index; cycles are allowed, self
        loops are not.
    tmin, tmax : float
    nu : list of arrays or ndarray
        A list with one initial law per node (factored) or an ndarray of
        shape ``sizes`` (tabular joint law).
    r_factor : float
        Default instrumental rate multiplier:
        ``R_w(s) = r_factor * max(max_c Q_w(c; s), floor)``.

    """

    def __init__(self, nodes, tmin, tmax, nu, r_factor=2.0):
        self.tmin = float(tmin)
        self.tmax = float(tmax)
        if not self.tmin < self.tmax:
            raise ModelError("need tmin < tmax")
        self.names = tuple(n.name for n in nodes)
        if len(set(self.names)) != len(self.names):
            raise ModelError("node names must be distinct")
        self.labels = tuple(tuple(n.states) for n in nodes)
        self.sizes = tuple(len(lab) for lab in self.labels)
        n = len(nodes)
        self.parents = []
        for w, node in enumerate(nodes):
            pa = tuple(self.index(p) if not isinstance(p, (int, np.integer)) else int(p)
                       for p in node.parents)
            if w in pa:
                raise ModelError(f"node {node.name!r} lists itself as a parent")
            if len(set(pa)) != len(pa) or any(not 0 <= p < n for p in pa):
                raise ModelError(f"bad parent list for node {node.name!r}")
            self.parents.append(pa)
        self.parents = tuple(self.parents)
        self.children = tuple(tuple(u for u in range(n) if w in self.parents[u]) for w in range(n))
        # config strides: c = sum_k x_{pa_k} * stride_k
        self.strides = tuple(
            tuple(int(np.prod([self.sizes[q] for q in pa[k + 1:]], dtype=np.int64)) for k in range(len(pa)))
            for pa in self.parents)
        self.n_configs = tuple(int(np.prod([self.sizes[p] for p in pa], dtype=np.int64)) for pa in self.parents)

        self.cim, self.leave, self.log_cim = [], [], []
        self.R_edges, self.R_blocks, self.cumR, self.P_table = [], [], [], []
        for w, node in enumerate(nodes):
            S, C = self.sizes[w], self.n_configs[w]
            Q = np.array(node.cim, dtype=float)
            if Q.ndim == 2 and C == 1:
                Q = Q[None]
            if Q.shape != (C, S, S):
                raise ModelError(f"CIM of node {node.name!r} has shape {Q.shape}, expected {(C, S, S)}")
            idx = np.arange(S)
            Q[:, idx, idx] = 0.0
            if not np.all(np.isfinite(Q)) or np.any(Q < 0):
                raise ModelError(f"CIM of node {node.name!r} must be finite and nonnegative")
            leave = Q.sum(axis=2)
            Q[:, idx, idx] = -leave
            with np.errstate(divide="ignore"):
                logQ = np.log(np.where(Q > 0, Q, 0.0))
            bp = np.asarray(node.R_breakpoints, dtype=float).reshape(-1)
            edges = np.concatenate([[self.tmin], bp, [self.tmax]])
            if np.any(np.diff(edges) <= 0):
                raise ModelError(f"R breakpoints of node {node.name!r} must be increasing inside the window")
            K = len(edges) - 1
            R = node.R
            if R is None:
                worst = leave.max(axis=0)
                floor = worst.max() * 1e-6
                if floor <= 0:
                    raise ModelError(f"node {node.name!r} never jumps; cannot pick a default R")
                R = r_factor * np.maximum(worst, floor)
            R = np.asarray(R, dtype=float)
            if R.ndim == 0:
                R = np.full(S, float(R))
            if R.ndim == 1:
                R = np.broadcast_to(R, (K, S))
            if R.shape != (K, S) or np.any(np.isnan(R)) or np.any(R < 0):
                raise ModelError(f"instrumental rate of node {node.name!r} is malformed")
            R = np.array(R)
            eye = np.eye(S)
            with np.errstate(divide="ignore", invalid="ignore"):
                P = eye[None, None] + Q[None, :, :, :] / R[:, None, :, None]
            P = np.where((np.isinf(R) | (R == 0))[:, None, :, None], eye[None, None], P)
            self.cim.append(Q)
            self.leave.append(leave)
            self.log_cim.append(logQ)
            self.R_edges.append(edges)
            self.R_blocks.append(R)
            with np.errstate(invalid="ignore"):
                self.cumR.append(np.vstack([np.zeros(S), np.cumsum(R * np.diff(edges)[:, None], axis=0)]))
            self.P_table.append(P)

        if isinstance(nu, np.ndarray) and nu.ndim == len(self.sizes) and nu.shape == self.sizes and n > 1:
            self.nu_joint = np.asarray(nu, dtype=float)
            self.nu_factors = None
            total = self.nu_joint.sum()
        else:
            if len(nu) != n:
                raise ModelError("need one initial law per node or a joint table")
            self.nu_factors = tuple(np.asarray(v, dtype=float) for v in nu)
            self.nu_joint = None
            for w, v in enumerate(self.nu_factors):
                if v.shape != (self.sizes[w],) or np.any(v < 0) or abs(v.sum() - 1) > 1e-12:
                    raise ModelError(f"initial law of node {self.names[w]!r} is not a probability vector")
            total = 1.0
        if self.nu_joint is not None and (np.any(self.nu_joint < 0) or abs(total - 1) > 1e-12):
            raise ModelError("joint initial law must sum to 1")

    def __repr__(self):
        return f"CtbnModel(nodes={list(self.names)}, window=[{self.tmin}, {self.tmax}])"

    @property
    def n_nodes(self):
        return len(self.names)

    @property
    def duration(self):
        return self.tmax - self.tmin

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise ModelError(f"unknown node {name!r}") from None

    def config_at(self, path, w, t):
        """Parent configuration index of node ``w`` at time(s) ``t``."""
        t = np.asarray(t, dtype=float)
        c = np.zeros(t.shape, dtype=np.int64)
        for p, stride in zip(self.parents[w], self.strides[w]):
            c += stride * evaluate(path[p], t)
        return c

    def parent_stride(self, u, w):
        """Stride of parent ``w`` in the configuration index of child ``u``."""
        return self.strides[u][self.parents[u].index(w)]

    def R_block(self, w, t):
        return np.searchsorted(self.R_edges[w][1:-1], t, side="right")

    def cumulative_R(self, w, t):
        t = np.asarray(t, dtype=float)
        k = self.R_block(w, t)
        return self.cumR[w][k] + self.R_blocks[w][k] * (t - self.R_edges[w][k])[..., None]

    def initial_conditional(self, w, x0):
        """``nu(X_w(tmin) = . | X_{-w}(tmin))`` given the full initial configuration ``x0``."""
        if self.nu_factors is not None:
            return self.nu_factors[w]
        idx = list(x0)
        idx[w] = slice(None)
        v = np.array(self.nu_joint[tuple(idx)], dtype=float)
        if v.sum() <= 0:
            raise ImpossibleEvidence(f"initial states of the other nodes rule out node {self.names[w]!r}")
        return v / v.sum()

    def log_initial(self, x0):
        if self.nu_factors is not None:
            vals = [self.nu_factors[w][s] for w, s in enumerate(x0)]
        else:
            vals = [self.nu_joint[tuple(x0)]]
        return sum(math.log(v) if v > 0 else LOG_ZERO for v in vals)


class CtbnPath:
    """One trajectory per node over a shared window; immutable."""

    __slots__ = ("_trajs",)

    def __init__(self, trajectories):
        trajs = tuple(trajectories)
        if not trajs:
            raise ModelError("empty path")
        if any(t.tmin != trajs[0].tmin or t.tmax != trajs[0].tmax for t in trajs):
            raise ModelError("node trajectories must share tmin and tmax")
        self._trajs = trajs

    def __getitem__(self, w):
        return self._trajs[w]

    def __len__(self):
        return len(self._trajs)

    def __iter__(self):
        return iter(self._trajs)

    def __eq__(self, other):
        return isinstance(other, CtbnPath) and self._trajs == other._trajs

    def __hash__(self):
        return hash(self._trajs)

    @property
    def tmin(self):
        return self._trajs[0].tmin

    @property
    def tmax(self):
        return self._trajs[0].tmax

    def replace(self, w, traj):
        t = list(self._trajs)
        t[w] = traj
        return CtbnPath(t)

    def initial_states(self):
        return tuple(int(t.states[0]) for t in self._trajs)

    def total_jump_count(self, nodes=None):
        nodes = range(len(self)) if nodes is None else nodes
        return sum(jump_count(self._trajs[w]) for w in nodes)


@dataclass(frozen=True, eq=False)
class SufficientStats:
    """Jump counts ``counts[c, s, s']`` and occupation times ``occupation[c, s]``."""

    counts: np.ndarray
    occupation: np.ndarray


def _timeline(path, nodes, lo, hi, extra=()):
    pts = [path[u].jump_times for u in nodes]
    pts.extend(extra)
    inner = np.unique(np.concatenate(pts)) if pts else np.empty(0)
    inner = inner[(inner > lo) & (inner < hi)]
    return np.concatenate([[lo], inner, [hi]])


def sufficient_stats(model, path, w):
    """Per-configuration jump counts and occupation times of node ``w``."""
    S, C = model.sizes[w], model.n_configs[w]
    edges = _timeline(path, (w,) + model.parents[w], path.tmin, path.tmax)
    starts = edges[:-1]
    xw = evaluate(path[w], starts)
    c = model.config_at(path, w, starts)
    occ = np.zeros((C, S))
    np.add.at(occ, (c, xw), np.diff(edges))
    counts = np.zeros((C, S, S), dtype=np.int64)
    traj = path[w]
    if len(traj.jump_times):
        cj = model.config_at(path, w, traj.jump_times)
        np.add.at(counts, (cj, traj.states[:-1], traj.states[1:]), 1)
    return SufficientStats(counts, occ)


def node_log_density(model, path, w):
    """
    Log density of ``X_w`` with its parents held fixed.

    ``sum counts * log Q_w(c; s, s') - sum Q_w(c; s) * occupation(c, s)``.
    """
    st = sufficient_stats(model, path, w)
    out = -float(np.sum(model.leave[w] * st.occupation))
    used = st.counts > 0
    if np.any(used):
        out += float(np.sum(st.counts[used] * model.log_cim[w][used]))
    return out


def ctbn_log_density(model, path):
    """``log nu(X(tmin)) + sum_w node_log_density``."""
    return model.log_initial(path.initial_states()) + sum(
        node_log_density(model, path, w) for w in range(model.n_nodes))


def joint_initial(model):
    """Initial law on the product space (row-major over nodes)."""
    if model.nu_joint is not None:
        return model.nu_joint.reshape(-1).copy()
    out = np.ones(1)
    for v in model.nu_factors:
        out = np.kron(out, v)
    return out


def flatten_generator(model, cap=FLATTEN_CAP):
    """Generator of the CTBN on the product space; only single-node moves."""
    sizes = model.sizes
    M = int(np.prod(sizes, dtype=np.int64))
    if M > cap:
        raise ModelError(f"product space has {M} states, above the cap {cap}")
    grid = np.array(np.unravel_index(np.arange(M), sizes)).T
    Q = np.zeros((M, M))
    for w in range(model.n_nodes):
        c = np.zeros(M, dtype=np.int64)
        for p, stride in zip(model.parents[w], model.strides[w]):
            c += stride * grid[:, p]
        for b in range(sizes[w]):
            tgt = grid.copy()
            tgt[:, w] = b
            j = np.ravel_multi_index(tuple(tgt.T), sizes)
            rate = model.cim[w][c, grid[:, w], b]
            move = grid[:, w] != b
            Q[np.flatnonzero(move), j[move]] += rate[move]
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


def flatten(model, cap=FLATTEN_CAP, R=None):
    """The CTBN as a plain :class:`IntensityModel` on the product space."""
    Q = flatten_generator(model, cap)
    sizes = model.sizes
    labels = ["|".join(str(model.labels[w][s]) for w, s in enumerate(np.unravel_index(i, sizes)))
              for i in range(len(Q))]
    return IntensityModel(Q, joint_initial(model), model.tmin, model.tmax, R=R, labels=labels)


def joint_trajectory(model, path):
    """Path of the flattened process."""
    times = np.unique(np.concatenate([t.jump_times for t in path]))
    starts = np.concatenate([[path.tmin], times])
    states = np.ravel_multi_index(tuple(evaluate(path[w], starts) for w in range(len(path))), model.sizes)
    return compact(EventSequence(path.tmin, path.tmax, starts, states))


def simultaneous_jumps(model, path):
    """``(node, parent, time)`` triples where a node and a parent jump together."""
    out = []
    gap = TIE_TOL * (path.tmax - path.tmin)
    for w in range(model.n_nodes):
        jw = path[w].jump_times
        for p in model.parents[w]:
            jp = path[p].jump_times
            if len(jw) and len(jp):
                pos = np.clip(np.searchsorted(jp, jw), 1, len(jp)) - 1
                near = np.minimum(np.abs(jp[pos] - jw),
                                  np.abs(jp[np.minimum(pos + 1, len(jp) - 1)] - jw))
                out.extend((w, p, float(t)) for t in jw[near < gap])
    return out


@dataclass
class CtbnValidationReport:
    nodes: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures

    def failed_assumptions(self):
        return sorted({f.assumption for f in self.failures})

    def to_dict(self):
        return {"passed": self.passed, "nodes": self.nodes,
                "failures": [vars(f) for f in self.failures], "warnings": self.warnings}


def ctbn_validate(model, eta=None, observed=(), path=None):
    """
    Check the four ergodicity assumptions of the Gibbs sampler.

    For unobserved nodes: (1) the entrywise minimum over parent
    configurations of the CIM is irreducible, (2) ``Q_w(c;s)/R_w(t;s) <= 1-eta``
    (``< 1`` when ``eta`` is omitted), (3) ``R_w`` is bounded.  For every node:
    (4) the support of ``Q_w(c;.,.)`` does not depend on ``c``.  With a
    ``path``, simultaneous jumps of a node and one of its parents are listed
    as warnings.
    """
    if eta is not None and not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    observed = {model.index(o) if isinstance(o, str) else int(o) for o in observed}
    rep = CtbnValidationReport()
    for w, name in enumerate(model.names):
        Q = model.cim[w]
        S = model.sizes[w]
        idx = np.arange(S)
        support = Q > 0
        support[:, idx, idx] = False
        for c in range(1, Q.shape[0]):
            diff = support[c] != support[0]
            for s, s2 in zip(*np.nonzero(diff)):
                rep.failures.append(AssumptionFailure(
                    4, f"support of Q({s}->{s2}) differs between configurations 0 and {c}",
                    state=int(s), node=name, config=int(c)))
        if w in observed:
            continue
        off = Q.copy()
        off[:, idx, idx] = np.inf
        qmin = off.min(axis=0)
        qmin[idx, idx] = 0.0
        for f in _irreducibility_failures(qmin, lambda s, s2: None, node=name):
            if f.state is not None:
                f = replace(f, config=int(np.argmin(model.leave[w][:, f.state])))
            rep.failures.append(f)
        R = model.R_blocks[w]
        worst = model.leave[w].max(axis=0)
        worst_c = model.leave[w].argmax(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(R > 0, worst[None, :] / R, np.inf)
        eta_max = float(1 - ratio.max())
        bound = 1.0 - eta + 1e-12 if eta is not None else 1.0 - 1e-12
        for k, s in zip(*np.nonzero(ratio > bound)):
            rep.failures.append(AssumptionFailure(
                2, f"Q/R = {ratio[k, s]:.6g} exceeds 1 - eta", time=float(model.R_edges[w][k]),
                state=int(s), node=name, config=int(worst_c[s])))
        for k, s in zip(*np.nonzero(~np.isfinite(R))):
            rep.failures.append(AssumptionFailure(
                3, "instrumental rate is unbounded", time=float(model.R_edges[w][k]),
                state=int(s), node=name))
        rep.nodes[name] = {
            "q_min": float(qmin.sum(axis=1).min()),
            "eta_max": eta_max,
            "r_max": float(R.max()),
            "irreducible": not any(f.node == name and f.assumption == 1 for f in rep.failures),
        }
    if path is not None:
        rep.warnings = [f"node {model.names[w]} and parent {model.names[p]} jump together at t={t}"
                        for w, p, t in simultaneous_jumps(model, path)]
    return rep


def _virtual_rate(model, path, w):
    x = path[w]
    edges = _timeline(path, (w,) + model.parents[w], path.tmin, path.tmax, [model.R_edges[w][1:-1]])
    starts = edges[:-1]
    s = evaluate(x, starts)
    c = model.config_at(path, w, starts)
    k = model.R_block(w, starts)
    vals = model.R_blocks[w][k, s] - model.leave[w][c, s]
    return RateFunction(edges, np.maximum(vals, 0.0))


def _child_terms(model, path, w, T, log_g):
    """Add the children's path densities, as functions of X_w, into ``log_g``."""
    S = model.sizes[w]
    svals = np.arange(S)
    for u in model.children[w]:
        stride = model.parent_stride(u, w)
        others = [(p, st) for p, st in zip(model.parents[u], model.strides[u]) if p != w]
        edges = _timeline(path, [u] + [p for p, _ in others], path.tmin, path.tmax, [T[1:]])
        starts = edges[:-1]
        seg = np.searchsorted(T, starts, side="right") - 1
        xu = evaluate(path[u], starts)
        base = np.zeros(len(starts), dtype=np.int64)
        for p, st in others:
            base += st * evaluate(path[p], starts)
        conf = base[:, None] + stride * svals[None, :]
        stay = model.leave[u][conf, xu[:, None]] * np.diff(edges)[:, None]
        np.add.at(log_g, seg, -stay)
        traj = path[u]
        if len(traj.jump_times):
            tj = traj.jump_times
            segj = np.searchsorted(T, tj, side="right") - 1
            basej = np.zeros(len(tj), dtype=np.int64)
            for p, st in others:
                basej += st * evaluate(path[p], tj)
            confj = basej[:, None] + stride * svals[None, :]
            jump = model.log_cim[u][confj, traj.states[:-1, None], traj.states[1:, None]]
            np.add.at(log_g, segj, jump)


def node_full_conditional_hmm(model, path, w, T, node_evidence=None):
    """
    Skeleton chain of node ``w`` given all other nodes, for potential jump times ``T``.

    Transition matrices use the parent configuration at each ``T_i``; the
    potentials hold ``log R_w(T_i; s) - int R_w`` plus, for every child, its
    path density on ``[T_{i-1}, T_i)`` with ``X_w`` set to ``s``.
    """
    T = np.asarray(T, dtype=float)
    if T[0] != path.tmin:
        raise ModelError("T must start at tmin")
    N = len(T) - 1
    c = model.config_at(path, w, T[1:])
    k = model.R_block(w, T[1:])
    P = model.P_table[w][k, c]
    cum = model.cumulative_R(w, np.append(T, path.tmax))
    log_g = cum[:-1] - cum[1:]
    with np.errstate(divide="ignore"):
        log_g[:N] += np.log(model.R_blocks[w][k])
    _child_terms(model, path, w, T, log_g)
    ev = (node_evidence or {}).get(w)
    if ev is not None and len(ev):
        seg = np.searchsorted(T, ev.obs_times, side="right") - 1
        np.add.at(log_g, seg, ev.log_lik)
    init = model.initial_conditional(w, path.initial_states())
    return SkeletonHmm(init, P, log_g)


def node_update(model, path, w, rng, node_evidence=None):
    """Rao-Teh step on node ``w`` targeting ``p(X_w | X_{-w})``."""
    rate = _virtual_rate(model, path, w)
    x = path[w]
    gap = TIE_TOL * model.duration
    for _ in range(100):
        v = sample_poisson_process(rate, model.tmin, model.tmax, rng)
        T = np.concatenate([[model.tmin], x.jump_times, v])
        T.sort()
        if len(T) < 2 or np.min(np.diff(T)) >= gap:
            break
    else:
        raise RuntimeError("could not draw collision-free virtual jumps")
    h = node_full_conditional_hmm(model, path, w, T, node_evidence)
    S = backward_sample(h, forward_filter(h), rng)
    return path.replace(w, compact(EventSequence(model.tmin, model.tmax, T, S)))


def _free_nodes(model, observed):
    observed = {model.index(o) if isinstance(o, str) else int(o) for o in observed}
    return [w for w in range(model.n_nodes) if w not in observed]


def gibbs_step(model, path, rng, observed=(), scan_weights=None, node_evidence=None):
    """
    One random-scan Gibbs update.

    Picks an unobserved node with probability proportional to
    ``scan_weights`` (uniform by default) and applies :func:`node_update`.
    """
    free = _free_nodes(model, observed)
    if not free:
        raise ModelError("every node is observed; nothing to sample")
    if scan_weights is None:
        w = free[int(rng.integers(len(free)))] if len(free) > 1 else free[0]
    else:
        p = np.asarray(scan_weights, dtype=float)
        if p.shape != (len(free),) or np.any(p <= 0):
            raise ValueError("scan weights must be strictly positive, one per unobserved node")
        w = free[int(rng.choice(len(free), p=p / p.sum()))]
    return node_update(model, path, w, rng, node_evidence)


def initial_path(model, observed=None):
    """
    Start for the Gibbs chain: observed nodes keep their paths, the others are
    constant at the most probable initial state given the observed ones.
    """
    observed = observed or {}
    sizes = model.sizes
    M = int(np.prod(sizes, dtype=np.int64))
    if model.nu_joint is not None and M <= 10**6:
        nu = model.nu_joint.reshape(-1)
        grid = np.array(np.unravel_index(np.arange(M), sizes)).T
        ok = np.ones(M, dtype=bool)
        for o, traj in observed.items():
            ok &= grid[:, o] == traj.states[0]
        if not np.any(ok & (nu > 0)):
            raise ImpossibleEvidence("observed initial states have zero prior probability")
        x0 = grid[int(np.argmax(np.where(ok, nu, -1.0)))]
    else:
        x0 = [int(np.argmax(v)) for v in model.nu_factors]
    trajs = []
    for w in range(model.n_nodes):
        if w in observed:
            trajs.append(observed[w])
        else:
            trajs.append(Trajectory.constant(model.tmin, model.tmax, int(x0[w])))
    return CtbnPath(trajs)


@dataclass
class CtbnTrace:
    """Per-scan statistics of a Gibbs chain."""

    nodes: list
    probes: np.ndarray
    burnin: int = 0
    thin: int = 1
    jump_counts: list = field(default_factory=list)
    log_density: list = field(default_factory=list)
    probe_states: list = field(default_factory=list)

    def __len__(self):
        return len(self.jump_counts)

    def kept(self):
        n = len(self)
        return np.arange(self.burnin, n, self.thin) if n > self.burnin else np.arange(0)

    def probe_array(self):
        """Shape ``(scans, n_nodes_tracked, n_probes)``."""
        return np.asarray(self.probe_states, dtype=np.int64).reshape(
            len(self), len(self.nodes), len(self.probes))

    def probe_marginals(self, model, node):
        j = self.nodes.index(node)
        ps = self.probe_array()[self.kept(), j]
        S = model.sizes[node]
        out = np.stack([np.bincount(ps[:, k], minlength=S) for k in range(len(self.probes))])
        return out / max(len(ps), 1)


def run_ctbn_chain(model, path, scans, rng, observed=(), burnin=0, thin=1, probes=None,
                   scan_weights=None, node_evidence=None, record_density=True):
    """
    Iterate :func:`gibbs_step`, recording per-node jump counts and probe states.

    With ``record_density=False`` the joint log density is not evaluated and
    ``log_density`` stays empty.
    """
    if scans < 0 or burnin < 0 or thin < 1:
        raise ValueError("need scans >= 0, burnin >= 0, thin >= 1")
    if scans and burnin >= scans:
        raise ValueError("burnin must be smaller than scans")
    free = _free_nodes(model, observed)
    if probes is None:
        probes = [model.tmin, 0.5 * (model.tmin + model.tmax), model.tmax]
    probes = np.asarray(probes, dtype=float)
    trace = CtbnTrace(free, probes, burnin, thin)
    for _ in range(scans):
        path = gibbs_step(model, path, rng, observed, scan_weights, node_evidence)
        trace.jump_counts.append([jump_count(path[w]) for w in free])
        if record_density:
            trace.log_density.append(ctbn_log_density(model, path))
        trace.probe_states.append([evaluate(path[w], probes).tolist() for w in free])
    return trace


def _ctbn_worker(args):
    model, path, scans, seed_seq, kw = args
    return run_ctbn_chain(model, path, scans, np.random.default_rng(seed_seq), **kw)


def run_ctbn_chains(model, scans, seed, chains=1, observed=None, eta=None, **kw):
    """
    Independent Gibbs chains from :func:`initial_path`, one spawned stream each.

    ``observed`` maps node index to its fixed trajectory.  The model is
    validated first; results do not depend on the number of workers.
    """
    from concurrent.futures import ProcessPoolExecutor

    from jumpchain.raoteh import worker_count

    observed = observed or {}
    path = initial_path(model, observed)
    rep = ctbn_validate(model, eta, observed=list(observed), path=path)
    if not rep.passed:
        f = rep.failures[0]
        raise ModelError(f"assumption {f.assumption} fails at node {f.node}: {f.message}")
    kw = dict(kw, observed=list(observed))
    tasks = [(model, path, scans, s, kw) for s in np.random.SeedSequence(seed).spawn(chains)]
    workers = worker_count(chains)
    if workers == 1:
        return [_ctbn_worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_ctbn_worker, tasks))
