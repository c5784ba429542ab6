"""
Trajectories, event sequences, intensity models and evidence.

States are dense integer indices ``0..n-1``; labels only appear at the
boundary (files, CSV output).  Intensities are piecewise constant in time,
each block covering ``[edges[k], edges[k+1])``.

"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from jumpchain.events import LOG_ZERO, RateFunction

__all__ = [
    "TIE_TOL",
    "ModelError",
    "ImpossibleEvidence",
    "StateSpace",
    "Trajectory",
    "EventSequence",
    "IntensityModel",
    "Evidence",
    "DiscreteEmission",
    "AssumptionFailure",
    "ValidationReport",
    "evaluate",
    "compact",
    "jump_count",
    "validate_model",
    "require_valid",
    "mjp_log_density",
    "log_likelihood",
]

#: Relative spacing below which two event times count as a tie.
TIE_TOL = 1e-12


class ModelError(ValueError):
    """A model, path or evidence object is malformed or violates an assumption."""


class ImpossibleEvidence(ModelError):
    """The evidence has zero probability under the model."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class StateSpace:
    labels: tuple

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(set(self.labels)) != len(self.labels):
            raise ModelError("state labels must be distinct")
        if len(self.labels) < 1:
            raise ModelError("empty state space")

    @classmethod
    def of_size(cls, n):
        return cls(tuple(str(i) for i in range(n)))

    @property
    def size(self):
        return len(self.labels)

    def index(self, label):
        try:
            return self.labels.index(label)
        except ValueError:
            raise ModelError(f"unknown state {label!r}") from None


def _check_times(times, tmin, tmax, what):
    if len(times) == 0:
        return
    if not np.all(np.isfinite(times)):
        raise ModelError(f"{what} must be finite")
    gap = TIE_TOL * (tmax - tmin)
    if times[0] <= tmin or times[-1] >= tmax:
        raise ModelError(f"{what} must lie strictly inside (tmin, tmax)")
    if len(times) > 1 and np.min(np.diff(times)) < gap:
        raise ModelError(f"{what} must be strictly increasing (ties closer than {gap:g})")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Right-continuous piecewise-constant path on ``[tmin, tmax]``.

    ``states[i]`` holds on ``[jump_times[i-1], jump_times[i])`` with
    ``jump_times[-1] := tmin``.  Only true jumps are stored, so neighbouring
    states always differ.
    """

    tmin: float
    tmax: float
    jump_times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        tmin, tmax = float(self.tmin), float(self.tmax)
        if not tmin < tmax:
            raise ModelError("need tmin < tmax")
        jt = _frozen(self.jump_times, float).reshape(-1)
        st = _frozen(self.states, np.int64).reshape(-1)
        if len(st) != len(jt) + 1:
            raise ModelError("need len(states) == len(jump_times) + 1")
        _check_times(jt, tmin, tmax, "jump times")
        if len(st) > 1 and np.any(st[1:] == st[:-1]):
            raise ModelError("consecutive states must differ; use compact() for redundant paths")
        if np.any(st < 0):
            raise ModelError("state indices must be nonnegative")
        object.__setattr__(self, "tmin", tmin)
        object.__setattr__(self, "tmax", tmax)
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "states", st)

    @classmethod
    def constant(cls, tmin, tmax, state):
        return cls(tmin, tmax, np.empty(0), [state])

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (self.tmin == other.tmin and self.tmax == other.tmax
                and np.array_equal(self.jump_times, other.jump_times)
                and np.array_equal(self.states, other.states))

    def __hash__(self):
        return hash((self.tmin, self.tmax, self.jump_times.tobytes(), self.states.tobytes()))

    @property
    def boundaries(self):
        """Segment boundaries ``(tmin, jumps..., tmax)``."""
        return np.concatenate([[self.tmin], self.jump_times, [self.tmax]])

    def occupation(self, n_states):
        """Total time spent in each state."""
        return np.bincount(self.states, weights=np.diff(self.boundaries), minlength=n_states)


@dataclass(frozen=True, eq=False)
class EventSequence:
    """
    Redundant representation ``(T, S)``: potential jump times with skeleton.

    ``times[0] == tmin``; adjacent skeleton states may coincide (virtual jumps).
    """

    tmin: float
    tmax: float
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        tmin, tmax = float(self.tmin), float(self.tmax)
        t = _frozen(self.times, float).reshape(-1)
        s = _frozen(self.states, np.int64).reshape(-1)
        if len(t) < 1 or len(t) != len(s):
            raise ModelError("need equal, nonzero numbers of times and states")
        if t[0] != tmin:
            raise ModelError("the first event time must equal tmin")
        _check_times(t[1:], tmin, tmax, "event times")
        object.__setattr__(self, "tmin", tmin)
        object.__setattr__(self, "tmax", tmax)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)

    def __len__(self):
        return len(self.times)


def evaluate(traj, t):
    """State of ``traj`` at time(s) ``t``; right-continuous at jumps."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < traj.tmin) or np.any(t_arr > traj.tmax):
        raise ValueError(f"time outside [{traj.tmin}, {traj.tmax}]")
    idx = np.searchsorted(traj.jump_times, t_arr, side="right")
    out = traj.states[idx]
    return int(out) if out.ndim == 0 else out


def compact(ev):
    """Drop virtual jumps, returning the trajectory that ``ev`` represents."""
    s = ev.states
    keep = np.empty(len(s), dtype=bool)
    keep[0] = True
    np.not_equal(s[1:], s[:-1], out=keep[1:])
    return Trajectory(ev.tmin, ev.tmax, ev.times[keep][1:], s[keep])


def jump_count(traj):
    """Number of true jumps plus one (the index 0 always counts)."""
    return len(traj.jump_times) + 1


def _as_blocks(a, n_blocks, tail_shape, name):
    a = np.asarray(a, dtype=float)
    if a.shape == tail_shape:
        a = np.broadcast_to(a, (n_blocks,) + tail_shape)
    if a.shape != (n_blocks,) + tail_shape:
        raise ModelError(f"{name} has shape {a.shape}, expected {(n_blocks,) + tail_shape}")
    return np.array(a)


class IntensityModel:
    """
    Markov jump process law on ``[tmin, tmax]`` with an instrumental rate.

    Parameters
    ----------
    Q : array_like
        Off-diagonal transition intensities, shape ``(S, S)`` for a
        homogeneous model or ``(K, S, S)`` for ``K`` time blocks.  The
        diagonal is ignored and recomputed as minus the leaving rate.
    nu : array_like
        Initial distribution, shape ``(S,)``.
    tmin, tmax : float
        Time window.
    breakpoints : sequence of float, optional
        Interior block boundaries, ``K - 1`` sorted values in ``(tmin, tmax)``.
    R : array_like, optional
        Instrumental rates, scalar, ``(S,)`` or ``(K, S)``.  Defaults to
        ``r_factor * max(Q(t;s), q_floor)`` with
        ``q_floor = 1e-6 * max Q(t;s)``.
    labels : sequence, optional
        State labels; defaults to ``"0", "1", ...``.
    r_factor : float
        Multiplier of the default instrumental rate (2 gives eta = 1/2).

    """

    def __init__(self, Q, nu, tmin, tmax, breakpoints=(), R=None, labels=None, r_factor=2.0):
        self.tmin = float(tmin)
        self.tmax = float(tmax)
        if not self.tmin < self.tmax:
            raise ModelError("need tmin < tmax")
        bp = np.asarray(breakpoints, dtype=float).reshape(-1)
        if len(bp) and (np.any(np.diff(bp) <= 0) or bp[0] <= self.tmin or bp[-1] >= self.tmax):
            raise ModelError("breakpoints must be strictly increasing inside (tmin, tmax)")
        self.edges = _frozen(np.concatenate([[self.tmin], bp, [self.tmax]]), float)
        K = len(self.edges) - 1

        Q = np.asarray(Q, dtype=float)
        if Q.ndim == 2:
            Q = np.broadcast_to(Q, (K,) + Q.shape)
        if Q.ndim != 3 or Q.shape[0] != K or Q.shape[1] != Q.shape[2]:
            raise ModelError(f"Q has shape {Q.shape}; expected (S, S) or ({K}, S, S)")
        S = Q.shape[1]
        Q = np.array(Q)
        idx = np.arange(S)
        Q[:, idx, idx] = 0.0
        if not np.all(np.isfinite(Q)) or np.any(Q < 0):
            raise ModelError("off-diagonal intensities must be finite and nonnegative")
        leave = Q.sum(axis=2)
        Q[:, idx, idx] = -leave

        nu = np.asarray(nu, dtype=float).reshape(-1)
        if nu.shape != (S,) or np.any(nu < 0) or abs(nu.sum() - 1.0) > 1e-12:
            raise ModelError("nu must be a probability vector over the states (sum within 1e-12)")

        if R is None:
            qmax = leave.max()
            if qmax <= 0:
                raise ModelError("all intensities vanish; cannot pick a default instrumental rate")
            R = r_factor * np.maximum(leave, qmax * 1e-6)
        R = np.asarray(R, dtype=float)
        if R.ndim == 0:
            R = np.full((K, S), float(R))
        R = _as_blocks(R, K, (S,), "R")
        if np.any(np.isnan(R)) or np.any(R < 0):
            raise ModelError("instrumental rates must be nonnegative")

        self.states = StateSpace(labels if labels is not None else tuple(str(i) for i in range(S)))
        if self.states.size != S:
            raise ModelError("number of labels does not match Q")
        self.nu = _frozen(nu, float)
        self.Q_blocks = _frozen(Q, float)
        self.leave = _frozen(leave, float)
        self.R_blocks = _frozen(R, float)
        self.P_blocks = _frozen(self._thinning_blocks(), float)
        widths = np.diff(self.edges)[:, None]
        with np.errstate(invalid="ignore"):
            self.cumR = _frozen(np.vstack([np.zeros(S), np.cumsum(R * widths, axis=0)]), float)
        self.cum_leave = _frozen(np.vstack([np.zeros(S), np.cumsum(leave * widths, axis=0)]), float)
        self._interior = bp.tolist()
        self._rates = None

    def _thinning_blocks(self):
        R = self.R_blocks[:, :, None]
        Q = self.Q_blocks
        S = self.n_states
        eye = np.eye(S)[None]
        with np.errstate(divide="ignore", invalid="ignore"):
            P = np.where(np.isinf(R), eye, eye + Q / R)
        # R == 0 with Q == 0 means no events at all; keep the identity there
        P = np.where(R == 0, eye, P)
        return P

    def __repr__(self):
        return (f"IntensityModel(states={list(self.states.labels)}, blocks={self.n_blocks}, "
                f"window=[{self.tmin}, {self.tmax}])")

    @classmethod
    def homogeneous(cls, Q, nu, tmin, tmax, R=None, **kw):
        return cls(Q, nu, tmin, tmax, R=R, **kw)

    @property
    def n_states(self):
        return self.Q_blocks.shape[1]

    @property
    def n_blocks(self):
        return self.Q_blocks.shape[0]

    @property
    def duration(self):
        return self.tmax - self.tmin

    def block_index(self, t):
        """Block containing time(s) ``t``; a time on a breakpoint belongs to the right block."""
        if np.ndim(t) == 0:
            return bisect.bisect_right(self._interior, t)
        return np.searchsorted(np.asarray(self._interior), t, side="right")

    def rate_function(self, s):
        """Instrumental rate ``R(.; s)`` as a :class:`RateFunction`."""
        if self._rates is None:
            self._rates = [RateFunction(self.edges, self.R_blocks[:, k]) for k in range(self.n_states)]
        return self._rates[s]

    def cumulative_R(self, t):
        """``int_tmin^t R(u; s) du`` for every state, shape ``t.shape + (S,)``."""
        t = np.asarray(t, dtype=float)
        k = self.block_index(t)
        return self.cumR[k] + self.R_blocks[k] * (t - self.edges[k])[..., None]

    def cumulative_leave(self, t):
        t = np.asarray(t, dtype=float)
        k = self.block_index(t)
        return self.cum_leave[k] + self.leave[k] * (t - self.edges[k])[..., None]


@dataclass(frozen=True, eq=False)
class Evidence:
    """
    Observations at fixed times, stored as per-state log-likelihood tables.

    ``log_lik[j, s] = log L_j(Y_j | s)``; ``LOG_ZERO`` marks an impossible state.
    """

    obs_times: np.ndarray
    log_lik: np.ndarray

    def __post_init__(self):
        t = _frozen(self.obs_times, float).reshape(-1)
        ll = np.array(self.log_lik, dtype=float)
        if ll.size == 0 and ll.ndim != 2:
            ll = ll.reshape(len(t), 0)
        if ll.ndim != 2 or ll.shape[0] != len(t):
            raise ModelError("need one log-likelihood row per observation time")
        if np.any(np.isnan(ll)) or np.any(ll == np.inf):
            raise ModelError("log-likelihoods must be finite or -inf")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ModelError("observation times must be strictly increasing")
        if len(t) and np.any(np.max(ll, axis=1) == LOG_ZERO):
            j = int(np.argmax(np.max(ll, axis=1) == LOG_ZERO))
            raise ImpossibleEvidence(f"observation {j} at t={t[j]} rules out every state")
        ll.setflags(write=False)
        object.__setattr__(self, "obs_times", t)
        object.__setattr__(self, "log_lik", ll)

    @classmethod
    def empty(cls, n_states):
        return cls(np.empty(0), np.empty((0, n_states)))

    def __len__(self):
        return len(self.obs_times)

    def check_against(self, model):
        if self.log_lik.shape[1] != model.n_states and len(self):
            raise ModelError("evidence tables do not match the number of states")
        if len(self) and (self.obs_times[0] < model.tmin or self.obs_times[-1] > model.tmax):
            raise ModelError("observation times must lie in [tmin, tmax]")


@dataclass(frozen=True, eq=False)
class DiscreteEmission:
    """Noisy categorical observation: ``Y | X=s ~ Categorical(matrix[s])``."""

    matrix: np.ndarray

    def __post_init__(self):
        E = _frozen(self.matrix, float)
        if E.ndim != 2 or np.any(E < 0) or np.max(np.abs(E.sum(axis=1) - 1)) > 1e-12:
            raise ModelError("emission matrix rows must be probability vectors")
        object.__setattr__(self, "matrix", E)

    def sample(self, traj, obs_times, rng):
        states = np.atleast_1d(evaluate(traj, obs_times))
        cdf = np.cumsum(self.matrix[states], axis=1)
        u = rng.random(len(states))[:, None]
        return np.minimum((u >= cdf).sum(axis=1), self.matrix.shape[1] - 1)

    def evidence(self, obs_times, ys):
        ys = np.asarray(ys, dtype=np.int64)
        with np.errstate(divide="ignore"):
            ll = np.log(self.matrix[:, ys].T) if len(ys) else np.empty((0, self.matrix.shape[0]))
        return Evidence(obs_times, ll)


def log_likelihood(evid, traj):
    """``log L(Y|X)`` for a trajectory."""
    if len(evid) == 0:
        return 0.0
    s = np.atleast_1d(evaluate(traj, evid.obs_times))
    return float(evid.log_lik[np.arange(len(s)), s].sum())


def mjp_log_density(model, traj):
    """
    Log density of a trajectory under the jump process ``(nu, Q)``.

    ``log nu(x0) + sum log Q(t_j; a, b) - int Q(t; X(t)) dt``.
    """
    if traj.tmin != model.tmin or traj.tmax != model.tmax:
        raise ModelError("trajectory window does not match the model")
    s = traj.states
    with np.errstate(divide="ignore"):
        out = math.log(model.nu[s[0]]) if model.nu[s[0]] > 0 else LOG_ZERO
        if len(traj.jump_times):
            k = model.block_index(traj.jump_times)
            rates = model.Q_blocks[k, s[:-1], s[1:]]
            out += float(np.sum(np.log(rates)))
    b = traj.boundaries
    cl = model.cumulative_leave(b)
    seg = np.arange(len(s))
    out -= float(np.sum(cl[seg + 1, s] - cl[seg, s]))
    return out


@dataclass(frozen=True)
class AssumptionFailure:
    assumption: int
    message: str
    time: float | None = None
    state: int | None = None
    node: str | None = None
    config: int | None = None


@dataclass
class ValidationReport:
    """Outcome of checking the ergodicity assumptions on a model."""

    q_min_matrix: np.ndarray
    q_min: float
    irreducible: bool
    eta: float | None
    eta_max: float
    r_max: float
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures

    def failed_assumptions(self):
        return sorted({f.assumption for f in self.failures})

    def to_dict(self):
        return {
            "passed": self.passed,
            "q_min": self.q_min,
            "q_min_matrix": self.q_min_matrix.tolist(),
            "irreducible": self.irreducible,
            "eta": self.eta,
            "eta_max": self.eta_max,
            "r_max": self.r_max,
            "failures": [vars(f) for f in self.failures],
        }


def _irreducibility_failures(qmin, where, node=None):
    """Failures for a non-irreducible minimum intensity matrix.

    ``where(s, s2)`` gives the block start time at which ``Q(s, s2)`` is smallest
    (``s2=None``: where the leaving rate of ``s`` is smallest).
    """
    S = qmin.shape[0]
    if S < 2:
        return [AssumptionFailure(1, "state space needs at least two states", node=node)]
    n_comp, labels = connected_components(qmin > 0, directed=True, connection="strong")
    if n_comp == 1:
        return []
    out = []
    for s in range(S):
        if not np.any(np.delete(qmin[s], s) > 0):
            out.append(AssumptionFailure(
                1, f"minimum intensity matrix has no outgoing rate from state {s}",
                time=where(s, None), state=s, node=node))
    if not out:
        reach = np.linalg.matrix_power((qmin > 0) | np.eye(S, dtype=bool), S).astype(bool)
        s = int(np.argmin(reach.all(axis=1)))
        missing = [int(x) for x in np.flatnonzero(~reach[s])]
        out.append(AssumptionFailure(
            1, f"minimum intensity matrix is reducible: states {missing} unreachable from {s}",
            state=s, node=node))
    return out


def validate_model(model, eta=None):
    """
    Check the three ergodicity assumptions on an :class:`IntensityModel`.

    1. the entrywise minimum over time blocks of ``Q`` is irreducible;
    2. ``Q(t;s) / R(t;s) <= 1 - eta`` everywhere (``eta`` given) or ``< 1``
       (``eta`` omitted, in which case the largest admissible eta is reported);
    3. ``R`` is bounded.

    Returns
    -------
    report : ValidationReport
        ``report.passed`` is False when any assumption fails; each failure
        names the assumption and the block start time / state where it fails.

    """
    if eta is not None and not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    Q = model.Q_blocks.copy()
    S = model.n_states
    idx = np.arange(S)
    Q[:, idx, idx] = np.inf
    qmin = Q.min(axis=0)
    qmin[idx, idx] = 0.0
    argmin = Q.argmin(axis=0)
    edges = model.edges

    def where(s, s2):
        k = np.argmin(model.leave[:, s]) if s2 is None else argmin[s, s2]
        return float(edges[int(k)])

    failures = _irreducibility_failures(qmin, where)
    irreducible = not failures

    R = model.R_blocks
    leave = model.leave
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(R > 0, leave / R, np.inf)
    ratio = np.where((R == 0) & (leave == 0), np.inf, ratio)
    eta_max = float(1.0 - ratio.max())
    bound = 1.0 - eta + 1e-12 if eta is not None else 1.0 - 1e-12
    for k, s in zip(*np.nonzero(ratio > bound)):
        if R[k, s] <= 0:
            msg = f"instrumental rate R={R[k, s]:g} is not positive"
        else:
            msg = f"Q/R = {ratio[k, s]:.6g} exceeds 1 - eta"
        failures.append(AssumptionFailure(2, msg, time=float(edges[k]), state=int(s)))

    r_max = float(R.max())
    for k, s in zip(*np.nonzero(~np.isfinite(R))):
        failures.append(AssumptionFailure(3, "instrumental rate is unbounded",
                                          time=float(edges[k]), state=int(s)))

    q_min = float(qmin.sum(axis=1).min())
    return ValidationReport(qmin, q_min, irreducible, eta, eta_max, r_max, failures)


def require_valid(model, eta=None):
    """Raise :class:`ModelError` unless ``validate_model`` passes."""
    report = validate_model(model, eta)
    if not report.passed:
        lines = "; ".join(f"assumption {f.assumption}: {f.message} (t={f.time}, s={f.state})"
                          for f in report.failures)
        raise ModelError(f"model fails validation: {lines}")
    return report
