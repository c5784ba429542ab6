"""
Chain diagnostics: drift of the jump count, Geweke joint tests, total
variation and effective sample size.

Geometric ergodicity cannot be certified by simulation.  These tools check
its observable consequences instead: the expected jump count after one step
contracts affinely, the kernel leaves the posterior invariant, and probe
marginals approach the exact ones quickly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from jumpchain.core import Trajectory, jump_count

__all__ = [
    "DriftReport",
    "drift_estimate",
    "alternating_trajectory",
    "GewekeResult",
    "geweke_joint_test",
    "tv_distance",
    "ess",
    "tv_curve",
]


@dataclass(frozen=True)
class DriftReport:
    """
    One-step conditional means of the jump count and their affine fit.

    ``slope_margin`` is ``(1 - slope) / slope_se``; the drift condition is
    supported when it exceeds 3.
    """

    seeds: np.ndarray
    means: np.ndarray
    std_errors: np.ndarray
    reps: int
    slope: float
    intercept: float
    slope_se: float

    @property
    def slope_margin(self):
        return (1.0 - self.slope) / self.slope_se

    def to_dict(self):
        return {
            "seeds": self.seeds.tolist(),
            "means": self.means.tolist(),
            "std_errors": self.std_errors.tolist(),
            "reps": self.reps,
            "slope": self.slope,
            "intercept": self.intercept,
            "slope_se": self.slope_se,
            "slope_margin": self.slope_margin,
        }


def drift_estimate(kernel, seeds, reps, rng, count=jump_count):
    """
    Estimate ``E[count(X') | X]`` for a few seeded states and fit a line.

    Parameters
    ----------
    kernel : callable
        ``kernel(x, rng) -> x'``, one application of the Markov kernel.
    seeds : list of (state, j)
        Starting states and their counts.
    reps : int
        Replicates per seed, at least 100.
    rng : numpy.random.Generator
    count : callable
        Lyapunov function; defaults to :func:`jump_count`.

    Notes
    -----
    The fit is weighted least squares with weights ``1/se^2``.  Standard
    errors are floored at ``1/reps`` so that deterministic kernels still give a
    finite fit; the slope s.e. then reflects that floor.
    """
    if reps < 100:
        raise ValueError("need at least 100 replicates per seed")
    if len(seeds) < 2:
        raise ValueError("need at least two seeds to fit a slope")
    js, means, ses = [], [], []
    for x, j in seeds:
        vals = np.array([count(kernel(x, rng)) for _ in range(reps)], dtype=float)
        js.append(float(j))
        means.append(vals.mean())
        ses.append(max(vals.std(ddof=1) / np.sqrt(reps), 1.0 / reps))
    js, means, ses = map(np.asarray, (js, means, ses))
    w = 1.0 / ses**2
    X = np.column_stack([np.ones_like(js), js])
    cov = np.linalg.inv(X.T @ (w[:, None] * X))
    intercept, slope = cov @ (X.T @ (w * means))
    return DriftReport(js, means, ses, int(reps), float(slope), float(intercept),
                       float(np.sqrt(cov[1, 1])))


def alternating_trajectory(tmin, tmax, j, states=(0, 1)):
    """Path cycling through ``states`` with ``j - 1`` equally spaced jumps (jump count ``j``)."""
    if j < 1:
        raise ValueError("jump count is at least 1")
    times = tmin + (tmax - tmin) * np.arange(1, j) / j
    seq = [states[i % len(states)] for i in range(j)]
    return Trajectory(tmin, tmax, times, seq)


@dataclass(frozen=True)
class GewekeResult:
    """
    Two-sample KS comparison of one statistic.

    ``pvalue`` treats the successive-conditional draws as independent;
    ``pvalue_ess`` replaces their count by the effective sample size of the
    indicator ``stat <= location`` at the point where the two empirical CDFs
    differ most, which accounts for the autocorrelation of that chain.
    """

    name: str
    statistic: float
    pvalue: float
    pvalue_ess: float
    n: int
    ess: float


def _ks_pvalue(d, n1, n2):
    en = n1 * n2 / (n1 + n2)
    return float(stats.kstwo.sf(d, max(int(round(en)), 1)))


def geweke_joint_test(prior_sampler, evidence_sampler, kernel, statistics, n, rng, thin=1):
    """
    Geweke joint distribution test of kernel invariance.

    The marginal-conditional simulator draws ``X`` from the prior ``n`` times
    independently.  The successive-conditional simulator alternates
    ``Y ~ evidence_sampler(X)`` and ``X ~ kernel(X, Y)``; its ``X`` marginal is
    the prior iff the kernel leaves ``p(X | Y)`` invariant.

    Parameters
    ----------
    prior_sampler : callable
        ``prior_sampler(rng) -> x``.
    evidence_sampler : callable
        ``evidence_sampler(x, rng) -> y``.
    kernel : callable
        ``kernel(x, y, rng) -> x'``.
    statistics : dict
        Name -> ``f(x)`` returning a real number.
    n : int
        Draws per simulator.
    rng : numpy.random.Generator
    thin : int
        Kernel applications between recorded successive-conditional draws.

    Returns
    -------
    dict
        Name -> :class:`GewekeResult`.

    """
    names = list(statistics)
    fs = [statistics[k] for k in names]
    mc = np.empty((n, len(fs)))
    for i in range(n):
        x = prior_sampler(rng)
        mc[i] = [f(x) for f in fs]
    sc = np.empty((n, len(fs)))
    x = prior_sampler(rng)
    for i in range(n):
        for _ in range(thin):
            y = evidence_sampler(x, rng)
            x = kernel(x, y, rng)
        sc[i] = [f(x) for f in fs]
    out = {}
    for k, name in enumerate(names):
        res = stats.ks_2samp(mc[:, k], sc[:, k])
        d = float(res.statistic)
        # the ECDF gap at the maximizing point is an average of indicators
        n_eff = min(ess(sc[:, k] <= res.statistic_location), n)
        out[name] = GewekeResult(name, d, float(res.pvalue), _ks_pvalue(d, n, n_eff), n, float(n_eff))
    return out


def tv_distance(p, q):
    """Total variation ``0.5 * sum |p - q|`` between two distributions on the same support."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"support size mismatch: {p.shape} vs {q.shape}")
    return float(0.5 * np.abs(p - q).sum())


def _autocov(x):
    n = len(x)
    y = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(y, m)
    return np.fft.irfft(f * np.conj(f), m)[:n] / n


def ess(trace):
    """
    Effective sample size with Geyer's initial positive sequence.

    Sums of adjacent autocorrelation pairs are accumulated while positive.  A
    constant series returns its length.
    """
    x = np.asarray(trace, dtype=float)
    n = len(x)
    if n < 4:
        raise ValueError("series too short")
    acov = _autocov(x)
    if acov[0] <= 0:
        return float(n)
    rho = acov / acov[0]
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        tau += 2 * pair
    return float(n / max(tau, 1.0 / n))


def tv_curve(probe_states, exact, n_states, checkpoints):
    """
    TV between running probe marginals and exact ones.

    Parameters
    ----------
    probe_states : (M, n_probes) int array
        Probe states per sweep.
    exact : (n_probes, S) array
    n_states : int
    checkpoints : sequence of int
        Prefix lengths at which to evaluate.

    Returns
    -------
    ndarray
        Largest per-probe TV at each checkpoint.

    """
    probe_states = np.asarray(probe_states)
    out = []
    for m in checkpoints:
        ps = probe_states[:m]
        emp = np.stack([np.bincount(ps[:, j], minlength=n_states) / len(ps)
                        for j in range(ps.shape[1])])
        out.append(max(tv_distance(emp[j], exact[j]) for j in range(len(exact))))
    return np.asarray(out)
