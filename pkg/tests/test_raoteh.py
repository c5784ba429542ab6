import numpy as np
import pytest

from jumpchain.core import DiscreteEmission, IntensityModel, ModelError, Trajectory, jump_count
from jumpchain.oracle import grid_posterior
from jumpchain.raoteh import (
    rao_teh_step,
    resample_virtual,
    run_chain,
    run_chains,
    virtual_rate,
    worker_count,
)


def model():
    return IntensityModel(np.array([[-1.0, 1.0], [2.0, -2.0]]), [0.5, 0.5], 0.0, 2.0, R=np.array([2.0, 4.0]))


def evidence():
    em = DiscreteEmission(np.array([[0.8, 0.2], [0.3, 0.7]]))
    return em.evidence(np.array([0.5, 1.5]), np.array([0, 1]))


def test_virtual_rate_along_path():
    x = Trajectory(0.0, 2.0, [0.5, 1.2], [0, 1, 0])
    r = virtual_rate(model(), x)
    assert r.value(0.2) == pytest.approx(1.0)
    assert r.value(0.7) == pytest.approx(2.0)
    assert r.value(1.5) == pytest.approx(1.0)
    assert r.integral(0.0, 2.0) == pytest.approx(0.5 + 1.4 + 0.8)


def test_potential_times_contain_true_jumps():
    x = Trajectory(0.0, 2.0, [0.5, 1.2], [0, 1, 0])
    T = resample_virtual(model(), x, np.random.default_rng(0))
    assert T[0] == 0.0 and set([0.5, 1.2]) <= set(T.tolist())
    assert np.all(np.diff(T) > 0)


def test_virtual_count_bounded_by_rmax():
    m = model()
    rng = np.random.default_rng(1)
    x = Trajectory(0.0, 2.0, [0.5, 1.2], [0, 1, 0])
    counts = [len(resample_virtual(m, x, rng)) - 3 for _ in range(5000)]
    assert np.mean(counts) <= m.R_blocks.max() * m.duration


def test_step_is_reproducible():
    m, ev = model(), evidence()
    x = Trajectory.constant(0.0, 2.0, 0)
    a = rao_teh_step(m, ev, x, np.random.default_rng(5))
    b = rao_teh_step(m, ev, x, np.random.default_rng(5))
    assert a == b


def test_chain_matches_grid_posterior():
    m, ev = model(), evidence()
    probes = [0.0, 0.5, 1.0, 1.5, 2.0]
    tr = run_chain(m, ev, "prior", 30000, np.random.default_rng(2), burnin=1000, probes=probes)
    exact = grid_posterior(m, ev, 0.01).at(probes)
    emp = tr.probe_marginals(2)
    assert np.max(0.5 * np.abs(emp - exact).sum(axis=1)) < 0.02


def test_trace_bookkeeping():
    m, ev = model(), evidence()
    tr = run_chain(m, ev, Trajectory.constant(0.0, 2.0, 1), 50, np.random.default_rng(0),
                   burnin=10, thin=4, snapshot_every=10)
    assert len(tr) == 50 and list(tr.kept()) == list(range(10, 50, 4))
    assert [s for s, _ in tr.snapshots] == [0, 10, 20, 30, 40]
    assert all(j == jump_count(x) for (s, x) in tr.snapshots for j in [tr.jump_counts[s]])
    assert len(run_chain(m, ev, "prior", 0, np.random.default_rng(0))) == 0
    with pytest.raises(ValueError):
        run_chain(m, ev, "prior", 10, np.random.default_rng(0), burnin=10)


def test_chains_independent_of_worker_count(monkeypatch):
    m, ev = model(), evidence()
    monkeypatch.setenv("JUMPCHAIN_THREADS", "1")
    assert worker_count(4) == 1
    a = run_chains(m, ev, 40, seed=3, chains=2)
    monkeypatch.setenv("JUMPCHAIN_THREADS", "2")
    b = run_chains(m, ev, 40, seed=3, chains=2)
    for x, y in zip(a, b):
        assert x.jump_counts == y.jump_counts and x.probe_states == y.probe_states
    assert a[0].jump_counts != a[1].jump_counts or a[0].probe_states != a[1].probe_states


def test_invalid_model_is_refused():
    bad = IntensityModel(np.array([[-1.0, 1.0], [2.0, -2.0]]), [0.5, 0.5], 0.0, 2.0, R=np.array([1.0, 4.0]))
    with pytest.raises(ModelError):
        run_chains(bad, evidence(), 10, seed=0)
